//! Samples a subgraph, trains translation embeddings on it and checks how
//! many true triples beat a corrupted copy by the margin.

use semcomm::datasets;
use semcomm::encoder::{margin_audit, train_encoder, EncoderConfig};
use semcomm::kg::sample_skg;

fn main() -> semcomm::Result<()> {
    let full = datasets::resolve("synthetic:fb")?;
    let skg = sample_skg(&full, 200, 0)?;
    println!(
        "subgraph: {} entities, {} relations, {} triples ({:.2} per entity)",
        skg.entity_count(),
        skg.relation_count(),
        skg.triple_count(),
        skg.density()
    );

    let cfg = EncoderConfig::default().with_dim(50);
    let trained = train_encoder(&skg, &cfg)?;
    for (epoch, loss) in trained.loss_trace.iter().enumerate().step_by(40) {
        println!("epoch {epoch:>3}  margin loss {loss:>9.2}");
    }

    let audit = margin_audit(&skg, &trained.table, cfg.margin, 1)?;
    println!("triples ahead of their corruption by the margin: {:.1}%", audit * 100.0);

    let t = skg.triples()[0];
    println!(
        "energy of {} -{}-> {}: {:.3}",
        skg.entity_label(t.head).unwrap_or("?"),
        skg.relation_label(t.relation).unwrap_or("?"),
        skg.entity_label(t.tail).unwrap_or("?"),
        trained.table.triple_energy(&t)
    );
    Ok(())
}

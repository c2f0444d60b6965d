//! Symbol error rate of plain, hard and soft reasoning-aided decoding on a
//! sampled subgraph, with every mode seeing the same noise.

use semcomm::channel::ChannelModel;
use semcomm::experiments::{desk_graph, prepare_ser_inputs, run_ser_vs_snr, ExperimentConfig};

fn main() -> semcomm::Result<()> {
    let cfg = ExperimentConfig {
        symbols: 3000,
        snr_list: vec![0.0, 4.0, 8.0, f64::INFINITY],
        channels: vec![ChannelModel::Awgn],
        ..ExperimentConfig::default()
    };

    let kg = desk_graph(&cfg)?;
    let inputs = prepare_ser_inputs(&cfg, &kg, cfg.ser_dim, 0)?;
    println!(
        "{} paths over {} entities, constellation dimension {}",
        inputs.paths.len(),
        inputs.table.entity_count(),
        inputs.table.dim()
    );

    let rows = run_ser_vs_snr(&cfg, &inputs, 0)?;
    println!("{:>7} {:>6} {:>8} {:>7}", "SNR dB", "mode", "errors", "SER");
    for r in rows {
        println!("{:>7} {:>6} {:>8} {:>7.4}", r.snr_db, r.mode, r.errors, r.ser);
    }
    Ok(())
}

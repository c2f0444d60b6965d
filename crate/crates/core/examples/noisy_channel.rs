//! Sends one explicit triple over AWGN and Rayleigh channels and counts how
//! often nearest-neighbor recovery gets every slot right.

use semcomm::channel::{measure_signal_power, Channel, ChannelConfig};
use semcomm::decoder::{hard_recover, Slot};
use semcomm::encoder::{encode_explicit, pack_symbols, train_encoder, EncoderConfig, Packing};
use semcomm::kg::toy;
use semcomm::ExplicitSemantics;

fn main() -> semcomm::Result<()> {
    let kg = toy::benchmark_forest();
    let table = train_encoder(&kg, &EncoderConfig::default().with_dim(8))?.table;
    let power = measure_signal_power(&table)?;

    let t = kg.triples()[3];
    let sent = ExplicitSemantics::new(vec![t.head, t.tail], vec![t.relation])?;
    let frame: Vec<f64> = encode_explicit(&sent, &table)?.concat();
    let layout = [Slot::Entity, Slot::Entity, Slot::Relation];
    let trials = 2000;

    let label = |e| kg.entity_label(e).unwrap_or("?");
    println!(
        "sending {} -{}-> {} as {} real coordinates",
        label(t.head),
        kg.relation_label(t.relation).unwrap_or("?"),
        label(t.tail),
        frame.len()
    );
    println!("fraction of frames with a wrong slot:");
    println!("{:>7} {:>10} {:>10}", "SNR dB", "awgn", "rayleigh");
    for snr in [0.0, 4.0, 8.0, 12.0, f64::INFINITY] {
        let mut line = format!("{snr:>7}");
        for cfg in [ChannelConfig::awgn(snr, 7), ChannelConfig::rayleigh(snr, 7)] {
            let mut ch = Channel::new(cfg, power)?;
            let mut correct = 0;
            for _ in 0..trials {
                let record = ch.transmit(&pack_symbols(&frame, Packing::Real)?)?;
                if hard_recover(&record, &layout, &table)?.recovered == sent {
                    correct += 1;
                }
            }
            line += &format!(" {:>10.3}", 1.0 - correct as f64 / trials as f64);
        }
        println!("{line}");
    }
    Ok(())
}

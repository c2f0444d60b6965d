//! Runs a small accuracy-versus-length sweep from a config text and writes
//! its CSV table and manifest.

use semcomm::experiments::{run_accuracy_vs_length, write_csv, ExperimentConfig, Manifest};

const CONFIG: &str = "
dataset = toy:forest
dim = 16
lengths = 1,2,3
expert_paths = 50
iterations = 150
seeds = 0,1
out = out/example
";

fn main() -> semcomm::Result<()> {
    let cfg = ExperimentConfig::from_kv_text(CONFIG)?;
    std::fs::create_dir_all(&cfg.out)?;
    let rows = run_accuracy_vs_length(&cfg)?;
    for r in &rows {
        println!(
            "L={} {:<13} mean {:.3} ± {:.3} over {} seeds",
            r.max_length,
            r.metric.to_string(),
            r.mean_accuracy.unwrap_or(f64::NAN),
            r.std_accuracy.unwrap_or(f64::NAN),
            r.seeds
        );
    }
    let table = cfg.out.join("accuracy_vs_length.csv");
    write_csv(&table, &rows)?;
    let mut manifest = Manifest::new("eval-accuracy", &cfg);
    manifest.outputs.push("accuracy_vs_length.csv".into());
    manifest.write(cfg.out.join("manifest-eval-accuracy.json"))?;
    println!("wrote {} and its manifest", table.display());
    Ok(())
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use semcomm::experiments::{read_csv, Manifest, SerRow};

fn semcomm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semcomm")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_exits_zero() {
    let o = semcomm(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    for cmd in ["train-encoder", "train-grml", "eval-accuracy", "eval-ser", "sweep-dim", "sweep-experts", "timing"] {
        assert!(text.contains(cmd), "help lacks {cmd}");
    }
}

#[test]
fn usage_errors_exit_two() {
    let o = semcomm(&["train-encoder"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--dataset"), "{}", stderr(&o));

    let o = semcomm(&["train-encoder", "--dataset", "toy:forest", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(2));

    let o = semcomm(&["eval-ser", "--dataset", "/nonexistent/triples.tsv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--dataset"), "{}", stderr(&o));

    let o = semcomm(&["eval-ser", "--dataset", "toy:forest", "--set", "bogus=1"]);
    assert_eq!(o.status.code(), Some(2));
}

fn run_ok(args: &[&str]) {
    let o = semcomm(args);
    assert!(o.status.success(), "semcomm {}: {}", args.join(" "), stderr(&o));
}

#[test]
fn toy_pipeline_writes_tables_and_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let common = [
        "--dataset", "toy:forest", "--out", out, "--seed", "0", "--dims", "8", "--set", "iterations=60", "--set",
        "symbols=800", "--snr-list", "inf,0,6,12",
    ];
    for command in ["train-encoder", "train-grml", "eval-ser"] {
        let mut args = vec![command];
        args.extend_from_slice(&common);
        run_ok(&args);
    }
    for f in ["table.txt", "policy.txt", "comparator.txt", "train_log.csv", "ser_vs_snr.csv", "encoder_loss.csv"] {
        assert!(Path::new(out).join(f).exists(), "missing {f}");
    }

    let rows: Vec<SerRow> = read_csv(dir.path().join("ser_vs_snr.csv")).unwrap();
    assert_eq!(rows.len(), 4 * 2 * 3);
    for r in rows.iter().filter(|r| r.snr_db.is_infinite()) {
        assert_eq!(r.errors, 0, "{r:?}");
    }
    for r in &rows {
        assert_eq!(r.dimension, 8);
        assert_eq!(r.csi, r.channel == "rayleigh");
        assert_eq!(r.top_p.is_some(), r.mode != "none");
    }

    let m = Manifest::read(dir.path().join("manifest-eval-ser.json")).unwrap();
    assert_eq!(m.command, "eval-ser");
    assert_eq!(m.seeds, vec![0]);
    assert_eq!(m.config["dataset"], "toy:forest");
    assert!(m.outputs.contains(&"ser_vs_snr.csv".to_string()));
    assert!(!m.version.is_empty());
}

#[test]
fn manifest_rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_ok(&[
        "sweep-experts", "--dataset", "toy:hard-forest", "--out", a.to_str().unwrap(), "--seed", "3", "--dims", "8",
        "--set", "expert_counts=5,10", "--set", "iterations=30",
    ]);
    let manifest = a.join("manifest-sweep-experts.json");
    run_ok(&["sweep-experts", "--config", manifest.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    let name = "expert_count_sweep.csv";
    assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap());
}

use semcomm::channel::ChannelModel;
use semcomm::decoder::Mode;
use semcomm::experiments::{
    prepare_ser_inputs, read_csv, run_accuracy_vs_length, run_ser_sweep, run_ser_vs_snr, write_csv, AccuracyRow,
    ExperimentConfig, SerRow,
};
use semcomm::grml::Metric;
use semcomm::kg::toy;

fn small(dataset: &str) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        dataset: dataset.into(),
        dim: 8,
        ser_dim: 8,
        seeds: vec![0],
        symbols: 600,
        ser_expert_paths: 200,
        ..ExperimentConfig::default()
    };
    cfg.grml.iterations = 40;
    cfg
}

#[test]
fn exact_match_falls_with_path_length_on_the_subgraph() {
    let mut cfg = ExperimentConfig {
        dim: 16,
        expert_paths: 500,
        lengths: vec![1, 2, 3],
        metrics: vec![Metric::ExactMatch],
        seeds: vec![0],
        ..ExperimentConfig::default()
    };
    cfg.grml.iterations = 200;
    let rows = run_accuracy_vs_length(&cfg).unwrap();
    let acc: Vec<f64> = rows.iter().map(|r| r.mean_accuracy.unwrap()).collect();
    assert_eq!(acc.len(), 3);
    assert!(acc[0] > acc[1] && acc[1] > acc[2], "{acc:?}");
}

#[test]
fn plain_ser_falls_with_snr() {
    let mut cfg = small("toy:hard-forest");
    cfg.modes = vec![Mode::None];
    cfg.channels = vec![ChannelModel::Awgn];
    cfg.snr_list = vec![f64::INFINITY, 0.0, 4.0, 8.0, 12.0];
    cfg.symbols = 4000;
    cfg.seeds = vec![0, 1];
    let rows = run_ser_sweep(&cfg).unwrap();
    assert_eq!(rows[0].errors, 0);
    let ser: Vec<f64> = rows[1..].iter().map(|r| r.ser).collect();
    assert!(ser.windows(2).all(|w| w[1] <= w[0] + 0.01), "{ser:?}");
    assert!(ser[0] > ser[3]);
}

#[test]
fn same_seed_same_rows() {
    let cfg = small("toy:forest");
    let kg = toy::benchmark_forest();
    let a = run_ser_vs_snr(&cfg, &prepare_ser_inputs(&cfg, &kg, 8, 5).unwrap(), 5).unwrap();
    let b = run_ser_vs_snr(&cfg, &prepare_ser_inputs(&cfg, &kg, 8, 5).unwrap(), 5).unwrap();
    assert_eq!(a, b);
    let c = run_ser_vs_snr(&cfg, &prepare_ser_inputs(&cfg, &kg, 8, 6).unwrap(), 6).unwrap();
    assert_ne!(a, c);

    let mut acc = small("toy:forest");
    acc.lengths = vec![1, 2];
    assert_eq!(run_accuracy_vs_length(&acc).unwrap(), run_accuracy_vs_length(&acc).unwrap());
}

#[test]
fn tables_parse_back() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small("toy:forest");
    cfg.snr_list = vec![f64::INFINITY, 3.0];
    let ser = run_ser_sweep(&cfg).unwrap();
    let path = dir.path().join("ser.csv");
    write_csv(&path, &ser).unwrap();
    let back: Vec<SerRow> = read_csv(&path).unwrap();
    assert_eq!(back, ser);
    let header = std::fs::read_to_string(&path).unwrap();
    assert!(header.starts_with("dataset,skg_rank,triples_per_entity,snr_db,mode,channel,csi,dimension,coupling,top_p,symbols,errors,ser\n"));

    let mut acc = small("toy:chain");
    acc.lengths = vec![1];
    let rows = run_accuracy_vs_length(&acc).unwrap();
    let path = dir.path().join("acc.csv");
    write_csv(&path, &rows).unwrap();
    let back: Vec<AccuracyRow> = read_csv(&path).unwrap();
    assert_eq!(back, rows);
}

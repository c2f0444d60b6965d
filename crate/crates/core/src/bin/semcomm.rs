use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use semcomm::datasets;
use semcomm::encoder::EmbeddingTable;
use semcomm::experiments::{self as exp, ExperimentConfig, Manifest, SerInputs};
use semcomm::kg::KnowledgeGraph;
use semcomm::policy::PolicyNetwork;
use semcomm::Error;

/// Implicit semantic communication experiments on knowledge graphs.
///
/// Every command writes CSV tables and a `manifest-<command>.json` into the
/// output directory. Passing that manifest back through `--config` reruns
/// the command with identical settings.
#[derive(Parser, Debug)]
#[command(name = "semcomm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct Common {
    /// Builtin (`synthetic:fb`, `toy:forest`, `toy:hard-forest`, `toy:chain`) or a triple file.
    #[arg(long, global = true)]
    dataset: Option<String>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run a single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Comma-separated SNR values in dB; `inf` is a noiseless channel.
    #[arg(long, global = true, value_name = "LIST")]
    snr_list: Option<String>,
    /// Comma-separated constellation sizes. A single value also sets the
    /// size used by the other commands.
    #[arg(long, global = true, value_name = "LIST")]
    dims: Option<String>,
    /// Maximum path length; the accuracy sweep runs 1..=L.
    #[arg(long, global = true)]
    max_length: Option<usize>,
    #[arg(long, global = true, value_parser = ["awgn", "rayleigh"])]
    channel: Option<String>,
    /// Reasoning mode; plain nearest-neighbour decoding is always reported
    /// alongside.
    #[arg(long, global = true, value_parser = ["hard", "soft", "none"])]
    mode: Option<String>,
    /// Flat `key = value` file or a manifest written by an earlier run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Any config key, e.g. `--set iterations=200`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Train the projection encoder and audit its margin.
    TrainEncoder,
    /// Train the reasoning policy by adversarial imitation of expert paths.
    TrainGrml,
    /// Interpretation accuracy against maximum path length.
    EvalAccuracy,
    /// Symbol error rate against SNR for each decoding mode.
    EvalSer,
    /// Path recovery accuracy against constellation size.
    SweepDim,
    /// Convergence against the number of expert paths.
    SweepExperts,
    /// Encoder training time against the number of expert paths.
    Timing,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::TrainEncoder => "train-encoder",
            Command::TrainGrml => "train-grml",
            Command::EvalAccuracy => "eval-accuracy",
            Command::EvalSer => "eval-ser",
            Command::SweepDim => "sweep-dim",
            Command::SweepExperts => "sweep-experts",
            Command::Timing => "timing",
        }
    }
}

enum Failure {
    Config(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

fn config_error(e: impl std::fmt::Display) -> Failure {
    Failure::Config(e.to_string())
}

fn build_config(c: &Common) -> Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig {
        dataset: String::new(),
        ..ExperimentConfig::default()
    };
    if let Some(path) = &c.config {
        cfg.apply_file(path).map_err(|e| config_error(format!("--config {}: {e}", path.display())))?;
    }
    let mut set = |k: &str, v: &str| cfg.set(k, v).map_err(|e| config_error(format!("--{}: {e}", k.replace('_', "-"))));
    if let Some(d) = &c.dataset {
        set("dataset", d)?;
    }
    if let Some(o) = &c.out {
        set("out", &o.display().to_string())?;
    }
    if let Some(s) = c.seed {
        set("seeds", &s.to_string())?;
    }
    if let Some(l) = &c.snr_list {
        set("snr_list", l)?;
    }
    if let Some(d) = &c.dims {
        set("dims", d)?;
        if !d.contains(',') {
            set("dim", d)?;
            set("ser_dim", d)?;
        }
    }
    if let Some(l) = c.max_length {
        set("max_length", &l.to_string())?;
        set("lengths", &(1..=l).map(|i| i.to_string()).collect::<Vec<_>>().join(","))?;
    }
    if let Some(ch) = &c.channel {
        set("channels", ch)?;
    }
    if let Some(m) = &c.mode {
        let modes = if m == "none" { m.clone() } else { format!("none,{m}") };
        set("modes", &modes)?;
    }
    for kv in &c.overrides {
        let (k, v) = kv.split_once('=').ok_or_else(|| config_error(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k, v).map_err(|e| config_error(format!("--set {kv}: {e}")))?;
    }
    if cfg.dataset.is_empty() {
        return Err(config_error("missing required --dataset (a builtin name or a triple file)"));
    }
    cfg.validate().map_err(config_error)?;
    datasets::resolve(&cfg.dataset).map_err(|e| config_error(format!("--dataset {}: {e}", cfg.dataset)))?;
    Ok(cfg)
}

fn read_table(path: &Path) -> semcomm::Result<EmbeddingTable> {
    EmbeddingTable::read_from(BufReader::new(fs::File::open(path)?))
}

fn matches(table: &EmbeddingTable, kg: &KnowledgeGraph) -> bool {
    table.entity_count() == kg.entity_count() && table.relation_count() == kg.relation_count()
}

fn run(cmd: Command, cfg: &ExperimentConfig) -> Result<Manifest, Failure> {
    fs::create_dir_all(&cfg.out).map_err(Error::from)?;
    let mut manifest = Manifest::new(cmd.name(), cfg);
    let out = |name: &str| cfg.out.join(name);
    let mut written = Vec::<String>::new();
    let seed = cfg.seeds[0];
    match cmd {
        Command::TrainEncoder => {
            let kg = exp::desk_graph(cfg)?;
            let trained = exp::train_table(cfg, &kg, cfg.dim, seed)?;
            fs::write(out("table.txt"), trained.table.to_text()).map_err(Error::from)?;
            let losses: Vec<_> = trained.loss_trace.iter().enumerate().map(|(i, &l)| EpochLoss { epoch: i, loss: l }).collect();
            exp::write_csv(out("encoder_loss.csv"), &losses)?;
            let audit = MarginAudit {
                margin: cfg.margin,
                triples: kg.triple_count(),
                fraction: exp::audit_table(cfg, &kg, &trained.table, seed)?,
            };
            exp::write_csv(out("encoder_audit.csv"), &[audit])?;
            written.extend(["table.txt", "encoder_loss.csv", "encoder_audit.csv"].map(String::from));
        }
        Command::TrainGrml => {
            let kg = exp::desk_graph(cfg)?;
            let table = match read_table(&out("table.txt")) {
                Ok(t) if matches(&t, &kg) => t,
                _ => {
                    let t = exp::train_table(cfg, &kg, cfg.dim, seed)?.table;
                    fs::write(out("table.txt"), t.to_text()).map_err(Error::from)?;
                    written.push("table.txt".into());
                    t
                }
            };
            let experts = exp::expert_history(&kg, cfg.max_length, cfg.expert_paths, seed)?;
            let outcome = exp::train_policy(cfg, &kg, &experts, &table, cfg.max_length, seed)?;
            outcome.log.write_csv(fs::File::create(out("train_log.csv")).map_err(Error::from)?)?;
            fs::write(out("policy.txt"), outcome.policy.to_text()).map_err(Error::from)?;
            fs::write(out("comparator.txt"), outcome.comparator.to_text()).map_err(Error::from)?;
            let paths: String = experts.paths.iter().map(|p| format!("{p}\n")).collect();
            fs::write(out("experts.txt"), paths).map_err(Error::from)?;
            written.extend(["train_log.csv", "policy.txt", "comparator.txt", "experts.txt"].map(String::from));
            if let Some(last) = outcome.log.last() {
                println!(
                    "{} iterations, d_js {:.4}, {} {:.3}, converged at {:?}",
                    outcome.log.len(),
                    last.d_js,
                    cfg.grml.metric,
                    last.accuracy,
                    outcome.converged_at
                );
            }
        }
        Command::EvalAccuracy => {
            exp::write_csv(out("accuracy_vs_length.csv"), &exp::run_accuracy_vs_length(cfg)?)?;
            written.push("accuracy_vs_length.csv".into());
        }
        Command::EvalSer => {
            let rows = match (read_table(&out("table.txt")), out("policy.txt")) {
                (Ok(table), policy_path) if policy_path.exists() => {
                    let kg = exp::desk_graph(cfg)?;
                    if !matches(&table, &kg) {
                        return Err(Failure::Runtime(Error::Precondition(
                            "table.txt in the output directory was trained on a different graph".into(),
                        )));
                    }
                    let policy = PolicyNetwork::read_from(BufReader::new(fs::File::open(policy_path).map_err(Error::from)?))?;
                    let inputs = SerInputs {
                        paths: exp::transmission_paths(&kg, cfg.max_length, cfg.symbols, seed)?,
                        graph: kg,
                        table,
                        policy: Some(policy),
                        max_length: cfg.max_length,
                    };
                    println!("decoding with table.txt and policy.txt from {}", cfg.out.display());
                    exp::run_ser_vs_snr(cfg, &inputs, seed)?
                }
                _ => exp::run_ser_sweep(cfg)?,
            };
            exp::write_csv(out("ser_vs_snr.csv"), &rows)?;
            written.push("ser_vs_snr.csv".into());
        }
        Command::SweepDim => {
            let (rows, summary) = exp::run_dimension_sweep(cfg)?;
            exp::write_csv(out("dimension_sweep.csv"), &rows)?;
            exp::write_csv(out("dimension_summary.csv"), &summary)?;
            for s in &summary {
                println!(
                    "{}: best dimension {} (accuracy {:.3}){}",
                    s.channel,
                    s.best_dimension,
                    s.best_accuracy,
                    if s.monotone_increasing { ", still rising at the end of the sweep" } else { "" }
                );
            }
            written.extend(["dimension_sweep.csv", "dimension_summary.csv"].map(String::from));
        }
        Command::SweepExperts => {
            exp::write_csv(out("expert_count_sweep.csv"), &exp::run_expert_count_sweep(cfg)?)?;
            written.push("expert_count_sweep.csv".into());
        }
        Command::Timing => {
            let rows = exp::run_encoder_timing(cfg)?;
            if let Some(r) = rows.first() {
                println!("linear fit R² = {:.4}", r.fit_r2);
            }
            exp::write_csv(out("encoder_timing.csv"), &rows)?;
            written.push("encoder_timing.csv".into());
            manifest.nondeterministic.push("encoder_timing.csv".into());
        }
    }
    manifest.outputs = written;
    let path = out(&format!("manifest-{}.json", cmd.name()));
    manifest.write(&path)?;
    for f in &manifest.outputs {
        println!("wrote {}", out(f).display());
    }
    println!("wrote {}", path.display());
    Ok(manifest)
}

#[derive(serde::Serialize)]
struct EpochLoss {
    epoch: usize,
    loss: f64,
}

#[derive(serde::Serialize)]
struct MarginAudit {
    margin: f64,
    triples: usize,
    fraction: f64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let result = build_config(&cli.common).and_then(|cfg| run(cli.command, &cfg));
    match result {
        Ok(_) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}


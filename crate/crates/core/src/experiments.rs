//! Desk-scale experiment runners.
//!
//! Every runner takes an [`ExperimentConfig`] and returns typed rows. Rows
//! serialize to CSV with a header and parse back into the same type. All
//! randomness is derived from the configured seeds, so a rerun with the same
//! configuration writes the same bytes; the one exception is the timing
//! table, whose seconds column is measured.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::channel::{measure_signal_power, Channel, ChannelConfig, ChannelModel};
use crate::datasets;
use crate::decoder::{decode_path_entities, Mode, Reasoner, DEFAULT_TOP_P};
use crate::encoder::{margin_audit, pack_symbols, train_encoder, train_encoder_on, EmbeddingTable, EncoderConfig, Norm, Packing, TrainedEncoder};
use crate::error::{invalid, Error, Result};
use crate::grml::{
    evaluate_accuracy, exact_accuracy, exact_path_distribution, train, train_against, ExpertIndex, Metric, TrainConfig,
    TrainOutcome, ENUMERATION_CAP,
};
use crate::kg::{generate_expert_paths, sample_skg, ExpertPathOptions, ExpertPathSet, KnowledgeGraph, SemanticPath};
use crate::policy::PolicyNetwork;

/// How sampled subgraphs are ordered when several are drawn.
pub const DENSITY_RANKING: &str = "triples_per_entity";

/// Label for the decoder coupling used by the reasoning-aided modes.
pub const COUPLING: &str = "top_p_restriction";

/// Rollouts drawn when a policy's path distribution is too large to enumerate.
const ACCURACY_SAMPLES: usize = 4000;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// `synthetic:*` / `toy:*` builtin or a triple file.
    pub dataset: String,
    /// Graphs with more entities than this are subsampled.
    pub skg_budget: usize,
    pub skg_seed: u64,
    /// Number of subgraphs drawn and ranked by density.
    pub skg_count: usize,
    /// Entity and relation constellation size.
    pub dim: usize,
    pub margin: f64,
    pub norm: Norm,
    pub encoder_epochs: usize,
    pub encoder_learning_rate: f64,
    pub packing: Packing,
    pub max_length: usize,
    pub lengths: Vec<usize>,
    pub metrics: Vec<Metric>,
    pub expert_paths: usize,
    pub expert_counts: Vec<usize>,
    pub grml: TrainConfig,
    pub snr_list: Vec<f64>,
    pub channels: Vec<ChannelModel>,
    pub modes: Vec<Mode>,
    pub top_p: f64,
    /// Constellation size of the SER runs.
    pub ser_dim: usize,
    /// Expert history the SER-run policies are trained on.
    pub ser_expert_paths: usize,
    /// Comparator learning rate for the decoding policy, which imitates a
    /// much larger expert set than the convergence runs.
    pub ser_comparator_learning_rate: f64,
    /// Minimum number of entity symbols per SER cell and seed.
    pub symbols: usize,
    pub dims: Vec<usize>,
    pub sweep_snr_db: f64,
    pub timing_paths: Vec<usize>,
    pub timing_repeats: usize,
    pub timing_epochs: usize,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: "synthetic:fb".into(),
            skg_budget: 200,
            skg_seed: 0,
            skg_count: 1,
            dim: 50,
            margin: 1.0,
            norm: Norm::L1,
            encoder_epochs: 200,
            encoder_learning_rate: 0.01,
            packing: Packing::Real,
            max_length: 3,
            lengths: (1..=5).collect(),
            metrics: vec![Metric::ExactMatch, Metric::TerminalHit],
            expert_paths: 50,
            expert_counts: vec![5, 10, 20, 50],
            grml: TrainConfig::tuned(),
            snr_list: std::iter::once(f64::INFINITY).chain((0..=6).map(|i| 2.0 * i as f64)).collect(),
            channels: vec![ChannelModel::Awgn, ChannelModel::Rayleigh],
            modes: vec![Mode::None, Mode::Hard, Mode::Soft],
            top_p: DEFAULT_TOP_P,
            ser_dim: 8,
            ser_expert_paths: 3000,
            ser_comparator_learning_rate: 3e-2,
            symbols: 10_000,
            dims: vec![2, 4, 8, 16, 32, 64, 128],
            sweep_snr_db: 7.0,
            timing_paths: vec![50, 100, 200, 400],
            timing_repeats: 5,
            timing_epochs: 2000,
            seeds: vec![0, 1, 2],
            out: PathBuf::from("out"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("bad value {value:?} for {key}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "dataset" => self.dataset = v.to_string(),
            "skg_budget" => self.skg_budget = parse(key, v)?,
            "skg_seed" => self.skg_seed = parse(key, v)?,
            "skg_count" => self.skg_count = parse(key, v)?,
            "dim" => self.dim = parse(key, v)?,
            "margin" => self.margin = parse(key, v)?,
            "norm" => self.norm = v.parse()?,
            "encoder_epochs" => self.encoder_epochs = parse(key, v)?,
            "encoder_learning_rate" => self.encoder_learning_rate = parse(key, v)?,
            "packing" => self.packing = v.parse()?,
            "max_length" => self.max_length = parse(key, v)?,
            "lengths" => self.lengths = parse_list(key, v)?,
            "metrics" => self.metrics = v.split(',').map(|s| s.trim().parse()).collect::<Result<_>>()?,
            "expert_paths" => self.expert_paths = parse(key, v)?,
            "expert_counts" => self.expert_counts = parse_list(key, v)?,
            "iterations" => self.grml.iterations = parse(key, v)?,
            "rollouts" => self.grml.rollouts = parse(key, v)?,
            "policy_learning_rate" => self.grml.policy_learning_rate = parse(key, v)?,
            "comparator_learning_rate" => self.grml.comparator_learning_rate = parse(key, v)?,
            "decay_iterations" => self.grml.decay_iterations = parse(key, v)?,
            "baseline_decay" => self.grml.baseline_decay = parse(key, v)?,
            "policy_hidden" => self.grml.policy_hidden = parse(key, v)?,
            "comparator_hidden" => self.grml.comparator_hidden = parse(key, v)?,
            "early_stop_threshold" => self.grml.early_stop_threshold = parse(key, v)?,
            "early_stop_patience" => self.grml.early_stop_patience = parse(key, v)?,
            "snr_list" => self.snr_list = parse_list(key, v)?,
            "channels" => self.channels = v.split(',').map(|s| s.trim().parse()).collect::<Result<_>>()?,
            "modes" => self.modes = v.split(',').map(|s| s.trim().parse()).collect::<Result<_>>()?,
            "top_p" => self.top_p = parse(key, v)?,
            "ser_dim" => self.ser_dim = parse(key, v)?,
            "ser_expert_paths" => self.ser_expert_paths = parse(key, v)?,
            "ser_comparator_learning_rate" => self.ser_comparator_learning_rate = parse(key, v)?,
            "symbols" => self.symbols = parse(key, v)?,
            "dims" => self.dims = parse_list(key, v)?,
            "sweep_snr_db" => self.sweep_snr_db = parse(key, v)?,
            "timing_paths" => self.timing_paths = parse_list(key, v)?,
            "timing_repeats" => self.timing_repeats = parse(key, v)?,
            "timing_epochs" => self.timing_epochs = parse(key, v)?,
            "seeds" => self.seeds = parse_list(key, v)?,
            "out" => self.out = PathBuf::from(v),
            other => return invalid(format!("unknown config key {other:?}")),
        }
        Ok(())
    }

    /// Every setting as `key -> value` text; [`ExperimentConfig::set`]
    /// accepts each pair back.
    pub fn to_pairs(&self) -> BTreeMap<String, String> {
        let g = &self.grml;
        let pairs: Vec<(&str, String)> = vec![
            ("dataset", self.dataset.clone()),
            ("skg_budget", self.skg_budget.to_string()),
            ("skg_seed", self.skg_seed.to_string()),
            ("skg_count", self.skg_count.to_string()),
            ("dim", self.dim.to_string()),
            ("margin", self.margin.to_string()),
            ("norm", self.norm.to_string()),
            ("encoder_epochs", self.encoder_epochs.to_string()),
            ("encoder_learning_rate", self.encoder_learning_rate.to_string()),
            ("packing", self.packing.to_string()),
            ("max_length", self.max_length.to_string()),
            ("lengths", join(&self.lengths)),
            ("metrics", join(&self.metrics)),
            ("expert_paths", self.expert_paths.to_string()),
            ("expert_counts", join(&self.expert_counts)),
            ("iterations", g.iterations.to_string()),
            ("rollouts", g.rollouts.to_string()),
            ("policy_learning_rate", g.policy_learning_rate.to_string()),
            ("comparator_learning_rate", g.comparator_learning_rate.to_string()),
            ("decay_iterations", g.decay_iterations.to_string()),
            ("baseline_decay", g.baseline_decay.to_string()),
            ("policy_hidden", g.policy_hidden.to_string()),
            ("comparator_hidden", g.comparator_hidden.to_string()),
            ("early_stop_threshold", g.early_stop_threshold.to_string()),
            ("early_stop_patience", g.early_stop_patience.to_string()),
            ("snr_list", join(&self.snr_list)),
            ("channels", join(&self.channels)),
            ("modes", join(&self.modes)),
            ("top_p", self.top_p.to_string()),
            ("ser_dim", self.ser_dim.to_string()),
            ("ser_expert_paths", self.ser_expert_paths.to_string()),
            ("ser_comparator_learning_rate", self.ser_comparator_learning_rate.to_string()),
            ("symbols", self.symbols.to_string()),
            ("dims", join(&self.dims)),
            ("sweep_snr_db", self.sweep_snr_db.to_string()),
            ("timing_paths", join(&self.timing_paths)),
            ("timing_repeats", self.timing_repeats.to_string()),
            ("timing_epochs", self.timing_epochs.to_string()),
            ("seeds", join(&self.seeds)),
            ("out", self.out.display().to_string()),
        ];
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// Parses flat `key = value` text. Blank lines and `#` comments are
    /// skipped; later keys override earlier ones.
    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_kv_text(text)?;
        Ok(cfg)
    }

    fn apply_kv_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("expected key = value, got {line:?}"),
            })?;
            self.set(k, v).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn to_kv_text(&self) -> String {
        self.to_pairs().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Reads a flat config file, or the `config` object of a JSON manifest.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_file(path)?;
        Ok(cfg)
    }

    /// Applies the settings of a config file or manifest on top of `self`.
    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let text = fs::read_to_string(path.as_ref())?;
        if text.trim_start().starts_with('{') {
            let manifest: Manifest = serde_json::from_str(&text)?;
            for (k, v) in &manifest.config {
                self.set(k, v)?;
            }
            return Ok(());
        }
        self.apply_kv_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let empty = [
            ("lengths", self.lengths.is_empty()),
            ("metrics", self.metrics.is_empty()),
            ("expert_counts", self.expert_counts.is_empty()),
            ("snr_list", self.snr_list.is_empty()),
            ("channels", self.channels.is_empty()),
            ("modes", self.modes.is_empty()),
            ("dims", self.dims.is_empty()),
            ("timing_paths", self.timing_paths.is_empty()),
            ("seeds", self.seeds.is_empty()),
        ];
        if let Some((name, _)) = empty.iter().find(|(_, e)| *e) {
            return invalid(format!("{name} must not be empty"));
        }
        if self.dataset.trim().is_empty() {
            return invalid("no dataset given");
        }
        if self.skg_budget == 0 || self.skg_count == 0 {
            return invalid("skg_budget and skg_count must be at least 1");
        }
        if self.dim == 0 || self.ser_dim == 0 || self.dims.contains(&0) {
            return invalid("dimensions must be at least 1");
        }
        if self.max_length == 0 || self.lengths.contains(&0) {
            return invalid("path lengths must be at least 1");
        }
        if self.expert_paths == 0 || self.ser_expert_paths == 0 || self.expert_counts.contains(&0) {
            return invalid("expert path counts must be at least 1");
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return invalid(format!("top_p must lie in (0, 1], got {}", self.top_p));
        }
        if self.snr_list.iter().chain([&self.sweep_snr_db]).any(|s| s.is_nan()) {
            return invalid("SNR values must not be NaN");
        }
        if !(self.ser_comparator_learning_rate > 0.0) {
            return invalid("ser_comparator_learning_rate must be positive");
        }
        if self.symbols == 0 || self.timing_repeats == 0 || self.timing_epochs == 0 {
            return invalid("symbols, timing_repeats and timing_epochs must be at least 1");
        }
        if self.packing == Packing::Complex && (!self.dim.is_multiple_of(2) || !self.ser_dim.is_multiple_of(2) || self.dims.iter().any(|d| !d.is_multiple_of(2))) {
            return invalid("complex packing needs even dimensions");
        }
        self.grml.validate()
    }

    pub fn encoder_config(&self, dim: usize, seed: u64) -> EncoderConfig {
        EncoderConfig {
            margin: self.margin,
            norm: self.norm,
            learning_rate: self.encoder_learning_rate,
            epochs: self.encoder_epochs,
            seed,
            ..EncoderConfig::default().with_dim(dim)
        }
    }

    pub fn grml_config(&self, max_length: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            max_length,
            seed,
            ..self.grml.clone()
        }
    }

    fn channel_config(&self, model: ChannelModel, snr_db: f64, seed: u64) -> ChannelConfig {
        let base = match model {
            ChannelModel::Awgn => ChannelConfig::awgn(snr_db, seed),
            ChannelModel::Rayleigh => ChannelConfig::rayleigh(snr_db, seed),
        };
        base.with_packing(self.packing)
    }
}

/// Independent seed for one purpose within one run.
pub fn stream(seed: u64, purpose: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ purpose.wrapping_mul(0xD1B5_4A32_D192_ED03)
}

const ENCODER: u64 = 1;
const EXPERTS: u64 = 2;
const TRANSMIT: u64 = 3;
const CHANNEL: u64 = 4;
const EVAL: u64 = 5;
const GRML: u64 = 6;


#[derive(Debug, Clone)]
pub struct RankedGraph {
    /// 1 is the densest.
    pub rank: usize,
    pub seed: u64,
    pub density: f64,
    pub graph: KnowledgeGraph,
}

/// Draws `count` subgraphs of `budget` entities and orders them by triples
/// per entity, densest first. A graph within budget is returned whole.
pub fn ranked_subgraphs(kg: &KnowledgeGraph, budget: usize, count: usize, seed: u64) -> Result<Vec<RankedGraph>> {
    if kg.entity_count() <= budget {
        return Ok(vec![RankedGraph {
            rank: 1,
            seed,
            density: kg.density(),
            graph: kg.clone(),
        }]);
    }
    let mut drawn = (0..count as u64)
        .map(|i| {
            let s = seed + i;
            sample_skg(kg, budget, s).map(|g| (s, g))
        })
        .collect::<Result<Vec<_>>>()?;
    drawn.sort_by(|a, b| b.1.density().total_cmp(&a.1.density()).then(a.0.cmp(&b.0)));
    Ok(drawn
        .into_iter()
        .enumerate()
        .map(|(i, (s, g))| RankedGraph {
            rank: i + 1,
            seed: s,
            density: g.density(),
            graph: g,
        })
        .collect())
}

/// The densest subgraph of the configured dataset.
pub fn desk_graph(cfg: &ExperimentConfig) -> Result<KnowledgeGraph> {
    let kg = datasets::resolve(&cfg.dataset)?;
    let mut ranked = ranked_subgraphs(&kg, cfg.skg_budget, cfg.skg_count, cfg.skg_seed)?;
    Ok(ranked.swap_remove(0).graph)
}

/// Encoder of constellation size `dim` trained on the whole graph.
pub fn train_table(cfg: &ExperimentConfig, kg: &KnowledgeGraph, dim: usize, seed: u64) -> Result<TrainedEncoder> {
    train_encoder(kg, &cfg.encoder_config(dim, stream(seed, ENCODER)))
}

/// Policy trained on `experts` with the configured G-RML settings.
pub fn train_policy(
    cfg: &ExperimentConfig,
    kg: &KnowledgeGraph,
    experts: &ExpertPathSet,
    table: &EmbeddingTable,
    max_length: usize,
    seed: u64,
) -> Result<TrainOutcome> {
    train(kg, experts, table, &cfg.grml_config(max_length, stream(seed, GRML)))
}

/// Margin audit of `table` with negatives drawn from the seed's evaluation stream.
pub fn audit_table(cfg: &ExperimentConfig, kg: &KnowledgeGraph, table: &EmbeddingTable, seed: u64) -> Result<f64> {
    margin_audit(kg, table, cfg.margin, stream(seed, EVAL))
}

/// Terminal expert paths drawn from the seed's expert stream.
pub fn expert_history(kg: &KnowledgeGraph, max_length: usize, count: usize, seed: u64) -> Result<ExpertPathSet> {
    let set = generate_expert_paths(kg, &ExpertPathOptions::new(max_length, count, stream(seed, EXPERTS)).terminal())?;
    if set.is_empty() {
        return Err(Error::Unsatisfiable(format!("no expert paths of length ≤ {max_length} found")));
    }
    Ok(set)
}

/// Expert-distributed paths holding at least `symbols` entities in total.
pub fn transmission_paths(kg: &KnowledgeGraph, max_length: usize, symbols: usize, seed: u64) -> Result<Vec<SemanticPath>> {
    let pool = generate_expert_paths(kg, &ExpertPathOptions::new(max_length, symbols / 2 + 1, stream(seed, TRANSMIT)).terminal())?;
    let mut out = Vec::new();
    let mut count = 0;
    for p in pool.paths {
        if count >= symbols {
            break;
        }
        count += p.len() + 1;
        out.push(p);
    }
    if count < symbols {
        return Err(Error::Unsatisfiable(format!("only {count} of {symbols} symbols could be drawn")));
    }
    Ok(out)
}

/// Accuracy of `policy` against `experts`, exact when the policy's path
/// distribution is small enough to enumerate.
pub fn policy_accuracy(
    policy: &PolicyNetwork,
    experts: &ExpertPathSet,
    metric: Metric,
    kg: &KnowledgeGraph,
    table: &EmbeddingTable,
    max_length: usize,
    seed: u64,
) -> Result<f64> {
    let index = ExpertIndex::new(&experts.paths)?;
    match exact_path_distribution(policy, &index.starts, kg, table, max_length, ENUMERATION_CAP)? {
        Some(dist) => Ok(exact_accuracy(&dist, &index, metric)),
        None => evaluate_accuracy(policy, experts, metric, ACCURACY_SAMPLES, kg, table, max_length, stream(seed, EVAL)),
    }
}

fn mean_std(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (Some(mean), Some(std))
}

fn note_failure(errors: &mut Vec<String>, seed: u64, e: &Error) {
    log::warn!("seed {seed}: {e}");
    errors.push(format!("seed {seed}: {e}"));
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub dataset: String,
    pub max_length: usize,
    pub metric: Metric,
    pub mean_accuracy: Option<f64>,
    pub std_accuracy: Option<f64>,
    pub seeds: usize,
    pub failures: usize,
    pub error: String,
}

/// Trains one policy per path length and seed, then scores it under every
/// configured metric.
pub fn run_accuracy_vs_length(cfg: &ExperimentConfig) -> Result<Vec<AccuracyRow>> {
    cfg.validate()?;
    let kg = desk_graph(cfg)?;
    let tables = cfg
        .seeds
        .iter()
        .map(|&s| train_encoder(&kg, &cfg.encoder_config(cfg.dim, stream(s, ENCODER))).map(|t| t.table))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for &len in &cfg.lengths {
        let mut scores: BTreeMap<Metric, Vec<f64>> = BTreeMap::new();
        let mut errors = Vec::new();
        for (&seed, table) in cfg.seeds.iter().zip(&tables) {
            let cell = || -> Result<Vec<(Metric, f64)>> {
                let ex = expert_history(&kg, len, cfg.expert_paths, seed)?;
                let out = train(&kg, &ex, table, &cfg.grml_config(len, stream(seed, GRML)))?;
                cfg.metrics
                    .iter()
                    .map(|&m| policy_accuracy(&out.policy, &ex, m, &kg, table, len, seed).map(|a| (m, a)))
                    .collect()
            };
            match cell() {
                Ok(acc) => acc.into_iter().for_each(|(m, a)| scores.entry(m).or_default().push(a)),
                Err(e) => note_failure(&mut errors, seed, &e),
            }
        }
        for &metric in &cfg.metrics {
            let (mean, std) = mean_std(scores.get(&metric).map_or(&[][..], |v| v));
            rows.push(AccuracyRow {
                dataset: cfg.dataset.clone(),
                max_length: len,
                metric,
                mean_accuracy: mean,
                std_accuracy: std,
                seeds: cfg.seeds.len(),
                failures: errors.len(),
                error: errors.join("; "),
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertCountRow {
    pub dataset: String,
    pub expert_count: usize,
    /// Paths in the reference history every run is measured against.
    pub reference_paths: usize,
    pub seeds: usize,
    pub converged_runs: usize,
    /// Every seed met the early-stop criterion against the reference.
    pub converged: bool,
    pub mean_final_d_js: Option<f64>,
    /// Mean over converged runs of the first iteration of the stop streak.
    pub mean_iterations_to_converge: Option<f64>,
    pub failures: usize,
    pub error: String,
}

/// Trains on the first `k` paths of a history of `max(expert_counts)` paths
/// and measures the distance to the whole history.
pub fn run_expert_count_sweep(cfg: &ExperimentConfig) -> Result<Vec<ExpertCountRow>> {
    cfg.validate()?;
    let kg = desk_graph(cfg)?;
    let largest = *cfg.expert_counts.iter().max().expect("validated non-empty");
    struct Cell {
        d_js: Vec<f64>,
        iterations: Vec<f64>,
        errors: Vec<String>,
    }
    let mut cells: Vec<Cell> = cfg
        .expert_counts
        .iter()
        .map(|_| Cell {
            d_js: Vec::new(),
            iterations: Vec::new(),
            errors: Vec::new(),
        })
        .collect();
    let mut reference_paths = 0;
    for &seed in &cfg.seeds {
        let table = train_encoder(&kg, &cfg.encoder_config(cfg.dim, stream(seed, ENCODER)))?.table;
        let history = expert_history(&kg, cfg.max_length, largest, seed)?;
        reference_paths = history.len();
        for (cell, &k) in cells.iter_mut().zip(&cfg.expert_counts) {
            let run = || -> Result<(f64, Option<usize>)> {
                if k > history.len() {
                    return Err(Error::Unsatisfiable(format!("only {} expert paths available", history.len())));
                }
                let out = train_against(&kg, &history.truncated(k), &history, &table, &cfg.grml_config(cfg.max_length, stream(seed, GRML)))?;
                let last = out.log.last().map_or(f64::NAN, |r| r.d_js);
                Ok((last, out.converged_at))
            };
            match run() {
                Ok((d, conv)) => {
                    cell.d_js.push(d);
                    if let Some(i) = conv {
                        cell.iterations.push(i as f64);
                    }
                }
                Err(e) => note_failure(&mut cell.errors, seed, &e),
            }
        }
    }
    Ok(cells
        .into_iter()
        .zip(&cfg.expert_counts)
        .map(|(c, &k)| ExpertCountRow {
            dataset: cfg.dataset.clone(),
            expert_count: k,
            reference_paths,
            seeds: cfg.seeds.len(),
            converged_runs: c.iterations.len(),
            converged: c.errors.is_empty() && c.iterations.len() == cfg.seeds.len(),
            mean_final_d_js: mean_std(&c.d_js).0,
            mean_iterations_to_converge: mean_std(&c.iterations).0,
            failures: c.errors.len(),
            error: c.errors.join("; "),
        })
        .collect())
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SerRow {
    pub dataset: String,
    pub skg_rank: usize,
    pub triples_per_entity: f64,
    pub snr_db: f64,
    pub mode: String,
    pub channel: String,
    pub csi: bool,
    pub dimension: usize,
    /// Decoder coupling, with its `top_p`, for the reasoning-aided modes.
    pub coupling: String,
    pub top_p: Option<f64>,
    pub symbols: usize,
    pub errors: usize,
    pub ser: f64,
}

/// A trained pipeline ready for transmission experiments.
#[derive(Debug, Clone)]
pub struct SerInputs {
    pub graph: KnowledgeGraph,
    pub table: EmbeddingTable,
    /// Required by the hard and soft modes.
    pub policy: Option<PolicyNetwork>,
    pub paths: Vec<SemanticPath>,
    pub max_length: usize,
}

/// Symbol errors of one transmission cell: `(symbols, errors)`.
pub fn count_symbol_errors(inputs: &SerInputs, mode: Mode, channel: &ChannelConfig, top_p: f64) -> Result<(usize, usize)> {
    let power = measure_signal_power(&inputs.table)?;
    let reasoner = match (&inputs.policy, mode) {
        (_, Mode::None) => None,
        (Some(p), _) => Some(Reasoner::new(&inputs.graph, &inputs.table, p, inputs.max_length, top_p)?),
        (None, _) => return Err(Error::Precondition(format!("{mode} decoding needs a trained policy"))),
    };
    let mut ch = Channel::new(channel.clone(), power)?;
    let (mut symbols, mut errors) = (0, 0);
    for path in &inputs.paths {
        let sent: Vec<_> = path.entities().collect();
        let mut ys = Vec::with_capacity(sent.len());
        for &e in &sent {
            let stream = pack_symbols(inputs.table.try_entity(e)?, channel.packing)?;
            ys.push(ch.transmit(&stream)?.equalized());
        }
        let got = decode_path_entities(&ys, &inputs.table, mode, reasoner.as_ref())?;
        symbols += sent.len();
        errors += sent.iter().zip(&got).filter(|(a, b)| a != b).count();
    }
    Ok((symbols, errors))
}

fn check_inputs(inputs: &SerInputs) -> Result<()> {
    if inputs.table.entity_count() != inputs.graph.entity_count() || inputs.table.relation_count() != inputs.graph.relation_count() {
        return Err(Error::Precondition("embedding table does not match the graph".into()));
    }
    if measure_signal_power(&inputs.table)? <= 0.0 {
        return Err(Error::Precondition("embedding table is untrained (zero power)".into()));
    }
    if inputs.paths.is_empty() {
        return Err(Error::Precondition("no paths to transmit".into()));
    }
    Ok(())
}

/// SER of every (channel, SNR, mode) cell on one trained pipeline. All modes
/// of a cell see the same noise draws.
pub fn run_ser_vs_snr(cfg: &ExperimentConfig, inputs: &SerInputs, seed: u64) -> Result<Vec<SerRow>> {
    cfg.validate()?;
    check_inputs(inputs)?;
    let mut rows = Vec::new();
    for &model in &cfg.channels {
        for (si, &snr) in cfg.snr_list.iter().enumerate() {
            let ch = cfg.channel_config(model, snr, stream(stream(seed, CHANNEL), si as u64 * 8 + model as u64));
            for &mode in &cfg.modes {
                let (symbols, errors) = count_symbol_errors(inputs, mode, &ch, cfg.top_p)?;
                let reasoning = mode != Mode::None;
                rows.push(SerRow {
                    dataset: cfg.dataset.clone(),
                    skg_rank: 1,
                    triples_per_entity: inputs.graph.density(),
                    snr_db: snr,
                    mode: mode.to_string(),
                    channel: model.to_string(),
                    csi: ch.csi_at_receiver,
                    dimension: inputs.table.dim(),
                    coupling: if reasoning { COUPLING.into() } else { "none".into() },
                    top_p: reasoning.then_some(cfg.top_p),
                    symbols,
                    errors,
                    ser: errors as f64 / symbols as f64,
                });
            }
        }
    }
    Ok(rows)
}

/// Trains the encoder and, when any reasoning mode is requested, a policy
/// on `ser_expert_paths` expert paths; then draws the transmission paths.
pub fn prepare_ser_inputs(cfg: &ExperimentConfig, graph: &KnowledgeGraph, dim: usize, seed: u64) -> Result<SerInputs> {
    let table = train_encoder(graph, &cfg.encoder_config(dim, stream(seed, ENCODER)))?.table;
    let policy = if cfg.modes.iter().any(|&m| m != Mode::None) {
        let ex = expert_history(graph, cfg.max_length, cfg.ser_expert_paths, seed)?;
        let grml = TrainConfig {
            comparator_learning_rate: cfg.ser_comparator_learning_rate,
            ..cfg.grml_config(cfg.max_length, stream(seed, GRML))
        };
        Some(train(graph, &ex, &table, &grml)?.policy)
    } else {
        None
    };
    let paths = transmission_paths(graph, cfg.max_length, cfg.symbols, seed)?;
    Ok(SerInputs {
        graph: graph.clone(),
        table,
        policy,
        paths,
        max_length: cfg.max_length,
    })
}

/// SER curves on every ranked subgraph, pooling symbol counts over seeds.
pub fn run_ser_sweep(cfg: &ExperimentConfig) -> Result<Vec<SerRow>> {
    cfg.validate()?;
    let kg = datasets::resolve(&cfg.dataset)?;
    let mut rows = Vec::new();
    for ranked in ranked_subgraphs(&kg, cfg.skg_budget, cfg.skg_count, cfg.skg_seed)? {
        let mut pooled: Vec<SerRow> = Vec::new();
        for &seed in &cfg.seeds {
            let inputs = prepare_ser_inputs(cfg, &ranked.graph, cfg.ser_dim, seed)?;
            let cell = run_ser_vs_snr(cfg, &inputs, seed)?;
            if pooled.is_empty() {
                pooled = cell;
            } else {
                for (p, c) in pooled.iter_mut().zip(cell) {
                    p.symbols += c.symbols;
                    p.errors += c.errors;
                }
            }
        }
        for mut r in pooled {
            r.skg_rank = ranked.rank;
            r.ser = r.errors as f64 / r.symbols as f64;
            rows.push(r);
        }
    }
    Ok(rows)
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionRow {
    pub dataset: String,
    pub dimension: usize,
    pub channel: String,
    pub snr_db: f64,
    /// Fraction of transmitted paths whose entities were all recovered by
    /// reasoning-aided hard decoding.
    pub accuracy: f64,
    pub std_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionSummary {
    pub channel: String,
    pub best_dimension: usize,
    pub best_accuracy: f64,
    /// Accuracy rose strictly at every step of the sweep.
    pub monotone_increasing: bool,
}

fn path_accuracy(inputs: &SerInputs, channel: &ChannelConfig, top_p: f64) -> Result<f64> {
    let power = measure_signal_power(&inputs.table)?;
    let policy = inputs.policy.as_ref().ok_or_else(|| Error::Precondition("dimension sweep needs a trained policy".into()))?;
    let reasoner = Reasoner::new(&inputs.graph, &inputs.table, policy, inputs.max_length, top_p)?;
    let mut ch = Channel::new(channel.clone(), power)?;
    let mut ok = 0;
    for path in &inputs.paths {
        let sent: Vec<_> = path.entities().collect();
        let mut ys = Vec::with_capacity(sent.len());
        for &e in &sent {
            ys.push(ch.transmit(&pack_symbols(inputs.table.entity(e), channel.packing)?)?.equalized());
        }
        ok += (decode_path_entities(&ys, &inputs.table, Mode::Hard, Some(&reasoner))? == sent) as usize;
    }
    Ok(ok as f64 / inputs.paths.len() as f64)
}

/// Path recovery accuracy at `sweep_snr_db` for every dimension and channel,
/// plus the best dimension per channel.
pub fn run_dimension_sweep(cfg: &ExperimentConfig) -> Result<(Vec<DimensionRow>, Vec<DimensionSummary>)> {
    cfg.validate()?;
    let kg = desk_graph(cfg)?;
    let sweep = ExperimentConfig {
        modes: vec![Mode::Hard],
        ..cfg.clone()
    };
    let mut acc: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    for &seed in &cfg.seeds {
        for (di, &dim) in cfg.dims.iter().enumerate() {
            let inputs = prepare_ser_inputs(&sweep, &kg, dim, seed)?;
            for (ci, &model) in cfg.channels.iter().enumerate() {
                let ch = cfg.channel_config(model, cfg.sweep_snr_db, stream(stream(seed, CHANNEL), ci as u64));
                acc.entry((ci, di)).or_default().push(path_accuracy(&inputs, &ch, cfg.top_p)?);
            }
        }
    }
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for (ci, model) in cfg.channels.iter().enumerate() {
        let curve: Vec<(usize, f64)> = cfg
            .dims
            .iter()
            .enumerate()
            .map(|(di, &dim)| {
                let (mean, std) = mean_std(&acc[&(ci, di)]);
                rows.push(DimensionRow {
                    dataset: cfg.dataset.clone(),
                    dimension: dim,
                    channel: model.to_string(),
                    snr_db: cfg.sweep_snr_db,
                    accuracy: mean.unwrap_or(f64::NAN),
                    std_accuracy: std.unwrap_or(f64::NAN),
                });
                (dim, mean.unwrap_or(f64::NAN))
            })
            .collect();
        summary.push(summarize_curve(&model.to_string(), &curve));
    }
    Ok((rows, summary))
}

/// Best point of a `(dimension, accuracy)` curve, the smallest dimension on
/// ties, and whether the curve rose strictly throughout.
pub fn summarize_curve(channel: &str, curve: &[(usize, f64)]) -> DimensionSummary {
    let mut best = curve[0];
    for &p in &curve[1..] {
        if p.1 > best.1 {
            best = p;
        }
    }
    DimensionSummary {
        channel: channel.to_string(),
        best_dimension: best.0,
        best_accuracy: best.1,
        monotone_increasing: curve.len() > 1 && curve.windows(2).all(|w| w[1].1 > w[0].1),
    }
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub expert_paths: usize,
    pub dimension: usize,
    pub triples: usize,
    pub epochs: usize,
    /// Minimum over repeats.
    pub seconds: f64,
    /// R² of the least-squares line `seconds ~ expert_paths` over the sweep.
    pub fit_r2: f64,
}

/// Coefficient of determination of the least-squares line through `points`.
pub fn linear_fit_r2(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return f64::NAN;
    }
    sxy * sxy / (sxx * syy)
}

/// Wall-clock encoder training time on the triples of `K` expert paths.
pub fn run_encoder_timing(cfg: &ExperimentConfig) -> Result<Vec<TimingRow>> {
    cfg.validate()?;
    let kg = desk_graph(cfg)?;
    let seed = cfg.seeds[0];
    let largest = *cfg.timing_paths.iter().max().expect("validated non-empty");
    let history = expert_history(&kg, cfg.max_length, largest, seed)?;
    let enc = EncoderConfig {
        epochs: cfg.timing_epochs,
        ..cfg.encoder_config(cfg.dim, stream(seed, ENCODER))
    };
    let sets: Vec<Vec<_>> = cfg
        .timing_paths
        .iter()
        .map(|&k| history.paths.iter().take(k).flat_map(|p| p.triples()).collect())
        .collect();
    // repeats sweep every K in turn so slow drift in machine load hits all sizes alike
    let mut best = vec![f64::INFINITY; sets.len()];
    for _ in 0..cfg.timing_repeats {
        for (triples, b) in sets.iter().zip(best.iter_mut()) {
            let t0 = Instant::now();
            train_encoder_on(&kg, triples, &enc)?;
            *b = b.min(t0.elapsed().as_secs_f64());
        }
    }
    let mut rows: Vec<TimingRow> = cfg
        .timing_paths
        .iter()
        .zip(&sets)
        .zip(&best)
        .map(|((&k, triples), &seconds)| TimingRow {
            expert_paths: k.min(history.len()),
            dimension: cfg.dim,
            triples: triples.len(),
            epochs: cfg.timing_epochs,
            seconds,
            fit_r2: f64::NAN,
        })
        .collect();
    let r2 = linear_fit_r2(&rows.iter().map(|r| (r.expert_paths as f64, r.seconds)).collect::<Vec<_>>());
    rows.iter_mut().for_each(|r| r.fit_r2 = r2);
    Ok(rows)
}


pub fn write_csv<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<T>, _>>()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config: BTreeMap<String, String>,
    pub seeds: Vec<u64>,
    pub version: String,
    pub started_at: String,
    pub outputs: Vec<String>,
    /// Outputs that hold measured wall-clock values.
    pub nondeterministic: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, cfg: &ExperimentConfig) -> Self {
        Self {
            command: command.to_string(),
            config: cfg.to_pairs(),
            seeds: cfg.seeds.clone(),
            version: version(),
            started_at: chrono::Utc::now().to_rfc3339(),
            outputs: Vec::new(),
            nondeterministic: Vec::new(),
        }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// `git describe` of the source tree, or the crate version outside a checkout.
pub fn version() -> String {
    std::process::Command::new("git")
        .args(["-C", env!("CARGO_MANIFEST_DIR"), "describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| format!("semcomm {}", env!("CARGO_PKG_VERSION")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::toy;
    use tempfile::tempdir;

    fn quick(dataset: &str) -> ExperimentConfig {
        ExperimentConfig {
            dataset: dataset.into(),
            dim: 8,
            encoder_epochs: 50,
            grml: TrainConfig {
                iterations: 30,
                rollouts: 64,
                ..TrainConfig::tuned()
            },
            seeds: vec![0],
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn config_round_trips_through_text() {
        let mut cfg = ExperimentConfig::default();
        cfg.set("snr_list", "inf, 0, 3.5").unwrap();
        cfg.set("modes", "hard").unwrap();
        cfg.set("policy_learning_rate", "0.004").unwrap();
        let back = ExperimentConfig::from_kv_text(&cfg.to_kv_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.snr_list[0], f64::INFINITY);
    }

    #[test]
    fn config_errors() {
        assert!(ExperimentConfig::from_kv_text("dim 5").is_err());
        assert!(matches!(ExperimentConfig::from_kv_text("colour = red"), Err(Error::Parse { line: 1, .. })));
        let mut cfg = ExperimentConfig::default();
        cfg.seeds.clear();
        assert!(cfg.validate().is_err());
        cfg = ExperimentConfig::default();
        cfg.top_p = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn chain_single_length_is_perfect() {
        let cfg = ExperimentConfig {
            lengths: vec![1],
            metrics: vec![Metric::ExactMatch],
            ..quick("toy:chain")
        };
        let rows = run_accuracy_vs_length(&cfg).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].mean_accuracy, Some(1.0));
    }

    #[test]
    fn accuracy_table_shape_and_parse_back() {
        let cfg = ExperimentConfig {
            lengths: vec![1, 2],
            ..quick("toy:forest")
        };
        let rows = run_accuracy_vs_length(&cfg).unwrap();
        assert_eq!(rows.len(), cfg.lengths.len() * cfg.metrics.len());
        let dir = tempdir().unwrap();
        let p = dir.path().join("acc.csv");
        write_csv(&p, &rows).unwrap();
        let back: Vec<AccuracyRow> = read_csv(&p).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn expert_sweep_rows_and_failures() {
        let cfg = ExperimentConfig {
            expert_counts: vec![5, 50],
            ..quick("toy:hard-forest")
        };
        let rows = run_expert_count_sweep(&cfg).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.reference_paths == 50 && r.failures == 0));
    }

    #[test]
    fn ser_needs_policy_for_reasoning_modes() {
        let kg = toy::benchmark_forest();
        let cfg = quick("toy:forest");
        let table = train_encoder(&kg, &cfg.encoder_config(8, 0)).unwrap().table;
        let inputs = SerInputs {
            paths: transmission_paths(&kg, 3, 50, 0).unwrap(),
            graph: kg,
            table,
            policy: None,
            max_length: 3,
        };
        assert!(matches!(run_ser_vs_snr(&cfg, &inputs, 0), Err(Error::Precondition(_))));
        let plain = ExperimentConfig {
            modes: vec![Mode::None],
            ..cfg
        };
        let rows = run_ser_vs_snr(&plain, &inputs, 0).unwrap();
        let noiseless: Vec<_> = rows.iter().filter(|r| r.snr_db == f64::INFINITY).collect();
        assert!(!noiseless.is_empty() && noiseless.iter().all(|r| r.errors == 0));
    }

    #[test]
    fn untrained_table_is_rejected() {
        let kg = toy::benchmark_forest();
        let inputs = SerInputs {
            table: EmbeddingTable::zeros(kg.entity_count(), kg.relation_count(), 4, 4, Norm::L1),
            paths: transmission_paths(&kg, 3, 20, 0).unwrap(),
            graph: kg,
            policy: None,
            max_length: 3,
        };
        let cfg = ExperimentConfig {
            modes: vec![Mode::None],
            ..quick("toy:forest")
        };
        assert!(matches!(run_ser_vs_snr(&cfg, &inputs, 0), Err(Error::Precondition(_))));
    }

    #[test]
    fn curve_summary() {
        let s = summarize_curve("awgn", &[(2, 0.5), (4, 0.9), (8, 0.9)]);
        assert_eq!((s.best_dimension, s.monotone_increasing), (4, false));
        assert!(summarize_curve("awgn", &[(2, 0.1), (4, 0.2)]).monotone_increasing);
        assert_eq!(summarize_curve("awgn", &[(2, 0.3)]).best_dimension, 2);
    }

    #[test]
    fn r2_oracle() {
        let line: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, 3.0 * i as f64 + 1.0)).collect();
        assert!((linear_fit_r2(&line) - 1.0).abs() < 1e-12);
        // y = x² on {0,1,2,3}: r = 0.9583..., so R² = 0.91837 (numpy.corrcoef)
        let sq: Vec<(f64, f64)> = (0..4).map(|i| (i as f64, (i * i) as f64)).collect();
        assert!((linear_fit_r2(&sq) - 0.918_367_346_938_775_5).abs() < 1e-12);
    }

    #[test]
    fn ranking_orders_by_density() {
        let kg = datasets::typed_graph(&datasets::SyntheticConfig {
            entities: 400,
            relations: 20,
            ..Default::default()
        });
        let ranked = ranked_subgraphs(&kg, 100, 4, 3).unwrap();
        assert_eq!(ranked.len(), 4);
        assert!(ranked.windows(2).all(|w| w[0].density >= w[1].density));
        assert_eq!(ranked.iter().map(|r| r.rank).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
    }

    #[test]
    fn manifest_round_trip_rebuilds_config() {
        let dir = tempdir().unwrap();
        let cfg = quick("toy:forest");
        let m = Manifest::new("eval-accuracy", &cfg);
        let p = dir.path().join("manifest.json");
        m.write(&p).unwrap();
        assert_eq!(Manifest::read(&p).unwrap(), m);
        assert_eq!(ExperimentConfig::load(&p).unwrap(), cfg);
    }
}

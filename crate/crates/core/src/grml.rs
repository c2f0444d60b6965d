//! Adversarial imitation of the expert reasoning mechanism.
//!
//! Every iteration samples a batch of expert paths, rolls out the policy from
//! their starts, takes one comparator ascent step, then one REINFORCE step on
//! the policy with per-path reward `log D(η)` minus a moving baseline.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::comparator::{comparator_grad, featurize_all, featurize_path, objective, path_feature_dim, semantic_distance, ComparatorNetwork, PathDistribution};
use crate::encoder::EmbeddingTable;
use crate::error::{invalid, Error, Result};
use crate::kg::{EntityId, ExpertPathSet, ExplicitSemantics, KnowledgeGraph, SemanticPath};
use crate::nn::Adam;
use crate::policy::{accumulate_policy_grad, featurize_state, policy_forward, rollout, valid_actions, PolicyNetwork, Rollout, State};

/// Paths beyond this many make exact enumeration give way to sampling.
pub const ENUMERATION_CAP: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// The whole path appears among the expert paths with the same start.
    ExactMatch,
    /// The path ends where some expert path with the same start ends.
    TerminalHit,
}

impl FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact_match" => Ok(Metric::ExactMatch),
            "terminal_hit" => Ok(Metric::TerminalHit),
            _ => invalid(format!("unknown metric {s:?} (expected exact_match or terminal_hit)")),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::ExactMatch => "exact_match",
            Metric::TerminalHit => "terminal_hit",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    /// Expert paths sampled, and rollouts generated, per iteration.
    pub rollouts: usize,
    pub comparator_learning_rate: f64,
    pub policy_learning_rate: f64,
    pub baseline_decay: f64,
    pub max_length: usize,
    pub seed: u64,
    pub policy_hidden: usize,
    pub comparator_hidden: usize,
    /// Stop once `d_js` stays below this for `early_stop_patience` iterations.
    pub early_stop_threshold: f64,
    pub early_stop_patience: usize,
    pub metric: Metric,
    /// Both learning rates scale by `1/(1 + t/τ)` at iteration `t`;
    /// zero keeps them constant.
    pub decay_iterations: f64,
    /// Record elapsed seconds in the log. Off keeps logs byte-reproducible.
    pub wall_clock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            rollouts: 256,
            comparator_learning_rate: crate::comparator::DEFAULT_LEARNING_RATE,
            policy_learning_rate: 3e-4,
            baseline_decay: 0.9,
            max_length: 3,
            seed: 0,
            policy_hidden: crate::policy::DEFAULT_HIDDEN,
            comparator_hidden: crate::comparator::DEFAULT_HIDDEN,
            early_stop_threshold: 0.02,
            early_stop_patience: 20,
            metric: Metric::ExactMatch,
            decay_iterations: 0.0,
            wall_clock: false,
        }
    }
}

impl TrainConfig {
    /// Faster rates with decay, tuned on the toy forests.
    pub fn tuned() -> Self {
        Self {
            comparator_learning_rate: 1e-2,
            policy_learning_rate: 3e-3,
            decay_iterations: 25.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rollouts == 0 || self.max_length == 0 || self.policy_hidden == 0 || self.comparator_hidden == 0 {
            return invalid("rollouts, max_length and hidden widths must be at least 1");
        }
        if !(self.comparator_learning_rate > 0.0 && self.policy_learning_rate > 0.0) {
            return invalid("learning rates must be positive");
        }
        if !(self.decay_iterations >= 0.0) {
            return invalid("decay_iterations must be non-negative");
        }
        if !(0.0..1.0).contains(&self.baseline_decay) {
            return invalid("baseline decay must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub iter: usize,
    /// `−V`; `log 4` at equilibrium. Exact expectations when the policy's
    /// path distribution is enumerable, batch means otherwise.
    pub comp_loss: f64,
    /// `−E log D` over generated paths; `log 2` at equilibrium.
    pub interp_loss: f64,
    pub gamma: f64,
    pub d_js: f64,
    pub accuracy: f64,
    pub seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
}

impl TrainLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&TrainRecord> {
        self.records.last()
    }

    pub fn comp_losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.comp_loss).collect()
    }

    pub fn interp_losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.interp_loss).collect()
    }

    pub fn d_js(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.d_js).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.records {
            out.serialize(r)?;
        }
        if self.records.is_empty() {
            out.write_record(["iter", "comp_loss", "interp_loss", "gamma", "d_js", "accuracy", "seconds"])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let records = rdr.deserialize().collect::<std::result::Result<Vec<TrainRecord>, _>>()?;
        Ok(Self { records })
    }
}

/// Trained networks plus the log. `converged_at` is the first iteration of
/// the qualifying early-stop streak.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: PolicyNetwork,
    pub comparator: ComparatorNetwork,
    pub log: TrainLog,
    pub converged_at: Option<usize>,
}

/// Expert statistics the trainer and the evaluators share.
#[derive(Debug, Clone)]
pub struct ExpertIndex {
    pub distribution: PathDistribution,
    /// Empirical start frequencies.
    pub starts: Vec<(EntityId, f64)>,
    keys: HashSet<Vec<u32>>,
    ends: BTreeMap<EntityId, BTreeSet<EntityId>>,
}

impl ExpertIndex {
    pub fn new(paths: &[SemanticPath]) -> Result<Self> {
        if paths.is_empty() {
            return Err(Error::Precondition("no expert paths".into()));
        }
        let mut counts: BTreeMap<EntityId, usize> = BTreeMap::new();
        let mut ends: BTreeMap<EntityId, BTreeSet<EntityId>> = BTreeMap::new();
        for p in paths {
            *counts.entry(p.start).or_default() += 1;
            ends.entry(p.start).or_default().insert(p.end());
        }
        let total = paths.len() as f64;
        Ok(Self {
            distribution: PathDistribution::from_paths(paths)?,
            starts: counts.into_iter().map(|(e, c)| (e, c as f64 / total)).collect(),
            keys: paths.iter().map(|p| p.key()).collect(),
            ends,
        })
    }

    pub fn hit(&self, path: &SemanticPath, metric: Metric) -> bool {
        match metric {
            Metric::ExactMatch => self.keys.contains(&path.key()),
            Metric::TerminalHit => self.ends.get(&path.start).is_some_and(|s| s.contains(&path.end())),
        }
    }
}

fn check_experts(kg: &KnowledgeGraph, experts: &ExpertPathSet, max_length: usize) -> Result<()> {
    if experts.is_empty() {
        return Err(Error::Precondition("expert path set is empty".into()));
    }
    for (i, p) in experts.paths.iter().enumerate() {
        if p.len() > max_length {
            return Err(Error::Precondition(format!("expert path {i} is longer than L = {max_length}")));
        }
        kg.validate_path(p)
            .map_err(|e| Error::Precondition(format!("expert path {i} is not valid in the graph: {e}")))?;
    }
    Ok(())
}

/// Exact distribution over the paths the policy rolls out, mixing starts
/// with the given weights. `None` when more than `cap` paths exist.
pub fn exact_path_distribution(
    net: &PolicyNetwork,
    starts: &[(EntityId, f64)],
    kg: &KnowledgeGraph,
    table: &EmbeddingTable,
    max_length: usize,
    cap: usize,
) -> Result<Option<PathDistribution>> {
    let mut leaves: Vec<(SemanticPath, f64)> = Vec::new();
    let mut stack: Vec<(State, f64)> = starts
        .iter()
        .map(|&(e, w)| (State::initial(&ExplicitSemantics::entity(e)), w))
        .collect();
    while let Some((state, w)) = stack.pop() {
        let probs = if state.t < max_length {
            let mask = valid_actions(&state, kg);
            policy_forward(net, &featurize_state(&state, table, max_length), &mask)?
        } else {
            None
        };
        let Some(probs) = probs else {
            leaves.push((state.path, w));
            if leaves.len() > cap {
                return Ok(None);
            }
            continue;
        };
        for (ri, &p) in probs.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let r = crate::kg::RelationId(ri as u32);
            let tails: Vec<EntityId> = kg.tails(state.current(), r).filter(|&e| !state.path.contains_entity(e)).collect();
            let share = w * p / tails.len() as f64;
            for e in tails {
                let mut next = state.clone();
                next.path.push(r, e);
                next.t += 1;
                stack.push((next, share));
            }
        }
        if stack.len() > cap.saturating_mul(8) {
            return Ok(None);
        }
    }
    Ok(Some(PathDistribution::from_weights(leaves)?))
}

/// Normalized frequencies of `samples` rollouts, cycling through `starts`.
pub fn empirical_path_distribution(
    net: &PolicyNetwork,
    starts: &[ExplicitSemantics],
    samples: usize,
    kg: &KnowledgeGraph,
    table: &EmbeddingTable,
    max_length: usize,
    seed: u64,
) -> Result<PathDistribution> {
    if samples == 0 || starts.is_empty() {
        return invalid("need at least one start and one sample");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut paths = Vec::with_capacity(samples);
    for i in 0..samples {
        paths.push(rollout(net, kg, table, &starts[i % starts.len()], max_length, &mut rng)?.path);
    }
    PathDistribution::from_paths(&paths)
}

/// Fraction of `samples` rollouts, started from uniformly drawn expert
/// paths, that hit the expert set under `metric`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_accuracy(
    net: &PolicyNetwork,
    experts: &ExpertPathSet,
    metric: Metric,
    samples: usize,
    kg: &KnowledgeGraph,
    table: &EmbeddingTable,
    max_length: usize,
    seed: u64,
) -> Result<f64> {
    let index = ExpertIndex::new(&experts.paths)?;
    if samples == 0 {
        return invalid("need at least one sample");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..samples {
        let start = experts.paths[rng.random_range(0..experts.len())].start;
        let r = rollout(net, kg, table, &ExplicitSemantics::entity(start), max_length, &mut rng)?;
        hits += index.hit(&r.path, metric) as usize;
    }
    Ok(hits as f64 / samples as f64)
}

/// Probability mass the exact policy distribution puts on expert hits.
pub fn exact_accuracy(generated: &PathDistribution, index: &ExpertIndex, metric: Metric) -> f64 {
    generated.iter().filter(|(p, _)| index.hit(p, metric)).map(|(_, w)| w).sum()
}

/// Runs the adversarial loop from freshly seeded networks.
pub fn train(kg: &KnowledgeGraph, experts: &ExpertPathSet, table: &EmbeddingTable, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_against(kg, experts, experts, table, cfg)
}

/// Like [`train`], but the logged distance, accuracy and early stop are
/// measured against `reference`, typically a larger sample of the same
/// expert mechanism.
pub fn train_against(
    kg: &KnowledgeGraph,
    experts: &ExpertPathSet,
    reference: &ExpertPathSet,
    table: &EmbeddingTable,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let policy = PolicyNetwork::new(table.dim(), kg.relation_count(), cfg.policy_hidden, &mut rng);
    let comparator = ComparatorNetwork::new(path_feature_dim(table, cfg.max_length), cfg.comparator_hidden, &mut rng);
    train_from(kg, experts, reference, table, cfg, policy, comparator)
}

/// Runs the adversarial loop from the given networks.
pub fn train_from(
    kg: &KnowledgeGraph,
    experts: &ExpertPathSet,
    reference: &ExpertPathSet,
    table: &EmbeddingTable,
    cfg: &TrainConfig,
    mut policy: PolicyNetwork,
    mut comparator: ComparatorNetwork,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_experts(kg, experts, cfg.max_length)?;
    check_experts(kg, reference, cfg.max_length)?;
    if table.entity_count() != kg.entity_count() || table.relation_count() != kg.relation_count() {
        return Err(Error::Precondition("embedding table does not match the graph".into()));
    }
    if policy.input_dim() != 2 * table.dim() + 1 || policy.relation_count() != kg.relation_count() {
        return invalid("policy shape does not match the table and graph");
    }
    if comparator.input_dim() != path_feature_dim(table, cfg.max_length) {
        return invalid("comparator input does not match the path features");
    }
    let index = ExpertIndex::new(&reference.paths)?;
    let expert_features = featurize_all(&experts.paths, table, cfg.max_length)?;
    // separate stream so logging never perturbs training randomness
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x005e_ed0f_9a41);
    let mut policy_adam = Adam::new(cfg.policy_learning_rate, policy.mlp().param_count());
    let mut comp_adam = Adam::new(cfg.comparator_learning_rate, comparator.mlp().param_count());
    let mut baseline: Option<f64> = None;
    let mut log = TrainLog::default();
    let mut streak = 0usize;
    let mut converged_at = None;
    let clock = Instant::now();

    for iter in 1..=cfg.iterations {
        if cfg.decay_iterations > 0.0 {
            let f = (1.0 + (iter - 1) as f64 / cfg.decay_iterations).recip();
            policy_adam.learning_rate = cfg.policy_learning_rate * f;
            comp_adam.learning_rate = cfg.comparator_learning_rate * f;
        }
        let picks: Vec<usize> = (0..cfg.rollouts).map(|_| rng.random_range(0..experts.len())).collect();
        let expert_batch: Vec<Vec<f64>> = picks.iter().map(|&i| expert_features[i].clone()).collect();
        let rollouts: Vec<Rollout> = picks
            .iter()
            .map(|&i| rollout(&policy, kg, table, &ExplicitSemantics::entity(experts.paths[i].start), cfg.max_length, &mut rng))
            .collect::<Result<_>>()?;
        let generated: Vec<SemanticPath> = rollouts.iter().map(|r| r.path.clone()).collect();
        let gen_batch = featurize_all(&generated, table, cfg.max_length)?;

        let batch_comp_loss = -objective(&comparator, &expert_batch, &gen_batch)?;
        let grad = comparator_grad(&comparator, &expert_batch, &gen_batch)?;
        comp_adam.step(comparator.mlp_mut(), &grad, true);
        if !batch_comp_loss.is_finite() || !comparator.mlp().is_finite() {
            return Err(Error::Divergence { stage: "iteration", index: iter });
        }

        // rewards under the freshly updated comparator
        let rewards: Vec<f64> = gen_batch.iter().map(|f| log_sigmoid(comparator.logit(f))).collect();
        let mean_reward = rewards.iter().sum::<f64>() / rewards.len() as f64;
        if !mean_reward.is_finite() {
            return Err(Error::Divergence { stage: "iteration", index: iter });
        }
        let b = *baseline.get_or_insert(mean_reward);
        let mut pgrad = vec![0.0; policy.mlp().param_count()];
        let scale = 1.0 / cfg.rollouts as f64;
        for (r, &reward) in rollouts.iter().zip(&rewards) {
            if !r.steps.is_empty() {
                accumulate_policy_grad(&policy, &r.steps, (reward - b) * scale, &mut pgrad)?;
            }
        }
        policy_adam.step(policy.mlp_mut(), &pgrad, true);
        if !policy.mlp().is_finite() {
            return Err(Error::Divergence { stage: "iteration", index: iter });
        }
        baseline = Some(cfg.baseline_decay * b + (1.0 - cfg.baseline_decay) * mean_reward);

        let (gamma, d_js, accuracy, comp_loss, interp_loss) =
            match exact_path_distribution(&policy, &index.starts, kg, table, cfg.max_length, ENUMERATION_CAP)? {
                Some(dist) => {
                    let (g, d) = semantic_distance(&index.distribution, &dist)?;
                    let (ve, vg, vr) = exact_losses(&comparator, &index.distribution, &dist, table, cfg.max_length)?;
                    (g, d, exact_accuracy(&dist, &index, cfg.metric), -(ve + vg), -vr)
                }
                None => {
                    let dist = PathDistribution::from_paths(&generated)?;
                    let (g, d) = semantic_distance(&index.distribution, &dist)?;
                    let hits = generated.iter().filter(|p| index.hit(p, cfg.metric)).count();
                    (g, d, hits as f64 / generated.len() as f64, batch_comp_loss, -mean_reward)
                }
            };
        if !comp_loss.is_finite() || !interp_loss.is_finite() {
            return Err(Error::Divergence { stage: "iteration", index: iter });
        }
        log.records.push(TrainRecord {
            iter,
            comp_loss,
            interp_loss,
            gamma,
            d_js,
            accuracy,
            seconds: cfg.wall_clock.then(|| clock.elapsed().as_secs_f64()),
        });
        if d_js < cfg.early_stop_threshold {
            streak += 1;
            if streak >= cfg.early_stop_patience {
                converged_at = Some(iter + 1 - streak);
                break;
            }
        } else {
            streak = 0;
        }
    }
    Ok(TrainOutcome {
        policy,
        comparator,
        log,
        converged_at,
    })
}

/// Expectations of `log D` under the expert distribution, of `log(1 − D)`
/// and of `log D` under the generated one.
fn exact_losses(
    comparator: &ComparatorNetwork,
    expert: &PathDistribution,
    generated: &PathDistribution,
    table: &EmbeddingTable,
    max_length: usize,
) -> Result<(f64, f64, f64)> {
    let mut ve = 0.0;
    for (p, w) in expert.iter() {
        ve += w * log_sigmoid(comparator.logit(&featurize_path(p, table, max_length)?));
    }
    let (mut vg, mut vr) = (0.0, 0.0);
    for (p, w) in generated.iter() {
        let z = comparator.logit(&featurize_path(p, table, max_length)?);
        vg += w * log_sigmoid(-z);
        vr += w * log_sigmoid(z);
    }
    Ok((ve, vg, vr))
}

fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

/// First iteration (1-based) after which the trailing `window`-mean of
/// `trace` stays within `tolerance` (relative) of the trace's final level,
/// the mean of its last fifth (at least `window` values).
pub fn settling_iteration(trace: &[f64], window: usize, tolerance: f64) -> Option<usize> {
    let window = window.max(1);
    if trace.len() < window {
        return None;
    }
    let target = final_level(trace, window);
    let smoothed = smoothed(trace, window);
    let within = |v: f64| (v - target).abs() <= tolerance * target.abs();
    let mut first = None;
    for (i, &v) in smoothed.iter().enumerate() {
        if within(v) {
            first.get_or_insert(i + 1);
        } else {
            first = None;
        }
    }
    first
}

/// First iteration (1-based) whose smoothed value lies within `tolerance`
/// (relative) of the final level.
pub fn first_within(trace: &[f64], window: usize, tolerance: f64) -> Option<usize> {
    if trace.is_empty() {
        return None;
    }
    let target = final_level(trace, window);
    smoothed(trace, window)
        .iter()
        .position(|&v| (v - target).abs() <= tolerance * target.abs())
        .map(|i| i + 1)
}

/// Trailing `window`-mean of a trace.
pub fn smoothed(trace: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    (0..trace.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            trace[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}

/// Mean of the last fifth of a trace (at least `window` values).
pub fn final_level(trace: &[f64], window: usize) -> f64 {
    let k = window.max(1).max(trace.len() / 5).min(trace.len());
    trace[trace.len() - k..].iter().sum::<f64>() / k as f64
}

/// Fraction of iterations from `from` (1-based) on whose smoothed value lies
/// within `tolerance` (relative) of the final level.
pub fn fraction_within(trace: &[f64], from: usize, window: usize, tolerance: f64) -> f64 {
    if trace.len() < from.max(1) {
        return 0.0;
    }
    let target = final_level(trace, window);
    let s = smoothed(trace, window);
    let tail = &s[from.max(1) - 1..];
    tail.iter().filter(|&&v| (v - target).abs() <= tolerance * target.abs()).count() as f64 / tail.len() as f64
}

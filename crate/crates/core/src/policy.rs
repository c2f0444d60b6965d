//! The destination's reasoning MDP and its policy network.
//!
//! A state is the path reasoned so far plus its length. Actions are
//! relations; after a relation is sampled, the next entity is drawn
//! uniformly among its tails that do not revisit the path. The policy is an
//! MLP over `[current; start; t/L]` with a masked softmax head.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoder::EmbeddingTable;
use crate::error::{invalid, Result};
use crate::kg::{EntityId, ExplicitSemantics, KnowledgeGraph, RelationId, SemanticPath};
use crate::nn::Mlp;

pub const DEFAULT_HIDDEN: usize = 64;
pub const DEFAULT_LAYERS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct State {
    pub path: SemanticPath,
    pub t: usize,
}

impl State {
    pub fn initial(v: &ExplicitSemantics) -> Self {
        Self {
            path: SemanticPath::new(v.anchor()),
            t: 0,
        }
    }

    pub fn from_path(path: SemanticPath) -> Self {
        let t = path.len();
        Self { path, t }
    }

    pub fn current(&self) -> EntityId {
        self.path.end()
    }

    pub fn start(&self) -> EntityId {
        self.path.start
    }
}

/// `[current; start; t/L]`, built from arbitrary vectors (soft mode feeds the
/// raw received vector as `current`).
pub fn featurize_vectors(current: &[f64], start: &[f64], t: usize, max_length: usize) -> Vec<f64> {
    let mut f = Vec::with_capacity(current.len() + start.len() + 1);
    f.extend_from_slice(current);
    f.extend_from_slice(start);
    f.push(if max_length == 0 { 0.0 } else { t as f64 / max_length as f64 });
    f
}

pub fn featurize_state(s: &State, table: &EmbeddingTable, max_length: usize) -> Vec<f64> {
    featurize_vectors(table.entity(s.current()), table.entity(s.start()), s.t, max_length)
}

/// Relations with at least one edge from the current entity to an entity not
/// yet on the path.
pub fn valid_actions(s: &State, kg: &KnowledgeGraph) -> Vec<bool> {
    let mut mask = vec![false; kg.relation_count()];
    if let Ok(nb) = kg.neighbors(s.current()) {
        for &(r, e) in nb {
            if !s.path.contains_entity(e) {
                mask[r.index()] = true;
            }
        }
    }
    mask
}

/// Softmax over the unmasked logits; `None` when nothing is unmasked.
pub fn masked_softmax(logits: &[f64], mask: &[bool]) -> Option<Vec<f64>> {
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&z, _)| z)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return None;
    }
    let mut p: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(&z, &m)| if m { (z - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= total);
    Some(p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNetwork {
    net: Mlp,
}

impl PolicyNetwork {
    pub fn new(dim: usize, relation_count: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            net: Mlp::new(2 * dim + 1, hidden, DEFAULT_LAYERS, relation_count, 0.01, rng),
        }
    }

    pub fn seeded(dim: usize, relation_count: usize, hidden: usize, seed: u64) -> Self {
        Self::new(dim, relation_count, hidden, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn zeros(dim: usize, relation_count: usize, hidden: usize) -> Self {
        Self {
            net: Mlp::zeros(2 * dim + 1, hidden, DEFAULT_LAYERS, relation_count),
        }
    }

    pub fn from_mlp(net: Mlp) -> Result<Self> {
        if net.input_dim() % 2 != 1 {
            return invalid("policy input dimension must be 2n+1");
        }
        Ok(Self { net })
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn relation_count(&self) -> usize {
        self.net.output_dim()
    }

    pub fn mlp(&self) -> &Mlp {
        &self.net
    }

    pub fn mlp_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn to_text(&self) -> String {
        self.net.to_text()
    }

    pub fn read_from<R: std::io::BufRead>(r: R) -> Result<Self> {
        Self::from_mlp(Mlp::read_from(r)?)
    }
}

/// Action distribution at a state; `Ok(None)` signals a terminal state.
pub fn policy_forward(net: &PolicyNetwork, features: &[f64], mask: &[bool]) -> Result<Option<Vec<f64>>> {
    if features.len() != net.input_dim() {
        return invalid(format!(
            "feature length {} does not match policy input {}",
            features.len(),
            net.input_dim()
        ));
    }
    if mask.len() != net.relation_count() {
        return invalid(format!(
            "mask length {} does not match relation count {}",
            mask.len(),
            net.relation_count()
        ));
    }
    Ok(masked_softmax(&net.net.forward(features), mask))
}

pub fn sample_index(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Relations in decreasing probability whose cumulative mass first reaches
/// `top_p`. Ties keep the lower id first.
pub fn top_p_relations(probs: &[f64], top_p: f64) -> Vec<RelationId> {
    let mut idx: Vec<usize> = (0..probs.len()).filter(|&i| probs[i] > 0.0).collect();
    idx.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut out = Vec::new();
    let mut acc = 0.0;
    for i in idx {
        out.push(RelationId(i as u32));
        acc += probs[i];
        // tolerate rounding when top_p = 1
        if acc >= top_p - 1e-12 {
            break;
        }
    }
    out
}

/// One decision taken during a rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub features: Vec<f64>,
    pub mask: Vec<bool>,
    pub action: RelationId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub path: SemanticPath,
    pub steps: Vec<Step>,
}

#[derive(Debug, Clone)]
pub struct RolloutConfig {
    pub max_length: usize,
    pub rollouts: usize,
    pub seed: u64,
}

/// Rolls out one path from the anchor entity of `v`.
pub fn rollout(
    net: &PolicyNetwork,
    kg: &KnowledgeGraph,
    table: &EmbeddingTable,
    v: &ExplicitSemantics,
    max_length: usize,
    rng: &mut impl Rng,
) -> Result<Rollout> {
    if !kg.has_entity(v.anchor()) {
        return invalid(format!("start entity {} not in graph", v.anchor()));
    }
    let mut state = State::initial(v);
    let mut steps = Vec::new();
    while state.t < max_length {
        let mask = valid_actions(&state, kg);
        let features = featurize_state(&state, table, max_length);
        let Some(probs) = policy_forward(net, &features, &mask)? else {
            break;
        };
        let action = RelationId(sample_index(&probs, rng) as u32);
        let tails: Vec<EntityId> = kg
            .tails(state.current(), action)
            .filter(|&e| !state.path.contains_entity(e))
            .collect();
        let next = tails[rng.random_range(0..tails.len())];
        state.path.push(action, next);
        state.t += 1;
        steps.push(Step {
            features,
            mask,
            action,
        });
    }
    Ok(Rollout {
        path: state.path,
        steps,
    })
}

/// `Σ_t log π(a_t | s_t)` along a recorded trajectory.
pub fn log_prob(net: &PolicyNetwork, trajectory: &[Step]) -> Result<f64> {
    let mut total = 0.0;
    for s in trajectory {
        let probs = policy_forward(net, &s.features, &s.mask)?
            .ok_or_else(|| crate::Error::InvalidArgument("step recorded at a terminal state".into()))?;
        total += probs[s.action.index()].ln();
    }
    Ok(total)
}

/// `Σ_t ∇θ log π(a_t|s_t) · (reward − baseline)` in flat parameter order.
pub fn policy_grad(net: &PolicyNetwork, trajectory: &[Step], reward: f64, baseline: f64) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; net.net.param_count()];
    accumulate_policy_grad(net, trajectory, reward - baseline, &mut grad)?;
    Ok(grad)
}

pub(crate) fn accumulate_policy_grad(net: &PolicyNetwork, trajectory: &[Step], advantage: f64, grad: &mut [f64]) -> Result<()> {
    if trajectory.is_empty() {
        return invalid("policy gradient needs a non-empty trajectory");
    }
    if !advantage.is_finite() {
        return invalid("non-finite reward");
    }
    if advantage == 0.0 {
        return Ok(());
    }
    for s in trajectory {
        if s.features.len() != net.input_dim() || s.mask.len() != net.relation_count() {
            return invalid("trajectory step does not match the policy shape");
        }
        if !s.mask[s.action.index()] {
            return invalid("trajectory action is masked");
        }
        let trace = net.net.forward_cached(&s.features);
        let probs = masked_softmax(trace.output(), &s.mask).expect("action is unmasked");
        // ∂ log softmax_a / ∂ z_j = 1[j = a] − p_j on unmasked entries
        let mut g: Vec<f64> = probs.iter().map(|p| -p).collect();
        g[s.action.index()] += 1.0;
        net.net.backward(&trace, &g, advantage, grad);
    }
    Ok(())
}

//! The source-side comparator, path distributions and the JS-based semantic
//! distance.
//!
//! The comparator `D(η)` estimates the probability that a path came from the
//! expert. It ascends `mean log D(expert) + mean log(1 − D(generated))`, whose
//! maximizer is `ρe / (ρe + ρg)`.

use std::collections::BTreeMap;
use std::io::BufRead;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoder::EmbeddingTable;
use crate::error::{invalid, Error, Result};
use crate::kg::SemanticPath;
use crate::nn::Mlp;

pub const DEFAULT_HIDDEN: usize = 64;
pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;

/// `[g(e⁰); g(r¹); g(e¹); …]`, zero-padded to `max_length` steps.
pub fn featurize_path(path: &SemanticPath, table: &EmbeddingTable, max_length: usize) -> Result<Vec<f64>> {
    if path.len() > max_length {
        return invalid(format!("path of length {} exceeds L = {max_length}", path.len()));
    }
    let (n, nr) = (table.dim(), table.relation_dim());
    let mut f = Vec::with_capacity(n + max_length * (nr + n));
    f.extend_from_slice(table.try_entity(path.start)?);
    for &(r, e) in &path.steps {
        f.extend_from_slice(table.try_relation(r)?);
        f.extend_from_slice(table.try_entity(e)?);
    }
    f.resize(n + max_length * (nr + n), 0.0);
    Ok(f)
}

pub fn path_feature_dim(table: &EmbeddingTable, max_length: usize) -> usize {
    table.dim() + max_length * (table.relation_dim() + table.dim())
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log σ(z)` without overflow.
fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparatorNetwork {
    net: Mlp,
}

impl ComparatorNetwork {
    pub fn new(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            net: Mlp::new(input, hidden, 2, 1, 0.1, rng),
        }
    }

    pub fn seeded(input: usize, hidden: usize, seed: u64) -> Self {
        Self::new(input, hidden, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            net: Mlp::zeros(input, hidden, 2, 1),
        }
    }

    pub fn from_mlp(net: Mlp) -> Result<Self> {
        if net.output_dim() != 1 {
            return invalid("comparator must have a single output");
        }
        Ok(Self { net })
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn mlp(&self) -> &Mlp {
        &self.net
    }

    pub fn mlp_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn logit(&self, features: &[f64]) -> f64 {
        self.net.forward(features)[0]
    }

    pub fn to_text(&self) -> String {
        self.net.to_text()
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        Self::from_mlp(Mlp::read_from(r)?)
    }
}

fn check_features(net: &ComparatorNetwork, features: &[f64]) -> Result<()> {
    if features.len() != net.input_dim() {
        return invalid(format!(
            "feature length {} does not match comparator input {}",
            features.len(),
            net.input_dim()
        ));
    }
    Ok(())
}

/// Keeps saturated outputs strictly inside (0, 1).
const OUTPUT_FLOOR: f64 = 1e-15;

/// `D(η)`: probability that the featurized path is an expert path.
pub fn comparator_forward(net: &ComparatorNetwork, features: &[f64]) -> Result<f64> {
    check_features(net, features)?;
    Ok(sigmoid(net.logit(features)).clamp(OUTPUT_FLOOR, 1.0 - OUTPUT_FLOOR))
}

/// Adds `scale · ∂/∂φ log D` (expert) or `scale · ∂/∂φ log(1 − D)`
/// (generated) for one sample.
fn accumulate(net: &ComparatorNetwork, features: &[f64], expert: bool, scale: f64, grad: &mut [f64]) {
    let trace = net.net.forward_cached(features);
    let d = sigmoid(trace.output()[0]);
    let g = if expert { 1.0 - d } else { -d };
    net.net.backward(&trace, &[g], scale, grad);
}

/// Ascent gradient of `mean log D(expert) + mean log(1 − D(generated))`.
pub fn comparator_grad(net: &ComparatorNetwork, expert: &[Vec<f64>], generated: &[Vec<f64>]) -> Result<Vec<f64>> {
    if expert.is_empty() || generated.is_empty() {
        return invalid("comparator gradient needs non-empty expert and generated batches");
    }
    for f in expert.iter().chain(generated) {
        check_features(net, f)?;
    }
    let mut grad = vec![0.0; net.net.param_count()];
    let (we, wg) = (1.0 / expert.len() as f64, 1.0 / generated.len() as f64);
    for f in expert {
        accumulate(net, f, true, we, &mut grad);
    }
    for f in generated {
        accumulate(net, f, false, wg, &mut grad);
    }
    Ok(grad)
}

/// [`comparator_grad`] on paths, featurized with `table`.
pub fn comparator_path_grad(
    net: &ComparatorNetwork,
    expert: &[SemanticPath],
    generated: &[SemanticPath],
    table: &EmbeddingTable,
    max_length: usize,
) -> Result<Vec<f64>> {
    let fe = featurize_all(expert, table, max_length)?;
    let fg = featurize_all(generated, table, max_length)?;
    comparator_grad(net, &fe, &fg)
}

pub fn featurize_all(paths: &[SemanticPath], table: &EmbeddingTable, max_length: usize) -> Result<Vec<Vec<f64>>> {
    paths.iter().map(|p| featurize_path(p, table, max_length)).collect()
}

/// `V = mean log D(expert) + mean log(1 − D(generated))`.
pub fn objective(net: &ComparatorNetwork, expert: &[Vec<f64>], generated: &[Vec<f64>]) -> Result<f64> {
    if expert.is_empty() || generated.is_empty() {
        return invalid("objective needs non-empty batches");
    }
    let mut ve = 0.0;
    for f in expert {
        check_features(net, f)?;
        ve += log_sigmoid(net.logit(f));
    }
    let mut vg = 0.0;
    for f in generated {
        check_features(net, f)?;
        vg += log_sigmoid(-net.logit(f));
    }
    Ok(ve / expert.len() as f64 + vg / generated.len() as f64)
}

/// Exact-expectation gradient of the objective for two distributions.
pub fn comparator_distribution_grad(
    net: &ComparatorNetwork,
    expert: &PathDistribution,
    generated: &PathDistribution,
    table: &EmbeddingTable,
    max_length: usize,
) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; net.net.param_count()];
    for (dist, is_expert) in [(expert, true), (generated, false)] {
        for (path, p) in dist.iter() {
            if p > 0.0 {
                let f = featurize_path(path, table, max_length)?;
                check_features(net, &f)?;
                accumulate(net, &f, is_expert, p, &mut grad);
            }
        }
    }
    Ok(grad)
}

/// `ρe / (ρe + ρg)`, the comparator value that maximizes the objective.
pub fn optimal_comparator_value(rho_expert: f64, rho_generated: f64) -> Result<f64> {
    if rho_expert < 0.0 || rho_generated < 0.0 || !rho_expert.is_finite() || !rho_generated.is_finite() {
        return invalid("densities must be finite and non-negative");
    }
    if rho_expert == 0.0 && rho_generated == 0.0 {
        return Err(Error::UndefinedInput("both densities are zero".into()));
    }
    Ok(rho_expert / (rho_expert + rho_generated))
}

/// A finite distribution over paths keyed by their id sequence.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PathDistribution {
    entries: BTreeMap<Vec<u32>, (SemanticPath, f64)>,
}

impl PathDistribution {
    /// Normalized frequencies of `paths`.
    pub fn from_paths<'a>(paths: impl IntoIterator<Item = &'a SemanticPath>) -> Result<Self> {
        Self::from_weights(paths.into_iter().map(|p| (p.clone(), 1.0)))
    }

    /// Normalizes non-negative weights; repeated paths accumulate.
    pub fn from_weights(weights: impl IntoIterator<Item = (SemanticPath, f64)>) -> Result<Self> {
        let mut entries: BTreeMap<Vec<u32>, (SemanticPath, f64)> = BTreeMap::new();
        let mut total = 0.0;
        for (p, w) in weights {
            if !(w >= 0.0) || !w.is_finite() {
                return invalid(format!("negative or non-finite weight {w} for path {p}"));
            }
            total += w;
            entries.entry(p.key()).or_insert((p, 0.0)).1 += w;
        }
        if !(total > 0.0) {
            return invalid("a path distribution needs positive total weight");
        }
        entries.values_mut().for_each(|(_, w)| *w /= total);
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn probability(&self, path: &SemanticPath) -> f64 {
        self.entries.get(&path.key()).map_or(0.0, |e| e.1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&SemanticPath, f64)> {
        self.entries.values().map(|(p, w)| (p, *w))
    }

    pub fn support(&self) -> impl Iterator<Item = &SemanticPath> {
        self.entries.values().map(|(p, _)| p)
    }

    /// Draws `count` paths with replacement.
    pub fn sample(&self, count: usize, rng: &mut impl Rng) -> Vec<SemanticPath> {
        let items: Vec<(&SemanticPath, f64)> = self.iter().collect();
        (0..count)
            .map(|_| {
                let mut u: f64 = rng.random();
                for &(p, w) in &items {
                    if u < w {
                        return p.clone();
                    }
                    u -= w;
                }
                items.last().expect("non-empty").0.clone()
            })
            .collect()
    }
}

/// `gamma` and `d_js = (gamma + log 4) / 2` for aligned probability vectors.
pub fn js_terms(p: &[f64], q: &[f64]) -> Result<(f64, f64)> {
    if p.len() != q.len() {
        return invalid("probability vectors differ in length");
    }
    if p.iter().chain(q).any(|&x| !(x >= 0.0)) {
        return invalid("negative probability");
    }
    let term = |a: f64, b: f64| if a > 0.0 { a * (a / (a + b)).ln() } else { 0.0 };
    let gamma: f64 = p.iter().zip(q).map(|(&a, &b)| term(a, b) + term(b, a)).sum();
    let d_js = ((gamma + 4f64.ln()) / 2.0).max(0.0);
    Ok((gamma, d_js))
}

/// Semantic distance between two path distributions over their union
/// support: `(gamma, d_js)`.
pub fn semantic_distance(p: &PathDistribution, q: &PathDistribution) -> Result<(f64, f64)> {
    if p.is_empty() && q.is_empty() {
        return invalid("semantic distance needs at least one path");
    }
    let mut keys: Vec<&Vec<u32>> = p.entries.keys().chain(q.entries.keys()).collect();
    keys.sort();
    keys.dedup();
    let pv: Vec<f64> = keys.iter().map(|k| p.entries.get(*k).map_or(0.0, |e| e.1)).collect();
    let qv: Vec<f64> = keys.iter().map(|k| q.entries.get(*k).map_or(0.0, |e| e.1)).collect();
    js_terms(&pv, &qv)
}

/// Plug-in estimate of the objective at the optimal comparator, using the
/// empirical frequencies of the two samples.
pub fn optimal_objective_estimate(expert: &[SemanticPath], generated: &[SemanticPath]) -> Result<f64> {
    let pe = PathDistribution::from_paths(expert)?;
    let pg = PathDistribution::from_paths(generated)?;
    let mut v = 0.0;
    for p in expert {
        v += optimal_comparator_value(pe.probability(p), pg.probability(p))?.ln() / expert.len() as f64;
    }
    for p in generated {
        v += (1.0 - optimal_comparator_value(pe.probability(p), pg.probability(p))?).ln() / generated.len() as f64;
    }
    Ok(v)
}

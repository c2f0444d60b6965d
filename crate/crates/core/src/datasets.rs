//! Seeded synthetic knowledge graphs and the named datasets the harness
//! understands.
//!
//! Real benchmark dumps (FB15k-237, WN18RR, NELL-995) load through
//! [`crate::kg::load_triples_file`]. When no dump is at hand, `synthetic:fb`
//! builds a typed graph with the same broad texture: many relation types,
//! typed domains and ranges, functional and many-to-many relations, and a
//! heavy-tailed entity popularity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kg::{self, GraphBuilder, KnowledgeGraph, RelationId, Triple};

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub entities: usize,
    pub relations: usize,
    pub types: usize,
    /// Target number of triples per entity before deduplication.
    pub degree: f64,
    /// Zipf exponent of entity popularity within a type.
    pub popularity_exponent: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            entities: 2000,
            relations: 120,
            types: 12,
            degree: 9.0,
            popularity_exponent: 0.8,
            seed: 237,
        }
    }
}

#[derive(Clone, Copy)]
enum Cardinality {
    /// Each head has exactly one tail for the relation.
    Functional,
    ManyToMany,
}

struct RelationShape {
    domain: usize,
    range: usize,
    cardinality: Cardinality,
    weight: f64,
}

/// Builds a typed random knowledge graph.
pub fn typed_graph(cfg: &SyntheticConfig) -> KnowledgeGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let types = cfg.types.max(1);
    let mut b = GraphBuilder::new();

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); types];
    let mut ids = Vec::with_capacity(cfg.entities);
    for i in 0..cfg.entities {
        // uneven type sizes: type k gets weight 1/(k+1)
        let ty = sample_weighted(&mut rng, &(0..types).map(|k| 1.0 / (k as f64 + 1.0)).collect::<Vec<_>>());
        members[ty].push(i);
        ids.push(b.intern_entity(&format!("/m/{i:05}")));
    }
    let popularity: Vec<Vec<f64>> = members
        .iter()
        .map(|m| (0..m.len()).map(|r| 1.0 / ((r + 1) as f64).powf(cfg.popularity_exponent)).collect())
        .collect();

    let nonempty: Vec<usize> = (0..types).filter(|&t| !members[t].is_empty()).collect();
    let mut shapes = Vec::with_capacity(cfg.relations);
    let mut rels: Vec<RelationId> = Vec::with_capacity(cfg.relations);
    for j in 0..cfg.relations {
        let domain = nonempty[rng.random_range(0..nonempty.len())];
        let range = nonempty[rng.random_range(0..nonempty.len())];
        let cardinality = if rng.random_bool(0.4) {
            Cardinality::Functional
        } else {
            Cardinality::ManyToMany
        };
        shapes.push(RelationShape {
            domain,
            range,
            cardinality,
            weight: 1.0 / ((j + 1) as f64).powf(0.7),
        });
        rels.push(b.intern_relation(&format!("/rel/r{j:03}")));
    }
    let rel_weights: Vec<f64> = shapes.iter().map(|s| s.weight).collect();

    let target = (cfg.degree * cfg.entities as f64).round() as usize;
    for _ in 0..target {
        if shapes.is_empty() {
            break;
        }
        let j = sample_weighted(&mut rng, &rel_weights);
        let s = &shapes[j];
        let heads = &members[s.domain];
        let tails = &members[s.range];
        let h = heads[sample_weighted(&mut rng, &popularity[s.domain])];
        let t = match s.cardinality {
            Cardinality::Functional => tails[functional_index(h, j, tails.len())],
            Cardinality::ManyToMany => tails[sample_weighted(&mut rng, &popularity[s.range])],
        };
        b.add_triple(Triple::new(ids[h], rels[j], ids[t])).expect("ids exist");
    }
    b.build()
}

fn functional_index(head: usize, relation: usize, n: usize) -> usize {
    let mut x = (head as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (relation as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    x ^= x >> 29;
    (x % n as u64) as usize
}

fn sample_weighted(rng: &mut impl Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

/// Resolves a dataset name: a `synthetic:*` or `toy:*` builtin, or a path to a
/// triple file.
pub fn resolve(name: &str) -> Result<KnowledgeGraph> {
    match name {
        "synthetic:fb" => Ok(typed_graph(&SyntheticConfig::default())),
        "toy:forest" => Ok(kg::toy::benchmark_forest()),
        "toy:hard-forest" => Ok(kg::toy::hard_forest()),
        "toy:chain" => Ok(kg::toy::chain(6)),
        other if other.starts_with("synthetic:") || other.starts_with("toy:") => {
            Err(Error::NotFound(format!("builtin dataset {other:?}")))
        }
        path => kg::load_triples_file(path),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn typed_graph_is_seeded() {
        let cfg = SyntheticConfig {
            entities: 300,
            relations: 20,
            ..Default::default()
        };
        let a = typed_graph(&cfg);
        let b = typed_graph(&cfg);
        assert_eq!(a, b);
        assert_eq!(a.entity_count(), 300);
        assert!(a.triple_count() > 500);
        assert!(a.relation_count() <= 20);
    }

    #[test]
    fn unknown_builtin_is_not_found() {
        assert!(matches!(resolve("toy:nope"), Err(Error::NotFound(_))));
        assert_eq!(resolve("toy:forest").unwrap().entity_count(), 20);
    }
}

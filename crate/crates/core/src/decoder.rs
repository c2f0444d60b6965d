//! Receiver-side recovery of explicit semantics from noisy vectors.
//!
//! Hard recovery snaps every received slot to its nearest constellation
//! point. Soft recovery keeps the raw vectors and attaches a short list of
//! candidate ids. The reasoning-aided decoders narrow the candidate set for
//! the next entity of a path to what the policy considers likely.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::channel::TransmitRecord;
use crate::encoder::EmbeddingTable;
use crate::error::{invalid, Error, Result};
use crate::kg::{EntityId, ExplicitSemantics, KnowledgeGraph, RelationId};
use crate::policy::{featurize_state, featurize_vectors, masked_softmax, policy_forward, top_p_relations, valid_actions, PolicyNetwork, State};

pub const DEFAULT_TOP_P: f64 = 0.95;
pub const SOFT_CANDIDATES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Plain nearest-neighbor recovery, no reasoning.
    None,
    Hard,
    Soft,
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Mode::None),
            "hard" => Ok(Mode::Hard),
            "soft" => Ok(Mode::Soft),
            _ => invalid(format!("unknown mode {s:?} (expected hard, soft or none)")),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::None => "none",
            Mode::Hard => "hard",
            Mode::Soft => "soft",
        })
    }
}

/// What a slot of a transmitted frame carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Entity,
    Relation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryResult {
    /// Nearest ids per slot. In soft mode these are advisory only.
    pub recovered: ExplicitSemantics,
    pub distances: Vec<f64>,
    pub mode: Mode,
    /// Soft mode: the equalized vector of every slot.
    pub raw: Vec<Vec<f64>>,
    /// Soft mode: the nearest entity candidates of every entity slot.
    pub candidates: Vec<Vec<(EntityId, f64)>>,
}

fn check_dim(y: &[f64], dim: usize) -> Result<()> {
    if y.len() != dim {
        return invalid(format!("vector has dimension {} but the table uses {dim}", y.len()));
    }
    Ok(())
}

fn nearest_row<'a>(y: &[f64], rows: impl Iterator<Item = (u32, &'a [f64])>, table: &EmbeddingTable) -> Option<(u32, f64)> {
    let norm = table.norm();
    let mut best: Option<(u32, f64)> = None;
    for (id, row) in rows {
        let d = norm.distance(y, row);
        // strict comparison keeps the lowest id on ties
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((id, d));
        }
    }
    best
}

pub fn nearest_entity(y: &[f64], table: &EmbeddingTable) -> Result<(EntityId, f64)> {
    check_dim(y, table.dim())?;
    nearest_row(y, table.entity_rows().enumerate().map(|(i, r)| (i as u32, r)), table)
        .map(|(i, d)| (EntityId(i), d))
        .ok_or_else(|| Error::InvalidArgument("empty entity table".into()))
}

pub fn nearest_relation(y: &[f64], table: &EmbeddingTable) -> Result<(RelationId, f64)> {
    check_dim(y, table.relation_dim())?;
    nearest_row(y, table.relation_rows().enumerate().map(|(i, r)| (i as u32, r)), table)
        .map(|(i, d)| (RelationId(i), d))
        .ok_or_else(|| Error::InvalidArgument("empty relation table".into()))
}

/// Nearest entity restricted to `candidates`; `None` if the set is empty.
pub fn nearest_among(y: &[f64], table: &EmbeddingTable, candidates: &BTreeSet<EntityId>) -> Result<Option<(EntityId, f64)>> {
    check_dim(y, table.dim())?;
    Ok(nearest_row(y, candidates.iter().map(|&e| (e.0, table.entity(e))), table).map(|(i, d)| (EntityId(i), d)))
}

/// The `k` nearest entities, ascending by distance then id. Truncated when
/// `k` exceeds the table.
pub fn candidate_set(y: &[f64], table: &EmbeddingTable, k: usize) -> Result<Vec<(EntityId, f64)>> {
    if k == 0 {
        return invalid("candidate set size must be at least 1");
    }
    check_dim(y, table.dim())?;
    let norm = table.norm();
    let mut all: Vec<(EntityId, f64)> = table
        .entity_rows()
        .enumerate()
        .map(|(i, r)| (EntityId(i as u32), norm.distance(y, r)))
        .collect();
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    all.truncate(k);
    Ok(all)
}

fn split_slots(record: &TransmitRecord, layout: &[Slot], table: &EmbeddingTable) -> Result<Vec<Vec<f64>>> {
    let y = record.equalized();
    let width = |s: &Slot| match s {
        Slot::Entity => table.dim(),
        Slot::Relation => table.relation_dim(),
    };
    let total: usize = layout.iter().map(width).sum();
    if total != y.len() {
        return invalid(format!("layout covers {total} coordinates but the record carries {}", y.len()));
    }
    if !layout.contains(&Slot::Entity) {
        return invalid("layout has no entity slot");
    }
    let mut out = Vec::with_capacity(layout.len());
    let mut at = 0;
    for s in layout {
        out.push(y[at..at + width(s)].to_vec());
        at += width(s);
    }
    Ok(out)
}

/// Equalizes (with CSI) and snaps every slot to its nearest row.
pub fn hard_recover(record: &TransmitRecord, layout: &[Slot], table: &EmbeddingTable) -> Result<RecoveryResult> {
    let slots = split_slots(record, layout, table)?;
    let mut entities = Vec::new();
    let mut relations = Vec::new();
    let mut distances = Vec::with_capacity(layout.len());
    for (s, y) in layout.iter().zip(&slots) {
        match s {
            Slot::Entity => {
                let (e, d) = nearest_entity(y, table)?;
                entities.push(e);
                distances.push(d);
            }
            Slot::Relation => {
                let (r, d) = nearest_relation(y, table)?;
                relations.push(r);
                distances.push(d);
            }
        }
    }
    Ok(RecoveryResult {
        recovered: ExplicitSemantics::new(entities, relations)?,
        distances,
        mode: Mode::Hard,
        raw: Vec::new(),
        candidates: Vec::new(),
    })
}

/// Keeps the raw equalized vectors and attaches the nearest candidates.
pub fn soft_recover(record: &TransmitRecord, layout: &[Slot], table: &EmbeddingTable) -> Result<RecoveryResult> {
    let slots = split_slots(record, layout, table)?;
    let mut entities = Vec::new();
    let mut relations = Vec::new();
    let mut distances = Vec::with_capacity(layout.len());
    let mut candidates = Vec::new();
    for (s, y) in layout.iter().zip(&slots) {
        match s {
            Slot::Entity => {
                let c = candidate_set(y, table, SOFT_CANDIDATES)?;
                entities.push(c[0].0);
                distances.push(c[0].1);
                candidates.push(c);
            }
            Slot::Relation => {
                let (r, d) = nearest_relation(y, table)?;
                relations.push(r);
                distances.push(d);
            }
        }
    }
    Ok(RecoveryResult {
        recovered: ExplicitSemantics::new(entities, relations)?,
        distances,
        mode: Mode::Soft,
        raw: slots,
        candidates,
    })
}

/// Half the distance from every entity row to its nearest other row. A
/// received vector inside that ball has an unambiguous nearest entity.
pub fn packing_radii(table: &EmbeddingTable) -> Vec<f64> {
    let rows: Vec<&[f64]> = table.entity_rows().collect();
    let norm = table.norm();
    let mut radii = vec![f64::INFINITY; rows.len()];
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            let d = norm.distance(rows[i], rows[j]) / 2.0;
            radii[i] = radii[i].min(d);
            radii[j] = radii[j].min(d);
        }
    }
    radii
}

/// Everything the reasoning-aided decoders consult.
#[derive(Debug, Clone)]
pub struct Reasoner<'a> {
    pub kg: &'a KnowledgeGraph,
    pub table: &'a EmbeddingTable,
    pub policy: &'a PolicyNetwork,
    pub max_length: usize,
    pub top_p: f64,
    radii: Vec<f64>,
}

impl<'a> Reasoner<'a> {
    pub fn new(kg: &'a KnowledgeGraph, table: &'a EmbeddingTable, policy: &'a PolicyNetwork, max_length: usize, top_p: f64) -> Result<Self> {
        if !(top_p > 0.0 && top_p <= 1.0) {
            return invalid(format!("top_p must lie in (0, 1], got {top_p}"));
        }
        if table.entity_count() != kg.entity_count() || table.relation_count() != kg.relation_count() {
            return invalid("embedding table does not match the graph");
        }
        if policy.input_dim() != 2 * table.dim() + 1 || policy.relation_count() != kg.relation_count() {
            return invalid("policy shape does not match the table and graph");
        }
        Ok(Self {
            kg,
            table,
            policy,
            max_length,
            top_p,
            radii: packing_radii(table),
        })
    }

    /// The plain nearest entity when `y` lies inside its packing ball.
    fn unambiguous(&self, y: &[f64]) -> Result<Option<(EntityId, f64)>> {
        let (e, d) = nearest_entity(y, self.table)?;
        Ok((d < self.radii[e.index()]).then_some((e, d)))
    }

    fn finish(&self, y: &[f64], candidates: &BTreeSet<EntityId>) -> Result<(EntityId, f64)> {
        match nearest_among(y, self.table, candidates)? {
            Some(hit) => Ok(hit),
            None => nearest_entity(y, self.table),
        }
    }
}

fn restricted_tails<'a>(
    kg: &KnowledgeGraph,
    from: impl IntoIterator<Item = &'a EntityId>,
    relations: &[RelationId],
    exclude: impl Fn(EntityId) -> bool,
) -> BTreeSet<EntityId> {
    let mut out = BTreeSet::new();
    for &g in from {
        for &r in relations {
            out.extend(kg.tails(g, r).filter(|&e| !exclude(e)));
        }
    }
    out
}

/// Decodes the entity following `state` by nearest neighbour among the tails
/// of the relations that carry the policy's top `top_p` probability mass.
/// Falls back to the full table when that set is empty. Symbols that sit
/// unambiguously close to one entity are decoded without restriction.
pub fn reasoning_constrained_recover(y: &[f64], ctx: &Reasoner, state: &State) -> Result<(EntityId, f64)> {
    if let Some(hit) = ctx.unambiguous(y)? {
        return Ok(hit);
    }
    let mask = valid_actions(state, ctx.kg);
    let features = featurize_state(state, ctx.table, ctx.max_length);
    let candidates = match policy_forward(ctx.policy, &features, &mask)? {
        Some(probs) => {
            let keep = top_p_relations(&probs, ctx.top_p);
            restricted_tails(ctx.kg, [state.current()].iter(), &keep, |e| state.path.contains_entity(e))
        }
        None => BTreeSet::new(),
    };
    ctx.finish(y, &candidates)
}

/// Soft counterpart: the previous position is the raw vector `prev_raw`,
/// grounded in the graph through its `k` nearest candidates.
pub fn soft_constrained_recover(
    y: &[f64],
    ctx: &Reasoner,
    prev_raw: &[f64],
    start_raw: &[f64],
    t: usize,
) -> Result<(EntityId, f64)> {
    if let Some(hit) = ctx.unambiguous(y)? {
        return Ok(hit);
    }
    let grounding: Vec<EntityId> = candidate_set(prev_raw, ctx.table, SOFT_CANDIDATES)?
        .into_iter()
        .map(|(e, _)| e)
        .collect();
    let mut mask = vec![false; ctx.kg.relation_count()];
    for &g in &grounding {
        for &(r, _) in ctx.kg.neighbors(g)? {
            mask[r.index()] = true;
        }
    }
    let features = featurize_vectors(prev_raw, start_raw, t, ctx.max_length);
    let candidates = match policy_forward(ctx.policy, &features, &mask)? {
        Some(probs) => {
            let keep = top_p_relations(&probs, ctx.top_p);
            restricted_tails(ctx.kg, &grounding, &keep, |e| grounding.contains(&e))
        }
        None => BTreeSet::new(),
    };
    ctx.finish(y, &candidates)
}

/// Decodes the entity sequence of one transmitted path, one equalized vector
/// per entity. `ctx` is required unless `mode` is [`Mode::None`].
pub fn decode_path_entities(ys: &[Vec<f64>], table: &EmbeddingTable, mode: Mode, ctx: Option<&Reasoner>) -> Result<Vec<EntityId>> {
    if mode == Mode::None {
        return decode_plain(ys, table);
    }
    let mut out = Vec::with_capacity(ys.len());
    let Some(first) = ys.first() else {
        return Ok(out);
    };
    let ctx = ctx.ok_or_else(|| Error::Precondition(format!("{mode} decoding needs a trained policy")))?;
    let (e0, _) = nearest_entity(first, ctx.table)?;
    out.push(e0);
    match mode {
        Mode::Hard => {
            let mut state = State::initial(&ExplicitSemantics::entity(e0));
            for y in &ys[1..] {
                let (e, _) = reasoning_constrained_recover(y, ctx, &state)?;
                match connecting_relation(ctx, &state, e)? {
                    Some(r) if state.t < ctx.max_length => {
                        state.path.push(r, e);
                        state.t += 1;
                    }
                    // the decoded entity left the graph neighbourhood: restart there
                    _ => state = State::initial(&ExplicitSemantics::entity(e)),
                }
                out.push(e);
            }
        }
        Mode::Soft => {
            for (i, y) in ys.iter().enumerate().skip(1) {
                let (e, _) = soft_constrained_recover(y, ctx, &ys[i - 1], first, i - 1)?;
                out.push(e);
            }
        }
        Mode::None => unreachable!(),
    }
    Ok(out)
}

/// The most probable relation linking the current entity of `state` to `e`.
fn connecting_relation(ctx: &Reasoner, state: &State, e: EntityId) -> Result<Option<RelationId>> {
    if state.path.contains_entity(e) {
        return Ok(None);
    }
    let links: Vec<RelationId> = ctx
        .kg
        .neighbors(state.current())?
        .iter()
        .filter(|&&(_, t)| t == e)
        .map(|&(r, _)| r)
        .collect();
    if links.len() <= 1 {
        return Ok(links.first().copied());
    }
    let mask = valid_actions(state, ctx.kg);
    let logits = ctx.policy.mlp().forward(&featurize_state(state, ctx.table, ctx.max_length));
    let probs = masked_softmax(&logits, &mask).unwrap_or_default();
    Ok(links
        .into_iter()
        .max_by(|a, b| probs.get(a.index()).unwrap_or(&0.0).total_cmp(probs.get(b.index()).unwrap_or(&0.0)).then(b.cmp(a))))
}

/// Plain nearest-neighbour decoding of a sequence.
pub fn decode_plain(ys: &[Vec<f64>], table: &EmbeddingTable) -> Result<Vec<EntityId>> {
    ys.iter().map(|y| nearest_entity(y, table).map(|(e, _)| e)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{Channel, ChannelConfig};
    use crate::encoder::{pack_symbols, Norm, Packing};
    use crate::kg::toy;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_table(entities: usize, relations: usize, dim: usize, seed: u64) -> EmbeddingTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = |n: usize| -> Vec<Vec<f64>> { (0..n).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect() };
        let e = rows(entities);
        let r = rows(relations);
        EmbeddingTable::from_rows(&e, &r, Norm::L2).unwrap()
    }

    fn brute_force(y: &[f64], table: &EmbeddingTable) -> f64 {
        table.entity_rows().map(|r| table.norm().distance(y, r)).fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn exact_hit_and_tie_break() {
        let t = random_table(10, 2, 4, 0);
        let row = t.entity(EntityId(7)).to_vec();
        assert_eq!(nearest_entity(&row, &t).unwrap(), (EntityId(7), 0.0));
        let tie = EmbeddingTable::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]], &[vec![0.0, 0.0]], Norm::L1).unwrap();
        assert_eq!(nearest_entity(&[0.0, 0.0], &tie).unwrap().0, EntityId(0));
        assert!(nearest_entity(&[0.0], &tie).is_err());
        let empty = EmbeddingTable::zeros(0, 1, 2, 2, Norm::L1);
        assert!(nearest_entity(&[0.0, 0.0], &empty).is_err());
    }

    #[test]
    fn small_perturbation_keeps_entity() {
        let t = random_table(50, 2, 8, 1);
        let mut min_pair = f64::INFINITY;
        for i in 0..50 {
            for j in i + 1..50 {
                min_pair = min_pair.min(Norm::L2.distance(t.entity(EntityId(i)), t.entity(EntityId(j))));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for i in 0..50 {
            let dir: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let len = Norm::L2.of(dir.iter().copied());
            let y: Vec<f64> = t
                .entity(EntityId(i))
                .iter()
                .zip(&dir)
                .map(|(a, d)| a + d / len * 0.49 * min_pair)
                .collect();
            assert_eq!(nearest_entity(&y, &t).unwrap().0, EntityId(i));
        }
    }

    proptest! {
        #[test]
        fn nearest_matches_brute_force(seed in 0u64..5000, y in proptest::collection::vec(-1.5f64..1.5, 6)) {
            let t = random_table(40, 3, 6, seed);
            let (_, d) = nearest_entity(&y, &t).unwrap();
            prop_assert_eq!(d, brute_force(&y, &t));
        }

        #[test]
        fn candidates_sorted(seed in 0u64..5000, k in 1usize..30) {
            let t = random_table(20, 3, 5, seed);
            let y = t.entity(EntityId((seed % 20) as u32)).iter().map(|v| v * 0.9).collect::<Vec<_>>();
            let c = candidate_set(&y, &t, k).unwrap();
            prop_assert_eq!(c.len(), k.min(20));
            prop_assert!(c.windows(2).all(|w| w[0].1 <= w[1].1));
            prop_assert_eq!(c[0], nearest_entity(&y, &t).unwrap());
        }
    }

    #[test]
    fn full_candidate_set_is_sorted_table() {
        let t = random_table(12, 1, 3, 3);
        let c = candidate_set(&[0.1, 0.2, 0.3], &t, 12).unwrap();
        let mut ids: Vec<u32> = c.iter().map(|x| x.0 .0).collect();
        ids.sort();
        assert_eq!(ids, (0..12).collect::<Vec<_>>());
        assert!(candidate_set(&[0.1, 0.2, 0.3], &t, 0).is_err());
    }

    fn frame(table: &EmbeddingTable, v: &ExplicitSemantics) -> (Vec<f64>, Vec<Slot>) {
        let mut x = Vec::new();
        let mut layout = Vec::new();
        for &e in &v.entities {
            x.extend_from_slice(table.entity(e));
            layout.push(Slot::Entity);
        }
        for &r in &v.relations {
            x.extend_from_slice(table.relation(r));
            layout.push(Slot::Relation);
        }
        (x, layout)
    }

    #[test]
    fn noiseless_recovery_is_identity() {
        for packing in [Packing::Real, Packing::Complex] {
            for (seed, cfg) in [ChannelConfig::awgn(f64::INFINITY, 1), ChannelConfig::rayleigh(f64::INFINITY, 2)]
                .into_iter()
                .enumerate()
            {
                let t = random_table(30, 6, 4, seed as u64);
                let v = ExplicitSemantics::new(vec![EntityId(3), EntityId(17)], vec![RelationId(5)]).unwrap();
                let (x, layout) = frame(&t, &v);
                let rec = Channel::with_sigma(cfg.with_packing(packing), 0.0)
                    .transmit(&pack_symbols(&x, packing).unwrap())
                    .unwrap();
                let out = hard_recover(&rec, &layout, &t).unwrap();
                assert_eq!(out.recovered, v);
                assert!(out.distances.iter().all(|&d| d < 1e-12));
                let soft = soft_recover(&rec, &layout, &t).unwrap();
                assert_eq!(soft.recovered, v);
                assert_eq!(soft.raw.len(), 3);
                assert_eq!(soft.candidates.len(), 2);
                assert!(hard_recover(&rec, &layout[..2], &t).is_err());
            }
        }
    }

    #[test]
    fn heavy_noise_stays_in_codomain() {
        let t = random_table(2, 1, 4, 5);
        let mut ch = Channel::with_sigma(ChannelConfig::awgn(0.0, 9), 10.0);
        for _ in 0..200 {
            let rec = ch.transmit(&pack_symbols(t.entity(EntityId(1)), Packing::Real).unwrap()).unwrap();
            let id = hard_recover(&rec, &[Slot::Entity], &t).unwrap().recovered.anchor();
            assert!(id.index() < 2);
        }
    }

    #[test]
    fn higher_snr_fewer_errors() {
        let t = random_table(200, 1, 16, 6);
        let power = crate::channel::measure_signal_power(&t).unwrap();
        let ser = |snr: f64| {
            let mut ch = Channel::new(ChannelConfig::awgn(snr, 7), power).unwrap();
            let mut errors = 0;
            for i in 0..1000u32 {
                let e = EntityId(i % 200);
                let rec = ch.transmit(&pack_symbols(t.entity(e), Packing::Real).unwrap()).unwrap();
                if hard_recover(&rec, &[Slot::Entity], &t).unwrap().recovered.anchor() != e {
                    errors += 1;
                }
            }
            errors
        };
        assert!(ser(12.0) < ser(0.0));
    }

    fn line_table() -> (KnowledgeGraph, EmbeddingTable) {
        // a -r-> b, c is unreachable from a but sits next to b
        let kg = KnowledgeGraph::from_labeled([("a", "r", "b"), ("c", "r", "a")]);
        let t = EmbeddingTable::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![1.2, 0.0]], &[vec![1.0, 0.0]], Norm::L2).unwrap();
        (kg, t)
    }

    #[test]
    fn constrained_recovery_resists_adversarial_noise() {
        let (kg, t) = line_table();
        let policy = PolicyNetwork::zeros(2, 1, 4);
        let ctx = Reasoner::new(&kg, &t, &policy, 2, DEFAULT_TOP_P).unwrap();
        let state = State::initial(&ExplicitSemantics::entity(EntityId(0)));
        // off-axis so that y is not unambiguously inside c's packing ball
        let y = [1.2, 0.15];
        assert_eq!(nearest_entity(&y, &t).unwrap().0, EntityId(2));
        assert_eq!(reasoning_constrained_recover(&y, &ctx, &state).unwrap().0, EntityId(1));
        // from b nothing is reachable: fall back to the full table
        let stuck = State::initial(&ExplicitSemantics::entity(EntityId(1)));
        assert_eq!(reasoning_constrained_recover(&y, &ctx, &stuck).unwrap(), nearest_entity(&y, &t).unwrap());
        assert!(Reasoner::new(&kg, &t, &policy, 2, 0.0).is_err());
        // a symbol sitting on c is decoded as c whatever the reasoning says
        assert_eq!(reasoning_constrained_recover(&[1.2, 0.0], &ctx, &state).unwrap().0, EntityId(2));
    }

    #[test]
    fn full_top_p_on_complete_graph_is_plain_nearest() {
        let mut b = KnowledgeGraph::builder();
        let names = ["a", "b", "c", "d", "e"];
        for h in names {
            for t in names {
                if h != t {
                    b.add_labeled(h, "r", t);
                }
            }
        }
        let kg = b.build();
        let t = random_table(5, 1, 3, 8);
        let policy = PolicyNetwork::seeded(3, 1, 4, 0);
        let ctx = Reasoner::new(&kg, &t, &policy, 3, 1.0).unwrap();
        let state = State::initial(&ExplicitSemantics::entity(EntityId(0)));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let y: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let plain = nearest_entity(&y, &t).unwrap();
            let got = reasoning_constrained_recover(&y, &ctx, &state).unwrap();
            if plain.0 != EntityId(0) {
                assert_eq!(got, plain);
            }
        }
    }

    #[test]
    fn constrained_never_worse_on_valid_paths() {
        let kg = toy::benchmark_forest();
        let t = random_table(kg.entity_count(), kg.relation_count(), 6, 11);
        let policy = PolicyNetwork::zeros(6, kg.relation_count(), 8);
        let ctx = Reasoner::new(&kg, &t, &policy, 3, 1.0).unwrap();
        let power = crate::channel::measure_signal_power(&t).unwrap();
        let experts = crate::kg::generate_expert_paths(&kg, &crate::kg::ExpertPathOptions::new(3, 300, 4).terminal()).unwrap();
        for snr in [0.0, 4.0, 8.0] {
            let mut ch = Channel::new(ChannelConfig::awgn(snr, 3), power).unwrap();
            let (mut plain_err, mut hard_err) = (0, 0);
            for p in &experts.paths {
                let truth: Vec<EntityId> = p.entities().collect();
                let ys: Vec<Vec<f64>> = truth
                    .iter()
                    .map(|&e| ch.transmit(&pack_symbols(t.entity(e), Packing::Real).unwrap()).unwrap().equalized())
                    .collect();
                let plain = decode_plain(&ys, &t).unwrap();
                let hard = decode_path_entities(&ys, &t, Mode::Hard, Some(&ctx)).unwrap();
                plain_err += plain.iter().zip(&truth).filter(|(a, b)| a != b).count();
                hard_err += hard.iter().zip(&truth).filter(|(a, b)| a != b).count();
            }
            assert!(hard_err <= plain_err, "snr {snr}: {hard_err} > {plain_err}");
        }
    }

    #[test]
    fn decoding_modes_on_clean_vectors() {
        let kg = toy::benchmark_forest();
        let t = random_table(kg.entity_count(), kg.relation_count(), 6, 12);
        let policy = PolicyNetwork::seeded(6, kg.relation_count(), 8, 1);
        let ctx = Reasoner::new(&kg, &t, &policy, 3, DEFAULT_TOP_P).unwrap();
        let experts = crate::kg::generate_expert_paths(&kg, &crate::kg::ExpertPathOptions::new(3, 50, 2)).unwrap();
        for p in &experts.paths {
            let truth: Vec<EntityId> = p.entities().collect();
            let ys: Vec<Vec<f64>> = truth.iter().map(|&e| t.entity(e).to_vec()).collect();
            for mode in [Mode::None, Mode::Hard, Mode::Soft] {
                assert_eq!(decode_path_entities(&ys, &t, mode, Some(&ctx)).unwrap(), truth, "{mode}");
            }
        }
        let ys = vec![t.entity(EntityId(0)).to_vec(); 2];
        assert!(matches!(decode_path_entities(&ys, &t, Mode::Hard, None), Err(Error::Precondition(_))));
    }
}

//! Knowledge-graph storage, sampling, and expert path generation.
//!
//! A [`KnowledgeGraph`] is immutable once built. Entities and relations get
//! dense ids in order of first appearance, and the forward adjacency of every
//! entity is kept sorted by `(relation, tail)`.
//!
//! The text format is one `head<TAB>relation<TAB>tail` triple per line.
//! Lines starting with `#` are comments, except for three directives the
//! serializer emits so that isolated entities and id order survive a round
//! trip:
//!
//! ```text
//! #entities=3 relations=1
//! #entity	a
//! #entity	b
//! #entity	c
//! #relation	likes
//! a	likes	b
//! ```

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntityId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelationId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

impl fmt::Display for RelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Self {
            head,
            relation,
            tail,
        }
    }
}

/// The entities (and optionally relations) recognized directly in a source
/// message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExplicitSemantics {
    pub entities: Vec<EntityId>,
    pub relations: Vec<RelationId>,
}

impl ExplicitSemantics {
    pub fn new(entities: Vec<EntityId>, relations: Vec<RelationId>) -> Result<Self> {
        if entities.is_empty() {
            return invalid("explicit semantics need at least one entity");
        }
        Ok(Self {
            entities,
            relations,
        })
    }

    pub fn entity(e: EntityId) -> Self {
        Self {
            entities: vec![e],
            relations: Vec::new(),
        }
    }

    /// The entity reasoning starts from.
    pub fn anchor(&self) -> EntityId {
        self.entities[0]
    }
}

/// Alternating entity/relation sequence `e0, r0, e1, r1, ...`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SemanticPath {
    pub start: EntityId,
    pub steps: Vec<(RelationId, EntityId)>,
}

impl SemanticPath {
    pub fn new(start: EntityId) -> Self {
        Self {
            start,
            steps: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn push(&mut self, relation: RelationId, entity: EntityId) {
        self.steps.push((relation, entity));
    }

    pub fn end(&self) -> EntityId {
        self.steps.last().map_or(self.start, |&(_, e)| e)
    }

    pub fn entities(&self) -> impl Iterator<Item = EntityId> + '_ {
        std::iter::once(self.start).chain(self.steps.iter().map(|&(_, e)| e))
    }

    pub fn contains_entity(&self, e: EntityId) -> bool {
        self.entities().any(|x| x == e)
    }

    pub fn has_repeated_entity(&self) -> bool {
        let mut seen = HashSet::with_capacity(self.steps.len() + 1);
        !self.entities().all(|e| seen.insert(e))
    }

    /// The hops as `(e_i, r_i, e_{i+1})` triples.
    pub fn triples(&self) -> impl Iterator<Item = Triple> + '_ {
        let mut prev = self.start;
        self.steps.iter().map(move |&(r, e)| {
            let t = Triple::new(prev, r, e);
            prev = e;
            t
        })
    }

    /// Id sequence `[e0, r0, e1, ...]`, used to key paths in distributions.
    pub fn key(&self) -> Vec<u32> {
        let mut key = Vec::with_capacity(1 + 2 * self.steps.len());
        key.push(self.start.0);
        for &(r, e) in &self.steps {
            key.push(r.0);
            key.push(e.0);
        }
        key
    }
}

impl fmt::Display for SemanticPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.start)?;
        for (r, e) in &self.steps {
            write!(f, " -{r}-> {e}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ExpertPathSet {
    pub paths: Vec<SemanticPath>,
    pub max_length: usize,
    /// Number of paths that were asked for.
    pub requested: usize,
    /// Set when the attempt budget ran out before `requested` paths were found.
    pub short: bool,
}

impl ExpertPathSet {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// A new set holding the first `k` paths.
    pub fn truncated(&self, k: usize) -> Self {
        Self {
            paths: self.paths.iter().take(k).cloned().collect(),
            max_length: self.max_length,
            requested: k,
            short: self.paths.len() < k,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct KnowledgeGraph {
    entity_labels: Vec<String>,
    relation_labels: Vec<String>,
    entity_index: HashMap<String, EntityId>,
    relation_index: HashMap<String, RelationId>,
    triples: Vec<Triple>,
    triple_set: HashSet<Triple>,
    adjacency: Vec<Vec<(RelationId, EntityId)>>,
}

/// Incremental construction of a [`KnowledgeGraph`].
#[derive(Debug, Default)]
pub struct GraphBuilder {
    graph: KnowledgeGraph,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declares a new entity. Declaring the same label twice is an error.
    pub fn add_entity(&mut self, label: &str) -> Result<EntityId> {
        if self.graph.entity_index.contains_key(label) {
            return invalid(format!("duplicate entity label {label:?}"));
        }
        Ok(self.intern_entity(label))
    }

    /// Declares a new relation. Declaring the same label twice is an error.
    pub fn add_relation(&mut self, label: &str) -> Result<RelationId> {
        if self.graph.relation_index.contains_key(label) {
            return invalid(format!("duplicate relation label {label:?}"));
        }
        Ok(self.intern_relation(label))
    }

    pub fn intern_entity(&mut self, label: &str) -> EntityId {
        let g = &mut self.graph;
        if let Some(&id) = g.entity_index.get(label) {
            return id;
        }
        let id = EntityId(g.entity_labels.len() as u32);
        g.entity_labels.push(label.to_owned());
        g.entity_index.insert(label.to_owned(), id);
        g.adjacency.push(Vec::new());
        id
    }

    pub fn intern_relation(&mut self, label: &str) -> RelationId {
        let g = &mut self.graph;
        if let Some(&id) = g.relation_index.get(label) {
            return id;
        }
        let id = RelationId(g.relation_labels.len() as u32);
        g.relation_labels.push(label.to_owned());
        g.relation_index.insert(label.to_owned(), id);
        id
    }

    /// Adds a triple over existing ids. Returns false for a duplicate.
    pub fn add_triple(&mut self, t: Triple) -> Result<bool> {
        let g = &mut self.graph;
        if t.head.index() >= g.entity_labels.len() || t.tail.index() >= g.entity_labels.len() {
            return Err(Error::NotFound(format!("entity in triple {t:?}")));
        }
        if t.relation.index() >= g.relation_labels.len() {
            return Err(Error::NotFound(format!("relation in triple {t:?}")));
        }
        if !g.triple_set.insert(t) {
            return Ok(false);
        }
        g.triples.push(t);
        g.adjacency[t.head.index()].push((t.relation, t.tail));
        Ok(true)
    }

    pub fn add_labeled(&mut self, head: &str, relation: &str, tail: &str) -> bool {
        let h = self.intern_entity(head);
        let r = self.intern_relation(relation);
        let t = self.intern_entity(tail);
        self.add_triple(Triple::new(h, r, t))
            .expect("interned ids are always present")
    }

    pub fn build(mut self) -> KnowledgeGraph {
        for list in &mut self.graph.adjacency {
            list.sort_unstable();
        }
        self.graph
    }
}

impl KnowledgeGraph {
    pub fn builder() -> GraphBuilder {
        GraphBuilder::new()
    }

    /// Builds a graph from labeled triples, interning labels on first use.
    pub fn from_labeled<'a, I>(triples: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, &'a str, &'a str)>,
    {
        let mut b = GraphBuilder::new();
        for (h, r, t) in triples {
            b.add_labeled(h, r, t);
        }
        b.build()
    }

    pub fn entity_count(&self) -> usize {
        self.entity_labels.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relation_labels.len()
    }

    pub fn triple_count(&self) -> usize {
        self.triples.len()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn contains_triple(&self, t: &Triple) -> bool {
        self.triple_set.contains(t)
    }

    pub fn entity_label(&self, e: EntityId) -> Option<&str> {
        self.entity_labels.get(e.index()).map(String::as_str)
    }

    pub fn relation_label(&self, r: RelationId) -> Option<&str> {
        self.relation_labels.get(r.index()).map(String::as_str)
    }

    pub fn entity_id(&self, label: &str) -> Option<EntityId> {
        self.entity_index.get(label).copied()
    }

    pub fn relation_id(&self, label: &str) -> Option<RelationId> {
        self.relation_index.get(label).copied()
    }

    pub fn entities(&self) -> impl Iterator<Item = EntityId> {
        (0..self.entity_count() as u32).map(EntityId)
    }

    /// Forward adjacency of `e`, sorted by `(relation, tail)`.
    pub fn neighbors(&self, e: EntityId) -> Result<&[(RelationId, EntityId)]> {
        self.adjacency
            .get(e.index())
            .map(Vec::as_slice)
            .ok_or_else(|| Error::NotFound(format!("entity {e}")))
    }

    /// Outgoing edges of `e` labeled `r`.
    pub fn tails(&self, e: EntityId, r: RelationId) -> impl Iterator<Item = EntityId> + '_ {
        let list = self.adjacency.get(e.index()).map_or(&[][..], Vec::as_slice);
        let lo = list.partition_point(|&(rel, _)| rel < r);
        list[lo..]
            .iter()
            .take_while(move |&&(rel, _)| rel == r)
            .map(|&(_, t)| t)
    }

    pub fn has_entity(&self, e: EntityId) -> bool {
        e.index() < self.entity_count()
    }

    /// Checks that every step of `path` is an edge of this graph.
    pub fn validate_path(&self, path: &SemanticPath) -> Result<()> {
        if !self.has_entity(path.start) {
            return Err(Error::NotFound(format!("entity {}", path.start)));
        }
        let mut cur = path.start;
        for (i, &(r, e)) in path.steps.iter().enumerate() {
            if !self.tails(cur, r).any(|t| t == e) {
                return invalid(format!("step {i} ({cur} -{r}-> {e}) is not an edge"));
            }
            cur = e;
        }
        Ok(())
    }

    /// Triples per entity, the density measure used to rank sampled subgraphs.
    pub fn density(&self) -> f64 {
        if self.entity_count() == 0 {
            0.0
        } else {
            self.triple_count() as f64 / self.entity_count() as f64
        }
    }

    /// Number of weakly connected components.
    pub fn component_count(&self) -> usize {
        let n = self.entity_count();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for t in &self.triples {
            let a = find(&mut parent, t.head.index());
            let b = find(&mut parent, t.tail.index());
            if a != b {
                parent[a] = b;
            }
        }
        (0..n).filter(|&x| find(&mut parent, x) == x).count()
    }

    fn reverse_adjacency(&self) -> Vec<Vec<(RelationId, EntityId)>> {
        let mut rev = vec![Vec::new(); self.entity_count()];
        for t in &self.triples {
            rev[t.tail.index()].push((t.relation, t.head));
        }
        for list in &mut rev {
            list.sort_unstable();
        }
        rev
    }

    fn undirected_neighbors(&self) -> Vec<Vec<EntityId>> {
        let mut und = vec![Vec::new(); self.entity_count()];
        for t in &self.triples {
            if t.head != t.tail {
                und[t.head.index()].push(t.tail);
                und[t.tail.index()].push(t.head);
            }
        }
        for list in &mut und {
            list.sort_unstable();
            list.dedup();
        }
        und
    }

    /// Writes the graph in the triple-file format, with the count header and
    /// label declarations.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "#entities={} relations={}",
            self.entity_count(),
            self.relation_count()
        )?;
        for label in &self.entity_labels {
            writeln!(w, "#entity\t{label}")?;
        }
        for label in &self.relation_labels {
            writeln!(w, "#relation\t{label}")?;
        }
        for t in &self.triples {
            writeln!(
                w,
                "{}\t{}\t{}",
                self.entity_labels[t.head.index()],
                self.relation_labels[t.relation.index()],
                self.entity_labels[t.tail.index()]
            )?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("labels are UTF-8")
    }
}

impl PartialEq for KnowledgeGraph {
    fn eq(&self, other: &Self) -> bool {
        self.entity_labels == other.entity_labels
            && self.relation_labels == other.relation_labels
            && self.triples == other.triples
    }
}

/// Parses the triple-file format.
///
/// Duplicate triples are dropped. Ids follow first appearance, with
/// `#entity`/`#relation` declarations counting as appearances.
pub fn load_triples<R: BufRead>(reader: R) -> Result<KnowledgeGraph> {
    let mut b = GraphBuilder::new();
    let mut declared: Option<(usize, usize, usize)> = None;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(label) = rest.strip_prefix("entity\t") {
                b.add_entity(label).map_err(|e| parse_err(line_no, e))?;
            } else if let Some(label) = rest.strip_prefix("relation\t") {
                b.add_relation(label).map_err(|e| parse_err(line_no, e))?;
            } else if let Some(counts) = rest.strip_prefix("entities=") {
                declared = Some(parse_header(counts, line_no)?);
            }
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected head<TAB>relation<TAB>tail, got {line:?}"),
            });
        }
        b.add_labeled(fields[0], fields[1], fields[2]);
    }
    let g = b.build();
    if let Some((n, m, line)) = declared {
        if n != g.entity_count() || m != g.relation_count() {
            return Err(Error::Parse {
                line,
                message: format!(
                    "header declares {n} entities / {m} relations, found {} / {}",
                    g.entity_count(),
                    g.relation_count()
                ),
            });
        }
    }
    Ok(g)
}

pub fn load_triples_str(text: &str) -> Result<KnowledgeGraph> {
    load_triples(text.as_bytes())
}

pub fn load_triples_file(path: impl AsRef<std::path::Path>) -> Result<KnowledgeGraph> {
    let f = std::fs::File::open(path)?;
    load_triples(std::io::BufReader::new(f))
}

fn parse_err(line: usize, e: Error) -> Error {
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

fn parse_header(counts: &str, line: usize) -> Result<(usize, usize, usize)> {
    let bad = || Error::Parse {
        line,
        message: format!("malformed header {counts:?}"),
    };
    let (n, rest) = counts.split_once(' ').ok_or_else(bad)?;
    let m = rest.trim().strip_prefix("relations=").ok_or_else(bad)?;
    Ok((
        n.trim().parse().map_err(|_| bad())?,
        m.parse().map_err(|_| bad())?,
        line,
    ))
}

/// Samples a sub-knowledge graph by seeded random walks.
///
/// Walks move over edges in either direction, restarting from an already
/// collected entity with probability 0.15, and jump to a fresh random entity
/// only when the walk stops making progress. The result is the induced
/// subgraph on the collected entities, with entity and relation ids remapped
/// in ascending order of the original ids.
pub fn sample_skg(kg: &KnowledgeGraph, entity_budget: usize, seed: u64) -> Result<KnowledgeGraph> {
    if entity_budget == 0 {
        return invalid("entity budget must be at least 1");
    }
    if entity_budget > kg.entity_count() {
        return invalid(format!(
            "entity budget {entity_budget} exceeds graph size {}",
            kg.entity_count()
        ));
    }
    const RESTART: f64 = 0.15;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let und = kg.undirected_neighbors();
    let n = kg.entity_count();
    let mut selected = vec![false; n];
    let mut order: Vec<usize> = Vec::with_capacity(entity_budget);

    let mut cur = rng.random_range(0..n);
    selected[cur] = true;
    order.push(cur);
    let stall_limit = 50 * entity_budget.max(10);
    let mut stalled = 0usize;
    while order.len() < entity_budget {
        let nbrs = &und[cur];
        if nbrs.is_empty() || rng.random_bool(RESTART) {
            cur = order[rng.random_range(0..order.len())];
        } else {
            cur = nbrs[rng.random_range(0..nbrs.len())].index();
        }
        if !selected[cur] {
            selected[cur] = true;
            order.push(cur);
            stalled = 0;
            continue;
        }
        stalled += 1;
        if stalled > stall_limit {
            let fresh: Vec<usize> = (0..n).filter(|&i| !selected[i]).collect();
            cur = fresh[rng.random_range(0..fresh.len())];
            selected[cur] = true;
            order.push(cur);
            stalled = 0;
        }
    }
    Ok(induced_subgraph(kg, &selected))
}

fn induced_subgraph(kg: &KnowledgeGraph, selected: &[bool]) -> KnowledgeGraph {
    let kept: Vec<&Triple> = kg
        .triples
        .iter()
        .filter(|t| selected[t.head.index()] && selected[t.tail.index()])
        .collect();
    let mut used_rel = vec![false; kg.relation_count()];
    for t in &kept {
        used_rel[t.relation.index()] = true;
    }
    let mut b = GraphBuilder::new();
    let mut emap = vec![None; kg.entity_count()];
    for (i, &sel) in selected.iter().enumerate() {
        if sel {
            emap[i] = Some(b.intern_entity(&kg.entity_labels[i]));
        }
    }
    let mut rmap = vec![None; kg.relation_count()];
    for (i, &used) in used_rel.iter().enumerate() {
        if used {
            rmap[i] = Some(b.intern_relation(&kg.relation_labels[i]));
        }
    }
    for t in kept {
        let mapped = Triple::new(
            emap[t.head.index()].unwrap(),
            rmap[t.relation.index()].unwrap(),
            emap[t.tail.index()].unwrap(),
        );
        b.add_triple(mapped).expect("mapped ids exist");
    }
    b.build()
}

#[derive(Debug, Clone)]
pub struct ExpertPathOptions {
    pub max_length: usize,
    pub count: usize,
    pub seed: u64,
    /// Keep only paths a rollout could also produce: length equal to
    /// `max_length`, or ending where no unvisited successor exists.
    pub require_terminal: bool,
    /// Attempts per requested path before giving up.
    pub attempts_per_path: usize,
}

impl ExpertPathOptions {
    pub fn new(max_length: usize, count: usize, seed: u64) -> Self {
        Self {
            max_length,
            count,
            seed,
            require_terminal: false,
            attempts_per_path: 200,
        }
    }

    pub fn terminal(mut self) -> Self {
        self.require_terminal = true;
        self
    }
}

/// Generates expert paths by bidirectional BFS between seeded random
/// `(start, goal)` pairs.
pub fn generate_expert_paths(kg: &KnowledgeGraph, opts: &ExpertPathOptions) -> Result<ExpertPathSet> {
    if opts.max_length == 0 {
        return invalid("max path length must be at least 1");
    }
    if kg.triple_count() == 0 {
        return invalid("graph has no edges");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let rev = kg.reverse_adjacency();
    let n = kg.entity_count();
    let mut paths = Vec::with_capacity(opts.count);
    let budget = opts.count.saturating_mul(opts.attempts_per_path.max(1));
    let mut attempts = 0;
    while paths.len() < opts.count && attempts < budget && n >= 2 {
        attempts += 1;
        let start = EntityId(rng.random_range(0..n) as u32);
        let goal = EntityId(rng.random_range(0..n) as u32);
        if start == goal {
            continue;
        }
        let Some(path) = bidirectional_path(kg, &rev, start, goal, opts.max_length, &mut rng) else {
            continue;
        };
        if path.has_repeated_entity() {
            continue;
        }
        if opts.require_terminal && path.len() < opts.max_length && has_unvisited_successor(kg, &path) {
            continue;
        }
        paths.push(path);
    }
    let short = paths.len() < opts.count;
    if short {
        log::warn!(
            "expert path generation found {} of {} paths in {attempts} attempts",
            paths.len(),
            opts.count
        );
    }
    Ok(ExpertPathSet {
        paths,
        max_length: opts.max_length,
        requested: opts.count,
        short,
    })
}

fn has_unvisited_successor(kg: &KnowledgeGraph, path: &SemanticPath) -> bool {
    kg.adjacency[path.end().index()]
        .iter()
        .any(|&(_, t)| !path.contains_entity(t))
}

type Parent = Option<(EntityId, RelationId)>;

/// Shortest path of at most `max_len` steps from `start` to `goal`.
///
/// Forward BFS over stored edges and backward BFS over inverted edges grow
/// one level at a time, smaller frontier first. When they meet, one of the
/// meeting entities is chosen at random and the two half-paths are spliced.
pub fn bidirectional_path(
    kg: &KnowledgeGraph,
    reverse: &[Vec<(RelationId, EntityId)>],
    start: EntityId,
    goal: EntityId,
    max_len: usize,
    rng: &mut impl Rng,
) -> Option<SemanticPath> {
    if start == goal {
        return Some(SemanticPath::new(start));
    }
    let n = kg.entity_count();
    let mut fwd: Vec<Option<Parent>> = vec![None; n];
    let mut bwd: Vec<Option<Parent>> = vec![None; n];
    fwd[start.index()] = Some(None);
    bwd[goal.index()] = Some(None);
    let mut fwd_frontier = vec![start];
    let mut bwd_frontier = vec![goal];
    let (mut fwd_depth, mut bwd_depth) = (0usize, 0usize);

    while fwd_depth + bwd_depth < max_len && !fwd_frontier.is_empty() && !bwd_frontier.is_empty() {
        let forward = fwd_frontier.len() <= bwd_frontier.len();
        let (frontier, parents, other, edges) = if forward {
            (&mut fwd_frontier, &mut fwd, &bwd, &kg.adjacency[..])
        } else {
            (&mut bwd_frontier, &mut bwd, &fwd, reverse)
        };
        let mut next = Vec::new();
        let mut meets = Vec::new();
        for &u in frontier.iter() {
            for &(r, v) in &edges[u.index()] {
                if parents[v.index()].is_none() {
                    parents[v.index()] = Some(Some((u, r)));
                    next.push(v);
                    if other[v.index()].is_some() {
                        meets.push(v);
                    }
                }
            }
        }
        *frontier = next;
        if forward {
            fwd_depth += 1;
        } else {
            bwd_depth += 1;
        }
        if !meets.is_empty() {
            let meet = meets[rng.random_range(0..meets.len())];
            return Some(splice(&fwd, &bwd, start, meet));
        }
    }
    None
}

fn splice(fwd: &[Option<Parent>], bwd: &[Option<Parent>], start: EntityId, meet: EntityId) -> SemanticPath {
    let mut head: Vec<(RelationId, EntityId)> = Vec::new();
    let mut cur = meet;
    while let Some(Some((prev, r))) = fwd[cur.index()] {
        head.push((r, cur));
        cur = prev;
    }
    head.reverse();
    let mut path = SemanticPath { start, steps: head };
    let mut cur = meet;
    while let Some(Some((next, r))) = bwd[cur.index()] {
        path.push(r, next);
        cur = next;
    }
    path
}

/// Small hand-shaped graphs used by tests, examples, and the desk benchmarks.
pub mod toy {
    use super::*;

    /// `e0 -r0-> e1 -r0-> ... -r0-> e{n-1}`.
    pub fn chain(n: usize) -> KnowledgeGraph {
        let mut b = GraphBuilder::new();
        let r = b.intern_relation("next");
        let ids: Vec<EntityId> = (0..n).map(|i| b.intern_entity(&format!("c{i}"))).collect();
        for w in ids.windows(2) {
            b.add_triple(Triple::new(w[0], r, w[1])).unwrap();
        }
        b.build()
    }

    /// A rooted forest grown breadth-first: each internal node receives
    /// children with pairwise distinct relations, so a relation sequence
    /// determines a path uniquely.
    ///
    /// `fanout[d]` is the child count of each node at depth `d` (the last
    /// entry is reused), and growth stops once `entities` nodes exist.
    pub fn forest(entities: usize, roots: usize, fanout: &[usize], relations: usize, seed: u64) -> KnowledgeGraph {
        assert!(roots >= 1 && !fanout.is_empty() && relations >= *fanout.iter().max().unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = GraphBuilder::new();
        let rels: Vec<RelationId> = (0..relations).map(|i| b.intern_relation(&format!("rel{i}"))).collect();
        let mut queue = VecDeque::new();
        let mut count = 0;
        for _ in 0..roots.min(entities) {
            let id = b.intern_entity(&format!("n{count}"));
            count += 1;
            queue.push_back((id, 0usize));
        }
        let mut pool: Vec<usize> = (0..relations).collect();
        while let Some((parent, depth)) = queue.pop_front() {
            let k = fanout[depth.min(fanout.len() - 1)];
            pool.shuffle(&mut rng);
            for &ri in pool.iter().take(k) {
                if count >= entities {
                    break;
                }
                let child = b.intern_entity(&format!("n{count}"));
                count += 1;
                b.add_triple(Triple::new(parent, rels[ri], child)).unwrap();
                queue.push_back((child, depth + 1));
            }
            if count >= entities {
                break;
            }
        }
        b.build()
    }

    /// The 20-entity, depth-3 benchmark forest used for imitation runs.
    pub fn benchmark_forest() -> KnowledgeGraph {
        forest(20, 2, &[2, 2, 2], 4, 11)
    }

    /// A wider 20-entity forest whose expert mechanism has many distinct
    /// paths, so a handful of samples cannot describe it.
    pub fn hard_forest() -> KnowledgeGraph {
        forest(20, 1, &[3, 3, 2], 5, 5)
    }

    /// `hub -rel-> x` for every entity `x`, the hub included.
    pub fn saturated_hub(spokes: usize) -> KnowledgeGraph {
        let mut b = GraphBuilder::new();
        let r = b.intern_relation("rel");
        let hub = b.intern_entity("hub");
        let mut all = vec![hub];
        all.extend((0..spokes).map(|i| b.intern_entity(&format!("s{i}"))));
        for &t in &all {
            b.add_triple(Triple::new(hub, r, t)).unwrap();
        }
        b.build()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_stream_is_empty_graph() {
        let g = load_triples_str("").unwrap();
        assert_eq!((g.entity_count(), g.relation_count(), g.triple_count()), (0, 0, 0));
    }

    #[test]
    fn duplicates_are_dropped() {
        let g = load_triples_str("a\tr\tb\nb\tr\tc\na\tr\tb\n").unwrap();
        assert_eq!((g.entity_count(), g.relation_count(), g.triple_count()), (3, 1, 2));
        assert_eq!(g.entity_id("a"), Some(EntityId(0)));
        assert_eq!(g.entity_id("c"), Some(EntityId(2)));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = load_triples_str("# comment\na\tr\tb\na r b\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(load_triples_str("a\tr\n").is_err());
        assert!(load_triples_str("a\t\tb\n").is_err());
    }

    #[test]
    fn duplicate_label_declaration_is_an_error() {
        assert!(load_triples_str("#entity\ta\n#entity\ta\n").is_err());
        assert!(load_triples_str("#relation\tr\n#relation\tr\n").is_err());
    }

    #[test]
    fn header_mismatch_is_an_error() {
        assert!(load_triples_str("#entities=5 relations=1\na\tr\tb\n").is_err());
        assert!(load_triples_str("#entities=2 relations=1\na\tr\tb\n").is_ok());
    }

    #[test]
    fn neighbors_sorted_and_counted() {
        let g = KnowledgeGraph::from_labeled([("a", "r0", "x"), ("a", "r1", "b"), ("a", "r0", "c"), ("z", "r1", "z")]);
        let r0 = g.relation_id("r0").unwrap();
        let r1 = g.relation_id("r1").unwrap();
        let a = g.entity_id("a").unwrap();
        let (x, b, c) = (g.entity_id("x").unwrap(), g.entity_id("b").unwrap(), g.entity_id("c").unwrap());
        assert_eq!(g.neighbors(a).unwrap(), &[(r0, x), (r0, c), (r1, b)]);
        assert!(g.neighbors(g.entity_id("b").unwrap()).unwrap().is_empty());
        assert!(matches!(g.neighbors(EntityId(99)), Err(Error::NotFound(_))));
        let total: usize = g.entities().map(|e| g.neighbors(e).unwrap().len()).sum();
        assert_eq!(total, g.triple_count());
    }

    #[test]
    fn neighbor_sort_contract() {
        // edges {(r1,b),(r0,c)} come back as [(r0,c),(r1,b)]
        let mut b = GraphBuilder::new();
        let a = b.intern_entity("a");
        let bb = b.intern_entity("b");
        let c = b.intern_entity("c");
        let r0 = b.intern_relation("r0");
        let r1 = b.intern_relation("r1");
        b.add_triple(Triple::new(a, r1, bb)).unwrap();
        b.add_triple(Triple::new(a, r0, c)).unwrap();
        let g = b.build();
        assert_eq!(g.neighbors(a).unwrap(), &[(r0, c), (r1, bb)]);
    }

    #[test]
    fn serialization_round_trip_keeps_isolated_entities() {
        let mut b = GraphBuilder::new();
        b.add_labeled("a", "r", "b");
        b.add_entity("lonely").unwrap();
        let g = b.build();
        let back = load_triples_str(&g.to_text()).unwrap();
        assert_eq!(g, back);
        assert_eq!(back.entity_count(), 3);
    }

    #[test]
    fn skg_budget_bounds() {
        let g = toy::benchmark_forest();
        assert!(sample_skg(&g, 0, 1).is_err());
        assert!(sample_skg(&g, g.entity_count() + 1, 1).is_err());
        let one = sample_skg(&g, 1, 3).unwrap();
        assert_eq!(one.entity_count(), 1);
        assert_eq!(one.triple_count(), 0);
    }

    #[test]
    fn skg_full_budget_is_identity_up_to_relabeling() {
        let g = toy::forest(30, 3, &[3, 2], 4, 2);
        let s = sample_skg(&g, g.entity_count(), 9).unwrap();
        assert_eq!(s.entity_count(), g.entity_count());
        assert_eq!(s.triple_count(), g.triple_count());
        // ascending remap of a full selection is the identity
        assert_eq!(s, g);
    }

    #[test]
    fn skg_keeps_self_loop_on_single_entity() {
        let g = KnowledgeGraph::from_labeled([("a", "r", "a")]);
        let s = sample_skg(&g, 1, 0).unwrap();
        assert_eq!(s.triple_count(), 1);
    }

    #[test]
    fn chain_expert_path_is_unique() {
        let g = toy::chain(3);
        let rev = g.reverse_adjacency();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = bidirectional_path(&g, &rev, EntityId(0), EntityId(2), 2, &mut rng).unwrap();
        assert_eq!(p.key(), vec![0, 0, 1, 0, 2]);
        assert!(bidirectional_path(&g, &rev, EntityId(0), EntityId(2), 1, &mut rng).is_none());
        assert!(bidirectional_path(&g, &rev, EntityId(2), EntityId(0), 3, &mut rng).is_none());
    }

    #[test]
    fn disconnected_pair_contributes_nothing() {
        let g = KnowledgeGraph::from_labeled([("a", "r", "b"), ("c", "r", "d")]);
        let rev = g.reverse_adjacency();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (a, d) = (g.entity_id("a").unwrap(), g.entity_id("d").unwrap());
        assert!(bidirectional_path(&g, &rev, a, d, 5, &mut rng).is_none());
    }

    #[test]
    fn expert_paths_need_edges_and_length() {
        let g = KnowledgeGraph::from_labeled([("a", "r", "b")]);
        assert!(generate_expert_paths(&g, &ExpertPathOptions::new(0, 1, 0)).is_err());
        let empty = GraphBuilder::new().build();
        assert!(generate_expert_paths(&empty, &ExpertPathOptions::new(2, 1, 0)).is_err());
    }

    #[test]
    fn exhausted_attempts_flag_short_set() {
        // only one ordered pair is connected; asking for more than the budget allows
        let g = KnowledgeGraph::from_labeled([("a", "r", "b"), ("c", "s", "d")]);
        let mut opts = ExpertPathOptions::new(2, 50, 4);
        opts.attempts_per_path = 1;
        let set = generate_expert_paths(&g, &opts).unwrap();
        assert!(set.short);
        assert!(set.len() < 50);
    }

    #[test]
    fn terminal_filter_keeps_rollout_reachable_paths() {
        let g = toy::benchmark_forest();
        let set = generate_expert_paths(&g, &ExpertPathOptions::new(3, 40, 1).terminal()).unwrap();
        assert_eq!(set.len(), 40);
        for p in &set.paths {
            g.validate_path(p).unwrap();
            assert!(p.len() == 3 || !has_unvisited_successor(&g, p));
        }
    }

    #[test]
    fn toy_forest_shapes() {
        let g = toy::benchmark_forest();
        assert_eq!(g.entity_count(), 20);
        assert_eq!(g.triple_count(), 18);
        let h = toy::hard_forest();
        assert_eq!(h.entity_count(), 20);
        assert_eq!(h.triple_count(), 19);
        for e in h.entities() {
            let nb = h.neighbors(e).unwrap();
            let mut rels: Vec<_> = nb.iter().map(|&(r, _)| r).collect();
            rels.dedup();
            assert_eq!(rels.len(), nb.len());
        }
    }
}

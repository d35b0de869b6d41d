//! Reliable path mining.
//!
//! For every training seed pair the two-hop path neighborhoods of both
//! entities are matched one-to-one by name similarity; each matched
//! neighbor pair implies that the paths leading to it on either side
//! correspond. Path pairs that co-occur more than `tau_path` times form
//! the reliable path set, whose projections become each graph's path
//! vocabulary.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use rayon::prelude::*;

use crate::error::{KgError, Result};
use crate::kg::{
    build_path_triples, AlignmentSeeds, EmbeddingMatrix, EntityId, KnowledgeGraph, PathTriple,
    RelPath, Train,
};
use crate::tensor::dot;

pub const DEFAULT_TAU_SIM: f64 = 0.5;
pub const DEFAULT_TAU_PATH: u64 = 20;
pub const DEFAULT_MAX_FANOUT: usize = 10_000;

/// All `(neighbor, path)` pairs reachable from `owner` by a directed
/// two-hop walk, sorted and deduplicated.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PathNeighborhood {
    pub owner: EntityId,
    pub entries: Vec<(EntityId, RelPath)>,
    /// Set when the expansion exceeded the fan-out cap; `entries` is then empty.
    pub skipped: bool,
}

impl PathNeighborhood {
    /// Distinct neighbors in ascending id order.
    pub fn neighbors(&self) -> Vec<EntityId> {
        let mut v: Vec<EntityId> = self.entries.iter().map(|e| e.0).collect();
        v.dedup();
        v
    }

    /// Paths leading from the owner to `neighbor`.
    pub fn paths_to(&self, neighbor: EntityId) -> impl Iterator<Item = RelPath> + '_ {
        let start = self.entries.partition_point(|e| e.0 < neighbor);
        self.entries[start..]
            .iter()
            .take_while(move |e| e.0 == neighbor)
            .map(|e| e.1)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn path_neighborhood(kg: &KnowledgeGraph, e: EntityId, max_fanout: usize) -> PathNeighborhood {
    let mut seen: HashSet<(EntityId, RelPath)> = HashSet::new();
    for &(r1, mid) in kg.out_edges(e) {
        for &(r2, tail) in kg.out_edges(mid) {
            seen.insert((tail, RelPath::new(r1, r2)));
            if seen.len() > max_fanout {
                return PathNeighborhood {
                    owner: e,
                    entries: Vec::new(),
                    skipped: true,
                };
            }
        }
    }
    let mut entries: Vec<_> = seen.into_iter().collect();
    entries.sort_unstable();
    PathNeighborhood {
        owner: e,
        entries,
        skipped: false,
    }
}

/// Cosine similarities between the distinct neighbors of two
/// neighborhoods; `rows` label the first, `cols` the second.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    pub rows: Vec<EntityId>,
    pub cols: Vec<EntityId>,
    pub values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn from_dense(rows: Vec<EntityId>, cols: Vec<EntityId>, values: Vec<f64>) -> Self {
        assert_eq!(rows.len() * cols.len(), values.len());
        Self { rows, cols, values }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols.len() + c]
    }
}

/// Cosine similarity; 0 when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

pub fn similarity_matrix(
    pn1: &PathNeighborhood,
    pn2: &PathNeighborhood,
    names1: &EmbeddingMatrix,
    names2: &EmbeddingMatrix,
) -> SimilarityMatrix {
    let rows = pn1.neighbors();
    let cols = pn2.neighbors();
    let norms2: Vec<f64> = cols.iter().map(|&c| dot(names2.row(c), names2.row(c)).sqrt()).collect();
    let mut values = Vec::with_capacity(rows.len() * cols.len());
    for &r in &rows {
        let a = names1.row(r);
        let na = dot(a, a).sqrt();
        for (&c, &nb) in cols.iter().zip(&norms2) {
            values.push(if na == 0.0 || nb == 0.0 {
                0.0
            } else {
                dot(a, names2.row(c)) / (na * nb)
            });
        }
    }
    SimilarityMatrix { rows, cols, values }
}

/// One-to-one neighbor matches, strongest first.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NeighborMatchResult {
    pub pairs: Vec<(EntityId, EntityId, f64)>,
}

/// Greedy one-to-one matching. Each row proposes its best column (lowest
/// column on ties) if the similarity exceeds `tau_sim`; proposals are
/// accepted strongest first, skipping any whose column is already taken.
pub fn match_neighbors(s: &SimilarityMatrix, tau_sim: f64) -> NeighborMatchResult {
    let ncols = s.cols.len();
    let mut candidates: Vec<(usize, usize, f64)> = Vec::new();
    if ncols > 0 {
        for r in 0..s.rows.len() {
            let mut best = 0;
            for c in 1..ncols {
                if s.get(r, c) > s.get(r, best) {
                    best = c;
                }
            }
            let v = s.get(r, best);
            if v > tau_sim {
                candidates.push((r, best, v));
            }
        }
    }
    candidates.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let mut taken_cols = vec![false; ncols];
    let mut pairs = Vec::new();
    for (r, c, v) in candidates {
        if !taken_cols[c] {
            taken_cols[c] = true;
            pairs.push((s.rows[r], s.cols[c], v));
        }
    }
    NeighborMatchResult { pairs }
}

/// Every (path into matched neighbor on side 1, path into its partner on
/// side 2) combination, one per matched neighbor pair.
pub fn deduce_path_pairs(
    matches: &NeighborMatchResult,
    pn1: &PathNeighborhood,
    pn2: &PathNeighborhood,
) -> Vec<(RelPath, RelPath)> {
    let mut out = Vec::new();
    for &(n1, n2, _) in &matches.pairs {
        let right: Vec<RelPath> = pn2.paths_to(n2).collect();
        for p1 in pn1.paths_to(n1) {
            for &p2 in &right {
                out.push((p1, p2));
            }
        }
    }
    out
}

/// Co-occurrence count per `(first-graph path, second-graph path)`.
pub type PathPairCounts = BTreeMap<(RelPath, RelPath), u64>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MineConfig {
    pub tau_sim: f64,
    /// Pairs are kept when their count is strictly greater; `u64::MAX`
    /// keeps nothing.
    pub tau_path: u64,
    pub max_fanout: usize,
}

impl Default for MineConfig {
    fn default() -> Self {
        Self {
            tau_sim: DEFAULT_TAU_SIM,
            tau_path: DEFAULT_TAU_PATH,
            max_fanout: DEFAULT_MAX_FANOUT,
        }
    }
}

/// Co-occurrence counts of matched path pairs and the subset above threshold.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ReliablePathSet {
    pub counts: BTreeMap<(RelPath, RelPath), u64>,
    pub tau_path: u64,
    pub kept: BTreeMap<(RelPath, RelPath), u64>,
}

impl ReliablePathSet {
    pub fn from_counts(counts: BTreeMap<(RelPath, RelPath), u64>, tau_path: u64) -> Self {
        let kept = counts
            .iter()
            .filter(|(_, &c)| c > tau_path)
            .map(|(k, &c)| (*k, c))
            .collect();
        Self {
            counts,
            tau_path,
            kept,
        }
    }

    /// Distinct first-graph paths among kept pairs, ascending.
    pub fn vocab1(&self) -> Vec<RelPath> {
        self.kept.keys().map(|k| k.0).collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn vocab2(&self) -> Vec<RelPath> {
        self.kept.keys().map(|k| k.1).collect::<BTreeSet<_>>().into_iter().collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, serde::Serialize)]
pub struct MineStats {
    pub seed_pairs: usize,
    pub skipped_hubs: usize,
    pub matched_neighbors: usize,
    pub candidate_pairs: usize,
    pub kept_pairs: usize,
    pub paths1: usize,
    pub paths2: usize,
    pub path_triples1: usize,
    pub path_triples2: usize,
}

#[derive(Clone, Debug)]
pub struct MineOutput {
    pub reliable: ReliablePathSet,
    pub vocab1: Vec<RelPath>,
    pub vocab2: Vec<RelPath>,
    pub triples1: Vec<PathTriple>,
    pub triples2: Vec<PathTriple>,
    pub stats: MineStats,
}

#[derive(Default)]
struct Partial {
    counts: HashMap<(RelPath, RelPath), u64>,
    skipped: usize,
    matched: usize,
}

impl Partial {
    fn merge(mut self, other: Partial) -> Partial {
        for (k, c) in other.counts {
            *self.counts.entry(k).or_default() += c;
        }
        self.skipped += other.skipped;
        self.matched += other.matched;
        self
    }
}

/// Path pair counts contributed by one seed pair.
pub fn seed_pair_path_pairs(
    kg1: &KnowledgeGraph,
    kg2: &KnowledgeGraph,
    seed: (EntityId, EntityId),
    names1: &EmbeddingMatrix,
    names2: &EmbeddingMatrix,
    config: &MineConfig,
) -> (Vec<(RelPath, RelPath)>, usize, usize) {
    let pn1 = path_neighborhood(kg1, seed.0, config.max_fanout);
    let pn2 = path_neighborhood(kg2, seed.1, config.max_fanout);
    let skipped = pn1.skipped as usize + pn2.skipped as usize;
    if pn1.is_empty() || pn2.is_empty() {
        return (Vec::new(), skipped, 0);
    }
    let s = similarity_matrix(&pn1, &pn2, names1, names2);
    let m = match_neighbors(&s, config.tau_sim);
    (deduce_path_pairs(&m, &pn1, &pn2), skipped, m.pairs.len())
}

/// Runs the full mining procedure over the training seeds and returns the
/// reliable path set, both path vocabularies and their path triples.
pub fn mine(
    kg1: &KnowledgeGraph,
    kg2: &KnowledgeGraph,
    seeds: &AlignmentSeeds<Train>,
    names1: &EmbeddingMatrix,
    names2: &EmbeddingMatrix,
    config: &MineConfig,
) -> Result<MineOutput> {
    if seeds.is_empty() {
        return Err(KgError::Invalid("path mining needs at least one training seed".into()));
    }
    if names1.rows() != kg1.num_entities() || names2.rows() != kg2.num_entities() {
        return Err(KgError::Invalid("name embeddings do not cover the graphs".into()));
    }
    let partial = seeds
        .pairs()
        .par_iter()
        .map(|&seed| {
            let (pairs, skipped, matched) =
                seed_pair_path_pairs(kg1, kg2, seed, names1, names2, config);
            let mut p = Partial {
                skipped,
                matched,
                ..Default::default()
            };
            for k in pairs {
                *p.counts.entry(k).or_default() += 1;
            }
            p
        })
        .reduce(Partial::default, Partial::merge);

    let candidate_pairs = partial.counts.len();
    let reliable = ReliablePathSet::from_counts(partial.counts.into_iter().collect(), config.tau_path);
    let vocab1 = reliable.vocab1();
    let vocab2 = reliable.vocab2();
    let triples1 = build_path_triples(kg1, &vocab1)?;
    let triples2 = build_path_triples(kg2, &vocab2)?;
    let stats = MineStats {
        seed_pairs: seeds.len(),
        skipped_hubs: partial.skipped,
        matched_neighbors: partial.matched,
        candidate_pairs,
        kept_pairs: reliable.kept.len(),
        paths1: vocab1.len(),
        paths2: vocab2.len(),
        path_triples1: triples1.len(),
        path_triples2: triples2.len(),
    };
    log::info!(
        "mined {} reliable path pairs ({} / {} paths, {} / {} path triples, {} hubs skipped)",
        stats.kept_pairs,
        stats.paths1,
        stats.paths2,
        stats.path_triples1,
        stats.path_triples2,
        stats.skipped_hubs
    );
    Ok(MineOutput {
        reliable,
        vocab1,
        vocab2,
        triples1,
        triples2,
        stats,
    })
}

/// Writes `rf1,rg1\trf2,rg2\tcount` lines for every kept pair.
pub fn write_path_vocab(
    path: &std::path::Path,
    reliable: &ReliablePathSet,
    kg1: &KnowledgeGraph,
    kg2: &KnowledgeGraph,
) -> Result<()> {
    let mut out = String::new();
    for ((p1, p2), count) in &reliable.kept {
        out.push_str(&format!(
            "{},{}\t{},{}\t{}\n",
            kg1.relation_uri(p1.first),
            kg1.relation_uri(p1.second),
            kg2.relation_uri(p2.first),
            kg2.relation_uri(p2.second),
            count
        ));
    }
    crate::kg::write_file(path, &out)
}

/// Reads `path_vocab.tsv` back into `(kept pairs, vocab1, vocab2)`.
pub fn read_path_vocab(
    path: &std::path::Path,
    kg1: &KnowledgeGraph,
    kg2: &KnowledgeGraph,
) -> Result<(PathPairCounts, Vec<RelPath>, Vec<RelPath>)> {
    let text = crate::kg::read_file(path)?;
    let mut kept = BTreeMap::new();
    for (lineno, line) in crate::kg::lines(&text) {
        let f = crate::kg::split_fields(path, lineno, line, 3)?;
        let p1 = kg1.parse_rel_path(path, lineno, f[0])?;
        let p2 = kg2.parse_rel_path(path, lineno, f[1])?;
        let count: u64 = f[2].parse().map_err(|_| KgError::Parse {
            path: path.to_path_buf(),
            line: lineno,
            message: format!("bad count {:?}", f[2]),
        })?;
        kept.insert((p1, p2), count);
    }
    let v1 = kept.keys().map(|k: &(RelPath, RelPath)| k.0).collect::<BTreeSet<_>>();
    let v2 = kept.keys().map(|k: &(RelPath, RelPath)| k.1).collect::<BTreeSet<_>>();
    Ok((kept, v1.into_iter().collect(), v2.into_iter().collect()))
}

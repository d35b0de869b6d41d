//! Knowledge graphs, alignment seeds and name-embedding matrices, plus
//! loaders for the tab-separated dataset layout (`rel_triples_k`,
//! `ent_links`, `ent_name_emb_k.tsv`, `path_triples_k.tsv`).

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use indexmap::IndexSet;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{KgError, Result};
use crate::tensor::Matrix;

macro_rules! dense_id {
    ($name:ident) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub struct $name(pub usize);

        impl $name {
            #[inline]
            pub fn index(self) -> usize {
                self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

dense_id!(EntityId);
dense_id!(RelationId);
dense_id!(PathId);

/// An ordered pair of relations `(first, second)` composing a two-hop walk.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelPath {
    pub first: RelationId,
    pub second: RelationId,
}

impl RelPath {
    pub fn new(first: RelationId, second: RelationId) -> Self {
        Self { first, second }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelationTriple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PathTriple {
    pub head: EntityId,
    pub path: PathId,
    pub tail: EntityId,
}

/// One knowledge graph: entities, relations, relation triples and (after
/// path mining) the reliable path vocabulary with its path triples.
///
/// Ids are dense and per-graph; two graphs only meet through
/// [`AlignmentSeeds`].
#[derive(Clone, Debug, Default)]
pub struct KnowledgeGraph {
    entities: IndexSet<String>,
    relations: IndexSet<String>,
    rel_triples: Vec<RelationTriple>,
    out_edges: Vec<Vec<(RelationId, EntityId)>>,
    path_vocab: Vec<RelPath>,
    path_triples: Vec<PathTriple>,
    path_out: Vec<Vec<(PathId, EntityId)>>,
}

impl KnowledgeGraph {
    /// Builds a graph from URI triples. Ids are assigned in first-appearance
    /// order (head, relation, tail) and exact duplicate triples are dropped.
    pub fn from_uri_triples<'a, I>(triples: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, &'a str, &'a str)>,
    {
        let mut kg = KnowledgeGraph::default();
        let mut seen = HashSet::new();
        for (h, r, t) in triples {
            let head = EntityId(kg.entities.insert_full(h.to_owned()).0);
            let relation = RelationId(kg.relations.insert_full(r.to_owned()).0);
            let tail = EntityId(kg.entities.insert_full(t.to_owned()).0);
            let triple = RelationTriple {
                head,
                relation,
                tail,
            };
            if seen.insert(triple) {
                kg.rel_triples.push(triple);
            }
        }
        kg.reindex();
        kg
    }

    fn with_vocabularies(entities: IndexSet<String>, relations: IndexSet<String>) -> Self {
        KnowledgeGraph {
            entities,
            relations,
            ..Default::default()
        }
    }

    fn reindex(&mut self) {
        let mut out = vec![Vec::new(); self.entities.len()];
        for t in &self.rel_triples {
            out[t.head.0].push((t.relation, t.tail));
        }
        self.out_edges = out;
        let mut pout = vec![Vec::new(); self.entities.len()];
        for t in &self.path_triples {
            pout[t.head.0].push((t.path, t.tail));
        }
        self.path_out = pout;
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn entity_uri(&self, id: EntityId) -> &str {
        &self.entities[id.0]
    }

    pub fn relation_uri(&self, id: RelationId) -> &str {
        &self.relations[id.0]
    }

    pub fn entity_id(&self, uri: &str) -> Option<EntityId> {
        self.entities.get_index_of(uri).map(EntityId)
    }

    pub fn relation_id(&self, uri: &str) -> Option<RelationId> {
        self.relations.get_index_of(uri).map(RelationId)
    }

    pub fn entity_uris(&self) -> impl Iterator<Item = &str> {
        self.entities.iter().map(String::as_str)
    }

    pub fn relation_uris(&self) -> impl Iterator<Item = &str> {
        self.relations.iter().map(String::as_str)
    }

    pub fn rel_triples(&self) -> &[RelationTriple] {
        &self.rel_triples
    }

    /// Outgoing `(relation, tail)` pairs of `head`.
    pub fn out_edges(&self, head: EntityId) -> &[(RelationId, EntityId)] {
        &self.out_edges[head.0]
    }

    pub fn path_vocab(&self) -> &[RelPath] {
        &self.path_vocab
    }

    pub fn path(&self, id: PathId) -> RelPath {
        self.path_vocab[id.0]
    }

    pub fn path_triples(&self) -> &[PathTriple] {
        &self.path_triples
    }

    pub fn path_out_edges(&self, head: EntityId) -> &[(PathId, EntityId)] {
        &self.path_out[head.0]
    }

    /// Installs a path vocabulary and the path triples it induces.
    pub fn set_paths(&mut self, vocab: Vec<RelPath>) -> Result<()> {
        let triples = build_path_triples(self, &vocab)?;
        self.path_vocab = vocab;
        self.path_triples = triples;
        self.reindex();
        Ok(())
    }

    /// Installs a path vocabulary together with externally supplied path
    /// triples (e.g. read from `path_triples_k.tsv`).
    pub fn set_paths_with_triples(
        &mut self,
        vocab: Vec<RelPath>,
        mut triples: Vec<PathTriple>,
    ) -> Result<()> {
        let mut seen = HashSet::new();
        for v in &vocab {
            if !seen.insert(*v) {
                return Err(KgError::Invalid(format!(
                    "duplicate path ({},{}) in vocabulary",
                    self.relation_uri(v.first),
                    self.relation_uri(v.second)
                )));
            }
        }
        for t in &triples {
            if t.path.0 >= vocab.len() || t.head.0 >= self.num_entities() || t.tail.0 >= self.num_entities() {
                return Err(KgError::Invalid(format!("path triple {t:?} out of range")));
            }
        }
        triples.sort_unstable();
        triples.dedup();
        self.path_vocab = vocab;
        self.path_triples = triples;
        self.reindex();
        Ok(())
    }

    /// Returns a copy with an inverse relation `inv:<uri>` added for every
    /// relation and a reversed triple for every relation triple.
    pub fn with_inverse_relations(&self) -> KnowledgeGraph {
        let mut relations = self.relations.clone();
        let inv: Vec<RelationId> = self
            .relations
            .iter()
            .map(|uri| RelationId(relations.insert_full(format!("inv:{uri}")).0))
            .collect();
        let mut kg = KnowledgeGraph::with_vocabularies(self.entities.clone(), relations);
        let mut seen = HashSet::new();
        for t in &self.rel_triples {
            let rev = RelationTriple {
                head: t.tail,
                relation: inv[t.relation.0],
                tail: t.head,
            };
            for x in [*t, rev] {
                if seen.insert(x) {
                    kg.rel_triples.push(x);
                }
            }
        }
        kg.reindex();
        kg
    }

    /// Writes relation triples as `head\trel\ttail` lines in stored order.
    pub fn write_rel_triples(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for t in &self.rel_triples {
            out.push_str(self.entity_uri(t.head));
            out.push('\t');
            out.push_str(self.relation_uri(t.relation));
            out.push('\t');
            out.push_str(self.entity_uri(t.tail));
            out.push('\n');
        }
        write_file(path, &out)
    }

    /// Writes path triples as `head\trf,rg\ttail` lines.
    pub fn write_path_triples(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for t in &self.path_triples {
            let p = self.path(t.path);
            out.push_str(&format!(
                "{}\t{},{}\t{}\n",
                self.entity_uri(t.head),
                self.relation_uri(p.first),
                self.relation_uri(p.second),
                self.entity_uri(t.tail)
            ));
        }
        write_file(path, &out)
    }

    /// Reads `path_triples_k.tsv` against this graph's vocabularies. The
    /// path vocabulary is the given `vocab`; every triple must use one of
    /// its paths.
    pub fn read_path_triples(&self, path: &Path, vocab: &[RelPath]) -> Result<Vec<PathTriple>> {
        let text = read_file(path)?;
        let index: HashMap<RelPath, PathId> = vocab
            .iter()
            .enumerate()
            .map(|(i, p)| (*p, PathId(i)))
            .collect();
        let mut triples = Vec::new();
        for (lineno, line) in lines(&text) {
            let fields = split_fields(path, lineno, line, 3)?;
            let head = self.resolve_entity(path, lineno, fields[0])?;
            let tail = self.resolve_entity(path, lineno, fields[2])?;
            let rp = self.parse_rel_path(path, lineno, fields[1])?;
            let pid = *index.get(&rp).ok_or_else(|| KgError::Parse {
                path: path.to_path_buf(),
                line: lineno,
                message: format!("path {} is not in the path vocabulary", fields[1]),
            })?;
            triples.push(PathTriple {
                head,
                path: pid,
                tail,
            });
        }
        Ok(triples)
    }

    pub(crate) fn parse_rel_path(&self, file: &Path, lineno: usize, field: &str) -> Result<RelPath> {
        let (a, b) = field.split_once(',').ok_or_else(|| KgError::Parse {
            path: file.to_path_buf(),
            line: lineno,
            message: format!("expected `rf,rg`, got {field:?}"),
        })?;
        let lookup = |uri: &str| {
            self.relation_id(uri).ok_or_else(|| KgError::Parse {
                path: file.to_path_buf(),
                line: lineno,
                message: format!("unknown relation {uri}"),
            })
        };
        Ok(RelPath::new(lookup(a)?, lookup(b)?))
    }

    fn resolve_entity(&self, file: &Path, lineno: usize, uri: &str) -> Result<EntityId> {
        self.entity_id(uri).ok_or_else(|| KgError::Parse {
            path: file.to_path_buf(),
            line: lineno,
            message: format!("unknown entity {uri}"),
        })
    }
}

/// Loads a relation-triple file. When `entity_file` / `relation_file`
/// (`id\turi` lines) are given they fix the id assignment; otherwise ids
/// follow first appearance in the triple file.
pub fn load_kg(
    rel_triple_file: &Path,
    entity_file: Option<&Path>,
    relation_file: Option<&Path>,
) -> Result<KnowledgeGraph> {
    let text = read_file(rel_triple_file)?;
    let mut rows = Vec::new();
    for (lineno, line) in lines(&text) {
        let f = split_fields(rel_triple_file, lineno, line, 3)?;
        rows.push((lineno, f[0], f[1], f[2]));
    }
    if rows.is_empty() {
        return Err(KgError::Empty(rel_triple_file.to_path_buf()));
    }

    let kg = if entity_file.is_none() && relation_file.is_none() {
        KnowledgeGraph::from_uri_triples(rows.iter().map(|&(_, h, r, t)| (h, r, t)))
    } else {
        let entities = match entity_file {
            Some(p) => read_id_file(p)?,
            None => {
                let mut s = IndexSet::new();
                for &(_, h, _, t) in &rows {
                    s.insert(h.to_owned());
                    s.insert(t.to_owned());
                }
                s
            }
        };
        let relations = match relation_file {
            Some(p) => read_id_file(p)?,
            None => rows.iter().map(|&(_, _, r, _)| r.to_owned()).collect(),
        };
        let mut kg = KnowledgeGraph::with_vocabularies(entities, relations);
        let mut seen = HashSet::new();
        for &(lineno, h, r, t) in &rows {
            let head = kg.resolve_entity(rel_triple_file, lineno, h)?;
            let tail = kg.resolve_entity(rel_triple_file, lineno, t)?;
            let relation = kg.relation_id(r).ok_or_else(|| KgError::Parse {
                path: rel_triple_file.to_path_buf(),
                line: lineno,
                message: format!("unknown relation {r}"),
            })?;
            let triple = RelationTriple {
                head,
                relation,
                tail,
            };
            if seen.insert(triple) {
                kg.rel_triples.push(triple);
            }
        }
        kg.reindex();
        kg
    };
    log::info!(
        "loaded {}: {} entities, {} relations, {} triples ({} lines)",
        rel_triple_file.display(),
        kg.num_entities(),
        kg.num_relations(),
        kg.rel_triples.len(),
        rows.len()
    );
    Ok(kg)
}

fn read_id_file(path: &Path) -> Result<IndexSet<String>> {
    let text = read_file(path)?;
    let mut pairs = Vec::new();
    for (lineno, line) in lines(&text) {
        let f = split_fields(path, lineno, line, 2)?;
        let id: usize = f[0].parse().map_err(|_| KgError::Parse {
            path: path.to_path_buf(),
            line: lineno,
            message: format!("bad id {:?}", f[0]),
        })?;
        pairs.push((id, f[1].to_owned()));
    }
    pairs.sort_by_key(|p| p.0);
    let mut set = IndexSet::new();
    for (expected, (id, uri)) in pairs.into_iter().enumerate() {
        if id != expected {
            return Err(KgError::Invalid(format!(
                "{}: ids must be contiguous from 0 (missing {expected})",
                path.display()
            )));
        }
        if !set.insert(uri.clone()) {
            return Err(KgError::Invalid(format!("{}: duplicate uri {uri}", path.display())));
        }
    }
    Ok(set)
}

/// All relation paths whose two-hop walks exist, mapped to the set of
/// path triples they induce. Triples reached through several midpoints
/// collapse into one; self loops are kept.
pub fn build_path_triples(kg: &KnowledgeGraph, vocab: &[RelPath]) -> Result<Vec<PathTriple>> {
    let nrel = kg.num_relations();
    for p in vocab {
        if p.first.0 >= nrel || p.second.0 >= nrel {
            return Err(KgError::Invalid(format!(
                "path ({},{}) references an unknown relation",
                p.first, p.second
            )));
        }
    }
    if vocab.is_empty() {
        return Ok(Vec::new());
    }
    let mut by_rel: Vec<Vec<&RelationTriple>> = vec![Vec::new(); nrel];
    for t in &kg.rel_triples {
        by_rel[t.relation.0].push(t);
    }
    let mut out = Vec::new();
    for (pid, p) in vocab.iter().enumerate() {
        for first in &by_rel[p.first.0] {
            for &(r, tail) in kg.out_edges(first.tail) {
                if r == p.second {
                    out.push(PathTriple {
                        head: first.head,
                        path: PathId(pid),
                        tail,
                    });
                }
            }
        }
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// Marker types for the role of a seed set. Path mining accepts only
/// [`Train`] seeds.
pub mod role {
    #[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
    pub struct Train;
    #[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
    pub struct Valid;
    #[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
    pub struct Test;
}

pub use role::{Test, Train, Valid};

/// Pre-aligned `(kg1 entity, kg2 entity)` pairs for one role.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AlignmentSeeds<R> {
    pairs: Vec<(EntityId, EntityId)>,
    _role: PhantomData<R>,
}

impl<R> AlignmentSeeds<R> {
    /// Fails if an entity appears twice on either side.
    pub fn new(pairs: Vec<(EntityId, EntityId)>) -> Result<Self> {
        let mut left = HashSet::new();
        let mut right = HashSet::new();
        for &(a, b) in &pairs {
            if !left.insert(a) || !right.insert(b) {
                return Err(KgError::Invalid(format!(
                    "entity repeated in alignment pairs at ({a}, {b})"
                )));
            }
        }
        Ok(Self {
            pairs,
            _role: PhantomData,
        })
    }

    pub fn pairs(&self) -> &[(EntityId, EntityId)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Train/valid/test partition of the alignment links.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeedSplit {
    pub train: AlignmentSeeds<Train>,
    pub valid: AlignmentSeeds<Valid>,
    pub test: AlignmentSeeds<Test>,
}

/// Percentages for train/valid/test; must sum to 100.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitRatio {
    pub train: u32,
    pub valid: u32,
    pub test: u32,
}

impl SplitRatio {
    pub const DEFAULT: SplitRatio = SplitRatio {
        train: 20,
        valid: 10,
        test: 70,
    };

    pub fn new(train: u32, valid: u32, test: u32) -> Result<Self> {
        if train + valid + test != 100 {
            return Err(KgError::Invalid(format!(
                "split percentages must sum to 100, got {train}+{valid}+{test}"
            )));
        }
        Ok(Self { train, valid, test })
    }
}

impl fmt::Display for SplitRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.train, self.valid, self.test)
    }
}

impl std::str::FromStr for SplitRatio {
    type Err = KgError;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split([',', ':', '/']).map(str::trim).collect();
        if parts.len() != 3 {
            return Err(KgError::Invalid(format!("split must be `train,valid,test`, got {s:?}")));
        }
        let mut v = [0u32; 3];
        for (slot, p) in v.iter_mut().zip(&parts) {
            *slot = p
                .parse()
                .map_err(|_| KgError::Invalid(format!("bad split component {p:?}")))?;
        }
        SplitRatio::new(v[0], v[1], v[2])
    }
}

/// Reads `uri1\turi2` link lines and resolves them in both graphs.
pub fn read_links(
    link_file: &Path,
    kg1: &KnowledgeGraph,
    kg2: &KnowledgeGraph,
) -> Result<Vec<(EntityId, EntityId)>> {
    let text = read_file(link_file)?;
    let mut out = Vec::new();
    for (lineno, line) in lines(&text) {
        let f = split_fields(link_file, lineno, line, 2)?;
        let a = kg1
            .entity_id(f[0])
            .ok_or_else(|| KgError::UnknownUri(f[0].to_owned(), link_file.to_path_buf()))?;
        let b = kg2
            .entity_id(f[1])
            .ok_or_else(|| KgError::UnknownUri(f[1].to_owned(), link_file.to_path_buf()))?;
        out.push((a, b));
    }
    Ok(out)
}

pub fn write_links(
    path: &Path,
    pairs: &[(EntityId, EntityId)],
    kg1: &KnowledgeGraph,
    kg2: &KnowledgeGraph,
) -> Result<()> {
    let mut out = String::new();
    for &(a, b) in pairs {
        out.push_str(kg1.entity_uri(a));
        out.push('\t');
        out.push_str(kg2.entity_uri(b));
        out.push('\n');
    }
    write_file(path, &out)
}

/// Deterministic shuffle-and-split. Train and valid sizes are floored;
/// the remainder goes to test.
pub fn split_links(
    mut links: Vec<(EntityId, EntityId)>,
    ratio: SplitRatio,
    seed: u64,
) -> Result<SeedSplit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    links.shuffle(&mut rng);
    let n = links.len();
    let n_train = n * ratio.train as usize / 100;
    let n_valid = n * ratio.valid as usize / 100;
    let test = links.split_off(n_train + n_valid);
    let valid = links.split_off(n_train);
    Ok(SeedSplit {
        train: AlignmentSeeds::new(links)?,
        valid: AlignmentSeeds::new(valid)?,
        test: AlignmentSeeds::new(test)?,
    })
}

pub fn load_seeds(
    link_file: &Path,
    kg1: &KnowledgeGraph,
    kg2: &KnowledgeGraph,
    ratio: SplitRatio,
    seed: u64,
) -> Result<SeedSplit> {
    let links = read_links(link_file, kg1, kg2)?;
    AlignmentSeeds::<()>::new(links.clone())?;
    split_links(links, ratio, seed)
}

/// Dense row-per-entity matrix of finite reals.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    inner: Matrix,
}

impl EmbeddingMatrix {
    pub fn new(matrix: Matrix) -> Result<Self> {
        if let Some(pos) = matrix.data().iter().position(|v| !v.is_finite()) {
            return Err(KgError::Invalid(format!(
                "non-finite embedding value at row {}",
                pos / matrix.cols().max(1)
            )));
        }
        Ok(Self { inner: matrix })
    }

    pub fn rows(&self) -> usize {
        self.inner.rows()
    }

    pub fn dim(&self) -> usize {
        self.inner.cols()
    }

    pub fn row(&self, id: EntityId) -> &[f64] {
        self.inner.row(id.0)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.inner
    }

    pub fn into_matrix(self) -> Matrix {
        self.inner
    }

    /// Writes `uri\tv1 v2 ... vd` lines in entity-id order.
    pub fn write_tsv(&self, kg: &KnowledgeGraph, path: &Path) -> Result<()> {
        let mut out = String::new();
        for i in 0..self.rows() {
            out.push_str(kg.entity_uri(EntityId(i)));
            out.push('\t');
            let row: Vec<String> = self.inner.row(i).iter().map(|v| format!("{v:e}")).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        write_file(path, &out)
    }
}

/// Reads a name-embedding file; rows are reordered to entity-id order.
/// Lines for URIs not in the graph are ignored.
pub fn load_embeddings(embedding_file: &Path, kg: &KnowledgeGraph) -> Result<EmbeddingMatrix> {
    let text = read_file(embedding_file)?;
    let n = kg.num_entities();
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; n];
    let mut dim: Option<usize> = None;
    for (lineno, line) in lines(&text) {
        let (uri, rest) = line.split_once('\t').ok_or_else(|| KgError::Parse {
            path: embedding_file.to_path_buf(),
            line: lineno,
            message: "expected `uri<TAB>values`".into(),
        })?;
        let values = rest
            .split_whitespace()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| KgError::Parse {
                path: embedding_file.to_path_buf(),
                line: lineno,
                message: format!("bad number: {e}"),
            })?;
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(KgError::RaggedEmbedding {
                    path: embedding_file.to_path_buf(),
                    line: lineno,
                    expected: d,
                    found: values.len(),
                })
            }
            _ => {}
        }
        if let Some(id) = kg.entity_id(uri) {
            if rows[id.0].is_some() {
                return Err(KgError::Parse {
                    path: embedding_file.to_path_buf(),
                    line: lineno,
                    message: format!("duplicate embedding for {uri}"),
                });
            }
            rows[id.0] = Some(values);
        }
    }
    let missing: Vec<String> = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.is_none())
        .map(|(i, _)| kg.entity_uri(EntityId(i)).to_owned())
        .collect();
    if !missing.is_empty() {
        return Err(KgError::MissingEmbeddings {
            count: missing.len(),
            sample: missing.into_iter().take(10).collect(),
        });
    }
    let d = dim.unwrap_or(0);
    let data: Vec<f64> = rows.into_iter().flat_map(Option::unwrap).collect();
    EmbeddingMatrix::new(Matrix::from_vec(n, d, data).map_err(|e| KgError::Invalid(e.to_string()))?)
}

pub(crate) fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| KgError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| KgError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Non-empty lines with 1-based line numbers.
pub(crate) fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
        .filter(|(_, l)| !l.trim().is_empty())
}

pub(crate) fn split_fields<'a>(
    path: &Path,
    lineno: usize,
    line: &'a str,
    expected: usize,
) -> Result<Vec<&'a str>> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != expected {
        return Err(KgError::Parse {
            path: PathBuf::from(path),
            line: lineno,
            message: format!("expected {expected} tab-separated fields, found {}", fields.len()),
        });
    }
    Ok(fields)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn single_line_graph() {
        let f = file("a\tr\tb\n");
        let kg = load_kg(f.path(), None, None).unwrap();
        assert_eq!(kg.num_entities(), 2);
        assert_eq!(kg.num_relations(), 1);
        assert_eq!(kg.rel_triples().len(), 1);
    }

    #[test]
    fn duplicate_lines_collapse() {
        let f = file("a\tr\tb\na\tr\tb\n");
        let kg = load_kg(f.path(), None, None).unwrap();
        assert_eq!(kg.rel_triples().len(), 1);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let f = file("a\tr\tb\nbroken line\n");
        match load_kg(f.path(), None, None) {
            Err(KgError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_an_error() {
        let f = file("");
        assert!(matches!(load_kg(f.path(), None, None), Err(KgError::Empty(_))));
    }

    #[test]
    fn id_files_fix_assignment() {
        let t = file("a\tr\tb\n");
        let e = file("1\ta\n0\tb\n2\tc\n");
        let kg = load_kg(t.path(), Some(e.path()), None).unwrap();
        assert_eq!(kg.entity_id("b"), Some(EntityId(0)));
        assert_eq!(kg.entity_id("c"), Some(EntityId(2)));
        assert_eq!(kg.num_entities(), 3);
    }

    #[test]
    fn split_sizes() {
        let links: Vec<_> = (0..10).map(|i| (EntityId(i), EntityId(i))).collect();
        let s = split_links(links.clone(), SplitRatio::DEFAULT, 7).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (2, 1, 7));
        let again = split_links(links, SplitRatio::DEFAULT, 7).unwrap();
        assert_eq!(s, again);

        let big: Vec<_> = (0..15_000).map(|i| (EntityId(i), EntityId(i))).collect();
        let s = split_links(big, SplitRatio::DEFAULT, 1).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (3000, 1500, 10500));
    }

    #[test]
    fn split_ratio_must_sum_to_100() {
        assert!(SplitRatio::new(20, 10, 60).is_err());
        assert_eq!("30,10,60".parse::<SplitRatio>().unwrap(), SplitRatio::new(30, 10, 60).unwrap());
    }

    #[test]
    fn unresolvable_link_names_the_uri() {
        let t = file("a\tr\tb\n");
        let kg = load_kg(t.path(), None, None).unwrap();
        let l = file("a\tzzz\n");
        let err = load_seeds(l.path(), &kg, &kg, SplitRatio::DEFAULT, 0).unwrap_err();
        assert!(err.to_string().contains("zzz"), "{err}");
    }

    #[test]
    fn embeddings_follow_entity_order() {
        let t = file("a\tr\tb\n");
        let kg = load_kg(t.path(), None, None).unwrap();
        let fwd = file("a\t1 2 3\nb\t4 5 6\n");
        let rev = file("b\t4 5 6\na\t1 2 3\n");
        let m1 = load_embeddings(fwd.path(), &kg).unwrap();
        let m2 = load_embeddings(rev.path(), &kg).unwrap();
        assert_eq!((m1.rows(), m1.dim()), (2, 3));
        assert_eq!(m1, m2);
        assert_eq!(m1.row(EntityId(1)), &[4.0, 5.0, 6.0]);
    }

    #[test]
    fn ragged_embedding_rejected() {
        let t = file("a\tr\tb\n");
        let kg = load_kg(t.path(), None, None).unwrap();
        let f = file("a\t1 2 3\nb\t4 5\n");
        assert!(matches!(
            load_embeddings(f.path(), &kg),
            Err(KgError::RaggedEmbedding { expected: 3, found: 2, .. })
        ));
    }

    #[test]
    fn missing_embeddings_listed() {
        let t = file("a\tr\tb\nc\tr\td\n");
        let kg = load_kg(t.path(), None, None).unwrap();
        let f = file("a\t1 2\n");
        match load_embeddings(f.path(), &kg) {
            Err(KgError::MissingEmbeddings { count, sample }) => {
                assert_eq!(count, 3);
                assert_eq!(sample, vec!["b", "c", "d"]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    fn kg_of(triples: &[(&str, &str, &str)]) -> KnowledgeGraph {
        KnowledgeGraph::from_uri_triples(triples.iter().copied())
    }

    #[test]
    fn two_hop_path_triple() {
        let kg = kg_of(&[("a", "r1", "b"), ("b", "r2", "c")]);
        let r1 = kg.relation_id("r1").unwrap();
        let r2 = kg.relation_id("r2").unwrap();
        let out = build_path_triples(&kg, &[RelPath::new(r1, r2)]).unwrap();
        assert_eq!(
            out,
            vec![PathTriple {
                head: kg.entity_id("a").unwrap(),
                path: PathId(0),
                tail: kg.entity_id("c").unwrap()
            }]
        );
        assert!(build_path_triples(&kg, &[]).unwrap().is_empty());
    }

    #[test]
    fn chain_yields_two_path_triples() {
        let kg = kg_of(&[("a", "r1", "b"), ("b", "r2", "c"), ("c", "r3", "d")]);
        let r = |s| kg.relation_id(s).unwrap();
        let vocab = [RelPath::new(r("r1"), r("r2")), RelPath::new(r("r2"), r("r3"))];
        // every two-hop walk by brute force
        let mut walks = 0;
        for x in kg.rel_triples() {
            for y in kg.rel_triples() {
                if x.tail == y.head && vocab.contains(&RelPath::new(x.relation, y.relation)) {
                    walks += 1;
                }
            }
        }
        assert_eq!(walks, 2);
        assert_eq!(build_path_triples(&kg, &vocab).unwrap().len(), 2);
    }

    #[test]
    fn midpoints_collapse_and_self_loops_stay() {
        let kg = kg_of(&[
            ("a", "r1", "b"),
            ("b", "r2", "c"),
            ("a", "r1", "m"),
            ("m", "r2", "c"),
            ("c", "r1", "d"),
            ("d", "r2", "c"),
        ]);
        let r = |s| kg.relation_id(s).unwrap();
        let out = build_path_triples(&kg, &[RelPath::new(r("r1"), r("r2"))]).unwrap();
        let c = kg.entity_id("c").unwrap();
        assert_eq!(out.len(), 2);
        assert!(out.iter().any(|t| t.head == c && t.tail == c));
    }

    #[test]
    fn unknown_vocab_relation_rejected() {
        let kg = kg_of(&[("a", "r1", "b")]);
        let bad = RelPath::new(RelationId(0), RelationId(9));
        assert!(build_path_triples(&kg, &[bad]).is_err());
    }

    #[test]
    fn round_trip_preserves_ids() {
        let t = file("x\tp\ty\ny\tq\tz\nz\tp\tx\nx\tp\ty\n");
        let kg = load_kg(t.path(), None, None).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        kg.write_rel_triples(out.path()).unwrap();
        let again = load_kg(out.path(), None, None).unwrap();
        assert_eq!(kg.entity_uris().collect::<Vec<_>>(), again.entity_uris().collect::<Vec<_>>());
        assert_eq!(kg.relation_uris().collect::<Vec<_>>(), again.relation_uris().collect::<Vec<_>>());
        assert_eq!(kg.rel_triples(), again.rel_triples());
    }

    #[test]
    fn path_triples_round_trip() {
        let mut kg = kg_of(&[("a", "r1", "b"), ("b", "r2", "c"), ("c", "r1", "a")]);
        let r = |s| kg.relation_id(s).unwrap();
        let vocab = vec![RelPath::new(r("r1"), r("r2")), RelPath::new(r("r2"), r("r1"))];
        kg.set_paths(vocab.clone()).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        kg.write_path_triples(out.path()).unwrap();
        let read = kg.read_path_triples(out.path(), &vocab).unwrap();
        assert_eq!(read, kg.path_triples());
    }

    #[test]
    fn inverse_relations_reverse_every_triple() {
        let kg = kg_of(&[("a", "r", "b")]);
        let inv = kg.with_inverse_relations();
        assert_eq!(inv.num_relations(), 2);
        assert_eq!(inv.rel_triples().len(), 2);
        let b = inv.entity_id("b").unwrap();
        assert_eq!(inv.out_edges(b)[0].0, inv.relation_id("inv:r").unwrap());
    }
}

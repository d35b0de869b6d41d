//! Relation-aware heterogeneous graph transformer.
//!
//! Each layer derives an embedding for every edge type from the entities
//! it connects, uses it to modulate multi-head key/query attention and to
//! extend the value messages, aggregates the messages with the attention
//! weights, and blends the result with a projection of the previous layer
//! through a learned sigmoid gate. The same code encodes the relation
//! structure (edge types are relations) and the path structure (edge
//! types are reliable paths); the two use separate parameter sets.

use std::sync::Arc;

use rand::Rng;

use crate::error::{KgError, Result};
use crate::kg::{EmbeddingMatrix, KnowledgeGraph};
use crate::tensor::{Matrix, ParamId, ParamStore, SegmentIndex, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 4,
            dim: 300,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(KgError::Invalid("encoder needs at least one layer".into()));
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(KgError::Invalid(format!(
                "dim {} must be divisible by heads {}",
                self.dim, self.heads
            )));
        }
        if !self.dim.is_multiple_of(2) {
            return Err(KgError::Invalid(format!("dim {} must be even", self.dim)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }
}

/// Typed edges `(head, type, tail)` with the gather/segment indexes the
/// encoder needs, precomputed once.
#[derive(Clone, Debug)]
pub struct EdgeList {
    n_entities: usize,
    n_types: usize,
    heads: Arc<Vec<usize>>,
    types: Arc<Vec<usize>>,
    tails: Arc<Vec<usize>>,
    head_seg: Arc<SegmentIndex>,
    type_counts: Vec<usize>,
    type_heads: Side,
    type_tails: Side,
}

/// Distinct `(type, entity)` incidences on one side of the edges, for
/// averaging entity rows per type.
#[derive(Clone, Debug)]
struct Side {
    entities: Arc<Vec<usize>>,
    seg: Arc<SegmentIndex>,
    weights: Matrix,
}

impl Side {
    fn build(types: &[usize], ends: &[usize], n_types: usize) -> Result<Side> {
        let mut pairs: Vec<(usize, usize)> = types.iter().copied().zip(ends.iter().copied()).collect();
        pairs.sort_unstable();
        pairs.dedup();
        let mut distinct = vec![0usize; n_types];
        for &(t, _) in &pairs {
            distinct[t] += 1;
        }
        let weights = pairs.iter().map(|&(t, _)| 1.0 / distinct[t] as f64).collect::<Vec<_>>();
        Ok(Side {
            entities: Arc::new(pairs.iter().map(|p| p.1).collect()),
            seg: Arc::new(SegmentIndex::new(pairs.iter().map(|p| p.0).collect(), n_types)?),
            weights: Matrix::from_vec(weights.len(), 1, weights)?,
        })
    }
}

impl EdgeList {
    pub fn new(n_entities: usize, n_types: usize, triples: &[(usize, usize, usize)]) -> Result<Self> {
        for &(h, r, t) in triples {
            if h >= n_entities || t >= n_entities || r >= n_types {
                return Err(KgError::Invalid(format!(
                    "edge ({h}, {r}, {t}) out of range for {n_entities} entities / {n_types} types"
                )));
            }
        }
        let heads: Vec<usize> = triples.iter().map(|t| t.0).collect();
        let types: Vec<usize> = triples.iter().map(|t| t.1).collect();
        let tails: Vec<usize> = triples.iter().map(|t| t.2).collect();
        let mut type_counts = vec![0; n_types];
        for &r in &types {
            type_counts[r] += 1;
        }
        Ok(Self {
            n_entities,
            n_types,
            head_seg: Arc::new(SegmentIndex::new(heads.clone(), n_entities)?),
            type_heads: Side::build(&types, &heads, n_types)?,
            type_tails: Side::build(&types, &tails, n_types)?,
            heads: Arc::new(heads),
            types: Arc::new(types),
            tails: Arc::new(tails),
            type_counts,
        })
    }

    /// Like [`EdgeList::new`] but renumbers edge types so that only types
    /// with at least one edge remain.
    pub fn compacted(n_entities: usize, triples: &[(usize, usize, usize)]) -> Result<Self> {
        let mut used: Vec<usize> = triples.iter().map(|t| t.1).collect();
        used.sort_unstable();
        used.dedup();
        let remapped: Vec<_> = triples
            .iter()
            .map(|&(h, r, t)| (h, used.binary_search(&r).expect("type present"), t))
            .collect();
        Self::new(n_entities, used.len(), &remapped)
    }

    pub fn from_relation_triples(kg: &KnowledgeGraph) -> Result<Self> {
        let triples: Vec<_> = kg
            .rel_triples()
            .iter()
            .map(|t| (t.head.0, t.relation.0, t.tail.0))
            .collect();
        Self::compacted(kg.num_entities(), &triples)
    }

    pub fn from_path_triples(kg: &KnowledgeGraph) -> Result<Self> {
        let triples: Vec<_> = kg
            .path_triples()
            .iter()
            .map(|t| (t.head.0, t.path.0, t.tail.0))
            .collect();
        Self::compacted(kg.num_entities(), &triples)
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    pub fn n_entities(&self) -> usize {
        self.n_entities
    }

    pub fn n_types(&self) -> usize {
        self.n_types
    }

    pub fn heads(&self) -> &[usize] {
        &self.heads
    }

    pub fn types(&self) -> &[usize] {
        &self.types
    }

    pub fn tails(&self) -> &[usize] {
        &self.tails
    }
}

/// Parameter handles for one layer.
#[derive(Clone, Debug)]
pub struct LayerParams {
    pub head_proj: ParamId,
    pub head_bias: ParamId,
    pub tail_proj: ParamId,
    pub tail_bias: ParamId,
    pub key: ParamId,
    pub query: ParamId,
    pub value: ParamId,
    pub attn: ParamId,
    pub agg: ParamId,
    pub residual: ParamId,
    pub gate: ParamId,
}

const LAYER_PARAM_NAMES: [&str; 11] = [
    "head_proj", "head_bias", "tail_proj", "tail_bias", "key", "query", "value", "attn", "agg",
    "residual", "gate",
];

impl LayerParams {
    pub fn ids(&self) -> [ParamId; 11] {
        [
            self.head_proj,
            self.head_bias,
            self.tail_proj,
            self.tail_bias,
            self.key,
            self.query,
            self.value,
            self.attn,
            self.agg,
            self.residual,
            self.gate,
        ]
    }
}

/// All trainable tensors of one encoder stack.
#[derive(Clone, Debug)]
pub struct RhgtParams {
    pub config: EncoderConfig,
    pub layers: Vec<LayerParams>,
}

impl RhgtParams {
    /// Registers freshly initialized parameters under `prefix` (e.g. `rel`).
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        config: EncoderConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let dh = config.head_dim();
        let layers = (0..config.layers)
            .map(|l| {
                let mut add = |name: &str, m: Matrix| store.add(format!("{prefix}.{l}.{name}"), m);
                LayerParams {
                    head_proj: add("head_proj", Matrix::glorot(d, d / 2, rng)),
                    head_bias: add("head_bias", Matrix::zeros(1, d / 2)),
                    tail_proj: add("tail_proj", Matrix::glorot(d, d / 2, rng)),
                    tail_bias: add("tail_bias", Matrix::zeros(1, d / 2)),
                    key: add("key", Matrix::glorot(d, d, rng)),
                    query: add("query", Matrix::glorot(d, d, rng)),
                    value: add("value", Matrix::glorot(d, d, rng)),
                    attn: add("attn", Matrix::glorot(2 * dh, 1, rng)),
                    agg: add("agg", Matrix::glorot(2 * d, d, rng)),
                    residual: add("residual", Matrix::glorot(d, d, rng)),
                    gate: add("gate", Matrix::zeros(1, 1)),
                }
            })
            .collect();
        Ok(Self { config, layers })
    }

    /// Looks up parameters registered under `prefix` (e.g. after loading a
    /// checkpoint) and checks their shapes.
    pub fn from_store(store: &ParamStore, prefix: &str, config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let dh = config.head_dim();
        let shapes = [
            (d, d / 2),
            (1, d / 2),
            (d, d / 2),
            (1, d / 2),
            (d, d),
            (d, d),
            (d, d),
            (2 * dh, 1),
            (2 * d, d),
            (d, d),
            (1, 1),
        ];
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let mut ids = Vec::with_capacity(11);
            for (name, shape) in LAYER_PARAM_NAMES.iter().zip(shapes) {
                let full = format!("{prefix}.{l}.{name}");
                let id = store
                    .find(&full)
                    .ok_or_else(|| KgError::Invalid(format!("checkpoint lacks parameter {full}")))?;
                if store.value(id).shape() != shape {
                    return Err(KgError::Invalid(format!(
                        "parameter {full} has shape {:?}, expected {shape:?}",
                        store.value(id).shape()
                    )));
                }
                ids.push(id);
            }
            layers.push(LayerParams {
                head_proj: ids[0],
                head_bias: ids[1],
                tail_proj: ids[2],
                tail_bias: ids[3],
                key: ids[4],
                query: ids[5],
                value: ids[6],
                attn: ids[7],
                agg: ids[8],
                residual: ids[9],
                gate: ids[10],
            });
        }
        Ok(Self { config, layers })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(LayerParams::ids).collect()
    }
}

/// Parameter leaves of one layer placed on a tape.
#[derive(Clone, Copy, Debug)]
pub struct LayerVars {
    pub head_proj: Var,
    pub head_bias: Var,
    pub tail_proj: Var,
    pub tail_bias: Var,
    pub key: Var,
    pub query: Var,
    pub value: Var,
    pub attn: Var,
    pub agg: Var,
    pub residual: Var,
    pub gate: Var,
}

impl LayerVars {
    pub fn load(tape: &mut Tape, store: &ParamStore, p: &LayerParams) -> Self {
        Self {
            head_proj: tape.param(store, p.head_proj),
            head_bias: tape.param(store, p.head_bias),
            tail_proj: tape.param(store, p.tail_proj),
            tail_bias: tape.param(store, p.tail_bias),
            key: tape.param(store, p.key),
            query: tape.param(store, p.query),
            value: tape.param(store, p.value),
            attn: tape.param(store, p.attn),
            agg: tape.param(store, p.agg),
            residual: tape.param(store, p.residual),
            gate: tape.param(store, p.gate),
        }
    }
}

/// Edge-type embeddings, `n_types x d`: ReLU of the concatenated means of
/// the projected distinct head and tail entities of each type.
pub fn relation_embedding(tape: &mut Tape, e_prev: Var, edges: &EdgeList, lv: &LayerVars) -> Result<Var> {
    if let Some(t) = edges.type_counts.iter().position(|&c| c == 0) {
        return Err(KgError::Invalid(format!("edge type {t} has no triples")));
    }
    let mut halves = [e_prev; 2];
    for (slot, (side, proj, bias)) in halves.iter_mut().zip([
        (&edges.type_heads, lv.head_proj, lv.head_bias),
        (&edges.type_tails, lv.tail_proj, lv.tail_bias),
    ]) {
        let projected = tape.matmul(e_prev, proj)?;
        let projected = tape.add_row(projected, bias)?;
        let rows = tape.gather_rows(projected, side.entities.clone())?;
        let w = tape.constant(side.weights.clone());
        *slot = tape.segment_sum(rows, w, side.seg.clone())?;
    }
    let cat = tape.concat_cols(&halves)?;
    Ok(tape.relu(cat))
}

/// Normalized attention weights, `edges x heads`. Head `i` scores an edge
/// as `attn . [key_i(h) * c_i || query_i(t) * c_i] / sqrt(d / heads)`,
/// where `c_i` is the `i`-th `d / heads` wide chunk of the edge type's
/// embedding; scores are then softmaxed over each head entity's edges.
pub fn heterogeneous_attention(
    tape: &mut Tape,
    e_prev: Var,
    rel_emb: Var,
    edges: &EdgeList,
    lv: &LayerVars,
    config: &EncoderConfig,
) -> Result<Var> {
    let dh = config.head_dim();
    let keys = tape.matmul(e_prev, lv.key)?;
    let queries = tape.matmul(e_prev, lv.query)?;
    let k = tape.gather_rows(keys, edges.heads.clone())?;
    let q = tape.gather_rows(queries, edges.tails.clone())?;
    let r = tape.gather_rows(rel_emb, edges.types.clone())?;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut scores = Vec::with_capacity(config.heads);
    for i in 0..config.heads {
        let (lo, hi) = (i * dh, (i + 1) * dh);
        let c = tape.slice_cols(r, lo, hi)?;
        let ki = tape.slice_cols(k, lo, hi)?;
        let qi = tape.slice_cols(q, lo, hi)?;
        let kc = tape.mul(ki, c)?;
        let qc = tape.mul(qi, c)?;
        let cat = tape.concat_cols(&[kc, qc])?;
        let s = tape.matmul(cat, lv.attn)?;
        scores.push(tape.scale(s, scale));
    }
    let scores = tape.concat_cols(&scores)?;
    Ok(tape.segment_softmax(scores, edges.head_seg.clone())?)
}

/// Messages, `edges x 2d`: per head `[value_i(t) || c_i]`, heads concatenated.
pub fn heterogeneous_message(
    tape: &mut Tape,
    e_prev: Var,
    rel_emb: Var,
    edges: &EdgeList,
    lv: &LayerVars,
    config: &EncoderConfig,
) -> Result<Var> {
    let dh = config.head_dim();
    let values = tape.matmul(e_prev, lv.value)?;
    let v = tape.gather_rows(values, edges.tails.clone())?;
    let r = tape.gather_rows(rel_emb, edges.types.clone())?;
    let mut parts = Vec::with_capacity(2 * config.heads);
    for i in 0..config.heads {
        let (lo, hi) = (i * dh, (i + 1) * dh);
        parts.push(tape.slice_cols(v, lo, hi)?);
        parts.push(tape.slice_cols(r, lo, hi)?);
    }
    Ok(tape.concat_cols(&parts)?)
}

/// Attention-weighted message sums per head entity, then the gated
/// residual `s * agg(m) + (1 - s) * residual(e_prev)` with `s = sigmoid(gate)`.
/// Entities without edges receive a zero aggregate.
pub fn aggregate_and_residual(
    tape: &mut Tape,
    e_prev: Var,
    attn: Var,
    msgs: Var,
    edges: &EdgeList,
    lv: &LayerVars,
    config: &EncoderConfig,
) -> Result<Var> {
    let w = 2 * config.head_dim();
    let mut per_head = Vec::with_capacity(config.heads);
    for i in 0..config.heads {
        let a = tape.slice_cols(attn, i, i + 1)?;
        let m = tape.slice_cols(msgs, i * w, (i + 1) * w)?;
        per_head.push(tape.segment_sum(m, a, edges.head_seg.clone())?);
    }
    let update = tape.concat_cols(&per_head)?;
    let gate = tape.sigmoid(lv.gate);
    let neg = tape.scale(gate, -1.0);
    let keep = tape.add_scalar(neg, 1.0);
    let agg = tape.matmul(update, lv.agg)?;
    let agg = tape.scale_by(gate, agg)?;
    let res = tape.matmul(e_prev, lv.residual)?;
    let res = tape.scale_by(keep, res)?;
    Ok(tape.add(agg, res)?)
}

pub fn layer_forward(
    tape: &mut Tape,
    e_prev: Var,
    edges: &EdgeList,
    lv: &LayerVars,
    config: &EncoderConfig,
) -> Result<Var> {
    let rel = relation_embedding(tape, e_prev, edges, lv)?;
    let attn = heterogeneous_attention(tape, e_prev, rel, edges, lv, config)?;
    let msgs = heterogeneous_message(tape, e_prev, rel, edges, lv, config)?;
    aggregate_and_residual(tape, e_prev, attn, msgs, edges, lv, config)
}

/// Runs the whole stack on `input` (`n_entities x dim`).
pub fn encode_on_tape(
    tape: &mut Tape,
    store: &ParamStore,
    params: &RhgtParams,
    input: Var,
    edges: &EdgeList,
) -> Result<Var> {
    let (rows, cols) = tape.value(input).shape();
    if cols != params.config.dim {
        return Err(KgError::Invalid(format!(
            "input dimension {cols} does not match encoder dim {}",
            params.config.dim
        )));
    }
    if rows != edges.n_entities() {
        return Err(KgError::Invalid(format!(
            "input has {rows} rows but the edge list covers {} entities",
            edges.n_entities()
        )));
    }
    let mut e = input;
    for lp in &params.layers {
        let lv = LayerVars::load(tape, store, lp);
        e = layer_forward(tape, e, edges, &lv, &params.config)?;
    }
    Ok(e)
}

/// Forward pass without gradient bookkeeping for the caller.
pub fn encode(
    names: &EmbeddingMatrix,
    edges: &EdgeList,
    store: &ParamStore,
    params: &RhgtParams,
) -> Result<EmbeddingMatrix> {
    let mut tape = Tape::new();
    let input = tape.constant(names.matrix().clone());
    let out = encode_on_tape(&mut tape, store, params, input, edges)?;
    EmbeddingMatrix::new(tape.value(out).clone())
}

//! Independent reference implementations shared by the integration and
//! acceptance tests. Everything here works on plain integer triples and
//! nested vectors with straightforward loops.

#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::{BTreeMap, BTreeSet};

pub mod suites;

use kgalign_core::kg::{EmbeddingMatrix, EntityId, KnowledgeGraph, RelPath};
use kgalign_core::tensor::{Matrix, ParamStore, Tape, Var};
use rand::Rng;

pub type Triple = (usize, usize, usize);
pub type IntPath = (usize, usize);
pub type IntCounts = BTreeMap<(IntPath, IntPath), u64>;

pub fn random_triples<R: Rng>(rng: &mut R, n_ent: usize, n_rel: usize, n_triples: usize) -> Vec<Triple> {
    (0..n_triples)
        .map(|_| (rng.gen_range(0..n_ent), rng.gen_range(0..n_rel), rng.gen_range(0..n_ent)))
        .collect()
}

pub fn random_rows<R: Rng>(rng: &mut R, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
}

/// Graph over URIs `e{i}` / `r{j}`.
pub fn kg_from(triples: &[Triple]) -> KnowledgeGraph {
    let uris: Vec<(String, String, String)> = triples
        .iter()
        .map(|&(h, r, t)| (format!("e{h}"), format!("r{r}"), format!("e{t}")))
        .collect();
    KnowledgeGraph::from_uri_triples(uris.iter().map(|(a, b, c)| (a.as_str(), b.as_str(), c.as_str())))
}

fn index_of(uri: &str) -> usize {
    uri[1..].parse().expect("integer uri")
}

pub fn int_entity(kg: &KnowledgeGraph, e: EntityId) -> usize {
    index_of(kg.entity_uri(e))
}

pub fn int_path(kg: &KnowledgeGraph, p: RelPath) -> IntPath {
    (index_of(kg.relation_uri(p.first)), index_of(kg.relation_uri(p.second)))
}

pub fn kg_entity(kg: &KnowledgeGraph, i: usize) -> EntityId {
    kg.entity_id(&format!("e{i}")).expect("entity present")
}

/// Name rows indexed by integer entity, reordered to the graph's ids.
pub fn names_for(kg: &KnowledgeGraph, rows: &[Vec<f64>]) -> EmbeddingMatrix {
    let ordered: Vec<Vec<f64>> = (0..kg.num_entities())
        .map(|i| rows[int_entity(kg, EntityId(i))].clone())
        .collect();
    EmbeddingMatrix::new(Matrix::from_rows(&ordered).unwrap()).unwrap()
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let mut ab = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for k in 0..a.len() {
        ab += a[k] * b[k];
        aa += a[k] * a[k];
        bb += b[k] * b[k];
    }
    if aa == 0.0 || bb == 0.0 {
        0.0
    } else {
        ab / (aa.sqrt() * bb.sqrt())
    }
}

/// Every `(neighbor, (r1, r2))` reachable by a directed two-hop walk.
pub fn ref_two_hop(triples: &[Triple], e: usize) -> BTreeSet<(usize, IntPath)> {
    let mut out = BTreeSet::new();
    for &(h1, r1, m) in triples {
        if h1 != e {
            continue;
        }
        for &(h2, r2, t) in triples {
            if h2 == m {
                out.insert((t, (r1, r2)));
            }
        }
    }
    out
}

/// Brute-force reliable path mining; returns every counted pair.
pub fn ref_counts(
    t1: &[Triple],
    t2: &[Triple],
    names1: &[Vec<f64>],
    names2: &[Vec<f64>],
    seeds: &[(usize, usize)],
    tau_sim: f64,
) -> BTreeMap<(IntPath, IntPath), u64> {
    let mut counts = BTreeMap::new();
    for &(s1, s2) in seeds {
        let pn1 = ref_two_hop(t1, s1);
        let pn2 = ref_two_hop(t2, s2);
        let rows: Vec<usize> = pn1.iter().map(|x| x.0).collect::<BTreeSet<_>>().into_iter().collect();
        let cols: Vec<usize> = pn2.iter().map(|x| x.0).collect::<BTreeSet<_>>().into_iter().collect();
        if rows.is_empty() || cols.is_empty() {
            continue;
        }
        // each row's best column, first one on ties
        let mut cand = Vec::new();
        for (ri, &r) in rows.iter().enumerate() {
            let sims: Vec<f64> = cols.iter().map(|&c| cos(&names1[r], &names2[c])).collect();
            let mut best = 0;
            for ci in 0..cols.len() {
                if sims[ci] > sims[best] {
                    best = ci;
                }
            }
            if sims[best] > tau_sim {
                cand.push((sims[best], ri, best));
            }
        }
        // strongest first, then row, then column
        cand.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut used = BTreeSet::new();
        for (_, ri, ci) in cand {
            if !used.insert(ci) {
                continue;
            }
            let (n1, n2) = (rows[ri], cols[ci]);
            for &(a, p1) in &pn1 {
                if a != n1 {
                    continue;
                }
                for &(b, p2) in &pn2 {
                    if b == n2 {
                        *counts.entry((p1, p2)).or_insert(0) += 1;
                    }
                }
            }
        }
    }
    counts
}

pub fn ref_kept(counts: &BTreeMap<(IntPath, IntPath), u64>, tau_path: u64) -> BTreeMap<(IntPath, IntPath), u64> {
    counts
        .iter()
        .filter(|(_, &c)| tau_path != u64::MAX && c > tau_path)
        .map(|(k, &c)| (*k, c))
        .collect()
}

/// Central-difference check of `build` against the tape gradient for every
/// input. Non-scalar outputs are reduced with fixed pseudo-random weights.
pub fn grad_check<F>(inputs: &[Matrix], build: F) -> Result<(), String>
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    const EPS: f64 = 1e-5;
    const RTOL: f64 = 1e-4;
    let eval = |values: &[Matrix], want_grads: bool| -> (f64, Vec<Matrix>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|m| tape.input(m.clone())).collect();
        let out = build(&mut tape, &vars);
        let out = reduce(&mut tape, out);
        let v = tape.value(out).data()[0];
        if !want_grads {
            return (v, Vec::new());
        }
        let grads = tape.backward(out).expect("backward");
        let g = vars
            .iter()
            .zip(values)
            .map(|(&x, m)| grads.wrt(x).cloned().unwrap_or_else(|| Matrix::zeros(m.rows(), m.cols())))
            .collect();
        (v, g)
    };
    let (_, analytic) = eval(inputs, true);
    for (k, m) in inputs.iter().enumerate() {
        for idx in 0..m.data().len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[idx] += EPS;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[idx] -= EPS;
            let numeric = (eval(&plus, false).0 - eval(&minus, false).0) / (2.0 * EPS);
            let a = analytic[k].data()[idx];
            if !close(a, numeric, RTOL) {
                return Err(format!("input {k} element {idx}: analytic {a:e} vs numeric {numeric:e}"));
            }
        }
    }
    Ok(())
}

/// Same check for every parameter tensor in `store`; `loss` builds the
/// scalar from parameter leaves placed on a fresh tape.
pub fn param_grad_check<F>(store: &ParamStore, loss: F) -> Result<usize, String>
where
    F: Fn(&mut Tape, &ParamStore) -> Var,
{
    const EPS: f64 = 1e-5;
    const RTOL: f64 = 1e-4;
    let mut tape = Tape::new();
    let out = loss(&mut tape, store);
    let grads = tape.backward(out).expect("backward");
    let mut work = store.clone();
    work.zero_grads();
    tape.accumulate_param_grads(&grads, &mut work);
    let value = |s: &ParamStore| {
        let mut t = Tape::new();
        let o = loss(&mut t, s);
        t.value(o).data()[0]
    };
    let mut checked = 0;
    for id in store.ids().collect::<Vec<_>>() {
        let analytic = work.grad(id).clone();
        for idx in 0..store.value(id).data().len() {
            let mut plus = store.clone();
            plus.value_mut(id).data_mut()[idx] += EPS;
            let mut minus = store.clone();
            minus.value_mut(id).data_mut()[idx] -= EPS;
            let numeric = (value(&plus) - value(&minus)) / (2.0 * EPS);
            let a = analytic.data()[idx];
            if !close(a, numeric, RTOL) {
                return Err(format!("{}[{idx}]: analytic {a:e} vs numeric {numeric:e}", store.name(id)));
            }
            checked += 1;
        }
    }
    Ok(checked)
}

pub fn close(a: f64, b: f64, rtol: f64) -> bool {
    (a - b).abs() <= rtol * a.abs().max(b.abs()) + 1e-8
}

fn reduce(tape: &mut Tape, out: Var) -> Var {
    let (r, c) = tape.value(out).shape();
    if (r, c) == (1, 1) {
        return out;
    }
    let w: Vec<f64> = (0..r * c).map(|i| 0.3 + ((i * 7919) % 13) as f64 / 10.0).collect();
    let w = tape.constant(Matrix::from_vec(r, c, w).unwrap());
    let prod = tape.mul(out, w).unwrap();
    tape.sum(prod)
}

/// Parameters of one encoder layer as nested vectors.
pub struct DenseLayer {
    pub head_proj: Vec<Vec<f64>>,
    pub head_bias: Vec<f64>,
    pub tail_proj: Vec<Vec<f64>>,
    pub tail_bias: Vec<f64>,
    pub key: Vec<Vec<f64>>,
    pub query: Vec<Vec<f64>>,
    pub value: Vec<Vec<f64>>,
    pub attn: Vec<f64>,
    pub agg: Vec<Vec<f64>>,
    pub residual: Vec<Vec<f64>>,
    pub gate: f64,
}

fn rows_of(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

impl DenseLayer {
    pub fn from_store(store: &ParamStore, prefix: &str, layer: usize) -> Self {
        let get = |name: &str| store.value(store.find(&format!("{prefix}.{layer}.{name}")).expect(name)).clone();
        Self {
            head_proj: rows_of(&get("head_proj")),
            head_bias: get("head_bias").data().to_vec(),
            tail_proj: rows_of(&get("tail_proj")),
            tail_bias: get("tail_bias").data().to_vec(),
            key: rows_of(&get("key")),
            query: rows_of(&get("query")),
            value: rows_of(&get("value")),
            attn: get("attn").data().to_vec(),
            agg: rows_of(&get("agg")),
            residual: rows_of(&get("residual")),
            gate: get("gate").data()[0],
        }
    }
}

/// `x` (row vector) times `w` (rows x cols).
pub fn vecmat(x: &[f64], w: &[Vec<f64>]) -> Vec<f64> {
    let cols = w[0].len();
    let mut out = vec![0.0; cols];
    for (i, xi) in x.iter().enumerate() {
        for j in 0..cols {
            out[j] += xi * w[i][j];
        }
    }
    out
}

pub struct DenseOut {
    pub output: Vec<Vec<f64>>,
    /// `edges x heads`
    pub attention: Vec<Vec<f64>>,
    pub relation: Vec<Vec<f64>>,
    pub messages: Vec<Vec<f64>>,
}

/// One encoder layer, computed edge by edge.
pub fn dense_layer(e: &[Vec<f64>], edges: &[Triple], n_types: usize, p: &DenseLayer, heads: usize) -> DenseOut {
    let n = e.len();
    let d = e[0].len();
    let dh = d / heads;
    let mut relation = Vec::with_capacity(n_types);
    for r in 0..n_types {
        let hs: BTreeSet<usize> = edges.iter().filter(|x| x.1 == r).map(|x| x.0).collect();
        let ts: BTreeSet<usize> = edges.iter().filter(|x| x.1 == r).map(|x| x.2).collect();
        let mut row = Vec::with_capacity(d);
        for (set, w, b) in [(&hs, &p.head_proj, &p.head_bias), (&ts, &p.tail_proj, &p.tail_bias)] {
            let mut acc = vec![0.0; d / 2];
            for &x in set {
                let y = vecmat(&e[x], w);
                for k in 0..d / 2 {
                    acc[k] += (y[k] + b[k]) / set.len() as f64;
                }
            }
            row.extend(acc);
        }
        relation.push(row.into_iter().map(|v: f64| v.max(0.0)).collect::<Vec<_>>());
    }
    let mut scores = vec![vec![0.0; heads]; edges.len()];
    let mut messages = Vec::with_capacity(edges.len());
    for (j, &(h, r, t)) in edges.iter().enumerate() {
        let k = vecmat(&e[h], &p.key);
        let q = vecmat(&e[t], &p.query);
        let v = vecmat(&e[t], &p.value);
        let mut msg = Vec::with_capacity(2 * d);
        for i in 0..heads {
            let mut s = 0.0;
            for c in 0..dh {
                let rc = relation[r][i * dh + c];
                s += p.attn[c] * k[i * dh + c] * rc;
                s += p.attn[dh + c] * q[i * dh + c] * rc;
            }
            scores[j][i] = s / (dh as f64).sqrt();
            msg.extend_from_slice(&v[i * dh..(i + 1) * dh]);
            msg.extend_from_slice(&relation[r][i * dh..(i + 1) * dh]);
        }
        messages.push(msg);
    }
    let mut attention = vec![vec![0.0; heads]; edges.len()];
    for h in 0..n {
        let idx: Vec<usize> = (0..edges.len()).filter(|&j| edges[j].0 == h).collect();
        for i in 0..heads {
            let z: f64 = idx.iter().map(|&j| scores[j][i].exp()).sum();
            for &j in &idx {
                attention[j][i] = scores[j][i].exp() / z;
            }
        }
    }
    let s = 1.0 / (1.0 + (-p.gate).exp());
    let mut output = Vec::with_capacity(n);
    for h in 0..n {
        let mut upd = vec![0.0; 2 * d];
        for (j, x) in edges.iter().enumerate() {
            if x.0 != h {
                continue;
            }
            for i in 0..heads {
                for c in 0..2 * dh {
                    upd[i * 2 * dh + c] += attention[j][i] * messages[j][i * 2 * dh + c];
                }
            }
        }
        let a = vecmat(&upd, &p.agg);
        let res = vecmat(&e[h], &p.residual);
        output.push((0..d).map(|k| s * a[k] + (1.0 - s) * res[k]).collect());
    }
    DenseOut {
        output,
        attention,
        relation,
        messages,
    }
}

pub fn max_abs_diff(a: &[Vec<f64>], b: &Matrix) -> f64 {
    let mut m: f64 = 0.0;
    for (r, row) in a.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            m = m.max((v - b.get(r, c)).abs());
        }
    }
    m
}

//! Whole-criterion checks, shared by the core integration tests and the
//! acceptance target.

use std::collections::BTreeMap;
use std::sync::Arc;

use kgalign_core::kg::{AlignmentSeeds, EntityId, Train};
use kgalign_core::rhgt::{encode_on_tape, heterogeneous_attention, relation_embedding, EdgeList, EncoderConfig, LayerVars, RhgtParams};
use kgalign_core::rpr::{mine, MineConfig};
use kgalign_core::tensor::{Matrix, ParamStore, SegmentIndex, Tape, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

pub struct MineCase {
    pub t1: Vec<Triple>,
    pub t2: Vec<Triple>,
    pub names1: Vec<Vec<f64>>,
    pub names2: Vec<Vec<f64>>,
    pub seeds: Vec<(usize, usize)>,
}

/// A random pair of graphs with <= 50 entities and <= 200 triples each.
/// The second graph partly copies the first so that matches occur.
pub fn random_mine_case(seed: u64) -> MineCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(8..=50);
    let n_rel = rng.gen_range(1..=5);
    let m = rng.gen_range(n..=200);
    let t1 = random_triples(&mut rng, n, n_rel, m);
    let mut t2: Vec<Triple> = t1.iter().copied().filter(|_| rng.gen_bool(0.8)).collect();
    let extra = rng.gen_range(0..=(200 - t2.len()).min(40));
    t2.extend(random_triples(&mut rng, n, n_rel, extra));
    let d = 6;
    let names1 = random_rows(&mut rng, n, d);
    let names2: Vec<Vec<f64>> = names1
        .iter()
        .map(|row| row.iter().map(|v| v + rng.gen_range(-0.4..0.4)).collect())
        .collect();
    let ents1: BTreeSet<usize> = t1.iter().flat_map(|t| [t.0, t.2]).collect();
    let ents2: BTreeSet<usize> = t2.iter().flat_map(|t| [t.0, t.2]).collect();
    let mut seeds: Vec<(usize, usize)> = ents1.intersection(&ents2).copied().map(|e| (e, e)).collect();
    seeds.retain(|_| rng.gen_bool(0.5));
    if seeds.is_empty() {
        let e = *ents1.intersection(&ents2).next().unwrap_or(&t1[0].0);
        seeds.push((e, e));
    }
    MineCase {
        t1,
        t2,
        names1,
        names2,
        seeds,
    }
}

/// Library output as integer counts: `(all counted pairs, kept pairs)`.
pub fn library_mine(case: &MineCase, config: &MineConfig) -> Result<(IntCounts, IntCounts), String> {
    let kg1 = kg_from(&case.t1);
    let kg2 = kg_from(&case.t2);
    let n1 = names_for(&kg1, &case.names1);
    let n2 = names_for(&kg2, &case.names2);
    let mut pairs = Vec::new();
    for &(a, b) in &case.seeds {
        match (kg1.entity_id(&format!("e{a}")), kg2.entity_id(&format!("e{b}"))) {
            (Some(x), Some(y)) => pairs.push((x, y)),
            _ => return Err(format!("seed ({a}, {b}) missing from a graph")),
        }
    }
    let seeds = AlignmentSeeds::<Train>::new(pairs).map_err(|e| e.to_string())?;
    let out = mine(&kg1, &kg2, &seeds, &n1, &n2, config).map_err(|e| e.to_string())?;
    let convert = |m: &BTreeMap<(kgalign_core::RelPath, kgalign_core::RelPath), u64>| {
        m.iter()
            .map(|(&(p1, p2), &c)| ((int_path(&kg1, p1), int_path(&kg2, p2)), c))
            .collect::<BTreeMap<_, _>>()
    };
    Ok((convert(&out.reliable.counts), convert(&out.reliable.kept)))
}

/// Compares the miner to the brute-force reference on `cases` random
/// graph pairs; returns the number of kept pairs seen.
pub fn rpr_oracle_equivalence(cases: u64, tau_path: u64) -> Result<usize, String> {
    let mut kept_total = 0;
    for seed in 0..cases {
        let case = random_mine_case(seed);
        let config = MineConfig {
            tau_path,
            ..MineConfig::default()
        };
        let (counts, kept) = library_mine(&case, &config)?;
        let want_counts = ref_counts(&case.t1, &case.t2, &case.names1, &case.names2, &case.seeds, config.tau_sim);
        let want_kept = ref_kept(&want_counts, tau_path);
        if counts != want_counts {
            return Err(format!("case {seed}: counts differ ({} vs {} pairs)", counts.len(), want_counts.len()));
        }
        if kept != want_kept {
            return Err(format!("case {seed}: kept sets differ"));
        }
        kept_total += kept.len();
    }
    Ok(kept_total)
}

/// Kept sets for tau in {0, 1, 5, 20, inf} on one input; checks they
/// form a descending chain and returns their sizes.
pub fn tau_monotonicity() -> Result<Vec<usize>, String> {
    let case = dense_mine_case();
    let taus = [0, 1, 5, 20, u64::MAX];
    let mut sets = Vec::new();
    for tau in taus {
        let (_, kept) = library_mine(&case, &MineConfig { tau_path: tau, ..MineConfig::default() })?;
        sets.push(kept.keys().copied().collect::<BTreeSet<_>>());
    }
    for w in sets.windows(2) {
        if !w[1].is_subset(&w[0]) {
            return Err("kept set grew with a larger threshold".into());
        }
    }
    if sets[4].is_empty() && sets[0].len() > sets[3].len() && !sets[3].is_empty() {
        Ok(sets.iter().map(BTreeSet::len).collect())
    } else {
        Err(format!("degenerate chain {:?}", sets.iter().map(BTreeSet::len).collect::<Vec<_>>()))
    }
}

/// Enough seeds and repeated structure that counts span 0..=30 or more.
pub fn dense_mine_case() -> MineCase {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let n = 60;
    let t1 = random_triples(&mut rng, n, 3, 200);
    let names1 = random_rows(&mut rng, n, 8);
    let names2 = names1.clone();
    let mut t2 = t1.clone();
    t2.truncate(170);
    let seeds = (0..n).filter(|e| t1.iter().any(|t| t.0 == *e) && t2.iter().any(|t| t.0 == *e)).map(|e| (e, e)).collect();
    MineCase {
        t2,
        t1,
        names1,
        names2,
        seeds,
    }
}

fn m(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_rows(&random_rows(rng, r, c)).unwrap()
}

/// `(name, result)` for every differentiable op.
pub fn op_gradient_checks() -> Vec<(&'static str, Result<(), String>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let seg = Arc::new(SegmentIndex::new(vec![0, 2, 0, 1, 2, 2], 4).unwrap());
    let gather = Arc::new(vec![2, 0, 0, 3, 1]);
    let mut out = Vec::new();
    let a34 = m(&mut rng, 3, 4);
    let b42 = m(&mut rng, 4, 2);
    out.push(("matmul", grad_check(&[a34.clone(), b42], |t, v| t.matmul(v[0], v[1]).unwrap())));
    let c34 = m(&mut rng, 3, 4);
    out.push(("add", grad_check(&[a34.clone(), c34.clone()], |t, v| t.add(v[0], v[1]).unwrap())));
    out.push(("sub", grad_check(&[a34.clone(), c34.clone()], |t, v| t.sub(v[0], v[1]).unwrap())));
    out.push(("mul", grad_check(&[a34.clone(), c34.clone()], |t, v| t.mul(v[0], v[1]).unwrap())));
    let bias = m(&mut rng, 1, 4);
    out.push(("add_row", grad_check(&[a34.clone(), bias], |t, v| t.add_row(v[0], v[1]).unwrap())));
    out.push(("scale", grad_check(std::slice::from_ref(&a34), |t, v| t.scale(v[0], -1.7))));
    out.push(("add_scalar", grad_check(std::slice::from_ref(&a34), |t, v| t.add_scalar(v[0], 0.4))));
    let s = m(&mut rng, 1, 1);
    out.push(("scale_by", grad_check(&[s, a34.clone()], |t, v| t.scale_by(v[0], v[1]).unwrap())));
    out.push(("relu", grad_check(std::slice::from_ref(&a34), |t, v| t.relu(v[0]))));
    out.push(("sigmoid", grad_check(std::slice::from_ref(&a34), |t, v| t.sigmoid(v[0]))));
    let d32 = m(&mut rng, 3, 2);
    out.push(("concat_cols", grad_check(&[a34.clone(), d32], |t, v| t.concat_cols(&[v[0], v[1], v[0]]).unwrap())));
    out.push(("slice_cols", grad_check(std::slice::from_ref(&a34), |t, v| t.slice_cols(v[0], 1, 3).unwrap())));
    let e45 = m(&mut rng, 4, 5);
    out.push(("gather_rows", grad_check(&[e45], move |t, v| t.gather_rows(v[0], gather.clone()).unwrap())));
    let scores = Matrix::from_rows(&random_rows(&mut rng, 6, 2)).unwrap();
    let s1 = seg.clone();
    out.push(("segment_softmax", grad_check(std::slice::from_ref(&scores), move |t, v| t.segment_softmax(v[0], s1.clone()).unwrap())));
    let rows = m(&mut rng, 6, 3);
    let w = m(&mut rng, 6, 1);
    let s2 = seg.clone();
    out.push(("segment_sum", grad_check(&[rows.clone(), w], move |t, v| t.segment_sum(v[0], v[1], s2.clone()).unwrap())));
    let s3 = seg.clone();
    out.push((
        "segment_softmax+segment_sum",
        grad_check(&[rows, scores], move |t, v| {
            let col = t.slice_cols(v[1], 0, 1).unwrap();
            let a = t.segment_softmax(col, s3.clone()).unwrap();
            t.segment_sum(v[0], a, s3.clone()).unwrap()
        }),
    ));
    out.push(("l1_rows", grad_check(&[a34.clone(), c34], |t, v| t.l1_rows(v[0], v[1]).unwrap())));
    out.push(("sum", grad_check(&[a34], |t, v| t.sum(v[0]))));
    out
}

/// A graph with <= 10 entities for full-stack checks.
pub fn small_graph(seed: u64) -> (Vec<Vec<f64>>, Vec<Triple>, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 7;
    let mut triples = random_triples(&mut rng, n, 3, 14);
    triples.extend([(0, 0, 1), (1, 1, 2), (2, 2, 0)]);
    (random_rows(&mut rng, n, 8), triples, 3)
}

/// Finite-difference check of every parameter of a two-layer encoder and
/// of its input. Returns the number of scalars compared.
pub fn full_stack_gradient_check() -> Result<usize, String> {
    let (names, triples, n_types) = small_graph(5);
    let config = EncoderConfig { layers: 2, heads: 2, dim: 8 };
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let params = RhgtParams::init(&mut store, "rel", config, &mut rng).map_err(|e| e.to_string())?;
    // nonzero biases and gate so that every term is exercised
    for id in store.ids().collect::<Vec<_>>() {
        let name = store.name(id).to_owned();
        if name.ends_with("bias") || name.ends_with("gate") {
            for v in store.value_mut(id).data_mut() {
                *v = rng.gen_range(-0.5..0.5);
            }
        }
    }
    let edges = EdgeList::new(names.len(), n_types, &triples).map_err(|e| e.to_string())?;
    let input = Matrix::from_rows(&names).unwrap();
    let weights = Matrix::from_rows(&random_rows(&mut rng, names.len(), 8)).unwrap();
    let loss = |tape: &mut Tape, s: &ParamStore, x: Var| {
        let out = encode_on_tape(tape, s, &params, x, &edges).unwrap();
        let w = tape.constant(weights.clone());
        let p = tape.mul(out, w).unwrap();
        tape.sum(p)
    };
    let n = param_grad_check(&store, |tape, s| {
        let x = tape.constant(input.clone());
        loss(tape, s, x)
    })?;
    grad_check(std::slice::from_ref(&input), |tape, v| loss(tape, &store, v[0]))?;
    Ok(n + input.data().len())
}

/// Attention weights of the first layer on `graphs` random graphs; returns
/// the largest deviation of a per-(entity, head) sum from 1.
pub fn attention_normalization(graphs: u64) -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    for g in 0..graphs {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + g);
        let n = rng.gen_range(2..=30);
        let n_types = rng.gen_range(1..=4);
        let m = rng.gen_range(1..=80);
        let triples = random_triples(&mut rng, n, n_types, m);
        let heads = [1, 2, 4][rng.gen_range(0..3)];
        let config = EncoderConfig { layers: 1, heads, dim: 8 };
        let mut store = ParamStore::new();
        let params = RhgtParams::init(&mut store, "rel", config, &mut rng).map_err(|e| e.to_string())?;
        // large weights push scores far from zero
        let scale = rng.gen_range(1.0..5.0);
        for id in store.ids().collect::<Vec<_>>() {
            for v in store.value_mut(id).data_mut() {
                *v *= scale;
            }
        }
        let edges = EdgeList::compacted(n, &triples).map_err(|e| e.to_string())?;
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::from_rows(&random_rows(&mut rng, n, 8)).unwrap());
        let lv = LayerVars::load(&mut tape, &store, &params.layers[0]);
        let rel = relation_embedding(&mut tape, x, &edges, &lv).map_err(|e| e.to_string())?;
        let attn = heterogeneous_attention(&mut tape, x, rel, &edges, &lv, &config).map_err(|e| e.to_string())?;
        let a = tape.value(attn);
        let mut sums = vec![vec![0.0; heads]; n];
        for (j, &h) in edges.heads().iter().enumerate() {
            for i in 0..heads {
                let w = a.get(j, i);
                if !(w >= 0.0 && w.is_finite()) {
                    return Err(format!("graph {g}: invalid weight {w}"));
                }
                sums[h][i] += w;
            }
        }
        for (h, row) in sums.iter().enumerate() {
            if edges.heads().contains(&h) {
                for s in row {
                    worst = worst.max((s - 1.0).abs());
                }
            }
        }
    }
    Ok(worst)
}

pub fn seeds_from(pairs: &[(usize, usize)]) -> AlignmentSeeds<Train> {
    AlignmentSeeds::new(pairs.iter().map(|&(a, b)| (EntityId(a), EntityId(b))).collect()).unwrap()
}

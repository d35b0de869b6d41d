//! Dual-channel margin ranking training.
//!
//! Both graphs are encoded by a shared relation-structure stack and a
//! shared path-structure stack. The loss is a hinge over Manhattan
//! distances, `[d(p, q) - d(p', q') + gamma]_+`, summed over every
//! positive pair and its own negatives, with the path channel weighted by
//! `theta`. Training is full batch with Adam, and keeps the parameters
//! with the best validation Hits@1.

use std::collections::HashSet;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{KgError, Result};
use crate::eval::{evaluate, Candidates, ChannelEmbeddings};
use crate::kg::{AlignmentSeeds, EmbeddingMatrix, EntityId, Train, Valid};
use crate::rhgt::{encode, encode_on_tape, EdgeList, EncoderConfig, RhgtParams};
use crate::tensor::{l1, Adam, Matrix, ParamStore, Tape, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum NegativeStrategy {
    Random,
    #[default]
    Nearest,
}

impl std::str::FromStr for NegativeStrategy {
    type Err = KgError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Self::Random),
            "nearest" => Ok(Self::Nearest),
            other => Err(KgError::Invalid(format!("negative strategy must be `random` or `nearest`, got {other:?}"))),
        }
    }
}

impl std::fmt::Display for NegativeStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Random => "random",
            Self::Nearest => "nearest",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub gamma_rel: f64,
    pub gamma_path: f64,
    pub theta: f64,
    pub negatives_per_pair: usize,
    pub strategy: NegativeStrategy,
    /// Negatives are redrawn every this many epochs.
    pub resample_every: usize,
    pub epochs: usize,
    pub lr: f64,
    pub eval_every: usize,
    pub patience: usize,
    pub use_paths: bool,
    pub seed: u64,
    /// Path weight used when ranking validation candidates.
    pub theta_inf: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma_rel: 10.0,
            gamma_path: 10.0,
            theta: 0.3,
            negatives_per_pair: 5,
            strategy: NegativeStrategy::Nearest,
            resample_every: 10,
            epochs: 200,
            lr: 0.005,
            eval_every: 10,
            patience: 5,
            use_paths: true,
            seed: 42,
            theta_inf: 0.3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_rel > 0.0 && self.gamma_path > 0.0) {
            return Err(KgError::Invalid("margins must be positive".into()));
        }
        if self.theta.is_nan() || self.theta < 0.0 {
            return Err(KgError::Invalid("theta must be non-negative".into()));
        }
        if self.negatives_per_pair == 0 {
            return Err(KgError::Invalid("need at least one negative per pair".into()));
        }
        if self.resample_every == 0 || self.eval_every == 0 {
            return Err(KgError::Invalid("resample_every and eval_every must be positive".into()));
        }
        Ok(())
    }
}

/// A corrupted pair tied to the positive at index `pos` of the seed list.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NegPair {
    pub pos: usize,
    pub left: EntityId,
    pub right: EntityId,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NegativeSet {
    pub rel: Vec<NegPair>,
    pub path: Vec<NegPair>,
}

/// Negatives for one channel: for every positive `(p, q)`, `k` pairs
/// `(p', q)` and `k` pairs `(p, q')`.
pub fn sample_channel(
    seeds: &[(EntityId, EntityId)],
    e1: &EmbeddingMatrix,
    e2: &EmbeddingMatrix,
    k: usize,
    strategy: NegativeStrategy,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<NegPair>> {
    if k == 0 {
        return Err(KgError::Invalid("need at least one negative per pair".into()));
    }
    let (n1, n2) = (e1.rows(), e2.rows());
    if n1 < k + 1 || n2 < k + 1 {
        return Err(KgError::Invalid(format!(
            "cannot draw {k} negatives from graphs with {n1} / {n2} entities"
        )));
    }
    match strategy {
        NegativeStrategy::Random => {
            let mut out = Vec::with_capacity(seeds.len() * 2 * k);
            for (pos, &(p, q)) in seeds.iter().enumerate() {
                for _ in 0..k {
                    let left = loop {
                        let c = EntityId(rng.gen_range(0..n1));
                        if c != p {
                            break c;
                        }
                    };
                    out.push(NegPair { pos, left, right: q });
                }
                for _ in 0..k {
                    let right = loop {
                        let c = EntityId(rng.gen_range(0..n2));
                        if c != q {
                            break c;
                        }
                    };
                    out.push(NegPair { pos, left: p, right });
                }
            }
            Ok(out)
        }
        NegativeStrategy::Nearest => {
            let per_pair: Vec<Vec<NegPair>> = seeds
                .par_iter()
                .enumerate()
                .map(|(pos, &(p, q))| {
                    let mut v = Vec::with_capacity(2 * k);
                    for left in nearest(e2.row(q), e1, p, k) {
                        v.push(NegPair { pos, left, right: q });
                    }
                    for right in nearest(e1.row(p), e2, q, k) {
                        v.push(NegPair { pos, left: p, right });
                    }
                    v
                })
                .collect();
            Ok(per_pair.into_iter().flatten().collect())
        }
    }
}

/// The `k` rows of `pool` closest to `query` in Manhattan distance,
/// excluding `skip`; ties by ascending id.
pub fn nearest(query: &[f64], pool: &EmbeddingMatrix, skip: EntityId, k: usize) -> Vec<EntityId> {
    let mut d: Vec<(f64, usize)> = (0..pool.rows())
        .filter(|&i| i != skip.0)
        .map(|i| (l1(query, pool.matrix().row(i)), i))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < d.len() {
        d.select_nth_unstable_by(k, cmp);
        d.truncate(k);
    }
    d.sort_by(cmp);
    d.into_iter().map(|x| EntityId(x.1)).collect()
}

/// Draws negatives for both channels. Each channel has its own random
/// stream derived from `epoch_seed`.
pub fn sample_negatives(
    seeds: &AlignmentSeeds<Train>,
    emb: &ChannelEmbeddings,
    k: usize,
    strategy: NegativeStrategy,
    epoch_seed: u64,
) -> Result<NegativeSet> {
    let mut rel_rng = ChaCha8Rng::seed_from_u64(epoch_seed);
    rel_rng.set_stream(1);
    let rel = sample_channel(seeds.pairs(), &emb.rel1, &emb.rel2, k, strategy, &mut rel_rng)?;
    let path = match &emb.path {
        Some((p1, p2)) => {
            let mut path_rng = ChaCha8Rng::seed_from_u64(epoch_seed);
            path_rng.set_stream(2);
            sample_channel(seeds.pairs(), p1, p2, k, strategy, &mut path_rng)?
        }
        None => Vec::new(),
    };
    Ok(NegativeSet { rel, path })
}

/// `sum [d(p, q) - d(p', q') + gamma]_+` for one channel, as a `1 x 1` node.
pub fn channel_hinge(
    tape: &mut Tape,
    e1: Var,
    e2: Var,
    seeds: &[(EntityId, EntityId)],
    negs: &[NegPair],
    gamma: f64,
) -> Result<Var> {
    if negs.is_empty() {
        return Ok(tape.constant(Matrix::scalar(0.0)));
    }
    let idx = |f: &dyn Fn(usize) -> usize, n: usize| Arc::new((0..n).map(f).collect::<Vec<_>>());
    let pl = tape.gather_rows(e1, idx(&|i| seeds[i].0 .0, seeds.len()))?;
    let pr = tape.gather_rows(e2, idx(&|i| seeds[i].1 .0, seeds.len()))?;
    let d_pos = tape.l1_rows(pl, pr)?;
    let nl = tape.gather_rows(e1, idx(&|i| negs[i].left.0, negs.len()))?;
    let nr = tape.gather_rows(e2, idx(&|i| negs[i].right.0, negs.len()))?;
    let d_neg = tape.l1_rows(nl, nr)?;
    let d_pos = tape.gather_rows(d_pos, idx(&|i| negs[i].pos, negs.len()))?;
    let diff = tape.sub(d_pos, d_neg)?;
    let shifted = tape.add_scalar(diff, gamma);
    let hinge = tape.relu(shifted);
    Ok(tape.sum(hinge))
}

/// The full objective. `path` is `None` when paths are disabled, in which
/// case the path term is not built at all.
pub fn margin_loss(
    tape: &mut Tape,
    rel: (Var, Var),
    path: Option<(Var, Var)>,
    seeds: &AlignmentSeeds<Train>,
    negs: &NegativeSet,
    config: &TrainConfig,
) -> Result<Var> {
    if seeds.is_empty() {
        return Err(KgError::Invalid("loss needs at least one seed pair".into()));
    }
    let rel_term = channel_hinge(tape, rel.0, rel.1, seeds.pairs(), &negs.rel, config.gamma_rel)?;
    match path {
        Some((p1, p2)) if config.use_paths => {
            let path_term = channel_hinge(tape, p1, p2, seeds.pairs(), &negs.path, config.gamma_path)?;
            let weighted = tape.scale(path_term, config.theta);
            Ok(tape.add(rel_term, weighted)?)
        }
        _ => Ok(rel_term),
    }
}

/// Everything the trainer reads.
pub struct TrainInputs<'a> {
    pub names1: &'a EmbeddingMatrix,
    pub names2: &'a EmbeddingMatrix,
    pub rel_edges1: &'a EdgeList,
    pub rel_edges2: &'a EdgeList,
    /// Path-structure edges of both graphs; required when paths are used.
    pub path_edges: Option<(&'a EdgeList, &'a EdgeList)>,
    pub train: &'a AlignmentSeeds<Train>,
    pub valid: &'a AlignmentSeeds<Valid>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_hits1: Option<f64>,
}

/// Counters used to verify the ablation and gradient-flow contracts.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainTrace {
    pub rel_encodes: usize,
    pub path_encodes: usize,
    /// Per parameter (store order): whether any step saw a nonzero gradient.
    pub param_had_grad: Vec<bool>,
    pub best_epoch: Option<usize>,
}

pub struct TrainedModel {
    pub store: ParamStore,
    pub rel: RhgtParams,
    pub path: Option<RhgtParams>,
    pub embeddings: ChannelEmbeddings,
    pub history: Vec<EpochRecord>,
    pub trace: TrainTrace,
}

impl TrainedModel {
    pub fn history_csv(&self) -> String {
        let mut out = String::from("epoch,loss,val_hits1\n");
        for r in &self.history {
            let v = r.val_hits1.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{}\n", r.epoch, r.loss, v));
        }
        out
    }
}

/// Initializes the relation stack and, when `use_paths`, the path stack.
pub fn init_params(
    encoder: EncoderConfig,
    use_paths: bool,
    seed: u64,
) -> Result<(ParamStore, RhgtParams, Option<RhgtParams>)> {
    let mut store = ParamStore::new();
    let mut rel_rng = ChaCha8Rng::seed_from_u64(seed);
    rel_rng.set_stream(10);
    let rel = RhgtParams::init(&mut store, "rel", encoder, &mut rel_rng)?;
    let path = if use_paths {
        let mut path_rng = ChaCha8Rng::seed_from_u64(seed);
        path_rng.set_stream(11);
        Some(RhgtParams::init(&mut store, "path", encoder, &mut path_rng)?)
    } else {
        None
    };
    Ok((store, rel, path))
}

/// Encodes both graphs with the given parameters.
pub fn embed_all(
    inputs: &TrainInputs<'_>,
    store: &ParamStore,
    rel: &RhgtParams,
    path: Option<&RhgtParams>,
) -> Result<ChannelEmbeddings> {
    let rel1 = encode(inputs.names1, inputs.rel_edges1, store, rel)?;
    let rel2 = encode(inputs.names2, inputs.rel_edges2, store, rel)?;
    let path = match (path, inputs.path_edges) {
        (Some(p), Some((pe1, pe2))) => Some((
            encode(inputs.names1, pe1, store, p)?,
            encode(inputs.names2, pe2, store, p)?,
        )),
        _ => None,
    };
    Ok(ChannelEmbeddings { rel1, rel2, path })
}

pub fn train(inputs: &TrainInputs<'_>, encoder: EncoderConfig, config: &TrainConfig) -> Result<TrainedModel> {
    config.validate()?;
    encoder.validate()?;
    if inputs.train.is_empty() {
        return Err(KgError::Invalid("training needs at least one seed pair".into()));
    }
    if config.use_paths && inputs.path_edges.is_none() {
        return Err(KgError::Invalid("paths enabled but no path structure supplied".into()));
    }
    let (mut store, rel, path) = init_params(encoder, config.use_paths, config.seed)?;
    let mut adam = Adam::new(config.lr);
    let mut trace = TrainTrace {
        param_had_grad: vec![false; store.len()],
        ..Default::default()
    };
    let mut history = Vec::new();
    let mut negs = NegativeSet::default();
    let mut best: Option<(f64, Vec<Matrix>)> = None;
    let mut bad_evals = 0;

    for epoch in 1..=config.epochs {
        let mut tape = Tape::new();
        let n1 = tape.constant(inputs.names1.matrix().clone());
        let n2 = tape.constant(inputs.names2.matrix().clone());
        let r1 = encode_on_tape(&mut tape, &store, &rel, n1, inputs.rel_edges1)?;
        let r2 = encode_on_tape(&mut tape, &store, &rel, n2, inputs.rel_edges2)?;
        trace.rel_encodes += 2;
        let p = match (&path, inputs.path_edges) {
            (Some(pp), Some((pe1, pe2))) if config.use_paths => {
                let a = encode_on_tape(&mut tape, &store, pp, n1, pe1)?;
                let b = encode_on_tape(&mut tape, &store, pp, n2, pe2)?;
                trace.path_encodes += 2;
                Some((a, b))
            }
            _ => None,
        };

        let outputs = [Some(r1), Some(r2), p.map(|x| x.0), p.map(|x| x.1)];
        if outputs.iter().flatten().any(|&v| !tape.value(v).is_finite()) {
            return Err(KgError::Diverged { epoch, loss: f64::NAN });
        }

        if (epoch - 1) % config.resample_every == 0 {
            let current = ChannelEmbeddings {
                rel1: EmbeddingMatrix::new(tape.value(r1).clone())?,
                rel2: EmbeddingMatrix::new(tape.value(r2).clone())?,
                path: match p {
                    Some((a, b)) => Some((
                        EmbeddingMatrix::new(tape.value(a).clone())?,
                        EmbeddingMatrix::new(tape.value(b).clone())?,
                    )),
                    None => None,
                },
            };
            let epoch_seed = config.seed.wrapping_mul(1_000_003).wrapping_add(epoch as u64);
            negs = sample_negatives(inputs.train, &current, config.negatives_per_pair, config.strategy, epoch_seed)?;
        }

        let loss = margin_loss(&mut tape, (r1, r2), p, inputs.train, &negs, config)?;
        let loss_value = tape.value(loss).data()[0];
        if !loss_value.is_finite() {
            return Err(KgError::Diverged {
                epoch,
                loss: loss_value,
            });
        }
        let grads = tape.backward(loss)?;
        tape.accumulate_param_grads(&grads, &mut store);
        for (seen, id) in trace.param_had_grad.iter_mut().zip(store.ids()) {
            *seen |= store.grad(id).data().iter().any(|&g| g != 0.0);
        }
        adam.step(&mut store);

        let mut record = EpochRecord {
            epoch,
            loss: loss_value,
            val_hits1: None,
        };
        if !inputs.valid.is_empty() && (epoch % config.eval_every == 0 || epoch == config.epochs) {
            let emb = embed_all(inputs, &store, &rel, path.as_ref())?;
            let h1 = evaluate(inputs.valid, &emb, config.theta_inf, &[1], Candidates::All).hits[0];
            record.val_hits1 = Some(h1);
            log::info!("epoch {epoch}: loss {loss_value:.4}, valid hits@1 {h1:.4}");
            if best.as_ref().is_none_or(|(b, _)| h1 > *b) {
                best = Some((h1, store.snapshot()));
                trace.best_epoch = Some(epoch);
                bad_evals = 0;
            } else {
                bad_evals += 1;
            }
            history.push(record);
            if bad_evals >= config.patience {
                log::info!("early stop at epoch {epoch}");
                break;
            }
        } else {
            log::debug!("epoch {epoch}: loss {loss_value:.4}");
            history.push(record);
        }
    }

    if let Some((_, snapshot)) = &best {
        store.restore(snapshot);
    }
    let embeddings = embed_all(inputs, &store, &rel, path.as_ref())?;
    Ok(TrainedModel {
        store,
        rel,
        path,
        embeddings,
        history,
        trace,
    })
}

/// Entities of the first graph that appear in `seeds`.
pub fn seed_entities<R>(seeds: &AlignmentSeeds<R>) -> HashSet<EntityId> {
    seeds.pairs().iter().map(|p| p.0).collect()
}

//! Alignment inference and ranking metrics.
//!
//! Candidates are ranked by the fused distance
//! `d_rel(i, j) + theta * d_path(i, j)` (Manhattan distances), ties broken
//! by ascending entity id.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{KgError, Result};
use crate::kg::{split_links, AlignmentSeeds, EmbeddingMatrix, EntityId, SeedSplit, SplitRatio};
use crate::rpr::cosine;
use crate::tensor::l1;

/// Relation- and (optionally) path-based embeddings of both graphs.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelEmbeddings {
    pub rel1: EmbeddingMatrix,
    pub rel2: EmbeddingMatrix,
    pub path: Option<(EmbeddingMatrix, EmbeddingMatrix)>,
}

impl ChannelEmbeddings {
    pub fn relation_only(rel1: EmbeddingMatrix, rel2: EmbeddingMatrix) -> Self {
        Self {
            rel1,
            rel2,
            path: None,
        }
    }

    pub fn n_entities2(&self) -> usize {
        self.rel2.rows()
    }

    /// The fusion weight actually used: zero when there is no path channel.
    pub fn effective_theta(&self, theta_inf: f64) -> f64 {
        if self.path.is_some() {
            theta_inf
        } else {
            0.0
        }
    }
}

/// Manhattan distance between row `pair.0` of `e1` and row `pair.1` of `e2`.
pub fn l1_distance(e1: &EmbeddingMatrix, e2: &EmbeddingMatrix, pair: (EntityId, EntityId)) -> f64 {
    l1(e1.row(pair.0), e2.row(pair.1))
}

pub fn fused_distance(emb: &ChannelEmbeddings, theta_inf: f64, i: EntityId, j: EntityId) -> f64 {
    let rel = l1_distance(&emb.rel1, &emb.rel2, (i, j));
    match &emb.path {
        Some((p1, p2)) if theta_inf != 0.0 => rel + theta_inf * l1_distance(p1, p2, (i, j)),
        _ => rel,
    }
}

/// Which second-graph entities compete for each test pair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Candidates {
    #[default]
    All,
    /// Only the second-graph entities of the test pairs.
    Test,
}

impl std::str::FromStr for Candidates {
    type Err = KgError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Candidates::All),
            "test" => Ok(Candidates::Test),
            other => Err(KgError::Invalid(format!("candidates must be `all` or `test`, got {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankingResult {
    /// 1-based rank of the true counterpart, in test-pair order.
    pub ranks: Vec<usize>,
    pub ks: Vec<usize>,
    pub hits: Vec<f64>,
    pub mrr: f64,
}

impl RankingResult {
    pub fn from_ranks(ranks: Vec<usize>, ks: &[usize]) -> Self {
        let n = ranks.len().max(1) as f64;
        let hits = ks
            .iter()
            .map(|&k| ranks.iter().filter(|&&r| r <= k).count() as f64 / n)
            .collect();
        let mrr = ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n;
        Self {
            ranks,
            ks: ks.to_vec(),
            hits,
            mrr,
        }
    }

    pub fn hits_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.hits[i])
    }

    pub fn n(&self) -> usize {
        self.ranks.len()
    }

    pub fn mean_rank(&self) -> f64 {
        self.ranks.iter().sum::<usize>() as f64 / self.ranks.len().max(1) as f64
    }

    /// Hits@1/5/10, MRR and the number of test pairs; ranks are dropped.
    pub fn report(&self) -> MetricReport {
        let at = |k| {
            self.hits_at(k)
                .unwrap_or_else(|| self.ranks.iter().filter(|&&r| r <= k).count() as f64 / self.n().max(1) as f64)
        };
        MetricReport {
            hits1: at(1),
            hits5: at(5),
            hits10: at(10),
            mrr: self.mrr,
            n: self.n(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    pub hits1: f64,
    pub hits5: f64,
    pub hits10: f64,
    pub mrr: f64,
    pub n: usize,
}

/// Rank of `target` for `source` among `candidates`: one plus the number
/// of strictly closer candidates plus equally distant ones with a smaller id.
pub fn rank_of(
    emb: &ChannelEmbeddings,
    theta_inf: f64,
    source: EntityId,
    target: EntityId,
    candidates: &[EntityId],
) -> usize {
    let dt = fused_distance(emb, theta_inf, source, target);
    1 + candidates
        .iter()
        .filter(|&&c| c != target)
        .filter(|&&c| {
            let dc = fused_distance(emb, theta_inf, source, c);
            dc < dt || (dc == dt && c < target)
        })
        .count()
}

pub fn evaluate<R: Sync>(
    test: &AlignmentSeeds<R>,
    emb: &ChannelEmbeddings,
    theta_inf: f64,
    ks: &[usize],
    candidates: Candidates,
) -> RankingResult {
    let theta = emb.effective_theta(theta_inf);
    let pool: Vec<EntityId> = match candidates {
        Candidates::All => (0..emb.n_entities2()).map(EntityId).collect(),
        Candidates::Test => {
            let mut v: Vec<EntityId> = test.pairs().iter().map(|p| p.1).collect();
            v.sort_unstable();
            v
        }
    };
    let ranks: Vec<usize> = test
        .pairs()
        .par_iter()
        .map(|&(i, j)| rank_of(emb, theta, i, j, &pool))
        .collect();
    RankingResult::from_ranks(ranks, ks)
}

/// The `top_k` closest second-graph entities for `source`, as
/// `(candidate, distance)` in rank order.
pub fn top_candidates(
    emb: &ChannelEmbeddings,
    theta_inf: f64,
    source: EntityId,
    top_k: usize,
) -> Vec<(EntityId, f64)> {
    let theta = emb.effective_theta(theta_inf);
    let mut all: Vec<(EntityId, f64)> = (0..emb.n_entities2())
        .map(|j| (EntityId(j), fused_distance(emb, theta, source, EntityId(j))))
        .collect();
    let cmp = |a: &(EntityId, f64), b: &(EntityId, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
    if top_k < all.len() {
        all.select_nth_unstable_by(top_k, cmp);
        all.truncate(top_k);
    }
    all.sort_by(cmp);
    all
}

/// Ranking with the raw name embeddings standing in for the relation channel.
pub fn name_only_baseline<R: Sync>(
    test: &AlignmentSeeds<R>,
    names1: &EmbeddingMatrix,
    names2: &EmbeddingMatrix,
    ks: &[usize],
) -> RankingResult {
    let emb = ChannelEmbeddings::relation_only(names1.clone(), names2.clone());
    evaluate(test, &emb, 0.0, ks, Candidates::All)
}

/// The `ceil(fraction * n)` links whose names are least similar (cosine,
/// ascending; ties keep input order).
pub fn make_harder_split(
    links: &[(EntityId, EntityId)],
    names1: &EmbeddingMatrix,
    names2: &EmbeddingMatrix,
    fraction: f64,
) -> Result<Vec<(EntityId, EntityId)>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(KgError::Invalid(format!("fraction must be in (0, 1], got {fraction}")));
    }
    let mut scored: Vec<(f64, (EntityId, EntityId))> = links
        .iter()
        .map(|&(a, b)| (cosine(names1.row(a), names2.row(b)), (a, b)))
        .collect();
    scored.sort_by(|x, y| x.0.total_cmp(&y.0));
    let keep = (fraction * links.len() as f64).ceil() as usize;
    Ok(scored.into_iter().take(keep).map(|s| s.1).collect())
}

/// [`make_harder_split`] followed by a fresh train/valid/test split.
pub fn harder_split(
    links: &[(EntityId, EntityId)],
    names1: &EmbeddingMatrix,
    names2: &EmbeddingMatrix,
    fraction: f64,
    ratio: SplitRatio,
    seed: u64,
) -> Result<SeedSplit> {
    split_links(make_harder_split(links, names1, names2, fraction)?, ratio, seed)
}

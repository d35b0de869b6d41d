//! Synthetic twin graphs with known alignment.
//!
//! The second graph is an isomorphic copy of the first with fresh entity
//! and relation URIs and a shuffled triple order, so entity ids differ
//! between the two. Names are Gaussian vectors; a fraction of the second
//! graph's names can be perturbed.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{KgError, Result};
use crate::kg::{write_links, EmbeddingMatrix, EntityId, KnowledgeGraph};
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct TwinConfig {
    pub entities: usize,
    pub relations: usize,
    /// Outgoing triples per entity.
    pub out_degree: usize,
    pub name_dim: usize,
    /// Fraction of second-graph names that receive noise.
    pub noise_fraction: f64,
    /// Noise standard deviation relative to the unit-variance names.
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for TwinConfig {
    fn default() -> Self {
        Self {
            entities: 200,
            relations: 4,
            out_degree: 3,
            name_dim: 32,
            noise_fraction: 0.0,
            noise_scale: 0.0,
            seed: 7,
        }
    }
}

pub struct TwinKg {
    pub kg1: KnowledgeGraph,
    pub kg2: KnowledgeGraph,
    pub names1: EmbeddingMatrix,
    pub names2: EmbeddingMatrix,
    /// Every true correspondence, ordered by first-graph id.
    pub links: Vec<(EntityId, EntityId)>,
}

pub fn twin_kg(config: &TwinConfig) -> Result<TwinKg> {
    let n = config.entities;
    if n < 2 || config.relations == 0 || config.out_degree == 0 || config.name_dim == 0 {
        return Err(KgError::Invalid("twin graph needs >= 2 entities, a relation, an edge and a name dimension".into()));
    }
    if !(0.0..=1.0).contains(&config.noise_fraction) || config.noise_scale.is_nan() || config.noise_scale < 0.0 {
        return Err(KgError::Invalid("noise fraction must be in [0, 1] and scale non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut triples = Vec::with_capacity(n * config.out_degree);
    for h in 0..n {
        let mut tails = Vec::new();
        while tails.len() < config.out_degree.min(n - 1) {
            let t = rng.gen_range(0..n);
            if t != h && !tails.contains(&t) {
                tails.push(t);
            }
        }
        for t in tails {
            triples.push((h, rng.gen_range(0..config.relations), t));
        }
    }

    // second graph: relabel entities, rename relations, shuffle triple order
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let mut triples2 = triples.clone();
    triples2.shuffle(&mut rng);

    let uri1 = |e: usize| format!("kg1:e{e}");
    let uri2 = |e: usize| format!("kg2:x{}", perm[e]);
    let t1: Vec<(String, String, String)> = triples
        .iter()
        .map(|&(h, r, t)| (uri1(h), format!("kg1:r{r}"), uri1(t)))
        .collect();
    let t2: Vec<(String, String, String)> = triples2
        .iter()
        .map(|&(h, r, t)| (uri2(h), format!("kg2:p{r}"), uri2(t)))
        .collect();
    let kg1 = KnowledgeGraph::from_uri_triples(t1.iter().map(|(a, b, c)| (a.as_str(), b.as_str(), c.as_str())));
    let kg2 = KnowledgeGraph::from_uri_triples(t2.iter().map(|(a, b, c)| (a.as_str(), b.as_str(), c.as_str())));

    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let base: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..config.name_dim).map(|_| normal.sample(&mut rng)).collect())
        .collect();
    let mut noisy: Vec<usize> = (0..n).collect();
    noisy.shuffle(&mut rng);
    noisy.truncate((config.noise_fraction * n as f64).round() as usize);
    let mut perturbed = base.clone();
    for &e in &noisy {
        for v in perturbed[e].iter_mut() {
            *v += config.noise_scale * normal.sample(&mut rng);
        }
    }

    let mut rows1 = vec![Vec::new(); n];
    let mut rows2 = vec![Vec::new(); n];
    let mut links = Vec::with_capacity(n);
    for e in 0..n {
        let a = kg1.entity_id(&uri1(e)).expect("every entity has an out-edge");
        let b = kg2.entity_id(&uri2(e)).expect("every entity has an out-edge");
        rows1[a.0] = base[e].clone();
        rows2[b.0] = perturbed[e].clone();
        links.push((a, b));
    }
    links.sort();
    Ok(TwinKg {
        kg1,
        kg2,
        names1: EmbeddingMatrix::new(Matrix::from_rows(&rows1)?)?,
        names2: EmbeddingMatrix::new(Matrix::from_rows(&rows2)?)?,
        links,
    })
}

impl TwinKg {
    /// Writes `rel_triples_1`, `rel_triples_2`, `ent_links`,
    /// `ent_name_emb_1.tsv` and `ent_name_emb_2.tsv` into `dir`.
    pub fn write_dataset(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|source| KgError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        self.kg1.write_rel_triples(&dir.join("rel_triples_1"))?;
        self.kg2.write_rel_triples(&dir.join("rel_triples_2"))?;
        write_links(&dir.join("ent_links"), &self.links, &self.kg1, &self.kg2)?;
        self.names1.write_tsv(&self.kg1, &dir.join("ent_name_emb_1.tsv"))?;
        self.names2.write_tsv(&self.kg2, &dir.join("ent_name_emb_2.tsv"))?;
        Ok(())
    }
}

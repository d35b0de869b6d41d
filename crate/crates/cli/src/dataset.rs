//! Dataset, path and checkpoint directories on disk.
//!
//! A dataset directory holds `rel_triples_1`, `rel_triples_2`, `ent_links`,
//! `ent_name_emb_1.tsv` and `ent_name_emb_2.tsv`, and optionally a fixed
//! split as `train_links`, `valid_links` and `test_links`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use kgalign_core::kg::{load_embeddings, load_kg, read_links, split_links, write_links, AlignmentSeeds, SeedSplit, SplitRatio};
use kgalign_core::rhgt::{encode, EdgeList, EncoderConfig, RhgtParams};
use kgalign_core::rpr::read_path_vocab;
use kgalign_core::tensor::ParamStore;
use kgalign_core::{ChannelEmbeddings, EmbeddingMatrix, EntityId, KnowledgeGraph};
use serde::{Deserialize, Serialize};

use crate::config::Settings;

pub const REQUIRED: [&str; 5] = [
    "rel_triples_1",
    "rel_triples_2",
    "ent_links",
    "ent_name_emb_1.tsv",
    "ent_name_emb_2.tsv",
];
pub const SPLIT_FILES: [&str; 3] = ["train_links", "valid_links", "test_links"];

pub const PATH_VOCAB: &str = "path_vocab.tsv";
pub const PATH_TRIPLES: [&str; 2] = ["path_triples_1.tsv", "path_triples_2.tsv"];
pub const PATH_META: &str = "stats.json";

pub const PARAMS: &str = "params.tsv";
pub const CONFIG: &str = "config.toml";
pub const HISTORY: &str = "history.csv";
pub const CKPT_PATHS: &str = "paths";

pub struct Dataset {
    pub dir: PathBuf,
    pub kg1: KnowledgeGraph,
    pub kg2: KnowledgeGraph,
    pub names1: EmbeddingMatrix,
    pub names2: EmbeddingMatrix,
    pub links: Vec<(EntityId, EntityId)>,
    /// Split shipped with the dataset, if complete.
    pub fixed_split: Option<[Vec<(EntityId, EntityId)>; 3]>,
}

impl Dataset {
    /// Every file of `dir` that a run reads.
    pub fn files(dir: &Path) -> Vec<PathBuf> {
        let mut out: Vec<PathBuf> = REQUIRED.iter().map(|f| dir.join(f)).collect();
        out.extend(SPLIT_FILES.iter().map(|f| dir.join(f)).filter(|p| p.is_file()));
        out
    }

    pub fn load(dir: &Path) -> Result<Self> {
        for f in REQUIRED {
            let p = dir.join(f);
            if !p.is_file() {
                bail!("missing dataset file {}", p.display());
            }
        }
        let kg1 = load_kg(&dir.join("rel_triples_1"), None, None)?;
        let kg2 = load_kg(&dir.join("rel_triples_2"), None, None)?;
        let names1 = load_embeddings(&dir.join("ent_name_emb_1.tsv"), &kg1)?;
        let names2 = load_embeddings(&dir.join("ent_name_emb_2.tsv"), &kg2)?;
        if names1.dim() != names2.dim() {
            bail!(
                "name embeddings disagree in dimension: {} vs {}",
                names1.dim(),
                names2.dim()
            );
        }
        let links = read_links(&dir.join("ent_links"), &kg1, &kg2)?;
        AlignmentSeeds::<()>::new(links.clone())?;
        let fixed_split = if SPLIT_FILES.iter().all(|f| dir.join(f).is_file()) {
            let read = |f: &str| read_links(&dir.join(f), &kg1, &kg2);
            Some([read(SPLIT_FILES[0])?, read(SPLIT_FILES[1])?, read(SPLIT_FILES[2])?])
        } else {
            None
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            kg1,
            kg2,
            names1,
            names2,
            links,
            fixed_split,
        })
    }

    /// The shipped split when present, otherwise a seeded split of `ent_links`.
    pub fn split(&self, ratio: SplitRatio, seed: u64) -> Result<SeedSplit> {
        match &self.fixed_split {
            Some([t, v, s]) => {
                log::info!("using the split shipped in {}", self.dir.display());
                Ok(SeedSplit {
                    train: AlignmentSeeds::new(t.clone())?,
                    valid: AlignmentSeeds::new(v.clone())?,
                    test: AlignmentSeeds::new(s.clone())?,
                })
            }
            None => Ok(split_links(self.links.clone(), ratio, seed)?),
        }
    }

    pub fn write_split(&self, dir: &Path, split: &SeedSplit) -> Result<()> {
        write_links(&dir.join(SPLIT_FILES[0]), split.train.pairs(), &self.kg1, &self.kg2)?;
        write_links(&dir.join(SPLIT_FILES[1]), split.valid.pairs(), &self.kg1, &self.kg2)?;
        write_links(&dir.join(SPLIT_FILES[2]), split.test.pairs(), &self.kg1, &self.kg2)?;
        Ok(())
    }

    pub fn check_dim(&self, encoder: &EncoderConfig) -> Result<()> {
        if self.names1.dim() != encoder.dim {
            bail!(
                "name embeddings in {} have dimension {} but the encoder expects {}",
                self.dir.display(),
                self.names1.dim(),
                encoder.dim
            );
        }
        Ok(())
    }

    pub fn read_links(&self, file: &Path) -> Result<Vec<(EntityId, EntityId)>> {
        Ok(read_links(file, &self.kg1, &self.kg2)?)
    }
}

/// Sidecar written by `mine-paths` next to the path files.
#[derive(Debug, Serialize, Deserialize)]
pub struct PathMeta {
    pub inverse: bool,
    #[serde(default)]
    pub stats: serde_json::Value,
}

pub fn path_files(dir: &Path) -> Vec<PathBuf> {
    let mut out = vec![dir.join(PATH_VOCAB)];
    out.extend(PATH_TRIPLES.iter().map(|f| dir.join(f)));
    out.push(dir.join(PATH_META));
    out
}

/// Reads a mined path directory into path-structure edge lists.
pub fn load_path_edges(dir: &Path, kg1: &KnowledgeGraph, kg2: &KnowledgeGraph) -> Result<(EdgeList, EdgeList)> {
    for p in path_files(dir) {
        if !p.is_file() {
            bail!("missing path file {}", p.display());
        }
    }
    let meta_file = dir.join(PATH_META);
    let meta: PathMeta = serde_json::from_str(&fs::read_to_string(&meta_file)?)
        .with_context(|| format!("{}", meta_file.display()))?;
    let (mut k1, mut k2) = if meta.inverse {
        (kg1.with_inverse_relations(), kg2.with_inverse_relations())
    } else {
        (kg1.clone(), kg2.clone())
    };
    let (_, v1, v2) = read_path_vocab(&dir.join(PATH_VOCAB), &k1, &k2)?;
    let t1 = k1.read_path_triples(&dir.join(PATH_TRIPLES[0]), &v1)?;
    let t2 = k2.read_path_triples(&dir.join(PATH_TRIPLES[1]), &v2)?;
    k1.set_paths_with_triples(v1, t1)?;
    k2.set_paths_with_triples(v2, t2)?;
    Ok((EdgeList::from_path_triples(&k1)?, EdgeList::from_path_triples(&k2)?))
}

pub fn copy_files(files: &[PathBuf], to: &Path) -> Result<()> {
    fs::create_dir_all(to).with_context(|| format!("{}", to.display()))?;
    for f in files {
        let name = f.file_name().context("path has no file name")?;
        fs::copy(f, to.join(name)).with_context(|| format!("copying {}", f.display()))?;
    }
    Ok(())
}

/// A trained checkpoint directory.
pub struct Checkpoint {
    pub dir: PathBuf,
    pub settings: Settings,
    pub store: ParamStore,
}

impl Checkpoint {
    pub fn files(dir: &Path) -> Vec<PathBuf> {
        let mut out = vec![dir.join(PARAMS), dir.join(CONFIG)];
        out.extend(SPLIT_FILES.iter().map(|f| dir.join(f)));
        let paths = dir.join(CKPT_PATHS);
        if paths.is_dir() {
            out.extend(path_files(&paths));
        }
        out
    }

    /// Reads the stored settings; `overrides` then applies user layers on top.
    pub fn load(dir: &Path, overrides: impl FnOnce(&mut Settings) -> Result<()>) -> Result<Self> {
        for p in Checkpoint::files(dir) {
            if !p.is_file() {
                bail!("missing checkpoint file {}", p.display());
            }
        }
        let mut settings = Settings::default();
        let config = dir.join(CONFIG);
        settings
            .apply_file(&config)
            .map_err(|e| anyhow!("checkpoint config {}: {e:#}", config.display()))?;
        overrides(&mut settings)?;
        let params = dir.join(PARAMS);
        let text = fs::read_to_string(&params).with_context(|| format!("{}", params.display()))?;
        let store = ParamStore::from_checkpoint(&text).with_context(|| format!("{}", params.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            settings,
            store,
        })
    }

    pub fn uses_paths(&self) -> bool {
        self.settings.use_paths
    }

    /// Encodes both graphs of `data` with the stored parameters.
    pub fn embed(&self, data: &Dataset) -> Result<ChannelEmbeddings> {
        let encoder = self.settings.encoder()?;
        data.check_dim(&encoder)?;
        let rel = RhgtParams::from_store(&self.store, "rel", encoder)?;
        let rel1 = encode(&data.names1, &EdgeList::from_relation_triples(&data.kg1)?, &self.store, &rel)?;
        let rel2 = encode(&data.names2, &EdgeList::from_relation_triples(&data.kg2)?, &self.store, &rel)?;
        let path = if self.uses_paths() {
            let params = RhgtParams::from_store(&self.store, "path", encoder)?;
            let (pe1, pe2) = load_path_edges(&self.dir.join(CKPT_PATHS), &data.kg1, &data.kg2)?;
            Some((
                encode(&data.names1, &pe1, &self.store, &params)?,
                encode(&data.names2, &pe2, &self.store, &params)?,
            ))
        } else {
            None
        };
        Ok(ChannelEmbeddings { rel1, rel2, path })
    }

    /// Train and valid links: the alignments known at training time.
    pub fn seed_links(&self, data: &Dataset) -> Result<Vec<(EntityId, EntityId)>> {
        let mut out = data.read_links(&self.dir.join(SPLIT_FILES[0]))?;
        out.extend(data.read_links(&self.dir.join(SPLIT_FILES[1]))?);
        Ok(out)
    }

    pub fn test_links(&self, data: &Dataset) -> Result<Vec<(EntityId, EntityId)>> {
        data.read_links(&self.dir.join(SPLIT_FILES[2]))
    }
}

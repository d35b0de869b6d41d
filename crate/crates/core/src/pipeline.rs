//! Glue between mining, encoding structure and training.

use crate::error::Result;
use crate::kg::{AlignmentSeeds, EmbeddingMatrix, KnowledgeGraph, Train, Valid};
use crate::rhgt::{EdgeList, EncoderConfig};
use crate::rpr::{mine, MineConfig, MineStats};
use crate::train::{train, TrainConfig, TrainInputs, TrainedModel};

/// Both graphs with mined paths installed, plus the edge lists the
/// encoder consumes.
pub struct Prepared {
    pub kg1: KnowledgeGraph,
    pub kg2: KnowledgeGraph,
    pub rel_edges1: EdgeList,
    pub rel_edges2: EdgeList,
    pub path_edges: Option<(EdgeList, EdgeList)>,
    pub stats: Option<MineStats>,
}

impl Prepared {
    /// Relation structure only.
    pub fn without_paths(kg1: KnowledgeGraph, kg2: KnowledgeGraph) -> Result<Self> {
        Ok(Self {
            rel_edges1: EdgeList::from_relation_triples(&kg1)?,
            rel_edges2: EdgeList::from_relation_triples(&kg2)?,
            kg1,
            kg2,
            path_edges: None,
            stats: None,
        })
    }

    /// Path structure taken from paths already installed on the graphs.
    pub fn with_installed_paths(kg1: KnowledgeGraph, kg2: KnowledgeGraph) -> Result<Self> {
        let path_edges = Some((EdgeList::from_path_triples(&kg1)?, EdgeList::from_path_triples(&kg2)?));
        Ok(Self {
            path_edges,
            ..Self::without_paths(kg1, kg2)?
        })
    }

    pub fn mined(
        mut kg1: KnowledgeGraph,
        mut kg2: KnowledgeGraph,
        seeds: &AlignmentSeeds<Train>,
        names1: &EmbeddingMatrix,
        names2: &EmbeddingMatrix,
        config: &MineConfig,
    ) -> Result<Self> {
        let out = mine(&kg1, &kg2, seeds, names1, names2, config)?;
        kg1.set_paths_with_triples(out.vocab1, out.triples1)?;
        kg2.set_paths_with_triples(out.vocab2, out.triples2)?;
        Ok(Self {
            stats: Some(out.stats),
            ..Self::with_installed_paths(kg1, kg2)?
        })
    }

    pub fn inputs<'a>(
        &'a self,
        names1: &'a EmbeddingMatrix,
        names2: &'a EmbeddingMatrix,
        train: &'a AlignmentSeeds<Train>,
        valid: &'a AlignmentSeeds<Valid>,
    ) -> TrainInputs<'a> {
        TrainInputs {
            names1,
            names2,
            rel_edges1: &self.rel_edges1,
            rel_edges2: &self.rel_edges2,
            path_edges: self.path_edges.as_ref().map(|(a, b)| (a, b)),
            train,
            valid,
        }
    }

    pub fn train(
        &self,
        names1: &EmbeddingMatrix,
        names2: &EmbeddingMatrix,
        train_seeds: &AlignmentSeeds<Train>,
        valid: &AlignmentSeeds<Valid>,
        encoder: EncoderConfig,
        config: &TrainConfig,
    ) -> Result<TrainedModel> {
        train(&self.inputs(names1, names2, train_seeds, valid), encoder, config)
    }
}

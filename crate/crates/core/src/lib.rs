//! Entity alignment between two knowledge graphs.
//!
//! Reliable two-hop relation paths are mined from seed alignments, both
//! graphs are encoded by a relation-aware heterogeneous graph transformer
//! over relation and path structure, and the encoder is trained with a
//! two-channel margin loss. Alignment is ranked by Manhattan distance.

pub mod error;
pub mod eval;
pub mod kg;
pub mod pipeline;
pub mod rhgt;
pub mod rpr;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use error::{KgError, Result, TensorError};
pub use eval::{evaluate, Candidates, ChannelEmbeddings, MetricReport, RankingResult};
pub use kg::{AlignmentSeeds, EmbeddingMatrix, EntityId, KnowledgeGraph, PathId, RelPath, RelationId, SeedSplit, SplitRatio};
pub use rhgt::{EdgeList, EncoderConfig, RhgtParams};
pub use rpr::{mine, MineConfig, MineOutput, ReliablePathSet};
pub use train::{train, NegativeStrategy, TrainConfig, TrainInputs, TrainedModel};

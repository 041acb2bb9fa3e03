//! Knowledge graph embedding engine: triple storage, synthetic graph
//! generation, seven scoring models with analytic gradients, training,
//! rank-based evaluation, z-score anomaly assessment and sensitivity pruning.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod eval;
pub mod model;
pub mod pdqa;
pub mod prune;
pub mod synth;
pub mod train;
pub mod triples;

pub use error::{Error, Result};
pub use model::{EmbeddingModel, Gradients, ModelKind, NormKind, Side, Table};
pub use eval::{CandidateScorer, FilterIndex, RankOptions, RankingReport, TieRule};
pub use train::{train, train_model, LossKind, Profile, SamplerKind, TrainConfig, TrainReport};
pub use triples::{Dictionary, Split, Triple, TripleFormat, TripleStore};

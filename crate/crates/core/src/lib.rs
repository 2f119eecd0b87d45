//! High-order contrastive views over a LightGCN encoder.
//!
//! The crate covers the full pipeline: ingesting implicit-feedback logs
//! ([`dataset`]), building the normalized bipartite graph ([`graph`]),
//! propagating embeddings and reading out layer windows ([`encoder`]),
//! ranking and contrastive objectives with analytic gradients
//! ([`objectives`]), lazy-Adam training ([`training`]), full-ranking
//! evaluation ([`evaluation`]) and timing ([`bench`]).

pub mod bench;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod graph;
pub mod matrix;
pub mod objectives;
pub mod synth;
pub mod training;

pub use config::{make_variant, ModelConfig, RecReadout, VariantName};
pub use dataset::{InteractionDataset, RawInteraction, SplitRatios, TrainBatch};
pub use encoder::{aggregate, aggregate_adjoint, propagate, AggregationWindow, EmbeddingState};
pub use error::{Error, ErrorClass, Result};
pub use evaluation::{Metric, MetricsReport, RankingResult, Split};
pub use graph::NormalizedAdjacency;
pub use matrix::Matrix;
pub use objectives::{ContrastiveObjective, FusionMode, LossBreakdown, ObjectiveConfig};
pub use training::{train, AdamState, Checkpoint, Trainer, TrainOutcome};

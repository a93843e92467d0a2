//! Training-free token merging for Vision Transformers.
//!
//! Tokens are matched across a sequential A/B split by salience-weighted
//! cosine similarity, merged by salience-proportional averaging, and the
//! number of merges per layer follows the input's own redundancy relative
//! to calibrated per-layer statistics. A fixed-`r`, uniform-weight
//! configuration reproduces ToMe.

pub mod archive;
pub mod calibration;
pub mod dataset;
pub mod error;
pub mod flops;
pub mod matcher;
pub mod model;
pub mod numeric;
pub mod runtime;
pub mod salience;
pub mod schedule;
pub mod tokens;

pub use calibration::{load_stats, refine, save_stats, CalibrationConfig};
pub use dataset::{synth_dataset, Dataset, Redundancy, SynthConfig};
pub use error::{Error, Result};
pub use flops::{trace_flops, FlopsConvention, FlopsReport};
pub use matcher::{Aggregation, MergeDecision, Partition, Scoring, TieBreak};
pub use model::{synth_weights, ModelDims, ModelWeights};
pub use numeric::Matrix;
pub use runtime::{forward_model, Method, RunConfig, RunOutput, RunTrace};
pub use salience::{SalienceSource, SalienceVector};
pub use schedule::{LayerStats, ScheduleConfig, ScheduleMode};
pub use tokens::TokenSequence;

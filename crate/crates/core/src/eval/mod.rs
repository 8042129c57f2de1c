//! Leave-one-out evaluation, error metrics and the synthetic corpus used as
//! a ground-truth oracle.

mod loo;
mod metrics;
mod synthetic;

pub use loo::{loo_run, FoldOutcome, FoldPrediction, FoldPredictor, FoldRecord, LooReport, PipelinePredictor};
pub use metrics::{histogram, metrics, pairwise_sum, EvalReport, Histogram, Metrics, Residual};
pub use synthetic::{generate_synthetic, SyntheticCorpus, SyntheticSpec};

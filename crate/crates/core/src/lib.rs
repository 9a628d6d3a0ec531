//! Unsupervised graph-embedding benchmark: autodiff, graphs, encoders,
//! losses, metrics and the experiment harness.

pub mod autodiff;
pub mod datasets;
pub mod encoders;
pub mod error;
pub mod graph;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tensor;

pub use autodiff::{grad_check, gradient_entries, GradCheck, GradEntry, Gradients, Tape, Var};
pub use encoders::{Architecture, EncoderSpec, PreparedGraph};
pub use error::{Error, Result};
pub use graph::Graph;
pub use harness::{ExperimentConfig, MetricTable, RankSummary, Setting};
pub use losses::{enumerate_hybrids, BaseLoss, HybridLossSpec, LossContext};
pub use metrics::{evaluate_all, Metric, MetricVector};
pub use params::{ParameterSet, VarMap};
pub use tensor::{CsrMatrix, Tensor};

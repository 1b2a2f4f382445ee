//! Fair empirical risk minimization with f-divergence regularizers.
//!
//! The regularizer `D_f(P(ŷ, s) || P(ŷ) ⊗ P(s))` is rewritten through the
//! convex conjugate of `f` as a maximum over a dual matrix `A` of a
//! per-sample separable expression, which gives unbiased minibatch
//! gradients. Training is stochastic gradient descent on the model and
//! ascent on `A`. Two distributionally robust variants guard the fairness
//! term against shifts of the joint distribution.

pub mod classifier;
pub mod data;
pub mod divergence;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod metrics;
pub mod robust;
pub mod trainer;

pub use classifier::{Architecture, ModelParams, Prediction};
pub use data::{Batch, CsvSchema, Dataset};
pub use divergence::{DivergenceSpec, DualDomain, ProbVector};
pub use error::{FermError, Result};
pub use estimators::{BatchProbs, DualMatrix, GroupPriors};
pub use metrics::MetricsReport;
pub use robust::{RobustConfig, RobustMode};
pub use trainer::{FairnessNotion, TrainReport, TrainerConfig};

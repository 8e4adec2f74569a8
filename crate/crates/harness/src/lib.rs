//! Experiment harness: config-driven training of networks topped by a
//! softmax, L1-SVM or L2-SVM objective, with cross-objective evaluation,
//! warm starts, model averaging and finite-difference checks.

pub mod artifact;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod train;

pub use config::{DatasetKind, LayerSpec, RunConfig};
pub use data::{prepare, PreparedData};
pub use error::{HarnessError, Result};
pub use eval::{cross_objective_eval, ensemble_predict, CrossObjectiveReport, EvalConstants};
pub use metrics::MetricsRecord;
pub use model::{Model, Objective};
pub use train::{train, train_prepared, warm_start, warm_start_prepared, TrainOutcome};

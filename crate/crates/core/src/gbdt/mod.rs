//! Gradient-boosted decision trees: leaf-wise growth with exact splits,
//! L1/L2-regularized leaf weights, squared and logistic objectives.

mod booster;
mod cv;
mod dataset;
mod metrics;
mod tree;

pub use booster::{train, train_with_trace, GbdtModel, GbdtParams, Objective};
pub use cv::{cross_validate, fold_assignment, grid_search, CvResult, GridResult, ParamGrid};
pub use dataset::Dataset;
pub use metrics::{confusion_metrics, log_loss, mse, regression_metrics, ClassificationMetrics, RegressionMetrics};
pub use tree::DecisionTree;

//! End-to-end training, prediction, scoring and the comparison methods.

pub mod baselines;
pub mod metrics;
pub mod model;
pub mod report;

pub use baselines::{evaluate_sdgl, fit_lstm_head, run_baseline, run_method, LinearHead, Method, MethodRun};
pub use metrics::{coverage2sigma, mse, r2};
pub use model::{predict_sdgl, train_sdgl, MeanKind, SdglConfig, SdglModel, SdglPrediction, TrendModel};
pub use report::{read_summary, write_summary, EvalReport, SummaryRow, PREDICTION_HEADER, SUMMARY_HEADER};

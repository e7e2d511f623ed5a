//! Multi-task objective, training loop, metrics, and the modality
//! ablation harness.

mod ablation;
mod artifacts;
mod fidelity;
mod loss;
mod metrics;
mod run;

pub use ablation::{run_ablation, AblationEntry, AblationOutcome};
pub use fidelity::objective_grad_check;
pub use artifacts::{
    write_ablation_csv, write_confusion_csv, write_metrics_json, write_predictions_csv,
    write_subgroup_csv,
};
pub use loss::{total_loss, LossConfig};
pub use metrics::{
    regression_metrics, subgroup_report, RegressionMetrics, SubgroupRow, TargetMetrics,
};
pub use run::{
    evaluate, predict_scores, train, EpochStats, EvalOutcome, Pipeline, TrainConfig, TrainReport,
};

#[cfg(test)]
pub(crate) use run::tests as tests_support;

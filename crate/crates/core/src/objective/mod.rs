//! Deep-supervision loss and confusion-matrix metrics.

mod loss;
mod metrics;

pub use loss::{bce_loss, deep_supervision_loss, total_loss, total_loss_value, LossBreakdown};
pub use metrics::{confusion_matrix, ConfusionMatrix, MetricReport, UndefinedMetrics};

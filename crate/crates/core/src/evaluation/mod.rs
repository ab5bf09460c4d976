//! ROC/PR analysis over repeated cross-validation runs and activation-map export.

mod curves;
mod overlay;
mod report;

pub use curves::{auc, curve, merged_curve, pr_curve, roc_curve, write_curves_csv, Curve, CurveKind, Merge, ScoredSet, UndefinedMetric};
pub use overlay::{export_activation_overlay, jet, normalize_shared, peak_location};
pub use report::{detection_table, lesion_table, metric_report, round2, Metric, MetricReport, TargetMetrics};

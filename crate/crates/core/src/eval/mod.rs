//! Ranking and filtering metrics.
//!
//! PR curves and P@R are computed over pairs pooled across queries. Only
//! exact matches count as relevant.

mod metrics;
mod report;

pub use metrics::{
    filter_and_null_pct, max_norm_baseline, mrr_at_k, p_at_r, pr_auc, pr_auc_macro, pr_curve, raw_baseline,
    recall_at_k, retained_histogram, unit_edges, Bucket, Histogram, PrCurve, PrPoint, PrecisionAtRecall,
};
pub use report::{evaluate_lists, render_kv, render_table, MetricReport, ThresholdChoice};

#[cfg(test)]
mod tests;

use std::fmt::Write as _;

use super::metrics::{
    filter_and_null_pct, mrr_at_k, p_at_r, pr_auc, pr_curve, retained_histogram, Histogram, PrecisionAtRecall,
};
use crate::error::Result;
use crate::filter::{apply_filter, FilterReport, ScoredPair};
use crate::index::SearchResult;
use crate::judgment::Qrels;

/// How the filtering threshold is chosen when building a report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdChoice {
    /// Calibrate on the evaluated lists themselves at this micro recall.
    SelfCalibrated(f64),
    /// Use a threshold calibrated elsewhere.
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub method: String,
    pub pr_auc: f64,
    pub p_at_r: PrecisionAtRecall,
    pub target_recall: f64,
    pub filter_pct: f64,
    pub null_pct: f64,
    /// Queries that kept nothing or kept every hit, in percent.
    pub extreme_pct: f64,
    /// MRR over the filtered lists.
    pub mrr: f64,
    pub mrr_unfiltered: f64,
    pub mrr_k: usize,
    pub threshold: f64,
    pub filter: FilterReport,
    pub histogram: Histogram,
}

/// Computes every metric for one method's calibrated lists.
pub fn evaluate_lists(
    method: &str,
    lists: &[SearchResult],
    qrels: &Qrels,
    choice: ThresholdChoice,
    target_recall: f64,
    mrr_k: usize,
    edges: &[usize],
) -> Result<MetricReport> {
    let mut scored = Vec::new();
    for r in lists {
        for h in &r.hits {
            let z = h.logit.unwrap_or(h.cosine);
            scored.push(ScoredPair::new(r.query_id.clone(), z, qrels.grade(&r.query_id, &h.candidate_id)));
        }
    }
    let binary: Vec<(f64, bool)> = scored.iter().map(|p| (p.logit, p.grade.is_positive())).collect();
    let auc = pr_auc(&pr_curve(&binary)?);
    let par = p_at_r(&scored, target_recall)?;
    let threshold = match choice {
        ThresholdChoice::SelfCalibrated(_) => par.threshold,
        ThresholdChoice::Fixed(t) => t,
    };
    let mut filter = FilterReport::default();
    let mut filtered = Vec::with_capacity(lists.len());
    for r in lists {
        let (kept, entry) = apply_filter(r, threshold)?;
        filter.push(entry);
        filtered.push(kept);
    }
    let (filter_pct, null_pct) = filter_and_null_pct(&filter)?;
    Ok(MetricReport {
        method: method.to_string(),
        pr_auc: auc,
        p_at_r: par,
        target_recall,
        filter_pct,
        null_pct,
        extreme_pct: 100.0 * filter.extreme_fraction(),
        mrr: mrr_at_k(&filtered, qrels, mrr_k),
        mrr_unfiltered: mrr_at_k(lists, qrels, mrr_k),
        mrr_k,
        threshold,
        histogram: retained_histogram(&filter, edges)?,
        filter,
    })
}

fn pct_label(target: f64) -> String {
    let p = target * 100.0;
    if (p - p.round()).abs() < 1e-9 {
        format!("{}", p.round() as i64)
    } else {
        format!("{p}")
    }
}

/// Fixed-width comparison table, one row per method.
pub fn render_table(reports: &[MetricReport]) -> String {
    let (target, k) = reports
        .first()
        .map(|r| (r.target_recall, r.mrr_k))
        .unwrap_or((0.95, 10));
    let par = format!("P@R{}", pct_label(target));
    let mrr = format!("MRR@{k}");
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<10} {:>8} {:>8} {:>8} {:>8} {:>8} {:>9}",
        "Method", "PR AUC", par, "Filter%", "Null%", mrr, "Extreme%"
    );
    let _ = writeln!(s, "{}", "-".repeat(65));
    for r in reports {
        let _ = writeln!(
            s,
            "{:<10} {:>8.4} {:>8.4} {:>8.2} {:>8.2} {:>8.4} {:>9.2}",
            r.method, r.pr_auc, r.p_at_r.precision, r.filter_pct, r.null_pct, r.mrr, r.extreme_pct
        );
    }
    s
}

/// Machine-readable `method.key=value` lines.
pub fn render_kv(reports: &[MetricReport]) -> String {
    let mut s = String::new();
    for r in reports {
        let m = &r.method;
        let rows: [(&str, f64); 10] = [
            ("pr_auc", r.pr_auc),
            ("p_at_r.precision", r.p_at_r.precision),
            ("p_at_r.recall", r.p_at_r.recall),
            ("p_at_r.threshold", r.p_at_r.threshold),
            ("threshold", r.threshold),
            ("filter_pct", r.filter_pct),
            ("null_pct", r.null_pct),
            ("extreme_pct", r.extreme_pct),
            ("mrr", r.mrr),
            ("mrr_unfiltered", r.mrr_unfiltered),
        ];
        for (k, v) in rows {
            let _ = writeln!(s, "{m}.{k}={v}");
        }
        let _ = writeln!(s, "{m}.target_recall={}", r.target_recall);
        let _ = writeln!(s, "{m}.queries={}", r.filter.entries.len());
    }
    s
}

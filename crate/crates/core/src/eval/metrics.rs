use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::filter::{calibrate_threshold, FilterReport, ScoredPair};
use crate::index::SearchResult;
use crate::judgment::Qrels;
use crate::math::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Points ordered by threshold ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub positives: usize,
    pub total: usize,
}

/// One point per distinct score, counting pairs with `score >= threshold`.
pub fn pr_curve(pairs: &[(f64, bool)]) -> Result<PrCurve> {
    let positives = pairs.iter().filter(|p| p.1).count();
    if positives == 0 || positives == pairs.len() {
        return Err(Error::invalid("precision-recall curve needs both positive and negative pairs"));
    }
    if pairs.iter().any(|p| p.0.is_nan()) {
        return Err(Error::invalid("scores contain NaN"));
    }
    let mut sorted = pairs.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = Vec::new();
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == t {
            tp += usize::from(sorted[i].1);
            seen += 1;
            i += 1;
        }
        points.push(PrPoint {
            threshold: t,
            precision: tp as f64 / seen as f64,
            recall: tp as f64 / positives as f64,
        });
    }
    points.reverse();
    Ok(PrCurve {
        points,
        positives,
        total: pairs.len(),
    })
}

/// Trapezoidal area under precision over recall. Integration starts at
/// recall 0 with the precision of the strictest threshold.
pub fn pr_auc(curve: &PrCurve) -> f64 {
    let mut area = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    for p in curve.points.iter().rev() {
        let (r0, p0) = prev.unwrap_or((0.0, p.precision));
        area += (p.recall - r0) * (p.precision + p0) / 2.0;
        prev = Some((p.recall, p.precision));
    }
    area.clamp(0.0, 1.0)
}

/// Mean per-query PR AUC over queries that have both labels.
pub fn pr_auc_macro(pairs: &[(&str, f64, bool)]) -> Result<f64> {
    let mut by_query: BTreeMap<&str, Vec<(f64, bool)>> = BTreeMap::new();
    for &(q, s, y) in pairs {
        by_query.entry(q).or_default().push((s, y));
    }
    let aucs: Vec<f64> = by_query
        .values()
        .filter_map(|v| pr_curve(v).ok())
        .map(|c| pr_auc(&c))
        .collect();
    if aucs.is_empty() {
        return Err(Error::invalid("no query has both positive and negative pairs"));
    }
    Ok(aucs.iter().sum::<f64>() / aucs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecisionAtRecall {
    pub precision: f64,
    pub recall: f64,
    pub threshold: f64,
}

/// Pooled precision at the calibrated micro-recall threshold.
pub fn p_at_r(scored: &[ScoredPair], target_recall: f64) -> Result<PrecisionAtRecall> {
    let cal = calibrate_threshold(scored, target_recall)?;
    let (mut tp, mut kept) = (0usize, 0usize);
    for p in scored.iter().filter(|p| p.logit >= cal.threshold) {
        kept += 1;
        tp += usize::from(p.grade.is_positive());
    }
    Ok(PrecisionAtRecall {
        precision: tp as f64 / kept as f64,
        recall: cal.achieved_recall,
        threshold: cal.threshold,
    })
}

/// `(Filter%, Null%)` over the report's queries.
pub fn filter_and_null_pct(report: &FilterReport) -> Result<(f64, f64)> {
    if report.entries.is_empty() {
        return Err(Error::invalid("filter report has no queries"));
    }
    let input = report.total_input();
    let filter = if input == 0 {
        0.0
    } else {
        100.0 * report.total_filtered() as f64 / input as f64
    };
    let null = 100.0 * report.null_queries() as f64 / report.entries.len() as f64;
    Ok((filter, null))
}

/// Reciprocal rank of the first exact match within the top `k`, averaged
/// over run queries that have at least one exact match in `qrels`.
pub fn mrr_at_k(runs: &[SearchResult], qrels: &Qrels, k: usize) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for r in runs {
        if qrels.positive_count(&r.query_id) == 0 {
            continue;
        }
        n += 1;
        if let Some(rank) = r
            .candidate_ids()
            .take(k)
            .position(|c| qrels.grade(&r.query_id, c).is_positive())
        {
            sum += 1.0 / (rank + 1) as f64;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Fraction of each query's exact matches found in its top `k`, averaged
/// over queries with at least one exact match.
pub fn recall_at_k(runs: &[SearchResult], qrels: &Qrels, k: usize) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for r in runs {
        let total = qrels.positive_count(&r.query_id);
        if total == 0 {
            continue;
        }
        n += 1;
        let found = r
            .candidate_ids()
            .take(k)
            .filter(|c| qrels.grade(&r.query_id, c).is_positive())
            .count();
        sum += found as f64 / total as f64;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Divides each cosine by the query's top cosine. Returns the calibrated
/// list and whether the guard (top cosine ≤ 0) passed scores through.
pub fn max_norm_baseline(hits: &SearchResult) -> (SearchResult, bool) {
    let max = hits.hits.iter().map(|h| h.cosine).fold(f64::NEG_INFINITY, f64::max);
    let flagged = !(max > 0.0);
    let mut out = hits.clone();
    for h in &mut out.hits {
        let z = if flagged { h.cosine } else { h.cosine / max };
        h.logit = Some(z);
        h.probability = Some(sigmoid(z));
    }
    (out, flagged)
}

/// Uses the cosine itself as the logit.
pub fn raw_baseline(hits: &SearchResult) -> SearchResult {
    let mut out = hits.clone();
    for h in &mut out.hits {
        h.logit = Some(h.cosine);
        h.probability = Some(sigmoid(h.cosine));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bucket {
    pub lo: usize,
    /// Exclusive upper bound; `None` for the open last bucket.
    pub hi: Option<usize>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram {
    pub buckets: Vec<Bucket>,
}

impl Histogram {
    fn label(b: &Bucket) -> String {
        match b.hi {
            Some(hi) if hi == b.lo + 1 => b.lo.to_string(),
            Some(hi) => format!("{}-{}", b.lo, hi - 1),
            None => format!("{}+", b.lo),
        }
    }

    pub fn to_table(&self) -> String {
        let total: usize = self.buckets.iter().map(|b| b.count).sum();
        let peak = self.buckets.iter().map(|b| b.count).max().unwrap_or(0).max(1);
        let mut s = format!("{:>8}  {:>7}  {:>6}\n", "retained", "queries", "share");
        for b in &self.buckets {
            let share = if total == 0 { 0.0 } else { 100.0 * b.count as f64 / total as f64 };
            let bar = "#".repeat((b.count * 40).div_ceil(peak));
            s.push_str(&format!("{:>8}  {:>7}  {:>5.1}%  {bar}\n", Self::label(b), b.count, share));
        }
        s
    }

    /// Tab-separated `lo  hi  count` rows with a header; `hi` is empty for the open bucket.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("lo\thi\tcount\n");
        for b in &self.buckets {
            let hi = b.hi.map(|h| h.to_string()).unwrap_or_default();
            s.push_str(&format!("{}\t{hi}\t{}\n", b.lo, b.count));
        }
        s
    }
}

/// Counts queries per retained-count bucket. `edges` must start at 0 and
/// increase strictly; bucket `i` is `[edges[i], edges[i+1])` and the last
/// bucket is open above.
pub fn retained_histogram(report: &FilterReport, edges: &[usize]) -> Result<Histogram> {
    if edges.first() != Some(&0) || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("bucket edges must start at 0 and increase strictly"));
    }
    let mut buckets: Vec<Bucket> = edges
        .iter()
        .enumerate()
        .map(|(i, &lo)| Bucket {
            lo,
            hi: edges.get(i + 1).copied(),
            count: 0,
        })
        .collect();
    for e in &report.entries {
        let i = edges.partition_point(|&lo| lo <= e.retained) - 1;
        buckets[i].count += 1;
    }
    Ok(Histogram { buckets })
}

/// One bucket per retained count `0..=k`.
pub fn unit_edges(k: usize) -> Vec<usize> {
    (0..=k).collect()
}

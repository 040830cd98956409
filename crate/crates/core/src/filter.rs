//! Global-threshold calibration and filtering of calibrated result lists.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::adapter::{calibrate_candidates, AdapterNetwork};
use crate::encoder::{LinearEncoder, SparseFeatures};
use crate::error::{Error, Result, StageExt};
use crate::index::{SearchResult, VectorIndex};
use crate::judgment::RelevanceGrade;
use crate::vector::EmbeddingVector;

/// One retrieved pair with its calibrated score and judgment.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPair {
    pub query_id: String,
    pub logit: f64,
    pub grade: RelevanceGrade,
}

impl ScoredPair {
    pub fn new(query_id: impl Into<String>, logit: f64, grade: RelevanceGrade) -> Self {
        Self {
            query_id: query_id.into(),
            logit,
            grade,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecallMode {
    /// Recall over all positive pairs pooled across queries.
    #[default]
    Micro,
    /// Mean of per-query recall over queries with at least one positive.
    Macro,
}

impl FromStr for RecallMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "micro" => Ok(RecallMode::Micro),
            "macro" => Ok(RecallMode::Macro),
            _ => Err(Error::invalid(format!("unknown recall mode {s:?}"))),
        }
    }
}

impl fmt::Display for RecallMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RecallMode::Micro => "micro",
            RecallMode::Macro => "macro",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdCalibration {
    pub target_recall: f64,
    /// Logit-space threshold `t`; a hit is kept when its logit is at least `t`.
    pub threshold: f64,
    pub achieved_recall: f64,
    pub calibration_set_size: usize,
    #[serde(default)]
    pub recall_mode: RecallMode,
}

impl ThresholdCalibration {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("calibration serializes")
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_toml())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }
}

/// Recall at threshold `t` under `mode`.
pub fn recall_at(scored: &[ScoredPair], t: f64, mode: RecallMode) -> f64 {
    match mode {
        RecallMode::Micro => {
            let (mut kept, mut total) = (0usize, 0usize);
            for p in scored.iter().filter(|p| p.grade.is_positive()) {
                total += 1;
                kept += usize::from(p.logit >= t);
            }
            if total == 0 {
                0.0
            } else {
                kept as f64 / total as f64
            }
        }
        RecallMode::Macro => {
            let mut per_query: std::collections::BTreeMap<&str, (usize, usize)> = Default::default();
            for p in scored.iter().filter(|p| p.grade.is_positive()) {
                let e = per_query.entry(&p.query_id).or_default();
                e.1 += 1;
                e.0 += usize::from(p.logit >= t);
            }
            if per_query.is_empty() {
                return 0.0;
            }
            per_query.values().map(|&(k, n)| k as f64 / n as f64).sum::<f64>() / per_query.len() as f64
        }
    }
}

fn check_target(target_recall: f64) -> Result<()> {
    if target_recall > 0.0 && target_recall <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("target recall {target_recall} outside (0, 1]")))
    }
}

/// Largest micro-recall threshold; see [`calibrate_threshold_with`].
pub fn calibrate_threshold(scored: &[ScoredPair], target_recall: f64) -> Result<ThresholdCalibration> {
    calibrate_threshold_with(scored, target_recall, RecallMode::Micro)
}

/// Returns the largest `t` whose recall under `mode` reaches `target_recall`.
/// Only exact matches count as positives; queries without one do not affect recall.
pub fn calibrate_threshold_with(
    scored: &[ScoredPair],
    target_recall: f64,
    mode: RecallMode,
) -> Result<ThresholdCalibration> {
    check_target(target_recall)?;
    if scored.iter().any(|p| p.logit.is_nan()) {
        return Err(Error::invalid("scores contain NaN"));
    }
    let mut positives: Vec<&ScoredPair> = scored.iter().filter(|p| p.grade.is_positive()).collect();
    if positives.is_empty() {
        return Err(Error::invalid("no positive pairs to calibrate on"));
    }
    positives.sort_by(|a, b| b.logit.total_cmp(&a.logit));
    let threshold = match mode {
        RecallMode::Micro => {
            let p = positives.len();
            let mut n = (target_recall * p as f64).ceil() as usize;
            // Guard against products like 0.95 * 100 landing just above an integer.
            if n > 1 && (n - 1) as f64 / p as f64 >= target_recall {
                n -= 1;
            }
            positives[n.clamp(1, p) - 1].logit
        }
        RecallMode::Macro => {
            let mut sizes: std::collections::BTreeMap<&str, usize> = Default::default();
            for p in &positives {
                *sizes.entry(&p.query_id).or_default() += 1;
            }
            let q = sizes.len() as f64;
            let mut recall = 0.0;
            let mut t = positives.last().unwrap().logit;
            let mut i = 0;
            while i < positives.len() {
                let logit = positives[i].logit;
                while i < positives.len() && positives[i].logit == logit {
                    recall += 1.0 / (sizes[positives[i].query_id.as_str()] as f64 * q);
                    i += 1;
                }
                if recall >= target_recall - 1e-12 {
                    t = logit;
                    break;
                }
            }
            t
        }
    };
    Ok(ThresholdCalibration {
        target_recall,
        threshold,
        achieved_recall: recall_at(scored, threshold, mode),
        calibration_set_size: scored.len(),
        recall_mode: mode,
    })
}

/// Retained and input counts for one query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterEntry {
    pub query_id: String,
    pub input: usize,
    pub retained: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FilterReport {
    pub entries: Vec<FilterEntry>,
}

impl FilterReport {
    pub fn push(&mut self, entry: FilterEntry) {
        self.entries.push(entry);
    }

    pub fn total_input(&self) -> usize {
        self.entries.iter().map(|e| e.input).sum()
    }

    pub fn total_retained(&self) -> usize {
        self.entries.iter().map(|e| e.retained).sum()
    }

    pub fn total_filtered(&self) -> usize {
        self.total_input() - self.total_retained()
    }

    pub fn null_queries(&self) -> usize {
        self.entries.iter().filter(|e| e.retained == 0).count()
    }

    /// Share of queries that kept nothing or kept every hit.
    pub fn extreme_fraction(&self) -> f64 {
        if self.entries.is_empty() {
            return 0.0;
        }
        let n = self
            .entries
            .iter()
            .filter(|e| e.retained == 0 || e.retained == e.input)
            .count();
        n as f64 / self.entries.len() as f64
    }
}

/// Keeps the hits whose logit is at least `t`, in their original order.
pub fn apply_filter(hits: &SearchResult, t: f64) -> Result<(SearchResult, FilterEntry)> {
    let mut kept = Vec::with_capacity(hits.hits.len());
    for h in &hits.hits {
        let z = h
            .logit
            .ok_or_else(|| Error::invalid(format!("hit {} has no logit", h.candidate_id)))?;
        if z >= t {
            kept.push(h.clone());
        }
    }
    let entry = FilterEntry {
        query_id: hits.query_id.clone(),
        input: hits.hits.len(),
        retained: kept.len(),
    };
    Ok((
        SearchResult {
            query_id: hits.query_id.clone(),
            hits: kept,
        },
        entry,
    ))
}

/// Loaded artifacts for online filtering of one query at a time.
pub struct Pipeline<'a> {
    pub query_encoder: Option<&'a LinearEncoder>,
    pub index: &'a VectorIndex,
    pub adapter: &'a AdapterNetwork,
    pub threshold: f64,
    pub k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StageTimings {
    pub encode: Duration,
    pub search: Duration,
    pub calibrate: Duration,
    pub filter: Duration,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    /// Every top-K hit with calibrated scores.
    pub calibrated: SearchResult,
    /// The retained prefix.
    pub filtered: SearchResult,
    pub entry: FilterEntry,
    pub timings: StageTimings,
}

impl Pipeline<'_> {
    pub fn check(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if let Some(enc) = self.query_encoder {
            if enc.dim() != self.index.dim() {
                return Err(Error::DimensionMismatch {
                    expected: self.index.dim(),
                    found: enc.dim(),
                })
                .stage("encode");
            }
        }
        if self.adapter.dim() != self.index.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.index.dim(),
                found: self.adapter.dim(),
            })
            .stage("calibrate");
        }
        Ok(())
    }

    /// Encodes `features` with the query tower, then runs the embedded path.
    pub fn run(&self, query_id: &str, features: &SparseFeatures) -> Result<PipelineOutput> {
        let enc = self
            .query_encoder
            .ok_or_else(|| Error::invalid("pipeline has no query encoder"))
            .stage("encode")?;
        let start = Instant::now();
        let q = enc.encode(features).stage("encode")?;
        let encode = start.elapsed();
        let mut out = self.run_embedded(query_id, &q)?;
        out.timings.encode = encode;
        Ok(out)
    }

    /// search → calibrate → filter for a precomputed query embedding.
    pub fn run_embedded(&self, query_id: &str, q: &EmbeddingVector) -> Result<PipelineOutput> {
        let t0 = Instant::now();
        let hits = self.index.search(query_id, q, self.k).stage("search")?;
        let t1 = Instant::now();
        let calibrated = calibrate_candidates(self.adapter, q, &hits).stage("calibrate")?;
        let t2 = Instant::now();
        let (filtered, entry) = apply_filter(&calibrated, self.threshold).stage("filter")?;
        let t3 = Instant::now();
        Ok(PipelineOutput {
            calibrated,
            filtered,
            entry,
            timings: StageTimings {
                encode: Duration::ZERO,
                search: t1 - t0,
                calibrate: t2 - t1,
                filter: t3 - t2,
            },
        })
    }
}

/// Runs [`Pipeline::run`] for one query.
pub fn run_pipeline(pipeline: &Pipeline<'_>, query_id: &str, features: &SparseFeatures) -> Result<PipelineOutput> {
    pipeline.check()?;
    pipeline.run(query_id, features)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapter::TransformKind;
    use crate::index::ScoredCandidate;
    use proptest::prelude::*;

    fn positives(logits: &[f64]) -> Vec<ScoredPair> {
        logits
            .iter()
            .enumerate()
            .map(|(i, &z)| ScoredPair::new(format!("q{}", i % 3), z, RelevanceGrade::Exact))
            .collect()
    }

    /// Every distinct logit is a candidate threshold; keep the largest that works.
    fn sweep(scored: &[ScoredPair], target: f64, mode: RecallMode) -> f64 {
        let mut cands: Vec<f64> = scored.iter().map(|p| p.logit).collect();
        cands.sort_by(|a, b| b.total_cmp(a));
        *cands.iter().find(|&&t| recall_at(scored, t, mode) >= target - 1e-12).unwrap()
    }

    #[test]
    fn examples() {
        assert_eq!(calibrate_threshold(&positives(&[3.0, 2.0, 1.0]), 1.0).unwrap().threshold, 1.0);
        let hundred: Vec<f64> = (1..=100).map(f64::from).collect();
        let c = calibrate_threshold(&positives(&hundred), 0.95).unwrap();
        assert_eq!(c.threshold, 6.0);
        assert_eq!(c.achieved_recall, 0.95);
        assert_eq!(sweep(&positives(&hundred), 0.95, RecallMode::Micro), 6.0);
        assert_eq!(calibrate_threshold(&positives(&[0.3]), 0.95).unwrap().threshold, 0.3);
    }

    #[test]
    fn errors() {
        let neg = vec![ScoredPair::new("q", 1.0, RelevanceGrade::Substitute)];
        assert!(calibrate_threshold(&neg, 0.9).is_err());
        assert!(calibrate_threshold(&positives(&[1.0]), 0.0).is_err());
        assert!(calibrate_threshold(&positives(&[1.0]), 1.5).is_err());
    }

    proptest! {
        #[test]
        fn calibration_is_tight(
            logits in prop::collection::vec(-5i32..5, 1..30),
            negs in prop::collection::vec(-5i32..5, 0..10),
            target in 0.05f64..=1.0,
            macro_mode in any::<bool>(),
        ) {
            let mode = if macro_mode { RecallMode::Macro } else { RecallMode::Micro };
            let mut scored = positives(&logits.iter().map(|&x| x as f64 / 2.0).collect::<Vec<_>>());
            scored.extend(negs.iter().map(|&x| ScoredPair::new("q0", x as f64, RelevanceGrade::Irrelevant)));
            let c = calibrate_threshold_with(&scored, target, mode).unwrap();
            prop_assert!(c.achieved_recall >= target - 1e-12);
            prop_assert!(recall_at(&scored, c.threshold.next_up(), mode) < target - 1e-12);
            prop_assert_eq!(c.threshold, sweep(&scored, target, mode));
        }
    }

    fn calibrated(logits: &[f64]) -> SearchResult {
        SearchResult {
            query_id: "q".into(),
            hits: logits
                .iter()
                .enumerate()
                .map(|(i, &z)| ScoredCandidate {
                    logit: Some(z),
                    ..ScoredCandidate::new(format!("d{i}"), z)
                })
                .collect(),
        }
    }

    #[test]
    fn filter_examples() {
        let r = calibrated(&[2.0, 1.0, 0.5]);
        let (kept, e) = apply_filter(&r, 0.9).unwrap();
        assert_eq!(kept.candidate_ids().collect::<Vec<_>>(), ["d0", "d1"]);
        assert_eq!((e.input, e.retained), (3, 2));
        assert_eq!(apply_filter(&r, -1e300).unwrap().1.retained, 3);
        let (kept, e) = apply_filter(&r, 2.5).unwrap();
        assert!(kept.hits.is_empty());
        let mut rep = FilterReport::default();
        rep.push(e);
        assert_eq!(rep.null_queries(), 1);
        assert_eq!(rep.extreme_fraction(), 1.0);
    }

    #[test]
    fn threshold_monotone_and_prefix() {
        let r = calibrated(&[3.0, 2.5, 2.5, 1.0, -0.5]);
        let mut prev = usize::MAX;
        for t in [-1.0, 0.0, 1.0, 2.5, 2.6, 4.0] {
            let (kept, _) = apply_filter(&r, t).unwrap();
            assert!(kept.hits.len() <= prev);
            assert_eq!(kept.hits[..], r.hits[..kept.hits.len()]);
            prev = kept.hits.len();
        }
    }

    #[test]
    fn calibration_file_round_trip() {
        let c = calibrate_threshold(&positives(&[0.1, 0.7, 1.0 / 3.0]), 0.99).unwrap();
        assert_eq!(ThresholdCalibration::from_toml(&c.to_toml()).unwrap(), c);
        assert!(ThresholdCalibration::from_toml("threshold = 1\nbogus = 2").is_err());
    }

    #[test]
    fn pipeline_stages() {
        let index = VectorIndex::build([("a", vec![1.0f32, 0.0]), ("b", vec![0.6, 0.8]), ("c", vec![0.0, 1.0])]).unwrap();
        let enc = LinearEncoder::from_weights(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let raw = AdapterNetwork::zeros(TransformKind::Raw, 2).unwrap();
        let p = Pipeline { query_encoder: Some(&enc), index: &index, adapter: &raw, threshold: -2.0, k: 3 };
        let f = SparseFeatures::from_counts([0]);
        let out = run_pipeline(&p, "q", &f).unwrap();
        let q = enc.encode(&f).unwrap();
        assert_eq!(
            out.filtered.candidate_ids().collect::<Vec<_>>(),
            index.search("q", &q, 3).unwrap().candidate_ids().collect::<Vec<_>>()
        );
        let p = Pipeline { threshold: 0.5, ..p };
        assert_eq!(run_pipeline(&p, "q", &f).unwrap().filtered.candidate_ids().collect::<Vec<_>>(), ["a", "b"]);
        let bad = SparseFeatures::from_counts([5]);
        let err = run_pipeline(&p, "q", &bad).unwrap_err().to_string();
        assert!(err.starts_with("encode:"), "{err}");
    }
}

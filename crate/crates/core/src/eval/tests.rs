use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::filter::{FilterEntry, FilterReport, ScoredPair};
use crate::index::{ScoredCandidate, SearchResult};
use crate::judgment::{JudgedPair, Qrels, RelevanceGrade};

/// Enumerates every distinct score as a threshold and counts directly.
fn oracle_points(pairs: &[(f64, bool)]) -> Vec<(f64, f64, f64)> {
    let mut ts: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    let pos = pairs.iter().filter(|p| p.1).count() as f64;
    ts.into_iter()
        .map(|t| {
            let kept: Vec<_> = pairs.iter().filter(|p| p.0 >= t).collect();
            let tp = kept.iter().filter(|p| p.1).count() as f64;
            (t, tp / kept.len() as f64, tp / pos)
        })
        .collect()
}

#[test]
fn hand_case_points_and_area() {
    let pairs = [(0.9, true), (0.8, false), (0.7, true), (0.6, false)];
    let c = pr_curve(&pairs).unwrap();
    let by_desc: Vec<(f64, f64)> = c.points.iter().rev().map(|p| (p.precision, p.recall)).collect();
    assert_eq!(by_desc, [(1.0, 0.5), (0.5, 0.5), (2.0 / 3.0, 1.0), (0.5, 1.0)]);
    let expected = 0.5 * 1.0 + 0.5 * (0.5 + 2.0 / 3.0) / 2.0;
    assert!((pr_auc(&c) - expected).abs() < 1e-15);
}

#[test]
fn perfect_separation() {
    let pairs = [(0.9, true), (0.8, true), (0.2, false), (0.1, false)];
    let c = pr_curve(&pairs).unwrap();
    assert!(c.points.iter().any(|p| p.precision == 1.0 && p.recall == 1.0));
    assert_eq!(pr_auc(&c), 1.0);
    let scored: Vec<_> = pairs
        .iter()
        .map(|&(s, y)| ScoredPair::new("q", s, if y { RelevanceGrade::Exact } else { RelevanceGrade::Irrelevant }))
        .collect();
    for target in [0.5, 0.95, 1.0] {
        assert_eq!(p_at_r(&scored, target).unwrap().precision, 1.0);
    }
}

#[test]
fn degenerate_labels_rejected() {
    assert!(pr_curve(&[(0.1, true)]).is_err());
    assert!(pr_curve(&[(0.1, false), (0.2, false)]).is_err());
}

#[test]
fn random_labels_track_positive_rate() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pairs: Vec<(f64, bool)> = (0..10_000).map(|_| (rng.gen::<f64>(), rng.gen_bool(0.3))).collect();
    let rate = pairs.iter().filter(|p| p.1).count() as f64 / pairs.len() as f64;
    let c = pr_curve(&pairs).unwrap();
    for p in c.points.iter().filter(|p| p.recall >= 0.1) {
        assert!((p.precision - rate).abs() < 0.02, "precision {} at recall {}", p.precision, p.recall);
    }
    assert!((pr_auc(&c) - rate).abs() < 0.03);
}

#[test]
fn curve_matches_oracle_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let n = rng.gen_range(2..=20);
        let mut pairs: Vec<(f64, bool)> = (0..n).map(|_| (rng.gen_range(0..8) as f64 / 4.0, rng.gen_bool(0.4))).collect();
        pairs[0].1 = true;
        pairs[1].1 = false;
        let c = pr_curve(&pairs).unwrap();
        let got: Vec<_> = c.points.iter().map(|p| (p.threshold, p.precision, p.recall)).collect();
        assert_eq!(got, oracle_points(&pairs));
        assert!(c.points.windows(2).all(|w| w[0].threshold < w[1].threshold && w[0].recall >= w[1].recall));
        let a = pr_auc(&c);
        assert!((0.0..=1.0).contains(&a));
    }
}

#[test]
fn p_at_r_matches_sweep_on_interleaved_scores() {
    let mut scored = Vec::new();
    for i in 1..=100 {
        scored.push(ScoredPair::new("q", i as f64, RelevanceGrade::Exact));
        scored.push(ScoredPair::new("q", i as f64 - 0.5, RelevanceGrade::Irrelevant));
    }
    let got = p_at_r(&scored, 0.95).unwrap();
    // Sweep: the largest threshold with at least 95 positives above it.
    let mut best = None;
    for t in scored.iter().map(|p| p.logit) {
        let kept: Vec<_> = scored.iter().filter(|p| p.logit >= t).collect();
        let tp = kept.iter().filter(|p| p.grade.is_positive()).count();
        if tp >= 95 && best.map_or(true, |(bt, _)| t > bt) {
            best = Some((t, tp as f64 / kept.len() as f64));
        }
    }
    let (t, precision) = best.unwrap();
    assert_eq!(got.threshold, t);
    assert_eq!(got.precision, precision);
    let all_pos: Vec<_> = (0..5).map(|i| ScoredPair::new("q", i as f64, RelevanceGrade::Exact)).collect();
    assert_eq!(p_at_r(&all_pos, 0.95).unwrap().precision, 1.0);
}

fn report(pairs: &[(usize, usize)]) -> FilterReport {
    FilterReport {
        entries: pairs
            .iter()
            .enumerate()
            .map(|(i, &(input, retained))| FilterEntry { query_id: format!("q{i}"), input, retained })
            .collect(),
    }
}

#[test]
fn filter_and_null_examples() {
    assert_eq!(filter_and_null_pct(&report(&[(10, 10), (5, 5)])).unwrap(), (0.0, 0.0));
    assert_eq!(filter_and_null_pct(&report(&[(10, 0), (5, 0)])).unwrap(), (100.0, 100.0));
    assert_eq!(filter_and_null_pct(&report(&[(10, 7), (10, 0)])).unwrap(), (65.0, 50.0));
    assert!(filter_and_null_pct(&FilterReport::default()).is_err());
}

fn list(qid: &str, ids: &[&str]) -> SearchResult {
    SearchResult {
        query_id: qid.into(),
        hits: ids.iter().enumerate().map(|(i, id)| ScoredCandidate::new(*id, 1.0 - i as f64 * 0.1)).collect(),
    }
}

fn qrels(pairs: &[(&str, &str)]) -> Qrels {
    let judged: Vec<_> = pairs.iter().map(|(q, c)| JudgedPair::new(*q, *c, RelevanceGrade::Exact)).collect();
    Qrels::from_pairs(&judged).unwrap()
}

#[test]
fn mrr_examples() {
    let q = qrels(&[("a", "x"), ("b", "y")]);
    assert_eq!(mrr_at_k(&[list("a", &["x", "z"]), list("b", &["y"])], &q, 10), 1.0);
    assert_eq!(mrr_at_k(&[list("a", &["1", "2", "3", "x"])], &q, 10), 0.25);
    assert_eq!(mrr_at_k(&[list("a", &["1", "2", "3", "x"])], &q, 3), 0.0);
    assert_eq!(mrr_at_k(&[list("a", &[]), list("b", &["y"])], &q, 10), 0.5);
    // Queries without relevant judgments are ignored.
    assert_eq!(mrr_at_k(&[list("c", &["x"]), list("b", &["y"])], &q, 10), 1.0);
    assert_eq!(recall_at_k(&[list("a", &["x"]), list("b", &["q"])], &q, 10), 0.5);
}

#[test]
fn histogram_shapes() {
    let all = report(&[(5, 5), (5, 5), (5, 5)]);
    let h = retained_histogram(&all, &unit_edges(5)).unwrap();
    assert_eq!(h.buckets.iter().map(|b| b.count).collect::<Vec<_>>(), [0, 0, 0, 0, 0, 3]);
    let spread = report(&[(5, 0), (5, 2), (5, 4)]);
    let h = retained_histogram(&spread, &[0, 1, 3]).unwrap();
    assert_eq!(h.buckets.iter().map(|b| b.count).collect::<Vec<_>>(), [1, 1, 1]);
    assert!(h.to_tsv().starts_with("lo\thi\tcount\n0\t1\t1\n"));
    assert!(h.to_table().contains("3+"));
    assert!(retained_histogram(&spread, &[1, 2]).is_err());
}

#[test]
fn max_norm_examples() {
    let (out, flagged) = max_norm_baseline(&SearchResult {
        query_id: "q".into(),
        hits: vec![ScoredCandidate::new("a", 0.8), ScoredCandidate::new("b", 0.4)],
    });
    assert!(!flagged);
    assert_eq!(out.hits.iter().map(|h| h.logit.unwrap()).collect::<Vec<_>>(), [1.0, 0.5]);
    let neg = SearchResult { query_id: "q".into(), hits: vec![ScoredCandidate::new("a", -0.2)] };
    let (out, flagged) = max_norm_baseline(&neg);
    assert!(flagged);
    assert_eq!(out.hits[0].logit, Some(-0.2));
}

#[test]
fn macro_auc_averages_queries() {
    let pairs = [("a", 0.9, true), ("a", 0.1, false), ("b", 0.9, false), ("b", 0.1, true), ("c", 0.5, true)];
    let m = pr_auc_macro(&pairs).unwrap();
    let b = pr_auc(&pr_curve(&[(0.9, false), (0.1, true)]).unwrap());
    assert!((m - (1.0 + b) / 2.0).abs() < 1e-15);
}

proptest! {
    #[test]
    fn monotone_remap_keeps_points(
        raw in prop::collection::vec((-50i32..50, any::<bool>()), 2..40),
        scale in 0.1f64..10.0,
        shift in -5.0f64..5.0,
    ) {
        let mut pairs: Vec<(f64, bool)> = raw.iter().map(|&(s, y)| (s as f64 / 10.0, y)).collect();
        pairs[0].1 = true;
        pairs[1].1 = false;
        let mapped: Vec<(f64, bool)> = pairs.iter().map(|&(s, y)| (scale * (s * s * s + s) + shift, y)).collect();
        let a = pr_curve(&pairs).unwrap();
        let b = pr_curve(&mapped).unwrap();
        let pa: Vec<_> = a.points.iter().map(|p| (p.precision, p.recall)).collect();
        let pb: Vec<_> = b.points.iter().map(|p| (p.precision, p.recall)).collect();
        prop_assert_eq!(pa, pb);
        prop_assert_eq!(pr_auc(&a), pr_auc(&b));
    }
}

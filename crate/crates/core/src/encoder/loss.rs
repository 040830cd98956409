//! Contrastive and listwise softmax objectives over cosine scores.

use crate::error::{Error, Result};
use crate::math::{log_sum_exp, softmax_into};
use crate::vector::{cosine, EmbeddingVector};

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("temperature must be positive, got {tau}")))
    }
}

/// `-log softmax` of the positive slot over `{pos} ∪ negs`.
///
/// If `grad` is given it receives `dL/ds` for `[pos, negs...]`.
pub(crate) fn contrastive_from_scores(scores: &[f64], tau: f64, grad: Option<&mut Vec<f64>>) -> f64 {
    let logits: Vec<f64> = scores.iter().map(|s| s / tau).collect();
    let loss = (log_sum_exp(&logits) - logits[0]).max(0.0);
    if let Some(g) = grad {
        softmax_into(&logits, g);
        g[0] -= 1.0;
        for x in g.iter_mut() {
            *x /= tau;
        }
    }
    loss
}

/// `-Σ y_j log softmax_j(s / τ)` with the labels taken as given.
pub(crate) fn listwise_from_scores(
    scores: &[f64],
    labels: &[f64],
    tau: f64,
    grad: Option<&mut Vec<f64>>,
) -> f64 {
    let logits: Vec<f64> = scores.iter().map(|s| s / tau).collect();
    let lse = log_sum_exp(&logits);
    let loss = labels
        .iter()
        .zip(&logits)
        .map(|(y, z)| if *y == 0.0 { 0.0 } else { -y * (z - lse) })
        .sum();
    if let Some(g) = grad {
        let mass: f64 = labels.iter().sum();
        softmax_into(&logits, g);
        for (gj, y) in g.iter_mut().zip(labels) {
            *gj = (*gj * mass - y) / tau;
        }
    }
    loss
}

pub fn contrastive_loss(
    q: &EmbeddingVector,
    pos: &EmbeddingVector,
    negs: &[EmbeddingVector],
    tau: f64,
) -> Result<f64> {
    check_tau(tau)?;
    let mut scores = Vec::with_capacity(negs.len() + 1);
    scores.push(cosine(q, pos)?);
    for n in negs {
        scores.push(cosine(q, n)?);
    }
    Ok(contrastive_from_scores(&scores, tau, None))
}

pub fn listwise_loss(
    q: &EmbeddingVector,
    cands: &[EmbeddingVector],
    labels: &[f64],
    tau: f64,
) -> Result<f64> {
    check_tau(tau)?;
    if cands.is_empty() {
        return Err(Error::invalid("listwise loss needs at least one candidate"));
    }
    if cands.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} candidates but {} labels",
            cands.len(),
            labels.len()
        )));
    }
    let scores = cands.iter().map(|c| cosine(q, c)).collect::<Result<Vec<_>>>()?;
    Ok(listwise_from_scores(&scores, labels, tau, None))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vector::normalize;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Unit vector in the plane with cosine `c` to the x axis.
    fn at(c: f64) -> EmbeddingVector {
        normalize(&[c as f32, (1.0 - c * c).max(0.0).sqrt() as f32]).unwrap()
    }

    fn x_axis() -> EmbeddingVector {
        normalize(&[1.0, 0.0]).unwrap()
    }

    #[test]
    fn contrastive_without_negatives_is_zero() {
        assert_eq!(contrastive_loss(&x_axis(), &at(0.3), &[], 0.05).unwrap(), 0.0);
    }

    #[test]
    fn contrastive_equal_scores_is_ln2() {
        for tau in [0.01, 0.5, 3.0] {
            let l = contrastive_loss(&x_axis(), &at(0.4), &[at(0.4)], tau).unwrap();
            assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        }
    }

    #[test]
    fn contrastive_scalar_case() {
        // Scores are exact in the oracle; the embeddings carry f32 rounding.
        let oracle = (1.0f64 + (-16.0f64).exp()).ln();
        assert!((contrastive_from_scores(&[0.9, 0.1], 0.05, None) - oracle).abs() < 1e-15);
        let l = contrastive_loss(&x_axis(), &at(0.9), &[at(0.1)], 0.05).unwrap();
        assert!((l - oracle).abs() < 1e-8, "{l} vs {oracle}");
    }

    #[test]
    fn listwise_examples() {
        assert_eq!(listwise_loss(&x_axis(), &[at(0.2)], &[1.0], 0.1).unwrap(), 0.0);
        let l = listwise_loss(&x_axis(), &[at(0.5), at(0.5)], &[1.0, 0.0], 0.1).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(listwise_loss(&x_axis(), &[], &[], 0.1).is_err());
        assert!(listwise_loss(&x_axis(), &[at(0.1)], &[1.0, 0.0], 0.1).is_err());
    }

    #[test]
    fn listwise_graded_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let cs: Vec<f64> = (0..3).map(|_| rng.gen_range(-0.9..0.9)).collect();
            let tau = rng.gen_range(0.05..1.0);
            let ys = [1.0, 0.5, 0.0];
            let cands: Vec<_> = cs.iter().map(|&c| at(c)).collect();
            let realized: Vec<f64> = cands.iter().map(|c| cosine(&x_axis(), c).unwrap()).collect();
            let denom: f64 = realized.iter().map(|s| (s / tau).exp()).sum();
            let direct: f64 = -ys
                .iter()
                .zip(&realized)
                .map(|(y, s)| y * ((s / tau).exp() / denom).ln())
                .sum::<f64>();
            let l = listwise_loss(&x_axis(), &cands, &ys, tau).unwrap();
            assert!((l - direct).abs() < 1e-10, "{l} vs {direct}");
        }
    }

    #[test]
    fn losses_are_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = x_axis();
        let negs: Vec<_> = (0..8).map(|_| at(rng.gen_range(-1.0..1.0))).collect();
        let labels: Vec<f64> = (0..8).map(|i| [1.0, 0.5, 0.0][i % 3]).collect();
        let base_c = contrastive_loss(&q, &at(0.2), &negs, 0.1).unwrap();
        let base_l = listwise_loss(&q, &negs, &labels, 0.1).unwrap();
        for _ in 0..10 {
            let mut idx: Vec<usize> = (0..8).collect();
            idx.shuffle(&mut rng);
            let pn: Vec<_> = idx.iter().map(|&i| negs[i].clone()).collect();
            let pl: Vec<_> = idx.iter().map(|&i| labels[i]).collect();
            assert!((contrastive_loss(&q, &at(0.2), &pn, 0.1).unwrap() - base_c).abs() < 1e-10);
            assert!((listwise_loss(&q, &pn, &pl, 0.1).unwrap() - base_l).abs() < 1e-10);
        }
    }

    #[test]
    fn contrastive_decreases_with_positive_score() {
        let negs = [0.3, -0.2, 0.6];
        let mut prev = f64::INFINITY;
        for i in 0..=100 {
            let pos = -1.0 + 2.0 * i as f64 / 100.0;
            let mut s = vec![pos];
            s.extend_from_slice(&negs);
            let l = contrastive_from_scores(&s, 0.2, None);
            assert!(l < prev);
            prev = l;
        }
    }

    #[test]
    fn score_gradients_match_finite_differences() {
        let scores = [0.3, -0.1, 0.45, 0.2];
        let labels = [1.0, 0.0, 0.5, 0.0];
        let tau = 0.3;
        let mut g = Vec::new();
        contrastive_from_scores(&scores, tau, Some(&mut g));
        let mut gl = Vec::new();
        listwise_from_scores(&scores, &labels, tau, Some(&mut gl));
        let h = 1e-6;
        for j in 0..scores.len() {
            let mut up = scores;
            let mut dn = scores;
            up[j] += h;
            dn[j] -= h;
            let fd = (contrastive_from_scores(&up, tau, None) - contrastive_from_scores(&dn, tau, None)) / (2.0 * h);
            assert!((fd - g[j]).abs() < 1e-7);
            let fdl = (listwise_from_scores(&up, &labels, tau, None)
                - listwise_from_scores(&dn, &labels, tau, None))
                / (2.0 * h);
            assert!((fdl - gl[j]).abs() < 1e-7);
        }
    }
}

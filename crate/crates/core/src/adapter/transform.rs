//! The monotone transform family mapping a cosine to a relevance logit.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Smallest `|x|` used inside `ln|x|` when differentiating the power exponent.
pub const POWER_GRAD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformKind {
    Raw,
    Linear,
    Sqrt,
    Quadratic,
    Power,
}

impl TransformKind {
    pub const ALL: [TransformKind; 5] = [
        TransformKind::Raw,
        TransformKind::Linear,
        TransformKind::Sqrt,
        TransformKind::Quadratic,
        TransformKind::Power,
    ];

    /// Number of head outputs the adapter produces for this kind.
    pub fn param_count(self) -> usize {
        match self {
            TransformKind::Raw => 0,
            TransformKind::Linear | TransformKind::Sqrt | TransformKind::Quadratic => 2,
            TransformKind::Power => 3,
        }
    }

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get(tag as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            TransformKind::Raw => "raw",
            TransformKind::Linear => "linear",
            TransformKind::Sqrt => "sqrt",
            TransformKind::Quadratic => "quadratic",
            TransformKind::Power => "power",
        }
    }
}

impl FromStr for TransformKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown transform kind {s:?}")))
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-query transform parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdapterParams {
    pub a: f64,
    pub b: f64,
    pub k: Option<f64>,
}

impl AdapterParams {
    /// The parameters under which `kind` reduces to `x` (or its shaped analog).
    pub fn identity(kind: TransformKind) -> Self {
        Self {
            a: 1.0,
            b: 0.0,
            k: (kind == TransformKind::Power).then_some(1.0),
        }
    }

    pub fn validate(&self, kind: TransformKind) -> Result<()> {
        if !(self.a >= 0.0) || !self.a.is_finite() || !self.b.is_finite() {
            return Err(Error::invalid(format!("invalid parameters a={} b={}", self.a, self.b)));
        }
        match (kind, self.k) {
            (TransformKind::Power, Some(k)) if k > 0.0 && k < 2.0 => Ok(()),
            (TransformKind::Power, Some(k)) => Err(Error::invalid(format!("exponent k={k} outside (0, 2)"))),
            (TransformKind::Power, None) => Err(Error::invalid("power transform needs an exponent")),
            (_, Some(_)) => Err(Error::invalid(format!("{kind} transform takes no exponent"))),
            (_, None) => Ok(()),
        }
    }
}

fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// The shaped part `g(x)` in `F(x) = a·g(x) + b`.
fn shape(kind: TransformKind, k: f64, x: f64) -> f64 {
    match kind {
        TransformKind::Raw | TransformKind::Linear => x,
        TransformKind::Sqrt => sgn(x) * x.abs().sqrt(),
        TransformKind::Quadratic => sgn(x) * x * x,
        TransformKind::Power => sgn(x) * x.abs().powf(k),
    }
}

/// Evaluates `F_Θ(x)`. Parameters are assumed valid for `kind`.
pub(crate) fn apply(kind: TransformKind, theta: &AdapterParams, x: f64) -> f64 {
    match kind {
        TransformKind::Raw => x,
        _ => theta.a * shape(kind, theta.k.unwrap_or(1.0), x) + theta.b,
    }
}

pub fn transform(kind: TransformKind, theta: &AdapterParams, x: f64) -> Result<f64> {
    theta.validate(kind)?;
    Ok(apply(kind, theta, x))
}

/// Partial derivatives of `F_Θ(x)` with respect to `(a, b, k)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamGrad {
    pub a: f64,
    pub b: f64,
    pub k: f64,
}

pub(crate) fn param_grad(kind: TransformKind, theta: &AdapterParams, x: f64) -> ParamGrad {
    match kind {
        TransformKind::Raw => ParamGrad { a: 0.0, b: 0.0, k: 0.0 },
        TransformKind::Power => {
            let k = theta.k.unwrap_or(1.0);
            let ax = x.abs().max(POWER_GRAD_FLOOR);
            ParamGrad {
                a: shape(kind, k, x),
                b: 1.0,
                k: sgn(x) * theta.a * ax.powf(k) * ax.ln(),
            }
        }
        _ => ParamGrad {
            a: shape(kind, 1.0, x),
            b: 1.0,
            k: 0.0,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p(a: f64, b: f64, k: Option<f64>) -> AdapterParams {
        AdapterParams { a, b, k }
    }

    #[test]
    fn worked_examples() {
        let x = transform(TransformKind::Power, &p(1.0, 0.0, Some(1.0)), 0.37).unwrap();
        assert!((x - 0.37).abs() < 1e-15);
        assert_eq!(transform(TransformKind::Sqrt, &p(2.0, -1.0, None), 0.25).unwrap(), 0.0);
        let q = transform(TransformKind::Quadratic, &p(3.0, 0.1, None), -0.5).unwrap();
        assert!((q + 0.65).abs() < 1e-12);
        assert_eq!(transform(TransformKind::Raw, &p(5.0, 5.0, None), 0.2).unwrap(), 0.2);
    }

    #[test]
    fn kind_mismatch_rejected() {
        assert!(transform(TransformKind::Power, &p(1.0, 0.0, None), 0.1).is_err());
        assert!(transform(TransformKind::Linear, &p(1.0, 0.0, Some(1.0)), 0.1).is_err());
        assert!(transform(TransformKind::Power, &p(1.0, 0.0, Some(2.0)), 0.1).is_err());
        assert!(transform(TransformKind::Linear, &p(-0.1, 0.0, None), 0.1).is_err());
    }

    #[test]
    fn value_at_zero_is_b() {
        for kind in TransformKind::ALL.into_iter().skip(1) {
            let mut theta = AdapterParams::identity(kind);
            theta.a = 2.5;
            theta.b = -0.7;
            assert_eq!(transform(kind, &theta, 0.0).unwrap(), -0.7);
        }
    }

    #[test]
    fn monotone_on_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for kind in TransformKind::ALL {
            for _ in 0..1000 {
                let theta = AdapterParams {
                    a: rng.gen_range(0.0..20.0),
                    b: rng.gen_range(-10.0..10.0),
                    k: (kind == TransformKind::Power).then(|| rng.gen_range(1e-3..2.0 - 1e-3)),
                };
                let mut prev = f64::NEG_INFINITY;
                for i in 0..=200 {
                    let y = transform(kind, &theta, -1.0 + i as f64 / 100.0).unwrap();
                    assert!(y >= prev, "{kind} not monotone at step {i}");
                    prev = y;
                }
            }
        }
    }

    #[test]
    fn names_and_tags_round_trip() {
        for kind in TransformKind::ALL {
            assert_eq!(kind.to_string().parse::<TransformKind>().unwrap(), kind);
            assert_eq!(TransformKind::from_tag(kind.tag()), Some(kind));
        }
        assert!("cubic".parse::<TransformKind>().is_err());
        assert_eq!(TransformKind::from_tag(9), None);
    }

    #[test]
    fn param_grad_matches_differences() {
        let theta = p(1.3, 0.2, Some(0.7));
        for &x in &[-0.8, -0.05, 0.3, 0.9] {
            let g = param_grad(TransformKind::Power, &theta, x);
            let h = 1e-6;
            let f = |t: AdapterParams| apply(TransformKind::Power, &t, x);
            let da = (f(p(1.3 + h, 0.2, Some(0.7))) - f(p(1.3 - h, 0.2, Some(0.7)))) / (2.0 * h);
            let dk = (f(p(1.3, 0.2, Some(0.7 + h))) - f(p(1.3, 0.2, Some(0.7 - h)))) / (2.0 * h);
            assert!((g.a - da).abs() < 1e-7);
            assert!((g.k - dk).abs() < 1e-7);
            assert_eq!(g.b, 1.0);
        }
        assert_eq!(param_grad(TransformKind::Power, &theta, 0.0).k, 0.0);
    }
}

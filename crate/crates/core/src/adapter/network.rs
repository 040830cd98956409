//! Feedforward network from a query embedding to transform parameters.
//!
//! Weights live in one flat vector laid out as
//! `W1 (d×d), b1 (d), W2 (h×d), b2 (h), Wh (p×h), bh (p)` with `h = d/2` and
//! `p` the parameter count of the transform kind. Matrices are row-major
//! with one row per output unit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use super::transform::{param_grad, AdapterParams, TransformKind};
use crate::binio::{checked_u32, Reader, Writer};
use crate::error::{Error, Result};
use crate::math::{sigmoid, softplus};
use crate::vector::EmbeddingVector;

const MAGIC: &[u8; 4] = b"CRAD";
const VERSION: u32 = 1;

/// Offsets of each block inside the flat weight vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub dim: usize,
    pub hidden: usize,
    pub outputs: usize,
}

impl Layout {
    pub fn new(kind: TransformKind, dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::invalid("adapter input dimension must be at least 2"));
        }
        Ok(Self {
            dim,
            hidden: dim / 2,
            outputs: kind.param_count(),
        })
    }

    /// `(rows, cols)` of the three affine layers in order.
    pub fn shapes(&self) -> [(usize, usize); 3] {
        [(self.dim, self.dim), (self.hidden, self.dim), (self.outputs, self.hidden)]
    }

    fn block(&self, layer: usize) -> (usize, usize, usize) {
        // (weight offset, bias offset, end)
        let mut off = 0;
        for (i, (r, c)) in self.shapes().into_iter().enumerate() {
            let w = off;
            let b = w + r * c;
            off = b + r;
            if i == layer {
                return (w, b, off);
            }
        }
        unreachable!()
    }

    pub fn len(&self) -> usize {
        self.block(2).2
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Intermediate activations kept for backpropagation.
#[derive(Debug, Clone)]
pub struct Activations {
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
    pub out: Vec<f64>,
}

fn affine_relu<T: Copy + Into<f64>>(w: &[T], b: &[T], x: &[f64], relu: bool) -> Vec<f64> {
    let cols = x.len();
    b.iter()
        .enumerate()
        .map(|(r, &bias)| {
            let row = &w[r * cols..(r + 1) * cols];
            let mut acc: f64 = bias.into();
            for (&wi, &xi) in row.iter().zip(x) {
                acc += wi.into() * xi;
            }
            if relu {
                acc.max(0.0)
            } else {
                acc
            }
        })
        .collect()
}

pub(crate) fn forward_raw<T: Copy + Into<f64>>(layout: &Layout, params: &[T], q: &[f64]) -> Activations {
    let (w1, b1, e1) = layout.block(0);
    let (w2, b2, e2) = layout.block(1);
    let (w3, b3, e3) = layout.block(2);
    let h1 = affine_relu(&params[w1..b1], &params[b1..e1], q, true);
    let h2 = affine_relu(&params[w2..b2], &params[b2..e2], &h1, true);
    let out = affine_relu(&params[w3..b3], &params[b3..e3], &h2, false);
    Activations { h1, h2, out }
}

/// Applies the head constraints `a = softplus(α)` and `k = 2σ(κ)`.
pub(crate) fn constrain(kind: TransformKind, out: &[f64]) -> AdapterParams {
    match kind {
        TransformKind::Raw => AdapterParams::identity(kind),
        _ => AdapterParams {
            a: softplus(out[0]),
            b: out[1],
            // Saturated σ would round onto the open interval's ends.
            k: (kind == TransformKind::Power)
                .then(|| (2.0 * sigmoid(out[2])).clamp(f64::MIN_POSITIVE, 2f64.next_down())),
        },
    }
}

/// Accumulates into `grad` the gradient of `dl_dlogit · F_Θ(x)` summed over
/// `(x, dl_dlogit)` pairs that share one query.
pub(crate) fn backward<T: Copy + Into<f64>>(
    kind: TransformKind,
    layout: &Layout,
    params: &[T],
    q: &[f64],
    act: &Activations,
    pairs: impl IntoIterator<Item = (f64, f64)>,
    grad: &mut [f64],
) {
    if layout.outputs == 0 {
        return;
    }
    let theta = constrain(kind, &act.out);
    let mut d_theta = [0.0f64; 3];
    for (x, g) in pairs {
        let pg = param_grad(kind, &theta, x);
        d_theta[0] += g * pg.a;
        d_theta[1] += g * pg.b;
        d_theta[2] += g * pg.k;
    }
    let mut d_out = vec![d_theta[0] * sigmoid(act.out[0]), d_theta[1]];
    if kind == TransformKind::Power {
        let s = sigmoid(act.out[2]);
        d_out.push(d_theta[2] * 2.0 * s * (1.0 - s));
    }

    let inputs: [&[f64]; 3] = [q, &act.h1, &act.h2];
    let mut d = d_out;
    for layer in (0..3).rev() {
        let (w, b, _) = layout.block(layer);
        let x = inputs[layer];
        let cols = x.len();
        let mut dx = vec![0.0; cols];
        for (r, &dr) in d.iter().enumerate() {
            if dr == 0.0 {
                continue;
            }
            grad[b + r] += dr;
            let gw = &mut grad[w + r * cols..w + (r + 1) * cols];
            for (gi, &xi) in gw.iter_mut().zip(x) {
                *gi += dr * xi;
            }
            if layer > 0 {
                for (dxi, &wi) in dx.iter_mut().zip(&params[w + r * cols..w + (r + 1) * cols]) {
                    *dxi += dr * wi.into();
                }
            }
        }
        if layer == 0 {
            break;
        }
        // ReLU mask: the post-activation is positive exactly where the unit was active.
        for (dxi, &hi) in dx.iter_mut().zip(x) {
            if hi <= 0.0 {
                *dxi = 0.0;
            }
        }
        d = dx;
    }
}

/// The trained adapter. Stores `f32` weights and counts forward calls.
#[derive(Debug)]
pub struct AdapterNetwork {
    kind: TransformKind,
    layout: Layout,
    params: Vec<f32>,
    calls: AtomicU64,
}

impl Clone for AdapterNetwork {
    fn clone(&self) -> Self {
        Self {
            kind: self.kind,
            layout: self.layout,
            params: self.params.clone(),
            calls: AtomicU64::new(self.forward_count()),
        }
    }
}

/// Equality ignores the invocation counter.
impl PartialEq for AdapterNetwork {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind && self.layout == other.layout && self.params == other.params
    }
}

impl AdapterNetwork {
    pub fn from_params(kind: TransformKind, dim: usize, params: Vec<f32>) -> Result<Self> {
        let layout = Layout::new(kind, dim)?;
        if params.len() != layout.len() {
            return Err(Error::DimensionMismatch {
                expected: layout.len(),
                found: params.len(),
            });
        }
        if params.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("adapter weights must be finite"));
        }
        Ok(Self {
            kind,
            layout,
            params,
            calls: AtomicU64::new(0),
        })
    }

    /// All weights and biases zero.
    pub fn zeros(kind: TransformKind, dim: usize) -> Result<Self> {
        let n = Layout::new(kind, dim)?.len();
        Self::from_params(kind, dim, vec![0.0; n])
    }

    /// Hidden layers uniform in `±1/√fan_in`; head weights zero with biases
    /// set so the initial transform is the identity configuration.
    pub fn init(kind: TransformKind, dim: usize, rng: &mut impl Rng) -> Result<Self> {
        let layout = Layout::new(kind, dim)?;
        let mut params = vec![0.0f32; layout.len()];
        for layer in 0..2 {
            let (w, b, _) = layout.block(layer);
            let bound = 1.0 / (layout.shapes()[layer].1 as f32).sqrt();
            for p in &mut params[w..b] {
                *p = rng.gen_range(-bound..=bound);
            }
        }
        if layout.outputs > 0 {
            let (_, b, _) = layout.block(2);
            // softplus⁻¹(1) = ln(e − 1); b = 0; κ = 0 gives k = 1.
            params[b] = (std::f64::consts::E - 1.0).ln() as f32;
        }
        Self::from_params(kind, dim, params)
    }

    /// Overwrites the head biases so that a zero hidden signal yields
    /// `a = scale` and offset `b`. No-op for kinds without parameters.
    pub fn set_head_bias(&mut self, scale: f64, offset: f64) -> Result<()> {
        if self.layout.outputs == 0 {
            return Ok(());
        }
        if !(scale > 0.0) || !offset.is_finite() {
            return Err(Error::invalid(format!("invalid head bias a={scale} b={offset}")));
        }
        let (_, b, _) = self.layout.block(2);
        // softplus⁻¹(a) = ln(e^a − 1), computed stably for large a.
        let alpha = scale + (-(-scale).exp_m1()).ln();
        self.params[b] = alpha as f32;
        self.params[b + 1] = offset as f32;
        Ok(())
    }

    pub fn kind(&self) -> TransformKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.layout.dim
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn params_f64(&self) -> Vec<f64> {
        self.params.iter().map(|&w| w as f64).collect()
    }

    /// Number of [`forward`](Self::forward) calls since creation or the last reset.
    pub fn forward_count(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn reset_forward_count(&self) {
        self.calls.store(0, Ordering::Relaxed);
    }

    pub fn forward(&self, q: &EmbeddingVector) -> Result<AdapterParams> {
        if q.dim() != self.layout.dim {
            return Err(Error::DimensionMismatch {
                expected: self.layout.dim,
                found: q.dim(),
            });
        }
        self.calls.fetch_add(1, Ordering::Relaxed);
        if self.layout.outputs == 0 {
            return Ok(AdapterParams::identity(self.kind));
        }
        let act = forward_raw(&self.layout, &self.params, &q.to_f64());
        Ok(constrain(self.kind, &act.out))
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let mut w = Writer::new(w);
        w.bytes(MAGIC)?;
        w.u32(VERSION)?;
        w.u8(self.kind.tag())?;
        w.u32(checked_u32(self.layout.dim, "dimension")?)?;
        let shapes = self.layout.shapes();
        for &(r, c) in &shapes[..2] {
            w.u32(r as u32)?;
            w.u32(c as u32)?;
        }
        w.f32s(&self.params[..self.layout.block(1).2])?;
        let (r, c) = shapes[2];
        w.u32(r as u32)?;
        w.u32(c as u32)?;
        w.f32s(&self.params[self.layout.block(1).2..])?;
        w.finish()?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut r = Reader::new(r);
        r.magic(MAGIC)?;
        r.version(VERSION)?;
        let at = r.offset();
        let kind = TransformKind::from_tag(r.u8()?)
            .ok_or_else(|| Error::format(at, "unknown transform kind tag"))?;
        let dim = r.u32()? as usize;
        let at = r.offset();
        let layout = Layout::new(kind, dim).map_err(|e| Error::format(at, e.to_string()))?;
        let shapes = layout.shapes();
        let mut params = Vec::with_capacity(layout.len());
        let read_shape = |r: &mut Reader<R>, expected: (usize, usize)| -> Result<()> {
            let at = r.offset();
            let found = (r.u32()? as usize, r.u32()? as usize);
            if found != expected {
                return Err(Error::format(at, format!("layer shape {found:?}, expected {expected:?}")));
            }
            Ok(())
        };
        for &shape in &shapes[..2] {
            read_shape(&mut r, shape)?;
        }
        for &(rows, cols) in &shapes[..2] {
            r.f32s_into(&mut params, rows * cols + rows)?;
        }
        read_shape(&mut r, shapes[2])?;
        r.f32s_into(&mut params, shapes[2].0 * shapes[2].1 + shapes[2].0)?;
        let end = r.offset();
        r.expect_eof()?;
        Self::from_params(kind, dim, params).map_err(|e| Error::format(end, e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vector::normalize;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit(rng: &mut ChaCha8Rng, d: usize) -> EmbeddingVector {
        let v: Vec<f32> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        normalize(&v).unwrap()
    }

    #[test]
    fn zero_network_gives_constrained_defaults() {
        let net = AdapterNetwork::zeros(TransformKind::Power, 6).unwrap();
        let q = normalize(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let theta = net.forward(&q).unwrap();
        assert!((theta.a - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(theta.b, 0.0);
        assert_eq!(theta.k, Some(1.0));
    }

    #[test]
    fn init_is_identity_configuration() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for kind in TransformKind::ALL {
            let net = AdapterNetwork::init(kind, 8, &mut rng).unwrap();
            let theta = net.forward(&unit(&mut rng, 8)).unwrap();
            assert!((theta.a - 1.0).abs() < 1e-6);
            assert_eq!(theta.b, 0.0);
            assert_eq!(theta.k.is_some(), kind == TransformKind::Power);
        }
    }

    #[test]
    fn outputs_respect_constraints() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let d = rng.gen_range(2..10);
            let n = Layout::new(TransformKind::Power, d).unwrap().len();
            let params = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let net = AdapterNetwork::from_params(TransformKind::Power, d, params).unwrap();
            let theta = net.forward(&unit(&mut rng, d)).unwrap();
            theta.validate(TransformKind::Power).unwrap();
        }
    }

    #[test]
    fn forward_is_pure_and_counted() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = AdapterNetwork::init(TransformKind::Sqrt, 4, &mut rng).unwrap();
        let q = unit(&mut rng, 4);
        assert_eq!(net.forward(&q).unwrap(), net.forward(&q).unwrap());
        assert_eq!(net.forward_count(), 2);
        net.reset_forward_count();
        assert_eq!(net.forward_count(), 0);
        assert!(matches!(
            net.forward(&unit(&mut rng, 5)),
            Err(Error::DimensionMismatch { expected: 4, found: 5 })
        ));
        assert_eq!(net.forward_count(), 0);
    }

    #[test]
    fn file_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for kind in TransformKind::ALL {
            let net = AdapterNetwork::init(kind, 6, &mut rng).unwrap();
            let mut bytes = Vec::new();
            net.write_to(&mut bytes).unwrap();
            let back = AdapterNetwork::read_from(&bytes[..]).unwrap();
            assert_eq!(back, net);
            let mut again = Vec::new();
            back.write_to(&mut again).unwrap();
            assert_eq!(again, bytes);
        }
    }

    #[test]
    fn corrupt_files_rejected() {
        assert!(AdapterNetwork::read_from(&b""[..]).unwrap_err().to_string().contains("bad magic"));
        let net = AdapterNetwork::zeros(TransformKind::Linear, 4).unwrap();
        let mut bytes = Vec::new();
        net.write_to(&mut bytes).unwrap();
        let err = AdapterNetwork::read_from(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
        bytes[8] = 42;
        assert!(AdapterNetwork::read_from(&bytes[..]).unwrap_err().to_string().contains("kind tag"));
    }
}

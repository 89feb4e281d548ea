//! Plain (non-recording) tensor kernels.

use serde::{Deserialize, Serialize};

use super::tensor::{fmt_shape, Tensor};
use crate::error::{Error, Result};

/// Elementwise nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output `y = f(x)`.
    #[inline]
    pub(crate) fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

pub fn activation(x: &Tensor, kind: Activation) -> Tensor {
    x.map(|v| kind.apply(v))
}

/// `a[m×k] · b[k×n]`, accumulated in f64.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2("matmul")?;
    let (k2, n) = b.dims2("matmul")?;
    if k != k2 {
        return Err(Error::Dimension {
            op: "matmul".into(),
            left: fmt_shape(a.shape()),
            right: fmt_shape(b.shape()),
        });
    }
    let mut out = vec![0.0; m * n];
    matmul_into(a.data(), b.data(), &mut out, m, k, n);
    Ok(Tensor::from_parts(vec![m, n], out, a.precision().join(b.precision())))
}

/// `out[m×n] += a[m×k] · b[k×n]` on raw row-major buffers.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

/// `out[m×n] += aᵀ · b` where `a` is `[k×m]` and `b` is `[k×n]`.
pub(crate) fn matmul_tn_into(a: &[f64], b: &[f64], out: &mut [f64], k: usize, m: usize, n: usize) {
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let api = a[p * m + i];
            if api == 0.0 {
                continue;
            }
            let row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += api * bv;
            }
        }
    }
}

/// `out[m×n] += a · bᵀ` where `a` is `[m×k]` and `b` is `[n×k]`.
pub(crate) fn matmul_nt_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let dot: f64 = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
            out[i * n + j] += dot;
        }
    }
}

/// Numerically stable softmax of a 1-D tensor.
pub fn softmax(x: &Tensor) -> Result<Tensor> {
    if x.ndim() != 1 {
        return Err(Error::Shape(format!(
            "softmax needs a 1-D tensor, got {}",
            fmt_shape(x.shape())
        )));
    }
    if !x.all_finite() {
        return Err(Error::Numeric(format!("softmax input not finite: {:?}", x.data())));
    }
    Ok(Tensor::from_parts(
        x.shape().to_vec(),
        softmax_slice(x.data()),
        x.precision(),
    ))
}

pub(crate) fn softmax_slice(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Kronecker product of two matrices: `out[i·r+u, j·s+v] = a[i,j]·b[u,v]`.
pub fn kronecker(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (p, q) = a.dims2("kronecker")?;
    let (r, s) = b.dims2("kronecker")?;
    let cols = q * s;
    let mut out = vec![0.0; p * r * cols];
    for i in 0..p {
        for j in 0..q {
            let aij = a.data()[i * q + j];
            for u in 0..r {
                for v in 0..s {
                    out[(i * r + u) * cols + j * s + v] = aij * b.data()[u * s + v];
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![p * r, cols], out, a.precision().join(b.precision())))
}

/// Two-sided product applied channel by channel: `out[c] = a_s · h[c] · a_tᵀ`.
///
/// For each channel this equals `(a_s ⊗ a_t) · vec(h[c])` with the joint-major
/// flattening `index = joint·T + frame`.
pub fn st_apply(spatial: &Tensor, temporal: &Tensor, h: &Tensor) -> Result<Tensor> {
    let (w, n, t) = h.dims3("st_apply")?;
    let (sn, sn2) = spatial.dims2("st_apply")?;
    let (tt, tt2) = temporal.dims2("st_apply")?;
    if sn != n || sn2 != n {
        return Err(Error::Dimension {
            op: "st_apply (spatial)".into(),
            left: fmt_shape(spatial.shape()),
            right: fmt_shape(h.shape()),
        });
    }
    if tt != t || tt2 != t {
        return Err(Error::Dimension {
            op: "st_apply (temporal)".into(),
            left: fmt_shape(temporal.shape()),
            right: fmt_shape(h.shape()),
        });
    }
    let mut out = vec![0.0; w * n * t];
    let mut tmp = vec![0.0; n * t];
    for c in 0..w {
        let hc = &h.data()[c * n * t..(c + 1) * n * t];
        tmp.iter_mut().for_each(|x| *x = 0.0);
        matmul_into(spatial.data(), hc, &mut tmp, n, n, t);
        matmul_nt_into(&tmp, temporal.data(), &mut out[c * n * t..(c + 1) * n * t], n, t, t);
    }
    let precision = h.precision().join(spatial.precision()).join(temporal.precision());
    Ok(Tensor::from_parts(vec![w, n, t], out, precision))
}

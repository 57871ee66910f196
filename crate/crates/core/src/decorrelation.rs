//! Decorrelating transforms `x = R·z`, the update `R ← R − η·C·R`, and the
//! off-diagonal correlation losses used to monitor them.
//!
//! `R` is never trained by the task loss. Gradients flow through it as a
//! fixed linear map, and it only changes through [`update_decorrelation`].

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::layer::LayerParams;
use crate::ops::{self, Operand};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecorrelationKind {
    /// Acts on the full input vector of a fully connected layer.
    Dense,
    /// Acts on flattened `channels × kernel × kernel` receptive fields.
    Patchwise { channels: usize, kernel: usize },
}

/// Per-layer decorrelating matrix and its learning parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DecorrelationState<T> {
    pub r: Tensor<T>,
    pub eta: f64,
    pub kind: DecorrelationKind,
    /// Downsampling scale for patchwise layers (see [`downsample_count`]).
    pub downsample_b: f64,
}

impl<T: Real> DecorrelationState<T> {
    /// Identity-initialised state of dimension `dim`.
    pub fn identity(dim: usize, eta: f64, kind: DecorrelationKind, downsample_b: f64) -> Self {
        Self {
            r: Tensor::eye(dim),
            eta,
            kind,
            downsample_b,
        }
    }

    pub fn dim(&self) -> usize {
        self.r.rows()
    }
}

/// Off-diagonal second moment of decorrelated inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationEstimate<T> {
    pub c: Tensor<T>,
    pub sample_count: usize,
}

/// Applies `R` to every row of an `n × D` matrix.
pub fn decorrelate<T: Real>(state: &DecorrelationState<T>, z: &Tensor<T>) -> Result<Tensor<T>> {
    let d = state.dim();
    if z.ndim() != 2 || z.cols() != d {
        return Err(Error::shape("decorrelate", z.shape(), state.r.shape()));
    }
    let n = z.rows();
    let mut out = vec![T::zero(); n * d];
    ops::gemm(
        Operand::new(z.data(), n, d),
        Operand::new(state.r.data(), d, d).t(),
        T::zero(),
        &mut out,
    );
    Tensor::new(vec![n, d], out)
}

/// Condenses forward weights and decorrelation into `A = W·R`.
pub fn fuse<T: Real>(params: &LayerParams<T>, state: &DecorrelationState<T>) -> Result<Tensor<T>> {
    fuse_weights(&params.weights, state)
}

pub(crate) fn fuse_weights<T: Real>(
    w: &Tensor<T>,
    state: &DecorrelationState<T>,
) -> Result<Tensor<T>> {
    if w.shape()[1] != state.dim() {
        return Err(Error::shape("fuse", w.shape(), state.r.shape()));
    }
    ops::matmul(w, &state.r)
}

/// `C = E[x·xᵀ] − diag(E[x²])` over the rows of `x`.
///
/// The result is exactly symmetric with an exactly zero diagonal.
pub fn estimate_correlation<T: Real>(x: &Tensor<T>) -> Result<CorrelationEstimate<T>> {
    let n = x.rows();
    if n == 0 {
        return Err(Error::EmptyInput(
            "estimate_correlation needs at least one sample",
        ));
    }
    let d = x.cols();
    let mut c = vec![T::zero(); d * d];
    ops::gemm(
        Operand::new(x.data(), n, d).t(),
        Operand::new(x.data(), n, d),
        T::zero(),
        &mut c,
    );
    let inv_n = T::one() / T::from_usize(n).expect("sample count fits");
    for i in 0..d {
        c[i * d + i] = T::zero();
        for j in (i + 1)..d {
            let v = c[i * d + j] * inv_n;
            c[i * d + j] = v;
            c[j * d + i] = v;
        }
    }
    Ok(CorrelationEstimate {
        c: Tensor::new(vec![d, d], c)?,
        sample_count: n,
    })
}

/// `R ← R − η·C·R`.
pub fn update_decorrelation<T: Real>(
    state: &mut DecorrelationState<T>,
    estimate: &CorrelationEstimate<T>,
) -> Result<()> {
    let d = state.dim();
    if estimate.c.shape() != [d, d] {
        return Err(Error::shape(
            "update_decorrelation",
            estimate.c.shape(),
            state.r.shape(),
        ));
    }
    if state.eta == 0.0 {
        return Ok(());
    }
    let mut r = state.r.data().to_vec();
    let neg_eta = T::from_f64_lossy(-state.eta);
    let mut cr = vec![T::zero(); d * d];
    ops::gemm(
        Operand::new(estimate.c.data(), d, d),
        Operand::new(state.r.data(), d, d),
        T::zero(),
        &mut cr,
    );
    for (ri, ci) in r.iter_mut().zip(&cr) {
        *ri = *ri + neg_eta * *ci;
    }
    state.r = Tensor::new(vec![d, d], r)?;
    Ok(())
}

/// Estimates `C` from decorrelated samples `x` and applies the update.
///
/// When there are fewer samples than dimensions `C·R` is formed as
/// `Xᵀ(X·R)/n − diag(E[x²])·R`, which avoids the cubic product.
pub fn update_from_samples<T: Real>(
    state: &mut DecorrelationState<T>,
    x: &Tensor<T>,
) -> Result<CorrelationEstimate<T>> {
    let estimate = estimate_correlation(x)?;
    let d = state.dim();
    if x.cols() != d {
        return Err(Error::shape(
            "update_from_samples",
            x.shape(),
            state.r.shape(),
        ));
    }
    if state.eta == 0.0 {
        return Ok(estimate);
    }
    let n = x.rows();
    if 2 * n >= d {
        update_decorrelation(state, &estimate)?;
        return Ok(estimate);
    }
    let inv_n = T::one() / T::from_usize(n).expect("sample count fits");
    let mut xr = vec![T::zero(); n * d];
    ops::gemm(
        Operand::new(x.data(), n, d),
        Operand::new(state.r.data(), d, d),
        T::zero(),
        &mut xr,
    );
    let mut cr = vec![T::zero(); d * d];
    ops::gemm(
        Operand::new(x.data(), n, d).t(),
        Operand::new(&xr, n, d),
        T::zero(),
        &mut cr,
    );
    let mut mean_sq = vec![T::zero(); d];
    for row in x.data().chunks(d) {
        for (m, &v) in mean_sq.iter_mut().zip(row) {
            *m = *m + v * v;
        }
    }
    let neg_eta = T::from_f64_lossy(-state.eta);
    let r = state.r.data_mut();
    for i in 0..d {
        let ms = mean_sq[i] * inv_n;
        for j in 0..d {
            cr[i * d + j] = cr[i * d + j] * inv_n - ms * r[i * d + j];
        }
    }
    for (ri, ci) in r.iter_mut().zip(&cr) {
        *ri = *ri + neg_eta * *ci;
    }
    Ok(estimate)
}

/// `d = Σᵢⱼ cᵢⱼ²`.
pub fn decorrelation_loss<T: Real>(estimate: &CorrelationEstimate<T>) -> f64 {
    estimate
        .c
        .data()
        .iter()
        .map(|v| {
            let v = v.to_f64_lossy();
            v * v
        })
        .sum()
}

/// Sum of the per-layer losses of one network.
pub fn network_decorrelation_loss(per_layer: &[f64]) -> f64 {
    per_layer.iter().sum()
}

/// Sum of network losses over every decorrelated network.
pub fn total_decorrelation_loss(per_network: &[f64]) -> f64 {
    per_network.iter().sum()
}

/// Number of patch rows used for a correlation estimate:
/// `max(10, b·D_r/p + 1)` rounded half up.
pub fn downsample_count(b: f64, patch_dim: usize, patches: usize) -> usize {
    let raw = b * patch_dim as f64 / patches.max(1) as f64 + 1.0;
    let rounded = (raw + 0.5).floor();
    (rounded.max(10.0)) as usize
}

/// Uniform sample of `min(n, N)` distinct rows, kept in their original order.
pub fn sample_rows<T: Real, R: Rng + ?Sized>(x: &Tensor<T>, n: usize, rng: &mut R) -> Tensor<T> {
    let total = x.rows();
    if n >= total {
        return x.clone();
    }
    let mut picked = index::sample(rng, total, n).into_vec();
    picked.sort_unstable();
    x.select_rows(&picked)
}

//! Elementwise and matrix kernels shared by layers and losses.

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Row-major operand for [`gemm`]; `trans` reads the stored matrix transposed.
#[derive(Clone, Copy)]
pub(crate) struct Operand<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub trans: bool,
}

impl<'a, T> Operand<'a, T> {
    pub fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows,
            cols,
            trans: false,
        }
    }

    pub fn t(self) -> Self {
        Self {
            trans: !self.trans,
            ..self
        }
    }

    fn logical(&self) -> (usize, usize) {
        if self.trans {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        let ld = self.cols as isize;
        if self.trans {
            (1, ld)
        } else {
            (ld, 1)
        }
    }
}

/// `c = op(a) * op(b) + beta * c`, with `c` row-major `m × n`.
pub(crate) fn gemm<T: Real>(a: Operand<'_, T>, b: Operand<'_, T>, beta: T, c: &mut [T]) {
    let (m, k) = a.logical();
    let (k2, n) = b.logical();
    assert_eq!(k, k2, "gemm inner dimension");
    assert_eq!(a.data.len(), a.rows * a.cols);
    assert_eq!(b.data.len(), b.rows * b.cols);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c.iter_mut() {
            *v = *v * beta;
        }
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: lengths asserted above match the logical dimensions and strides.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Standard matrix product of two 2-d tensors.
pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.ndim() != 2 || b.ndim() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![T::zero(); m * n];
    gemm(
        Operand::new(a.data(), m, k),
        Operand::new(b.data(), k, n),
        T::zero(),
        &mut out,
    );
    Tensor::new(vec![m, n], out)
}

/// Output extent of a valid (zero padding) window along one axis.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize) -> Result<usize> {
    if kernel == 0 || stride == 0 {
        return Err(Error::Geometry("kernel and stride must be positive".into()));
    }
    if input < kernel {
        return Err(Error::Geometry(format!(
            "kernel {kernel} exceeds spatial extent {input}"
        )));
    }
    Ok((input - kernel) / stride + 1)
}

/// Receptive fields of one `C×H×W` image as a `p × (C·k·k)` matrix.
///
/// Rows follow raster order over output positions; each row is laid out
/// channel-major, then kernel row, then kernel column.
pub fn extract_patches<T: Real>(
    input: &Tensor<T>,
    kernel: usize,
    stride: usize,
) -> Result<Tensor<T>> {
    let &[c, h, w] = input.shape() else {
        return Err(Error::Geometry(format!(
            "expected a C×H×W image, got shape {:?}",
            input.shape()
        )));
    };
    let patches = extract_patches_batch(input.data(), 1, c, h, w, kernel, stride)?;
    Ok(patches)
}

/// Pooled patches of a `B×C×H×W` batch: `(B·p) × (C·k·k)`, batch-major.
pub(crate) fn extract_patches_batch<T: Real>(
    data: &[T],
    batch: usize,
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
) -> Result<Tensor<T>> {
    let oh = conv_out_extent(height, kernel, stride)?;
    let ow = conv_out_extent(width, kernel, stride)?;
    let d = channels * kernel * kernel;
    let p = oh * ow;
    let image = channels * height * width;
    debug_assert_eq!(data.len(), batch * image);
    let mut out = Vec::with_capacity(batch * p * d);
    match kernel {
        8 => gather_patches::<T, 8>(data, &mut out, channels, height, width, stride),
        4 => gather_patches::<T, 4>(data, &mut out, channels, height, width, stride),
        3 => gather_patches::<T, 3>(data, &mut out, channels, height, width, stride),
        _ => {
            for img in data.chunks_exact(image) {
                for oy in 0..oh {
                    for ox in 0..ow {
                        for ch in 0..channels {
                            for ky in 0..kernel {
                                let src =
                                    ch * height * width + (oy * stride + ky) * width + ox * stride;
                                out.extend_from_slice(&img[src..src + kernel]);
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![batch * p, d], out)
}

fn gather_patches<T: Real, const K: usize>(
    data: &[T],
    out: &mut Vec<T>,
    channels: usize,
    height: usize,
    width: usize,
    stride: usize,
) {
    let oh = (height - K) / stride + 1;
    let ow = (width - K) / stride + 1;
    let image = channels * height * width;
    for img in data.chunks_exact(image) {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..channels {
                    for ky in 0..K {
                        let src = ch * height * width + (oy * stride + ky) * width + ox * stride;
                        let segment: &[T; K] =
                            img[src..src + K].try_into().expect("segment of length K");
                        out.extend_from_slice(segment);
                    }
                }
            }
        }
    }
}

/// Adjoint of [`extract_patches_batch`]: scatter-adds patch rows back into images.
pub(crate) fn fold_patches_batch<T: Real>(
    patches: &[T],
    batch: usize,
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
) -> Vec<T> {
    let oh = (height - kernel) / stride + 1;
    let ow = (width - kernel) / stride + 1;
    let d = channels * kernel * kernel;
    let p = oh * ow;
    let image = channels * height * width;
    let mut out = vec![T::zero(); batch * image];
    for b in 0..batch {
        let img = &mut out[b * image..(b + 1) * image];
        for oy in 0..oh {
            for ox in 0..ow {
                let row = &patches[((b * p) + oy * ow + ox) * d..][..d];
                let mut idx = 0;
                for ch in 0..channels {
                    for ky in 0..kernel {
                        let dst = ch * height * width + (oy * stride + ky) * width + ox * stride;
                        for kx in 0..kernel {
                            img[dst + kx] = img[dst + kx] + row[idx + kx];
                        }
                        idx += kernel;
                    }
                }
            }
        }
    }
    out
}

/// Elementwise `max(x, slope·x)` for `slope ∈ (0, 1)`.
pub fn leaky_relu<T: Real>(x: &Tensor<T>, slope: T) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { v * slope })
}

pub(crate) fn leaky_relu_in_place<T: Real>(x: &mut [T], slope: T) {
    for v in x {
        if *v <= T::zero() {
            *v = *v * slope;
        }
    }
}

/// Multiplies `grad` by the leaky ReLU derivative evaluated at `pre`.
pub fn leaky_relu_backward<T: Real>(pre: &[T], grad: &mut [T], slope: T) {
    for (g, &p) in grad.iter_mut().zip(pre) {
        if p <= T::zero() {
            *g = *g * slope;
        }
    }
}

/// Row-wise log-softmax of a `batch × A` matrix using max subtraction.
pub fn log_softmax<T: Real>(logits: &Tensor<T>) -> Tensor<T> {
    let a = logits.cols();
    let mut out = logits.clone();
    if a == 0 {
        return out;
    }
    for row in out.data_mut().chunks_mut(a) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
        for v in row.iter_mut() {
            *v = *v - lse;
        }
    }
    out
}

/// Gradient w.r.t. logits given the gradient w.r.t. the log-softmax output.
pub fn log_softmax_backward<T: Real>(log_probs: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    log_probs.check_same_shape(grad, "log_softmax_backward")?;
    let a = log_probs.cols();
    let mut out = grad.clone();
    if a == 0 {
        return Ok(out);
    }
    for (row, lp) in out.data_mut().chunks_mut(a).zip(log_probs.data().chunks(a)) {
        let total: T = row.iter().copied().sum();
        for (g, &l) in row.iter_mut().zip(lp) {
            *g = *g - l.exp() * total;
        }
    }
    Ok(out)
}

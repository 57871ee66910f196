//! Layer parameters and the plain (undecorrelated) dense and convolutional maps.

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::ops::{self, conv_out_extent, Operand};
use crate::real::Real;
use crate::tensor::Tensor;

/// Valid (zero padding) convolution geometry for a fixed input size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub in_height: usize,
    pub in_width: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvGeometry {
    pub fn new(
        in_shape: [usize; 3],
        out_channels: usize,
        kernel: usize,
        stride: usize,
    ) -> Result<Self> {
        let [in_channels, in_height, in_width] = in_shape;
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::Geometry("channel counts must be positive".into()));
        }
        conv_out_extent(in_height, kernel, stride)?;
        conv_out_extent(in_width, kernel, stride)?;
        Ok(Self {
            in_channels,
            in_height,
            in_width,
            out_channels,
            kernel,
            stride,
        })
    }

    pub fn out_height(&self) -> usize {
        (self.in_height - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.in_width - self.kernel) / self.stride + 1
    }

    /// Number of receptive fields per image.
    pub fn patches(&self) -> usize {
        self.out_height() * self.out_width()
    }

    /// Flattened receptive field size `C·k²`.
    pub fn patch_dim(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn in_len(&self) -> usize {
        self.in_channels * self.in_height * self.in_width
    }

    pub fn out_shape(&self) -> [usize; 3] {
        [self.out_channels, self.out_height(), self.out_width()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Dense,
    Conv(ConvGeometry),
}

/// Weights (`out × in`) and bias (`out`) of one layer.
///
/// For convolutions `in` is the patch dimension `C·k²`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
    pub kind: LayerKind,
}

impl<T: Real> LayerParams<T> {
    pub fn dense(weights: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        if weights.ndim() != 2 || bias.shape() != [weights.shape()[0]] {
            return Err(Error::shape("dense params", weights.shape(), bias.shape()));
        }
        Ok(Self {
            weights,
            bias,
            kind: LayerKind::Dense,
        })
    }

    pub fn conv(geometry: ConvGeometry, weights: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let expected = [geometry.out_channels, geometry.patch_dim()];
        if weights.shape() != expected {
            return Err(Error::shape("conv params", weights.shape(), &expected));
        }
        if bias.shape() != [geometry.out_channels] {
            return Err(Error::shape(
                "conv params",
                bias.shape(),
                &[geometry.out_channels],
            ));
        }
        Ok(Self {
            weights,
            bias,
            kind: LayerKind::Conv(geometry),
        })
    }

    /// Kaiming-uniform weights scaled by fan-in for a leaky ReLU, zero bias.
    pub fn init<R: Rng + ?Sized>(
        kind: LayerKind,
        in_features: usize,
        out_features: usize,
        slope: f64,
        rng: &mut R,
    ) -> Self {
        let bound = (6.0 / ((1.0 + slope * slope) * in_features as f64)).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        let data = (0..in_features * out_features)
            .map(|_| T::from_f64_lossy(dist.sample(rng)))
            .collect();
        Self {
            weights: Tensor::new(vec![out_features, in_features], data).expect("sized above"),
            bias: Tensor::zeros(&[out_features]),
            kind,
        }
    }

    pub fn in_features(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weights.shape()[0]
    }
}

/// `x·Wᵀ + b` for a `batch × in` matrix.
pub fn dense_forward<T: Real>(params: &LayerParams<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    affine_rows(&params.weights, &params.bias, x, "dense_forward")
}

pub(crate) fn affine_rows<T: Real>(
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    x: &Tensor<T>,
    op: &'static str,
) -> Result<Tensor<T>> {
    let (out_f, in_f) = (weights.shape()[0], weights.shape()[1]);
    if x.ndim() != 2 || x.cols() != in_f {
        return Err(Error::shape(op, x.shape(), weights.shape()));
    }
    let n = x.rows();
    let mut out = Vec::with_capacity(n * out_f);
    for _ in 0..n {
        out.extend_from_slice(bias.data());
    }
    ops::gemm(
        Operand::new(x.data(), n, in_f),
        Operand::new(weights.data(), out_f, in_f).t(),
        T::one(),
        &mut out,
    );
    Tensor::new(vec![n, out_f], out)
}

/// Convolution of a `batch×C×H×W` tensor, realised as patch extraction
/// followed by the dense map applied to every patch.
pub fn conv_forward<T: Real>(params: &LayerParams<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    let LayerKind::Conv(g) = params.kind else {
        return Err(Error::Geometry("conv_forward on a dense layer".into()));
    };
    let expected = [input.rows(), g.in_channels, g.in_height, g.in_width];
    if input.shape() != expected {
        return Err(Error::shape("conv_forward", input.shape(), &expected));
    }
    let batch = input.rows();
    let patches = ops::extract_patches_batch(
        input.data(),
        batch,
        g.in_channels,
        g.in_height,
        g.in_width,
        g.kernel,
        g.stride,
    )?;
    let rows = affine_rows(&params.weights, &params.bias, &patches, "conv_forward")?;
    patch_rows_to_channels(rows.data(), batch, g.out_channels, g.patches()).reshape(&[
        batch,
        g.out_channels,
        g.out_height(),
        g.out_width(),
    ])
}

/// `(B·p) × C'` patch-major rows to `B × C' × p` channel-major maps.
pub(crate) fn patch_rows_to_channels<T: Real>(
    rows: &[T],
    batch: usize,
    channels: usize,
    p: usize,
) -> Tensor<T> {
    let mut out = vec![T::zero(); batch * channels * p];
    for b in 0..batch {
        for i in 0..p {
            let src = &rows[(b * p + i) * channels..][..channels];
            for (c, &v) in src.iter().enumerate() {
                out[(b * channels + c) * p + i] = v;
            }
        }
    }
    Tensor::new(vec![batch, channels * p], out).expect("sized above")
}

/// Inverse of [`patch_rows_to_channels`].
pub(crate) fn channels_to_patch_rows<T: Real>(
    maps: &[T],
    batch: usize,
    channels: usize,
    p: usize,
) -> Vec<T> {
    let mut out = vec![T::zero(); batch * channels * p];
    for b in 0..batch {
        for c in 0..channels {
            let src = &maps[(b * channels + c) * p..][..p];
            for (i, &v) in src.iter().enumerate() {
                out[(b * p + i) * channels + c] = v;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dense_identity_and_hand_value() {
        let x = Tensor::<f64>::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]]).unwrap();
        let id = LayerParams::dense(Tensor::eye(2), Tensor::zeros(&[2])).unwrap();
        assert_eq!(dense_forward(&id, &x).unwrap(), x);

        let p = LayerParams::dense(
            Tensor::from_rows(&[vec![1.0, 1.0]]).unwrap(),
            Tensor::new(vec![1], vec![1.0]).unwrap(),
        )
        .unwrap();
        let x = Tensor::from_rows(&[vec![2.0, 3.0]]).unwrap();
        assert_eq!(dense_forward(&p, &x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn dense_empty_batch_and_mismatch() {
        let p = LayerParams::<f64>::dense(Tensor::eye(3), Tensor::zeros(&[3])).unwrap();
        let out = dense_forward(&p, &Tensor::zeros(&[0, 3])).unwrap();
        assert_eq!(out.shape(), &[0, 3]);
        assert!(dense_forward(&p, &Tensor::zeros(&[2, 2])).is_err());
    }

    #[test]
    fn unit_kernel_is_identity() {
        let g = ConvGeometry::new([1, 4, 5], 1, 1, 1).unwrap();
        let p = LayerParams::conv(g, Tensor::filled(&[1, 1], 1.0), Tensor::zeros(&[1])).unwrap();
        let x = Tensor::<f64>::new(vec![2, 1, 4, 5], (0..40).map(f64::from).collect()).unwrap();
        let y = conv_forward(&p, &x).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn all_ones_kernel_sums_window() {
        let g = ConvGeometry::new([1, 3, 3], 1, 2, 1).unwrap();
        let p = LayerParams::conv(g, Tensor::filled(&[1, 4], 1.0), Tensor::zeros(&[1])).unwrap();
        let y = conv_forward(&p, &Tensor::<f64>::filled(&[1, 1, 3, 3], 1.0)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[4.0; 4]);
    }

    #[test]
    fn full_size_geometry_chain() {
        let g1 = ConvGeometry::new([4, 84, 84], 32, 8, 4).unwrap();
        assert_eq!(g1.out_shape(), [32, 20, 20]);
        let g2 = ConvGeometry::new(g1.out_shape(), 64, 4, 2).unwrap();
        assert_eq!(g2.out_shape(), [64, 9, 9]);
        let g3 = ConvGeometry::new(g2.out_shape(), 64, 3, 1).unwrap();
        assert_eq!(g3.out_shape(), [64, 7, 7]);
        assert_eq!(g1.patch_dim(), 256);
        assert_eq!(g1.patches(), 400);
        assert_eq!(g3.patch_dim(), 576);
        assert_eq!(g3.patches(), 49);
    }

    #[test]
    fn conv_matches_per_patch_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = ConvGeometry::new([3, 9, 8], 5, 3, 2).unwrap();
        let p = LayerParams::<f64>::init(LayerKind::Conv(g), g.patch_dim(), 5, 0.01, &mut rng);
        let x = Tensor::<f64>::new(
            vec![1, 3, 9, 8],
            (0..216).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let y = conv_forward(&p, &x).unwrap();
        let img = x.clone().reshape(&[3, 9, 8]).unwrap();
        let patches = ops::extract_patches(&img, 3, 2).unwrap();
        let dense = LayerParams::dense(p.weights.clone(), p.bias.clone()).unwrap();
        let per_patch = dense_forward(&dense, &patches).unwrap();
        for c in 0..5 {
            for i in 0..g.patches() {
                let a = y.data()[c * g.patches() + i];
                let b = per_patch.get2(i, c);
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn init_is_seeded_with_zero_bias() {
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        let p = LayerParams::<f32>::init(LayerKind::Dense, 10, 4, 0.01, &mut a);
        let q = LayerParams::<f32>::init(LayerKind::Dense, 10, 4, 0.01, &mut b);
        assert_eq!(p, q);
        assert!(p.bias.data().iter().all(|&v| v == 0.0));
        let bound = (6.0f32 / (1.0001 * 10.0)).sqrt();
        assert!(p.weights.data().iter().all(|v| v.abs() <= bound));
    }
}

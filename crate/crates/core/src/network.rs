//! Fixed conv/dense stacks with optional per-layer decorrelation and
//! hand-derived backpropagation.
//!
//! Every layer is `y = leaky_relu(W·(R·z) + b)`. Convolutional layers apply
//! `R` to receptive-field patches and run the fused weights `A = W·R` on raw
//! patches, so decorrelated inputs are only materialised for the rows that
//! feed a correlation estimate.

use rand::Rng;

use crate::decorrelation::{
    self, decorrelation_loss, downsample_count, sample_rows, DecorrelationKind, DecorrelationState,
};
use crate::error::{Error, Result};
use crate::layer::{self, ConvGeometry, LayerKind, LayerParams};
use crate::ops::{self, Operand};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// Layer widths of a network; the output layer (one unit per action) is implicit.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub conv: Vec<ConvSpec>,
    pub hidden: Vec<usize>,
    pub slope: f64,
}

impl NetworkSpec {
    /// Three convolutions (8/4, 4/2, 3/1 kernels and strides; 32, 64, 64
    /// channels) followed by a 512-unit dense layer.
    pub fn image() -> Self {
        Self::image_with_widths([32, 64, 64], 512)
    }

    pub fn image_with_widths(channels: [usize; 3], dense: usize) -> Self {
        let geometry = [(8, 4), (4, 2), (3, 1)];
        Self {
            conv: channels
                .iter()
                .zip(geometry)
                .map(|(&out_channels, (kernel, stride))| ConvSpec {
                    out_channels,
                    kernel,
                    stride,
                })
                .collect(),
            hidden: vec![dense],
            slope: 0.01,
        }
    }

    /// Dense-only variant for flat observations: 256, 256, then 512 units.
    pub fn vector() -> Self {
        Self::vector_with_widths(&[256, 256], 512)
    }

    pub fn vector_with_widths(front: &[usize], dense: usize) -> Self {
        let mut hidden = front.to_vec();
        hidden.push(dense);
        Self {
            conv: Vec::new(),
            hidden,
            slope: 0.01,
        }
    }

    /// The default variant for an observation shape (`C×H×W` or flat).
    pub fn for_observation(obs_shape: &[usize]) -> Self {
        if obs_shape.len() == 3 {
            Self::image()
        } else {
            Self::vector()
        }
    }

    pub fn with_slope(mut self, slope: f64) -> Self {
        self.slope = slope;
        self
    }
}

/// How the patch count `p` in the downsampling rule is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PatchPooling {
    /// Patches of a single image.
    #[default]
    PerImage,
    /// Patches of the whole batch.
    PerBatch,
}

/// Decorrelation settings applied to every layer of one network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecorrelationConfig {
    pub eta: f64,
    pub downsample_b: f64,
    pub pooling: PatchPooling,
}

impl Default for DecorrelationConfig {
    fn default() -> Self {
        Self {
            eta: 1e-3,
            downsample_b: 9.0,
            pooling: PatchPooling::PerImage,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetLayer<T> {
    pub params: LayerParams<T>,
    pub decorrelation: Option<DecorrelationState<T>>,
}

#[derive(Debug, Clone)]
struct LayerCache<T> {
    /// Dense: decorrelated input `x`. Conv: raw patches `Z` of the batch.
    input: Tensor<T>,
    /// Conv only: the fused weights used in the forward pass.
    fused: Option<Tensor<T>>,
    pre_activation: Vec<T>,
}

#[derive(Debug, Clone)]
struct ForwardCache<T> {
    batch: usize,
    layers: Vec<LayerCache<T>>,
}

/// Parameter gradients in [`Network::params`] order, plus the input gradient
/// when it was requested.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub params: Vec<Tensor<T>>,
    pub input: Option<Tensor<T>>,
}

#[derive(Debug, Clone)]
pub struct Network<T> {
    layers: Vec<NetLayer<T>>,
    input_shape: Vec<usize>,
    slope: T,
    pooling: PatchPooling,
    downsample_b: f64,
    cache: Option<ForwardCache<T>>,
}

impl<T: Real> Network<T> {
    /// Builds `spec` for per-sample `input_shape` and `outputs` output units.
    ///
    /// Weights are drawn from `rng` in layer order; attaching decorrelation
    /// consumes no randomness, so equal seeds give equal weights either way.
    pub fn build<R: Rng + ?Sized>(
        spec: &NetworkSpec,
        input_shape: &[usize],
        outputs: usize,
        decorrelation: Option<DecorrelationConfig>,
        rng: &mut R,
    ) -> Result<Self> {
        if !(spec.slope > 0.0 && spec.slope < 1.0) {
            return Err(Error::config("leaky_slope", "must lie in (0, 1)"));
        }
        if outputs == 0 || input_shape.contains(&0) {
            return Err(Error::Geometry(format!(
                "invalid network shape {input_shape:?} -> {outputs}"
            )));
        }
        let mut layers = Vec::new();
        let attach = |dim: usize, kind: DecorrelationKind| {
            decorrelation.map(|c| DecorrelationState::identity(dim, c.eta, kind, c.downsample_b))
        };
        let mut features = if spec.conv.is_empty() {
            input_shape.iter().product()
        } else {
            let &[c, h, w] = input_shape else {
                return Err(Error::Geometry(format!(
                    "convolutional network needs a C×H×W input, got {input_shape:?}"
                )));
            };
            let mut shape = [c, h, w];
            for conv in &spec.conv {
                let g = ConvGeometry::new(shape, conv.out_channels, conv.kernel, conv.stride)?;
                let params = LayerParams::init(
                    LayerKind::Conv(g),
                    g.patch_dim(),
                    g.out_channels,
                    spec.slope,
                    rng,
                );
                layers.push(NetLayer {
                    params,
                    decorrelation: attach(
                        g.patch_dim(),
                        DecorrelationKind::Patchwise {
                            channels: g.in_channels,
                            kernel: g.kernel,
                        },
                    ),
                });
                shape = g.out_shape();
            }
            shape.iter().product()
        };
        for &width in spec.hidden.iter().chain(std::iter::once(&outputs)) {
            if width == 0 {
                return Err(Error::Geometry("layer width must be positive".into()));
            }
            let params = LayerParams::init(LayerKind::Dense, features, width, spec.slope, rng);
            layers.push(NetLayer {
                params,
                decorrelation: attach(features, DecorrelationKind::Dense),
            });
            features = width;
        }
        Ok(Self {
            layers,
            input_shape: input_shape.to_vec(),
            slope: T::from_f64_lossy(spec.slope),
            pooling: decorrelation.map(|c| c.pooling).unwrap_or_default(),
            downsample_b: decorrelation.map_or(DecorrelationConfig::default().downsample_b, |c| {
                c.downsample_b
            }),
            cache: None,
        })
    }

    /// Sets the patch sampling used when measuring layers that carry no
    /// decorrelating matrix.
    pub fn with_sampling(mut self, downsample_b: f64, pooling: PatchPooling) -> Self {
        self.downsample_b = downsample_b;
        self.pooling = pooling;
        self
    }

    pub fn layers(&self) -> &[NetLayer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [NetLayer<T>] {
        &mut self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.params.out_features())
    }

    pub fn is_decorrelated(&self) -> bool {
        self.layers.iter().any(|l| l.decorrelation.is_some())
    }

    pub fn decorrelation_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| l.decorrelation.is_some())
            .count()
    }

    pub fn set_decorrelation_rate(&mut self, eta: f64) {
        for state in self
            .layers
            .iter_mut()
            .filter_map(|l| l.decorrelation.as_mut())
        {
            state.eta = eta;
        }
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.layers
            .iter()
            .flat_map(|l| [&l.params.weights, &l.params.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.params.weights, &mut l.params.bias])
            .collect()
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.params().iter().map(|p| p.shape().to_vec()).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Forward pass that keeps the per-layer inputs for [`backward`](Self::backward)
    /// and for the next decorrelation update.
    pub fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (out, cache) = self.run(input, true)?;
        self.cache = cache;
        Ok(out)
    }

    /// Forward pass without caching.
    pub fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.run(input, false)?.0)
    }

    /// Sign of every pre-activation for `input`; used to detect activation
    /// kinks when differencing numerically.
    pub(crate) fn activation_pattern(&self, input: &Tensor<T>) -> Result<Vec<bool>> {
        let (_, cache) = self.run(input, true)?;
        Ok(cache
            .expect("kept cache")
            .layers
            .iter()
            .flat_map(|l| l.pre_activation.iter().map(|&v| v > T::zero()))
            .collect())
    }

    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    fn run(&self, input: &Tensor<T>, keep: bool) -> Result<(Tensor<T>, Option<ForwardCache<T>>)> {
        let per_sample: usize = self.input_shape.iter().product();
        if input.ndim() < 1 || input.cols() != per_sample {
            let mut expected = vec![input.rows()];
            expected.extend_from_slice(&self.input_shape);
            return Err(Error::shape("network forward", input.shape(), &expected));
        }
        let batch = input.rows();
        let mut caches = Vec::with_capacity(if keep { self.layers.len() } else { 0 });
        let mut activ = input.data().to_vec();
        for layer in &self.layers {
            let (pre, layer_cache) = match layer.params.kind {
                LayerKind::Conv(g) => self.conv_layer(layer, &g, batch, &activ)?,
                LayerKind::Dense => self.dense_layer(layer, batch, &activ)?,
            };
            if keep {
                activ = pre.clone();
                caches.push(LayerCache {
                    pre_activation: pre,
                    ..layer_cache
                });
            } else {
                activ = pre;
            }
            ops::leaky_relu_in_place(&mut activ, self.slope);
        }
        let out = Tensor::new(vec![batch, self.output_width()], activ)?;
        let cache = keep.then_some(ForwardCache {
            batch,
            layers: caches,
        });
        Ok((out, cache))
    }

    fn conv_layer(
        &self,
        layer: &NetLayer<T>,
        g: &ConvGeometry,
        batch: usize,
        activ: &[T],
    ) -> Result<(Vec<T>, LayerCache<T>)> {
        let patches = ops::extract_patches_batch(
            activ,
            batch,
            g.in_channels,
            g.in_height,
            g.in_width,
            g.kernel,
            g.stride,
        )?;
        let fused = match &layer.decorrelation {
            Some(state) => Some(decorrelation::fuse_weights(&layer.params.weights, state)?),
            None => None,
        };
        let weights = fused.as_ref().unwrap_or(&layer.params.weights);
        let rows = layer::affine_rows(weights, &layer.params.bias, &patches, "conv layer")?;
        let pre = layer::patch_rows_to_channels(rows.data(), batch, g.out_channels, g.patches());
        Ok((
            pre.into_data(),
            LayerCache {
                input: patches,
                fused,
                pre_activation: Vec::new(),
            },
        ))
    }

    fn dense_layer(
        &self,
        layer: &NetLayer<T>,
        batch: usize,
        activ: &[T],
    ) -> Result<(Vec<T>, LayerCache<T>)> {
        let in_f = layer.params.in_features();
        let z = Tensor::new(vec![batch, in_f], activ.to_vec())?;
        let x = match &layer.decorrelation {
            Some(state) => decorrelation::decorrelate(state, &z)?,
            None => z,
        };
        let pre = layer::affine_rows(&layer.params.weights, &layer.params.bias, &x, "dense layer")?;
        Ok((
            pre.into_data(),
            LayerCache {
                input: x,
                fused: None,
                pre_activation: Vec::new(),
            },
        ))
    }

    /// Backpropagates `upstream` (gradient w.r.t. the network output) through
    /// the most recent cached forward pass.
    ///
    /// Decorrelating matrices act as constants: gradients pass through them
    /// but none are produced for them.
    pub fn backward(&self, upstream: &Tensor<T>, input_grad: bool) -> Result<Gradients<T>> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("backward called before forward".into()))?;
        let batch = cache.batch;
        if upstream.shape() != [batch, self.output_width()] {
            return Err(Error::shape(
                "network backward",
                upstream.shape(),
                &[batch, self.output_width()],
            ));
        }
        let mut grads: Vec<Tensor<T>> = Vec::with_capacity(self.layers.len() * 2);
        let mut g = upstream.data().to_vec();
        let mut input = None;
        for (idx, (layer, lc)) in self.layers.iter().zip(&cache.layers).enumerate().rev() {
            ops::leaky_relu_backward(&lc.pre_activation, &mut g, self.slope);
            let need_input = idx > 0 || input_grad;
            let (dw, db, dz) = match layer.params.kind {
                LayerKind::Conv(geom) => conv_backward(layer, &geom, lc, batch, &g, need_input),
                LayerKind::Dense => dense_backward(layer, lc, batch, &g, need_input),
            };
            grads.push(db);
            grads.push(dw);
            match dz {
                Some(dz) if idx > 0 => g = dz,
                Some(dz) => {
                    let mut shape = vec![batch];
                    shape.extend_from_slice(&self.input_shape);
                    input = Some(Tensor::new(shape, dz)?);
                }
                None => {}
            }
        }
        grads.reverse();
        Ok(Gradients {
            params: grads,
            input,
        })
    }

    /// Estimates each decorrelated layer's input correlation from the last
    /// cached forward pass, applies `R ← R − η·C·R`, and returns the
    /// per-layer losses `d_l` measured before the update.
    ///
    /// Dense layers use the full batch; patchwise layers use a random subset
    /// of the pooled patch rows sized by [`downsample_count`].
    pub fn update_decorrelation<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Vec<f64>> {
        let cache = self.cache.take().ok_or_else(|| {
            Error::State("decorrelation update needs a cached forward pass".into())
        })?;
        let result = self.update_from_cache(&cache, rng);
        self.cache = Some(cache);
        result
    }

    fn update_from_cache<R: Rng + ?Sized>(
        &mut self,
        cache: &ForwardCache<T>,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let mut losses = Vec::new();
        for idx in 0..self.layers.len() {
            if self.layers[idx].decorrelation.is_none() {
                continue;
            }
            let x = self.layer_samples(idx, cache, rng)?;
            if x.rows() == 0 {
                continue;
            }
            let state = self.layers[idx]
                .decorrelation
                .as_mut()
                .expect("checked above");
            let estimate = decorrelation::update_from_samples(state, &x)?;
            losses.push(decorrelation_loss(&estimate));
            if !state.r.is_finite() {
                return Err(Error::State("decorrelating matrix diverged".into()));
            }
        }
        Ok(losses)
    }

    /// Per-layer `d_l` of the inputs seen by every layer in the last cached
    /// forward pass, leaving `R` untouched. Layers without a decorrelating
    /// matrix are measured on their raw inputs; randomness is consumed exactly
    /// as in [`Network::update_decorrelation`].
    pub fn measure_decorrelation<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        let cache = self.cache.as_ref().ok_or_else(|| {
            Error::State("decorrelation measurement needs a cached forward pass".into())
        })?;
        let mut losses = Vec::with_capacity(self.layers.len());
        for idx in 0..self.layers.len() {
            let x = self.layer_samples(idx, cache, rng)?;
            if x.rows() == 0 {
                continue;
            }
            losses.push(decorrelation_loss(&decorrelation::estimate_correlation(
                &x,
            )?));
        }
        Ok(losses)
    }

    /// Decorrelated inputs of layer `idx` used for a correlation estimate.
    fn layer_samples<R: Rng + ?Sized>(
        &self,
        idx: usize,
        cache: &ForwardCache<T>,
        rng: &mut R,
    ) -> Result<Tensor<T>> {
        let layer = &self.layers[idx];
        let lc = &cache.layers[idx];
        match layer.params.kind {
            LayerKind::Conv(g) => {
                let p = match self.pooling {
                    PatchPooling::PerImage => g.patches(),
                    PatchPooling::PerBatch => g.patches() * cache.batch,
                };
                let b = layer
                    .decorrelation
                    .as_ref()
                    .map_or(self.downsample_b, |state| state.downsample_b);
                let n = downsample_count(b, g.patch_dim(), p);
                let sampled = sample_rows(&lc.input, n, rng);
                match &layer.decorrelation {
                    Some(state) => decorrelation::decorrelate(state, &sampled),
                    None => Ok(sampled),
                }
            }
            LayerKind::Dense => Ok(lc.input.clone()),
        }
    }

    /// `θ̄ ← τ·θ + (1 − τ)·θ̄` over weights, biases and decorrelating matrices.
    pub fn soft_update_from(&mut self, source: &Network<T>, tau: f64) -> Result<()> {
        if self.layers.len() != source.layers.len() {
            return Err(Error::shape(
                "polyak_update",
                &[self.layers.len()],
                &[source.layers.len()],
            ));
        }
        for (dst, src) in self.layers.iter_mut().zip(&source.layers) {
            polyak_update(&src.params.weights, &mut dst.params.weights, tau)?;
            polyak_update(&src.params.bias, &mut dst.params.bias, tau)?;
            match (&mut dst.decorrelation, &src.decorrelation) {
                (Some(d), Some(s)) => polyak_update(&s.r, &mut d.r, tau)?,
                (None, None) => {}
                _ => return Err(Error::State("decorrelation layout differs".into())),
            }
        }
        Ok(())
    }

    /// Copy of this network in another precision (caches are dropped).
    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            layers: self
                .layers
                .iter()
                .map(|l| NetLayer {
                    params: LayerParams {
                        weights: l.params.weights.cast(),
                        bias: l.params.bias.cast(),
                        kind: l.params.kind,
                    },
                    decorrelation: l.decorrelation.as_ref().map(|s| DecorrelationState {
                        r: s.r.cast(),
                        eta: s.eta,
                        kind: s.kind,
                        downsample_b: s.downsample_b,
                    }),
                })
                .collect(),
            input_shape: self.input_shape.clone(),
            slope: U::from_f64_lossy(self.slope.to_f64_lossy()),
            pooling: self.pooling,
            downsample_b: self.downsample_b,
            cache: None,
        }
    }
}

/// Elementwise `θ̄' = τ·θ + (1 − τ)·θ̄`.
pub fn polyak_update<T: Real>(source: &Tensor<T>, target: &mut Tensor<T>, tau: f64) -> Result<()> {
    source.check_same_shape(target, "polyak_update")?;
    let tau_t = T::from_f64_lossy(tau);
    let keep = T::from_f64_lossy(1.0 - tau);
    for (t, &s) in target.data_mut().iter_mut().zip(source.data()) {
        *t = tau_t * s + keep * *t;
    }
    Ok(())
}

fn column_sums<T: Real>(g: &[T], cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); cols];
    for row in g.chunks(cols) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o = *o + v;
        }
    }
    out
}

type LayerGrads<T> = (Tensor<T>, Tensor<T>, Option<Vec<T>>);

fn dense_backward<T: Real>(
    layer: &NetLayer<T>,
    lc: &LayerCache<T>,
    batch: usize,
    g: &[T],
    need_input: bool,
) -> LayerGrads<T> {
    let w = &layer.params.weights;
    let (out_f, in_f) = (w.shape()[0], w.shape()[1]);
    let mut dw = vec![T::zero(); out_f * in_f];
    ops::gemm(
        Operand::new(g, batch, out_f).t(),
        Operand::new(lc.input.data(), batch, in_f),
        T::zero(),
        &mut dw,
    );
    let db = column_sums(g, out_f);
    let dz = need_input.then(|| {
        let mut dx = vec![T::zero(); batch * in_f];
        ops::gemm(
            Operand::new(g, batch, out_f),
            Operand::new(w.data(), out_f, in_f),
            T::zero(),
            &mut dx,
        );
        match &layer.decorrelation {
            Some(state) => {
                // x = z·Rᵀ, so dz = dx·R
                let mut dz = vec![T::zero(); batch * in_f];
                ops::gemm(
                    Operand::new(&dx, batch, in_f),
                    Operand::new(state.r.data(), in_f, in_f),
                    T::zero(),
                    &mut dz,
                );
                dz
            }
            None => dx,
        }
    });
    (
        Tensor::new(vec![out_f, in_f], dw).expect("sized"),
        Tensor::new(vec![out_f], db).expect("sized"),
        dz,
    )
}

fn conv_backward<T: Real>(
    layer: &NetLayer<T>,
    geom: &ConvGeometry,
    lc: &LayerCache<T>,
    batch: usize,
    g: &[T],
    need_input: bool,
) -> LayerGrads<T> {
    let (c_out, d, p) = (geom.out_channels, geom.patch_dim(), geom.patches());
    let rows = batch * p;
    let g_rows = layer::channels_to_patch_rows(g, batch, c_out, p);
    let mut da = vec![T::zero(); c_out * d];
    ops::gemm(
        Operand::new(&g_rows, rows, c_out).t(),
        Operand::new(lc.input.data(), rows, d),
        T::zero(),
        &mut da,
    );
    let dw = match &layer.decorrelation {
        Some(state) => {
            // A = W·R, so dW = dA·Rᵀ
            let mut dw = vec![T::zero(); c_out * d];
            ops::gemm(
                Operand::new(&da, c_out, d),
                Operand::new(state.r.data(), d, d).t(),
                T::zero(),
                &mut dw,
            );
            dw
        }
        None => da,
    };
    let db = column_sums(&g_rows, c_out);
    let dz = need_input.then(|| {
        let a = lc.fused.as_ref().unwrap_or(&layer.params.weights);
        let mut dpatch = vec![T::zero(); rows * d];
        ops::gemm(
            Operand::new(&g_rows, rows, c_out),
            Operand::new(a.data(), c_out, d),
            T::zero(),
            &mut dpatch,
        );
        ops::fold_patches_batch(
            &dpatch,
            batch,
            geom.in_channels,
            geom.in_height,
            geom.in_width,
            geom.kernel,
            geom.stride,
        )
    });
    (
        Tensor::new(vec![c_out, d], dw).expect("sized"),
        Tensor::new(vec![c_out], db).expect("sized"),
        dz,
    )
}

/// Default network for an observation shape: the convolutional stack for
/// `C×H×W` images, the dense-only variant for flat vectors.
pub fn build_network<T: Real, R: Rng + ?Sized>(
    obs_shape: &[usize],
    action_count: usize,
    decorrelate: bool,
    rng: &mut R,
) -> Result<Network<T>> {
    Network::build(
        &NetworkSpec::for_observation(obs_shape),
        obs_shape,
        action_count,
        decorrelate.then(DecorrelationConfig::default),
        rng,
    )
}

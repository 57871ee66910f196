//! Central finite-difference checks of the hand-written gradients, run in
//! 64-bit precision over seeded random configurations.
//!
//! Coordinates whose perturbation flips the sign of any Leaky ReLU
//! pre-activation straddle a kink, where the numerical derivative is
//! meaningless; those are skipped and counted.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::decorrelation::DecorrelationState;
use crate::error::Result;
use crate::network::{ConvSpec, DecorrelationConfig, Network, NetworkSpec};
use crate::ops::{leaky_relu, leaky_relu_backward, log_softmax, log_softmax_backward};
use crate::sac::{alpha_loss, policy_loss, q_loss, PolicyOutput};
use crate::tensor::Tensor;

/// Finite-difference step.
pub const STEP: f64 = 1e-5;
/// Largest accepted relative error.
pub const TOLERANCE: f64 = 1e-4;
/// Configurations per check used by [`run_all`] by default.
pub const DEFAULT_CONFIGS: usize = 50;

/// Coordinates sampled per parameter tensor in network checks.
const COORDS_PER_TENSOR: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckKind {
    Dense,
    Conv,
    LeakyRelu,
    LogSoftmax,
    DecorrelatedDense,
    DecorrelatedConv,
    QLoss,
    PolicyLoss,
    AlphaLoss,
}

impl CheckKind {
    pub const ALL: [CheckKind; 9] = [
        CheckKind::Dense,
        CheckKind::Conv,
        CheckKind::LeakyRelu,
        CheckKind::LogSoftmax,
        CheckKind::DecorrelatedDense,
        CheckKind::DecorrelatedConv,
        CheckKind::QLoss,
        CheckKind::PolicyLoss,
        CheckKind::AlphaLoss,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CheckKind::Dense => "dense",
            CheckKind::Conv => "conv",
            CheckKind::LeakyRelu => "leaky_relu",
            CheckKind::LogSoftmax => "log_softmax",
            CheckKind::DecorrelatedDense => "decorrelated_dense",
            CheckKind::DecorrelatedConv => "decorrelated_conv",
            CheckKind::QLoss => "q_loss",
            CheckKind::PolicyLoss => "policy_loss",
            CheckKind::AlphaLoss => "alpha_loss",
        }
    }
}

/// `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub kind: CheckKind,
    pub configs: usize,
    pub coordinates: usize,
    pub skipped: usize,
    pub max_relative_error: f64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.coordinates > 0 && self.max_relative_error < TOLERANCE
    }
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<20} configs={} coords={} skipped={} max_rel_err={:.3e}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.kind.name(),
            self.configs,
            self.coordinates,
            self.skipped,
            self.max_relative_error
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub outcomes: Vec<CheckOutcome>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.outcomes.iter().all(CheckOutcome::passed)
    }
}

/// Runs every check with `configs` random configurations each.
pub fn run_all(configs: usize, seed: u64) -> Result<GradcheckReport> {
    let outcomes = CheckKind::ALL
        .iter()
        .map(|&kind| check(kind, configs, seed))
        .collect::<Result<_>>()?;
    Ok(GradcheckReport { outcomes })
}

/// Runs one check over `configs` configurations derived from `seed`.
pub fn check(kind: CheckKind, configs: usize, seed: u64) -> Result<CheckOutcome> {
    let mut acc = Accumulator::default();
    for i in 0..configs {
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (i as u64 + 1));
        match kind {
            CheckKind::Dense => network_check(&mut rng, false, false, &mut acc)?,
            CheckKind::Conv => network_check(&mut rng, true, false, &mut acc)?,
            CheckKind::DecorrelatedDense => network_check(&mut rng, false, true, &mut acc)?,
            CheckKind::DecorrelatedConv => network_check(&mut rng, true, true, &mut acc)?,
            CheckKind::LeakyRelu => leaky_check(&mut rng, &mut acc),
            CheckKind::LogSoftmax => log_softmax_check(&mut rng, &mut acc)?,
            CheckKind::QLoss => q_loss_check(&mut rng, &mut acc)?,
            CheckKind::PolicyLoss => policy_loss_check(&mut rng, &mut acc)?,
            CheckKind::AlphaLoss => alpha_loss_check(&mut rng, &mut acc)?,
        }
    }
    Ok(CheckOutcome {
        kind,
        configs,
        coordinates: acc.coordinates,
        skipped: acc.skipped,
        max_relative_error: acc.max_error,
    })
}

#[derive(Default)]
struct Accumulator {
    coordinates: usize,
    skipped: usize,
    max_error: f64,
}

impl Accumulator {
    fn compare(&mut self, analytic: f64, numeric: f64) {
        self.coordinates += 1;
        let err = relative_error(analytic, numeric);
        // NaN must register as a failure.
        if err.is_nan() || err > self.max_error {
            self.max_error = if err.is_nan() { f64::INFINITY } else { err };
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(lo..hi)).collect(),
    )
    .expect("sized")
}

fn projection(u: &Tensor<f64>, y: &Tensor<f64>) -> f64 {
    u.data().iter().zip(y.data()).map(|(a, b)| a * b).sum()
}

fn random_spec(rng: &mut ChaCha8Rng, conv: bool) -> (NetworkSpec, Vec<usize>) {
    let slope = rng.gen_range(0.01..0.3);
    if conv {
        let kernel = rng.gen_range(2..=4);
        let stride = rng.gen_range(1..=3);
        let channels = rng.gen_range(1..=3);
        let h = kernel + rng.gen_range(0..=5);
        let w = kernel + rng.gen_range(0..=5);
        let spec = NetworkSpec {
            conv: vec![ConvSpec {
                out_channels: rng.gen_range(1..=4),
                kernel,
                stride,
            }],
            hidden: Vec::new(),
            slope,
        };
        (spec, vec![channels, h, w])
    } else {
        let spec = NetworkSpec {
            conv: Vec::new(),
            hidden: vec![rng.gen_range(2..=6)],
            slope,
        };
        (spec, vec![rng.gen_range(2..=8)])
    }
}

/// Gradient of `Σ u ⊙ net(x)` w.r.t. sampled parameters and inputs.
fn network_check(
    rng: &mut ChaCha8Rng,
    conv: bool,
    decorrelate: bool,
    acc: &mut Accumulator,
) -> Result<()> {
    let (spec, input_shape) = random_spec(rng, conv);
    let outputs = rng.gen_range(2..=5);
    let decor = decorrelate.then(DecorrelationConfig::default);
    let mut net = Network::<f64>::build(&spec, &input_shape, outputs, decor, rng)?;
    for layer in net.layers_mut() {
        for p in [&mut layer.params.weights, &mut layer.params.bias] {
            for v in p.data_mut() {
                *v += rng.gen_range(-0.3..0.3);
            }
        }
        if let Some(state) = layer.decorrelation.as_mut() {
            perturb_decorrelation(state, rng);
        }
    }
    let batch = rng.gen_range(1..=3);
    let mut shape = vec![batch];
    shape.extend_from_slice(&input_shape);
    let mut x = uniform(rng, &shape, -1.0, 1.0);
    let u = uniform(rng, &[batch, outputs], -1.0, 1.0);

    net.forward(&x)?;
    let grads = net.backward(&u, true)?;
    let pattern = net.activation_pattern(&x)?;

    for (t, grad) in grads.params.iter().enumerate() {
        let len = grad.len();
        for _ in 0..COORDS_PER_TENSOR.min(len) {
            let k = rng.gen_range(0..len);
            let original = net.params()[t].data()[k];
            let mut eval = |delta: f64| -> Result<(f64, bool)> {
                net.params_mut()[t].data_mut()[k] = original + delta;
                let loss = projection(&u, &net.infer(&x)?);
                let same = net.activation_pattern(&x)? == pattern;
                Ok((loss, same))
            };
            let (plus, same_plus) = eval(STEP)?;
            let (minus, same_minus) = eval(-STEP)?;
            net.params_mut()[t].data_mut()[k] = original;
            if !(same_plus && same_minus) {
                acc.skipped += 1;
                continue;
            }
            acc.compare(grad.data()[k], (plus - minus) / (2.0 * STEP));
        }
    }

    let input_grad = grads.input.expect("input gradient requested");
    for _ in 0..COORDS_PER_TENSOR.min(x.len()) {
        let k = rng.gen_range(0..x.len());
        let original = x.data()[k];
        let mut values = [0.0; 2];
        let mut same = true;
        for (slot, delta) in [STEP, -STEP].into_iter().enumerate() {
            x.data_mut()[k] = original + delta;
            values[slot] = projection(&u, &net.infer(&x)?);
            same &= net.activation_pattern(&x)? == pattern;
        }
        x.data_mut()[k] = original;
        if !same {
            acc.skipped += 1;
            continue;
        }
        acc.compare(input_grad.data()[k], (values[0] - values[1]) / (2.0 * STEP));
    }
    Ok(())
}

/// Replaces `R = I` with a random well-conditioned matrix near the identity.
fn perturb_decorrelation(state: &mut DecorrelationState<f64>, rng: &mut ChaCha8Rng) {
    let d = state.dim();
    let scale = 0.3 / (d as f64).sqrt();
    for v in state.r.data_mut() {
        *v += rng.gen_range(-scale..scale);
    }
}

fn leaky_check(rng: &mut ChaCha8Rng, acc: &mut Accumulator) {
    let n = rng.gen_range(1..=32);
    let slope = rng.gen_range(0.01..0.5);
    let x = uniform(rng, &[n], -2.0, 2.0);
    let u = uniform(rng, &[n], -1.0, 1.0);
    let mut grad = u.data().to_vec();
    leaky_relu_backward(x.data(), &mut grad, slope);
    for k in 0..n {
        if x.data()[k].abs() < 10.0 * STEP {
            acc.skipped += 1;
            continue;
        }
        let at = |delta: f64| {
            let mut y = x.clone();
            y.data_mut()[k] += delta;
            projection(&u, &leaky_relu(&y, slope))
        };
        acc.compare(grad[k], (at(STEP) - at(-STEP)) / (2.0 * STEP));
    }
}

fn log_softmax_check(rng: &mut ChaCha8Rng, acc: &mut Accumulator) -> Result<()> {
    let shape = [rng.gen_range(1..=4), rng.gen_range(2..=8)];
    let z = uniform(rng, &shape, -3.0, 3.0);
    let u = uniform(rng, &shape, -1.0, 1.0);
    let grad = log_softmax_backward(&log_softmax(&z), &u)?;
    for k in 0..z.len() {
        let at = |delta: f64| {
            let mut y = z.clone();
            y.data_mut()[k] += delta;
            projection(&u, &log_softmax(&y))
        };
        acc.compare(grad.data()[k], (at(STEP) - at(-STEP)) / (2.0 * STEP));
    }
    Ok(())
}

fn q_loss_check(rng: &mut ChaCha8Rng, acc: &mut Accumulator) -> Result<()> {
    let (b, a) = (rng.gen_range(1..=8), rng.gen_range(2..=6));
    let q = uniform(rng, &[b, a], -2.0, 2.0);
    let actions: Vec<usize> = (0..b).map(|_| rng.gen_range(0..a)).collect();
    let targets: Vec<f64> = (0..b).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let (_, grad) = q_loss(&q, &actions, &targets)?;
    for k in 0..q.len() {
        let at = |delta: f64| -> Result<f64> {
            let mut y = q.clone();
            y.data_mut()[k] += delta;
            Ok(q_loss(&y, &actions, &targets)?.0)
        };
        acc.compare(grad.data()[k], (at(STEP)? - at(-STEP)?) / (2.0 * STEP));
    }
    Ok(())
}

fn policy_loss_check(rng: &mut ChaCha8Rng, acc: &mut Accumulator) -> Result<()> {
    let shape = [rng.gen_range(1..=6), rng.gen_range(2..=6)];
    let logits = uniform(rng, &shape, -2.0, 2.0);
    let q1 = uniform(rng, &shape, -2.0, 2.0);
    let q2 = uniform(rng, &shape, -2.0, 2.0);
    let alpha = rng.gen_range(0.01..1.0);
    let (_, grad) = policy_loss(&PolicyOutput::from_logits(&logits), &q1, &q2, alpha)?;
    for k in 0..logits.len() {
        let at = |delta: f64| -> Result<f64> {
            let mut y = logits.clone();
            y.data_mut()[k] += delta;
            Ok(policy_loss(&PolicyOutput::from_logits(&y), &q1, &q2, alpha)?.0)
        };
        acc.compare(grad.data()[k], (at(STEP)? - at(-STEP)?) / (2.0 * STEP));
    }
    Ok(())
}

fn alpha_loss_check(rng: &mut ChaCha8Rng, acc: &mut Accumulator) -> Result<()> {
    let shape = [rng.gen_range(1..=6), rng.gen_range(2..=6)];
    let policy = PolicyOutput::from_logits(&uniform(rng, &shape, -2.0, 2.0));
    let log_alpha = rng.gen_range(-3.0..1.0);
    let target = rng.gen_range(-(shape[1] as f64)..(shape[1] as f64).ln());
    let (_, grad) = alpha_loss(log_alpha, &policy, target)?;
    let at = |delta: f64| -> Result<f64> { Ok(alpha_loss(log_alpha + delta, &policy, target)?.0) };
    acc.compare(grad, (at(STEP)? - at(-STEP)?) / (2.0 * STEP));
    Ok(())
}

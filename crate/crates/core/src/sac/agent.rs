use rand::Rng;

use crate::error::{Error, Result};
use crate::network::{DecorrelationConfig, Network};
use crate::optim::AdamState;
use crate::real::Real;
use crate::sac::config::{NetworkId, SacConfig};
use crate::sac::losses::{alpha_loss, policy_loss, q_loss, q_target, PolicyOutput};
use crate::sac::replay::ReplayBuffer;
use crate::tensor::Tensor;

/// Stages of one gradient step, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdatePhase {
    QUpdate,
    PolicyUpdate,
    AlphaUpdate,
    TargetUpdate,
    DecorrelationUpdate,
}

/// Losses and diagnostics of one gradient step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainStepReport {
    pub q1_loss: f64,
    pub q2_loss: f64,
    pub policy_loss: f64,
    pub alpha_loss: f64,
    /// Temperature used during this step (before its own update).
    pub alpha: f64,
    pub entropy: f64,
    /// Per-layer `d_l` for each decorrelated network, measured on the inputs
    /// that fed the update. The policy is always included; without a
    /// decorrelating matrix its raw layer inputs are measured.
    pub decorrelation: Vec<(NetworkId, Vec<f64>)>,
    pub phases: Vec<UpdatePhase>,
}

/// Policy, twin critics, their Polyak targets, the temperature and the
/// optimiser state.
#[derive(Debug, Clone)]
pub struct SacAgent<T> {
    pub policy: Network<T>,
    pub q1: Network<T>,
    pub q2: Network<T>,
    pub q1_target: Network<T>,
    pub q2_target: Network<T>,
    pub log_alpha: T,
    policy_opt: AdamState<T>,
    q1_opt: AdamState<T>,
    q2_opt: AdamState<T>,
    alpha_opt: AdamState<T>,
    config: SacConfig,
    action_count: usize,
    gradient_updates: u64,
}

impl<T: Real> SacAgent<T> {
    /// Initialises the policy, then Q1, then Q2 from `init_rng`; targets
    /// start as exact copies of their critics.
    pub fn new<R: Rng + ?Sized>(
        config: SacConfig,
        obs_shape: &[usize],
        action_count: usize,
        init_rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        if action_count < 2 {
            return Err(Error::config("action_count", "need at least two actions"));
        }
        let spec = config.architecture.spec_for(obs_shape);
        let build = |id: NetworkId, rng: &mut R| {
            let decor = config.decorrelates(id).then(|| DecorrelationConfig {
                eta: config.decor_lr(id),
                downsample_b: config.downsample_b,
                pooling: config.patch_pooling,
            });
            Network::build(&spec, obs_shape, action_count, decor, rng)
                .map(|n| n.with_sampling(config.downsample_b, config.patch_pooling))
        };
        let policy = build(NetworkId::Policy, init_rng)?;
        let q1 = build(NetworkId::Q1, init_rng)?;
        let q2 = build(NetworkId::Q2, init_rng)?;
        let shapes = |n: &Network<T>| n.param_shapes();
        let adam = |n: &Network<T>| AdamState::new(shapes(n).iter().map(Vec::as_slice));
        Ok(Self {
            policy_opt: adam(&policy),
            q1_opt: adam(&q1),
            q2_opt: adam(&q2),
            alpha_opt: AdamState::new([&[1usize][..]]),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            policy,
            q1,
            q2,
            log_alpha: T::from_f64_lossy(config.init_log_alpha),
            config,
            action_count,
            gradient_updates: 0,
        })
    }

    pub fn config(&self) -> &SacConfig {
        &self.config
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    pub fn alpha(&self) -> T {
        self.log_alpha.exp()
    }

    pub fn gradient_updates(&self) -> u64 {
        self.gradient_updates
    }

    pub fn network(&self, id: NetworkId) -> &Network<T> {
        match id {
            NetworkId::Policy => &self.policy,
            NetworkId::Q1 => &self.q1,
            NetworkId::Q2 => &self.q2,
        }
    }

    /// Decorrelated networks in canonical order.
    pub fn decorrelated_networks(&self) -> Vec<NetworkId> {
        NetworkId::ALL
            .into_iter()
            .filter(|&id| self.network(id).is_decorrelated())
            .collect()
    }

    fn is_decorrelating(&self) -> bool {
        [&self.policy, &self.q1, &self.q2]
            .iter()
            .any(|n| n.is_decorrelated())
    }

    /// Action distribution for a batch of states (no caching).
    pub fn policy_distribution(&self, states: &Tensor<T>) -> Result<PolicyOutput<T>> {
        if states.rows() == 0 {
            return Err(Error::EmptyInput(
                "policy_distribution needs a non-empty batch",
            ));
        }
        Ok(PolicyOutput::from_logits(&self.policy.infer(states)?))
    }

    /// Samples an action for a single observation.
    pub fn act<R: Rng + ?Sized>(&self, observation: &Tensor<f32>, rng: &mut R) -> Result<usize> {
        let mut shape = vec![1];
        shape.extend_from_slice(observation.shape());
        let x = to_real::<T>(observation).reshape(&shape)?;
        let dist = self.policy_distribution(&x)?;
        let probs: Vec<f64> = dist.probs.data().iter().map(|p| p.to_f64_lossy()).collect();
        Ok(sample_action(&probs, rng))
    }

    /// One gradient step: critics, policy, temperature, targets, then the
    /// decorrelating matrices of every decorrelated network.
    pub fn train_step<R1: Rng + ?Sized, R2: Rng + ?Sized>(
        &mut self,
        buffer: &ReplayBuffer,
        replay_rng: &mut R1,
        downsample_rng: &mut R2,
    ) -> Result<TrainStepReport> {
        let batch = buffer.sample(self.config.batch_size, replay_rng)?;
        let states = to_real::<T>(&batch.states);
        let next_states = to_real::<T>(&batch.next_states);
        let rewards: Vec<T> = batch
            .rewards
            .iter()
            .map(|&r| T::from_f64_lossy(f64::from(r)))
            .collect();
        let alpha = self.alpha();
        let gamma = T::from_f64_lossy(self.config.gamma);
        let lr = self.config.sac_lr;
        let mut phases = Vec::with_capacity(5);

        let next_policy = PolicyOutput::from_logits(&self.policy.infer(&next_states)?);
        let next_q1 = self.q1_target.infer(&next_states)?;
        let next_q2 = self.q2_target.infer(&next_states)?;
        let targets = q_target(
            &next_policy,
            &next_q1,
            &next_q2,
            &rewards,
            &batch.terminals,
            alpha,
            gamma,
        )?;

        let q1_loss = critic_update(
            &mut self.q1,
            &mut self.q1_opt,
            &states,
            &batch.actions,
            &targets,
            lr,
        )?;
        let q2_loss = critic_update(
            &mut self.q2,
            &mut self.q2_opt,
            &states,
            &batch.actions,
            &targets,
            lr,
        )?;
        phases.push(UpdatePhase::QUpdate);

        let logits = self.policy.forward(&states)?;
        let current = PolicyOutput::from_logits(&logits);
        let q1_now = self.q1.forward(&states)?;
        let q2_now = self.q2.forward(&states)?;
        let (pi_loss, logit_grad) = policy_loss(&current, &q1_now, &q2_now, alpha)?;
        let grads = self.policy.backward(&logit_grad, false)?;
        self.policy_opt
            .step(&mut self.policy.params_mut(), &grads.params, lr)?;
        phases.push(UpdatePhase::PolicyUpdate);

        let target_entropy = T::from_f64_lossy(self.config.entropy_target_for(self.action_count));
        let (a_loss, a_grad) = alpha_loss(self.log_alpha, &current, target_entropy)?;
        let mut log_alpha = Tensor::scalar(self.log_alpha);
        self.alpha_opt
            .step(&mut [&mut log_alpha], &[Tensor::scalar(a_grad)], lr)?;
        self.log_alpha = log_alpha.data()[0];
        phases.push(UpdatePhase::AlphaUpdate);

        self.gradient_updates += 1;
        if self
            .gradient_updates
            .is_multiple_of(self.config.target_update_interval)
        {
            self.q1_target.soft_update_from(&self.q1, self.config.tau)?;
            self.q2_target.soft_update_from(&self.q2, self.config.tau)?;
            phases.push(UpdatePhase::TargetUpdate);
        }

        let mut decorrelation = Vec::new();
        for id in NetworkId::ALL {
            let net = match id {
                NetworkId::Policy => &mut self.policy,
                NetworkId::Q1 => &mut self.q1,
                NetworkId::Q2 => &mut self.q2,
            };
            if net.is_decorrelated() {
                decorrelation.push((id, net.update_decorrelation(downsample_rng)?));
            } else if id == NetworkId::Policy {
                decorrelation.push((id, net.measure_decorrelation(downsample_rng)?));
            }
        }
        if self.is_decorrelating() {
            phases.push(UpdatePhase::DecorrelationUpdate);
        }

        let entropy = current.entropy();
        let mean_entropy =
            entropy.iter().map(|e| e.to_f64_lossy()).sum::<f64>() / entropy.len() as f64;
        let report = TrainStepReport {
            q1_loss: q1_loss.to_f64_lossy(),
            q2_loss: q2_loss.to_f64_lossy(),
            policy_loss: pi_loss.to_f64_lossy(),
            alpha_loss: a_loss.to_f64_lossy(),
            alpha: alpha.to_f64_lossy(),
            entropy: mean_entropy,
            decorrelation,
            phases,
        };
        if ![
            report.q1_loss,
            report.q2_loss,
            report.policy_loss,
            report.alpha_loss,
        ]
        .iter()
        .all(|v| v.is_finite())
        {
            return Err(Error::State("non-finite loss during training".into()));
        }
        Ok(report)
    }
}

fn critic_update<T: Real>(
    net: &mut Network<T>,
    opt: &mut AdamState<T>,
    states: &Tensor<T>,
    actions: &[usize],
    targets: &[T],
    lr: f64,
) -> Result<T> {
    let q = net.forward(states)?;
    let (loss, grad) = q_loss(&q, actions, targets)?;
    let grads = net.backward(&grad, false)?;
    opt.step(&mut net.params_mut(), &grads.params, lr)?;
    Ok(loss)
}

fn to_real<T: Real>(x: &Tensor<f32>) -> Tensor<T> {
    x.cast()
}

/// Categorical draw by inverse CDF.
pub fn sample_action<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last_positive
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::env::{check_action, EnvSpec, EnvStep, Environment, Info};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Chain MDP with a block of perfectly correlated noise features.
///
/// Two actions (0 left, 1 right); the agent starts in cell 0 and receives +1
/// on reaching the last cell, which ends the episode. Episodes are truncated
/// after `4·length` steps. The observation is the one-hot position followed
/// by `noise_dims` features `cᵢ·g` sharing one standard normal draw `g` per
/// step, with fixed per-dimension scales `cᵢ`.
#[derive(Debug, Clone)]
pub struct NoisyChain {
    length: usize,
    scales: Vec<f32>,
    spec: EnvSpec,
    rng: ChaCha8Rng,
    position: usize,
    steps: usize,
    active: bool,
}

impl NoisyChain {
    pub fn new<R: Rng + ?Sized>(length: usize, noise_dims: usize, rng: &mut R) -> Result<Self> {
        if length < 3 {
            return Err(Error::config("chain_length", "must be at least 3"));
        }
        let scales = (0..noise_dims)
            .map(|_| {
                let magnitude = rng.gen_range(0.5f32..1.5);
                if rng.gen_bool(0.5) {
                    magnitude
                } else {
                    -magnitude
                }
            })
            .collect();
        Ok(Self {
            length,
            scales,
            spec: EnvSpec {
                action_count: 2,
                observation_shape: vec![length + noise_dims],
                max_episode_steps: Some(4 * length),
            },
            rng: ChaCha8Rng::seed_from_u64(0),
            position: 0,
            steps: 0,
            active: false,
        })
    }

    pub fn scales(&self) -> &[f32] {
        &self.scales
    }

    pub fn position(&self) -> usize {
        self.position
    }

    fn observe(&mut self) -> Tensor<f32> {
        let g: f32 = self.rng.sample(StandardNormal);
        let mut obs = vec![0.0; self.length];
        obs[self.position] = 1.0;
        obs.extend(self.scales.iter().map(|c| c * g));
        Tensor::new(self.spec.observation_shape.clone(), obs).expect("sized")
    }
}

impl Environment for NoisyChain {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Tensor<f32> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.position = 0;
        self.steps = 0;
        self.active = true;
        self.observe()
    }

    fn step(&mut self, action: usize) -> Result<EnvStep> {
        check_action(&self.spec, action)?;
        if !self.active {
            return Err(Error::State(
                "step on a finished or unstarted episode".into(),
            ));
        }
        self.position = if action == 0 {
            self.position.saturating_sub(1)
        } else {
            (self.position + 1).min(self.length - 1)
        };
        self.steps += 1;
        let terminal = self.position == self.length - 1;
        let truncated = !terminal && self.steps >= 4 * self.length;
        self.active = !(terminal || truncated);
        Ok(EnvStep {
            observation: self.observe(),
            reward: if terminal { 1.0 } else { 0.0 },
            terminal,
            truncated,
            info: Info::new(),
        })
    }
}

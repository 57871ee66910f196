use rand::Rng;

use crate::env::Environment;
use crate::error::Result;
use crate::real::Real;
use crate::sac::agent::SacAgent;
use crate::sac::config::SacConfig;
use crate::sac::replay::{ReplayBuffer, Transition};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeSummary {
    pub index: usize,
    pub ret: f64,
    pub length: usize,
}

/// Owns an environment and its current observation across episodes.
pub struct Collector {
    env: Box<dyn Environment>,
    observation: Tensor<f32>,
    seed_base: u64,
    episode: usize,
    ret: f64,
    length: usize,
}

fn episode_seed(base: u64, episode: usize) -> u64 {
    base ^ (episode as u64)
        .wrapping_add(1)
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

impl Collector {
    pub fn new(mut env: Box<dyn Environment>, seed_base: u64) -> Self {
        let observation = env.reset(episode_seed(seed_base, 0));
        Self {
            env,
            observation,
            seed_base,
            episode: 0,
            ret: 0.0,
            length: 0,
        }
    }

    pub fn env(&self) -> &dyn Environment {
        self.env.as_ref()
    }

    pub fn observation(&self) -> &Tensor<f32> {
        &self.observation
    }

    pub fn episodes_finished(&self) -> usize {
        self.episode
    }

    /// Executes `action`, advancing to a fresh episode when this one ends.
    pub fn advance(&mut self, action: usize) -> Result<(Transition, Option<EpisodeSummary>)> {
        let step = self.env.step(action)?;
        self.ret += f64::from(step.reward);
        self.length += 1;
        let done = step.done();
        let transition = Transition {
            state: std::mem::replace(&mut self.observation, step.observation.clone()),
            action,
            reward: step.reward,
            next_state: step.observation,
            terminal: step.terminal,
        };
        let finished = done.then(|| {
            let summary = EpisodeSummary {
                index: self.episode,
                ret: self.ret,
                length: self.length,
            };
            self.episode += 1;
            self.ret = 0.0;
            self.length = 0;
            self.observation = self.env.reset(episode_seed(self.seed_base, self.episode));
            summary
        });
        Ok((transition, finished))
    }

    /// Uniform-random action while `step_index < initial_random_steps`,
    /// otherwise a policy sample; the transition is appended to `buffer`.
    pub fn step<T: Real, R: Rng + ?Sized>(
        &mut self,
        agent: &SacAgent<T>,
        buffer: &mut ReplayBuffer,
        step_index: usize,
        rng: &mut R,
    ) -> Result<(Transition, Option<EpisodeSummary>)> {
        let action = if step_index < agent.config().initial_random_steps {
            rng.gen_range(0..agent.action_count())
        } else {
            agent.act(&self.observation, rng)?
        };
        let (transition, finished) = self.advance(action)?;
        buffer.push(&transition)?;
        Ok((transition, finished))
    }
}

/// One environment interaction of the training loop.
pub fn act_environment_step<T: Real, R: Rng + ?Sized>(
    agent: &SacAgent<T>,
    collector: &mut Collector,
    buffer: &mut ReplayBuffer,
    step_index: usize,
    config: &SacConfig,
    rng: &mut R,
) -> Result<Transition> {
    debug_assert_eq!(
        config.initial_random_steps,
        agent.config().initial_random_steps
    );
    Ok(collector.step(agent, buffer, step_index, rng)?.0)
}

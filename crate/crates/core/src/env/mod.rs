//! Environment interface, preprocessing wrappers and two desk-scale tasks.

use std::collections::BTreeMap;

use crate::error::Result;
use crate::tensor::Tensor;

mod chain;
mod grid;
mod wrappers;

pub use chain::NoisyChain;
pub use grid::GridTreasure;
pub use wrappers::{ActionRepeat, FrameStack, StickyActions};

/// Diagnostic values attached to a step (e.g. the executed action).
pub type Info = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep {
    pub observation: Tensor<f32>,
    pub reward: f32,
    /// The task ended; no bootstrapping past this step.
    pub terminal: bool,
    /// The episode was cut by a step cap.
    pub truncated: bool,
    pub info: Info,
}

impl EnvStep {
    pub fn done(&self) -> bool {
        self.terminal || self.truncated
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnvSpec {
    pub action_count: usize,
    pub observation_shape: Vec<usize>,
    pub max_episode_steps: Option<usize>,
}

impl EnvSpec {
    pub fn is_image(&self) -> bool {
        self.observation_shape.len() == 3
    }
}

pub trait Environment: Send {
    fn spec(&self) -> &EnvSpec;

    /// Starts a new episode; deterministic given `seed`.
    fn reset(&mut self, seed: u64) -> Tensor<f32>;

    /// Advances one step. Fails for out-of-range actions and for stepping a
    /// finished or never-reset episode.
    fn step(&mut self, action: usize) -> Result<EnvStep>;
}

impl<E: Environment + ?Sized> Environment for Box<E> {
    fn spec(&self) -> &EnvSpec {
        (**self).spec()
    }

    fn reset(&mut self, seed: u64) -> Tensor<f32> {
        (**self).reset(seed)
    }

    fn step(&mut self, action: usize) -> Result<EnvStep> {
        (**self).step(action)
    }
}

/// Preprocessing applied on top of a raw task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WrapperConfig {
    pub sticky_prob: f64,
    pub action_repeat: usize,
    pub frame_stack: usize,
}

impl Default for WrapperConfig {
    fn default() -> Self {
        Self {
            sticky_prob: 0.25,
            action_repeat: 4,
            frame_stack: 4,
        }
    }
}

/// `raw → sticky actions → action repeat → frame stack`, the last only for
/// image observations.
pub fn compose(
    raw: Box<dyn Environment>,
    wrappers: WrapperConfig,
    sticky_seed: u64,
) -> Result<Box<dyn Environment>> {
    let image = raw.spec().is_image();
    let env = StickyActions::new(raw, wrappers.sticky_prob, sticky_seed)?;
    let env = ActionRepeat::new(env, wrappers.action_repeat)?;
    if image {
        Ok(Box::new(FrameStack::new(env, wrappers.frame_stack)?))
    } else {
        Ok(Box::new(env))
    }
}

pub(crate) fn check_action(spec: &EnvSpec, action: usize) -> Result<()> {
    if action >= spec.action_count {
        return Err(crate::Error::Env(format!(
            "action {action} out of range for {} actions",
            spec.action_count
        )));
    }
    Ok(())
}

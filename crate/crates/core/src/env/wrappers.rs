use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{EnvSpec, EnvStep, Environment};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Repeats the previously executed action with probability `p`.
///
/// The executed action is reported as `info["executed_action"]` and becomes
/// the previous action for the next draw. The first step of an episode always
/// executes the requested action.
pub struct StickyActions<E> {
    inner: E,
    prob: f64,
    rng: ChaCha8Rng,
    previous: Option<usize>,
}

impl<E: Environment> StickyActions<E> {
    pub fn new(inner: E, prob: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&prob) {
            return Err(Error::config("sticky_prob", "must lie in [0, 1]"));
        }
        Ok(Self {
            inner,
            prob,
            rng: ChaCha8Rng::seed_from_u64(seed),
            previous: None,
        })
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }
}

impl<E: Environment> Environment for StickyActions<E> {
    fn spec(&self) -> &EnvSpec {
        self.inner.spec()
    }

    fn reset(&mut self, seed: u64) -> Tensor<f32> {
        self.previous = None;
        self.inner.reset(seed)
    }

    fn step(&mut self, action: usize) -> Result<EnvStep> {
        crate::env::check_action(self.spec(), action)?;
        let repeat = self.rng.gen::<f64>() < self.prob;
        let executed = match self.previous {
            Some(prev) if repeat => prev,
            _ => action,
        };
        let mut step = self.inner.step(executed)?;
        self.previous = Some(executed);
        step.info.insert("executed_action".into(), executed as f64);
        step.info.insert("requested_action".into(), action as f64);
        Ok(step)
    }
}

/// Applies each action `k` times, summing rewards and stopping early when the
/// episode ends; the last observation is returned.
pub struct ActionRepeat<E> {
    inner: E,
    repeats: usize,
}

impl<E: Environment> ActionRepeat<E> {
    pub fn new(inner: E, repeats: usize) -> Result<Self> {
        if repeats == 0 {
            return Err(Error::config("action_repeat", "must be at least 1"));
        }
        Ok(Self { inner, repeats })
    }
}

impl<E: Environment> Environment for ActionRepeat<E> {
    fn spec(&self) -> &EnvSpec {
        self.inner.spec()
    }

    fn reset(&mut self, seed: u64) -> Tensor<f32> {
        self.inner.reset(seed)
    }

    fn step(&mut self, action: usize) -> Result<EnvStep> {
        let mut total = 0.0;
        let mut executed = 0;
        loop {
            let mut step = self.inner.step(action)?;
            total += step.reward;
            executed += 1;
            if step.done() || executed == self.repeats {
                step.reward = total;
                step.info.insert("repeats".into(), executed as f64);
                return Ok(step);
            }
        }
    }
}

/// Concatenates the `k` most recent `C×H×W` frames along the channel axis,
/// oldest first. After a reset the initial frame fills every slot.
pub struct FrameStack<E> {
    inner: E,
    depth: usize,
    spec: EnvSpec,
    frames: VecDeque<Tensor<f32>>,
}

impl<E: Environment> FrameStack<E> {
    pub fn new(inner: E, depth: usize) -> Result<Self> {
        if depth == 0 {
            return Err(Error::config("frame_stack", "must be at least 1"));
        }
        let inner_spec = inner.spec();
        let &[c, h, w] = inner_spec.observation_shape.as_slice() else {
            return Err(Error::config(
                "frame_stack",
                format!(
                    "needs C×H×W image observations, got {:?}",
                    inner_spec.observation_shape
                ),
            ));
        };
        let spec = EnvSpec {
            observation_shape: vec![c * depth, h, w],
            ..inner_spec.clone()
        };
        Ok(Self {
            inner,
            depth,
            spec,
            frames: VecDeque::with_capacity(depth),
        })
    }

    fn stacked(&self) -> Tensor<f32> {
        let mut data = Vec::with_capacity(self.spec.observation_shape.iter().product());
        for f in &self.frames {
            data.extend_from_slice(f.data());
        }
        Tensor::new(self.spec.observation_shape.clone(), data).expect("sized")
    }
}

impl<E: Environment> Environment for FrameStack<E> {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Tensor<f32> {
        let first = self.inner.reset(seed);
        self.frames.clear();
        for _ in 0..self.depth {
            self.frames.push_back(first.clone());
        }
        self.stacked()
    }

    fn step(&mut self, action: usize) -> Result<EnvStep> {
        let mut step = self.inner.step(action)?;
        if self.frames.len() == self.depth {
            self.frames.pop_front();
        }
        self.frames.push_back(step.observation);
        step.observation = self.stacked();
        Ok(step)
    }
}

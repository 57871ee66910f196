use crate::env::{check_action, EnvSpec, EnvStep, Environment, Info};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const STEP_PENALTY: f32 = -0.01;
const EPISODE_CAP: usize = 200;

/// Square grid rendered as a one-channel image. The agent starts top-left and
/// must reach the treasure in the bottom-right corner.
///
/// Actions: 0 up, 1 down, 2 left, 3 right; moves into a wall leave the agent
/// in place. Reaching the treasure pays +1 and ends the episode, every other
/// step costs 0.01, and episodes are truncated after 200 steps.
#[derive(Debug, Clone)]
pub struct GridTreasure {
    size: usize,
    scale: usize,
    spec: EnvSpec,
    agent: (usize, usize),
    steps: usize,
    active: bool,
}

impl GridTreasure {
    pub fn new(size: usize, render_scale: usize) -> Result<Self> {
        if size < 3 {
            return Err(Error::config("grid_size", "must be at least 3"));
        }
        if render_scale == 0 {
            return Err(Error::config("render_scale", "must be positive"));
        }
        let side = size * render_scale;
        Ok(Self {
            size,
            scale: render_scale,
            spec: EnvSpec {
                action_count: 4,
                observation_shape: vec![1, side, side],
                max_episode_steps: Some(EPISODE_CAP),
            },
            agent: (0, 0),
            steps: 0,
            active: false,
        })
    }

    pub fn agent(&self) -> (usize, usize) {
        self.agent
    }

    fn treasure(&self) -> (usize, usize) {
        (self.size - 1, self.size - 1)
    }

    fn render(&self) -> Tensor<f32> {
        let side = self.size * self.scale;
        let mut img = vec![0.0f32; side * side];
        let mut paint = |(r, c): (usize, usize), v: f32| {
            for y in r * self.scale..(r + 1) * self.scale {
                img[y * side + c * self.scale..][..self.scale].fill(v);
            }
        };
        if self.agent != self.treasure() {
            paint(self.treasure(), 0.5);
        }
        paint(self.agent, 1.0);
        Tensor::new(vec![1, side, side], img).expect("sized")
    }
}

impl Environment for GridTreasure {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, _seed: u64) -> Tensor<f32> {
        self.agent = (0, 0);
        self.steps = 0;
        self.active = true;
        self.render()
    }

    fn step(&mut self, action: usize) -> Result<EnvStep> {
        check_action(&self.spec, action)?;
        if !self.active {
            return Err(Error::State(
                "step on a finished or unstarted episode".into(),
            ));
        }
        let (r, c) = self.agent;
        let last = self.size - 1;
        self.agent = match action {
            0 => (r.saturating_sub(1), c),
            1 => ((r + 1).min(last), c),
            2 => (r, c.saturating_sub(1)),
            _ => (r, (c + 1).min(last)),
        };
        self.steps += 1;
        let terminal = self.agent == self.treasure();
        let truncated = !terminal && self.steps >= EPISODE_CAP;
        self.active = !(terminal || truncated);
        Ok(EnvStep {
            observation: self.render(),
            reward: if terminal { 1.0 } else { STEP_PENALTY },
            terminal,
            truncated,
            info: Info::new(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn count(obs: &Tensor<f32>, v: f32) -> usize {
        obs.data().iter().filter(|&&x| x == v).count()
    }

    #[test]
    fn reset_is_deterministic_and_shaped() {
        let mut env = GridTreasure::new(5, 2).unwrap();
        let a = env.reset(1);
        let b = env.reset(99);
        assert_eq!(a, b);
        assert_eq!(a.shape(), env.spec().observation_shape.as_slice());
        assert_eq!(count(&a, 1.0), 4);
        assert_eq!(count(&a, 0.5), 4);
    }

    #[test]
    fn optimal_path_return() {
        let mut env = GridTreasure::new(5, 1).unwrap();
        env.reset(0);
        let mut total = 0.0;
        let path = [3, 3, 3, 3, 1, 1, 1, 1];
        for (i, &a) in path.iter().enumerate() {
            let s = env.step(a).unwrap();
            total += s.reward;
            assert_eq!(s.terminal, i == path.len() - 1);
        }
        assert!((total - 0.93).abs() < 1e-6);
        assert!(env.step(0).is_err());
    }

    #[test]
    fn reaching_treasure_from_adjacent_cell() {
        let mut env = GridTreasure::new(3, 1).unwrap();
        env.reset(0);
        for a in [3, 3, 1] {
            let s = env.step(a).unwrap();
            assert_eq!(s.reward, -0.01);
            assert!(!s.done());
        }
        let s = env.step(1).unwrap();
        assert_eq!(s.reward, 1.0);
        assert!(s.terminal);
        assert_eq!(count(&s.observation, 1.0), 1);
        assert_eq!(count(&s.observation, 0.5), 0);
    }

    #[test]
    fn wall_clamps_and_penalises() {
        let mut env = GridTreasure::new(5, 1).unwrap();
        env.reset(0);
        let s = env.step(2).unwrap();
        assert_eq!(env.agent(), (0, 0));
        assert_eq!(s.reward, -0.01);
        assert!(!s.done());
    }

    #[test]
    fn episode_cap_truncates() {
        let mut env = GridTreasure::new(4, 1).unwrap();
        env.reset(0);
        for i in 1..=200 {
            let s = env.step(0).unwrap();
            assert!(!s.terminal);
            assert_eq!(s.truncated, i == 200);
        }
    }

    #[test]
    fn invalid_inputs() {
        assert!(GridTreasure::new(2, 1).is_err());
        let mut env = GridTreasure::new(3, 1).unwrap();
        assert!(env.step(0).is_err());
        env.reset(0);
        assert!(matches!(env.step(4), Err(Error::Env(_))));
    }
}

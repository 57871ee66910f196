use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Tensor<f32>,
    pub action: usize,
    pub reward: f32,
    pub next_state: Tensor<f32>,
    pub terminal: bool,
}

/// Storage format for observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObsEncoding {
    /// Full `f32` values.
    Real,
    /// Values in `[0, 1]` quantised to `u8` (`round(255·v)`).
    Bytes,
}

impl ObsEncoding {
    /// Bytes for `C×H×W` images, reals otherwise.
    pub fn for_shape(shape: &[usize]) -> Self {
        if shape.len() == 3 {
            ObsEncoding::Bytes
        } else {
            ObsEncoding::Real
        }
    }
}

#[derive(Debug, Clone)]
enum StoredObs {
    Real(Box<[f32]>),
    Bytes(Box<[u8]>),
}

impl StoredObs {
    fn encode(data: &[f32], encoding: ObsEncoding) -> Self {
        match encoding {
            ObsEncoding::Real => StoredObs::Real(data.into()),
            ObsEncoding::Bytes => StoredObs::Bytes(
                data.iter()
                    .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
                    .collect(),
            ),
        }
    }

    fn decode_into(&self, out: &mut Vec<f32>) {
        match self {
            StoredObs::Real(v) => out.extend_from_slice(v),
            StoredObs::Bytes(v) => out.extend(v.iter().map(|&q| f32::from(q) / 255.0)),
        }
    }
}

#[derive(Debug, Clone)]
struct Stored {
    state: StoredObs,
    action: usize,
    reward: f32,
    next_state: StoredObs,
    terminal: bool,
}

/// A sampled minibatch with observations stacked on a leading batch axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub states: Tensor<f32>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f32>,
    pub next_states: Tensor<f32>,
    pub terminals: Vec<bool>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Bounded FIFO ring of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    obs_shape: Vec<usize>,
    action_count: usize,
    encoding: ObsEncoding,
    items: Vec<Stored>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(
        capacity: usize,
        obs_shape: &[usize],
        action_count: usize,
        encoding: ObsEncoding,
    ) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("buffer_capacity", "must be at least 1"));
        }
        Ok(Self {
            capacity,
            obs_shape: obs_shape.to_vec(),
            action_count,
            encoding,
            items: Vec::new(),
            cursor: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn obs_shape(&self) -> &[usize] {
        &self.obs_shape
    }

    /// Appends a transition, evicting the oldest one when full.
    pub fn push(&mut self, t: &Transition) -> Result<()> {
        if t.state.shape() != self.obs_shape.as_slice() {
            return Err(Error::shape(
                "replay push",
                t.state.shape(),
                &self.obs_shape,
            ));
        }
        if t.next_state.shape() != self.obs_shape.as_slice() {
            return Err(Error::shape(
                "replay push",
                t.next_state.shape(),
                &self.obs_shape,
            ));
        }
        if t.action >= self.action_count {
            return Err(Error::Precondition(format!(
                "action {} out of range for {} actions",
                t.action, self.action_count
            )));
        }
        let stored = Stored {
            state: StoredObs::encode(t.state.data(), self.encoding),
            action: t.action,
            reward: t.reward,
            next_state: StoredObs::encode(t.next_state.data(), self.encoding),
            terminal: t.terminal,
        };
        if self.items.len() < self.capacity {
            self.items.push(stored);
        } else {
            self.items[self.cursor] = stored;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        Ok(())
    }

    /// Transition `i` counted from the oldest retained one.
    pub fn get(&self, i: usize) -> Option<Transition> {
        if i >= self.items.len() {
            return None;
        }
        let slot = if self.items.len() < self.capacity {
            i
        } else {
            (self.cursor + i) % self.capacity
        };
        let s = &self.items[slot];
        let decode = |o: &StoredObs| {
            let mut v = Vec::new();
            o.decode_into(&mut v);
            Tensor::new(self.obs_shape.clone(), v).expect("stored with this shape")
        };
        Some(Transition {
            state: decode(&s.state),
            action: s.action,
            reward: s.reward,
            next_state: decode(&s.next_state),
            terminal: s.terminal,
        })
    }

    /// Indices drawn uniformly with replacement over the current size.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Vec<usize> {
        (0..batch_size)
            .map(|_| rng.gen_range(0..self.items.len()))
            .collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Batch> {
        if batch_size == 0 || self.items.len() < batch_size {
            return Err(Error::Precondition(format!(
                "replay buffer holds {} transitions, batch needs {}",
                self.items.len(),
                batch_size
            )));
        }
        let idx = self.sample_indices(batch_size, rng);
        Ok(self.gather(&idx))
    }

    fn gather(&self, idx: &[usize]) -> Batch {
        let per: usize = self.obs_shape.iter().product();
        let mut states = Vec::with_capacity(idx.len() * per);
        let mut next_states = Vec::with_capacity(idx.len() * per);
        let mut batch = Batch {
            states: Tensor::zeros(&[0]),
            actions: Vec::with_capacity(idx.len()),
            rewards: Vec::with_capacity(idx.len()),
            next_states: Tensor::zeros(&[0]),
            terminals: Vec::with_capacity(idx.len()),
        };
        for &i in idx {
            let s = &self.items[i];
            s.state.decode_into(&mut states);
            s.next_state.decode_into(&mut next_states);
            batch.actions.push(s.action);
            batch.rewards.push(s.reward);
            batch.terminals.push(s.terminal);
        }
        let mut shape = vec![idx.len()];
        shape.extend_from_slice(&self.obs_shape);
        batch.states = Tensor::new(shape.clone(), states).expect("sized");
        batch.next_states = Tensor::new(shape, next_states).expect("sized");
        batch
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tr(v: f32, action: usize) -> Transition {
        Transition {
            state: Tensor::new(vec![2], vec![v, -v]).unwrap(),
            action,
            reward: v,
            next_state: Tensor::new(vec![2], vec![v + 1.0, 0.0]).unwrap(),
            terminal: false,
        }
    }

    #[test]
    fn evicts_oldest_when_full() {
        let mut buf = ReplayBuffer::new(3, &[2], 2, ObsEncoding::Real).unwrap();
        for i in 0..5 {
            buf.push(&tr(i as f32, i % 2)).unwrap();
        }
        assert_eq!(buf.len(), 3);
        let rewards: Vec<f32> = (0..3).map(|i| buf.get(i).unwrap().reward).collect();
        assert_eq!(rewards, vec![2.0, 3.0, 4.0]);
        assert!(buf.get(3).is_none());
    }

    #[test]
    fn rejects_bad_transitions() {
        let mut buf = ReplayBuffer::new(3, &[2], 2, ObsEncoding::Real).unwrap();
        assert!(buf.push(&tr(0.0, 2)).is_err());
        let mut bad = tr(0.0, 0);
        bad.state = Tensor::zeros(&[3]);
        assert!(buf.push(&bad).is_err());
        assert!(ReplayBuffer::new(0, &[2], 2, ObsEncoding::Real).is_err());
    }

    #[test]
    fn underfull_sample_is_precondition_error() {
        let mut buf = ReplayBuffer::new(10, &[2], 2, ObsEncoding::Real).unwrap();
        buf.push(&tr(1.0, 0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            buf.sample(2, &mut rng),
            Err(Error::Precondition(_))
        ));
        assert_eq!(buf.sample(1, &mut rng).unwrap().states.shape(), &[1, 2]);
    }

    #[test]
    fn byte_encoding_round_trips_quantised_images() {
        let mut buf = ReplayBuffer::new(2, &[1, 1, 3], 2, ObsEncoding::Bytes).unwrap();
        let img = Tensor::new(vec![1, 1, 3], vec![0.0, 0.5, 1.0]).unwrap();
        buf.push(&Transition {
            state: img.clone(),
            action: 1,
            reward: 0.0,
            next_state: img,
            terminal: true,
        })
        .unwrap();
        let t = buf.get(0).unwrap();
        assert_eq!(t.state.data()[0], 0.0);
        assert_eq!(t.state.data()[2], 1.0);
        assert!((t.state.data()[1] - 0.5).abs() <= 0.5 / 255.0 + 1e-6);
        assert!(t.terminal);
    }

    #[test]
    fn sampling_is_reproducible() {
        let mut buf = ReplayBuffer::new(50, &[2], 2, ObsEncoding::Real).unwrap();
        for i in 0..50 {
            buf.push(&tr(i as f32, 0)).unwrap();
        }
        let a = buf.sample(8, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = buf.sample(8, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
    }
}

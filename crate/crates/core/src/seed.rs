//! Independent random streams derived from one master seed.
//!
//! Each consumer gets its own ChaCha stream of the master key, so changing
//! how much randomness one component draws never shifts another.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Stream {
    Env = 1,
    Wrapper = 2,
    Replay = 3,
    Init = 4,
    Action = 5,
    Downsample = 6,
    Eval = 7,
}

pub fn stream_rng(master: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream as u64);
    rng
}

pub fn derive_seed(master: u64, stream: Stream) -> u64 {
    stream_rng(master, stream).next_u64()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_distinct_and_stable() {
        let a = derive_seed(5, Stream::Env);
        assert_eq!(a, derive_seed(5, Stream::Env));
        assert_ne!(a, derive_seed(5, Stream::Replay));
        assert_ne!(a, derive_seed(6, Stream::Env));
    }
}

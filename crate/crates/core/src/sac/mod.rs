//! Discrete soft actor-critic with optional per-network decorrelation.

mod agent;
mod config;
pub mod losses;
mod replay;
mod rollout;

pub use agent::{sample_action, SacAgent, TrainStepReport, UpdatePhase};
pub use config::{Architecture, NetworkId, SacConfig};
pub use losses::{alpha_loss, policy_loss, q_loss, q_target, PolicyOutput};
pub use replay::{Batch, ObsEncoding, ReplayBuffer, Transition};
pub use rollout::{act_environment_step, Collector, EpisodeSummary};

use crate::error::Result;
use crate::network::polyak_update;
use crate::real::Real;
use crate::tensor::Tensor;

/// Elementwise Polyak average returning the new target.
pub fn polyak<T: Real>(online: &Tensor<T>, target: &Tensor<T>, tau: f64) -> Result<Tensor<T>> {
    let mut out = target.clone();
    polyak_update(online, &mut out, tau)?;
    Ok(out)
}

//! Decorrelated backpropagation inside a discrete soft actor-critic agent.
//!
//! The crate is layered bottom-up:
//!
//! - [`tensor`], [`ops`], [`layer`], [`optim`]: a small dense numeric core with
//!   hand-written forward and backward passes and Adam.
//! - [`decorrelation`]: the `x = R·z` transform, its update rule and losses.
//! - [`network`]: the fixed conv/dense stacks with optional decorrelation.
//! - [`sac`]: discrete soft actor-critic (losses, replay, agent, training step).
//! - [`env`]: the environment trait, preprocessing wrappers and toy tasks.
//! - [`gradcheck`]: finite-difference verification of every analytic gradient.

pub mod decorrelation;
pub mod env;
pub mod error;
pub mod gradcheck;
pub mod layer;
pub mod network;
pub mod ops;
pub mod optim;
pub mod real;
pub mod sac;
pub mod seed;
pub mod tensor;

pub use decorrelation::{CorrelationEstimate, DecorrelationKind, DecorrelationState};
pub use error::{Error, Result};
pub use layer::{ConvGeometry, LayerKind, LayerParams};
pub use network::{
    build_network, DecorrelationConfig, Gradients, Network, NetworkSpec, PatchPooling,
};
pub use optim::AdamState;
pub use real::Real;
pub use tensor::Tensor;

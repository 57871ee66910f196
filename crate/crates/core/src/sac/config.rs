use crate::error::{Error, Result};
use crate::network::{NetworkSpec, PatchPooling};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NetworkId {
    Policy,
    Q1,
    Q2,
}

impl NetworkId {
    pub const ALL: [NetworkId; 3] = [NetworkId::Policy, NetworkId::Q1, NetworkId::Q2];

    pub fn name(self) -> &'static str {
        match self {
            NetworkId::Policy => "policy",
            NetworkId::Q1 => "q1",
            NetworkId::Q2 => "q2",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|id| id.name() == s)
    }
}

/// Layer widths shared by the policy and both critics.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub conv_channels: [usize; 3],
    pub conv_dense: usize,
    pub vector_hidden: Vec<usize>,
    pub vector_dense: usize,
    pub leaky_slope: f64,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            conv_channels: [32, 64, 64],
            conv_dense: 512,
            vector_hidden: vec![256, 256],
            vector_dense: 512,
            leaky_slope: 0.01,
        }
    }
}

impl Architecture {
    pub fn spec_for(&self, obs_shape: &[usize]) -> NetworkSpec {
        let spec = if obs_shape.len() == 3 {
            NetworkSpec::image_with_widths(self.conv_channels, self.conv_dense)
        } else {
            NetworkSpec::vector_with_widths(&self.vector_hidden, self.vector_dense)
        };
        spec.with_slope(self.leaky_slope)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SacConfig {
    pub gamma: f64,
    pub tau: f64,
    pub target_update_interval: u64,
    pub gradient_steps: usize,
    pub buffer_capacity: usize,
    pub initial_random_steps: usize,
    pub batch_size: usize,
    pub sac_lr: f64,
    pub decor_lr_policy: f64,
    pub decor_lr_q: f64,
    /// `None` means `−(number of actions)`.
    pub entropy_target: Option<f64>,
    pub decorrelate: Vec<NetworkId>,
    pub downsample_b: f64,
    pub patch_pooling: PatchPooling,
    pub init_log_alpha: f64,
    pub architecture: Architecture,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.005,
            target_update_interval: 1,
            gradient_steps: 1,
            buffer_capacity: 100_000,
            initial_random_steps: 20_000,
            batch_size: 64,
            sac_lr: 3e-4,
            decor_lr_policy: 1e-3,
            decor_lr_q: 1e-13,
            entropy_target: None,
            decorrelate: vec![NetworkId::Policy],
            downsample_b: 9.0,
            patch_pooling: PatchPooling::PerImage,
            init_log_alpha: 0.0,
            architecture: Architecture::default(),
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::config("gamma", "must lie in (0, 1]"));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::config("tau", "must lie in (0, 1]"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.target_update_interval == 0 {
            return Err(Error::config(
                "target_update_interval",
                "must be at least 1",
            ));
        }
        if self.buffer_capacity < self.batch_size {
            return Err(Error::config(
                "buffer_capacity",
                "must hold at least one batch",
            ));
        }
        if !(self.sac_lr > 0.0 && self.sac_lr.is_finite()) {
            return Err(Error::config("sac_lr", "must be positive"));
        }
        for (field, v) in [
            ("decor_lr_policy", self.decor_lr_policy),
            ("decor_lr_q", self.decor_lr_q),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(field, "must be non-negative"));
            }
        }
        if !(self.downsample_b > 0.0 && self.downsample_b.is_finite()) {
            return Err(Error::config("downsample_b", "must be positive"));
        }
        let slope = self.architecture.leaky_slope;
        if !(slope > 0.0 && slope < 1.0) {
            return Err(Error::config("leaky_slope", "must lie in (0, 1)"));
        }
        if !self.init_log_alpha.is_finite() {
            return Err(Error::config("init_log_alpha", "must be finite"));
        }
        Ok(())
    }

    pub fn decorrelates(&self, id: NetworkId) -> bool {
        self.decorrelate.contains(&id)
    }

    pub fn decor_lr(&self, id: NetworkId) -> f64 {
        match id {
            NetworkId::Policy => self.decor_lr_policy,
            NetworkId::Q1 | NetworkId::Q2 => self.decor_lr_q,
        }
    }

    pub fn entropy_target_for(&self, action_count: usize) -> f64 {
        self.entropy_target.unwrap_or(-(action_count as f64))
    }
}

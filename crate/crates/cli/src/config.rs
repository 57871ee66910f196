//! Run configuration: a flat TOML document layered over a named preset.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dsac_core::sac::{Architecture, NetworkId, SacConfig};
use dsac_core::PatchPooling;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Full-size networks and the reference hyperparameters.
    #[default]
    Full,
    /// Narrow networks and short runs for the toy environments.
    Toy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    #[default]
    Grid,
    Chain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    PerImage,
    PerBatch,
}

impl From<Pooling> for PatchPooling {
    fn from(p: Pooling) -> Self {
        match p {
            Pooling::PerImage => PatchPooling::PerImage,
            Pooling::PerBatch => PatchPooling::PerBatch,
        }
    }
}

/// Every knob of a run. Missing keys take the preset's value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub env: EnvKind,
    pub grid_size: usize,
    pub render_scale: usize,
    pub chain_length: usize,
    pub noise_dims: usize,
    pub sticky_prob: f64,
    pub action_repeat: usize,
    pub frame_stack: usize,

    pub total_env_steps: usize,
    /// Env steps between evaluations; 0 disables evaluation.
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub precision: Precision,

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
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entropy_target: Option<f64>,
    pub decorrelate: Vec<String>,
    pub downsample_b: f64,
    pub patch_pooling: Pooling,
    pub init_log_alpha: f64,

    pub conv_channels: [usize; 3],
    pub conv_dense: usize,
    pub vector_hidden: Vec<usize>,
    pub vector_dense: usize,
    pub leaky_slope: f64,

    pub sweep_sac_lr: Vec<f64>,
    pub sweep_decor_lr: Vec<f64>,
    pub sweep_batch_size: Vec<usize>,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let sac = SacConfig::default();
        let arch = Architecture::default();
        let base = Self {
            preset,
            env: EnvKind::Grid,
            grid_size: 5,
            render_scale: 8,
            chain_length: 10,
            noise_dims: 16,
            sticky_prob: 0.25,
            action_repeat: 4,
            frame_stack: 4,
            total_env_steps: 100_000,
            eval_every: 0,
            eval_episodes: 10,
            seed: 0,
            out_dir: None,
            precision: Precision::F32,
            gamma: sac.gamma,
            tau: sac.tau,
            target_update_interval: sac.target_update_interval,
            gradient_steps: sac.gradient_steps,
            buffer_capacity: sac.buffer_capacity,
            initial_random_steps: sac.initial_random_steps,
            batch_size: sac.batch_size,
            sac_lr: sac.sac_lr,
            decor_lr_policy: sac.decor_lr_policy,
            decor_lr_q: sac.decor_lr_q,
            entropy_target: sac.entropy_target,
            decorrelate: sac
                .decorrelate
                .iter()
                .map(|id| id.name().to_string())
                .collect(),
            downsample_b: sac.downsample_b,
            patch_pooling: Pooling::PerImage,
            init_log_alpha: sac.init_log_alpha,
            conv_channels: arch.conv_channels,
            conv_dense: arch.conv_dense,
            vector_hidden: arch.vector_hidden,
            vector_dense: arch.vector_dense,
            leaky_slope: arch.leaky_slope,
            sweep_sac_lr: vec![3e-5, 1e-4, 3e-4],
            sweep_decor_lr: vec![0.0, 1e-4, 1e-3, 1e-2],
            sweep_batch_size: vec![64, 256],
        };
        match preset {
            Preset::Full => base,
            Preset::Toy => Self {
                total_env_steps: 20_000,
                initial_random_steps: 2_000,
                action_repeat: 1,
                frame_stack: 1,
                batch_size: 32,
                init_log_alpha: 0.01f64.ln(),
                conv_channels: [8, 16, 16],
                conv_dense: 64,
                vector_hidden: vec![64, 64],
                vector_dense: 128,
                ..base
            },
        }
    }

    /// Parses a TOML document; keys it omits take the values of its
    /// `preset` (default `full`).
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user: toml::Table = text.parse().context("config is not valid TOML")?;
        let preset = match user.get("preset") {
            Some(v) => Preset::deserialize(v.clone()).context("invalid value for `preset`")?,
            None => Preset::default(),
        };
        let mut merged =
            toml::Table::try_from(Self::preset(preset)).context("serialising preset")?;
        merged.extend(user);
        let config = Self::deserialize(toml::Value::Table(merged))
            .map_err(|e| anyhow::anyhow!("{}", e.message()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml_str(&text).with_context(|| format!("in config {}", path.display()))
    }

    /// Fully explicit TOML; loading it back gives an identical config.
    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn networks(&self) -> Result<Vec<NetworkId>> {
        self.decorrelate
            .iter()
            .map(|name| {
                NetworkId::parse(name).ok_or_else(|| {
                    anyhow::anyhow!("invalid value for `decorrelate`: unknown network `{name}`")
                })
            })
            .collect()
    }

    pub fn sac_config(&self) -> Result<SacConfig> {
        Ok(SacConfig {
            gamma: self.gamma,
            tau: self.tau,
            target_update_interval: self.target_update_interval,
            gradient_steps: self.gradient_steps,
            buffer_capacity: self.buffer_capacity,
            initial_random_steps: self.initial_random_steps,
            batch_size: self.batch_size,
            sac_lr: self.sac_lr,
            decor_lr_policy: self.decor_lr_policy,
            decor_lr_q: self.decor_lr_q,
            entropy_target: self.entropy_target,
            decorrelate: self.networks()?,
            downsample_b: self.downsample_b,
            patch_pooling: self.patch_pooling.into(),
            init_log_alpha: self.init_log_alpha,
            architecture: Architecture {
                conv_channels: self.conv_channels,
                conv_dense: self.conv_dense,
                vector_hidden: self.vector_hidden.clone(),
                vector_dense: self.vector_dense,
                leaky_slope: self.leaky_slope,
            },
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.sac_config()?.validate()?;
        let field = |name: &str, reason: &str| -> Result<()> {
            bail!("invalid value for `{name}`: {reason}")
        };
        if !(0.0..=1.0).contains(&self.sticky_prob) {
            field("sticky_prob", "must lie in [0, 1]")?;
        }
        if self.action_repeat == 0 {
            field("action_repeat", "must be at least 1")?;
        }
        if self.frame_stack == 0 {
            field("frame_stack", "must be at least 1")?;
        }
        if self.grid_size < 3 {
            field("grid_size", "must be at least 3")?;
        }
        if self.render_scale == 0 {
            field("render_scale", "must be at least 1")?;
        }
        if self.chain_length < 3 {
            field("chain_length", "must be at least 3")?;
        }
        if self.gradient_steps == 0 {
            field("gradient_steps", "must be at least 1")?;
        }
        if self.eval_every > 0 && self.eval_episodes == 0 {
            field("eval_episodes", "must be at least 1 when evaluating")?;
        }
        if self.sweep_sac_lr.is_empty() {
            field("sweep_sac_lr", "sweep axis must not be empty")?;
        }
        if self.sweep_decor_lr.is_empty() {
            field("sweep_decor_lr", "sweep axis must not be empty")?;
        }
        if self.sweep_batch_size.is_empty() {
            field("sweep_batch_size", "sweep axis must not be empty")?;
        }
        Ok(())
    }
}

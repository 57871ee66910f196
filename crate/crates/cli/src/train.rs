//! A single training run: random warm-up, then one environment step
//! followed by `gradient_steps` updates until the step budget is spent.

use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use dsac_core::env::{compose, Environment, GridTreasure, NoisyChain, WrapperConfig};
use dsac_core::sac::{Collector, ObsEncoding, ReplayBuffer, SacAgent, TrainStepReport};
use dsac_core::seed::{derive_seed, stream_rng, Stream};
use dsac_core::Real;
use serde::{Deserialize, Serialize};

use crate::config::{EnvKind, Precision, RunConfig};
use crate::metrics::{MetricsRecord, MetricsWriter};

/// Episodes averaged for the final return.
pub const FINAL_EPISODES: usize = 10;

/// One row of `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub env_steps: u64,
    pub gradient_steps: u64,
    pub episodes: u64,
    /// Mean return of the last ten finished episodes; empty if none finished.
    pub final_return: Option<f64>,
    /// `D_total` of the last gradient step; empty without gradient steps.
    pub final_d_total: Option<f64>,
    pub wall_clock_seconds: f64,
}

/// Raw environment for the config, wrapped as configured. The raw
/// environment depends only on `seed`; `wrapper_seed` drives stickiness.
pub fn make_env(config: &RunConfig, seed: u64, wrapper_seed: u64) -> Result<Box<dyn Environment>> {
    let raw: Box<dyn Environment> = match config.env {
        EnvKind::Grid => Box::new(GridTreasure::new(config.grid_size, config.render_scale)?),
        EnvKind::Chain => Box::new(NoisyChain::new(
            config.chain_length,
            config.noise_dims,
            &mut stream_rng(seed, Stream::Env),
        )?),
    };
    let wrappers = WrapperConfig {
        sticky_prob: config.sticky_prob,
        action_repeat: config.action_repeat,
        frame_stack: if raw.spec().is_image() {
            config.frame_stack
        } else {
            1
        },
    };
    Ok(compose(raw, wrappers, wrapper_seed)?)
}

/// Runs training and writes `config.toml`, `metrics.jsonl` and
/// `summary.csv` into `out_dir`.
pub fn run_training(config: &RunConfig, out_dir: &Path) -> Result<RunSummary> {
    config.validate()?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    fs::write(out_dir.join("config.toml"), config.to_toml_string()?)?;
    let summary = match config.precision {
        Precision::F32 => train::<f32>(config, out_dir)?,
        Precision::F64 => train::<f64>(config, out_dir)?,
    };
    write_summary(&out_dir.join("summary.csv"), std::slice::from_ref(&summary))?;
    Ok(summary)
}

pub fn write_summary(path: &Path, rows: &[RunSummary]) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn train<T: Real>(config: &RunConfig, out_dir: &Path) -> Result<RunSummary> {
    let start = Instant::now();
    let seed = config.seed;
    let sac = config.sac_config()?;
    let env = make_env(config, seed, derive_seed(seed, Stream::Wrapper))?;
    let spec = env.spec().clone();
    let mut agent = SacAgent::<T>::new(
        sac.clone(),
        &spec.observation_shape,
        spec.action_count,
        &mut stream_rng(seed, Stream::Init),
    )?;
    let mut buffer = ReplayBuffer::new(
        sac.buffer_capacity,
        &spec.observation_shape,
        spec.action_count,
        ObsEncoding::for_shape(&spec.observation_shape),
    )?;
    let mut collector = Collector::new(env, derive_seed(seed, Stream::Env));
    let mut action_rng = stream_rng(seed, Stream::Action);
    let mut replay_rng = stream_rng(seed, Stream::Replay);
    let mut downsample_rng = stream_rng(seed, Stream::Downsample);
    let mut eval_rng = stream_rng(seed, Stream::Eval);

    let mut writer = MetricsWriter::create(&out_dir.join("metrics.jsonl"))?;
    let mut recent: VecDeque<f64> = VecDeque::with_capacity(FINAL_EPISODES);
    let mut episodes = 0u64;
    let mut gradient_steps = 0u64;
    let mut final_d_total = None;
    let mut pending_episode = None;
    let mut pending_eval = None;

    for t in 0..config.total_env_steps {
        let (_, finished) = collector.step(&agent, &mut buffer, t, &mut action_rng)?;
        if let Some(ep) = finished {
            episodes += 1;
            if recent.len() == FINAL_EPISODES {
                recent.pop_front();
            }
            recent.push_back(ep.ret);
            pending_episode = Some(ep);
        }
        if config.eval_every > 0 && (t + 1) % config.eval_every == 0 {
            pending_eval = Some(evaluate(&agent, config, &mut eval_rng)?);
        }
        if t < sac.initial_random_steps || buffer.len() < sac.batch_size {
            continue;
        }
        for _ in 0..sac.gradient_steps {
            let report = agent.train_step(&buffer, &mut replay_rng, &mut downsample_rng)?;
            gradient_steps += 1;
            let episode = pending_episode.take();
            let record = record_from(
                &report,
                gradient_steps,
                t as u64 + 1,
                episode.map(|e| (e.ret, e.length as u64)),
                mean(&recent),
                pending_eval.take(),
                start.elapsed().as_secs_f64(),
            );
            final_d_total = Some(record.d_total);
            writer.write(&record)?;
        }
    }
    writer.finish()?;
    Ok(RunSummary {
        seed,
        env_steps: config.total_env_steps as u64,
        gradient_steps,
        episodes,
        final_return: mean(&recent),
        final_d_total,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    })
}

fn mean(values: &VecDeque<f64>) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn record_from(
    report: &TrainStepReport,
    step: u64,
    env_step: u64,
    episode: Option<(f64, u64)>,
    recent_return: Option<f64>,
    eval_return: Option<f64>,
    wall_clock_seconds: f64,
) -> MetricsRecord {
    let mut layer_decorrelation = BTreeMap::new();
    let mut network_decorrelation = BTreeMap::new();
    for (id, losses) in &report.decorrelation {
        network_decorrelation.insert(id.name().to_string(), losses.iter().sum::<f64>());
        layer_decorrelation.insert(id.name().to_string(), losses.clone());
    }
    let d_total = network_decorrelation.values().sum();
    MetricsRecord {
        step,
        env_step,
        q1_loss: report.q1_loss,
        q2_loss: report.q2_loss,
        policy_loss: report.policy_loss,
        alpha_loss: report.alpha_loss,
        alpha: report.alpha,
        entropy: report.entropy,
        layer_decorrelation,
        network_decorrelation,
        d_total,
        episode_return: episode.map(|e| e.0),
        episode_length: episode.map(|e| e.1),
        recent_return,
        eval_return,
        wall_clock_seconds,
    }
}

/// Mean return of `eval_episodes` policy-sampled episodes on a fresh copy of
/// the training environment.
fn evaluate<T: Real, R: rand::Rng>(
    agent: &SacAgent<T>,
    config: &RunConfig,
    rng: &mut R,
) -> Result<f64> {
    let episode_seed: u64 = rng.gen();
    let env = make_env(
        config,
        config.seed,
        derive_seed(episode_seed, Stream::Wrapper),
    )?;
    let mut collector = Collector::new(env, episode_seed);
    let mut total = 0.0;
    for _ in 0..config.eval_episodes {
        loop {
            let action = agent.act(collector.observation(), rng)?;
            if let (_, Some(ep)) = collector.advance(action)? {
                total += ep.ret;
                break;
            }
        }
    }
    Ok(total / config.eval_episodes as f64)
}

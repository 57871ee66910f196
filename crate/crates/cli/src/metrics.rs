use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

/// One line of the metrics stream, written after every gradient step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    /// Gradient step, counted from 1.
    pub step: u64,
    /// Environment steps taken so far.
    pub env_step: u64,
    pub q1_loss: f64,
    pub q2_loss: f64,
    pub policy_loss: f64,
    pub alpha_loss: f64,
    pub alpha: f64,
    pub entropy: f64,
    /// Per-layer `d_l` by network name.
    pub layer_decorrelation: BTreeMap<String, Vec<f64>>,
    /// Network loss `D = Σ d_l` by network name.
    pub network_decorrelation: BTreeMap<String, f64>,
    pub d_total: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub episode_return: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub episode_length: Option<u64>,
    /// Mean return of the last ten finished episodes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recent_return: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_return: Option<f64>,
    pub wall_clock_seconds: f64,
}

impl MetricsRecord {
    /// The record with its timing field zeroed, for determinism checks.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_clock_seconds: 0.0,
            ..self.clone()
        }
    }
}

pub struct MetricsWriter {
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        Ok(Self {
            out: BufWriter::new(file),
        })
    }

    pub fn write(&mut self, record: &MetricsRecord) -> Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

/// Reads a metrics stream; blank lines are ignored.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line)
            .with_context(|| format!("{} line {}", path.display(), i + 1))?;
        records.push(record);
    }
    Ok(records)
}

/// Sample mean and standard error of the mean (`n − 1` denominator); the
/// error is 0 for a single value.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

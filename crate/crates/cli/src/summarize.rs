//! Aligns metric streams from several seeds and writes per-step mean and
//! standard error, one CSV per metric.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use crate::metrics::{mean_stderr, read_metrics, MetricsRecord};

/// Pulls one scalar out of a record, if present.
pub type Extractor = fn(&MetricsRecord) -> Option<f64>;

/// Metrics summarised across streams, with the file suffix used for each.
pub const METRICS: [(&str, Extractor); 2] = [
    ("return", |r| r.recent_return),
    ("policy_decorrelation", |r| {
        r.network_decorrelation.get("policy").copied()
    }),
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub step: u64,
    pub n: usize,
    pub mean: f64,
    pub stderr: f64,
}

/// Per-step mean and standard error of `metric` over aligned streams. Steps
/// where any stream lacks a value are left out.
pub fn aggregate(streams: &[Vec<MetricsRecord>], metric: Extractor) -> Result<Vec<SummaryRow>> {
    let Some(first) = streams.first() else {
        bail!("no metric streams given");
    };
    for (i, s) in streams.iter().enumerate().skip(1) {
        let same = s.len() == first.len() && s.iter().zip(first).all(|(a, b)| a.step == b.step);
        if !same {
            bail!(
                "stream {} has a different step grid than stream 0 ({} vs {} records)",
                i,
                s.len(),
                first.len()
            );
        }
    }
    let mut rows = Vec::new();
    for (k, record) in first.iter().enumerate() {
        let values: Option<Vec<f64>> = streams.iter().map(|s| metric(&s[k])).collect();
        if let Some(values) = values {
            let (mean, stderr) = mean_stderr(&values);
            rows.push(SummaryRow {
                step: record.step,
                n: values.len(),
                mean,
                stderr,
            });
        }
    }
    Ok(rows)
}

/// Output path for one metric: `<dir>/<stem>_<metric>.csv`.
pub fn metric_path(out: &Path, metric: &str) -> PathBuf {
    let stem = out
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("summary");
    out.with_file_name(format!("{stem}_{metric}.csv"))
}

/// Reads every stream and writes one CSV per metric next to `out`.
pub fn summarize(paths: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>> {
    if paths.is_empty() {
        bail!("summarize needs at least one metrics stream");
    }
    let streams = paths
        .iter()
        .map(|p| read_metrics(p))
        .collect::<Result<Vec<_>>>()?;
    let mut written = Vec::new();
    for (name, metric) in METRICS {
        let rows = aggregate(&streams, metric).context("aligning metric streams")?;
        let path = metric_path(out, name);
        let mut w = csv::Writer::from_path(&path)
            .with_context(|| format!("creating {}", path.display()))?;
        for row in &rows {
            w.serialize(row)?;
        }
        w.flush()?;
        written.push(path);
    }
    Ok(written)
}

use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use pgt_core::config::Metadata;
use pgt_core::metrics::{read_metrics_csv, MetricsRecord};

use crate::run::{write_csv, METADATA_FILE, METRICS_FILE};

type Series = (&'static str, fn(&MetricsRecord) -> f64);

#[derive(Serialize)]
struct Point {
    t: u64,
    value: f64,
}

/// Indices of rows whose `t` is closest above each of `points` log-spaced
/// targets between the first and last logged round.
pub fn log_downsample(ts: &[u64], points: usize) -> Vec<usize> {
    if ts.is_empty() || points == 0 {
        return Vec::new();
    }
    let (lo, hi) = (ts[0].max(1) as f64, ts[ts.len() - 1].max(1) as f64);
    let mut picked = vec![0];
    for k in 1..points {
        let target = lo * (hi / lo).powf(k as f64 / (points - 1).max(1) as f64);
        let idx = ts
            .partition_point(|&t| (t as f64) < target)
            .min(ts.len() - 1);
        if picked.last() != Some(&idx) {
            picked.push(idx);
        }
    }
    if picked.last() != Some(&(ts.len() - 1)) {
        picked.push(ts.len() - 1);
    }
    picked
}

pub fn plotdata(run_dir: &Path, points: usize) -> Result<Vec<PathBuf>> {
    let md_path = run_dir.join(METADATA_FILE);
    let text = std::fs::read_to_string(&md_path)
        .with_context(|| format!("incomplete run: cannot read {}", md_path.display()))?;
    let md = Metadata::parse(&text)?;
    match md.get("status").and_then(|v| v.as_str()) {
        Some("completed") => {}
        other => bail!("incomplete run: status is {}", other.unwrap_or("missing")),
    }
    let metrics_path = run_dir.join(METRICS_FILE);
    let rows = read_metrics_csv(
        File::open(&metrics_path)
            .with_context(|| format!("incomplete run: cannot read {}", metrics_path.display()))?,
    )?;
    if rows.is_empty() {
        bail!("incomplete run: {} has no rows", metrics_path.display());
    }

    let ts: Vec<u64> = rows.iter().map(|r| r.t).collect();
    let keep = log_downsample(&ts, points);
    let series: [Series; 3] = [
        ("plot_avg_regret.csv", |r| r.avg_regret),
        ("plot_consensus.csv", |r| r.consensus),
        ("plot_tracking_error.csv", |r| r.tracking_error),
    ];
    let mut written = Vec::new();
    for (name, field) in series {
        let pts: Vec<Point> = keep
            .iter()
            .map(|&i| Point {
                t: rows[i].t,
                value: field(&rows[i]),
            })
            .collect();
        write_csv(run_dir, name, &pts)?;
        written.push(run_dir.join(name));
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn downsample_keeps_ends_and_is_sparse() {
        let ts: Vec<u64> = (1..=100_000).collect();
        let idx = log_downsample(&ts, 50);
        assert_eq!(idx[0], 0);
        assert_eq!(*idx.last().unwrap(), ts.len() - 1);
        assert!(idx.len() <= 50);
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
        // Log spacing puts about half the points below sqrt(T).
        let below = idx.iter().filter(|&&i| ts[i] < 316).count();
        assert!((20..=30).contains(&below), "{below}");
    }

    #[test]
    fn downsample_short_series() {
        assert_eq!(log_downsample(&[5], 10), vec![0]);
        assert_eq!(log_downsample(&[1, 2, 3], 10), vec![0, 1, 2]);
        assert!(log_downsample(&[], 10).is_empty());
    }
}

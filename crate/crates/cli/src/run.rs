use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;

use pgt_core::config::{self, Metadata, Preset};
use pgt_core::experiments::{self, AuditConfig, RlsRateConfig};
use pgt_core::metrics::write_metrics_csv;
use pgt_core::sim::{AbortKind, Checkpoint, SimConfig, Simulation};

use crate::exit;

pub const METRICS_FILE: &str = "metrics.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const METADATA_FILE: &str = "metadata.toml";
pub const FINAL_STATE_FILE: &str = "final_state.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

pub fn execute(preset: Preset, out: &Path, resume: Option<&Path>) -> u8 {
    let result = match preset {
        Preset::Run(cfg) => simulate(cfg, out, resume),
        Preset::RlsRate(cfg) => rls_rate(&cfg, out),
        Preset::ConservationAudit(cfg) => audit(&cfg, out),
    };
    result.unwrap_or_else(|(code, e)| {
        eprintln!("error: {e:#}");
        code
    })
}

type Outcome = std::result::Result<u8, (u8, anyhow::Error)>;

fn usage(e: impl Into<anyhow::Error>) -> (u8, anyhow::Error) {
    (exit::USAGE, e.into())
}

fn failure(e: impl Into<anyhow::Error>) -> (u8, anyhow::Error) {
    (exit::FAILURE, e.into())
}

fn simulate(cfg: SimConfig, out: &Path, resume: Option<&Path>) -> Outcome {
    let mut sim = match resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path).map_err(usage)?;
            Simulation::resume(cfg, ckpt).map_err(usage)?
        }
        None => Simulation::new(cfg).map_err(usage)?,
    };
    fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .map_err(failure)?;

    let started = Instant::now();
    let ckpt_path = out.join(CHECKPOINT_FILE);
    let abort = sim.run_to_end(Some(&ckpt_path)).err();
    let elapsed = started.elapsed();

    let (rows, diags) = sim.rows();
    let summary = sim.summary();
    write_metrics_csv(create(out, METRICS_FILE).map_err(failure)?, &rows).map_err(failure)?;
    write_csv(out, DIAGNOSTICS_FILE, &diags).map_err(failure)?;
    serde_json::to_writer(
        create(out, FINAL_STATE_FILE).map_err(failure)?,
        &sim.state().agents,
    )
    .map_err(failure)?;

    let mut md = config::run_metadata(&sim, Some(&summary)).map_err(failure)?;
    md.insert("status", status_name(abort.as_ref().map(|a| a.kind)));
    md.insert("elapsed_seconds", elapsed.as_secs_f64());
    if let Some(a) = &abort {
        md.insert("abort.round", a.round as i64);
        md.insert("abort.message", a.message.clone());
    }
    fs::write(out.join(METADATA_FILE), md.render()).map_err(failure)?;

    println!(
        "rounds {}  avg_regret {:.6e}  consensus {:.3e}  tracking_error {:.3e}  ({:.1}s)",
        summary.rounds,
        summary.avg_regret,
        rows.last().map_or(f64::NAN, |r| r.consensus),
        rows.last().map_or(f64::NAN, |r| r.tracking_error),
        elapsed.as_secs_f64()
    );
    if sim.config().alpha > summary.alpha_max {
        println!(
            "note: alpha = {} exceeds the advisory ceiling {:.6}",
            sim.config().alpha,
            summary.alpha_max
        );
    }
    match abort {
        None => Ok(0),
        Some(a) => {
            eprintln!("run stopped at round {}: {}", a.round, a.message);
            Ok(match a.kind {
                AbortKind::Divergence => exit::DIVERGED,
                _ => exit::ABORTED,
            })
        }
    }
}

fn status_name(kind: Option<AbortKind>) -> &'static str {
    match kind {
        None => "completed",
        Some(AbortKind::Divergence) => "diverged",
        Some(_) => "aborted",
    }
}

fn rls_rate(cfg: &RlsRateConfig, out: &Path) -> Outcome {
    let report = experiments::rls_rate(cfg).map_err(usage)?;
    fs::create_dir_all(out).map_err(failure)?;
    write_csv(out, "rls_rate.csv", &report.runs).map_err(failure)?;
    let mut md = Metadata::new();
    md.insert("study", "rls-rate");
    md.insert_serialized("config", cfg).map_err(failure)?;
    md.insert("summary.median_ratio", report.median_ratio);
    md.insert("status", "completed");
    fs::write(out.join(METADATA_FILE), md.render()).map_err(failure)?;
    println!(
        "median error ratio over {} seeds: {:.4} (O(1/sqrt t) predicts 2)",
        report.runs.len(),
        report.median_ratio
    );
    Ok(0)
}

fn audit(cfg: &AuditConfig, out: &Path) -> Outcome {
    let report = experiments::conservation_audit(cfg).map_err(failure)?;
    fs::create_dir_all(out).map_err(failure)?;
    write_csv(out, "audit.csv", &report.instances).map_err(failure)?;
    let mut md = Metadata::new();
    md.insert("study", "conservation-audit");
    md.insert_serialized("config", cfg).map_err(failure)?;
    md.insert(
        "summary.max_conservation_residual",
        report.max_conservation_residual,
    );
    md.insert(
        "summary.max_mean_dynamics_residual",
        report.max_mean_dynamics_residual,
    );
    md.insert("status", "completed");
    fs::write(out.join(METADATA_FILE), md.render()).map_err(failure)?;
    println!(
        "{} instances: max |mean(d) - mean(g)| = {:.3e}, max mean-dynamics residual = {:.3e}",
        report.instances.len(),
        report.max_conservation_residual,
        report.max_mean_dynamics_residual
    );
    Ok(0)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    Ok(BufWriter::new(
        File::create(&path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

pub fn write_csv<T: Serialize>(dir: &Path, name: &str, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(dir, name)?);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

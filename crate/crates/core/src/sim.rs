//! End-to-end simulation of personalized gradient tracking.
//!
//! Each round `t ≥ 1` runs, in order:
//!
//! 1. x exchange and `x_i ← Σ_j w_ij x_j − α d_i`
//! 2. user feedback `y_i = U_i(x_i) + ε_i`
//! 3. RLS update of `ξ̂_i` from `(χ(x_i), y_i)`, then `unpack` + symmetrize
//! 4. `g_i ← ∇V_i(x_i; t) + P̂_i x_i + q̂_i`
//! 5. d exchange and `d_i ← Σ_j w_ij d_j + g_i − g_i,old`
//! 6. metrics at `x̄_t`
//!
//! Steps 2–3 consume the `x_i` produced by step 1, and step 4 consumes the
//! estimate produced by step 3, which fixes this order.

use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{consensus_spectral_radius, MixingMatrix, Topology};
use crate::metrics::{self, Accumulator, MetricsRecord};
use crate::quad::{pack_regressor, unpack, QuadraticFunction};
use crate::rls::{RlsState, DEFAULT_ETA};
use crate::scenario::{feedback, Scenario, ScenarioSpec};
use crate::tracking::{self, mean_of, AgentState, StepSizeAdvice};

/// Any `‖x_i‖` above this aborts the run.
pub const DIVERGENCE_BOUND: f64 = 1e6;

/// Target number of logged rows when `log_interval` is not given.
pub const DEFAULT_LOG_ROWS: u64 = 10_000;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Engine {
    /// Per-agent inboxes; the reference path.
    #[default]
    MessagePassing,
    /// Dense `W·X` products.
    Matrix,
}

/// A complete run description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Number of agents `N`.
    pub agents: usize,
    /// Decision dimension `n`.
    pub dim: usize,
    /// Rounds `T`.
    pub iterations: u64,
    pub alpha: f64,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_interval: Option<u64>,
    /// Run the RLS estimator on user feedback.
    #[serde(default = "default_true")]
    pub learning: bool,
    /// Feed the true `U_i` to the gradient step instead of the estimate.
    #[serde(default)]
    pub oracle_estimates: bool,
    /// Freeze the engineering costs at `t = 0`.
    #[serde(default)]
    pub static_time: bool,
    #[serde(default)]
    pub engine: Engine,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_interval: Option<u64>,
    pub topology: Topology,
    pub scenario: ScenarioSpec,
}

fn default_eta() -> f64 {
    DEFAULT_ETA
}

fn default_mu() -> f64 {
    1.5
}

fn default_true() -> bool {
    true
}

impl SimConfig {
    pub fn resolved_log_interval(&self) -> u64 {
        self.log_interval
            .unwrap_or((self.iterations / DEFAULT_LOG_ROWS).max(1))
    }

    /// Checks scalar parameters; graph and scenario are checked when built.
    pub fn check(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.agents == 0 {
            return bad("agents must be at least 1".into());
        }
        if self.dim == 0 {
            return bad("dim must be at least 1".into());
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad(format!("eta must be positive, got {}", self.eta));
        }
        if self.mu.is_nan() || self.mu <= 1.0 {
            return bad(format!("mu must exceed 1, got {}", self.mu));
        }
        if self.log_interval == Some(0) {
            return bad("log_interval must be at least 1".into());
        }
        if self.checkpoint_interval == Some(0) {
            return bad("checkpoint_interval must be at least 1".into());
        }
        Ok(())
    }

    /// Hash of everything that determines the trajectory, excluding the
    /// horizon and checkpoint cadence so a run can be extended by resuming.
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.iterations = 0;
        canon.checkpoint_interval = None;
        canon.log_interval = Some(self.resolved_log_interval());
        let json = serde_json::to_string(&canon).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))[..40].to_owned()
    }
}

/// Per-logged-row quantities outside the `metrics.csv` schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub t: u64,
    pub regret_increment: f64,
    /// `Σ f̂_i(x̄_t;t) − f̂_⋆(t)`; absent while the estimated problem is not
    /// strongly convex.
    pub est_regret_increment: Option<f64>,
    /// `‖x̄_t − x̂_⋆(t)‖`; absent under the same condition.
    pub est_tracking_error: Option<f64>,
    pub conservation_residual: f64,
}

/// Why a run stopped early.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Abort {
    pub round: u64,
    pub kind: AbortKind,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AbortKind {
    Divergence,
    Conservation,
    Numerical,
}

/// Everything needed to continue a run bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub t: u64,
    pub agents: Vec<AgentState>,
    pub acc: Accumulator,
    pub rows: Vec<MetricsRecord>,
    pub diagnostics: Vec<DiagnosticsRecord>,
    /// Last computed row, used to close a run whose horizon is not a multiple
    /// of the logging interval.
    pub last: Option<(MetricsRecord, DiagnosticsRecord)>,
    pub max_conservation_residual: f64,
    pub max_mean_dynamics_residual: f64,
    pub scalars_exchanged: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config_hash: String,
    pub state: SimState,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_vec(self)?)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        serde_json::from_slice(&bytes)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }
}

pub struct Simulation {
    config: SimConfig,
    scenario: Scenario,
    w: MixingMatrix,
    advice: StepSizeAdvice,
    state: SimState,
}

impl Simulation {
    pub fn new(mut config: SimConfig) -> Result<Self> {
        config.check()?;
        config.log_interval = Some(config.resolved_log_interval());
        let scenario = config
            .scenario
            .build(config.agents, config.dim, config.seed)?;
        let w = config.topology.build(config.agents, config.seed)?;
        let advice = tracking::advise_for(&scenario, config.mu)?;
        if config.alpha > advice.alpha_max {
            log::warn!(
                "alpha = {} exceeds the advisory ceiling N/L = {}",
                config.alpha,
                advice.alpha_max
            );
        }
        let rls = RlsState::new(config.dim, config.eta)?;
        let x0 = scenario.initial_points();
        let models = initial_models(&config, &scenario);
        let g0: Vec<DVector<f64>> = x0
            .iter()
            .enumerate()
            .map(|(i, x)| scenario.grad_v(i, x, 0) + models[i].grad_unchecked(x))
            .collect();
        let agents = tracking::init_agents(&x0, &g0, &rls)?;
        let state = SimState {
            t: 0,
            agents,
            acc: Accumulator::new(config.agents),
            rows: Vec::new(),
            diagnostics: Vec::new(),
            last: None,
            max_conservation_residual: 0.0,
            max_mean_dynamics_residual: 0.0,
            scalars_exchanged: 0,
        };
        Ok(Self {
            config,
            scenario,
            w,
            advice,
            state,
        })
    }

    /// Rebuilds the simulation for `config` and restores the checkpointed state.
    pub fn resume(config: SimConfig, checkpoint: Checkpoint) -> Result<Self> {
        let mut sim = Self::new(config)?;
        if checkpoint.config_hash != sim.config.hash() {
            return Err(Error::Checkpoint(format!(
                "checkpoint was written for config {}, this config is {}",
                checkpoint.config_hash,
                sim.config.hash()
            )));
        }
        if checkpoint.state.t > sim.config.iterations {
            return Err(Error::Checkpoint(format!(
                "checkpoint is at round {}, beyond the horizon {}",
                checkpoint.state.t, sim.config.iterations
            )));
        }
        if checkpoint.state.agents.len() != sim.config.agents {
            return Err(Error::Checkpoint("agent count differs from config".into()));
        }
        sim.state = checkpoint.state;
        Ok(sim)
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn mixing(&self) -> &MixingMatrix {
        &self.w
    }

    pub fn advice(&self) -> StepSizeAdvice {
        self.advice
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn round(&self) -> u64 {
        self.state.t
    }

    pub fn is_done(&self) -> bool {
        self.state.t >= self.config.iterations
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config_hash: self.config.hash(),
            state: self.state.clone(),
        }
    }

    fn effective_time(&self, t: u64) -> u64 {
        if self.config.static_time {
            0
        } else {
            t
        }
    }

    fn models(&self) -> Vec<QuadraticFunction> {
        if self.config.oracle_estimates {
            self.scenario
                .agents()
                .iter()
                .map(|a| a.user.truth().clone())
                .collect()
        } else {
            self.state
                .agents
                .iter()
                .map(|a| unpack(a.rls.xi_hat()))
                .collect()
        }
    }

    /// Advances one round.
    pub fn step(&mut self) -> Result<()> {
        let t = self.state.t + 1;
        let te = self.effective_time(t);
        let alpha = self.config.alpha;

        let predicted_mean =
            mean_of(&self.state.agents, |a| &a.x) - mean_of(&self.state.agents, |a| &a.d) * alpha;
        let mut scalars = 0;
        match self.config.engine {
            Engine::MessagePassing => {
                scalars += tracking::x_step(&mut self.state.agents, &self.w, alpha).total_scalars();
            }
            Engine::Matrix => tracking::x_step_matrix(&mut self.state.agents, &self.w, alpha),
        }
        let mean_dyn = (mean_of(&self.state.agents, |a| &a.x) - predicted_mean).norm();
        self.state.max_mean_dynamics_residual = self.state.max_mean_dynamics_residual.max(mean_dyn);

        for (i, a) in self.state.agents.iter().enumerate() {
            let norm = a.x.norm();
            if !norm.is_finite() || norm > DIVERGENCE_BOUND {
                return Err(Error::Divergence {
                    round: t,
                    agent: i,
                    norm,
                });
            }
        }

        if self.config.learning {
            let noise = *self.scenario.noise();
            for (i, a) in self.state.agents.iter_mut().enumerate() {
                let y = feedback(&self.scenario.agent(i).user, &noise, &a.x, i, t)?;
                a.rls.update(&pack_regressor(&a.x), y)?;
            }
        }

        let models = self.models();
        let g_old = tracking::g_step(&mut self.state.agents, &self.scenario, te, &models);
        let residual = match self.config.engine {
            Engine::MessagePassing => {
                let (msgs, residual) =
                    tracking::d_step(&mut self.state.agents, &self.w, &g_old, t)?;
                scalars += msgs.total_scalars();
                residual
            }
            Engine::Matrix => tracking::d_step_matrix(&mut self.state.agents, &self.w, &g_old, t)?,
        };
        self.state.max_conservation_residual = self.state.max_conservation_residual.max(residual);
        self.state.scalars_exchanged += scalars as u64;

        let snap = metrics::snapshot(&self.state.agents, &self.scenario, te, &models)?;
        let agent_increments: Vec<f64> = (0..self.config.agents)
            .map(|j| {
                metrics::agent_regret_increment(
                    &self.state.agents,
                    &self.scenario,
                    te,
                    j,
                    snap.f_star,
                )
            })
            .collect();
        self.state.acc.push(&snap, &agent_increments);
        self.state.t = t;

        let log_interval = self.config.resolved_log_interval();
        if t.is_multiple_of(log_interval) || t == self.config.iterations {
            let (eig_min, eig_max) = eigen_extremes(&models);
            let mut row = self.state.acc.record(&snap, eig_min, eig_max);
            row.t = t;
            let diag = self.diagnostics_row(t, te, &snap, &models, residual);
            if t.is_multiple_of(log_interval) {
                self.state.rows.push(row.clone());
                self.state.diagnostics.push(diag.clone());
            }
            self.state.last = Some((row, diag));
        }
        Ok(())
    }

    fn diagnostics_row(
        &self,
        t: u64,
        te: u64,
        snap: &metrics::Snapshot,
        models: &[QuadraticFunction],
        residual: f64,
    ) -> DiagnosticsRecord {
        let (est_regret_increment, est_tracking_error) =
            match metrics::solve_optimum(&self.scenario, te, Some(models)) {
                Ok(opt) => {
                    let value: f64 = models
                        .iter()
                        .enumerate()
                        .map(|(i, m)| {
                            self.scenario.agent(i).engineering.value(&snap.x_bar, te)
                                + m.eval_unchecked(&snap.x_bar)
                        })
                        .sum();
                    (
                        Some(value - opt.f_star),
                        Some((&snap.x_bar - &opt.x_star).norm()),
                    )
                }
                Err(_) => (None, None),
            };
        DiagnosticsRecord {
            t,
            regret_increment: snap.regret_increment,
            est_regret_increment,
            est_tracking_error,
            conservation_residual: residual,
        }
    }

    /// Runs to the configured horizon, writing checkpoints to `checkpoint_path`
    /// every `checkpoint_interval` rounds when both are set.
    pub fn run_to_end(&mut self, checkpoint_path: Option<&Path>) -> std::result::Result<(), Abort> {
        while !self.is_done() {
            if let Err(e) = self.step() {
                let kind = match e {
                    Error::Divergence { .. } => AbortKind::Divergence,
                    Error::Conservation { .. } => AbortKind::Conservation,
                    _ => AbortKind::Numerical,
                };
                return Err(Abort {
                    round: self.state.t + 1,
                    kind,
                    message: e.to_string(),
                });
            }
            if let (Some(every), Some(path)) = (self.config.checkpoint_interval, checkpoint_path) {
                if self.state.t.is_multiple_of(every) {
                    self.checkpoint().save(path).map_err(|e| Abort {
                        round: self.state.t,
                        kind: AbortKind::Numerical,
                        message: format!("checkpoint write failed: {e}"),
                    })?;
                }
            }
        }
        Ok(())
    }

    /// Logged rows plus a closing row at the horizon if it is off-cadence.
    pub fn rows(&self) -> (Vec<MetricsRecord>, Vec<DiagnosticsRecord>) {
        let mut rows = self.state.rows.clone();
        let mut diags = self.state.diagnostics.clone();
        if let Some((row, diag)) = &self.state.last {
            if rows.last().map(|r| r.t) != Some(row.t) {
                rows.push(row.clone());
                diags.push(diag.clone());
            }
        }
        (rows, diags)
    }

    pub fn summary(&self) -> RunSummary {
        let acc = &self.state.acc;
        RunSummary {
            rounds: self.state.t,
            cum_regret: acc.cum_regret,
            avg_regret: acc.cum_regret / self.state.t.max(1) as f64,
            est_error_sum: acc.est_error_sum,
            agent_regret: acc.agent_regret.clone(),
            max_conservation_residual: self.state.max_conservation_residual,
            max_mean_dynamics_residual: self.state.max_mean_dynamics_residual,
            scalars_exchanged: self.state.scalars_exchanged,
            spectral_radius: consensus_spectral_radius(&self.w),
            smoothness: self.advice.smoothness,
            alpha_max: self.advice.alpha_max,
        }
    }
}

fn initial_models(config: &SimConfig, scenario: &Scenario) -> Vec<QuadraticFunction> {
    if config.oracle_estimates {
        scenario
            .agents()
            .iter()
            .map(|a| a.user.truth().clone())
            .collect()
    } else {
        vec![QuadraticFunction::zero(config.dim); config.agents]
    }
}

fn eigen_extremes(models: &[QuadraticFunction]) -> (f64, f64) {
    models
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), m| {
            let ev = m.eigenvalues();
            (lo.min(ev[0]), hi.max(ev[ev.len() - 1]))
        })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub rounds: u64,
    pub cum_regret: f64,
    pub avg_regret: f64,
    pub est_error_sum: f64,
    pub agent_regret: Vec<f64>,
    pub max_conservation_residual: f64,
    pub max_mean_dynamics_residual: f64,
    pub scalars_exchanged: u64,
    pub spectral_radius: f64,
    pub smoothness: f64,
    pub alpha_max: f64,
}

pub struct RunOutput {
    pub config: SimConfig,
    pub rows: Vec<MetricsRecord>,
    pub diagnostics: Vec<DiagnosticsRecord>,
    pub summary: RunSummary,
    pub final_agents: Vec<AgentState>,
    pub abort: Option<Abort>,
}

/// Runs `config` to completion (or until aborted). Invalid configuration is an
/// error; a mid-run failure returns the partial output with `abort` set.
pub fn run(config: SimConfig) -> Result<RunOutput> {
    let mut sim = Simulation::new(config)?;
    let abort = sim.run_to_end(None).err();
    Ok(sim.into_output(abort))
}

impl Simulation {
    pub fn into_output(self, abort: Option<Abort>) -> RunOutput {
        let (rows, diagnostics) = self.rows();
        let summary = self.summary();
        RunOutput {
            config: self.config,
            rows,
            diagnostics,
            summary,
            final_agents: self.state.agents,
            abort,
        }
    }
}

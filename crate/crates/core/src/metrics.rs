//! Optimum oracle, regret, consensus and tracking metrics.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::QuadraticFunction;
use crate::scenario::Scenario;
use crate::tracking::{mean_of, AgentState};

/// Gradient-norm target of the numeric oracle.
pub const NUMERIC_ORACLE_TOL: f64 = 1e-10;
const NUMERIC_ORACLE_MAX_ITERS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleMode {
    ClosedFormQuadratic,
    Numeric,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimum {
    pub x_star: DVector<f64>,
    pub f_star: f64,
    pub mode: OracleMode,
}

/// Minimizer of `Σ_i V_i(·;t) + M_i` where `M_i` is `U_i` or, with
/// `estimates`, the agents' current models of it.
///
/// Quadratic engineering costs give a dense linear solve of
/// `(Σ P_i) x = −Σ q_i`; otherwise gradient descent with step `1/L` runs until
/// the gradient norm is below [`NUMERIC_ORACLE_TOL`].
pub fn solve_optimum(
    scenario: &Scenario,
    t: u64,
    estimates: Option<&[QuadraticFunction]>,
) -> Result<Optimum> {
    let models: Vec<&QuadraticFunction> = match estimates {
        Some(e) => {
            if e.len() != scenario.len() {
                return Err(Error::dim(scenario.len(), e.len()));
            }
            e.iter().collect()
        }
        None => scenario.agents().iter().map(|a| a.user.truth()).collect(),
    };
    let engineering: Option<Vec<QuadraticFunction>> = scenario
        .agents()
        .iter()
        .map(|a| a.engineering.as_quadratic(t))
        .collect();
    let total_value = |x: &DVector<f64>| -> f64 {
        scenario
            .agents()
            .iter()
            .zip(&models)
            .map(|(a, m)| a.engineering.value(x, t) + m.eval_unchecked(x))
            .sum()
    };

    match engineering {
        Some(quads) => {
            let n = scenario.dim();
            let mut hessian = DMatrix::zeros(n, n);
            let mut linear = DVector::zeros(n);
            for q in quads.iter().chain(models.iter().copied()) {
                hessian += q.p();
                linear += q.q();
            }
            let chol = hessian.cholesky().ok_or_else(|| {
                Error::Singular(format!("total Hessian at t={t} is not positive definite"))
            })?;
            let x_star = chol.solve(&(-linear));
            let f_star = total_value(&x_star);
            Ok(Optimum {
                x_star,
                f_star,
                mode: OracleMode::ClosedFormQuadratic,
            })
        }
        None => {
            let lipschitz: f64 = scenario
                .agents()
                .iter()
                .zip(&models)
                .map(|(a, m)| {
                    a.engineering.smoothness()
                        + m.eigenvalues().last().copied().unwrap_or(0.0).abs()
                })
                .sum();
            let grad = |x: &DVector<f64>| -> DVector<f64> {
                scenario
                    .agents()
                    .iter()
                    .zip(&models)
                    .fold(DVector::zeros(scenario.dim()), |acc, (a, m)| {
                        acc + a.engineering.grad(x, t) + m.grad_unchecked(x)
                    })
            };
            let mut x = DVector::zeros(scenario.dim());
            for _ in 0..NUMERIC_ORACLE_MAX_ITERS {
                let g = grad(&x);
                if g.norm() <= NUMERIC_ORACLE_TOL {
                    let f_star = total_value(&x);
                    return Ok(Optimum {
                        x_star: x,
                        f_star,
                        mode: OracleMode::Numeric,
                    });
                }
                x.axpy(-1.0 / lipschitz, &g, 1.0);
            }
            Err(Error::Singular(format!(
                "numeric optimum at t={t} did not converge"
            )))
        }
    }
}

/// Quantities at one round that do not depend on history.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: u64,
    pub x_bar: DVector<f64>,
    pub x_star: DVector<f64>,
    pub f_star: f64,
    /// `Σ_i f_i(x̄_t;t) − f_⋆(t)` with the true costs.
    pub regret_increment: f64,
    /// `Σ_i ‖x_i − x̄‖²`.
    pub consensus: f64,
    /// `‖x̄_t − x_⋆(t)‖`.
    pub tracking_error: f64,
    /// `Σ_i |Û_i(x̄_t) − U_i(x̄_t)|`.
    pub estimation_error: f64,
}

pub fn snapshot(
    states: &[AgentState],
    scenario: &Scenario,
    t: u64,
    estimates: &[QuadraticFunction],
) -> Result<Snapshot> {
    let opt = solve_optimum(scenario, t, None)?;
    let x_bar = mean_of(states, |s| &s.x);
    let consensus = states.iter().map(|s| (&s.x - &x_bar).norm_squared()).sum();
    let regret_increment = scenario.total_cost(&x_bar, t) - opt.f_star;
    let tracking_error = (&x_bar - &opt.x_star).norm();
    let estimation_error = scenario
        .agents()
        .iter()
        .zip(estimates)
        .map(|(a, e)| (e.eval_unchecked(&x_bar) - a.user.truth().eval_unchecked(&x_bar)).abs())
        .sum();
    Ok(Snapshot {
        t,
        x_bar,
        x_star: opt.x_star,
        f_star: opt.f_star,
        regret_increment,
        consensus,
        tracking_error,
        estimation_error,
    })
}

/// `Σ_i f_i(x_j;t) − f_⋆(t)`: the regret increment seen from agent `j`'s own iterate.
pub fn agent_regret_increment(
    states: &[AgentState],
    scenario: &Scenario,
    t: u64,
    j: usize,
    f_star: f64,
) -> f64 {
    scenario.total_cost(&states[j].x, t) - f_star
}

/// One row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub t: u64,
    /// Cumulative dynamic regret `R_t`.
    pub regret: f64,
    pub avg_regret: f64,
    pub consensus: f64,
    pub tracking_error: f64,
    /// Cumulative estimation error `c_U` up to `t`.
    pub est_error_sum: f64,
    /// Smallest eigenvalue of any agent's `P̂`.
    pub eig_min: f64,
    /// Largest eigenvalue of any agent's `P̂`.
    pub eig_max: f64,
}

pub const METRICS_HEADER: [&str; 8] = [
    "t",
    "regret",
    "avg_regret",
    "consensus",
    "tracking_error",
    "est_error_sum",
    "eig_min",
    "eig_max",
];

/// Running sums over rounds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Accumulator {
    pub rounds: u64,
    pub cum_regret: f64,
    pub est_error_sum: f64,
    pub agent_regret: Vec<f64>,
}

impl Accumulator {
    pub fn new(n_agents: usize) -> Self {
        Self {
            agent_regret: vec![0.0; n_agents],
            ..Self::default()
        }
    }

    pub fn push(&mut self, snap: &Snapshot, agent_increments: &[f64]) {
        self.rounds += 1;
        self.cum_regret += snap.regret_increment;
        self.est_error_sum += snap.estimation_error;
        for (acc, inc) in self.agent_regret.iter_mut().zip(agent_increments) {
            *acc += inc;
        }
    }

    pub fn record(&self, snap: &Snapshot, eig_min: f64, eig_max: f64) -> MetricsRecord {
        MetricsRecord {
            t: snap.t,
            regret: self.cum_regret,
            avg_regret: self.cum_regret / snap.t.max(1) as f64,
            consensus: snap.consensus,
            tracking_error: snap.tracking_error,
            est_error_sum: self.est_error_sum,
            eig_min,
            eig_max,
        }
    }
}

pub fn write_metrics_csv<W: Write>(out: W, rows: &[MetricsRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(METRICS_HEADER)?;
    }
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv<R: Read>(input: R) -> Result<Vec<MetricsRecord>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != METRICS_HEADER {
        return Err(Error::Config(format!(
            "unexpected metrics header {header:?}"
        )));
    }
    Ok(r.deserialize()
        .collect::<std::result::Result<Vec<MetricsRecord>, _>>()?)
}

/// Default certification threshold: `|slope|` per 10⁴ rounds at most this
/// fraction of the plateau value.
pub const PLATEAU_REL_SLOPE: f64 = 1e-3;
pub const PLATEAU_MIN_LEN: usize = 10_000;
const PLATEAU_WINDOW: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateauReport {
    /// Mean over the final window.
    pub plateau: f64,
    /// Least-squares slope over the final window, per round.
    pub slope: f64,
    pub certified: bool,
}

impl PlateauReport {
    pub fn slope_per_10k(&self) -> f64 {
        self.slope * 1e4
    }
}

/// Fits a line to the final 20% of `(t, value)` and certifies a plateau when
/// `|slope|·10⁴ ≤ rel_slope·plateau` with `plateau > 0`.
pub fn plateau_detector(times: &[f64], values: &[f64], rel_slope: f64) -> Result<PlateauReport> {
    if times.len() != values.len() {
        return Err(Error::dim(times.len(), values.len()));
    }
    if values.len() < PLATEAU_MIN_LEN {
        return Err(Error::InvalidParameter(format!(
            "plateau detection needs at least {PLATEAU_MIN_LEN} points, got {}",
            values.len()
        )));
    }
    let start = values.len() - (values.len() as f64 * PLATEAU_WINDOW).ceil() as usize;
    let (ts, vs) = (&times[start..], &values[start..]);
    let (slope, _) = linear_fit(ts, vs);
    let plateau = vs.iter().sum::<f64>() / vs.len() as f64;
    let certified = plateau > 0.0 && (slope * 1e4).abs() <= rel_slope * plateau;
    Ok(PlateauReport {
        plateau,
        slope,
        certified,
    })
}

/// Ordinary least-squares line; returns `(slope, intercept)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = if sxx == 0.0 { 0.0 } else { sxy / sxx };
    (slope, my - slope * mx)
}

/// Coefficient of determination of the least-squares line.
pub fn r_squared(xs: &[f64], ys: &[f64]) -> f64 {
    let (slope, intercept) = linear_fit(xs, ys);
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - slope * x - intercept).powi(2))
        .sum();
    if ss_tot == 0.0 {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    }
}

//! Stand-alone studies run by presets: the estimator's convergence rate and
//! the tracking-invariant audit.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Topology;
use crate::quad::{pack_params, pack_regressor, QuadraticFunction};
use crate::rls::{RlsState, DEFAULT_ETA};
use crate::rng::{self, Domain};
use crate::scenario::{BenchmarkParams, ScenarioSpec};
use crate::sim::{Engine, SimConfig, Simulation};

/// Estimator error decay under i.i.d. excitation: compares `‖ξ̂_T₀ − ξ⋆‖`
/// against `‖ξ̂_4T₀ − ξ⋆‖`. An `O(1/√t)` error gives a ratio near 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RlsRateConfig {
    pub dim: usize,
    pub seeds: u64,
    pub t0: u64,
    pub eta: f64,
    pub noise_std: f64,
    /// Excitation `x_t ~ U[−range, range]ⁿ`.
    pub excitation_range: f64,
    pub base_seed: u64,
}

impl Default for RlsRateConfig {
    fn default() -> Self {
        Self {
            dim: 2,
            seeds: 20,
            t0: 2000,
            eta: DEFAULT_ETA,
            noise_std: 0.2f64.sqrt(),
            excitation_range: 1.5,
            base_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlsRateRun {
    pub seed: u64,
    pub error_t0: f64,
    pub error_4t0: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlsRateReport {
    pub runs: Vec<RlsRateRun>,
    pub median_ratio: f64,
}

/// Error trajectory of one estimator fed `samples` noisy evaluations of a
/// random `‖x − v‖²`, sampled at the given checkpoints.
pub fn rls_error_curve(config: &RlsRateConfig, seed: u64, checkpoints: &[u64]) -> Result<Vec<f64>> {
    let n = config.dim;
    let mut setup = rng::stream(seed, Domain::Excitation, 0);
    let v = DVector::from_fn(n, |_, _| setup.random_range(-1.5..1.5));
    let truth = QuadraticFunction::squared_distance(&v, 1.0);
    let xi_star = pack_params(&truth);
    let noise = Normal::new(0.0, config.noise_std)
        .map_err(|e| Error::InvalidParameter(format!("noise_std: {e}")))?;

    let mut excite = rng::stream(seed, Domain::Excitation, 1);
    let mut eps = rng::stream(seed, Domain::Noise, 0);
    let mut rls = RlsState::new(n, config.eta)?;
    let horizon = checkpoints.iter().copied().max().unwrap_or(0);
    let r = config.excitation_range;
    let mut out = Vec::with_capacity(checkpoints.len());
    for t in 1..=horizon {
        let x = DVector::from_fn(n, |_, _| excite.random_range(-r..r));
        let y = truth.eval_unchecked(&x) + noise.sample(&mut eps);
        rls.update(&pack_regressor(&x), y)?;
        if checkpoints.contains(&t) {
            out.push((rls.xi_hat().as_vector() - xi_star.as_vector()).norm());
        }
    }
    Ok(out)
}

pub fn rls_rate(config: &RlsRateConfig) -> Result<RlsRateReport> {
    if config.seeds == 0 || config.t0 == 0 {
        return Err(Error::Config(
            "rls-rate needs seeds >= 1 and t0 >= 1".into(),
        ));
    }
    let runs = (0..config.seeds)
        .map(|k| {
            let seed = config.base_seed + k;
            let e = rls_error_curve(config, seed, &[config.t0, 4 * config.t0])?;
            Ok(RlsRateRun {
                seed,
                error_t0: e[0],
                error_4t0: e[1],
                ratio: e[0] / e[1],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let median_ratio = median(runs.iter().map(|r| r.ratio).collect());
    Ok(RlsRateReport { runs, median_ratio })
}

pub fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Random small networks run for a few hundred rounds while recording the
/// worst `‖d̄ − ḡ‖` and `‖x̄_t − (x̄_{t−1} − α d̄_{t−1})‖`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    pub instances: u64,
    pub rounds: u64,
    pub max_agents: usize,
    pub max_dim: usize,
    pub alpha: f64,
    pub learning: bool,
    pub base_seed: u64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            instances: 20,
            rounds: 200,
            max_agents: 10,
            max_dim: 3,
            alpha: 0.01,
            learning: true,
            base_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditInstance {
    pub agents: usize,
    pub dim: usize,
    pub topology: String,
    pub max_conservation_residual: f64,
    pub max_mean_dynamics_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub instances: Vec<AuditInstance>,
    pub max_conservation_residual: f64,
    pub max_mean_dynamics_residual: f64,
}

/// Instance `k` cycles through complete, ring and Erdős–Rényi graphs.
pub fn audit_instance_config(config: &AuditConfig, k: u64) -> SimConfig {
    let mut r = rng::stream(config.base_seed, Domain::Audit, k);
    let agents = r.random_range(2..=config.max_agents.max(2));
    let dim = r.random_range(1..=config.max_dim.max(1));
    let seed: u64 = r.random();
    let topology = match k % 3 {
        0 => Topology::Complete,
        1 => Topology::Ring,
        _ => Topology::ErdosRenyi {
            p: 0.5,
            seed: Some(r.random()),
        },
    };
    SimConfig {
        agents,
        dim,
        iterations: config.rounds,
        alpha: config.alpha,
        eta: DEFAULT_ETA,
        mu: 1.5,
        seed,
        log_interval: Some(config.rounds.max(1)),
        learning: config.learning,
        oracle_estimates: !config.learning,
        static_time: false,
        engine: Engine::MessagePassing,
        checkpoint_interval: None,
        topology,
        scenario: ScenarioSpec::Benchmark {
            params: BenchmarkParams::default(),
        },
    }
}

pub fn conservation_audit(config: &AuditConfig) -> Result<AuditReport> {
    let mut instances = Vec::new();
    for k in 0..config.instances {
        let sim_config = audit_instance_config(config, k);
        let topology = serde_json::to_string(&sim_config.topology)?;
        let (agents, dim) = (sim_config.agents, sim_config.dim);
        let mut sim = Simulation::new(sim_config)?;
        while !sim.is_done() {
            sim.step()?;
        }
        let s = sim.state();
        instances.push(AuditInstance {
            agents,
            dim,
            topology,
            max_conservation_residual: s.max_conservation_residual,
            max_mean_dynamics_residual: s.max_mean_dynamics_residual,
        });
    }
    let worst = |f: fn(&AuditInstance) -> f64| instances.iter().map(f).fold(0.0, f64::max);
    Ok(AuditReport {
        max_conservation_residual: worst(|i| i.max_conservation_residual),
        max_mean_dynamics_residual: worst(|i| i.max_mean_dynamics_residual),
        instances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(vec![]).is_nan());
    }

    #[test]
    fn rls_error_shrinks() {
        let c = RlsRateConfig::default();
        let e = rls_error_curve(&c, 3, &[100, 3000]).unwrap();
        assert!(e[1] < e[0]);
    }

    #[test]
    fn small_audit_is_clean() {
        let report = conservation_audit(&AuditConfig {
            instances: 3,
            rounds: 30,
            ..AuditConfig::default()
        })
        .unwrap();
        assert_eq!(report.instances.len(), 3);
        assert!(report.max_conservation_residual <= 1e-10);
        assert!(report.max_mean_dynamics_residual <= 1e-12);
    }
}

//! Problem instances: known time-varying engineering costs, hidden quadratic
//! user costs and the feedback noise model.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::QuadraticFunction;
use crate::rng::{self, Domain};

pub const USER_COST_BOUNDS: &str = "user cost curvature within [m_i, L_i], m_i > 0";

/// Smoothness and strong-convexity modulus of `‖x − p‖²`.
pub const TRACKING_QUADRATIC_MODULUS: f64 = 2.0;

/// Known cost with an arbitrary gradient, for scenarios outside the
/// tracking-quadratic family.
pub trait EngineeringFn: Send + Sync {
    fn value(&self, x: &DVector<f64>, t: u64) -> f64;
    fn grad(&self, x: &DVector<f64>, t: u64) -> DVector<f64>;
    /// Lipschitz constant of the gradient.
    fn smoothness(&self) -> f64;
}

#[derive(Clone)]
pub enum EngineeringCost {
    /// `V(x;t) = ‖x − p(t)‖²` with `p(t) = z + ψ ⊙ sin(t/m)`.
    TrackingQuadratic {
        z: DVector<f64>,
        psi: DVector<f64>,
        m: u64,
    },
    Custom(Arc<dyn EngineeringFn>),
}

impl fmt::Debug for EngineeringCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::TrackingQuadratic { z, psi, m } => f
                .debug_struct("TrackingQuadratic")
                .field("z", &z.as_slice())
                .field("psi", &psi.as_slice())
                .field("m", m)
                .finish(),
            Self::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl EngineeringCost {
    pub fn tracking(z: DVector<f64>, psi: DVector<f64>, m: u64) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidParameter(format!(
                "target period m must be at least 2, got {m}"
            )));
        }
        if z.len() != psi.len() {
            return Err(Error::dim(z.len(), psi.len()));
        }
        Ok(Self::TrackingQuadratic { z, psi, m })
    }

    /// Target `p(t)` of a tracking-quadratic cost; `None` for custom costs.
    pub fn target(&self, t: u64) -> Option<DVector<f64>> {
        match self {
            Self::TrackingQuadratic { z, psi, m } => {
                let phase = (t as f64 / *m as f64).sin();
                Some(z + psi * phase)
            }
            Self::Custom(_) => None,
        }
    }

    pub fn value(&self, x: &DVector<f64>, t: u64) -> f64 {
        match self {
            Self::TrackingQuadratic { .. } => (x - self.target(t).unwrap()).norm_squared(),
            Self::Custom(c) => c.value(x, t),
        }
    }

    pub fn grad(&self, x: &DVector<f64>, t: u64) -> DVector<f64> {
        match self {
            Self::TrackingQuadratic { .. } => (x - self.target(t).unwrap()) * 2.0,
            Self::Custom(c) => c.grad(x, t),
        }
    }

    pub fn smoothness(&self) -> f64 {
        match self {
            Self::TrackingQuadratic { .. } => TRACKING_QUADRATIC_MODULUS,
            Self::Custom(c) => c.smoothness(),
        }
    }

    /// The cost as an explicit quadratic at time `t`, when it is one.
    pub fn as_quadratic(&self, t: u64) -> Option<QuadraticFunction> {
        self.target(t)
            .map(|p| QuadraticFunction::squared_distance(&p, 1.0))
    }
}

/// Hidden user cost with its declared curvature bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserCost {
    truth: QuadraticFunction,
    smoothness: f64,
    strong_convexity: f64,
}

impl UserCost {
    /// Checks that the eigenvalues of `P` lie in `[strong_convexity, smoothness]`
    /// with `strong_convexity > 0`.
    pub fn new(truth: QuadraticFunction, smoothness: f64, strong_convexity: f64) -> Result<Self> {
        let ev = truth.eigenvalues();
        let (lo, hi) = (
            ev.first().copied().unwrap_or(0.0),
            ev.last().copied().unwrap_or(0.0),
        );
        let tol = 1e-12 * smoothness.abs().max(1.0);
        if strong_convexity.is_nan() || strong_convexity <= 0.0 || strong_convexity > smoothness {
            return Err(Error::Assumption {
                assumption: USER_COST_BOUNDS,
                detail: format!(
                    "bounds [{strong_convexity}, {smoothness}] are not a positive interval"
                ),
            });
        }
        if lo < strong_convexity - tol || hi > smoothness + tol {
            return Err(Error::Assumption {
                assumption: USER_COST_BOUNDS,
                detail: format!(
                    "eigenvalues span [{lo}, {hi}], outside [{strong_convexity}, {smoothness}]"
                ),
            });
        }
        Ok(Self {
            truth,
            smoothness,
            strong_convexity,
        })
    }

    pub fn truth(&self) -> &QuadraticFunction {
        &self.truth
    }

    pub fn smoothness(&self) -> f64 {
        self.smoothness
    }

    pub fn strong_convexity(&self) -> f64 {
        self.strong_convexity
    }
}

/// Zero-mean Gaussian feedback noise. Each `(agent, t)` pair owns an
/// independent stream, so draws do not depend on evaluation order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub variance: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn new(variance: f64, seed: u64) -> Result<Self> {
        if !(variance >= 0.0 && variance.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "noise variance must be finite and >= 0, got {variance}"
            )));
        }
        Ok(Self { variance, seed })
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }

    pub fn sample(&self, agent: usize, t: u64) -> f64 {
        if self.variance == 0.0 {
            return 0.0;
        }
        let mut rng = rng::stream2(self.seed, Domain::Noise, agent as u64, t);
        Normal::new(0.0, self.std_dev())
            .expect("finite std")
            .sample(&mut rng)
    }
}

/// `y = U(x) + ε` for `agent` at round `t`.
pub fn feedback(
    user: &UserCost,
    noise: &NoiseModel,
    x: &DVector<f64>,
    agent: usize,
    t: u64,
) -> Result<f64> {
    Ok(user.truth.eval(x)? + noise.sample(agent, t))
}

#[derive(Debug, Clone)]
pub struct AgentProblem {
    pub engineering: EngineeringCost,
    pub user: UserCost,
    pub x0: DVector<f64>,
}

/// A complete problem instance for `N` agents in dimension `n`.
#[derive(Debug, Clone)]
pub struct Scenario {
    dim: usize,
    agents: Vec<AgentProblem>,
    noise: NoiseModel,
}

impl Scenario {
    pub fn new(dim: usize, agents: Vec<AgentProblem>, noise: NoiseModel) -> Result<Self> {
        if agents.is_empty() {
            return Err(Error::InvalidParameter(
                "scenario needs at least one agent".into(),
            ));
        }
        for a in &agents {
            if a.user.truth.dim() != dim {
                return Err(Error::dim(dim, a.user.truth.dim()));
            }
            if a.x0.len() != dim {
                return Err(Error::dim(dim, a.x0.len()));
            }
            if let EngineeringCost::TrackingQuadratic { z, .. } = &a.engineering {
                if z.len() != dim {
                    return Err(Error::dim(dim, z.len()));
                }
            }
        }
        Ok(Self { dim, agents, noise })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn agents(&self) -> &[AgentProblem] {
        &self.agents
    }

    pub fn agent(&self, i: usize) -> &AgentProblem {
        &self.agents[i]
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn grad_v(&self, i: usize, x: &DVector<f64>, t: u64) -> DVector<f64> {
        self.agents[i].engineering.grad(x, t)
    }

    /// True local cost `f_i(x;t) = V_i(x;t) + U_i(x)`.
    pub fn local_cost(&self, i: usize, x: &DVector<f64>, t: u64) -> f64 {
        let a = &self.agents[i];
        a.engineering.value(x, t) + a.user.truth.eval_unchecked(x)
    }

    pub fn total_cost(&self, x: &DVector<f64>, t: u64) -> f64 {
        (0..self.len()).map(|i| self.local_cost(i, x, t)).sum()
    }

    pub fn total_grad(&self, x: &DVector<f64>, t: u64) -> DVector<f64> {
        self.agents.iter().fold(DVector::zeros(self.dim), |acc, a| {
            acc + a.engineering.grad(x, t) + a.user.truth.grad_unchecked(x)
        })
    }

    /// `max_i L_V,i`.
    pub fn engineering_smoothness(&self) -> f64 {
        self.agents
            .iter()
            .map(|a| a.engineering.smoothness())
            .fold(0.0, f64::max)
    }

    pub fn user_smoothness(&self) -> Vec<f64> {
        self.agents.iter().map(|a| a.user.smoothness).collect()
    }

    pub fn initial_points(&self) -> Vec<DVector<f64>> {
        self.agents.iter().map(|a| a.x0.clone()).collect()
    }
}

/// Parameter ranges of the sinusoidal-target benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkParams {
    /// `v_i ~ U[−v_range, v_range]ⁿ`.
    pub v_range: f64,
    /// `z_i ~ U[−z_range, z_range]ⁿ`.
    pub z_range: f64,
    /// `m_i` uniform over the integers in `[m_min, m_max]`.
    pub m_min: u64,
    pub m_max: u64,
    /// Each component of `ψ_i ~ U[psi_min, psi_max]`.
    pub psi_min: f64,
    pub psi_max: f64,
    /// Variance (not standard deviation) of the feedback noise.
    pub noise_variance: f64,
    /// `x_{i,0} ~ U[−x0_range, x0_range]ⁿ`.
    pub x0_range: f64,
}

impl Default for BenchmarkParams {
    fn default() -> Self {
        Self {
            v_range: 1.5,
            z_range: 5.0,
            m_min: 100,
            m_max: 150,
            psi_min: 0.5,
            psi_max: 0.6,
            noise_variance: 0.2,
            x0_range: 1.5,
        }
    }
}

/// Draws the benchmark: `V_i = ‖x − p_i(t)‖²`, `U_i = ‖x − v_i‖²`.
/// Each agent's parameters come from its own stream, so agent `i` is the same
/// for every `N > i`.
pub fn generate_benchmark(
    n_agents: usize,
    dim: usize,
    seed: u64,
    params: &BenchmarkParams,
) -> Result<Scenario> {
    if n_agents < 1 || dim < 1 {
        return Err(Error::InvalidParameter(format!(
            "need at least one agent and dimension >= 1, got N={n_agents}, n={dim}"
        )));
    }
    if params.m_min < 2 || params.m_min > params.m_max {
        return Err(Error::InvalidParameter(format!(
            "target periods [{}, {}] must satisfy 2 <= m_min <= m_max",
            params.m_min, params.m_max
        )));
    }
    if params.psi_min > params.psi_max {
        return Err(Error::InvalidParameter("psi_min exceeds psi_max".into()));
    }
    let noise = NoiseModel::new(params.noise_variance, seed)?;
    let agents = (0..n_agents)
        .map(|i| {
            let mut rng = rng::stream(seed, Domain::Scenario, i as u64);
            let v = uniform_vec(&mut rng, dim, -params.v_range, params.v_range);
            let z = uniform_vec(&mut rng, dim, -params.z_range, params.z_range);
            let m = rng.random_range(params.m_min..=params.m_max);
            let psi = uniform_vec(&mut rng, dim, params.psi_min, params.psi_max);
            let x0 = uniform_vec(&mut rng, dim, -params.x0_range, params.x0_range);
            let user = UserCost::new(QuadraticFunction::squared_distance(&v, 1.0), 2.0, 2.0)?;
            Ok(AgentProblem {
                engineering: EngineeringCost::tracking(z, psi, m)?,
                user,
                x0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Scenario::new(dim, agents, noise)
}

fn uniform_vec<R: Rng>(rng: &mut R, n: usize, lo: f64, hi: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| {
        if lo == hi {
            lo
        } else {
            rng.random_range(lo..hi)
        }
    })
}

/// One agent of an explicitly specified scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitAgent {
    pub z: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi: Option<Vec<f64>>,
    #[serde(default = "default_period")]
    pub m: u64,
    /// Row-major user curvature `P_i`.
    pub user_p: Vec<Vec<f64>>,
    pub user_q: Vec<f64>,
    #[serde(default)]
    pub user_r: f64,
    /// Declared bound `L_i` on the user curvature.
    pub user_smoothness: f64,
    pub user_strong_convexity: f64,
    pub x0: Vec<f64>,
}

fn default_period() -> u64 {
    100
}

/// Scenario section of a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScenarioSpec {
    Benchmark {
        #[serde(default)]
        params: BenchmarkParams,
    },
    Explicit {
        #[serde(default)]
        noise_variance: f64,
        agents: Vec<ExplicitAgent>,
    },
}

impl ScenarioSpec {
    pub fn build(&self, n_agents: usize, dim: usize, seed: u64) -> Result<Scenario> {
        match self {
            ScenarioSpec::Benchmark { params } => generate_benchmark(n_agents, dim, seed, params),
            ScenarioSpec::Explicit {
                noise_variance,
                agents,
            } => {
                if agents.len() != n_agents {
                    return Err(Error::Config(format!(
                        "scenario lists {} agents but N = {n_agents}",
                        agents.len()
                    )));
                }
                let agents = agents
                    .iter()
                    .map(|a| a.build(dim))
                    .collect::<Result<Vec<_>>>()?;
                Scenario::new(dim, agents, NoiseModel::new(*noise_variance, seed)?)
            }
        }
    }
}

impl ExplicitAgent {
    fn build(&self, dim: usize) -> Result<AgentProblem> {
        let vec = |v: &[f64]| -> Result<DVector<f64>> {
            if v.len() != dim {
                return Err(Error::dim(dim, v.len()));
            }
            Ok(DVector::from_column_slice(v))
        };
        if self.user_p.len() != dim || self.user_p.iter().any(|r| r.len() != dim) {
            return Err(Error::Config(format!("user_p must be {dim}x{dim}")));
        }
        let p = DMatrix::from_fn(dim, dim, |i, j| self.user_p[i][j]);
        let truth = QuadraticFunction::new(p, vec(&self.user_q)?, self.user_r)?;
        let psi = match &self.psi {
            Some(psi) => vec(psi)?,
            None => DVector::zeros(dim),
        };
        Ok(AgentProblem {
            engineering: EngineeringCost::tracking(vec(&self.z)?, psi, self.m)?,
            user: UserCost::new(truth, self.user_smoothness, self.user_strong_convexity)?,
            x0: vec(&self.x0)?,
        })
    }
}

//! Dynamic gradient tracking over a mixing matrix.
//!
//! One round, for every agent `i` and from the pre-round snapshot:
//!
//! ```text
//! x_i ← Σ_j w_ij x_j − α d_i                  (x exchange)
//! g_i ← ∇V_i(x_i; t) + P̂_i x_i + q̂_i
//! d_i ← Σ_j w_ij d_j + (g_i − g_i,old)        (d exchange)
//! ```
//!
//! The learning step sits between the x-update and the g-update; see
//! [`crate::sim`]. Mixing goes through explicit per-agent inboxes; the
//! `*_matrix` variants compute the same thing as a dense product and exist to
//! cross-check the message-passing path.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::MixingMatrix;
use crate::quad::QuadraticFunction;
use crate::rls::RlsState;
use crate::scenario::Scenario;

/// Absolute conservation tolerance, scaled by `1 + max |g|`.
pub const CONSERVATION_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub x: DVector<f64>,
    pub g: DVector<f64>,
    pub d: DVector<f64>,
    pub rls: RlsState,
}

impl AgentState {
    pub fn is_finite(&self) -> bool {
        self.x
            .iter()
            .chain(self.g.iter())
            .chain(self.d.iter())
            .all(|v| v.is_finite())
    }
}

/// Starts every agent at `x0_i` with `g = d = ∇f̂_i(x0_i; 0)`.
pub fn init_agents(
    x0: &[DVector<f64>],
    grads0: &[DVector<f64>],
    rls: &RlsState,
) -> Result<Vec<AgentState>> {
    if x0.len() != grads0.len() {
        return Err(Error::dim(x0.len(), grads0.len()));
    }
    let Some(n) = x0.first().map(DVector::len) else {
        return Err(Error::InvalidParameter("no agents".into()));
    };
    x0.iter()
        .zip(grads0)
        .map(|(x, g)| {
            if x.len() != n {
                return Err(Error::dim(n, x.len()));
            }
            if g.len() != n {
                return Err(Error::dim(n, g.len()));
            }
            Ok(AgentState {
                x: x.clone(),
                g: g.clone(),
                d: g.clone(),
                rls: rls.clone(),
            })
        })
        .collect()
}

/// Messages delivered in one exchange: `inboxes[i]` holds `(sender, value)`
/// for every in-neighbor of `i` other than `i` itself.
#[derive(Debug, Clone, Default)]
pub struct Exchange {
    pub inboxes: Vec<Vec<(usize, DVector<f64>)>>,
    pub scalars_sent: Vec<usize>,
}

impl Exchange {
    pub fn message_count(&self) -> usize {
        self.inboxes.iter().map(Vec::len).sum()
    }

    pub fn total_scalars(&self) -> usize {
        self.scalars_sent.iter().sum()
    }

    pub fn scalars_received(&self, i: usize) -> usize {
        self.inboxes[i].iter().map(|(_, v)| v.len()).sum()
    }
}

/// The two broadcasts of one round.
#[derive(Debug, Clone, Default)]
pub struct RoundMessages {
    pub x_msgs: Exchange,
    pub d_msgs: Exchange,
}

impl RoundMessages {
    pub fn total_scalars(&self) -> usize {
        self.x_msgs.total_scalars() + self.d_msgs.total_scalars()
    }

    /// Scalars agent `i` sends plus receives in this round.
    pub fn agent_traffic(&self, i: usize) -> usize {
        [&self.x_msgs, &self.d_msgs]
            .iter()
            .map(|e| e.scalars_sent[i] + e.scalars_received(i))
            .sum()
    }
}

/// Every agent broadcasts `values[j]` to its out-neighbors.
fn broadcast<'a>(w: &MixingMatrix, values: impl Fn(usize) -> &'a DVector<f64>) -> Exchange {
    let n = w.len();
    let mut inboxes = vec![Vec::new(); n];
    let mut scalars_sent = vec![0; n];
    for (j, sent) in scalars_sent.iter_mut().enumerate() {
        let v = values(j);
        for &i in w.out_neighbors(j) {
            inboxes[i].push((j, v.clone()));
            *sent += v.len();
        }
    }
    Exchange {
        inboxes,
        scalars_sent,
    }
}

/// `Σ_{j∈N_i} w_ij v_j`, reading neighbors from the inbox and `i` from `own`.
fn mix_inbox(
    w: &MixingMatrix,
    i: usize,
    own: &DVector<f64>,
    inbox: &[(usize, DVector<f64>)],
) -> DVector<f64> {
    let mut acc = DVector::zeros(own.len());
    for &j in w.in_neighbors(i) {
        let v = if j == i {
            own
        } else {
            &inbox
                .iter()
                .find(|(from, _)| *from == j)
                .expect("every in-neighbor delivers a message")
                .1
        };
        acc.axpy(w.weight(i, j), v, 1.0);
    }
    acc
}

/// `x_i ← Σ_j w_ij x_j − α d_i` for all agents simultaneously.
pub fn x_step(states: &mut [AgentState], w: &MixingMatrix, alpha: f64) -> Exchange {
    let msgs = broadcast(w, |j| &states[j].x);
    let next: Vec<DVector<f64>> = (0..states.len())
        .map(|i| {
            let mut x = mix_inbox(w, i, &states[i].x, &msgs.inboxes[i]);
            x.axpy(-alpha, &states[i].d, 1.0);
            x
        })
        .collect();
    for (s, x) in states.iter_mut().zip(next) {
        s.x = x;
    }
    msgs
}

/// `g_i ← ∇V_i(x_i; t) + P̂_i x_i + q̂_i`; returns the previous `g` snapshot.
/// `estimates[i]` is whatever model of `U_i` agent `i` currently holds.
pub fn g_step(
    states: &mut [AgentState],
    scenario: &Scenario,
    t: u64,
    estimates: &[QuadraticFunction],
) -> Vec<DVector<f64>> {
    states
        .iter_mut()
        .enumerate()
        .map(|(i, s)| {
            let g = scenario.grad_v(i, &s.x, t) + estimates[i].grad_unchecked(&s.x);
            std::mem::replace(&mut s.g, g)
        })
        .collect()
}

/// `d_i ← Σ_j w_ij d_j + (g_i − g_old_i)`, then checks that the mean of `d`
/// still equals the mean of `g`. Returns the exchange and that residual.
pub fn d_step(
    states: &mut [AgentState],
    w: &MixingMatrix,
    g_old: &[DVector<f64>],
    round: u64,
) -> Result<(Exchange, f64)> {
    let msgs = broadcast(w, |j| &states[j].d);
    let next: Vec<DVector<f64>> = (0..states.len())
        .map(|i| mix_inbox(w, i, &states[i].d, &msgs.inboxes[i]) + &states[i].g - &g_old[i])
        .collect();
    for (s, d) in states.iter_mut().zip(next) {
        s.d = d;
    }
    let residual = check_conservation(states, round)?;
    Ok((msgs, residual))
}

/// Dense `X ← W X − α D`; must agree with [`x_step`].
pub fn x_step_matrix(states: &mut [AgentState], w: &MixingMatrix, alpha: f64) {
    let x = stack(states, |s| &s.x);
    let d = stack(states, |s| &s.d);
    let next = w.weights() * x - d * alpha;
    for (i, s) in states.iter_mut().enumerate() {
        s.x = next.row(i).transpose();
    }
}

/// Dense `D ← W D + (G − G_old)`; must agree with [`d_step`].
pub fn d_step_matrix(
    states: &mut [AgentState],
    w: &MixingMatrix,
    g_old: &[DVector<f64>],
    round: u64,
) -> Result<f64> {
    let d = stack(states, |s| &s.d);
    let mixed = w.weights() * d;
    for (i, s) in states.iter_mut().enumerate() {
        s.d = mixed.row(i).transpose() + &s.g - &g_old[i];
    }
    check_conservation(states, round)
}

fn stack(states: &[AgentState], field: impl Fn(&AgentState) -> &DVector<f64>) -> DMatrix<f64> {
    let n = field(&states[0]).len();
    DMatrix::from_fn(states.len(), n, |i, k| field(&states[i])[k])
}

pub fn mean_of(
    states: &[AgentState],
    field: impl Fn(&AgentState) -> &DVector<f64>,
) -> DVector<f64> {
    let n = field(&states[0]).len();
    states
        .iter()
        .fold(DVector::zeros(n), |acc, s| acc + field(s))
        / states.len() as f64
}

/// `‖mean(d) − mean(g)‖`.
pub fn conservation_residual(states: &[AgentState]) -> f64 {
    (mean_of(states, |s| &s.d) - mean_of(states, |s| &s.g)).norm()
}

fn check_conservation(states: &[AgentState], round: u64) -> Result<f64> {
    let residual = conservation_residual(states);
    let scale = states.iter().map(|s| s.g.amax()).fold(1.0, f64::max);
    if residual > CONSERVATION_TOL * scale || residual.is_nan() {
        return Err(Error::Conservation { round, residual });
    }
    Ok(residual)
}

/// Global smoothness `L = N·L_V + μ·Σ L_i` and the step-size ceiling `N/L`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSizeAdvice {
    pub smoothness: f64,
    pub alpha_max: f64,
}

pub fn step_size_advisor(
    n_agents: usize,
    l_v: f64,
    l_users: &[f64],
    mu: f64,
) -> Result<StepSizeAdvice> {
    if mu.is_nan() || mu <= 1.0 {
        return Err(Error::InvalidParameter(format!(
            "mu must exceed 1, got {mu}"
        )));
    }
    if n_agents == 0 || l_users.len() != n_agents {
        return Err(Error::InvalidParameter(format!(
            "need one user smoothness bound per agent ({} for {n_agents} agents)",
            l_users.len()
        )));
    }
    if !(l_v > 0.0 && l_v.is_finite()) || l_users.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
        return Err(Error::InvalidParameter(
            "smoothness bounds must be positive and finite".into(),
        ));
    }
    let smoothness = n_agents as f64 * l_v + mu * l_users.iter().sum::<f64>();
    Ok(StepSizeAdvice {
        smoothness,
        alpha_max: n_agents as f64 / smoothness,
    })
}

pub fn advise_for(scenario: &Scenario, mu: f64) -> Result<StepSizeAdvice> {
    step_size_advisor(
        scenario.len(),
        scenario.engineering_smoothness(),
        &scenario.user_smoothness(),
        mu,
    )
}

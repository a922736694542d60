//! Per-agent recursive least squares for packed quadratic parameters.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::{packed_len, unpack, PackedParams, QuadraticFunction, RegressorVector};

/// Default initial scale of the inverse-Gram matrix, `R₀ = η·I`.
pub const DEFAULT_ETA: f64 = 1e4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlsState {
    xi_hat: PackedParams,
    r: DMatrix<f64>,
    sample_count: u64,
}

/// Current estimate of the quadratic together with the spectrum extremes of
/// its (symmetrized) curvature.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub function: QuadraticFunction,
    pub eig_min: f64,
    pub eig_max: f64,
}

impl RlsState {
    pub fn new(n: usize, eta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "eta must be positive, got {eta}"
            )));
        }
        let m = packed_len(n);
        Ok(Self {
            xi_hat: PackedParams::zeros(n),
            r: DMatrix::identity(m, m) * eta,
            sample_count: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.xi_hat.dim()
    }

    pub fn xi_hat(&self) -> &PackedParams {
        &self.xi_hat
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn sample_count(&self) -> u64 {
        self.sample_count
    }

    /// One RLS step on the sample `(χ, y)`:
    ///
    /// ```text
    /// s = Rχ / (1 + χᵀRχ)
    /// R ← R − (1 + χᵀRχ)·ssᵀ
    /// ξ̂ ← ξ̂ + (y − χᵀξ̂)·s
    /// ```
    ///
    /// `R` is re-symmetrized afterwards.
    pub fn update(&mut self, chi: &RegressorVector, y: f64) -> Result<()> {
        let chi = chi.as_vector();
        if chi.len() != self.r.nrows() {
            return Err(Error::dim(self.r.nrows(), chi.len()));
        }
        if !y.is_finite() {
            return Err(Error::NonFinite("rls measurement"));
        }
        if chi.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("rls regressor"));
        }
        let r_chi = &self.r * chi;
        let gain = 1.0 + chi.dot(&r_chi);
        let s = r_chi / gain;
        let innovation = y - chi.dot(self.xi_hat.as_vector());
        self.r.ger(-gain, &s, &s, 1.0);
        symmetrize_in_place(&mut self.r);
        self.xi_hat.as_vector_mut().axpy(innovation, &s, 1.0);
        self.sample_count += 1;
        Ok(())
    }

    /// `unpack(ξ̂)` plus eigenvalue extremes of `P̂`. No projection is applied.
    pub fn current_estimate(&self) -> Estimate {
        let function = unpack(&self.xi_hat);
        let ev = function.eigenvalues();
        Estimate {
            eig_min: ev.first().copied().unwrap_or(0.0),
            eig_max: ev.last().copied().unwrap_or(0.0),
            function,
        }
    }

    /// Positive definiteness of `R`, checked by attempting a Cholesky factorization.
    pub fn r_is_positive_definite(&self) -> bool {
        self.r.clone().cholesky().is_some()
    }
}

fn symmetrize_in_place(r: &mut DMatrix<f64>) {
    let m = r.nrows();
    for i in 0..m {
        for j in i + 1..m {
            let avg = (r[(i, j)] + r[(j, i)]) / 2.0;
            r[(i, j)] = avg;
            r[(j, i)] = avg;
        }
    }
}

/// Ridge least squares `argmin_ξ Σ (ξᵀχ_s − y_s)² + ‖ξ‖²/η` by a direct dense
/// solve of the normal equations. This is the closed form the recursion
/// reproduces exactly when started from `ξ̂ = 0`, `R = η·I`.
pub fn batch_ls_oracle(samples: &[(RegressorVector, f64)], eta: f64) -> Result<PackedParams> {
    let Some((first, _)) = samples.first() else {
        return Err(Error::InvalidParameter(
            "batch least squares needs at least one sample".into(),
        ));
    };
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "eta must be positive, got {eta}"
        )));
    }
    let m = first.as_vector().len();
    let mut gram = DMatrix::identity(m, m) / eta;
    let mut rhs = DVector::zeros(m);
    for (chi, y) in samples {
        let chi = chi.as_vector();
        if chi.len() != m {
            return Err(Error::dim(m, chi.len()));
        }
        gram.ger(1.0, chi, chi, 1.0);
        rhs.axpy(*y, chi, 1.0);
    }
    let solution = match gram.clone().cholesky() {
        Some(chol) => chol.solve(&rhs),
        None => gram
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Singular("least-squares normal matrix".into()))?,
    };
    PackedParams::new(solution)
}

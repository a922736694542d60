//! Quadratic cost functions and the lifting that makes them linear in their
//! parameters.
//!
//! A quadratic `U(x) = ½ xᵀPx + qᵀx + r` is packed into
//! `ξ = (r, q, P row 1, …, P row n)` and a decision vector into
//! `χ = (1, x, x₁·x/2, …, xₙ·x/2)`, so that `U(x) = ξᵀχ`. This is what lets a
//! scalar least-squares estimator learn `U` from function values.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Length of the packed parameter / regressor vector for ambient dimension `n`.
pub const fn packed_len(n: usize) -> usize {
    1 + n + n * n
}

/// Inverse of [`packed_len`]; `None` when `len` is not of the form `1+n+n²`.
pub fn dim_from_packed_len(len: usize) -> Option<usize> {
    (0..=len)
        .take_while(|n| packed_len(*n) <= len)
        .find(|n| packed_len(*n) == len)
}

/// `½ xᵀPx + qᵀx + r` with `P` exactly symmetric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticFunction {
    p: DMatrix<f64>,
    q: DVector<f64>,
    r: f64,
}

impl QuadraticFunction {
    /// Builds a quadratic, rejecting a `P` that is not bitwise symmetric.
    pub fn new(p: DMatrix<f64>, q: DVector<f64>, r: f64) -> Result<Self> {
        check_shapes(&p, &q)?;
        if p != p.transpose() {
            return Err(Error::InvalidParameter(
                "quadratic term P is not symmetric".into(),
            ));
        }
        Ok(Self { p, q, r })
    }

    /// Builds a quadratic from an arbitrary square `A`, using `P = (A + Aᵀ)/2`.
    pub fn symmetrized(a: DMatrix<f64>, q: DVector<f64>, r: f64) -> Result<Self> {
        check_shapes(&a, &q)?;
        Ok(Self {
            p: symmetrize(&a),
            q,
            r,
        })
    }

    pub fn zero(n: usize) -> Self {
        Self {
            p: DMatrix::zeros(n, n),
            q: DVector::zeros(n),
            r: 0.0,
        }
    }

    /// `‖x − c‖² · scale`, i.e. `P = 2·scale·I`, `q = −2·scale·c`, `r = scale·‖c‖²`.
    pub fn squared_distance(center: &DVector<f64>, scale: f64) -> Self {
        let n = center.len();
        Self {
            p: DMatrix::identity(n, n) * (2.0 * scale),
            q: center * (-2.0 * scale),
            r: scale * center.norm_squared(),
        }
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn q(&self) -> &DVector<f64> {
        &self.q
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn eval(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.eval_unchecked(x))
    }

    pub fn grad(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(x)?;
        Ok(self.grad_unchecked(x))
    }

    pub(crate) fn eval_unchecked(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.p * x)) + self.q.dot(x) + self.r
    }

    pub(crate) fn grad_unchecked(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.p * x + &self.q
    }

    /// Eigenvalues of `P` in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self
            .p
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    fn check_dim(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::dim(self.dim(), x.len()));
        }
        Ok(())
    }
}

fn check_shapes(p: &DMatrix<f64>, q: &DVector<f64>) -> Result<()> {
    if !p.is_square() {
        return Err(Error::InvalidParameter(format!(
            "quadratic term is {}x{}, expected square",
            p.nrows(),
            p.ncols()
        )));
    }
    if p.nrows() != q.len() {
        return Err(Error::dim(p.nrows(), q.len()));
    }
    Ok(())
}

pub(crate) fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    // Entry-wise so that (i,j) and (j,i) are computed by the identical expression.
    DMatrix::from_fn(n, n, |i, j| {
        let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
        (a[(lo, hi)] + a[(hi, lo)]) / 2.0
    })
}

/// Packed parameters `(r, q, rows of P)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackedParams(DVector<f64>);

impl PackedParams {
    pub fn new(xi: DVector<f64>) -> Result<Self> {
        dim_from_packed_len(xi.len()).ok_or(Error::InvalidPackedLength(xi.len()))?;
        Ok(Self(xi))
    }

    pub fn zeros(n: usize) -> Self {
        Self(DVector::zeros(packed_len(n)))
    }

    pub fn dim(&self) -> usize {
        dim_from_packed_len(self.0.len()).expect("length checked at construction")
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub(crate) fn as_vector_mut(&mut self) -> &mut DVector<f64> {
        &mut self.0
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.0
    }
}

/// Lifted decision vector `(1, x, x₁·x/2, …, xₙ·x/2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressorVector(DVector<f64>);

impl RegressorVector {
    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        dim_from_packed_len(self.0.len()).expect("built by pack_regressor")
    }

    /// The decision vector this regressor was built from.
    pub fn x(&self) -> DVector<f64> {
        let n = self.dim();
        self.0.rows(1, n).into_owned()
    }

    /// Wraps an arbitrary vector as a regressor; used for synthetic excitation
    /// and scalar test cases where no underlying `x` exists.
    pub fn from_raw(chi: DVector<f64>) -> Self {
        Self(chi)
    }
}

pub fn pack_regressor(x: &DVector<f64>) -> RegressorVector {
    let n = x.len();
    let mut chi = DVector::zeros(packed_len(n));
    chi[0] = 1.0;
    chi.rows_mut(1, n).copy_from(x);
    for j in 0..n {
        let half = x[j] / 2.0;
        for k in 0..n {
            chi[1 + n + j * n + k] = half * x[k];
        }
    }
    RegressorVector(chi)
}

pub fn pack_params(f: &QuadraticFunction) -> PackedParams {
    let n = f.dim();
    let mut xi = DVector::zeros(packed_len(n));
    xi[0] = f.r;
    xi.rows_mut(1, n).copy_from(&f.q);
    for j in 0..n {
        for k in 0..n {
            xi[1 + n + j * n + k] = f.p[(j, k)];
        }
    }
    PackedParams(xi)
}

/// Recovers `(P, q, r)` from packed parameters, symmetrizing the quadratic block.
pub fn unpack(v: &PackedParams) -> QuadraticFunction {
    let n = v.dim();
    let xi = &v.0;
    let a = DMatrix::from_fn(n, n, |j, k| xi[1 + n + j * n + k]);
    QuadraticFunction {
        p: symmetrize(&a),
        q: xi.rows(1, n).into_owned(),
        r: xi[0],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::{dmatrix, dvector};
    use proptest::prelude::*;

    fn quad(p: DMatrix<f64>, q: DVector<f64>, r: f64) -> QuadraticFunction {
        QuadraticFunction::new(p, q, r).unwrap()
    }

    #[test]
    fn eval_examples() {
        let c = quad(DMatrix::zeros(2, 2), DVector::zeros(2), 5.0);
        assert_eq!(c.eval(&dvector![3.0, -7.0]).unwrap(), 5.0);

        let f = quad(DMatrix::identity(2, 2) * 2.0, DVector::zeros(2), 0.0);
        assert_eq!(f.eval(&dvector![1.0, 1.0]).unwrap(), 2.0);

        let g = quad(dmatrix![2.0, 0.0; 0.0, 2.0], dvector![1.0, -1.0], 0.5);
        assert_abs_diff_eq!(g.eval(&dvector![1.0, 2.0]).unwrap(), 4.5, epsilon = 1e-15);
    }

    #[test]
    fn eval_rejects_wrong_dimension() {
        let f = QuadraticFunction::zero(2);
        assert!(matches!(
            f.eval(&dvector![1.0]),
            Err(Error::DimensionMismatch {
                expected: 2,
                found: 1
            })
        ));
        assert!(f.grad(&dvector![1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn grad_examples() {
        let lin = quad(DMatrix::zeros(2, 2), dvector![3.0, 4.0], 0.0);
        assert_eq!(lin.grad(&dvector![9.0, -1.0]).unwrap(), dvector![3.0, 4.0]);
        let f = quad(DMatrix::identity(2, 2) * 2.0, DVector::zeros(2), 0.0);
        assert_eq!(f.grad(&dvector![1.0, -1.0]).unwrap(), dvector![2.0, -2.0]);
    }

    #[test]
    fn asymmetric_p_rejected_or_symmetrized() {
        let a = dmatrix![1.0, 2.0; 0.0, 1.0];
        assert!(QuadraticFunction::new(a.clone(), DVector::zeros(2), 0.0).is_err());
        let f = QuadraticFunction::symmetrized(a, DVector::zeros(2), 0.0).unwrap();
        assert_eq!(f.p(), &dmatrix![1.0, 1.0; 1.0, 1.0]);
    }

    #[test]
    fn pack_regressor_examples() {
        assert_eq!(
            pack_regressor(&dvector![2.0]).as_vector(),
            &dvector![1.0, 2.0, 2.0]
        );
        assert_eq!(
            pack_regressor(&dvector![0.0, 0.0]).as_vector(),
            &dvector![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
        );
        assert_eq!(
            pack_regressor(&dvector![1.0, 2.0]).as_vector(),
            &dvector![1.0, 1.0, 2.0, 0.5, 1.0, 1.0, 2.0]
        );
    }

    #[test]
    fn pack_params_layout() {
        let f = quad(dmatrix![2.0], dvector![3.0], 4.0);
        assert_eq!(pack_params(&f).as_vector(), &dvector![4.0, 3.0, 2.0]);
        assert_eq!(
            pack_params(&QuadraticFunction::zero(3)).as_vector(),
            &DVector::zeros(13)
        );
    }

    #[test]
    fn unpack_examples() {
        let v = PackedParams::new(dvector![4.0, 3.0, 2.0]).unwrap();
        assert_eq!(unpack(&v), quad(dmatrix![2.0], dvector![3.0], 4.0));

        // A = [[0,2],[0,0]] in row-major order.
        let v = PackedParams::new(dvector![0.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0]).unwrap();
        assert_eq!(unpack(&v).p(), &dmatrix![0.0, 1.0; 1.0, 0.0]);
    }

    #[test]
    fn unpack_rejects_bad_length() {
        for len in [0usize, 2, 4, 5, 6, 8, 12, 14] {
            assert!(matches!(
                PackedParams::new(DVector::zeros(len)),
                Err(Error::InvalidPackedLength(l)) if l == len
            ));
        }
        for n in 0..6 {
            assert_eq!(dim_from_packed_len(packed_len(n)), Some(n));
        }
    }

    fn arb_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-3.0..3.0f64, n)
    }

    fn arb_quad() -> impl Strategy<Value = QuadraticFunction> {
        (1usize..5).prop_flat_map(|n| {
            (arb_vec(n * n), arb_vec(n), -3.0..3.0f64).prop_map(move |(a, q, r)| {
                QuadraticFunction::symmetrized(
                    DMatrix::from_row_slice(n, n, &a),
                    DVector::from_vec(q),
                    r,
                )
                .unwrap()
            })
        })
    }

    fn arb_quad_and_point() -> impl Strategy<Value = (QuadraticFunction, DVector<f64>)> {
        arb_quad().prop_flat_map(|f| {
            let n = f.dim();
            (Just(f), arb_vec(n).prop_map(DVector::from_vec))
        })
    }

    proptest! {
        #[test]
        fn lifted_inner_product_is_eval((f, x) in arb_quad_and_point()) {
            let lifted = pack_params(&f).as_vector().dot(pack_regressor(&x).as_vector());
            let direct = f.eval(&x).unwrap();
            let scale = 1.0 + direct.abs();
            prop_assert!((lifted - direct).abs() <= 1e-12 * scale * 10.0,
                "lifted {lifted} vs direct {direct}");
        }

        #[test]
        fn gradient_matches_central_differences((f, x) in arb_quad_and_point()) {
            let g = f.grad(&x).unwrap();
            let h = 1e-5;
            for j in 0..x.len() {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += h;
                xm[j] -= h;
                let fd = (f.eval(&xp).unwrap() - f.eval(&xm).unwrap()) / (2.0 * h);
                prop_assert!((g[j] - fd).abs() <= 1e-6, "coord {j}: {} vs {fd}", g[j]);
            }
        }

        #[test]
        fn unpack_inverts_pack(f in arb_quad()) {
            prop_assert_eq!(unpack(&pack_params(&f)), f);
        }

        #[test]
        fn unpack_is_exactly_symmetric(raw in (1usize..5).prop_flat_map(|n| arb_vec(packed_len(n)))) {
            let f = unpack(&PackedParams::new(DVector::from_vec(raw)).unwrap());
            prop_assert_eq!(f.p(), &f.p().transpose());
        }

        #[test]
        fn regressor_recovers_x(x in (1usize..5).prop_flat_map(arb_vec)) {
            let x = DVector::from_vec(x);
            let chi = pack_regressor(&x);
            prop_assert_eq!(chi.as_vector()[0], 1.0);
            prop_assert_eq!(&pack_regressor(&chi.x()), &chi);
        }
    }
}

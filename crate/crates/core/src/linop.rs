//! Symmetric linear operators over `R^n`.
//!
//! Every solver in the crate touches the quadratic term only through
//! [`SymOp::apply`], so dense, diagonal, spectral low-rank and callback
//! representations are interchangeable.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dim, Error, Result};

/// Orthonormality tolerance for spectral factors.
pub const ORTHONORMAL_TOL: f64 = 1e-10;

const POWER_ITERATIONS: usize = 20;

/// Matrix-free apply function.
pub type ApplyFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;

/// Storage behind a [`SymOp`].
#[derive(Clone)]
pub enum OpRepr {
    Dense(DMatrix<f64>),
    Diagonal(DVector<f64>),
    /// `U diag(d) U^T + shift * I` with orthonormal `U` (n x r).
    EigLowRank {
        u: DMatrix<f64>,
        d: DVector<f64>,
        shift: f64,
    },
    Callback(ApplyFn),
}

/// An immutable symmetric operator of fixed dimension.
#[derive(Clone)]
pub struct SymOp {
    dim: usize,
    repr: OpRepr,
}

impl fmt::Debug for SymOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.repr {
            OpRepr::Dense(_) => "dense",
            OpRepr::Diagonal(_) => "diagonal",
            OpRepr::EigLowRank { .. } => "eiglowrank",
            OpRepr::Callback(_) => "callback",
        };
        f.debug_struct("SymOp")
            .field("dim", &self.dim)
            .field("kind", &kind)
            .finish()
    }
}

/// Spectral norm deviation `|U^T U - I|_F`.
pub fn orthonormality_defect(u: &DMatrix<f64>) -> f64 {
    let gram = u.transpose() * u;
    (gram - DMatrix::identity(u.ncols(), u.ncols())).norm()
}

impl SymOp {
    /// Dense operator; the input is symmetrized as `(X + X^T) / 2`.
    pub fn dense(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::InvalidArgument(format!(
                "dense operator must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.nrows() == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        let sym = (&m + m.transpose()) * 0.5;
        Ok(Self {
            dim: m.nrows(),
            repr: OpRepr::Dense(sym),
        })
    }

    pub fn diagonal(d: DVector<f64>) -> Result<Self> {
        if d.is_empty() {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        Ok(Self {
            dim: d.len(),
            repr: OpRepr::Diagonal(d),
        })
    }

    /// `U diag(d) U^T + shift * I`; `U` must have orthonormal columns.
    pub fn eig_low_rank(u: DMatrix<f64>, d: DVector<f64>, shift: f64) -> Result<Self> {
        if u.nrows() == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        check_dim(u.ncols(), d.len())?;
        let deviation = orthonormality_defect(&u);
        if deviation > ORTHONORMAL_TOL {
            return Err(Error::NotOrthonormal { deviation });
        }
        Ok(Self {
            dim: u.nrows(),
            repr: OpRepr::EigLowRank { u, d, shift },
        })
    }

    /// Opaque operator. The caller guarantees symmetry and linearity.
    pub fn callback<F>(dim: usize, f: F) -> Result<Self>
    where
        F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        if dim == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        Ok(Self {
            dim,
            repr: OpRepr::Callback(Arc::new(f)),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn repr(&self) -> &OpRepr {
        &self.repr
    }

    pub fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim, v.len())?;
        let out = self.apply_unchecked(v);
        check_dim(self.dim, out.len())?;
        Ok(out)
    }

    pub(crate) fn apply_unchecked(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.repr {
            OpRepr::Dense(m) => m * v,
            OpRepr::Diagonal(d) => d.component_mul(v),
            OpRepr::EigLowRank { u, d, shift } => {
                let coeff = (u.transpose() * v).component_mul(d);
                u * coeff + v * *shift
            }
            OpRepr::Callback(f) => f(v),
        }
    }

    /// `v^T A v` with a single apply.
    pub fn quadratic_form(&self, v: &DVector<f64>) -> Result<f64> {
        Ok(v.dot(&self.apply(v)?))
    }

    /// Estimate of the spectral norm.
    ///
    /// Exact for diagonal and spectral forms; dense and callback operators use
    /// 20 power-iteration steps from a fixed start vector.
    pub fn norm_estimate(&self) -> f64 {
        match &self.repr {
            OpRepr::Diagonal(d) => d.amax(),
            OpRepr::EigLowRank { u, d, shift } => {
                let top = d.iter().map(|&di| (di + shift).abs()).fold(0.0, f64::max);
                if u.ncols() < self.dim {
                    top.max(shift.abs())
                } else {
                    top
                }
            }
            OpRepr::Dense(_) | OpRepr::Callback(_) => self.power_norm(),
        }
    }

    fn power_norm(&self) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0f_a11);
        let mut v = DVector::from_fn(self.dim, |_, _| StandardNormal.sample(&mut rng));
        v.normalize_mut();
        let mut estimate = 0.0;
        for _ in 0..POWER_ITERATIONS {
            let w = self.apply_unchecked(&v);
            let nw = w.norm();
            if nw == 0.0 {
                return estimate;
            }
            estimate = nw;
            v = w / nw;
        }
        estimate
    }

    /// Materialize as a dense matrix (one apply per column for callbacks).
    pub fn to_dense(&self) -> DMatrix<f64> {
        match &self.repr {
            OpRepr::Dense(m) => m.clone(),
            OpRepr::Diagonal(d) => DMatrix::from_diagonal(d),
            OpRepr::EigLowRank { u, d, shift } => {
                let mut m = u * DMatrix::from_diagonal(d) * u.transpose();
                for i in 0..self.dim {
                    m[(i, i)] += shift;
                }
                m
            }
            OpRepr::Callback(_) => {
                let mut m = DMatrix::zeros(self.dim, self.dim);
                for j in 0..self.dim {
                    let e = DVector::from_fn(self.dim, |i, _| if i == j { 1.0 } else { 0.0 });
                    m.set_column(j, &self.apply_unchecked(&e));
                }
                (&m + m.transpose()) * 0.5
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn vec(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn diagonal_apply_scales() {
        let op = SymOp::diagonal(vec(&[1.0, 3.0])).unwrap();
        assert_eq!(op.apply(&vec(&[1.0, 1.0])).unwrap(), vec(&[1.0, 3.0]));
        assert_eq!(op.apply(&vec(&[0.0, 0.0])).unwrap(), vec(&[0.0, 0.0]));
    }

    #[test]
    fn eig_low_rank_hand_example() {
        let u = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let op = SymOp::eig_low_rank(u, vec(&[2.0]), 1.0).unwrap();
        assert_eq!(op.apply(&vec(&[1.0, 1.0])).unwrap(), vec(&[3.0, 1.0]));
    }

    #[test]
    fn quadratic_forms() {
        let d = SymOp::diagonal(vec(&[1.0, 3.0])).unwrap();
        assert_eq!(d.quadratic_form(&vec(&[1.0, 0.0])).unwrap(), 1.0);
        assert_eq!(d.quadratic_form(&vec(&[1.0, 1.0])).unwrap(), 4.0);
        let swap = SymOp::dense(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap();
        assert_eq!(swap.quadratic_form(&vec(&[1.0, 1.0])).unwrap(), 2.0);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let op = SymOp::diagonal(vec(&[1.0, 3.0])).unwrap();
        assert!(matches!(
            op.apply(&vec(&[1.0])),
            Err(Error::DimensionMismatch { expected: 2, found: 1 })
        ));
        assert!(op.quadratic_form(&vec(&[1.0, 2.0, 3.0])).is_err());
    }

    #[test]
    fn dense_is_symmetrized() {
        let op = SymOp::dense(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0])).unwrap();
        let m = op.to_dense();
        assert_eq!(m[(0, 1)], 1.0);
        assert_eq!(m[(1, 0)], 1.0);
    }

    #[test]
    fn non_orthonormal_factor_rejected() {
        let u = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        assert!(matches!(
            SymOp::eig_low_rank(u, vec(&[1.0]), 0.0),
            Err(Error::NotOrthonormal { .. })
        ));
    }

    #[test]
    fn norm_estimates() {
        let d = SymOp::diagonal(vec(&[1.0, -7.0, 3.0])).unwrap();
        assert_eq!(d.norm_estimate(), 7.0);
        let dense = SymOp::dense(DMatrix::from_diagonal(&vec(&[1.0, -7.0, 3.0]))).unwrap();
        assert_relative_eq!(dense.norm_estimate(), 7.0, max_relative = 1e-6);
        let cb = SymOp::callback(3, |v| v * 2.0).unwrap();
        assert_relative_eq!(cb.norm_estimate(), 2.0, max_relative = 1e-12);
    }

    fn orthonormal(n: usize, r: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = DMatrix::from_fn(n, r, |_, _| StandardNormal.sample(&mut rng));
        g.qr().q()
    }

    proptest! {
        #[test]
        fn dense_apply_is_symmetric_and_linear(seed in 0u64..1000, n in 1usize..20) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut sample = || -> f64 { StandardNormal.sample(&mut rng) };
            let m = DMatrix::from_fn(n, n, |_, _| sample());
            let op = SymOp::dense(m).unwrap();
            let v = DVector::from_fn(n, |_, _| sample());
            let w = DVector::from_fn(n, |_, _| sample());
            let lhs = v.dot(&op.apply(&w).unwrap());
            let rhs = w.dot(&op.apply(&v).unwrap());
            let scale = 1e-10 * v.norm() * w.norm() * op.norm_estimate().max(1.0);
            prop_assert!((lhs - rhs).abs() <= scale);

            let (alpha, beta) = (sample(), sample());
            let combo = op.apply(&(&v * alpha + &w * beta)).unwrap();
            let split = op.apply(&v).unwrap() * alpha + op.apply(&w).unwrap() * beta;
            prop_assert!((combo - split).norm() <= 1e-10 * (1.0 + alpha.abs() + beta.abs()) * scale.max(1.0));
        }

        #[test]
        fn eig_low_rank_matches_materialized(seed in 0u64..1000, n in 2usize..50, shift in -3.0f64..3.0) {
            let r = 1 + (seed as usize) % (n - 1);
            let u = orthonormal(n, r, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
            let d = DVector::from_fn(r, |_, _| StandardNormal.sample(&mut rng));
            let op = SymOp::eig_low_rank(u.clone(), d.clone(), shift).unwrap();
            let dense = &u * DMatrix::from_diagonal(&d) * u.transpose() + DMatrix::identity(n, n) * shift;
            let v = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
            let diff = (op.apply(&v).unwrap() - &dense * &v).norm();
            prop_assert!(diff <= 1e-12 * (1.0 + v.norm()) * 10.0);
            prop_assert!((op.to_dense() - dense).norm() <= 1e-12 * n as f64);
        }
    }
}

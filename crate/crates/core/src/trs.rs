//! The ball-constrained problem `min q(x)` s.t. `‖x‖ <= 1`, solved through
//! the boundary problem.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::btrs::BtrsProblem;
use crate::eigmin::min_eigpair_default;
use crate::error::Result;
use crate::linop::{OpRepr, SymOp};
use crate::solvers::{double_start, naive_rgd, SolveStatus, SolverConfig};

/// `λ_min(A)` at or above `-PSD_TOL` counts as positive semidefinite.
pub const PSD_TOL: f64 = 1e-10;

const CG_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrsStrategy {
    /// Always embed into an `(n+1)`-dimensional boundary problem.
    AlwaysAugment,
    /// Interior Newton point when `A` is positive definite and
    /// `‖A^{-1}b‖ < 1`, otherwise the boundary problem directly.
    Decide,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrsRoute {
    Interior,
    AugmentedBtrs,
    DirectBtrs,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrsResult {
    pub x: Vec<f64>,
    pub q: f64,
    pub route: TrsRoute,
    pub status: SolveStatus,
    pub iterations: usize,
}

impl TrsResult {
    pub fn vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.x)
    }
}

/// `Â = blockdiag(0, A)`, `b̂ = (0; b)`.
pub fn augment(p: &BtrsProblem) -> Result<BtrsProblem> {
    let n = p.dim();
    let a = match p.a().repr() {
        OpRepr::Dense(m) => {
            let mut big = DMatrix::zeros(n + 1, n + 1);
            big.view_mut((1, 1), (n, n)).copy_from(m);
            SymOp::dense(big)?
        }
        OpRepr::Diagonal(d) => {
            let mut big = DVector::zeros(n + 1);
            big.rows_mut(1, n).copy_from(d);
            SymOp::diagonal(big)?
        }
        _ => {
            let inner = p.a().clone();
            SymOp::callback(n + 1, move |v: &DVector<f64>| {
                let tail = v.rows(1, n).into_owned();
                let mut out = DVector::zeros(n + 1);
                out.rows_mut(1, n).copy_from(&inner.apply_unchecked(&tail));
                out
            })?
        }
    };
    let mut b = DVector::zeros(n + 1);
    b.rows_mut(1, n).copy_from(p.b());
    BtrsProblem::new(a, b)
}

/// `(1; -b) / sqrt(‖b‖² + 1)`, which lies in `S_E ∩ S_H` of the augmented
/// problem when `A` is positive semidefinite.
pub fn psd_init(p: &BtrsProblem) -> DVector<f64> {
    let n = p.dim();
    let scale = 1.0 / (p.b_norm() * p.b_norm() + 1.0).sqrt();
    let mut x = DVector::zeros(n + 1);
    x[0] = scale;
    x.rows_mut(1, n).copy_from(&(-p.b() * scale));
    x
}

fn trs_objective(p: &BtrsProblem, x: &DVector<f64>) -> Result<f64> {
    Ok(0.5 * p.a().quadratic_form(x)? + p.b().dot(x))
}

/// Conjugate gradients for `A x = rhs` with `A` positive definite.
fn conjugate_gradient(a: &SymOp, rhs: &DVector<f64>, tol: f64, max_iter: usize) -> Option<DVector<f64>> {
    let mut x = DVector::zeros(rhs.len());
    let mut r = rhs.clone();
    let target = tol * rhs.norm();
    let mut rr = r.norm_squared();
    if rr.sqrt() <= target {
        return Some(x);
    }
    let mut d = r.clone();
    for _ in 0..max_iter {
        let ad = a.apply_unchecked(&d);
        let dad = d.dot(&ad);
        if !(dad > 0.0) {
            return None;
        }
        let alpha = rr / dad;
        x.axpy(alpha, &d, 1.0);
        r.axpy(-alpha, &ad, 1.0);
        let rr_next = r.norm_squared();
        if rr_next.sqrt() <= target {
            return Some(x);
        }
        d = &r + &d * (rr_next / rr);
        rr = rr_next;
    }
    None
}

fn augmented(p: &BtrsProblem, cfg: &SolverConfig, lambda_min: f64) -> Result<TrsResult> {
    let aug = augment(p)?;
    let r = if lambda_min >= -PSD_TOL {
        naive_rgd(&aug, &psd_init(p), cfg)?
    } else {
        double_start(&aug, cfg)?
    };
    let x = r.x.rows(1, p.dim()).into_owned();
    Ok(TrsResult {
        q: trs_objective(p, &x)?,
        x: x.as_slice().to_vec(),
        route: TrsRoute::AugmentedBtrs,
        status: r.status,
        iterations: r.iterations,
    })
}

pub fn solve_trs(p: &BtrsProblem, cfg: &SolverConfig, strategy: TrsStrategy) -> Result<TrsResult> {
    cfg.validate()?;
    let lambda_min = min_eigpair_default(p.a(), cfg.rng_seed)?.lambda_min;
    match strategy {
        TrsStrategy::AlwaysAugment => augmented(p, cfg, lambda_min),
        TrsStrategy::Decide => {
            if lambda_min > PSD_TOL * p.a().norm_estimate().max(1.0) {
                let Some(x) = conjugate_gradient(p.a(), &-p.b(), CG_TOL, 10 * p.dim()) else {
                    return augmented(p, cfg, lambda_min);
                };
                if x.norm() < 1.0 {
                    return Ok(TrsResult {
                        q: trs_objective(p, &x)?,
                        x: x.as_slice().to_vec(),
                        route: TrsRoute::Interior,
                        status: SolveStatus::Converged,
                        iterations: 0,
                    });
                }
            }
            let r = double_start(p, cfg)?;
            Ok(TrsResult {
                q: r.q,
                x: r.x.as_slice().to_vec(),
                route: TrsRoute::DirectBtrs,
                status: r.status,
                iterations: r.iterations,
            })
        }
    }
}

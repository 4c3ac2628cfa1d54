//! The boundary trust region subproblem `min q(x) = ½ xᵀAx + bᵀx` over the
//! unit sphere, with the affine-eigenvalue quantities used throughout.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::eigmin::MinEigResult;
use crate::error::{check_dim, Error, Result};
use crate::linop::SymOp;

/// Default relative threshold separating easy from hard instances.
pub const EPS_HARD: f64 = 1e-10;

const UNIT_ASSERT_TOL: f64 = 1e-8;
const UNIT_WARN_TOL: f64 = 1e-12;

/// Immutable `(A, b)` pair.
#[derive(Clone, Debug)]
pub struct BtrsProblem {
    a: SymOp,
    b: DVector<f64>,
    b_norm: f64,
}

/// Values of the objective at one point, computed from a single apply.
#[derive(Clone, Debug)]
pub struct PointEval {
    pub ax: DVector<f64>,
    /// `xᵀAx`
    pub xax: f64,
    /// `bᵀx`
    pub bx: f64,
    /// Affine Rayleigh quotient `xᵀAx + bᵀx`.
    pub mu: f64,
    pub q: f64,
}

/// A solution `(mu, x)` of `Ax + b = mu x` with unit `x`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AffineEigenpair {
    pub mu: f64,
    pub x: Vec<f64>,
    pub residual_norm: f64,
}

impl AffineEigenpair {
    /// Builds a pair and records `|mu x - Ax - b|`.
    pub fn new(p: &BtrsProblem, mu: f64, x: DVector<f64>) -> Result<Self> {
        let residual_norm = p.residual(&x, mu)?.norm();
        Ok(Self {
            mu,
            x: x.as_slice().to_vec(),
            residual_norm,
        })
    }

    pub fn vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CaseKind {
    Easy,
    Hard,
}

/// Easy/hard classification together with the minimal eigenvector used.
#[derive(Clone, Debug)]
pub struct CaseInfo {
    pub kind: CaseKind,
    pub lambda_min: f64,
    /// Unit vector of the computed minimal eigenspace maximizing `|uᵀb|`.
    pub u: DVector<f64>,
    pub alpha: f64,
}

fn check_unit(x: &DVector<f64>) {
    let dev = (x.norm() - 1.0).abs();
    debug_assert!(dev <= UNIT_ASSERT_TOL, "point is off the sphere by {dev:e}");
    if dev > UNIT_WARN_TOL {
        log::warn!("point is off the unit sphere by {dev:e}");
    }
}

impl BtrsProblem {
    pub fn new(a: SymOp, b: DVector<f64>) -> Result<Self> {
        check_dim(a.dim(), b.len())?;
        let b_norm = b.norm();
        Ok(Self { a, b, b_norm })
    }

    pub fn a(&self) -> &SymOp {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn b_norm(&self) -> f64 {
        self.b_norm
    }

    pub fn dim(&self) -> usize {
        self.a.dim()
    }

    /// Objective, Rayleigh quotient and `Ax` at `x`.
    pub fn evaluate(&self, x: &DVector<f64>) -> Result<PointEval> {
        let ax = self.a.apply(x)?;
        Ok(self.evaluate_with(x, ax))
    }

    pub(crate) fn evaluate_with(&self, x: &DVector<f64>, ax: DVector<f64>) -> PointEval {
        let xax = x.dot(&ax);
        let bx = self.b.dot(x);
        PointEval {
            ax,
            xax,
            bx,
            mu: xax + bx,
            q: 0.5 * xax + bx,
        }
    }

    pub fn objective(&self, x: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        check_unit(x);
        Ok(0.5 * self.a.quadratic_form(x)? + self.b.dot(x))
    }

    /// `mu_x = xᵀAx + bᵀx`, the least-squares affine eigenvalue for `x`.
    pub fn affine_rayleigh(&self, x: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        check_unit(x);
        Ok(self.a.quadratic_form(x)? + self.b.dot(x))
    }

    /// `mu x - Ax - b`.
    pub fn residual(&self, x: &DVector<f64>, mu: f64) -> Result<DVector<f64>> {
        let ax = self.a.apply(x)?;
        Ok(x * mu - ax - &self.b)
    }

    /// Membership in `S_E`: `(vᵀb)(vᵀx) <= tol` for every supplied minimal
    /// eigenvector `v`.
    pub fn in_se(&self, x: &DVector<f64>, min_eigvecs: &[DVector<f64>], tol: f64) -> Result<bool> {
        if min_eigvecs.is_empty() {
            return Err(Error::EmptyEigenBasis);
        }
        check_dim(self.dim(), x.len())?;
        for v in min_eigvecs {
            check_dim(self.dim(), v.len())?;
            if v.dot(&self.b) * v.dot(x) > tol {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Easy/hard classification from a computed minimal eigenspace.
    ///
    /// `b` is projected onto the full returned basis, so an eigenspace of
    /// multiplicity > 1 is handled even if a single basis vector is ⟂ b.
    pub fn classify(&self, eig: &MinEigResult, eps_hard: f64) -> Result<CaseInfo> {
        let first = eig.basis.first().ok_or(Error::EmptyEigenBasis)?;
        let tol = eig.tol_eig * eig.lambda_min.abs().max(1.0);
        let mut coeffs = Vec::with_capacity(eig.basis.len());
        for v in &eig.basis {
            check_dim(self.dim(), v.len())?;
            let residual = (self.a.apply(v)? - v * eig.lambda_min).norm();
            if residual > tol {
                return Err(Error::UnreliableEigenpair { residual, tol });
            }
            coeffs.push(v.dot(&self.b));
        }
        let alpha = coeffs.iter().map(|c| c * c).sum::<f64>().sqrt();
        let u = if alpha > 0.0 {
            let mut u = DVector::zeros(self.dim());
            for (v, c) in eig.basis.iter().zip(&coeffs) {
                u.axpy(*c / alpha, v, 1.0);
            }
            u.normalize()
        } else {
            first.clone()
        };
        let kind = if alpha > eps_hard * self.b_norm.max(1.0) {
            CaseKind::Easy
        } else {
            CaseKind::Hard
        };
        Ok(CaseInfo {
            kind,
            lambda_min: eig.lambda_min,
            u,
            alpha,
        })
    }
}

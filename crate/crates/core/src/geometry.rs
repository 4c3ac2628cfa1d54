//! The unit sphere under a variable metric `g_x(η, ξ) = ηᵀ M_x ξ`, in ambient
//! coordinates.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::btrs::BtrsProblem;
use crate::error::{check_dim, Error, Result};
use crate::precond::{PhiFilter, Preconditioner};

/// Relative tolerance for deciding that two base points coincide.
const BASE_POINT_TOL: f64 = 1e-12;

/// The map `x ↦ M_x`.
#[derive(Clone, Debug)]
pub enum MetricScheme {
    /// `M_x = I`.
    Standard,
    /// `M_x = M + φ(-μ_x) I`.
    Seeded { seed: Preconditioner, phi: PhiFilter },
}

impl MetricScheme {
    /// Seeded scheme with the default filter for `p`.
    pub fn seeded(seed: Preconditioner, p: &BtrsProblem) -> Self {
        let phi = PhiFilter::for_seed(&seed, p);
        Self::Seeded { seed, phi }
    }

    pub fn is_standard(&self) -> bool {
        matches!(self, Self::Standard)
    }

    /// The metric at `x`, whose affine Rayleigh quotient is `mu`.
    pub fn at_mu(&self, x: &DVector<f64>, mu: f64) -> Result<MetricAt<'_>> {
        match self {
            Self::Standard => Ok(MetricAt {
                seeded: None,
                shift: 0.0,
                minv_x: x.clone(),
                x_minv_x: x.norm_squared(),
            }),
            Self::Seeded { seed, phi } => {
                let shift = phi.phi(-mu);
                let minv_x = seed.solve(shift, x)?;
                let x_minv_x = x.dot(&minv_x);
                Ok(MetricAt {
                    seeded: Some(seed),
                    shift,
                    minv_x,
                    x_minv_x,
                })
            }
        }
    }

    pub fn at(&self, p: &BtrsProblem, x: &DVector<f64>) -> Result<MetricAt<'_>> {
        let mu = p.affine_rayleigh(x)?;
        self.at_mu(x, mu)
    }
}

/// `M_x` frozen at one point with `M_x^{-1} x` cached for projections.
#[derive(Clone, Debug)]
pub struct MetricAt<'a> {
    seeded: Option<&'a Preconditioner>,
    shift: f64,
    minv_x: DVector<f64>,
    x_minv_x: f64,
}

impl MetricAt<'_> {
    /// Shift `φ(-μ_x)` applied to the seed (0 for the standard metric).
    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        match self.seeded {
            None => v.clone(),
            Some(seed) => seed.apply(self.shift, v),
        }
    }

    pub fn solve(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        match self.seeded {
            None => Ok(v.clone()),
            Some(seed) => seed.solve(self.shift, v),
        }
    }

    pub fn inner(&self, eta: &DVector<f64>, xi: &DVector<f64>) -> f64 {
        match self.seeded {
            None => eta.dot(xi),
            Some(_) => eta.dot(&self.apply(xi)),
        }
    }

    /// `P_x v = v - (xᵀv / xᵀM_x^{-1}x) M_x^{-1} x`, which is `g`-orthogonal
    /// onto `{z : zᵀx = 0}`.
    pub fn project(&self, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let c = x.dot(v) / self.x_minv_x;
        let mut out = v.clone();
        out.axpy(-c, &self.minv_x, 1.0);
        out
    }

    /// `P_x M_x^{-1} e` for a Euclidean gradient `e`.
    pub fn riemannian_gradient(&self, x: &DVector<f64>, egrad: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.project(x, &self.solve(egrad)?))
    }
}

/// A direction in the tangent space at `at`.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentVector {
    pub at: DVector<f64>,
    pub dir: DVector<f64>,
}

impl TangentVector {
    pub fn zero(at: &DVector<f64>) -> Self {
        Self {
            at: at.clone(),
            dir: DVector::zeros(at.len()),
        }
    }
}

fn same_point(x: &DVector<f64>, y: &DVector<f64>) -> Result<()> {
    check_dim(x.len(), y.len())?;
    if (x - y).norm() <= BASE_POINT_TOL * x.norm().max(1.0) {
        Ok(())
    } else {
        Err(Error::BasePointMismatch)
    }
}

pub fn metric_inner(
    m: &MetricScheme,
    p: &BtrsProblem,
    x: &DVector<f64>,
    eta: &TangentVector,
    xi: &TangentVector,
) -> Result<f64> {
    same_point(x, &eta.at)?;
    same_point(x, &xi.at)?;
    check_dim(x.len(), eta.dir.len())?;
    check_dim(x.len(), xi.dir.len())?;
    Ok(m.at(p, x)?.inner(&eta.dir, &xi.dir))
}

pub fn project_tangent(m: &MetricScheme, p: &BtrsProblem, x: &DVector<f64>, v: &DVector<f64>) -> Result<TangentVector> {
    check_dim(x.len(), v.len())?;
    let dir = m.at(p, x)?.project(x, v);
    Ok(TangentVector { at: x.clone(), dir })
}

/// `R_x(η) = (x + η) / ‖x + η‖`.
pub fn retract(x: &DVector<f64>, eta: &TangentVector) -> Result<DVector<f64>> {
    same_point(x, &eta.at)?;
    check_dim(x.len(), eta.dir.len())?;
    Ok(retract_dir(x, &eta.dir, 1.0))
}

pub(crate) fn retract_dir(x: &DVector<f64>, d: &DVector<f64>, t: f64) -> DVector<f64> {
    let mut y = x.clone();
    y.axpy(t, d, 1.0);
    let nrm = y.norm();
    y / nrm
}

pub fn rgrad(m: &MetricScheme, p: &BtrsProblem, x: &DVector<f64>) -> Result<TangentVector> {
    let ev = p.evaluate(x)?;
    let egrad = ev.ax + p.b();
    let dir = m.at_mu(x, ev.mu)?.riemannian_gradient(x, &egrad)?;
    Ok(TangentVector { at: x.clone(), dir })
}

/// Projection transport `P_{R_x(η)} ξ`.
pub fn transport(m: &MetricScheme, p: &BtrsProblem, eta: &TangentVector, xi: &TangentVector) -> Result<TangentVector> {
    same_point(&eta.at, &xi.at)?;
    let y = retract(&eta.at, eta)?;
    project_tangent(m, p, &y, &xi.dir)
}

/// `P_x̄ M_x̄^{-1} (A - μ I) η`, valid at a stationary point `x̄` with affine
/// eigenvalue `mu`.
pub fn hess_apply_stationary(
    m: &MetricScheme,
    p: &BtrsProblem,
    xbar: &DVector<f64>,
    mu: f64,
    eta: &TangentVector,
) -> Result<TangentVector> {
    same_point(xbar, &eta.at)?;
    check_dim(xbar.len(), eta.dir.len())?;
    let metric = m.at_mu(xbar, mu)?;
    let mut v = p.a().apply(&eta.dir)?;
    v.axpy(-mu, &eta.dir, 1.0);
    let dir = metric.riemannian_gradient(xbar, &v)?;
    Ok(TangentVector { at: xbar.clone(), dir })
}

/// Orthonormal basis (columns) of the tangent space at unit `x`, taken from
/// the Householder reflector that maps `e₁` to `±x`.
pub fn tangent_basis(x: &DVector<f64>) -> DMatrix<f64> {
    let n = x.len();
    let sign = if x[0] >= 0.0 { 1.0 } else { -1.0 };
    let mut w = x.clone();
    w[0] += sign * x.norm();
    let ww = w.norm_squared();
    let mut h = DMatrix::identity(n, n);
    if ww > 0.0 {
        h -= (&w * w.transpose()) * (2.0 / ww);
    }
    h.columns(1, n - 1).into_owned()
}

/// Eigenvalues, in ascending order, of the Riemannian Hessian at a stationary
/// point, computed densely in the tangent space.
///
/// With a Euclidean orthonormal tangent basis `B`, the operator is
/// self-adjoint for `G = BᵀM_x̄B` and its eigenvalues solve
/// `Bᵀ(A - μI)B v = λ G v`.
pub fn hessian_spectrum(m: &MetricScheme, p: &BtrsProblem, xbar: &DVector<f64>, mu: f64) -> Result<DVector<f64>> {
    let n = p.dim();
    check_dim(n, xbar.len())?;
    if n < 2 {
        return Ok(DVector::zeros(0));
    }
    let basis = tangent_basis(xbar);
    let metric = m.at_mu(xbar, mu)?;
    let k = n - 1;
    let mut mb = DMatrix::zeros(n, k);
    let mut ab = DMatrix::zeros(n, k);
    for j in 0..k {
        let c = basis.column(j).into_owned();
        mb.set_column(j, &metric.apply(&c));
        let mut ac = p.a().apply(&c)?;
        ac.axpy(-mu, &c, 1.0);
        ab.set_column(j, &ac);
    }
    let g = basis.transpose() * mb;
    let g = (&g + g.transpose()) * 0.5;
    let kmat = basis.transpose() * ab;
    let kmat = (&kmat + kmat.transpose()) * 0.5;
    let chol = g.cholesky().ok_or(Error::NotPositiveDefinite {
        shift: metric.shift(),
        bound: f64::NAN,
    })?;
    let l = chol.l();
    let linv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidArgument("singular metric Gram matrix".into()))?;
    let whitened = &linv * kmat * linv.transpose();
    let whitened = (&whitened + whitened.transpose()) * 0.5;
    let mut values: Vec<f64> = SymmetricEigen::new(whitened).eigenvalues.iter().copied().collect();
    values.sort_by(f64::total_cmp);
    Ok(DVector::from_vec(values))
}

/// Uniformly distributed point on the unit sphere.
pub fn haar_point<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let v = DVector::<f64>::from_fn(n, |_, _| StandardNormal.sample(&mut *rng));
        let nrm = v.norm();
        if nrm > 0.0 {
            return v / nrm;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linop::SymOp;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vec(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    fn diag_problem(d: &[f64], b: &[f64]) -> BtrsProblem {
        BtrsProblem::new(SymOp::diagonal(vec(d)).unwrap(), vec(b)).unwrap()
    }

    /// Seeded scheme whose filter is constant (`M_x = M + c I`) to within
    /// roundoff over the range of affine Rayleigh quotients used in tests.
    fn constant_shift(seed: Preconditioner, c: f64) -> MetricScheme {
        MetricScheme::Seeded {
            seed,
            phi: PhiFilter::new(c, 1e-12).unwrap(),
        }
    }

    #[test]
    fn standard_inner_is_dot() {
        let p = diag_problem(&[1.0, 3.0], &[1.0, 1.0]);
        let x = vec(&[1.0, 0.0]);
        let eta = TangentVector { at: x.clone(), dir: vec(&[0.0, 2.0]) };
        let xi = TangentVector { at: x.clone(), dir: vec(&[0.0, -1.5]) };
        assert_eq!(metric_inner(&MetricScheme::Standard, &p, &x, &eta, &xi).unwrap(), -3.0);
    }

    #[test]
    fn seeded_inner_with_twice_identity() {
        let p = diag_problem(&[1.0, 3.0], &[0.0, 0.0]);
        let m = constant_shift(Preconditioner::identity(), 1.0);
        let x = vec(&[1.0, 0.0]);
        let eta = TangentVector { at: x.clone(), dir: vec(&[0.0, 1.0]) };
        assert_relative_eq!(metric_inner(&m, &p, &x, &eta, &eta).unwrap(), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn base_point_mismatch() {
        let p = diag_problem(&[1.0, 3.0], &[0.0, 0.0]);
        let x = vec(&[1.0, 0.0]);
        let eta = TangentVector { at: vec(&[0.0, 1.0]), dir: vec(&[1.0, 0.0]) };
        assert!(matches!(
            metric_inner(&MetricScheme::Standard, &p, &x, &eta, &eta),
            Err(Error::BasePointMismatch)
        ));
        assert!(matches!(retract(&x, &eta), Err(Error::BasePointMismatch)));
    }

    #[test]
    fn projection_examples() {
        let p = diag_problem(&[1.0, 3.0], &[0.0, 0.0]);
        let x = vec(&[1.0, 0.0]);
        let t = project_tangent(&MetricScheme::Standard, &p, &x, &vec(&[1.0, 1.0])).unwrap();
        assert_eq!(t.dir, vec(&[0.0, 1.0]));
        // M_x = diag(1, 4)
        let u = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let seed = Preconditioner::eig_seed(u, vec(&[3.0]), 0.0).unwrap();
        let m = constant_shift(seed, 1.0);
        let t = project_tangent(&m, &p, &x, &vec(&[1.0, 1.0])).unwrap();
        assert_relative_eq!(t.dir, vec(&[0.0, 1.0]), epsilon = 1e-14);
        let again = project_tangent(&m, &p, &x, &t.dir).unwrap();
        assert_relative_eq!(again.dir, t.dir, epsilon = 1e-14);
    }

    #[test]
    fn retraction_examples() {
        let x = vec(&[1.0, 0.0]);
        assert_eq!(retract(&x, &TangentVector::zero(&x)).unwrap(), x);
        let y = retract(&x, &TangentVector { at: x.clone(), dir: vec(&[0.0, 1.0]) }).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert_relative_eq!(y, vec(&[s, s]), epsilon = 1e-15);
        // first-order agreement with the curve x + tη
        let t = 1e-5;
        let y = retract(&x, &TangentVector { at: x.clone(), dir: vec(&[0.0, t]) }).unwrap();
        assert!((y - vec(&[1.0, t])).norm() <= t * t);
    }

    #[test]
    fn gradient_examples() {
        let p = diag_problem(&[1.0, 3.0], &[1.0, 1.0]);
        let g = rgrad(&MetricScheme::Standard, &p, &vec(&[1.0, 0.0])).unwrap();
        assert_relative_eq!(g.dir, vec(&[0.0, 1.0]), epsilon = 1e-15);
        let p0 = diag_problem(&[1.0, 3.0], &[0.0, 0.0]);
        let g0 = rgrad(&MetricScheme::Standard, &p0, &vec(&[0.0, 1.0])).unwrap();
        assert_eq!(g0.dir.norm(), 0.0);
    }

    #[test]
    fn transport_examples() {
        let p = diag_problem(&[1.0, 3.0], &[0.0, 0.0]);
        let x = vec(&[1.0, 0.0]);
        let xi = TangentVector { at: x.clone(), dir: vec(&[0.0, 1.0]) };
        let same = transport(&MetricScheme::Standard, &p, &TangentVector::zero(&x), &xi).unwrap();
        assert_relative_eq!(same.dir, xi.dir, epsilon = 1e-15);
        let moved = transport(&MetricScheme::Standard, &p, &xi, &xi).unwrap();
        assert_relative_eq!(moved.dir, vec(&[-0.5, 0.5]), epsilon = 1e-15);
        assert!(moved.dir.dot(&moved.at).abs() <= 1e-15);
    }

    #[test]
    fn hessian_examples() {
        let p = diag_problem(&[1.0, 3.0], &[0.0, 0.0]);
        let x = vec(&[1.0, 0.0]);
        let eta = TangentVector { at: x.clone(), dir: vec(&[0.0, 1.0]) };
        let h = hess_apply_stationary(&MetricScheme::Standard, &p, &x, 1.0, &eta).unwrap();
        assert_relative_eq!(h.dir, vec(&[0.0, 2.0]), epsilon = 1e-15);
        let z = hess_apply_stationary(&MetricScheme::Standard, &p, &x, 1.0, &TangentVector::zero(&x)).unwrap();
        assert_eq!(z.dir.norm(), 0.0);
    }

    #[test]
    fn tangent_basis_is_orthonormal_complement() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for n in 1..8 {
            let x = haar_point(n, &mut rng);
            let b = tangent_basis(&x);
            assert_eq!(b.ncols(), n - 1);
            assert!((b.transpose() * &b - DMatrix::identity(n - 1, n - 1)).norm() <= 1e-13);
            assert!((b.transpose() * &x).norm() <= 1e-13);
        }
        let b = tangent_basis(&vec(&[-1.0, 0.0, 0.0]));
        assert!((b.transpose() * vec(&[1.0, 0.0, 0.0])).norm() <= 1e-15);
    }

    fn random_setup(seed: u64, n: usize, seeded: bool) -> (BtrsProblem, MetricScheme, DVector<f64>, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng));
        let a = SymOp::dense(&g + g.transpose()).unwrap();
        let b = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        let p = BtrsProblem::new(a, b).unwrap();
        let m = if seeded {
            let seed = Preconditioner::exact(p.a()).unwrap();
            MetricScheme::seeded(seed, &p)
        } else {
            MetricScheme::Standard
        };
        let x = haar_point(n, &mut rng);
        (p, m, x, rng)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn standard_gradient_closed_form(seed in 0u64..10_000, n in 2usize..20) {
            let (p, _, x, _) = random_setup(seed, n, false);
            let g = rgrad(&MetricScheme::Standard, &p, &x).unwrap();
            let ax = p.a().apply(&x).unwrap();
            let closed = &ax + p.b() - &x * x.dot(&ax) - &x * x.dot(p.b());
            prop_assert!((g.dir - closed).norm() <= 1e-13 * (1.0 + ax.norm() + p.b_norm()));
        }

        #[test]
        fn finite_difference_gradient(seed in 0u64..10_000, n in 2usize..20, seeded in any::<bool>()) {
            let (p, m, x, mut rng) = random_setup(seed, n, seeded);
            let v = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
            let eta = project_tangent(&MetricScheme::Standard, &p, &x, &v).unwrap();
            let g = rgrad(&m, &p, &x).unwrap();
            let exact = metric_inner(&m, &p, &x, &g, &eta).unwrap();
            let t = 1e-6;
            let fwd = p.objective(&retract_dir(&x, &eta.dir, t)).unwrap();
            let bwd = p.objective(&retract_dir(&x, &eta.dir, -t)).unwrap();
            let fd = (fwd - bwd) / (2.0 * t);
            let gnorm = metric_inner(&m, &p, &x, &g, &g).unwrap().sqrt();
            let enorm = metric_inner(&m, &p, &x, &eta, &eta).unwrap().sqrt();
            prop_assert!((fd - exact).abs() <= 1e-5 * exact.abs().max(gnorm * enorm));
        }

        #[test]
        fn projector_is_idempotent_and_tangent(seed in 0u64..10_000, n in 2usize..20, seeded in any::<bool>()) {
            let (p, m, x, mut rng) = random_setup(seed, n, seeded);
            let v = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
            let once = project_tangent(&m, &p, &x, &v).unwrap();
            let twice = project_tangent(&m, &p, &x, &once.dir).unwrap();
            prop_assert!((&twice.dir - &once.dir).norm() <= 1e-11 * v.norm().max(1.0));
            prop_assert!(once.dir.dot(&x).abs() <= 1e-10 * once.dir.norm().max(1.0));
        }

        #[test]
        fn metric_is_positive_on_tangents(seed in 0u64..10_000, n in 2usize..20) {
            let (p, m, x, mut rng) = random_setup(seed, n, true);
            let v = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
            let eta = project_tangent(&m, &p, &x, &v).unwrap();
            prop_assert!(metric_inner(&m, &p, &x, &eta, &eta).unwrap() > 0.0);
        }

        #[test]
        fn transport_is_tangent(seed in 0u64..10_000, n in 2usize..20, seeded in any::<bool>()) {
            let (p, m, x, mut rng) = random_setup(seed, n, seeded);
            let e = project_tangent(&m, &p, &x, &DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng))).unwrap();
            let xi = project_tangent(&m, &p, &x, &DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng))).unwrap();
            let moved = transport(&m, &p, &e, &xi).unwrap();
            prop_assert!((moved.at.norm() - 1.0).abs() <= 1e-14);
            prop_assert!(moved.dir.dot(&moved.at).abs() <= 1e-10 * moved.dir.norm().max(1.0));
        }

        #[test]
        fn hessian_is_self_adjoint(seed in 0u64..10_000, n in 2usize..20, seeded in any::<bool>()) {
            let (p, m, x, mut rng) = random_setup(seed, n, seeded);
            let mu = p.affine_rayleigh(&x).unwrap();
            let e = project_tangent(&m, &p, &x, &DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng))).unwrap();
            let xi = project_tangent(&m, &p, &x, &DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng))).unwrap();
            let he = hess_apply_stationary(&m, &p, &x, mu, &e).unwrap();
            let hxi = hess_apply_stationary(&m, &p, &x, mu, &xi).unwrap();
            let metric = m.at_mu(&x, mu).unwrap();
            let l = metric.inner(&e.dir, &hxi.dir);
            let r = metric.inner(&xi.dir, &he.dir);
            let scale = (metric.inner(&e.dir, &e.dir) * metric.inner(&hxi.dir, &hxi.dir)).sqrt()
                + (metric.inner(&xi.dir, &xi.dir) * metric.inner(&he.dir, &he.dir)).sqrt();
            prop_assert!((l - r).abs() <= 1e-9 * scale.max(1.0), "l={l} r={r} scale={scale}");
        }
    }
}

//! Seed preconditioners and the variable metric `M_x = M + φ(-μ_x) I`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::btrs::BtrsProblem;
use crate::error::{check_dim, Error, Result};
use crate::linop::{orthonormality_defect, SymOp, ORTHONORMAL_TOL};

/// Largest dimension for which dense diagnostics are computed.
pub const DENSE_DIAGNOSTIC_LIMIT: usize = 2000;

/// Relative singular-value cutoff for the sketch range basis.
const SKETCH_RANK_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub enum SeedKind {
    Identity,
    /// Exact copy of `A`, stored by its eigendecomposition. Diagnostics only.
    ExactShifted {
        vectors: DMatrix<f64>,
        values: DVector<f64>,
    },
    /// `U diag(d) Uᵀ + complement (I - UUᵀ)`.
    EigSeed {
        u: DMatrix<f64>,
        d: DVector<f64>,
        complement: f64,
    },
}

/// A fixed symmetric seed `M` supporting shifted applies and solves.
#[derive(Clone, Debug)]
pub struct Preconditioner {
    kind: SeedKind,
    lambda_min: f64,
}

impl Preconditioner {
    pub fn identity() -> Self {
        Self {
            kind: SeedKind::Identity,
            lambda_min: 1.0,
        }
    }

    /// Exact seed `M = A` (dense eigendecomposition).
    pub fn exact(a: &SymOp) -> Result<Self> {
        if a.dim() > DENSE_DIAGNOSTIC_LIMIT {
            return Err(Error::DenseLimit {
                n: a.dim(),
                limit: DENSE_DIAGNOSTIC_LIMIT,
            });
        }
        let eig = SymmetricEigen::new(a.to_dense());
        let lambda_min = eig.eigenvalues.min();
        Ok(Self {
            kind: SeedKind::ExactShifted {
                vectors: eig.eigenvectors,
                values: eig.eigenvalues,
            },
            lambda_min,
        })
    }

    pub fn eig_seed(u: DMatrix<f64>, d: DVector<f64>, complement: f64) -> Result<Self> {
        check_dim(u.ncols(), d.len())?;
        let deviation = orthonormality_defect(&u);
        if deviation > ORTHONORMAL_TOL {
            return Err(Error::NotOrthonormal { deviation });
        }
        let mut lambda_min = if d.is_empty() { complement } else { d.min() };
        if u.ncols() < u.nrows() {
            lambda_min = lambda_min.min(complement);
        }
        Ok(Self {
            kind: SeedKind::EigSeed { u, d, complement },
            lambda_min,
        })
    }

    pub fn kind(&self) -> &SeedKind {
        &self.kind
    }

    /// Smallest eigenvalue of the seed `M`.
    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    fn check_shift(&self, shift: f64) -> Result<()> {
        if shift + self.lambda_min > 0.0 {
            Ok(())
        } else {
            Err(Error::NotPositiveDefinite {
                shift,
                bound: -self.lambda_min,
            })
        }
    }

    /// `(M + shift I) v`.
    pub fn apply(&self, shift: f64, v: &DVector<f64>) -> DVector<f64> {
        match &self.kind {
            SeedKind::Identity => v * (1.0 + shift),
            SeedKind::ExactShifted { vectors, values } => {
                let c = (vectors.transpose() * v).component_mul(&values.add_scalar(shift));
                vectors * c
            }
            SeedKind::EigSeed { u, d, complement } => {
                let c = u.transpose() * v;
                let captured = u * c.component_mul(&d.add_scalar(shift));
                let rest = v - u * &c;
                captured + rest * (complement + shift)
            }
        }
    }

    /// `(M + shift I)^{-1} v`; the shift must make the matrix SPD.
    pub fn solve(&self, shift: f64, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_shift(shift)?;
        Ok(match &self.kind {
            SeedKind::Identity => v / (1.0 + shift),
            SeedKind::ExactShifted { vectors, values } => {
                check_dim(vectors.nrows(), v.len())?;
                let c = (vectors.transpose() * v).component_div(&values.add_scalar(shift));
                vectors * c
            }
            SeedKind::EigSeed { u, d, complement } => {
                check_dim(u.nrows(), v.len())?;
                let c = u.transpose() * v;
                let captured = u * c.component_div(&d.add_scalar(shift));
                let rest = v - u * &c;
                captured + rest / (complement + shift)
            }
        })
    }

    /// Dense `M + shift I` of dimension `n`.
    pub fn to_dense(&self, n: usize, shift: f64) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(n, n);
        for j in 0..n {
            let e = DVector::from_fn(n, |i, _| if i == j { 1.0 } else { 0.0 });
            m.set_column(j, &self.apply(shift, &e));
        }
        (&m + m.transpose()) * 0.5
    }
}

/// The smooth filter `φ(α) = c + s·softplus((α - c)/s)`.
///
/// `φ > c > -λ_min(M)` everywhere, `φ(α) → c` as `α → -∞` and `φ(α) - α → 0`
/// as `α → +∞`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhiFilter {
    pub floor: f64,
    pub smoothing: f64,
}

pub(crate) fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

impl PhiFilter {
    pub fn new(floor: f64, smoothing: f64) -> Result<Self> {
        if !(smoothing > 0.0) || !floor.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "phi filter needs finite floor and positive smoothing (got {floor}, {smoothing})"
            )));
        }
        Ok(Self { floor, smoothing })
    }

    /// Defaults derived from the seed and the problem scale.
    pub fn for_seed(seed: &Preconditioner, p: &BtrsProblem) -> Self {
        let lmin = seed.lambda_min();
        let floor = -lmin + 1e-6 * lmin.abs().max(1.0);
        let smoothing = 1e-3 * (p.b_norm() + p.a().norm_estimate()).max(1.0);
        Self { floor, smoothing }
    }

    pub fn phi(&self, alpha: f64) -> f64 {
        self.floor + self.smoothing * softplus((alpha - self.floor) / self.smoothing)
    }
}

/// `M_x` as a shifted view of the seed.
#[derive(Clone, Copy, Debug)]
pub struct MetricMatrix<'a> {
    pub seed: &'a Preconditioner,
    pub shift: f64,
}

impl MetricMatrix<'_> {
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        self.seed.apply(self.shift, v)
    }

    pub fn solve(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.seed.solve(self.shift, v)
    }

    pub fn to_dense(&self, n: usize) -> DMatrix<f64> {
        self.seed.to_dense(n, self.shift)
    }
}

/// `M_x = M + φ(-μ_x) I`.
pub fn metric_matrix<'a>(
    seed: &'a Preconditioner,
    filter: &PhiFilter,
    p: &BtrsProblem,
    x: &DVector<f64>,
) -> Result<MetricMatrix<'a>> {
    let mu = p.affine_rayleigh(x)?;
    Ok(MetricMatrix {
        seed,
        shift: filter.phi(-mu),
    })
}

pub const DEFAULT_POWER_ITERS: usize = 4;

/// Options for [`build_eig_seed_with`].
#[derive(Clone, Copy, Debug)]
pub struct SketchOptions {
    pub rank: usize,
    pub oversample: usize,
    /// Value `λ_c` taken by the seed on the complement of the captured subspace.
    pub complement: f64,
    /// Subspace iterations `Y ← A·orth(Y)` applied after the first product.
    pub power_iters: usize,
    pub seed: u64,
}

impl Default for SketchOptions {
    fn default() -> Self {
        Self {
            rank: 50,
            oversample: 10,
            complement: 0.0,
            power_iters: DEFAULT_POWER_ITERS,
            seed: 0,
        }
    }
}

fn apply_columns(a: &SymOp, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(x.nrows(), x.ncols());
    for j in 0..x.ncols() {
        out.set_column(j, &a.apply(&x.column(j).into_owned())?);
    }
    Ok(out)
}

/// Rank-`rank` spectral seed from a randomized sketch of `A`.
pub fn build_eig_seed(a: &SymOp, rank: usize, oversample: usize, seed: u64) -> Result<Preconditioner> {
    build_eig_seed_with(
        a,
        &SketchOptions {
            rank,
            oversample,
            seed,
            ..SketchOptions::default()
        },
    )
}

/// Sketch `Y = AΩ` with Gaussian `Ω`, refine it by subspace iterations,
/// take an orthonormal basis `Q` of its range and keep the `rank` Ritz pairs
/// of `QᵀAQ` largest in magnitude.
///
/// Ordering by magnitude keeps both ends of the spectrum, including the
/// eigenvalues near `λ_min(A)`.
pub fn build_eig_seed_with(a: &SymOp, opts: &SketchOptions) -> Result<Preconditioner> {
    let n = a.dim();
    if opts.rank == 0 {
        return Err(Error::InvalidArgument("sketch rank must be positive".into()));
    }
    let k = opts.rank + opts.oversample;
    if k > n {
        return Err(Error::InvalidArgument(format!(
            "rank + oversample = {k} exceeds dimension {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut found = 0;
    for _attempt in 0..2 {
        let omega = DMatrix::from_fn(n, k, |_, _| StandardNormal.sample(&mut rng));
        let mut y = apply_columns(a, &omega)?;
        for _ in 0..opts.power_iters {
            y = apply_columns(a, &y.qr().q())?;
        }
        let svd = y.svd(true, false);
        let u_y = svd.u.expect("left singular vectors requested");
        let smax = svd.singular_values.max();
        let keep: Vec<usize> = (0..k)
            .filter(|&j| smax > 0.0 && svd.singular_values[j] > SKETCH_RANK_TOL * smax * k as f64)
            .collect();
        found = keep.len();
        if found < opts.rank {
            continue;
        }
        let q = u_y.select_columns(&keep);
        let aq = apply_columns(a, &q)?;
        let core = q.transpose() * aq;
        let core = (&core + core.transpose()) * 0.5;
        let eig = SymmetricEigen::new(core);
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].abs().total_cmp(&eig.eigenvalues[i].abs()));
        order.truncate(opts.rank);
        let d = DVector::from_iterator(opts.rank, order.iter().map(|&i| eig.eigenvalues[i]));
        let u = &q * eig.eigenvectors.select_columns(&order);
        return Preconditioner::eig_seed(u, d, opts.complement);
    }
    Err(Error::RankDeficientSketch {
        requested: opts.rank,
        found,
    })
}

/// Extreme eigenvalues of `M_x^{-1/2} (A - μI) M_x^{-1/2}` for `M_x = M + shift I`.
pub fn whitened_interval(seed: &Preconditioner, shift: f64, p: &BtrsProblem, mu: f64) -> Result<(f64, f64)> {
    let n = p.dim();
    if n > DENSE_DIAGNOSTIC_LIMIT {
        return Err(Error::DenseLimit {
            n,
            limit: DENSE_DIAGNOSTIC_LIMIT,
        });
    }
    seed.check_shift(shift)?;
    let mx = SymmetricEigen::new(seed.to_dense(n, shift));
    let inv_sqrt = DVector::from_iterator(n, mx.eigenvalues.iter().map(|&l| 1.0 / l.sqrt()));
    let w_half = &mx.eigenvectors * DMatrix::from_diagonal(&inv_sqrt) * mx.eigenvectors.transpose();
    let mut shifted = p.a().to_dense();
    for i in 0..n {
        shifted[(i, i)] -= mu;
    }
    let whitened = &w_half * shifted * &w_half;
    let whitened = (&whitened + whitened.transpose()) * 0.5;
    let values = SymmetricEigen::new(whitened).eigenvalues;
    Ok((values.min(), values.max()))
}

/// `κ(M_x^{-1/2} (A - μI) M_x^{-1/2})` for an explicit shift.
pub fn kappa_bound_for_shift(seed: &Preconditioner, shift: f64, p: &BtrsProblem, mu: f64) -> Result<f64> {
    let (lo, hi) = whitened_interval(seed, shift, p, mu)?;
    if lo <= 0.0 {
        return Err(Error::HardCaseBoundary { lambda_min: lo });
    }
    Ok(hi / lo)
}

/// Upper bound on the condition number of the Riemannian Hessian at a
/// stationary point `xbar` with affine eigenvalue `mu`, for the metric
/// built from `seed` and `filter`.
pub fn kappa_bound(
    seed: &Preconditioner,
    filter: &PhiFilter,
    p: &BtrsProblem,
    xbar: &DVector<f64>,
    mu: f64,
) -> Result<f64> {
    check_dim(p.dim(), xbar.len())?;
    kappa_bound_for_shift(seed, filter.phi(-mu), p, mu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn vec(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn phi_regimes() {
        let f = PhiFilter::new(2.0, 0.1).unwrap();
        assert_relative_eq!(f.phi(2.0 - 40.0 * 0.1), 2.0, epsilon = 1e-15);
        assert!(f.phi(2.0 - 40.0 * 0.1) >= 2.0);
        assert_relative_eq!(f.phi(2.0), 2.0 + 0.1 * 2f64.ln(), epsilon = 1e-15);
        assert_relative_eq!(f.phi(2.0 + 40.0 * 0.1), 6.0, epsilon = 1e-15);
        // no overflow far out
        assert!(f.phi(1e300).is_finite());
        assert_eq!(f.phi(-1e300), 2.0);
    }

    #[test]
    fn phi_is_monotone_and_above_floor() {
        let f = PhiFilter::new(-1.5, 0.01).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for k in -400..400 {
            let v = f.phi(k as f64 * 0.01);
            assert!(v >= f.floor);
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn phi_rejects_bad_smoothing() {
        assert!(PhiFilter::new(0.0, 0.0).is_err());
        assert!(PhiFilter::new(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn identity_solve() {
        let p = Preconditioner::identity();
        assert_eq!(p.solve(1.0, &vec(&[4.0, 2.0])).unwrap(), vec(&[2.0, 1.0]));
        assert!(matches!(p.solve(-1.0, &vec(&[1.0])), Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn eig_seed_blockwise_solve() {
        let u = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let m = Preconditioner::eig_seed(u, vec(&[3.0]), 1.0).unwrap();
        assert_eq!(m.lambda_min(), 1.0);
        let x = m.solve(1.0, &vec(&[4.0, 4.0])).unwrap();
        assert_relative_eq!(x, vec(&[1.0, 2.0]), epsilon = 1e-15);
        let back = m.apply(1.0, &x);
        assert_relative_eq!(back, vec(&[4.0, 4.0]), epsilon = 1e-11);
        assert!(m.solve(-1.0, &vec(&[1.0, 1.0])).is_err());
    }

    #[test]
    fn exact_seed_round_trip() {
        let a = SymOp::dense(DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 4.0])).unwrap();
        let m = Preconditioner::exact(&a).unwrap();
        let v = vec(&[1.0, -2.0, 0.5]);
        let x = m.solve(0.5, &v).unwrap();
        assert_relative_eq!(m.apply(0.5, &x), v, epsilon = 1e-11);
        let direct = a.apply(&x).unwrap() + &x * 0.5;
        assert_relative_eq!(direct, v, epsilon = 1e-11);
    }

    #[test]
    fn metric_matrix_identity_seed() {
        let seed = Preconditioner::identity();
        let f = PhiFilter::new(0.25, 1e-3).unwrap();
        let p = BtrsProblem::new(SymOp::diagonal(vec(&[1.0, 3.0])).unwrap(), vec(&[1.0, 1.0])).unwrap();
        // mu = 2 at e1, so phi(-2) saturates at the floor
        let mx = metric_matrix(&seed, &f, &p, &vec(&[1.0, 0.0])).unwrap();
        assert_relative_eq!(mx.shift, 0.25, epsilon = 1e-12);
        assert_relative_eq!(mx.apply(&vec(&[1.0, 0.0])), vec(&[1.25, 0.0]), epsilon = 1e-12);
    }

    #[test]
    fn sketch_reproduces_exact_low_rank() {
        let n = 40;
        let r = 5;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let g = DMatrix::<f64>::from_fn(n, r, |_, _| StandardNormal.sample(&mut rng));
        let dense = &g * g.transpose();
        let a = SymOp::dense(dense.clone()).unwrap();
        let m = build_eig_seed(&a, r, 4, 3).unwrap();
        let approx = m.to_dense(n, 0.0);
        assert!((approx - &dense).norm() / dense.norm() <= 1e-8);
    }

    #[test]
    fn sketch_is_deterministic() {
        let a = SymOp::diagonal(DVector::from_fn(30, |i, _| i as f64 - 10.0)).unwrap();
        let m1 = build_eig_seed(&a, 6, 4, 99).unwrap();
        let m2 = build_eig_seed(&a, 6, 4, 99).unwrap();
        assert_eq!(m1.to_dense(30, 0.0), m2.to_dense(30, 0.0));
    }

    #[test]
    fn sketch_captures_both_spectrum_ends() {
        let a = SymOp::diagonal(DVector::from_fn(30, |i, _| if i == 0 { -9.0 } else if i == 1 { 8.0 } else { 0.01 * i as f64 })).unwrap();
        let m = build_eig_seed(&a, 2, 8, 5).unwrap();
        // one pass without power iterations: the extremes are found to
        // within the size of the discarded spectrum
        assert_relative_eq!(m.lambda_min(), -9.0, epsilon = 0.05);
    }

    #[test]
    fn sketch_errors() {
        let a = SymOp::diagonal(DVector::from_element(10, 1.0)).unwrap();
        assert!(build_eig_seed(&a, 0, 2, 1).is_err());
        assert!(build_eig_seed(&a, 8, 4, 1).is_err());
        let rank_two = SymOp::diagonal(DVector::from_fn(10, |i, _| if i < 2 { 1.0 } else { 0.0 })).unwrap();
        assert!(matches!(
            build_eig_seed(&rank_two, 4, 2, 1),
            Err(Error::RankDeficientSketch { requested: 4, found: 2 })
        ));
    }

    #[test]
    fn kappa_examples() {
        let p = BtrsProblem::new(SymOp::diagonal(vec(&[1.0, 3.0])).unwrap(), vec(&[0.0, 0.0])).unwrap();
        let id = Preconditioner::identity();
        assert_relative_eq!(kappa_bound_for_shift(&id, 0.0, &p, 0.0).unwrap(), 3.0, epsilon = 1e-12);
        // M_x = A - μI exactly
        let exact = Preconditioner::exact(p.a()).unwrap();
        assert_relative_eq!(kappa_bound_for_shift(&exact, 0.5, &p, -0.5).unwrap(), 1.0, epsilon = 1e-12);
        let a = SymOp::diagonal(vec(&[-1.0, 2.0, 6.0])).unwrap();
        let p = BtrsProblem::new(a, vec(&[1.0, 0.0, 0.0])).unwrap();
        assert_relative_eq!(kappa_bound_for_shift(&id, 0.0, &p, -2.0).unwrap(), 8.0, epsilon = 1e-12);
        assert!(matches!(
            kappa_bound_for_shift(&id, 0.0, &p, 0.0),
            Err(Error::HardCaseBoundary { .. })
        ));
    }
}

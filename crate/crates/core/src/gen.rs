//! Synthetic instances with a planted global solution and a controlled gap
//! `λ_min(A) - μ⋆`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::btrs::{AffineEigenpair, BtrsProblem};
use crate::error::{Error, Result};
use crate::geometry::haar_point;
use crate::linop::SymOp;

/// Instances up to this size are stored as dense matrices.
pub const DENSE_LIMIT: usize = 2000;

const MAX_RETRIES: usize = 5;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GenSpec {
    pub n: usize,
    /// `λ_min(A) - μ⋆`; zero plants a hard-case instance.
    pub gap: f64,
    pub noise_frac: f64,
    pub noise_std: f64,
    pub signal_range: (f64, f64),
    pub seed: u64,
}

impl GenSpec {
    pub fn new(n: usize, gap: f64, seed: u64) -> Self {
        Self {
            n,
            gap,
            noise_frac: 0.75,
            noise_std: 1e-3,
            signal_range: (-5.0, 10.0),
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Generation(msg));
        if self.n < 2 {
            return bad(format!("dimension must be at least 2 (got {})", self.n));
        }
        if !(self.gap >= 0.0) || !self.gap.is_finite() {
            return bad(format!("gap must be finite and non-negative (got {})", self.gap));
        }
        if !(0.0..=1.0).contains(&self.noise_frac) {
            return bad(format!("noise_frac must lie in [0, 1] (got {})", self.noise_frac));
        }
        if !(self.noise_std >= 0.0) {
            return bad(format!("noise_std must be non-negative (got {})", self.noise_std));
        }
        if !(self.signal_range.0 < self.signal_range.1) {
            return bad(format!("empty signal range {:?}", self.signal_range));
        }
        Ok(())
    }
}

/// Noise and signal eigenvalues (ascending).
pub fn spectrum<R: rand::Rng + ?Sized>(spec: &GenSpec, rng: &mut R) -> Result<Vec<f64>> {
    spec.validate()?;
    let n = spec.n;
    let n_noise = (spec.noise_frac * n as f64).floor() as usize;
    let n_signal = n - n_noise;
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::Generation(e.to_string()))?;
    let mut values: Vec<f64> = (0..n_noise).map(|_| noise.sample(&mut *rng)).collect();
    let (low, high) = spec.signal_range;
    match n_signal {
        0 => {}
        1 => values.push(low),
        k => values.extend((0..k).map(|i| low + (high - low) * i as f64 / (k - 1) as f64)),
    }
    values.sort_by(f64::total_cmp);
    Ok(values)
}

/// Uniformly random orthogonal matrix.
pub fn haar_orthogonal<R: rand::Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(&mut *rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Builds `A = QΛQᵀ`, `x⋆` and `b = -(A - μ⋆I)x⋆` with `μ⋆ = λ_min - gap`.
///
/// With `gap = 0` the planted `b` is orthogonal to the minimal eigenspace and
/// `x⋆` is a global solution (hard case).
pub fn generate(spec: &GenSpec) -> Result<(BtrsProblem, AffineEigenpair)> {
    spec.validate()?;
    let n = spec.n;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for _ in 0..MAX_RETRIES {
        let lam = DVector::from_vec(spectrum(spec, &mut rng)?);
        let lambda1 = lam[0];
        let mu_star = lambda1 - spec.gap;
        let q = haar_orthogonal(n, &mut rng);
        let y = haar_point(n, &mut rng);
        if spec.gap > 0.0 && !(mu_star < lambda1) {
            continue;
        }
        // In eigen-coordinates: b̃ = -(Λ - μ⋆) ∘ ỹ; with gap 0 the minimal
        // eigenvalue's coefficients vanish exactly.
        let shifted = lam.add_scalar(-mu_star);
        let by = -shifted.component_mul(&y);
        let b = &q * by;
        let x = &q * &y;
        let op = if n <= DENSE_LIMIT {
            let dense = &q * DMatrix::from_diagonal(&lam) * q.transpose();
            SymOp::dense(dense)?
        } else {
            SymOp::eig_low_rank(q, lam.clone(), 0.0)?
        };
        let problem = BtrsProblem::new(op, b)?;
        let planted = AffineEigenpair::new(&problem, mu_star, x)?;
        return Ok((problem, planted));
    }
    Err(Error::Generation(format!(
        "planted gap {} did not separate mu from the spectrum after {MAX_RETRIES} attempts",
        spec.gap
    )))
}

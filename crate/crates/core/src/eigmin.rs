//! Smallest eigenpair of a symmetric operator by block Lanczos with full
//! reorthogonalization.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linop::SymOp;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_BLOCK: usize = 2;
pub const MAX_BLOCK: usize = 8;

/// Ritz values closer than this many multiples of `tol` to the smallest one
/// are reported as part of the minimal eigenspace.
const CLUSTER_FACTOR: f64 = 10.0;

/// Iteration continues until residuals fall below this fraction of `tol`,
/// which keeps eigenvector errors small next to classification thresholds.
/// Once the Krylov space is exhausted residuals up to `tol` are accepted.
const CONVERGENCE_MARGIN: f64 = 1e-2;

/// Minimal eigenvalue and an orthonormal basis of its computed eigenspace.
#[derive(Clone, Debug)]
pub struct MinEigResult {
    pub lambda_min: f64,
    pub basis: Vec<DVector<f64>>,
    pub tol_eig: f64,
    /// Number of operator applications.
    pub iterations: usize,
}

/// [`min_eigpair`] with default tolerance, `10n` applications and block size 2.
pub fn min_eigpair_default(a: &SymOp, seed: u64) -> Result<MinEigResult> {
    let n = a.dim();
    min_eigpair(a, DEFAULT_TOL, 10 * n, DEFAULT_BLOCK.min(n), seed)
}

fn orthogonalize(v: &mut DVector<f64>, basis: &[DVector<f64>]) {
    for _ in 0..2 {
        for q in basis {
            let c = q.dot(v);
            v.axpy(-c, q, 1.0);
        }
    }
}

fn check_interval(m: usize) -> usize {
    match m {
        0..=100 => 1,
        101..=300 => 4,
        _ => 10,
    }
}

struct Krylov<'a> {
    a: &'a SymOp,
    v: Vec<DVector<f64>>,
    w: Vec<DVector<f64>>,
    /// Upper triangle of `VᵀAV`, row `i` holds entries `(i, j)` for `j >= i`.
    t: Vec<Vec<f64>>,
    applies: usize,
}

impl<'a> Krylov<'a> {
    fn push(&mut self, q: DVector<f64>) {
        let aq = self.a.apply_unchecked(&q);
        self.applies += 1;
        let j = self.v.len();
        for i in 0..j {
            let tij = 0.5 * (self.v[i].dot(&aq) + q.dot(&self.w[i]));
            self.t[i].push(tij);
        }
        self.t.push(vec![q.dot(&aq)]);
        self.v.push(q);
        self.w.push(aq);
    }

    fn projected(&self) -> DMatrix<f64> {
        let m = self.v.len();
        let mut t = DMatrix::zeros(m, m);
        for i in 0..m {
            for (k, &val) in self.t[i].iter().enumerate() {
                let j = i + k;
                t[(i, j)] = val;
                t[(j, i)] = val;
            }
        }
        t
    }

    fn combine(&self, from: &[DVector<f64>], y: nalgebra::DVectorView<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.a.dim());
        for (col, &c) in from.iter().zip(y.iter()) {
            out.axpy(c, col, 1.0);
        }
        out
    }
}

/// Smallest eigenvalue of `a` and an orthonormal basis of its eigenspace.
///
/// `max_iter` bounds the number of operator applications. With `block > 1`
/// a Ritz cluster within `10·tol·max(1, |λ|)` of the smallest Ritz value is
/// returned, which detects multiple eigenvalues up to the block size.
pub fn min_eigpair(a: &SymOp, tol: f64, max_iter: usize, block: usize, seed: u64) -> Result<MinEigResult> {
    let n = a.dim();
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("eigensolver tolerance must be positive (got {tol})")));
    }
    if block == 0 || block > MAX_BLOCK.min(n) {
        return Err(Error::InvalidArgument(format!(
            "block size {block} outside 1..={}",
            MAX_BLOCK.min(n)
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut random_unit = |basis: &[DVector<f64>]| -> Option<DVector<f64>> {
        for _ in 0..8 {
            let mut v = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
            let before = v.norm();
            orthogonalize(&mut v, basis);
            let after = v.norm();
            if after > 1e-8 * before {
                return Some(v / after);
            }
        }
        None
    };
    let mut k = Krylov {
        a,
        v: Vec::with_capacity(n.min(max_iter.max(block))),
        w: Vec::new(),
        t: Vec::new(),
        applies: 0,
    };
    let mut block_start = 0;
    for _ in 0..block {
        let q = random_unit(&k.v).expect("fresh random vectors span a new direction");
        k.push(q);
    }
    let mut steps_since_check = 0;
    let mut best = (f64::NAN, f64::INFINITY);
    loop {
        let m = k.v.len();
        steps_since_check += 1;
        let must_check = m == n || k.applies >= max_iter || steps_since_check >= check_interval(m);
        if must_check {
            steps_since_check = 0;
            let eig = SymmetricEigen::new(k.projected());
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
            let theta1 = eig.eigenvalues[order[0]];
            let scale = theta1.abs().max(1.0);
            let cluster: Vec<usize> = order
                .iter()
                .copied()
                .take_while(|&i| eig.eigenvalues[i] - theta1 <= CLUSTER_FACTOR * tol * scale)
                .collect();
            let mut vecs = Vec::with_capacity(cluster.len());
            let mut residuals = Vec::with_capacity(cluster.len());
            for &i in &cluster {
                let y = eig.eigenvectors.column(i);
                let x = k.combine(&k.v, y);
                let ax = k.combine(&k.w, y);
                residuals.push((ax - &x * theta1).norm());
                vecs.push(x);
            }
            best = (theta1, residuals[0]);
            let exhausted = m == n || k.applies >= max_iter;
            let target = if exhausted { 0.5 } else { CONVERGENCE_MARGIN } * tol * scale;
            let all = residuals.iter().all(|&r| r <= target);
            // A single block can meet a multiple eigenspace in one direction
            // only, so at least two blocks are needed before accepting.
            let mature = exhausted || m >= 2 * block;
            if residuals[0] <= target && (all || exhausted) && mature {
                let basis = vecs
                    .into_iter()
                    .zip(&residuals)
                    .filter(|(_, &r)| r <= target)
                    .map(|(x, _)| {
                        let nrm = x.norm();
                        x / nrm
                    })
                    .collect();
                return Ok(MinEigResult {
                    lambda_min: theta1,
                    basis,
                    tol_eig: tol,
                    iterations: k.applies,
                });
            }
            if exhausted {
                break;
            }
        }
        // Next block: A times the previous block, orthogonalized.
        let last = k.v.len();
        let room = (n - last).min(block).min(max_iter.saturating_sub(k.applies));
        let mut added = 0;
        for j in block_start..last {
            if added == room {
                break;
            }
            let mut cand = k.w[j].clone();
            let before = cand.norm();
            orthogonalize(&mut cand, &k.v);
            let after = cand.norm();
            let q = if after > 1e-10 * before.max(f64::MIN_POSITIVE) && after > 0.0 {
                Some(cand / after)
            } else {
                random_unit(&k.v)
            };
            match q {
                Some(q) => {
                    k.push(q);
                    added += 1;
                }
                None => break,
            }
        }
        while added < room {
            match random_unit(&k.v) {
                Some(q) => {
                    k.push(q);
                    added += 1;
                }
                None => break,
            }
        }
        if added == 0 {
            break;
        }
        block_start = last;
    }
    Err(Error::EigNoConvergence {
        iterations: k.applies,
        lambda: best.0,
        residual: best.1,
    })
}

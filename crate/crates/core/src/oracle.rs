//! Dense reference solver. All affine eigenpairs are enumerated from the
//! secular equation `Σ βᵢ²/(λᵢ - μ)² = 1` in the eigenbasis of `A`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::btrs::{AffineEigenpair, BtrsProblem, CaseKind, EPS_HARD};
use crate::error::{Error, Result};
use crate::geometry::tangent_basis;

/// Largest dimension for full enumeration.
pub const FULL_LIMIT: usize = 500;
/// Largest dimension for [`global_solve`].
pub const GLOBAL_LIMIT: usize = 2000;

const CLUSTER_TOL: f64 = 1e-10;
const POLE_TOL: f64 = 1e-14;
const BISECTION_STEPS: usize = 200;
const NEWTON_STEPS: usize = 20;
const ENDPOINT_OFFSET: f64 = 1e-12;
const DEDUPE_TOL: f64 = 1e-14;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OracleReport {
    /// Eigenvalues of `A`, ascending.
    pub lambda: Vec<f64>,
    /// Affine eigenpairs sorted by `mu`.
    pub affine_eigs: Vec<AffineEigenpair>,
    pub global: AffineEigenpair,
    pub local_nonglobal: Option<AffineEigenpair>,
    pub mu_max: f64,
    pub case: CaseKind,
    /// Orthonormal basis of the minimal eigenspace of `A`.
    pub min_eigvecs: Vec<Vec<f64>>,
}

impl OracleReport {
    pub fn q_star(&self, p: &BtrsProblem) -> Result<f64> {
        p.objective(&self.global.vector())
    }

    pub fn min_eigvecs(&self) -> Vec<DVector<f64>> {
        self.min_eigvecs.iter().map(|v| DVector::from_column_slice(v)).collect()
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda[0]
    }
}

struct Cluster {
    value: f64,
    members: Vec<usize>,
    beta2: f64,
}

struct Spectral {
    values: DVector<f64>,
    vectors: DMatrix<f64>,
    beta: DVector<f64>,
    clusters: Vec<Cluster>,
    /// Indices into `clusters` with nonzero weight.
    poles: Vec<usize>,
    b_norm: f64,
    a_norm: f64,
}

impl Spectral {
    fn new(p: &BtrsProblem) -> Self {
        let eig = SymmetricEigen::new(p.a().to_dense());
        let n = p.dim();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
        let vectors = eig.eigenvectors.select_columns(&order);
        let beta = vectors.transpose() * p.b();
        let a_norm = values.amax();
        let ctol = CLUSTER_TOL * a_norm.max(f64::MIN_POSITIVE);
        let mut clusters: Vec<Cluster> = Vec::new();
        for i in 0..n {
            match clusters.last_mut() {
                Some(c) if values[i] - values[*c.members.last().unwrap()] <= ctol => c.members.push(i),
                _ => clusters.push(Cluster {
                    value: 0.0,
                    members: vec![i],
                    beta2: 0.0,
                }),
            }
        }
        for c in &mut clusters {
            c.value = c.members.iter().map(|&i| values[i]).sum::<f64>() / c.members.len() as f64;
            c.beta2 = c.members.iter().map(|&i| beta[i] * beta[i]).sum();
        }
        let b_norm = p.b_norm();
        let pole_tol = POLE_TOL * b_norm.max(1.0);
        let poles = (0..clusters.len())
            .filter(|&k| clusters[k].beta2.sqrt() > pole_tol)
            .collect();
        Self {
            values,
            vectors,
            beta,
            clusters,
            poles,
            b_norm,
            a_norm,
        }
    }

    fn pole(&self, k: usize) -> &Cluster {
        &self.clusters[self.poles[k]]
    }

    /// `s(μ) = Σ_poles β²/(λ - μ)² - 1`.
    fn secular(&self, mu: f64) -> f64 {
        self.poles
            .iter()
            .map(|&k| {
                let c = &self.clusters[k];
                c.beta2 / ((c.value - mu) * (c.value - mu))
            })
            .sum::<f64>()
            - 1.0
    }

    fn secular_d1(&self, mu: f64) -> f64 {
        self.poles
            .iter()
            .map(|&k| {
                let c = &self.clusters[k];
                let d = c.value - mu;
                2.0 * c.beta2 / (d * d * d)
            })
            .sum()
    }

    fn spread(&self) -> f64 {
        let first = self.clusters.first().map_or(0.0, |c| c.value);
        let last = self.clusters.last().map_or(0.0, |c| c.value);
        (last - first).max(self.b_norm).max(1.0)
    }

    /// `-Σ β_i/(λ_i - μ) q_i` over members of every cluster except `skip`.
    fn particular(&self, mu: f64, skip: Option<usize>) -> DVector<f64> {
        let n = self.values.len();
        let mut coeffs = DVector::zeros(n);
        for (k, c) in self.clusters.iter().enumerate() {
            if Some(k) == skip {
                continue;
            }
            for &i in &c.members {
                coeffs[i] = -self.beta[i] / (c.value - mu);
            }
        }
        &self.vectors * coeffs
    }

    /// Offset from `pole` (towards `dir = ±1`) at which `pred` holds,
    /// starting at `1e-12·spread` and shrinking towards the resolution limit.
    fn endpoint(&self, pole: f64, dir: f64, pred: impl Fn(f64) -> bool) -> Option<f64> {
        let mut off = ENDPOINT_OFFSET * self.spread();
        let floor = 4.0 * f64::EPSILON * pole.abs().max(f64::MIN_POSITIVE);
        loop {
            let mu = pole + dir * off;
            if mu != pole && pred(mu) {
                return Some(mu);
            }
            if off <= floor {
                return None;
            }
            off = (off * 1e-3).max(floor);
        }
    }
}

/// Root of the monotone function `f` on `[lo, hi]` with `f(lo)` and `f(hi)`
/// of opposite signs: bisection, then safeguarded Newton polishing.
fn bracketed_root(f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let lo_sign = f(lo) < 0.0;
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if (f(mid) < 0.0) == lo_sign {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..NEWTON_STEPS {
        let fx = f(x);
        if fx == 0.0 {
            break;
        }
        let d = df(x);
        if d == 0.0 || !d.is_finite() {
            break;
        }
        let next = x - fx / d;
        if !(next >= lo && next <= hi) || next == x {
            break;
        }
        x = next;
    }
    x
}

fn min_tangent_curvature(p: &BtrsProblem, x: &DVector<f64>, mu: f64) -> f64 {
    let n = x.len();
    if n < 2 {
        return f64::INFINITY;
    }
    let b = tangent_basis(x);
    let mut shifted = p.a().to_dense();
    for i in 0..n {
        shifted[(i, i)] -= mu;
    }
    let h = b.transpose() * shifted * &b;
    let h = (&h + h.transpose()) * 0.5;
    SymmetricEigen::new(h).eigenvalues.min()
}

fn push_pair(p: &BtrsProblem, out: &mut Vec<AffineEigenpair>, mu: f64, x: DVector<f64>) -> Result<()> {
    let nrm = x.norm();
    if nrm > 0.0 && nrm.is_finite() {
        out.push(AffineEigenpair::new(p, mu, x / nrm)?);
    }
    Ok(())
}

enum Mode {
    Full,
    GlobalOnly,
}

fn analyze(p: &BtrsProblem, mode: Mode) -> Result<(Spectral, Vec<AffineEigenpair>)> {
    let s = Spectral::new(p);
    let mut pairs = Vec::new();
    let sec = |mu: f64| s.secular(mu);
    let dsec = |mu: f64| s.secular_d1(mu);
    let m = s.poles.len();
    let beta_norm = s.beta.norm();
    if m > 0 {
        // Left of the first pole: s increases from -1 to +inf.
        let p1 = s.pole(0).value;
        if let Some(hi) = s.endpoint(p1, -1.0, |mu| sec(mu) > 0.0) {
            let lo = p1 - beta_norm;
            let mu = if sec(lo) >= 0.0 { lo } else { bracketed_root(sec, dsec, lo, hi) };
            push_pair(p, &mut pairs, mu, s.particular(mu, None))?;
        }
        if matches!(mode, Mode::Full) {
            // Right of the last pole: s decreases from +inf to -1.
            let pm = s.pole(m - 1).value;
            if let Some(lo) = s.endpoint(pm, 1.0, |mu| sec(mu) > 0.0) {
                let hi = pm + beta_norm;
                let mu = if sec(hi) >= 0.0 { hi } else { bracketed_root(sec, dsec, lo, hi) };
                push_pair(p, &mut pairs, mu, s.particular(mu, None))?;
            }
            // Between poles: s is convex, so zero, one or two roots.
            for k in 0..m - 1 {
                let (a, b) = (s.pole(k).value, s.pole(k + 1).value);
                let lo = s.endpoint(a, 1.0, |mu| dsec(mu) < 0.0 && sec(mu) > 0.0);
                let hi = s.endpoint(b, -1.0, |mu| dsec(mu) > 0.0 && sec(mu) > 0.0);
                let (Some(lo), Some(hi)) = (lo, hi) else { continue };
                if lo >= hi {
                    continue;
                }
                let argmin = bracketed_root(dsec, |_| f64::NAN, lo, hi);
                let smin = sec(argmin);
                if smin > 0.0 {
                    continue;
                }
                let left = bracketed_root(sec, dsec, lo, argmin);
                let right = bracketed_root(sec, dsec, argmin, hi);
                push_pair(p, &mut pairs, left, s.particular(left, None))?;
                if right - left > DEDUPE_TOL * s.spread() {
                    push_pair(p, &mut pairs, right, s.particular(right, None))?;
                }
            }
        }
    }
    // Clusters orthogonal to b: μ = λ_k with an eigenspace completion.
    for (k, c) in s.clusters.iter().enumerate() {
        if s.poles.contains(&k) {
            continue;
        }
        if matches!(mode, Mode::GlobalOnly) && k > 0 {
            break;
        }
        let part = s.particular(c.value, Some(k));
        let slack = 1.0 - part.norm_squared();
        if slack < 0.0 {
            continue;
        }
        let v = s.vectors.column(c.members[0]).into_owned();
        let w = slack.sqrt();
        push_pair(p, &mut pairs, c.value, &part + &v * w)?;
        if slack >= DEDUPE_TOL {
            push_pair(p, &mut pairs, c.value, &part - &v * w)?;
        }
    }
    pairs.sort_by(|x, y| x.mu.total_cmp(&y.mu));
    Ok((s, pairs))
}

fn case_of(s: &Spectral) -> CaseKind {
    let alpha = s.clusters[0].beta2.sqrt();
    if alpha > EPS_HARD * s.b_norm.max(1.0) {
        CaseKind::Easy
    } else {
        CaseKind::Hard
    }
}

fn pick_global(p: &BtrsProblem, pairs: &[AffineEigenpair]) -> Result<AffineEigenpair> {
    let mut best: Option<(f64, &AffineEigenpair)> = None;
    for pair in pairs {
        let q = p.objective(&pair.vector())?;
        if best.is_none_or(|(bq, _)| q < bq) {
            best = Some((q, pair));
        }
    }
    best.map(|(_, pair)| pair.clone())
        .ok_or_else(|| Error::InvalidArgument("no affine eigenpair found".into()))
}

/// Full enumeration of affine eigenpairs (`n <= 500`).
pub fn enumerate_affine_eigenvalues(p: &BtrsProblem) -> Result<OracleReport> {
    let n = p.dim();
    if n > FULL_LIMIT {
        return Err(Error::DenseLimit { n, limit: FULL_LIMIT });
    }
    let (s, pairs) = analyze(p, Mode::Full)?;
    let global = pick_global(p, &pairs)?;
    let mu_max = pairs.iter().map(|e| e.mu).fold(f64::NEG_INFINITY, f64::max);
    let lambda1 = s.clusters[0].value;
    let local_nonglobal = match s.clusters.get(1) {
        Some(c2) => {
            let curv_tol = 1e-8 * s.a_norm.max(1.0);
            let q_star = p.objective(&global.vector())?;
            let mut found = None;
            for pair in pairs.iter().filter(|e| e.mu > lambda1 && e.mu < c2.value) {
                let x = pair.vector();
                let q = p.objective(&x)?;
                if q <= q_star + 1e-12 * q_star.abs().max(1.0) {
                    continue;
                }
                if min_tangent_curvature(p, &x, pair.mu) >= -curv_tol {
                    found = Some(pair.clone());
                    break;
                }
            }
            found
        }
        None => None,
    };
    let min_eigvecs = s.clusters[0]
        .members
        .iter()
        .map(|&i| s.vectors.column(i).iter().copied().collect())
        .collect();
    Ok(OracleReport {
        lambda: s.values.iter().copied().collect(),
        case: case_of(&s),
        affine_eigs: pairs,
        global,
        local_nonglobal,
        mu_max,
        min_eigvecs,
    })
}

/// Global solution `(μ⋆, x⋆)` (`n <= 2000`).
pub fn global_solve(p: &BtrsProblem) -> Result<AffineEigenpair> {
    let n = p.dim();
    if n > GLOBAL_LIMIT {
        return Err(Error::DenseLimit { n, limit: GLOBAL_LIMIT });
    }
    let (_, pairs) = analyze(p, Mode::GlobalOnly)?;
    pick_global(p, &pairs)
}

/// Optimal value of `min q(x)` over the unit ball, from the boundary optimum
/// and, when `A` is positive definite, the interior critical point.
pub fn trs_optimum(p: &BtrsProblem) -> Result<(f64, DVector<f64>)> {
    let boundary = global_solve(p)?;
    let xb = boundary.vector();
    let qb = p.objective(&xb)?;
    let a = p.a().to_dense();
    let eig = SymmetricEigen::new(a.clone());
    if eig.eigenvalues.min() > 0.0 {
        if let Some(chol) = a.cholesky() {
            let x = -chol.solve(p.b());
            if x.norm() < 1.0 {
                let q = 0.5 * x.dot(&p.a().apply(&x)?) + p.b().dot(&x);
                if q < qb {
                    return Ok((q, x));
                }
            }
        }
    }
    Ok((qb, xb))
}

//! Riemannian descent solvers for the boundary problem: gradient descent,
//! the double-start strategy, conjugate gradients and the LPR-restart driver.

use std::io::Write;
use std::time::Instant;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::btrs::{BtrsProblem, CaseKind, EPS_HARD};
use crate::eigmin::min_eigpair_default;
use crate::error::{check_dim, Error, Result};
use crate::geometry::{haar_point, MetricScheme, TangentVector};

/// Smallest trial step before the line search gives up.
pub const MIN_STEP: f64 = 1e-18;

/// Upper bound on LPR restarts before a run is declared pathological.
pub const MAX_LPR_RESTARTS: usize = 10;

/// Exact recomputation of `Ax` every this many steps (it is otherwise
/// updated through the line model).
const REFRESH_EVERY: usize = 32;

/// Seed offset separating the eigensolver stream from the start-point stream.
const EIG_SEED_SALT: u64 = 0x6569_676d_696e;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolverConfig {
    pub tol_grad: f64,
    /// Tolerance on `‖μx - Ax - b‖`, relative to `max(1, ‖b‖)`.
    pub tol_res: f64,
    pub max_iter: usize,
    pub armijo_tau: f64,
    pub armijo_c: f64,
    /// Start steepest-descent line searches at `t = 1/‖b‖`.
    pub step_cap_enabled: bool,
    /// Conjugate-gradient restart period; `None` means the dimension.
    pub cg_restart: Option<usize>,
    pub rng_seed: u64,
    /// Store every iterate in the trace.
    pub keep_iterates: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol_grad: 1e-8,
            tol_res: 1e-8,
            max_iter: 10_000,
            armijo_tau: 0.5,
            armijo_c: 1e-4,
            step_cap_enabled: true,
            cg_restart: None,
            rng_seed: 0,
            keep_iterates: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !open_unit(self.armijo_tau) || !open_unit(self.armijo_c) {
            return Err(Error::InvalidArgument(format!(
                "armijo parameters must lie in (0, 1) (tau = {}, c = {})",
                self.armijo_tau, self.armijo_c
            )));
        }
        if !(self.tol_grad > 0.0) || !(self.tol_res > 0.0) {
            return Err(Error::InvalidArgument("tolerances must be positive".into()));
        }
        if self.cg_restart == Some(0) {
            return Err(Error::InvalidArgument("cg_restart must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Converged,
    MaxIter,
    /// Converged after this many LPR restarts.
    LprRestarts(usize),
    Failed(String),
}

impl SolveStatus {
    pub fn is_converged(&self) -> bool {
        matches!(self, Self::Converged | Self::LprRestarts(_))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RestartKind {
    Lpr,
    ColdStart,
}

impl RestartKind {
    fn label(self) -> &'static str {
        match self {
            Self::Lpr => "LPR",
            Self::ColdStart => "ColdStart",
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct TraceRecord {
    /// Cumulative number of descent steps.
    pub iter: usize,
    pub q: f64,
    /// Gradient norm in the active metric.
    pub grad_norm: f64,
    pub res_norm: f64,
    /// Accepted step size (0 for the starting point of a run).
    pub step: f64,
    pub elapsed_s: f64,
}

/// A restart boundary: `record` is the first record of the new run.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct RestartMarker {
    pub record: usize,
    pub kind: RestartKind,
}

/// One application of the LPR reflection.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct LprEvent {
    pub q_before: f64,
    pub q_after: f64,
    pub mu_before: f64,
    pub res_before: f64,
    pub alpha: f64,
    pub u_dot_b: f64,
    pub u_dot_x: f64,
}

#[derive(Clone, Debug)]
pub struct SolveTrace {
    pub records: Vec<TraceRecord>,
    pub markers: Vec<RestartMarker>,
    pub iterates: Vec<DVector<f64>>,
    pub lpr_events: Vec<LprEvent>,
    /// Record index at which each descent run starts.
    pub run_starts: Vec<usize>,
    start: Instant,
    steps: usize,
}

impl Default for SolveTrace {
    fn default() -> Self {
        Self::new()
    }
}

impl SolveTrace {
    pub fn new() -> Self {
        Self {
            records: Vec::new(),
            markers: Vec::new(),
            iterates: Vec::new(),
            lpr_events: Vec::new(),
            run_starts: Vec::new(),
            start: Instant::now(),
            steps: 0,
        }
    }

    /// Record ranges of the individual descent runs.
    pub fn runs(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::with_capacity(self.run_starts.len());
        for (i, &s) in self.run_starts.iter().enumerate() {
            let e = self.run_starts.get(i + 1).copied().unwrap_or(self.records.len());
            out.push(s..e);
        }
        out
    }

    fn marker_at(&self, record: usize) -> Option<RestartKind> {
        self.markers.iter().find(|m| m.record == record).map(|m| m.kind)
    }

    fn mark(&mut self, kind: RestartKind) {
        self.markers.push(RestartMarker {
            record: self.records.len(),
            kind,
        });
    }

    fn push(&mut self, q: f64, grad_norm: f64, res_norm: f64, step: f64) {
        self.records.push(TraceRecord {
            iter: self.steps,
            q,
            grad_norm,
            res_norm,
            step,
            elapsed_s: self.start.elapsed().as_secs_f64(),
        });
    }

    /// CSV with header `iter,q,grad_norm,res_norm,step,elapsed_s,marker`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["iter", "q", "grad_norm", "res_norm", "step", "elapsed_s", "marker"])?;
        for (i, r) in self.records.iter().enumerate() {
            let marker = self.marker_at(i).map(RestartKind::label).unwrap_or("");
            out.write_record(&[
                r.iter.to_string(),
                format!("{:e}", r.q),
                format!("{:e}", r.grad_norm),
                format!("{:e}", r.res_norm),
                format!("{:e}", r.step),
                format!("{:.6}", r.elapsed_s),
                marker.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    pub x: DVector<f64>,
    pub mu: f64,
    pub q: f64,
    pub status: SolveStatus,
    /// Total descent steps over all runs.
    pub iterations: usize,
    pub grad_norm: f64,
    pub res_norm: f64,
    /// Classification used by [`lpr_solve`], if any.
    pub case: Option<CaseKind>,
    pub trace: SolveTrace,
}

/// Serializable view of a [`SolveResult`] without the trace.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveSummary {
    pub x: Vec<f64>,
    pub mu: f64,
    pub q: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    pub grad_norm: f64,
    pub res_norm: f64,
    pub case: Option<CaseKind>,
    pub lpr_restarts: usize,
    pub elapsed_s: f64,
}

impl SolveResult {
    pub fn summary(&self) -> SolveSummary {
        SolveSummary {
            x: self.x.as_slice().to_vec(),
            mu: self.mu,
            q: self.q,
            status: self.status.clone(),
            iterations: self.iterations,
            grad_norm: self.grad_norm,
            res_norm: self.res_norm,
            case: self.case,
            lpr_restarts: self.trace.lpr_events.len(),
            elapsed_s: self.trace.records.last().map_or(0.0, |r| r.elapsed_s),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum InnerSolver {
    Rgd,
    Rcg,
}

/// Objective along `y(t) = (x + t d)/‖x + t d‖`, from `xᵀAx, xᵀAd, dᵀAd, bᵀx,
/// bᵀd`. The difference `q(y(t)) - q(x)` is evaluated without cancellation.
struct LineModel {
    a0: f64,
    a1: f64,
    a2: f64,
    b0: f64,
    b1: f64,
    xx: f64,
    xd: f64,
    dd: f64,
}

impl LineModel {
    fn new(x: &DVector<f64>, ax: &DVector<f64>, d: &DVector<f64>, ad: &DVector<f64>, b: &DVector<f64>) -> Self {
        Self {
            a0: x.dot(ax),
            a1: 0.5 * (x.dot(ad) + d.dot(ax)),
            a2: d.dot(ad),
            b0: b.dot(x),
            b1: b.dot(d),
            xx: x.norm_squared(),
            xd: x.dot(d),
            dd: d.norm_squared(),
        }
    }

    fn decrease(&self, t: f64) -> f64 {
        // ‖x + td‖² = xx (1 + e); all terms below are O(t).
        let e = (2.0 * t * self.xd + t * t * self.dd) / self.xx;
        let s2 = 1.0 + e;
        let s = s2.sqrt();
        let quad = 0.5 * (2.0 * t * self.a1 + t * t * self.a2 - self.a0 * e) / (self.xx * s2);
        let lin = (t * self.b1 - self.b0 * e / (1.0 + s)) / (self.xx.sqrt() * s);
        quad + lin
    }

    /// Second derivative of `t ↦ q(y(t))` at 0 for tangent `d`.
    fn curvature(&self) -> f64 {
        self.a2 - (self.a0 + self.b0) * self.dd
    }
}

/// Backtracks from `t0` until `q(y(t)) - q(x) <= c·t·slope`.
fn backtrack(model: &LineModel, slope: f64, t0: f64, cfg: &SolverConfig) -> Result<(f64, f64)> {
    let mut t = t0;
    loop {
        let delta = model.decrease(t);
        if delta <= cfg.armijo_c * t * slope {
            return Ok((t, delta));
        }
        t *= cfg.armijo_tau;
        if t < MIN_STEP {
            return Err(Error::Stalled { min_step: MIN_STEP });
        }
    }
}

fn cap_step(p: &BtrsProblem) -> f64 {
    if p.b_norm() > 0.0 {
        1.0 / p.b_norm()
    } else {
        2.0 / p.a().norm_estimate().max(1e-16)
    }
}

/// Armijo backtracking along `R_x(-t η)` started at the step cap.
///
/// `eta` must be an ascent direction (`g(η, grad q) > 0`), typically the
/// Riemannian gradient. Returns the accepted `t` and the new point.
pub fn armijo_step(
    m: &MetricScheme,
    p: &BtrsProblem,
    x: &DVector<f64>,
    eta: &TangentVector,
    cfg: &SolverConfig,
) -> Result<(f64, DVector<f64>)> {
    cfg.validate()?;
    check_dim(p.dim(), x.len())?;
    check_dim(p.dim(), eta.dir.len())?;
    let ev = p.evaluate(x)?;
    let metric = m.at_mu(x, ev.mu)?;
    let egrad = &ev.ax + p.b();
    let grad = metric.riemannian_gradient(x, &egrad)?;
    let d = -&eta.dir;
    let slope = metric.inner(&grad, &d);
    if !(slope < 0.0) {
        return Err(Error::InvalidArgument("direction is not a descent direction".into()));
    }
    let ad = p.a().apply(&d)?;
    let model = LineModel::new(x, &ev.ax, &d, &ad, p.b());
    let t0 = if cfg.step_cap_enabled {
        cap_step(p)
    } else {
        model_step(&model, slope, &d).unwrap_or_else(|| cap_step(p))
    };
    let (t, _) = backtrack(&model, slope, t0, cfg)?;
    Ok((t, crate::geometry::retract_dir(x, &d, t)))
}

fn model_step(model: &LineModel, slope: f64, d: &DVector<f64>) -> Option<f64> {
    let curv = model.curvature();
    if curv > 0.0 {
        Some(-slope / curv)
    } else {
        let nd = d.norm();
        (nd > 0.0).then(|| 1.0 / nd)
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Direction {
    Steepest,
    Conjugate,
}

struct RunOutcome {
    x: DVector<f64>,
    mu: f64,
    q: f64,
    status: SolveStatus,
    iterations: usize,
    grad_norm: f64,
    res_norm: f64,
}

struct State {
    x: DVector<f64>,
    ax: DVector<f64>,
    exact: bool,
}

/// The shared descent loop.
fn descend(
    m: &MetricScheme,
    p: &BtrsProblem,
    x0: &DVector<f64>,
    cfg: &SolverConfig,
    direction: Direction,
    res_tol: f64,
    trace: &mut SolveTrace,
) -> Result<RunOutcome> {
    cfg.validate()?;
    check_dim(p.dim(), x0.len())?;
    let n = p.dim();
    let restart_every = cfg.cg_restart.unwrap_or(n).max(1);
    let x0 = x0.normalize();
    let ax0 = p.a().apply(&x0)?;
    let mut st = State {
        x: x0,
        ax: ax0,
        exact: true,
    };
    trace.run_starts.push(trace.records.len());
    let mut prev: Option<(DVector<f64>, DVector<f64>, f64)> = None; // (grad, dir, g(grad, grad))
    let mut since_restart = 0usize;
    let mut last_step = 0.0;
    let mut k = 0usize;
    loop {
        let ev = p.evaluate_with(&st.x, st.ax.clone());
        let metric = m.at_mu(&st.x, ev.mu)?;
        let egrad = &ev.ax + p.b();
        let grad = metric.riemannian_gradient(&st.x, &egrad)?;
        let gg = metric.inner(&grad, &grad).max(0.0);
        let gnorm = gg.sqrt();
        let rnorm = (&st.x * ev.mu - &egrad).norm();
        let converged = gnorm <= cfg.tol_grad && rnorm <= res_tol;
        if converged && !st.exact {
            st.ax = p.a().apply(&st.x)?;
            st.exact = true;
            continue;
        }
        trace.push(ev.q, gnorm, rnorm, last_step);
        if cfg.keep_iterates {
            trace.iterates.push(st.x.clone());
        }
        let outcome = |status| RunOutcome {
            x: st.x.clone(),
            mu: ev.mu,
            q: ev.q,
            status,
            iterations: k,
            grad_norm: gnorm,
            res_norm: rnorm,
        };
        if converged {
            return Ok(outcome(SolveStatus::Converged));
        }
        if k >= cfg.max_iter {
            return Ok(outcome(SolveStatus::MaxIter));
        }
        let steepest = || (-&grad, -gg);
        let (d, slope) = match (direction, &prev) {
            (Direction::Conjugate, Some((g_prev, d_prev, gg_prev))) if since_restart < restart_every => {
                let tg = metric.project(&st.x, g_prev);
                let td = metric.project(&st.x, d_prev);
                let beta = (metric.inner(&grad, &(&grad - &tg)) / gg_prev).max(0.0);
                let mut d = -&grad;
                d.axpy(beta, &td, 1.0);
                let slope = metric.inner(&grad, &d);
                if slope < 0.0 && beta.is_finite() {
                    (d, slope)
                } else {
                    since_restart = 0;
                    steepest()
                }
            }
            _ => {
                since_restart = 0;
                steepest()
            }
        };
        let ad = p.a().apply(&d)?;
        let model = LineModel::new(&st.x, &st.ax, &d, &ad, p.b());
        let t0 = match direction {
            Direction::Steepest if cfg.step_cap_enabled => cap_step(p),
            _ => model_step(&model, slope, &d).unwrap_or_else(|| cap_step(p)),
        };
        let t = match backtrack(&model, slope, t0, cfg) {
            Ok((t, _)) => t,
            Err(Error::Stalled { .. }) => return Ok(outcome(SolveStatus::Failed("stalled".into()))),
            Err(e) => return Err(e),
        };
        let mut y = st.x.clone();
        y.axpy(t, &d, 1.0);
        let mut ay = st.ax.clone();
        ay.axpy(t, &ad, 1.0);
        let nrm = y.norm();
        y /= nrm;
        ay /= nrm;
        k += 1;
        trace.steps += 1;
        since_restart += 1;
        last_step = t;
        prev = Some((grad, d, gg));
        st.x = y;
        if k % REFRESH_EVERY == 0 {
            st.ax = p.a().apply(&st.x)?;
            st.exact = true;
        } else {
            st.ax = ay;
            st.exact = false;
        }
    }
}

fn default_res_tol(p: &BtrsProblem, cfg: &SolverConfig) -> f64 {
    cfg.tol_res * p.b_norm().max(1.0)
}

fn finish(run: RunOutcome, trace: SolveTrace, case: Option<CaseKind>) -> SolveResult {
    SolveResult {
        x: run.x,
        mu: run.mu,
        q: run.q,
        status: run.status,
        iterations: run.iterations,
        grad_norm: run.grad_norm,
        res_norm: run.res_norm,
        case,
        trace,
    }
}

fn single_run(
    m: &MetricScheme,
    p: &BtrsProblem,
    x0: &DVector<f64>,
    cfg: &SolverConfig,
    direction: Direction,
) -> Result<SolveResult> {
    let mut trace = SolveTrace::new();
    let run = descend(m, p, x0, cfg, direction, default_res_tol(p, cfg), &mut trace)?;
    Ok(finish(run, trace, None))
}

/// Riemannian gradient descent in the standard geometry.
pub fn naive_rgd(p: &BtrsProblem, x0: &DVector<f64>, cfg: &SolverConfig) -> Result<SolveResult> {
    single_run(&MetricScheme::Standard, p, x0, cfg, Direction::Steepest)
}

/// Riemannian gradient descent under the metric `m`.
pub fn rgd(m: &MetricScheme, p: &BtrsProblem, x0: &DVector<f64>, cfg: &SolverConfig) -> Result<SolveResult> {
    single_run(m, p, x0, cfg, Direction::Steepest)
}

/// Riemannian conjugate gradients (Polak–Ribière+, projection transport)
/// under the metric `m`.
pub fn rcg(m: &MetricScheme, p: &BtrsProblem, x0: &DVector<f64>, cfg: &SolverConfig) -> Result<SolveResult> {
    single_run(m, p, x0, cfg, Direction::Conjugate)
}

/// `-b/‖b‖`, the starting point inside `S_E`.
pub fn se_start(p: &BtrsProblem) -> Option<DVector<f64>> {
    (p.b_norm() > 0.0).then(|| -p.b() / p.b_norm())
}

/// Gradient descent from `-b/‖b‖` and from a uniformly random point,
/// returning the run with the lower objective.
pub fn double_start(p: &BtrsProblem, cfg: &SolverConfig) -> Result<SolveResult> {
    cfg.validate()?;
    let m = MetricScheme::Standard;
    let res_tol = default_res_tol(p, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let random_x0 = haar_point(p.dim(), &mut rng);
    let mut trace = SolveTrace::new();
    let first = match se_start(p) {
        Some(x0) => Some(descend(&m, p, &x0, cfg, Direction::Steepest, res_tol, &mut trace)?),
        None => None,
    };
    if first.is_some() {
        trace.mark(RestartKind::ColdStart);
    }
    let second = descend(&m, p, &random_x0, cfg, Direction::Steepest, res_tol, &mut trace)?;
    let chosen = match first {
        None => second,
        Some(first) => pick_better(first, second),
    };
    let total = trace.steps;
    let mut out = finish(chosen, trace, None);
    out.iterations = total;
    Ok(out)
}

fn pick_better(se: RunOutcome, random: RunOutcome) -> RunOutcome {
    let failed = |r: &RunOutcome| matches!(r.status, SolveStatus::Failed(_));
    match (failed(&se), failed(&random)) {
        (false, true) => return se,
        (true, false) => return random,
        _ => {}
    }
    if random.q < se.q - 1e-14 * se.q.abs().max(1.0) {
        random
    } else {
        se
    }
}

/// `x - 2(uᵀx)u`, the reflection across the hyperplane orthogonal to `u`.
pub fn lpr_transform(x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim(x.len(), u.len())?;
    let c = 2.0 * u.dot(x);
    let mut y = x.clone();
    y.axpy(-c, u, 1.0);
    Ok(y)
}

/// Options for [`lpr_solve_with`].
#[derive(Clone, Debug, Default)]
pub struct LprOptions {
    /// Starting point for the easy branch; `-b/‖b‖` by default.
    pub x0: Option<DVector<f64>>,
    /// Easy/hard threshold; [`EPS_HARD`] by default.
    pub eps_hard: Option<f64>,
}

/// Eigenvector-assisted solver: classify, then run `inner` under `m`,
/// reflecting across the minimal eigenvector until `μ_x < λ_min(A)`.
pub fn lpr_solve(p: &BtrsProblem, m: &MetricScheme, inner: InnerSolver, cfg: &SolverConfig) -> Result<SolveResult> {
    lpr_solve_with(p, m, inner, cfg, &LprOptions::default())
}

pub fn lpr_solve_with(
    p: &BtrsProblem,
    m: &MetricScheme,
    inner: InnerSolver,
    cfg: &SolverConfig,
    opts: &LprOptions,
) -> Result<SolveResult> {
    cfg.validate()?;
    let direction = match inner {
        InnerSolver::Rgd => Direction::Steepest,
        InnerSolver::Rcg => Direction::Conjugate,
    };
    let eig = min_eigpair_default(p.a(), cfg.rng_seed ^ EIG_SEED_SALT)?;
    let info = p.classify(&eig, opts.eps_hard.unwrap_or(EPS_HARD))?;
    let mut trace = SolveTrace::new();
    let base_tol = default_res_tol(p, cfg);
    if info.kind == CaseKind::Hard {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        let x0 = haar_point(p.dim(), &mut rng);
        let run = descend(m, p, &x0, cfg, direction, base_tol, &mut trace)?;
        let total = trace.steps;
        let mut out = finish(run, trace, Some(CaseKind::Hard));
        out.iterations = total;
        return Ok(out);
    }
    let res_tol = base_tol.min(0.5 * info.alpha);
    let mut x = match &opts.x0 {
        Some(x0) => {
            check_dim(p.dim(), x0.len())?;
            x0.normalize()
        }
        None => se_start(p).expect("easy case implies b != 0"),
    };
    let u_dot_b = info.u.dot(p.b());
    let mut restarts = 0;
    loop {
        let run = descend(m, p, &x, cfg, direction, res_tol, &mut trace)?;
        if run.status != SolveStatus::Converged || run.mu < info.lambda_min {
            let status = match run.status {
                SolveStatus::Converged if restarts > 0 => SolveStatus::LprRestarts(restarts),
                ref s => s.clone(),
            };
            let total = trace.steps;
            let mut out = finish(run, trace, Some(CaseKind::Easy));
            out.status = status;
            out.iterations = total;
            return Ok(out);
        }
        if restarts == MAX_LPR_RESTARTS {
            let total = trace.steps;
            let mut out = finish(run, trace, Some(CaseKind::Easy));
            out.status = SolveStatus::Failed("pathological".into());
            out.iterations = total;
            return Ok(out);
        }
        let reflected = lpr_transform(&run.x, &info.u)?;
        let q_after = p.evaluate(&reflected)?.q;
        trace.lpr_events.push(LprEvent {
            q_before: run.q,
            q_after,
            mu_before: run.mu,
            res_before: run.res_norm,
            alpha: info.alpha,
            u_dot_b,
            u_dot_x: info.u.dot(&run.x),
        });
        trace.mark(RestartKind::Lpr);
        restarts += 1;
        x = reflected;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linop::SymOp;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn vec(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    fn diag_problem(d: &[f64], b: &[f64]) -> BtrsProblem {
        BtrsProblem::new(SymOp::diagonal(vec(d)).unwrap(), vec(b)).unwrap()
    }

    #[test]
    fn line_model_matches_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 7;
        let g = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng));
        let p = BtrsProblem::new(
            SymOp::dense(&g + g.transpose()).unwrap(),
            DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng)),
        )
        .unwrap();
        let x = haar_point(n, &mut rng);
        let v = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        let d = &v - &x * x.dot(&v);
        let ax = p.a().apply(&x).unwrap();
        let ad = p.a().apply(&d).unwrap();
        let model = LineModel::new(&x, &ax, &d, &ad, p.b());
        for &t in &[1e-3, 0.1, 0.7, 2.0] {
            let y = crate::geometry::retract_dir(&x, &d, t);
            let direct = p.objective(&y).unwrap() - p.objective(&x).unwrap();
            assert_relative_eq!(model.decrease(t), direct, epsilon = 1e-12);
        }
        // second-order model
        let t = 1e-4;
        let slope = (&ax + p.b()).dot(&d);
        let pred = t * slope + 0.5 * t * t * model.curvature();
        assert!((model.decrease(t) - pred).abs() <= 1e-10);
    }

    #[test]
    fn armijo_decreases_objective() {
        let p = diag_problem(&[1.0, 3.0], &[1.0, 1.0]);
        let x = vec(&[1.0, 0.0]);
        let g = crate::geometry::rgrad(&MetricScheme::Standard, &p, &x).unwrap();
        let cfg = SolverConfig::default();
        let (t, y) = armijo_step(&MetricScheme::Standard, &p, &x, &g, &cfg).unwrap();
        assert!(t <= 1.0 / 2f64.sqrt());
        let drop = p.objective(&x).unwrap() - p.objective(&y).unwrap();
        assert!(drop >= cfg.armijo_c * t * g.dir.norm_squared());
        assert_relative_eq!(y.norm(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn rejects_invalid_armijo_parameters() {
        let cfg = SolverConfig {
            armijo_tau: 1.0,
            ..SolverConfig::default()
        };
        assert!(cfg.validate().is_err());
        let p = diag_problem(&[1.0, 3.0], &[1.0, 1.0]);
        assert!(naive_rgd(&p, &vec(&[1.0, 0.0]), &cfg).is_err());
    }

    #[test]
    fn cap_without_linear_term() {
        let p = diag_problem(&[1.0, 3.0], &[0.0, 0.0]);
        assert_relative_eq!(cap_step(&p), 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn rgd_eigenvector_when_b_is_zero() {
        let p = diag_problem(&[1.0, 3.0], &[0.0, 0.0]);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let r = naive_rgd(&p, &vec(&[s, s]), &SolverConfig::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Converged);
        assert_relative_eq!(r.q, 0.5, epsilon = 1e-12);
        assert_relative_eq!(r.x[0].abs(), 1.0, epsilon = 1e-8);
    }

    #[test]
    fn stationary_start_returns_immediately() {
        let p = diag_problem(&[1.0, 3.0], &[0.0, 0.0]);
        let r = naive_rgd(&p, &vec(&[0.0, 1.0]), &SolverConfig::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Converged);
        assert_eq!(r.iterations, 0);
        assert_eq!(r.trace.records.len(), 1);
    }

    #[test]
    fn max_iter_status() {
        let p = diag_problem(&[1.0, 3.0, 7.0], &[1.0, 1.0, 1.0]);
        let cfg = SolverConfig {
            max_iter: 2,
            ..SolverConfig::default()
        };
        let r = naive_rgd(&p, &vec(&[0.0, 0.0, 1.0]), &cfg).unwrap();
        assert_eq!(r.status, SolveStatus::MaxIter);
        assert_eq!(r.iterations, 2);
    }

    #[test]
    fn double_start_without_linear_term() {
        let p = diag_problem(&[2.0, -1.0, 4.0], &[0.0, 0.0, 0.0]);
        let r = double_start(&p, &SolverConfig::default()).unwrap();
        assert!(r.status.is_converged());
        assert_relative_eq!(r.q, -0.5, epsilon = 1e-12);
        assert!(r.trace.markers.is_empty());
    }

    #[test]
    fn double_start_marks_second_run() {
        let p = diag_problem(&[1.0, 3.0], &[1.0, 1.0]);
        let r = double_start(&p, &SolverConfig::default()).unwrap();
        assert_eq!(r.trace.markers.len(), 1);
        assert_eq!(r.trace.markers[0].kind, RestartKind::ColdStart);
        assert_eq!(r.trace.runs().len(), 2);
    }

    #[test]
    fn lpr_transform_examples() {
        let x = vec(&[0.6, 0.8]);
        let e1 = vec(&[1.0, 0.0]);
        assert_relative_eq!(lpr_transform(&x, &e1).unwrap(), vec(&[-0.6, 0.8]), epsilon = 1e-15);
        let x = vec(&[0.0, 1.0]);
        assert_eq!(lpr_transform(&x, &e1).unwrap(), x);
    }

    #[test]
    fn csv_trace_layout() {
        let p = diag_problem(&[1.0, 3.0], &[1.0, 1.0]);
        let r = double_start(&p, &SolverConfig::default()).unwrap();
        let mut buf = Vec::new();
        r.trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "iter,q,grad_norm,res_norm,step,elapsed_s,marker");
        assert_eq!(text.lines().count(), r.trace.records.len() + 1);
        assert_eq!(text.matches(",ColdStart").count(), 1);
    }

    #[test]
    fn lpr_solve_easy_diagonal() {
        let p = diag_problem(&[1.0, 3.0], &[1.0, 1.0]);
        for inner in [InnerSolver::Rgd, InnerSolver::Rcg] {
            let r = lpr_solve(&p, &MetricScheme::Standard, inner, &SolverConfig::default()).unwrap();
            assert!(r.status.is_converged());
            assert_eq!(r.case, Some(CaseKind::Easy));
            assert!(r.mu < 1.0);
        }
    }

    #[test]
    fn lpr_solve_reflects_from_wrong_basin() {
        // Start at the stationary point near +e1 where mu > lambda_min.
        let p = diag_problem(&[-1.0, 2.0], &[0.1, 0.0]);
        let opts = LprOptions {
            x0: Some(vec(&[1.0, 0.0])),
            eps_hard: None,
        };
        let r = lpr_solve_with(&p, &MetricScheme::Standard, InnerSolver::Rgd, &SolverConfig::default(), &opts).unwrap();
        assert_eq!(r.status, SolveStatus::LprRestarts(1));
        let ev = r.trace.lpr_events[0];
        assert!(ev.q_after < ev.q_before);
        assert_relative_eq!(ev.q_before - ev.q_after, 2.0 * ev.u_dot_b * ev.u_dot_x, epsilon = 1e-12);
        assert!(r.mu < -1.0);
        assert_relative_eq!(r.x[0], -1.0, epsilon = 1e-8);
    }

    fn random_problem(seed: u64, n: usize) -> (BtrsProblem, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng));
        let b = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        (BtrsProblem::new(SymOp::dense(&g + g.transpose()).unwrap(), b).unwrap(), rng)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn descent_is_monotone(seed in 0u64..10_000, n in 2usize..20, cg in any::<bool>()) {
            let (p, mut rng) = random_problem(seed, n);
            let x0 = haar_point(n, &mut rng);
            let cfg = SolverConfig { max_iter: 300, ..SolverConfig::default() };
            let r = if cg {
                rcg(&MetricScheme::Standard, &p, &x0, &cfg).unwrap()
            } else {
                naive_rgd(&p, &x0, &cfg).unwrap()
            };
            for w in r.trace.records.windows(2) {
                prop_assert!(w[1].q <= w[0].q + 1e-14 * (1.0 + w[0].q.abs()));
            }
        }

        #[test]
        fn lpr_reflection_identity(seed in 0u64..10_000, n in 2usize..20) {
            let (p, mut rng) = random_problem(seed, n);
            let x = haar_point(n, &mut rng);
            let u = haar_point(n, &mut rng);
            let y = lpr_transform(&x, &u).unwrap();
            prop_assert!((y.norm() - 1.0).abs() <= 1e-14);
            let lhs = p.objective(&x).unwrap() - p.objective(&y).unwrap();
            let rhs = 2.0 * u.dot(p.b()) * u.dot(&x) ;
            // holds exactly when u is an eigenvector; check the general form
            let au = p.a().apply(&u).unwrap();
            let general = rhs + 2.0 * u.dot(&x) * (x.dot(&au) - u.dot(&x) * u.dot(&au));
            prop_assert!((lhs - general).abs() <= 1e-11 * (1.0 + lhs.abs()));
        }

        #[test]
        fn converged_means_small_residual(seed in 0u64..10_000, n in 2usize..20) {
            let (p, _) = random_problem(seed, n);
            let cfg = SolverConfig::default();
            let r = double_start(&p, &cfg).unwrap();
            if r.status.is_converged() {
                prop_assert!(p.residual(&r.x, r.mu).unwrap().norm() <= cfg.tol_res * p.b_norm().max(1.0));
            }
        }
    }
}

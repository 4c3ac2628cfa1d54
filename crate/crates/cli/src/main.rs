//! `trsr`: generate, solve and benchmark boundary trust region problems.

mod bench;
mod manifest;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use trsr_core::geometry::haar_point;
use trsr_core::io::{parse_problem, write_problem};
use trsr_core::solvers::se_start;
use trsr_core::{
    build_eig_seed, double_start, enumerate_affine_eigenvalues, generate, lpr_solve, rcg, rgd, solve_trs, BtrsProblem,
    GenSpec, InnerSolver, MetricScheme, SolveResult, SolveStatus, SolverConfig, TrsStrategy,
};

use crate::manifest::RunManifest;

#[derive(Parser)]
#[command(name = "trsr", version, about = "Riemannian solvers for trust region subproblems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a random instance with a planted solution.
    Generate(GenerateArgs),
    /// Solve min ½xᵀAx + bᵀx on the unit sphere.
    Solve(SolveArgs),
    /// Solve the ball-constrained problem ‖x‖ ≤ 1.
    Trs(TrsArgs),
    /// Dense reference solution with all affine eigenvalues.
    Oracle(OracleArgs),
    /// Sweep solvers over generated instances.
    Bench(bench::BenchArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    n: usize,
    /// λ_min(A) - μ⋆; zero plants a hard case.
    #[arg(long, default_value_t = 1e-2)]
    gap: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.75)]
    noise_frac: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum SolverKind {
    Rgd,
    DoubleStart,
    Rcg,
    Lpr,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum InnerKind {
    Rgd,
    Rcg,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum PrecondKind {
    None,
    Eigseed,
}

#[derive(Args, Debug, Serialize)]
struct SolveOpts {
    #[arg(long, value_enum, default_value_t = SolverKind::Lpr)]
    solver: SolverKind,
    /// Inner iteration used by `lpr`.
    #[arg(long, value_enum, default_value_t = InnerKind::Rcg)]
    inner: InnerKind,
    #[arg(long, value_enum, default_value_t = PrecondKind::None)]
    precond: PrecondKind,
    #[arg(long, default_value_t = 50)]
    rank: usize,
    #[arg(long, default_value_t = 10)]
    oversample: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 10_000)]
    max_iter: usize,
    /// Write the per-iteration CSV here and a manifest next to it.
    #[arg(long)]
    trace: Option<PathBuf>,
}

impl SolveOpts {
    fn config(&self) -> SolverConfig {
        SolverConfig {
            tol_grad: self.tol,
            tol_res: self.tol,
            max_iter: self.max_iter,
            rng_seed: self.seed,
            ..SolverConfig::default()
        }
    }

    fn metric(&self, p: &BtrsProblem) -> Result<MetricScheme> {
        Ok(match self.precond {
            PrecondKind::None => MetricScheme::Standard,
            PrecondKind::Eigseed => {
                let seed = build_eig_seed(p.a(), self.rank, self.oversample, self.seed)
                    .context("building eigen seed preconditioner")?;
                MetricScheme::seeded(seed, p)
            }
        })
    }
}

#[derive(Args)]
struct SolveArgs {
    problem: PathBuf,
    #[command(flatten)]
    opts: SolveOpts,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum StrategyKind {
    AlwaysAugment,
    Decide,
}

#[derive(Args)]
struct TrsArgs {
    problem: PathBuf,
    #[arg(long, value_enum, default_value_t = StrategyKind::Decide)]
    strategy: StrategyKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 10_000)]
    max_iter: usize,
}

#[derive(Args)]
struct OracleArgs {
    problem: PathBuf,
}

fn load(path: &Path) -> Result<(BtrsProblem, Vec<u8>)> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let text = std::str::from_utf8(&bytes).with_context(|| format!("{} is not UTF-8", path.display()))?;
    let p = parse_problem(text).with_context(|| format!("parsing {}", path.display()))?;
    Ok((p, bytes))
}

fn print_json(v: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn status_code(s: &SolveStatus) -> ExitCode {
    match s {
        SolveStatus::Converged | SolveStatus::LprRestarts(_) => ExitCode::SUCCESS,
        SolveStatus::MaxIter => ExitCode::from(2),
        SolveStatus::Failed(_) => ExitCode::FAILURE,
    }
}

fn start_point(p: &BtrsProblem, seed: u64) -> nalgebra::DVector<f64> {
    se_start(p).unwrap_or_else(|| haar_point(p.dim(), &mut ChaCha8Rng::seed_from_u64(seed)))
}

fn run_solver(p: &BtrsProblem, opts: &SolveOpts) -> Result<SolveResult> {
    let cfg = opts.config();
    let m = opts.metric(p)?;
    let r = match opts.solver {
        SolverKind::Rgd => rgd(&m, p, &start_point(p, opts.seed), &cfg)?,
        SolverKind::Rcg => rcg(&m, p, &start_point(p, opts.seed), &cfg)?,
        SolverKind::DoubleStart => {
            if !m.is_standard() {
                bail!("double-start runs in the standard metric; drop --precond");
            }
            double_start(p, &cfg)?
        }
        SolverKind::Lpr => {
            let inner = match opts.inner {
                InnerKind::Rgd => InnerSolver::Rgd,
                InnerKind::Rcg => InnerSolver::Rcg,
            };
            lpr_solve(p, &m, inner, &cfg)?
        }
    };
    Ok(r)
}

/// `trace.csv` → `trace.manifest.json`.
fn manifest_path(trace: &Path) -> PathBuf {
    trace.with_extension("manifest.json")
}

fn cmd_generate(args: &GenerateArgs) -> Result<ExitCode> {
    let spec = GenSpec {
        noise_frac: args.noise_frac,
        ..GenSpec::new(args.n, args.gap, args.seed)
    };
    let (p, planted) = generate(&spec)?;
    write_problem(&args.out, &p).with_context(|| format!("writing {}", args.out.display()))?;
    let sidecar = args.out.with_extension("planted.json");
    #[derive(Serialize)]
    struct Planted<'a> {
        spec: &'a GenSpec,
        mu: f64,
        q: f64,
        x: &'a [f64],
    }
    let x = planted.vector();
    let record = Planted {
        spec: &spec,
        mu: planted.mu,
        q: p.objective(&x)?,
        x: &planted.x,
    };
    fs::write(&sidecar, serde_json::to_string_pretty(&record)?)
        .with_context(|| format!("writing {}", sidecar.display()))?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_solve(args: &SolveArgs) -> Result<ExitCode> {
    let (p, bytes) = load(&args.problem)?;
    let r = run_solver(&p, &args.opts)?;
    if let Some(path) = &args.opts.trace {
        let w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
        r.trace.write_csv(w)?;
        RunManifest::new(&args.opts, Some(&bytes))?.write(&manifest_path(path))?;
    }
    print_json(&r.summary())?;
    Ok(status_code(&r.status))
}

fn cmd_trs(args: &TrsArgs) -> Result<ExitCode> {
    let (p, _) = load(&args.problem)?;
    let cfg = SolverConfig {
        tol_grad: args.tol,
        tol_res: args.tol,
        max_iter: args.max_iter,
        rng_seed: args.seed,
        ..SolverConfig::default()
    };
    let strategy = match args.strategy {
        StrategyKind::AlwaysAugment => TrsStrategy::AlwaysAugment,
        StrategyKind::Decide => TrsStrategy::Decide,
    };
    let r = solve_trs(&p, &cfg, strategy)?;
    print_json(&r)?;
    Ok(status_code(&r.status))
}

fn cmd_oracle(args: &OracleArgs) -> Result<ExitCode> {
    let (p, _) = load(&args.problem)?;
    let report = enumerate_affine_eigenvalues(&p)?;
    print_json(&report)?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out = match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Trs(a) => cmd_trs(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Bench(a) => bench::run(a),
    };
    match out {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

//! Parameter sweep over generated instances.
//!
//! Layout of `--out`:
//! - `traces/<solver>_gap<gap>_seed<seed>.csv`, one per run;
//! - `runs.csv`, one row per run (errors included);
//! - `summary.csv`, medians per (solver, gap);
//! - `manifest.json`.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::Args;
use rayon::prelude::*;
use serde::Serialize;

use trsr_core::{build_eig_seed, generate, lpr_solve, CaseKind, GenSpec, InnerSolver, MetricScheme, SolverConfig};

use crate::manifest::RunManifest;

#[derive(Args, Debug, Serialize)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, value_delimiter = ',', default_value = "1e-2,1e-4,1e-6")]
    gaps: Vec<f64>,
    /// Number of instances per gap, seeded `0..seeds`.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    /// Comma-separated subset of `rgd,rcg,prc-rgd,prc-rcg`.
    #[arg(long, default_value = "rgd,rcg,prc-rgd,prc-rcg")]
    solvers: String,
    #[arg(long, default_value_t = 50)]
    rank: usize,
    #[arg(long, default_value_t = 10)]
    oversample: usize,
    #[arg(long, default_value_t = 20_000)]
    max_iter: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
enum BenchSolver {
    Rgd,
    Rcg,
    PrcRgd,
    PrcRcg,
}

impl BenchSolver {
    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "rgd" => Self::Rgd,
            "rcg" => Self::Rcg,
            "prc-rgd" => Self::PrcRgd,
            "prc-rcg" => Self::PrcRcg,
            other => bail!("unknown solver `{other}` (expected rgd, rcg, prc-rgd or prc-rcg)"),
        })
    }

    fn name(self) -> &'static str {
        match self {
            Self::Rgd => "rgd",
            Self::Rcg => "rcg",
            Self::PrcRgd => "prc-rgd",
            Self::PrcRcg => "prc-rcg",
        }
    }

    fn inner(self) -> InnerSolver {
        match self {
            Self::Rgd | Self::PrcRgd => InnerSolver::Rgd,
            Self::Rcg | Self::PrcRcg => InnerSolver::Rcg,
        }
    }

    fn preconditioned(self) -> bool {
        matches!(self, Self::PrcRgd | Self::PrcRcg)
    }
}

fn parse_solvers(list: &str) -> Result<Vec<BenchSolver>> {
    let solvers = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(BenchSolver::parse)
        .collect::<Result<Vec<_>>>()?;
    if solvers.is_empty() {
        bail!("--solvers must name at least one solver");
    }
    Ok(solvers)
}

#[derive(Debug, Serialize)]
struct RunRow {
    solver: &'static str,
    gap: f64,
    seed: u64,
    status: String,
    iterations: Option<usize>,
    seconds: f64,
    rel_error: Option<f64>,
    case_agrees: Option<bool>,
}

#[derive(Debug, Serialize)]
struct SummaryRow {
    solver: &'static str,
    gap: f64,
    runs: usize,
    median_iterations: Option<f64>,
    median_seconds: Option<f64>,
    median_rel_error: Option<f64>,
    failures: usize,
    case_agreement: usize,
}

fn trace_name(solver: BenchSolver, gap: f64, seed: u64) -> String {
    format!("{}_gap{gap:e}_seed{seed}.csv", solver.name())
}

fn one_run(args: &BenchArgs, solver: BenchSolver, gap: f64, seed: u64, traces: &Path) -> Result<RunRow> {
    let (p, planted) = generate(&GenSpec::new(args.n, gap, seed))?;
    let q_ref = p.objective(&planted.vector())?;
    let cfg = SolverConfig {
        max_iter: args.max_iter,
        rng_seed: seed,
        ..SolverConfig::default()
    };
    let start = Instant::now();
    let m = if solver.preconditioned() {
        MetricScheme::seeded(build_eig_seed(p.a(), args.rank, args.oversample, seed)?, &p)
    } else {
        MetricScheme::Standard
    };
    let r = lpr_solve(&p, &m, solver.inner(), &cfg)?;
    let seconds = start.elapsed().as_secs_f64();
    let path = traces.join(trace_name(solver, gap, seed));
    r.trace.write_csv(BufWriter::new(File::create(&path)?))?;
    let planted_case = if gap == 0.0 { CaseKind::Hard } else { CaseKind::Easy };
    Ok(RunRow {
        solver: solver.name(),
        gap,
        seed,
        status: format!("{:?}", r.status),
        iterations: Some(r.iterations),
        seconds,
        rel_error: Some((r.q - q_ref).abs() / q_ref.abs().max(1.0)),
        case_agrees: r.case.map(|c| c == planted_case),
    })
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[k] } else { 0.5 * (v[k - 1] + v[k]) })
}

fn summarize(rows: &[RunRow], solvers: &[BenchSolver], gaps: &[f64]) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    for &s in solvers {
        for &g in gaps {
            let group: Vec<&RunRow> = rows.iter().filter(|r| r.solver == s.name() && r.gap == g).collect();
            let ok: Vec<&&RunRow> = group
                .iter()
                .filter(|r| r.status == "Converged" || r.status.starts_with("LprRestarts"))
                .collect();
            out.push(SummaryRow {
                solver: s.name(),
                gap: g,
                runs: group.len(),
                median_iterations: median(ok.iter().filter_map(|r| r.iterations).map(|i| i as f64).collect()),
                median_seconds: median(ok.iter().map(|r| r.seconds).collect()),
                median_rel_error: median(ok.iter().filter_map(|r| r.rel_error).collect()),
                failures: group.len() - ok.len(),
                case_agreement: group.iter().filter(|r| r.case_agrees == Some(true)).count(),
            });
        }
    }
    out
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let threads = match std::env::var("TRSR_THREADS") {
        Ok(v) => v.parse().with_context(|| format!("TRSR_THREADS = {v:?} is not a count"))?,
        Err(_) => 0,
    };
    Ok(rayon::ThreadPoolBuilder::new().num_threads(threads).build()?)
}

pub fn run(args: &BenchArgs) -> Result<ExitCode> {
    let solvers = parse_solvers(&args.solvers)?;
    if args.gaps.iter().any(|g| !(*g >= 0.0)) {
        bail!("--gaps must be non-negative");
    }
    let traces = args.out.join("traces");
    fs::create_dir_all(&traces).with_context(|| format!("creating {}", traces.display()))?;

    let mut jobs = Vec::new();
    for &s in &solvers {
        for &g in &args.gaps {
            for seed in 0..args.seeds {
                jobs.push((s, g, seed));
            }
        }
    }
    let rows: Vec<RunRow> = thread_pool()?.install(|| {
        jobs.par_iter()
            .map(|&(s, g, seed)| {
                one_run(args, s, g, seed, &traces).unwrap_or_else(|e| {
                    eprintln!("{} gap {g:e} seed {seed}: {e:#}", s.name());
                    RunRow {
                        solver: s.name(),
                        gap: g,
                        seed,
                        status: format!("error: {e:#}"),
                        iterations: None,
                        seconds: 0.0,
                        rel_error: None,
                        case_agrees: None,
                    }
                })
            })
            .collect()
    });

    write_csv(&args.out.join("runs.csv"), &rows)?;
    let summary = summarize(&rows, &solvers, &args.gaps);
    write_csv(&args.out.join("summary.csv"), &summary)?;
    RunManifest::new(args, None)?.write(&args.out.join("manifest.json"))?;
    for s in &summary {
        println!(
            "{:<8} gap {:<8e} runs {:>3} failures {:>3} median iters {}",
            s.solver,
            s.gap,
            s.runs,
            s.failures,
            s.median_iterations.map_or("-".into(), |v| format!("{v}"))
        );
    }
    Ok(ExitCode::SUCCESS)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solver_list_parsing() {
        assert_eq!(parse_solvers("rgd, prc-rcg").unwrap(), vec![BenchSolver::Rgd, BenchSolver::PrcRcg]);
        assert!(parse_solvers("").is_err());
        assert!(parse_solvers(" , ").is_err());
        assert!(parse_solvers("newton").unwrap_err().to_string().contains("newton"));
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(vec![4.0, 1.0]), Some(2.5));
        assert_eq!(median(vec![]), None);
    }
}

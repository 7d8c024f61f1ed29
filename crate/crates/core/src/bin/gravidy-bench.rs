use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::error::ErrorKind;
use clap::Parser;

use gravidy::bench::{
    run_experiment, write_csv, write_summary_json, ExperimentSpec, Geometry, InnerId, MethodId,
};
use gravidy::GravidyError;

/// Run a benchmark sweep over methods and seeds and write per-iteration CSV
/// rows plus a JSON summary.
#[derive(Debug, Parser)]
#[command(name = "gravidy-bench", version)]
struct Cli {
    /// pos, simplex, box or stiefel.
    #[arg(long)]
    geometry: String,
    /// Comma-separated methods, e.g. `gravidy,pgd-nesterov` or `gravidy-newton`.
    /// `all` selects every method available on the geometry.
    #[arg(long, default_value = "gravidy")]
    method: String,
    /// Inner solver for a bare `gravidy` method.
    #[arg(long)]
    inner: Option<String>,
    #[arg(long, default_value_t = 50)]
    n: usize,
    /// Rows of A (vector geometries); defaults to n.
    #[arg(long)]
    m: Option<usize>,
    /// Columns of X (stiefel).
    #[arg(long, default_value_t = 2)]
    p: usize,
    #[arg(long, default_value_t = 100.0)]
    eta: f64,
    /// Seeds as a list and/or ranges, e.g. `0-9` or `1,4,7`.
    #[arg(long, default_value = "0-9")]
    seeds: String,
    #[arg(long, default_value_t = 1000)]
    max_outer: usize,
    /// Wall-clock budget per run, in seconds.
    #[arg(long)]
    time_budget: Option<f64>,
    #[arg(long, default_value_t = 1e-8)]
    kkt_tol: f64,
    /// Condition number of each Q block (stiefel).
    #[arg(long, default_value_t = 100.0)]
    cond: f64,
    /// Fraction of nonzeros in the NNLS ground truth.
    #[arg(long, default_value_t = 0.2)]
    sparsity: f64,
    /// Fraction of ground-truth coordinates on a bound (box).
    #[arg(long, default_value_t = 0.3)]
    active_frac: f64,
    /// CSV output path; `-` writes to stdout.
    #[arg(long, default_value = "-")]
    out: PathBuf,
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Keep every k-th iteration row (the last row of each run is always kept).
    #[arg(long, default_value_t = 1)]
    trace_every: usize,
}

fn parse_seeds(s: &str) -> Result<Vec<u64>, GravidyError> {
    let bad = || GravidyError::Spec(format!("bad seed list `{s}`"));
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let a: u64 = a.parse().map_err(|_| bad())?;
                let b: u64 = b.parse().map_err(|_| bad())?;
                if a > b {
                    return Err(bad());
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| bad())?),
        }
    }
    if out.is_empty() {
        return Err(bad());
    }
    Ok(out)
}

fn parse_methods(
    s: &str,
    inner: Option<InnerId>,
    geometry: Geometry,
) -> Result<Vec<MethodId>, GravidyError> {
    if s == "all" {
        let mut all: Vec<MethodId> = geometry
            .inners()
            .iter()
            .map(|i| MethodId::Gravidy(*i))
            .collect();
        all.extend_from_slice(geometry.baselines());
        return Ok(all);
    }
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| MethodId::parse_with_inner(p, inner, geometry))
        .collect()
}

fn build_spec(cli: &Cli) -> Result<ExperimentSpec, GravidyError> {
    let geometry: Geometry = cli.geometry.parse()?;
    let inner = cli
        .inner
        .as_deref()
        .map(str::parse::<InnerId>)
        .transpose()?;
    if let Some(i) = inner {
        if !geometry.inners().contains(&i) {
            return Err(GravidyError::Spec(format!(
                "inner solver `{i}` is not available on `{geometry}`"
            )));
        }
    }
    let time_budget = match cli.time_budget {
        Some(t) if t > 0.0 && t.is_finite() => Some(Duration::from_secs_f64(t)),
        Some(t) => return Err(GravidyError::Spec(format!("bad time budget {t}"))),
        None => None,
    };
    let spec = ExperimentSpec {
        n: cli.n,
        m: cli.m,
        p: cli.p,
        eta: cli.eta,
        seeds: parse_seeds(&cli.seeds)?,
        max_outer: cli.max_outer,
        time_budget,
        kkt_tol: cli.kkt_tol,
        cond: cli.cond,
        sparsity: cli.sparsity,
        active_frac: cli.active_frac,
        trace_every: cli.trace_every,
        ..ExperimentSpec::new(geometry, parse_methods(&cli.method, inner, geometry)?)
    };
    spec.validate()?;
    Ok(spec)
}

fn threads_from_env() -> Result<Option<usize>, GravidyError> {
    match std::env::var("GRAVIDY_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|t| *t >= 1)
            .map(Some)
            .ok_or_else(|| GravidyError::Spec(format!("GRAVIDY_THREADS must be >= 1, got `{v}`"))),
        Err(_) => Ok(None),
    }
}

fn run(cli: &Cli) -> Result<(), GravidyError> {
    let spec = build_spec(cli)?;
    let threads = threads_from_env()?;
    let output = run_experiment(&spec, threads)?;
    if cli.out.as_os_str() == "-" {
        write_csv(io::stdout().lock(), &output.records)?;
    } else {
        write_csv(BufWriter::new(File::create(&cli.out)?), &output.records)?;
    }
    if let Some(path) = &cli.summary {
        let mut w = BufWriter::new(File::create(path)?);
        write_summary_json(&mut w, &output.summary)?;
        w.write_all(b"\n")?;
        w.flush()?;
    }
    for m in &output.summary.methods {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3e}"));
        eprintln!(
            "{:<22} runs={} converged={} failed={} median_kkt={} median_time_to_tol={}",
            m.method.to_string(),
            m.runs,
            m.converged_runs,
            m.failed_runs,
            fmt(m.median_final_kkt),
            fmt(m.median_time_to_tol)
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

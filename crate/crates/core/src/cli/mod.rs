//! The `cgeo` command-line front end.
//!
//! Exit codes: 0 found or pass, 1 verification failure, 2 degenerate or
//! unresolved reduction, 3 no convergence, 4 configuration error, 5 numeric
//! failure.

pub mod config;
pub mod output;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::Parser;
use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::geodesic::{connect, exp_map};
use crate::loops::Sweepout;
use crate::manifold::MetricChart;
use crate::orbifold::{find_closed_geodesic_via_reduction, is_twisted_closed_geodesic, loop_twist_report, ReductionStatus};
use crate::shortening::{minmax, shorten_to_limit, GeodesicResult, Status};
use crate::symmetry::{verify_isometry, AffineIsometry, IsometryGroup};

use config::{build_loop, build_sweepout_from, parse_config, Command, MSpec, RunConfig};
use output::*;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY_FAILED: i32 = 1;
pub const EXIT_DEGENERATE: i32 = 2;
pub const EXIT_NO_CONVERGENCE: i32 = 3;
pub const EXIT_CONFIG: i32 = 4;
pub const EXIT_NUMERIC: i32 = 5;

#[derive(Debug, Clone, Parser)]
#[command(name = "cgeo", version, about = "Closed geodesics by curve shortening, min-max and orbifold reduction")]
pub struct Cli {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config's "command".
    #[arg(long, value_enum)]
    pub command: Option<Command>,
    /// Vertex count: an even integer or "auto".
    #[arg(long)]
    pub m: Option<String>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub tol_energy: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for the min-max grid.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Result JSON; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Iteration trace as JSON lines.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Final loop sampled as CSV.
    #[arg(long)]
    pub curve: Option<PathBuf>,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Syntax { .. } | Error::UnknownIdentifier { .. } | Error::Usage(_) | Error::Domain { .. } => {
            EXIT_CONFIG
        }
        Error::Numeric(_)
        | Error::Connectivity(_)
        | Error::DomainExit { .. }
        | Error::Resolution(_)
        | Error::NotFinite { .. }
        | Error::Renormalization(_) => EXIT_NUMERIC,
    }
}

fn status_code(s: Status) -> i32 {
    match s {
        Status::Found => EXIT_OK,
        Status::Degenerate => EXIT_DEGENERATE,
        Status::NoConvergence => EXIT_NO_CONVERGENCE,
    }
}

/// Runs the CLI, reporting errors on stderr, and returns the exit code.
pub fn main_with(cli: &Cli) -> i32 {
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            let kind = if exit_code(&e) == EXIT_CONFIG { "config error" } else { "numeric failure" };
            eprintln!("cgeo: {kind}: {}", message(&e));
            exit_code(&e)
        }
    }
}

fn message(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

/// Files named by flags win over the config's `output` section.
struct Outputs {
    result: Option<PathBuf>,
    trace: Option<PathBuf>,
    curve: Option<PathBuf>,
}

impl Outputs {
    fn emit_result(&self, text: &str) -> Result<()> {
        match &self.result {
            Some(p) => write_atomic(p, text.as_bytes()),
            None => {
                print!("{text}");
                Ok(())
            }
        }
    }

    fn emit_loop(&self, r: &GeodesicResult) -> Result<()> {
        if let Some(p) = &self.trace {
            write_atomic(p, trace_jsonl(&r.trace).as_bytes())?;
        }
        if let Some(p) = &self.curve {
            write_atomic(p, curve_csv(&r.lp)?.as_bytes())?;
        }
        Ok(())
    }
}

pub fn run(cli: &Cli) -> Result<i32> {
    let text = std::fs::read_to_string(&cli.config)
        .map_err(|e| Error::Config(format!("/: cannot read {}: {e}", cli.config.display())))?;
    let mut cfg = parse_config(&text)?;
    apply_overrides(&mut cfg, cli)?;
    let command = cfg.command.ok_or_else(|| Error::Config("/command: no command given in the config or on the command line".into()))?;
    let base = cli.config.parent().unwrap_or(Path::new("."));
    let rel = |s: &String| -> PathBuf {
        let p = PathBuf::from(s);
        if p.is_absolute() { p } else { base.join(p) }
    };
    let spec = cfg.output.clone().unwrap_or_default();
    let outputs = Outputs {
        result: cli.out.clone().or_else(|| spec.result.as_ref().map(rel)),
        trace: cli.trace.clone().or_else(|| spec.trace.as_ref().map(rel)),
        curve: cli.curve.clone().or_else(|| spec.curve.as_ref().map(rel)),
    };
    let threads = cfg.threads;
    with_threads(threads, || dispatch(command, &cfg, &outputs))
}

#[cfg(feature = "parallel")]
fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<R> + Send) -> Result<R> {
    match threads {
        Some(0) => Err(Error::Config("/threads: must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Numeric(format!("cannot start the thread pool: {e}")))?
            .install(f),
        None => f(),
    }
}

#[cfg(not(feature = "parallel"))]
fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<R> + Send) -> Result<R> {
    match threads {
        Some(0) => Err(Error::Config("/threads: must be at least 1".into())),
        _ => f(),
    }
}

fn apply_overrides(cfg: &mut RunConfig, cli: &Cli) -> Result<()> {
    if let Some(c) = cli.command {
        cfg.command = Some(c);
    }
    if let Some(m) = &cli.m {
        cfg.solver.m = Some(match m.parse::<usize>() {
            Ok(k) => MSpec::Fixed(k),
            Err(_) => MSpec::Named(m.clone()),
        });
    }
    if let Some(k) = cli.max_iters {
        cfg.solver.max_iters = Some(k);
    }
    if let Some(t) = cli.tol_energy {
        cfg.solver.tol_energy = Some(t);
    }
    if let Some(s) = cli.seed {
        cfg.seed = Some(s);
    }
    if let Some(t) = cli.threads {
        cfg.threads = Some(t);
    }
    Ok(())
}

fn chart_of(cfg: &RunConfig) -> Result<Arc<MetricChart>> {
    cfg.manifold
        .as_ref()
        .ok_or_else(|| Error::Config("/manifold: required for this command".into()))?
        .build(cfg.solver.params()?)
}

fn group_of(cfg: &RunConfig, dim: usize) -> Result<Option<IsometryGroup>> {
    cfg.group.as_ref().map(|g| g.build("/group", dim)).transpose()
}

fn dispatch(command: Command, cfg: &RunConfig, out: &Outputs) -> Result<i32> {
    match command {
        Command::Shorten => run_shorten(cfg, out),
        Command::Minmax => run_minmax(cfg, out),
        Command::Reduce => run_reduce(cfg, out),
        Command::Verify => run_verify(cfg, out),
        Command::Exp => run_exp(cfg, out),
    }
}

fn run_shorten(cfg: &RunConfig, out: &Outputs) -> Result<i32> {
    let chart = chart_of(cfg)?;
    let group = group_of(cfg, chart.dim())?;
    let spec = cfg.initial_loop.as_ref().ok_or_else(|| Error::Config("/loop: required for shorten".into()))?;
    let shortening = cfg.solver.shortening()?;
    let lp = build_loop(spec, &chart, group.as_ref(), cfg.solver.fixed_m()?, cfg.seed.unwrap_or(0))?;
    let r = shorten_to_limit(&lp, group.as_ref(), &shortening)?;
    out.emit_loop(&r)?;
    out.emit_result(&loop_result_json("shorten", &r, None))?;
    Ok(status_code(r.status))
}

fn run_minmax(cfg: &RunConfig, out: &Outputs) -> Result<i32> {
    let chart = chart_of(cfg)?;
    let group = group_of(cfg, chart.dim())?;
    let shortening = cfg.solver.shortening()?;
    let m = cfg.solver.fixed_m()?;
    let sweepout = match (&cfg.sweepout, &cfg.initial_loop) {
        (Some(s), _) => build_sweepout_from(s, &chart, group.as_ref(), m, Executor::Parallel)?,
        (None, Some(l)) => Sweepout::single(build_loop(l, &chart, group.as_ref(), m, cfg.seed.unwrap_or(0))?),
        (None, None) => return Err(Error::Config("/sweepout: required for minmax".into())),
    };
    let r = minmax(&sweepout, group.as_ref(), &shortening, Executor::Parallel)?;
    out.emit_loop(&r)?;
    out.emit_result(&loop_result_json("minmax", &r, Some(sweepout.kappa())))?;
    Ok(status_code(r.status))
}

fn run_reduce(cfg: &RunConfig, out: &Outputs) -> Result<i32> {
    let spec = cfg.orbifold.as_ref().ok_or_else(|| Error::Config("/orbifold: required for reduce".into()))?;
    let chart = match (&cfg.manifold, spec.model) {
        (Some(_), config::ModelSpec::Chart) => Some(chart_of(cfg)?),
        _ => None,
    };
    let orb = spec.build(chart)?;
    let r = find_closed_geodesic_via_reduction(&orb)?;
    out.emit_result(&reduce_json(&r))?;
    Ok(match r.status {
        ReductionStatus::ReducedToEvenIsolated => EXIT_DEGENERATE,
        ReductionStatus::Found if r.verified(VERIFY_TOL) => EXIT_OK,
        ReductionStatus::Found => EXIT_VERIFY_FAILED,
    })
}

fn run_verify(cfg: &RunConfig, out: &Outputs) -> Result<i32> {
    let chart = chart_of(cfg)?;
    let n = chart.dim();
    let group = group_of(cfg, n)?;
    let v = cfg.verify.clone().unwrap_or_default();
    let samples = v.samples.unwrap_or(20);
    let tol = v.tol.unwrap_or(1e-10);
    let seed = cfg.seed.unwrap_or(0);

    let isometries: Vec<IsometryCheckOut> = group
        .as_ref()
        .map(|g| {
            g.generators()
                .iter()
                .enumerate()
                .map(|(i, h)| IsometryCheckOut::new(i, &verify_isometry(&chart, h, samples, tol, seed)))
                .collect()
        })
        .unwrap_or_default();

    let loop_check = match &cfg.initial_loop {
        Some(spec) => {
            let lp = build_loop(spec, &chart, group.as_ref(), cfg.solver.fixed_m()?, seed)?;
            let report = loop_twist_report(&lp, tol)?;
            let angle_defect = lp.angle_defect()?;
            let tol_angle = cfg.solver.shortening()?.tol_angle;
            Some(LoopCheckOut {
                twist_word: lp.twist().map(|t| t.word().to_string()).unwrap_or_else(|| "e".into()),
                angle_defect,
                passed: report.passed && angle_defect <= tol_angle,
                closing: TwistOut::from(&report),
            })
        }
        None => None,
    };

    let segment_check = match &v.segment {
        Some(s) => {
            let from = DVector::from_column_slice(&s.from);
            let to = DVector::from_column_slice(&s.to);
            if from.len() != n || to.len() != n {
                return Err(Error::Config(format!("/verify/segment: endpoints need {n} coordinates")));
            }
            let twist = match &v.twist {
                Some(t) => t.build("/verify/twist", n)?,
                None => AffineIsometry::identity(n),
            };
            let seg = connect(&chart, &from, &to)?;
            Some(TwistOut::from(&is_twisted_closed_geodesic(&chart, std::slice::from_ref(&seg), &twist, tol)?))
        }
        None => None,
    };

    if isometries.is_empty() && loop_check.is_none() && segment_check.is_none() {
        return Err(Error::Config("/verify: nothing to verify; give a group, a loop or a segment".into()));
    }
    let passed = isometries.iter().all(|c| c.passed)
        && loop_check.as_ref().is_none_or(|c| c.passed)
        && segment_check.as_ref().is_none_or(|c| c.passed);
    let report = VerifyOut {
        command: "verify",
        status: if passed { "pass" } else { "fail" },
        isometries,
        loop_check,
        segment_check,
    };
    out.emit_result(&verify_json(&report))?;
    Ok(if passed { EXIT_OK } else { EXIT_VERIFY_FAILED })
}

fn run_exp(cfg: &RunConfig, out: &Outputs) -> Result<i32> {
    let chart = chart_of(cfg)?;
    let n = chart.dim();
    let spec = cfg.exp.as_ref().ok_or_else(|| Error::Config("/exp: required for exp".into()))?;
    if spec.point.len() != n {
        return Err(Error::Config(format!("/exp/point: expected {n} coordinates")));
    }
    if spec.velocity.len() != n {
        return Err(Error::Config(format!("/exp/velocity: expected {n} coordinates")));
    }
    let p = DVector::from_column_slice(&spec.point);
    let v = DVector::from_column_slice(&spec.velocity);
    if !chart.contains(p.as_slice()) {
        return Err(Error::Config(format!("/exp/point: {:?} lies outside the chart domain", spec.point)));
    }
    let seg = exp_map(&chart, &p, &v, spec.steps)?;
    let report = ExpOut {
        command: "exp",
        status: "pass",
        point: spec.point.clone(),
        velocity: spec.velocity.clone(),
        endpoint: seg.end().iter().copied().collect(),
        final_velocity: seg.final_velocity().iter().copied().collect(),
        length: seg.length(),
        steps: seg.steps(),
    };
    out.emit_result(&exp_json(&report))?;
    Ok(EXIT_OK)
}

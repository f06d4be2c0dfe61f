//! Result, trace and curve files. Every file is written to a temporary
//! sibling first and renamed into place.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::loops::GeodesicLoop;
use crate::orbifold::{ReductionResult, StratumPoint, TwistReport};
use crate::shortening::{GeodesicResult, IterationTrace, Status};
use crate::symmetry::{AffineIsometry, AffineSubspace, IsometryReport};

/// Samples per edge in curve output.
pub const CURVE_SAMPLES_PER_EDGE: usize = 16;

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let io = |e: std::io::Error| Error::Usage(format!("cannot write {}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.flush().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("output types serialize");
    s.push('\n');
    s
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn vec_of(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

#[derive(Debug, Serialize)]
pub struct IsometryOut {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub word: String,
}

impl From<&AffineIsometry> for IsometryOut {
    fn from(g: &AffineIsometry) -> Self {
        IsometryOut { a: rows(g.linear()), b: vec_of(g.offset()), word: g.word().to_string() }
    }
}

#[derive(Debug, Serialize)]
pub struct LoopResultOut {
    pub command: &'static str,
    pub status: Status,
    pub length: f64,
    pub energy: f64,
    pub angle_defect: f64,
    pub twist_word: String,
    pub twist: Option<IsometryOut>,
    pub m: usize,
    pub iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub argmax: Option<usize>,
    pub vertices: Vec<Vec<f64>>,
}

impl LoopResultOut {
    pub fn new(command: &'static str, r: &GeodesicResult, kappa: Option<f64>) -> Self {
        LoopResultOut {
            command,
            status: r.status,
            length: r.length,
            energy: r.energy,
            angle_defect: r.angle_defect,
            twist_word: r.twist_word(),
            twist: r.twist().map(IsometryOut::from),
            m: r.lp.m(),
            iterations: r.iterations,
            kappa,
            argmax: kappa.and(r.trace.records.last().map(|t| t.argmax)),
            vertices: r.lp.vertices().iter().map(vec_of).collect(),
        }
    }
}

pub fn loop_result_json(command: &'static str, r: &GeodesicResult, kappa: Option<f64>) -> String {
    to_json(&LoopResultOut::new(command, r, kappa))
}

/// One JSON object per line.
pub fn trace_jsonl(trace: &IterationTrace) -> String {
    let mut s = String::new();
    for rec in &trace.records {
        s.push_str(&serde_json::to_string(rec).expect("trace records serialize"));
        s.push('\n');
    }
    s
}

/// `t, x1, ..., xn` rows at 16 points per edge, `t` in `[0, 1)`.
pub fn curve_csv(lp: &GeodesicLoop) -> Result<String> {
    let m = lp.m();
    let n = lp.chart().dim();
    let mut s = String::from("t");
    for i in 1..=n {
        let _ = write!(s, ",x{i}");
    }
    s.push('\n');
    for (k, edge) in lp.edges().iter().enumerate() {
        for j in 0..CURVE_SAMPLES_PER_EDGE {
            let local = j as f64 / CURVE_SAMPLES_PER_EDGE as f64;
            let p = edge.evaluate(local)?;
            let _ = write!(s, "{:?}", (k as f64 + local) / m as f64);
            for x in p.iter() {
                let _ = write!(s, ",{x:?}");
            }
            s.push('\n');
        }
    }
    Ok(s)
}

#[derive(Debug, Serialize)]
pub struct SubspaceOut {
    pub base: Vec<f64>,
    pub directions: Vec<Vec<f64>>,
}

impl From<&AffineSubspace> for SubspaceOut {
    fn from(s: &AffineSubspace) -> Self {
        let d = &s.directions;
        SubspaceOut { base: vec_of(&s.base), directions: (0..d.ncols()).map(|j| vec_of(&d.column(j).into_owned())).collect() }
    }
}

#[derive(Debug, Serialize)]
pub struct StratumOut {
    pub point: Vec<f64>,
    pub isotropy: Vec<Vec<Vec<f64>>>,
    pub fixed: SubspaceOut,
    pub fixed_dim: isize,
    pub normal_free: bool,
}

impl From<&StratumPoint> for StratumOut {
    fn from(s: &StratumPoint) -> Self {
        StratumOut {
            point: vec_of(&s.point),
            isotropy: s.isotropy.iter().map(|g| rows(g.linear())).collect(),
            fixed: SubspaceOut::from(&s.fixed),
            fixed_dim: s.fixed_dim,
            normal_free: s.normal_free,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct StepOut {
    pub from_dim: isize,
    pub to_dim: isize,
    pub stratum: StratumOut,
    pub normalizer_order: usize,
    pub induced_order: usize,
    pub kernel_order: usize,
    pub invariance_residual: f64,
    pub invariance_passed: bool,
}

#[derive(Debug, Serialize)]
pub struct GeodesicOut {
    pub start: Vec<f64>,
    pub velocity: Vec<f64>,
    pub length: f64,
    pub twist: IsometryOut,
}

#[derive(Debug, Serialize)]
pub struct TwistOut {
    pub passed: bool,
    pub position_residual: f64,
    pub velocity_residual: f64,
    pub corner_defect: f64,
}

impl From<&TwistReport> for TwistOut {
    fn from(r: &TwistReport) -> Self {
        TwistOut {
            passed: r.passed,
            position_residual: r.position_residual,
            velocity_residual: r.velocity_residual,
            corner_defect: r.corner_defect,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct ReduceOut {
    pub command: &'static str,
    pub status: &'static str,
    pub terminal: &'static str,
    pub chain_length: usize,
    pub dims: Vec<isize>,
    pub odd_dimensions: bool,
    pub steps: Vec<StepOut>,
    pub isolated: Option<StratumOut>,
    pub geodesic: Option<GeodesicOut>,
    pub twist_report: Option<TwistOut>,
    pub geodesic_residual: Option<f64>,
    pub invariance_residual: Option<f64>,
    pub verified: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<&'static str>,
}

pub const VERIFY_TOL: f64 = 1e-9;

pub fn reduce_json(r: &ReductionResult) -> String {
    let steps = r
        .chain
        .steps
        .iter()
        .map(|s| StepOut {
            from_dim: s.from_dim,
            to_dim: s.stratum.fixed_dim,
            stratum: StratumOut::from(&s.stratum),
            normalizer_order: s.normalizer.len(),
            induced_order: s.induced_order,
            kernel_order: s.kernel_order,
            invariance_residual: s.invariance_residual,
            invariance_passed: s.invariance_passed(),
        })
        .collect();
    let out = ReduceOut {
        command: "reduce",
        status: r.status.tag(),
        terminal: r.chain.terminal.tag(),
        chain_length: r.chain.steps.len(),
        dims: r.chain.dims(),
        odd_dimensions: r.chain.odd_dimensions(),
        steps,
        isolated: r.chain.isolated.as_ref().map(StratumOut::from),
        geodesic: r.geodesic.as_ref().map(|g| GeodesicOut {
            start: vec_of(&g.start),
            velocity: vec_of(&g.velocity),
            length: g.length(),
            twist: IsometryOut::from(&g.twist),
        }),
        twist_report: r.twist_report.as_ref().map(TwistOut::from),
        geodesic_residual: r.geodesic_residual,
        invariance_residual: r.invariance_residual,
        verified: r.verified(VERIFY_TOL),
        note: (r.status == crate::orbifold::ReductionStatus::ReducedToEvenIsolated).then_some(
            "only isolated singular points remain in even dimension; run the shortening pipeline on a chart of the quotient away from them",
        ),
    };
    to_json(&out)
}

#[derive(Debug, Serialize)]
pub struct IsometryCheckOut {
    pub generator: usize,
    pub passed: bool,
    pub samples: usize,
    pub skipped: usize,
    pub worst_violation: f64,
    pub worst_entry: [usize; 2],
    pub worst_point: Vec<f64>,
}

impl IsometryCheckOut {
    pub fn new(generator: usize, r: &IsometryReport) -> Self {
        IsometryCheckOut {
            generator,
            passed: r.passed,
            samples: r.samples,
            skipped: r.skipped,
            worst_violation: r.worst_violation,
            worst_entry: [r.worst_entry.0, r.worst_entry.1],
            worst_point: r.worst_point.clone(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct LoopCheckOut {
    pub twist_word: String,
    pub angle_defect: f64,
    pub closing: TwistOut,
    pub passed: bool,
}

#[derive(Debug, Serialize)]
pub struct VerifyOut {
    pub command: &'static str,
    pub status: &'static str,
    pub isometries: Vec<IsometryCheckOut>,
    pub loop_check: Option<LoopCheckOut>,
    pub segment_check: Option<TwistOut>,
}

pub fn verify_json(out: &VerifyOut) -> String {
    to_json(out)
}

#[derive(Debug, Serialize)]
pub struct ExpOut {
    pub command: &'static str,
    pub status: &'static str,
    pub point: Vec<f64>,
    pub velocity: Vec<f64>,
    pub endpoint: Vec<f64>,
    pub final_velocity: Vec<f64>,
    pub length: f64,
    pub steps: usize,
}

pub fn exp_json(out: &ExpOut) -> String {
    to_json(out)
}

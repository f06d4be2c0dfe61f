//! JSON run configuration: schema, validation with JSON-pointer diagnostics,
//! and construction of the library objects it describes.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::loops::{build_sweepout, latitude_map, resample, GeodesicLoop, Sweepout};
use crate::manifold::expr::{parse_expression, Env, Expression};
use crate::manifold::{ChartPoint, Domain, MetricChart, MetricKind, SolverParams, SPHERE_POLE_GUARD};
use crate::orbifold::DevelopableOrbifold;
use crate::shortening::{choose_m, ShorteningConfig};
use crate::symmetry::{AffineIsometry, Ambient, IsometryGroup};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Shorten,
    Minmax,
    Reduce,
    Verify,
    Exp,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Option<Command>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub manifold: Option<ManifoldSpec>,
    pub group: Option<GroupSpec>,
    #[serde(rename = "loop")]
    pub initial_loop: Option<LoopSpec>,
    pub sweepout: Option<SweepoutSpec>,
    #[serde(default)]
    pub solver: SolverSpec,
    pub orbifold: Option<OrbifoldSpec>,
    pub exp: Option<ExpSpec>,
    pub verify: Option<VerifySpec>,
    pub output: Option<OutputSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricType {
    Euclidean,
    Flat,
    SphereChart,
    Conformal,
    Custom,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifoldSpec {
    #[serde(rename = "type")]
    pub kind: MetricType,
    pub dim: Option<usize>,
    pub entries: Option<Vec<Vec<String>>>,
    pub r: f64,
    pub fd_step: Option<f64>,
    /// Sphere radius for `sphere_chart`.
    pub radius: Option<f64>,
    /// Coordinate box; unbounded by default.
    pub domain: Option<Vec<[f64; 2]>>,
    pub periods: Option<Vec<Option<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKindSpec {
    Finite,
    Deck,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmbientSpec {
    Euclidean,
    Torus,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IsometrySpec {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    pub b: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    #[serde(rename = "box")]
    pub bounds: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    pub kind: GroupKindSpec,
    pub generators: Vec<IsometrySpec>,
    pub fundamental_domain: Option<BoxSpec>,
    pub ambient: Option<AmbientSpec>,
    pub max_elements: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LoopSpec {
    /// `t -> offset + t class + amplitude sin(2 pi t) n`, `n` a unit normal to `class`.
    ClassLine { class: Vec<f64>, offset: Option<Vec<f64>>, amplitude: Option<f64> },
    Circle { center: Vec<f64>, radius: f64 },
    /// Circle of latitude `theta` in a sphere chart.
    Latitude { theta: f64 },
    /// Coordinates as expressions in `t`.
    Expression { components: Vec<String>, twist: Option<IsometrySpec> },
    Vertices { vertices: Vec<Vec<f64>>, twist: Option<IsometrySpec> },
    /// Smooth loop with seeded random Fourier coefficients around `center`.
    Random { center: Vec<f64>, scale: f64, modes: Option<usize> },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SweepoutSpec {
    /// Latitude circles of a sphere chart over `B^1`.
    Latitude { grid: usize },
    /// A single class line, as a sweepout over `B^0`.
    ClassLine { class: Vec<f64>, offset: Option<Vec<f64>>, amplitude: Option<f64> },
    /// Chart coordinates as expressions in `x1..x_{k-1}`, `u` and `v`.
    CustomExpression { k: usize, grid: Option<usize>, components: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(untagged)]
pub enum MSpec {
    Fixed(usize),
    Named(String),
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    pub m: Option<MSpec>,
    pub tol_bvp: Option<f64>,
    pub max_newton: Option<usize>,
    pub steps_per_segment: Option<usize>,
    pub tol_energy: Option<f64>,
    pub tol_vertex: Option<f64>,
    pub tol_angle: Option<f64>,
    pub max_iters: Option<usize>,
    pub degenerate_length: Option<f64>,
    pub window: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSpec {
    Sphere,
    FlatTorus,
    Chart,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrbifoldSpec {
    pub model: ModelSpec,
    pub n: Option<usize>,
    pub group: GroupSpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpSpec {
    pub point: Vec<f64>,
    pub velocity: Vec<f64>,
    pub steps: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentSpec {
    pub from: Vec<f64>,
    pub to: Vec<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySpec {
    pub samples: Option<usize>,
    pub tol: Option<f64>,
    /// Geodesic `from -> to` checked against `twist` (identity by default).
    pub segment: Option<SegmentSpec>,
    pub twist: Option<IsometrySpec>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub result: Option<String>,
    pub trace: Option<String>,
    pub curve: Option<String>,
}

/// A config error at a JSON pointer.
fn at(pointer: &str, message: impl std::fmt::Display) -> Error {
    Error::Config(format!("{pointer}: {message}"))
}

/// Re-labels errors from library constructors with the config location.
fn located<T>(pointer: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Config(msg) | Error::Usage(msg) => at(pointer, msg),
        other @ (Error::Syntax { .. } | Error::UnknownIdentifier { .. }) => at(pointer, other),
        other => other,
    })
}

fn pointer_of(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } => out.push_str(&format!("/{}", key.replace('~', "~0").replace('/', "~1"))),
            Segment::Enum { variant } => out.push_str(&format!("/{variant}")),
            Segment::Unknown => out.push_str("/?"),
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}

/// Parses and schema-checks a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let pointer = pointer_of(e.path());
        let inner = e.into_inner();
        if inner.is_syntax() || inner.is_eof() {
            at("/", format!("invalid JSON at line {} column {}: {inner}", inner.line(), inner.column()))
        } else {
            at(&pointer, inner)
        }
    })?;
    Ok(cfg)
}

fn expr(pointer: &str, text: &str) -> Result<Expression> {
    parse_expression(text).map_err(|e| at(pointer, e))
}

fn vector(pointer: &str, x: &[f64], dim: usize) -> Result<DVector<f64>> {
    if x.len() != dim {
        return Err(at(pointer, format!("expected {dim} coordinates, got {}", x.len())));
    }
    if x.iter().any(|c| !c.is_finite()) {
        return Err(at(pointer, "coordinates must be finite"));
    }
    Ok(DVector::from_column_slice(x))
}

fn positive(pointer: &str, x: f64) -> Result<f64> {
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(at(pointer, format!("must be positive, got {x}")))
    }
}

impl SolverSpec {
    pub fn params(&self) -> Result<SolverParams> {
        let mut p = SolverParams::default();
        if let Some(t) = self.tol_bvp {
            p.tol_bvp = positive("/solver/tol_bvp", t)?;
        }
        if let Some(k) = self.max_newton {
            p.max_newton = k;
        }
        if let Some(s) = self.steps_per_segment {
            if s < 2 {
                return Err(at("/solver/steps_per_segment", "must be at least 2"));
            }
            p.min_steps = s;
        }
        Ok(p)
    }

    pub fn shortening(&self) -> Result<ShorteningConfig> {
        let mut c = ShorteningConfig::default();
        if let Some(t) = self.tol_energy {
            c.tol_energy = positive("/solver/tol_energy", t)?;
        }
        if let Some(t) = self.tol_vertex {
            c.tol_vertex = positive("/solver/tol_vertex", t)?;
        }
        if let Some(t) = self.tol_angle {
            c.tol_angle = positive("/solver/tol_angle", t)?;
        }
        if let Some(k) = self.max_iters {
            c.max_iters = k;
        }
        if let Some(l) = self.degenerate_length {
            c.degenerate_length = Some(positive("/solver/degenerate_length", l)?);
        }
        if let Some(w) = self.window {
            if w == 0 {
                return Err(at("/solver/window", "must be at least 1"));
            }
            c.window = w;
        }
        Ok(c)
    }

    /// `None` for automatic selection.
    pub fn fixed_m(&self) -> Result<Option<usize>> {
        match &self.m {
            None => Ok(None),
            Some(MSpec::Named(s)) if s == "auto" => Ok(None),
            Some(MSpec::Named(s)) => Err(at("/solver/m", format!("expected an even integer or \"auto\", got {s:?}"))),
            Some(MSpec::Fixed(m)) if *m >= 2 && m % 2 == 0 => Ok(Some(*m)),
            Some(MSpec::Fixed(m)) => Err(at("/solver/m", format!("m must be even and at least 2, got {m}"))),
        }
    }
}

impl ManifoldSpec {
    pub fn build(&self, solver: SolverParams) -> Result<Arc<MetricChart>> {
        let r = positive("/manifold/r", self.r)?;
        let fd = match self.fd_step {
            Some(h) => positive("/manifold/fd_step", h)?,
            None => 1e-5,
        };
        let entries = |want: usize| -> Result<&Vec<Vec<String>>> {
            let e = self.entries.as_ref().ok_or_else(|| at("/manifold/entries", "required for this metric type"))?;
            if e.len() != want || e.iter().any(|row| row.len() != want) {
                return Err(at("/manifold/entries", format!("expected a {want}x{want} array")));
            }
            Ok(e)
        };
        let chart = match self.kind {
            MetricType::SphereChart => {
                if self.dim.is_some_and(|d| d != 2) {
                    return Err(at("/manifold/dim", "a sphere chart is 2-dimensional"));
                }
                let radius = positive("/manifold/radius", self.radius.unwrap_or(1.0))?;
                located("/manifold", MetricChart::sphere_chart(radius, r, SPHERE_POLE_GUARD))?
            }
            kind => {
                let dim = match (kind, self.dim) {
                    (_, Some(d)) => d,
                    (MetricType::Conformal, None) => 2,
                    (MetricType::Flat | MetricType::Custom, None) => {
                        self.entries.as_ref().map(|e| e.len()).unwrap_or(0)
                    }
                    _ => return Err(at("/manifold/dim", "required for this metric type")),
                };
                if dim == 0 {
                    return Err(at("/manifold/dim", "must be positive"));
                }
                let metric = match kind {
                    MetricType::Euclidean => MetricKind::Euclidean,
                    MetricType::Flat => {
                        let e = entries(dim)?;
                        let mut g = DMatrix::zeros(dim, dim);
                        for (i, row) in e.iter().enumerate() {
                            for (j, s) in row.iter().enumerate() {
                                let p = format!("/manifold/entries/{i}/{j}");
                                let x = expr(&p, s)?;
                                located(&p, x.check_vars(0, false))?;
                                g[(i, j)] = x.eval(&Env::default());
                            }
                        }
                        MetricKind::Flat(g)
                    }
                    MetricType::Conformal => {
                        let e = self.entries.as_ref().ok_or_else(|| at("/manifold/entries", "expected [[lambda]]"))?;
                        if e.len() != 1 || e[0].len() != 1 {
                            return Err(at("/manifold/entries", "expected [[lambda]]"));
                        }
                        let lambda = expr("/manifold/entries/0/0", &e[0][0])?;
                        located("/manifold/entries/0/0", lambda.check_vars(dim, false))?;
                        MetricKind::Conformal { lambda }
                    }
                    MetricType::Custom => {
                        let e = entries(dim)?;
                        let mut list = Vec::with_capacity(dim * dim);
                        for (i, row) in e.iter().enumerate() {
                            for (j, s) in row.iter().enumerate() {
                                let p = format!("/manifold/entries/{i}/{j}");
                                let x = expr(&p, s)?;
                                located(&p, x.check_vars(dim, false))?;
                                list.push(x);
                            }
                        }
                        MetricKind::Custom { entries: list }
                    }
                    MetricType::SphereChart => unreachable!(),
                };
                let domain = match &self.domain {
                    Some(b) => {
                        if b.iter().any(|[lo, hi]| !(lo < hi)) {
                            return Err(at("/manifold/domain", "each interval needs lo < hi"));
                        }
                        Domain { bounds: b.iter().map(|[lo, hi]| (*lo, *hi)).collect() }
                    }
                    None => Domain::whole(dim),
                };
                located("/manifold", MetricChart::new(dim, domain, metric, r, fd))?
            }
        };
        let chart = match &self.periods {
            Some(p) => located("/manifold/periods", chart.with_periods(p.clone()))?,
            None => chart,
        };
        Ok(Arc::new(chart.with_fd_step(fd).with_solver(solver)))
    }
}

impl IsometrySpec {
    pub fn build(&self, pointer: &str, dim: usize) -> Result<AffineIsometry> {
        if self.a.len() != dim || self.a.iter().any(|row| row.len() != dim) {
            return Err(at(&format!("{pointer}/A"), format!("expected a {dim}x{dim} matrix")));
        }
        let a = DMatrix::from_row_iterator(dim, dim, self.a.iter().flatten().copied());
        let b = match &self.b {
            Some(b) => vector(&format!("{pointer}/b"), b, dim)?,
            None => DVector::zeros(dim),
        };
        located(pointer, AffineIsometry::new(a, b))
    }
}

impl GroupSpec {
    pub fn build(&self, pointer: &str, dim: usize) -> Result<IsometryGroup> {
        if self.generators.is_empty() {
            return Err(at(&format!("{pointer}/generators"), "at least one generator is required"));
        }
        let gens = self
            .generators
            .iter()
            .enumerate()
            .map(|(i, g)| g.build(&format!("{pointer}/generators/{i}"), dim))
            .collect::<Result<Vec<_>>>()?;
        match self.kind {
            GroupKindSpec::Finite => {
                let ambient = match self.ambient {
                    Some(AmbientSpec::Torus) => Ambient::Torus,
                    _ => Ambient::Euclidean,
                };
                let g = IsometryGroup::finite(gens, ambient, self.max_elements.unwrap_or(10_000)).map_err(|e| match e {
                    Error::NotFinite { bound } => at(pointer, format!("generators do not close up within {bound} elements")),
                    other => other,
                })?;
                Ok(match &self.fundamental_domain {
                    Some(f) => g.with_fundamental_domain(self.domain_of(f, pointer, dim)?),
                    None => g,
                })
            }
            GroupKindSpec::Deck => {
                let f = self
                    .fundamental_domain
                    .as_ref()
                    .ok_or_else(|| at(&format!("{pointer}/fundamental_domain"), "required for deck groups"))?;
                let domain = self.domain_of(f, pointer, dim)?;
                located(pointer, IsometryGroup::deck(gens, domain))
            }
        }
    }

    fn domain_of(&self, f: &BoxSpec, pointer: &str, dim: usize) -> Result<Domain> {
        let p = format!("{pointer}/fundamental_domain/box");
        if f.bounds.len() != dim || f.bounds.iter().any(|[lo, hi]| !(lo < hi)) {
            return Err(at(&p, format!("expected {dim} intervals with lo < hi")));
        }
        Ok(Domain { bounds: f.bounds.iter().map(|[lo, hi]| (*lo, *hi)).collect() })
    }
}

/// The closing twist of a curve from `c(0)` to `c(1)`: given explicitly,
/// inferred from the group, or a plain translation.
fn closing_twist(
    chart: &MetricChart,
    group: Option<&IsometryGroup>,
    start: &ChartPoint,
    end: &ChartPoint,
    pointer: &str,
) -> Result<Option<AffineIsometry>> {
    if chart.delta(start, end).amax() <= 1e-12 {
        return Ok(None);
    }
    match group {
        Some(g) if g.fundamental_domain().is_some() => located(pointer, g.element_relating(start, end)).map(Some),
        _ => Err(at(pointer, "the curve does not close up and no deck group relates its endpoints")),
    }
}

/// Gives an explicit twist the word of the matching group element, if any.
fn labelled(
    twist: AffineIsometry,
    group: Option<&IsometryGroup>,
    start: &Result<ChartPoint>,
    end: &Result<ChartPoint>,
) -> AffineIsometry {
    let (Some(g), Ok(a), Ok(b)) = (group.filter(|g| g.fundamental_domain().is_some()), start, end) else {
        return twist;
    };
    match g.element_relating(a, b) {
        Ok(h) if h.matches(&twist, g.ambient()) => twist.with_word(h.word().clone()),
        _ => twist,
    }
}

fn unit_normal(class: &DVector<f64>) -> DVector<f64> {
    let n = class.len();
    let u = class.normalize();
    // first coordinate axis that is not parallel to the class
    for i in 0..n {
        let mut e = DVector::zeros(n);
        e[i] = 1.0;
        let w = &e - &u * u.dot(&e);
        if w.norm() > 1e-6 {
            return w.normalize();
        }
    }
    DVector::zeros(n)
}

fn class_curve(
    chart: &MetricChart,
    class: &[f64],
    offset: &Option<Vec<f64>>,
    amplitude: Option<f64>,
    pointer: &str,
) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    let n = chart.dim();
    let c = vector(&format!("{pointer}/class"), class, n)?;
    if c.norm() == 0.0 {
        return Err(at(&format!("{pointer}/class"), "class vector must be nonzero"));
    }
    let o = match offset {
        Some(o) => vector(&format!("{pointer}/offset"), o, n)?,
        None => DVector::zeros(n),
    };
    let normal = unit_normal(&c) * amplitude.unwrap_or(0.1);
    Ok((c, o, normal))
}

/// Builds the closed loop described by `spec`.
pub fn build_loop(
    spec: &LoopSpec,
    chart: &Arc<MetricChart>,
    group: Option<&IsometryGroup>,
    m: Option<usize>,
    seed: u64,
) -> Result<GeodesicLoop> {
    let n = chart.dim();
    let p = "/loop";
    type Curve = Box<dyn Fn(f64) -> Result<ChartPoint>>;
    let (curve, twist): (Curve, Option<Option<AffineIsometry>>) = match spec {
        LoopSpec::Vertices { vertices, twist } => {
            let vs = vertices
                .iter()
                .enumerate()
                .map(|(i, v)| vector(&format!("{p}/vertices/{i}"), v, n))
                .collect::<Result<Vec<_>>>()?;
            if m.is_some_and(|m| m != vs.len()) {
                return Err(at("/solver/m", "m must match the number of vertices"));
            }
            let tw = twist.as_ref().map(|t| t.build(&format!("{p}/twist"), n)).transpose()?;
            let tw = tw.map(|t| {
                let end = Ok(t.apply(&vs[0]));
                labelled(t, group, &Ok(vs[0].clone()), &end)
            });
            return located(p, GeodesicLoop::new(chart, vs, tw));
        }
        LoopSpec::ClassLine { class, offset, amplitude } => {
            let (c, o, normal) = class_curve(chart, class, offset, *amplitude, p)?;
            (Box::new(move |t: f64| Ok(&o + &c * t + &normal * (2.0 * PI * t).sin())), None)
        }
        LoopSpec::Circle { center, radius } => {
            if n != 2 {
                return Err(at(p, "circle loops need a 2-dimensional chart"));
            }
            let c = vector(&format!("{p}/center"), center, 2)?;
            let r = positive(&format!("{p}/radius"), *radius)?;
            (
                Box::new(move |t: f64| {
                    let a = 2.0 * PI * t;
                    Ok(&c + DVector::from_vec(vec![r * a.cos(), r * a.sin()]))
                }),
                None,
            )
        }
        LoopSpec::Latitude { theta } => {
            if !matches!(chart.kind(), MetricKind::SphereChart { .. }) {
                return Err(at(p, "latitude loops need a sphere chart"));
            }
            let th = *theta;
            (Box::new(move |t: f64| Ok(DVector::from_vec(vec![th, 2.0 * PI * t]))), Some(None))
        }
        LoopSpec::Expression { components, twist } => {
            if components.len() != n {
                return Err(at(&format!("{p}/components"), format!("expected {n} components")));
            }
            let exprs = components
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let q = format!("{p}/components/{i}");
                    let e = expr(&q, s)?;
                    located(&q, e.check_vars(0, true))?;
                    Ok(e)
                })
                .collect::<Result<Vec<_>>>()?;
            let tw = twist.as_ref().map(|t| t.build(&format!("{p}/twist"), n)).transpose()?;
            let f = move |t: f64| {
                let env = Env { t, ..Default::default() };
                Ok(DVector::from_iterator(exprs.len(), exprs.iter().map(|e| e.eval(&env))))
            };
            (Box::new(f), tw.map(Some))
        }
        LoopSpec::Random { center, scale, modes } => {
            let c = vector(&format!("{p}/center"), center, n)?;
            let s = positive(&format!("{p}/scale"), *scale)?;
            let k = modes.unwrap_or(3).max(1);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let coeffs: Vec<(DVector<f64>, DVector<f64>)> = (0..k)
                .map(|_| {
                    let a = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
                    let b = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
                    (a, b)
                })
                .collect();
            let f = move |t: f64| {
                let mut x = c.clone();
                for (j, (a, b)) in coeffs.iter().enumerate() {
                    let w = 2.0 * PI * (j + 1) as f64 * t;
                    x += (a * w.cos() + b * w.sin()) * (s / (j + 1) as f64);
                }
                Ok(x)
            };
            (Box::new(f), None)
        }
    };
    let twist = match twist {
        Some(t) => t.map(|t| labelled(t, group, &curve(0.0), &curve(1.0))),
        None => closing_twist(chart, group, &curve(0.0)?, &curve(1.0)?, p)?,
    };
    let m = match m {
        Some(m) => m,
        None => auto_m_for_curve(&*curve, chart, twist.clone())?,
    };
    located(p, resample(&curve, chart, m, twist))
}

/// `choose_m` applied to the energy of the curve sampled finely enough to be connectable.
fn auto_m_for_curve(
    curve: &dyn Fn(f64) -> Result<ChartPoint>,
    chart: &Arc<MetricChart>,
    twist: Option<AffineIsometry>,
) -> Result<usize> {
    let mut m = 8;
    loop {
        match resample(curve, chart, m, twist.clone()) {
            Ok(lp) => return Ok(choose_m(lp.energy(), chart.injectivity_radius()).max(m)),
            Err(Error::Resolution(_)) if m < 4096 => m *= 2,
            Err(e) => return located("/loop", Err(e)),
        }
    }
}

/// Builds the sweepout described by `spec`, choosing `m` from `kappa` when not fixed.
pub fn build_sweepout_from(
    spec: &SweepoutSpec,
    chart: &Arc<MetricChart>,
    group: Option<&IsometryGroup>,
    m: Option<usize>,
    executor: Executor,
) -> Result<Sweepout> {
    let p = "/sweepout";
    let make = |m: usize| -> Result<Sweepout> {
        match spec {
            SweepoutSpec::Latitude { grid } => {
                if !matches!(chart.kind(), MetricKind::SphereChart { .. }) {
                    return Err(at(p, "latitude sweepouts need a sphere chart"));
                }
                located(p, build_sweepout(latitude_map(chart), chart, 2, *grid, m, executor))
            }
            SweepoutSpec::ClassLine { class, offset, amplitude } => {
                let (c, o, normal) = class_curve(chart, class, offset, *amplitude, p)?;
                let curve = move |t: f64| Ok(&o + &c * t + &normal * (2.0 * PI * t).sin());
                let twist = closing_twist(chart, group, &curve(0.0)?, &curve(1.0)?, p)?;
                Ok(Sweepout::single(located(p, resample(curve, chart, m, twist))?))
            }
            SweepoutSpec::CustomExpression { k, grid, components } => {
                let n = chart.dim();
                if components.len() != n {
                    return Err(at(&format!("{p}/components"), format!("expected {n} components")));
                }
                if !(1..=3).contains(k) {
                    return Err(at(&format!("{p}/k"), "k must be 1, 2 or 3"));
                }
                let exprs = components
                    .iter()
                    .enumerate()
                    .map(|(i, s)| {
                        let q = format!("{p}/components/{i}");
                        let e = expr(&q, s)?;
                        located(&q, e.check_vars(k - 1, true))?;
                        Ok(e)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let f = move |s: &[f64]| {
                    let (x, uv) = s.split_at(s.len() - 2);
                    let env = Env { x, u: uv[0], v: uv[1], t: 0.0 };
                    Ok(DVector::from_iterator(exprs.len(), exprs.iter().map(|e| e.eval(&env))))
                };
                let grid = if *k == 1 { 1 } else { grid.unwrap_or(21) };
                if *k > 1 && (grid < 3 || grid % 2 == 0) {
                    return Err(at(&format!("{p}/grid"), "grid must be odd and at least 3"));
                }
                located(p, build_sweepout(f, chart, *k, grid, m, executor))
            }
        }
    };
    match m {
        Some(m) => make(m),
        None => {
            let mut trial = 8;
            loop {
                match make(trial) {
                    Ok(sw) => {
                        let m = choose_m(sw.kappa(), chart.injectivity_radius());
                        return if m == trial { Ok(sw) } else { make(m.max(trial)) };
                    }
                    Err(Error::Resolution(_)) if trial < 4096 => trial *= 2,
                    Err(e) => return Err(e),
                }
            }
        }
    }
}

impl OrbifoldSpec {
    pub fn build(&self, manifold: Option<Arc<MetricChart>>) -> Result<DevelopableOrbifold> {
        let p = "/orbifold";
        match self.model {
            ModelSpec::Sphere => {
                let n = self.n.ok_or_else(|| at(&format!("{p}/n"), "required for sphere models"))?;
                if n == 0 {
                    return Err(at(&format!("{p}/n"), "must be positive"));
                }
                let g = self.group.build(&format!("{p}/group"), n + 1)?;
                located(p, DevelopableOrbifold::sphere(n, g))
            }
            ModelSpec::FlatTorus => {
                let n = self.n.ok_or_else(|| at(&format!("{p}/n"), "required for torus models"))?;
                let mut spec = self.group.clone();
                spec.ambient = Some(AmbientSpec::Torus);
                let g = spec.build(&format!("{p}/group"), n)?;
                located(p, DevelopableOrbifold::flat_torus(n, g))
            }
            ModelSpec::Chart => {
                let chart = manifold.ok_or_else(|| at("/manifold", "required for chart models"))?;
                let g = self.group.build(&format!("{p}/group"), chart.dim())?;
                Ok(DevelopableOrbifold::chart(chart, g))
            }
        }
    }
}

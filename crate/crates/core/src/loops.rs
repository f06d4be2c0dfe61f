//! Closed geodesic polygons and sweepout families of them.
//!
//! A loop is stored as `m` vertices; edge `k` is the minimizing geodesic from
//! `v_k` to `v_{k+1}`, each traversed in parameter time `1/m`. Indices wrap
//! through the loop's twist: `v_{k+m} = twist(v_k)`. Ordinary closed loops
//! have no twist; lifts of closed curves in a quotient `M/G` carry the deck
//! element that closes them.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::geodesic::{connect, distance, GeodesicSegment};
use crate::manifold::{ChartPoint, MetricChart};
use crate::symmetry::AffineIsometry;

#[derive(Debug, Clone)]
pub struct GeodesicLoop {
    chart: Arc<MetricChart>,
    vertices: Vec<ChartPoint>,
    edges: Vec<GeodesicSegment>,
    twist: Option<AffineIsometry>,
    energy: f64,
    length: f64,
}

impl GeodesicLoop {
    /// Builds the geodesic polygon through `vertices`, closed via `twist`.
    pub fn new(chart: &Arc<MetricChart>, vertices: Vec<ChartPoint>, twist: Option<AffineIsometry>) -> Result<Self> {
        check_m(vertices.len())?;
        let m = vertices.len();
        let r = chart.injectivity_radius();
        let mut edges = Vec::with_capacity(m);
        for k in 0..m {
            let a = &vertices[k];
            let b = if k + 1 < m {
                vertices[k + 1].clone()
            } else {
                close(&twist, &vertices[0])
            };
            let seg = connect(chart, a, &b).map_err(|e| match e {
                Error::Connectivity(msg) => Error::Resolution(format!("edge {k}: {msg}")),
                other => other,
            })?;
            if seg.length() >= r {
                return Err(Error::Resolution(format!(
                    "edge {k} has length {} >= r = {r}",
                    seg.length()
                )));
            }
            edges.push(seg);
        }
        Ok(Self::from_parts(chart.clone(), vertices, edges, twist))
    }

    pub(crate) fn from_parts(
        chart: Arc<MetricChart>,
        vertices: Vec<ChartPoint>,
        edges: Vec<GeodesicSegment>,
        twist: Option<AffineIsometry>,
    ) -> Self {
        let m = vertices.len() as f64;
        let (sq, length) = edges
            .iter()
            .fold((0.0, 0.0), |(sq, len), e| (sq + e.length() * e.length(), len + e.length()));
        GeodesicLoop { chart, vertices, edges, twist, energy: 0.5 * m * sq, length }
    }

    /// The loop sitting at `p` with `m` vertices.
    pub fn constant(chart: &Arc<MetricChart>, p: &ChartPoint, m: usize) -> Result<Self> {
        check_m(m)?;
        if !chart.contains(p.as_slice()) {
            return Err(Error::Domain { point: p.iter().copied().collect() });
        }
        let seg = GeodesicSegment::constant(chart, p);
        Ok(Self::from_parts(chart.clone(), vec![p.clone(); m], vec![seg; m], None))
    }

    pub fn chart(&self) -> &Arc<MetricChart> {
        &self.chart
    }

    pub fn m(&self) -> usize {
        self.vertices.len()
    }

    pub fn vertices(&self) -> &[ChartPoint] {
        &self.vertices
    }

    pub fn edges(&self) -> &[GeodesicSegment] {
        &self.edges
    }

    pub fn twist(&self) -> Option<&AffineIsometry> {
        self.twist.as_ref()
    }

    /// `E = (m/2) sum_k d(v_k, v_{k+1})^2`.
    pub fn energy(&self) -> f64 {
        self.energy
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    /// Vertex with index taken through the twist, so `vertex(m) = twist(v_0)`.
    pub fn vertex(&self, k: isize) -> ChartPoint {
        let m = self.m() as isize;
        let wraps = k.div_euclid(m);
        let mut p = self.vertices[k.rem_euclid(m) as usize].clone();
        if let Some(t) = &self.twist {
            if wraps > 0 {
                for _ in 0..wraps {
                    p = t.apply(&p);
                }
            } else if wraps < 0 {
                let inv = t.inverse();
                for _ in 0..(-wraps) {
                    p = inv.apply(&p);
                }
            }
        }
        p
    }

    /// The image `g · c`; the twist becomes `g twist g^-1`.
    pub fn transformed(&self, g: &AffineIsometry) -> Self {
        let vertices = self.vertices.iter().map(|v| g.apply(v)).collect();
        let edges = self.edges.iter().map(|e| e.transformed(g)).collect();
        let twist = self.twist.as_ref().map(|t| {
            let c = g.conjugate(t);
            c.with_word(t.word().clone())
        });
        GeodesicLoop {
            chart: self.chart.clone(),
            vertices,
            edges,
            twist,
            energy: self.energy,
            length: self.length,
        }
    }

    /// Largest turning angle (radians) between consecutive edges, measured in
    /// the metric at each vertex. At `v_0` the incoming velocity is pulled back
    /// through the twist.
    pub fn angle_defect(&self) -> Result<f64> {
        let m = self.m();
        let mut worst = 0.0f64;
        for k in 0..m {
            let incoming = &self.edges[(k + m - 1) % m];
            let outgoing = &self.edges[k];
            if incoming.length() == 0.0 || outgoing.length() == 0.0 {
                continue;
            }
            let mut a = incoming.final_velocity();
            if k == 0 {
                if let Some(t) = &self.twist {
                    a = t.inverse().linear() * a;
                }
            }
            let b = outgoing.initial_velocity();
            worst = worst.max(tangent_angle(&self.chart, &self.vertices[k], &a, &b)?);
        }
        Ok(worst)
    }

    /// `1/2 int |c'|^2` summed over edges by quadrature, for cross-checking [`Self::energy`].
    pub fn energy_by_quadrature(&self) -> Result<f64> {
        let m = self.m() as f64;
        let mut total = 0.0;
        for e in &self.edges {
            // an edge spans parameter 1/m, so its speed there is m times larger
            total += e.energy_by_quadrature()? * m;
        }
        Ok(total)
    }

    /// Point at loop parameter `t` in `[0, 1]`.
    pub fn point_at(&self, t: f64) -> Result<ChartPoint> {
        let m = self.m();
        let s = t.clamp(0.0, 1.0) * m as f64;
        let k = (s.floor() as usize).min(m - 1);
        self.edges[k].evaluate(s - k as f64)
    }
}

fn check_m(m: usize) -> Result<()> {
    if m < 2 || m % 2 != 0 {
        return Err(Error::Usage(format!("loops need an even number of vertices, got {m}")));
    }
    Ok(())
}

fn close(twist: &Option<AffineIsometry>, v0: &ChartPoint) -> ChartPoint {
    match twist {
        Some(t) => t.apply(v0),
        None => v0.clone(),
    }
}

/// Angle between tangent vectors at `p`, accurate for small angles.
pub fn tangent_angle(chart: &MetricChart, p: &ChartPoint, a: &DVector<f64>, b: &DVector<f64>) -> Result<f64> {
    let na = chart.norm(p, a)?;
    let nb = chart.norm(p, b)?;
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    let chord = chart.norm(p, &(a / na - b / nb))?;
    Ok(2.0 * (0.5 * chord).min(1.0).asin())
}

/// `max_t d(a(t), b(t))` over vertices and four samples per edge.
pub fn loop_distance(a: &GeodesicLoop, b: &GeodesicLoop) -> Result<f64> {
    if a.m() != b.m() {
        return Err(Error::Usage(format!("loops have different m ({} vs {})", a.m(), b.m())));
    }
    if !Arc::ptr_eq(&a.chart, &b.chart) && a.chart != b.chart {
        return Err(Error::Usage("loops live on different charts".into()));
    }
    const SAMPLES: usize = 4;
    let mut worst = 0.0f64;
    for (ea, eb) in a.edges.iter().zip(&b.edges) {
        for j in 0..SAMPLES {
            let t = j as f64 / SAMPLES as f64;
            let (p, q) = (ea.evaluate(t)?, eb.evaluate(t)?);
            worst = worst.max(distance(&a.chart, &p, &q)?);
        }
    }
    Ok(worst)
}

/// Samples `v_k = curve(k/m)`; the curve must close up through `twist`.
pub fn resample<F>(curve: F, chart: &Arc<MetricChart>, m: usize, twist: Option<AffineIsometry>) -> Result<GeodesicLoop>
where
    F: Fn(f64) -> Result<ChartPoint>,
{
    check_m(m)?;
    let start = curve(0.0)?;
    let end = curve(1.0)?;
    let want = close(&twist, &start);
    let gap = chart.delta(&want, &end).amax();
    if gap > 1e-9 * (1.0 + end.amax()) {
        return Err(Error::Usage(format!("curve is not closed (gap {gap:e})")));
    }
    let vertices = (0..m).map(|k| curve(k as f64 / m as f64)).collect::<Result<Vec<_>>>()?;
    if vertices.iter().all(|v| chart.delta(&vertices[0], v).amax() == 0.0) && twist.is_none() {
        return GeodesicLoop::constant(chart, &vertices[0], m);
    }
    GeodesicLoop::new(chart, vertices, twist)
}

/// Family of loops `f_x` over a grid on the closed unit ball `B^{k-1}`.
#[derive(Debug, Clone)]
pub struct Sweepout {
    chart: Arc<MetricChart>,
    k: usize,
    grid: Vec<Vec<f64>>,
    boundary: Vec<bool>,
    loops: Vec<GeodesicLoop>,
}

/// Lattice points of `[-1, 1]^{k-1}` with `side` points per axis; points
/// outside the unit ball are projected onto the sphere and flagged as boundary.
pub fn ball_grid(k: usize, side: usize) -> Result<(Vec<Vec<f64>>, Vec<bool>)> {
    match k {
        1 => return Ok((vec![Vec::new()], vec![false])),
        2 | 3 => {}
        _ => return Err(Error::Usage(format!("sweepouts support 1 <= k <= 3, got {k}"))),
    }
    if side < 3 || side % 2 == 0 {
        return Err(Error::Usage(format!("grid side count must be odd and >= 3, got {side}")));
    }
    let axis: Vec<f64> = (0..side).map(|i| -1.0 + 2.0 * i as f64 / (side - 1) as f64).collect();
    let mut grid = Vec::new();
    let mut boundary = Vec::new();
    let dims = k - 1;
    let total = side.pow(dims as u32);
    for code in 0..total {
        let mut c = code;
        let mut x = Vec::with_capacity(dims);
        for _ in 0..dims {
            x.push(axis[c % side]);
            c /= side;
        }
        x.reverse();
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let on_boundary = norm >= 1.0 - 1e-12;
        if norm > 1.0 {
            x.iter_mut().for_each(|v| *v /= norm);
        }
        grid.push(x);
        boundary.push(on_boundary);
    }
    Ok((grid, boundary))
}

/// Builds `f_x(t) = f(x, a_x cos 2 pi t, a_x sin 2 pi t)` with `|x|^2 + a_x^2 = 1`
/// for every grid point, where `f` maps points of `S^k ⊂ R^{k+1}` into the chart.
pub fn build_sweepout<F>(
    f: F,
    chart: &Arc<MetricChart>,
    k: usize,
    grid_resolution: usize,
    m: usize,
    executor: Executor,
) -> Result<Sweepout>
where
    F: Fn(&[f64]) -> Result<ChartPoint> + Sync + Send,
{
    let (grid, boundary) = ball_grid(k, grid_resolution)?;
    let loops = executor.try_map(&grid, |i, x| {
        let alpha = (1.0 - x.iter().map(|v| v * v).sum::<f64>()).max(0.0).sqrt();
        let eval = |t: f64| {
            let mut s = x.clone();
            if boundary[i] {
                s.extend([0.0, 0.0]);
            } else {
                s.extend([alpha * (2.0 * PI * t).cos(), alpha * (2.0 * PI * t).sin()]);
            }
            f(&s)
        };
        if boundary[i] {
            GeodesicLoop::constant(chart, &eval(0.0)?, m)
        } else {
            resample(eval, chart, m, None)
        }
    })?;
    Ok(Sweepout { chart: chart.clone(), k, grid, boundary, loops })
}

impl Sweepout {
    /// A `k = 1` sweepout: a single loop over the one-point ball `B^0`.
    pub fn single(lp: GeodesicLoop) -> Self {
        Sweepout {
            chart: lp.chart().clone(),
            k: 1,
            grid: vec![Vec::new()],
            boundary: vec![false],
            loops: vec![lp],
        }
    }

    pub fn chart(&self) -> &Arc<MetricChart> {
        &self.chart
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn grid(&self) -> &[Vec<f64>] {
        &self.grid
    }

    pub fn boundary(&self) -> &[bool] {
        &self.boundary
    }

    pub fn loops(&self) -> &[GeodesicLoop] {
        &self.loops
    }

    pub fn m(&self) -> usize {
        self.loops[0].m()
    }

    /// `kappa = max_x E(f_x)`.
    pub fn kappa(&self) -> f64 {
        sweepout_kappa(self)
    }
}

pub fn sweepout_kappa(s: &Sweepout) -> f64 {
    s.loops.iter().map(|l| l.energy()).fold(0.0, f64::max)
}

/// Point on the unit sphere at chart coordinates `(theta, phi)`.
pub fn sphere_to_ambient(theta: f64, phi: f64) -> [f64; 3] {
    [theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()]
}

/// The latitude map `S^2 -> S^2` in polar coordinates: `(x, u, v) -> (arccos x, atan2(v, u))`,
/// with `theta` clamped to the chart's polar guard.
pub fn latitude_map(chart: &MetricChart) -> impl Fn(&[f64]) -> Result<ChartPoint> + Sync + Send {
    let (lo, hi) = chart.domain().bounds[0];
    move |s: &[f64]| {
        let theta = s[0].clamp(-1.0, 1.0).acos().clamp(lo, hi);
        let phi = s[2].atan2(s[1]);
        Ok(DVector::from_vec(vec![theta, phi]))
    }
}

//! Birkhoff curve shortening `D = D2 ∘ D1` on geodesic polygons and the
//! min-max iteration over a sweepout.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::geodesic::{connect, GeodesicSegment};
use crate::loops::{GeodesicLoop, Sweepout};
use crate::manifold::{ChartPoint, MetricChart};
use crate::symmetry::{renormalize, verify_isometry, AffineIsometry, IsometryGroup, Word};

/// Smallest even `m` with `2 kappa / m < r^2`, doubled, and at least 8.
pub fn choose_m(kappa: f64, r: f64) -> usize {
    let bound = 2.0 * kappa.max(0.0) / (r * r);
    let mut m = bound.floor() as usize + 1;
    if m % 2 == 1 {
        m += 1;
    }
    (2 * m).max(8)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parity {
    /// Keeps even-indexed vertices and moves the odd ones (`D1`).
    Even,
    /// Keeps odd-indexed vertices and moves the even ones (`D2`).
    Odd,
}

fn bridge(chart: &Arc<MetricChart>, a: &ChartPoint, b: &ChartPoint, k: usize) -> Result<GeodesicSegment> {
    let r = chart.injectivity_radius();
    let seg = connect(chart, a, b).map_err(|e| match e {
        Error::Connectivity(msg) => Error::Connectivity(format!("vertices {k} and {}: {msg}", k + 2)),
        other => other,
    })?;
    if seg.length() >= r {
        return Err(Error::Connectivity(format!(
            "vertices {k} and {} are {} apart, not within r = {r}; m is too small",
            k + 2,
            seg.length()
        )));
    }
    Ok(seg)
}

/// One half of the Birkhoff map: every moved vertex becomes the geodesic
/// midpoint of its two kept neighbours.
pub fn half_step(lp: &GeodesicLoop, parity: Parity) -> Result<GeodesicLoop> {
    let m = lp.m();
    let chart = lp.chart();
    let mut vertices = lp.vertices().to_vec();
    let mut edges = lp.edges().to_vec();
    match parity {
        Parity::Even => {
            for k in (0..m).step_by(2) {
                let seg = bridge(chart, &vertices[k], &lp.vertex(k as isize + 2), k)?;
                vertices[k + 1] = seg.midpoint()?;
                let (first, second) = seg.split();
                edges[k] = first;
                edges[k + 1] = second;
            }
        }
        Parity::Odd => {
            for k in (1..m).step_by(2) {
                let seg = bridge(chart, &vertices[k], &lp.vertex(k as isize + 2), k)?;
                let (first, second) = seg.split();
                if k + 1 < m {
                    vertices[k + 1] = seg.midpoint()?;
                    edges[k] = first;
                    edges[k + 1] = second;
                } else {
                    // the midpoint is v_m = twist(v_0); pull it back to v_0
                    let back = lp.twist().map(|t| t.inverse());
                    vertices[0] = match &back {
                        Some(b) => b.apply(&seg.midpoint()?),
                        None => seg.midpoint()?,
                    };
                    edges[k] = first;
                    edges[0] = match &back {
                        Some(b) => second.transformed(b),
                        None => second,
                    };
                }
            }
        }
    }
    Ok(GeodesicLoop::from_parts(chart.clone(), vertices, edges, lp.twist().cloned()))
}

/// `D = D2 ∘ D1`.
pub fn birkhoff_step(lp: &GeodesicLoop) -> Result<GeodesicLoop> {
    half_step(&half_step(lp, Parity::Even)?, Parity::Odd)
}

/// Largest metric displacement between corresponding vertices.
pub fn vertex_displacement(a: &GeodesicLoop, b: &GeodesicLoop) -> Result<f64> {
    let chart = a.chart();
    let mut worst = 0.0f64;
    for (p, q) in a.vertices().iter().zip(b.vertices()) {
        worst = worst.max(chart.norm(p, &chart.delta(p, q))?);
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShorteningConfig {
    pub tol_energy: f64,
    pub tol_vertex: f64,
    pub tol_angle: f64,
    pub max_iters: usize,
    /// Loops shorter than this count as points; `None` means `r / 100`.
    pub degenerate_length: Option<f64>,
    /// Rounds over which the tracked min-max loop must stay still.
    pub window: usize,
}

impl Default for ShorteningConfig {
    fn default() -> Self {
        ShorteningConfig {
            tol_energy: 1e-10,
            tol_vertex: 1e-9,
            tol_angle: 1e-6,
            max_iters: 10_000,
            degenerate_length: None,
            window: 10,
        }
    }
}

impl ShorteningConfig {
    fn min_length(&self, chart: &MetricChart) -> f64 {
        self.degenerate_length.unwrap_or(chart.injectivity_radius() / 100.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Found,
    Degenerate,
    NoConvergence,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub n: usize,
    pub e_n: f64,
    pub argmax: usize,
    pub g_word: String,
    pub max_disp: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IterationTrace {
    pub records: Vec<TraceRecord>,
}

impl IterationTrace {
    /// Whether `e_{n+1} <= e_n + tol * max(1, e_n)` holds throughout.
    pub fn is_nonincreasing(&self, tol: f64) -> bool {
        self.records
            .windows(2)
            .all(|w| w[1].e_n <= w[0].e_n + tol * w[0].e_n.max(1.0))
    }
}

#[derive(Debug, Clone)]
pub struct GeodesicResult {
    pub status: Status,
    pub lp: GeodesicLoop,
    pub length: f64,
    pub energy: f64,
    pub angle_defect: f64,
    /// Accumulated renormalization and the closing twist of the final loop.
    pub renormalization: Option<AffineIsometry>,
    pub iterations: usize,
    pub trace: IterationTrace,
}

impl GeodesicResult {
    fn new(status: Status, lp: GeodesicLoop, renormalization: Option<AffineIsometry>, iterations: usize, trace: IterationTrace) -> Result<Self> {
        let angle_defect = lp.angle_defect()?;
        Ok(GeodesicResult {
            status,
            length: lp.length(),
            energy: lp.energy(),
            angle_defect,
            lp,
            renormalization,
            iterations,
            trace,
        })
    }

    pub fn twist(&self) -> Option<&AffineIsometry> {
        self.lp.twist()
    }

    pub fn twist_word(&self) -> String {
        self.twist().map(|t| t.word().to_string()).unwrap_or_else(|| Word::identity().to_string())
    }
}

fn check_group(chart: &MetricChart, group: &IsometryGroup) -> Result<()> {
    let gens = if group.generators().is_empty() { group.elements() } else { group.generators() };
    for (i, g) in gens.iter().enumerate() {
        let report = verify_isometry(chart, g, 20, 1e-10, 0);
        if !report.passed {
            return Err(Error::Usage(format!(
                "group generator {i} is not an isometry of the chart (violation {:e})",
                report.worst_violation
            )));
        }
    }
    Ok(())
}

fn renormalizing(group: Option<&IsometryGroup>) -> Option<&IsometryGroup> {
    group.filter(|g| g.fundamental_domain().is_some())
}

/// Closed-geodesic test for a limit loop: `D` barely changes it and it has no corners.
fn is_fixed_point(lp: &GeodesicLoop, cfg: &ShorteningConfig) -> Result<bool> {
    let next = birkhoff_step(lp)?;
    Ok((lp.energy() - next.energy()).abs() <= cfg.tol_energy && lp.angle_defect()? <= cfg.tol_angle)
}

/// Iterates `c <- renormalize(D c)` until the energy and vertices settle,
/// the loop degenerates, or the iteration budget runs out.
pub fn shorten_to_limit(lp: &GeodesicLoop, group: Option<&IsometryGroup>, cfg: &ShorteningConfig) -> Result<GeodesicResult> {
    let chart = lp.chart().clone();
    if let Some(g) = group {
        check_group(&chart, g)?;
    }
    let renorm = renormalizing(group);
    let min_len = cfg.min_length(&chart);
    let mut trace = IterationTrace::default();
    let mut acc = renorm.map(|_| AffineIsometry::identity(chart.dim()));
    let mut c = lp.clone();
    for n in 1..=cfg.max_iters {
        if c.length() < min_len {
            return GeodesicResult::new(Status::Degenerate, c, acc, n - 1, trace);
        }
        let next = birkhoff_step(&c)?;
        let drop = c.energy() - next.energy();
        let disp = vertex_displacement(&c, &next)?;
        let mut word = Word::identity();
        c = match renorm {
            Some(group) => {
                let r = renormalize(&next, group)?;
                word = r.element.word().clone();
                acc = acc.map(|a| r.element.compose(&a));
                r.image
            }
            None => next,
        };
        trace.records.push(TraceRecord { n, e_n: c.energy(), argmax: 0, g_word: word.to_string(), max_disp: disp });
        if drop < cfg.tol_energy && disp < cfg.tol_vertex {
            if c.length() < min_len {
                return GeodesicResult::new(Status::Degenerate, c, acc, n, trace);
            }
            let status = if c.angle_defect()? <= cfg.tol_angle { Status::Found } else { Status::NoConvergence };
            return GeodesicResult::new(status, c, acc, n, trace);
        }
    }
    GeodesicResult::new(Status::NoConvergence, c, acc, cfg.max_iters, trace)
}

/// Applies `D` to every loop of the sweepout each round and follows the
/// maximal-energy loop until it stops moving.
pub fn minmax(sweepout: &Sweepout, group: Option<&IsometryGroup>, cfg: &ShorteningConfig, executor: Executor) -> Result<GeodesicResult> {
    let chart = sweepout.chart().clone();
    if let Some(g) = group {
        check_group(&chart, g)?;
    }
    let renorm = renormalizing(group);
    let min_len = cfg.min_length(&chart);
    let r = chart.injectivity_radius();
    let boundary = sweepout.boundary();
    let mut loops: Vec<GeodesicLoop> = sweepout.loops().to_vec();
    let mut trace = IterationTrace::default();

    let all_degenerate = |ls: &[GeodesicLoop]| ls.iter().all(|l| l.length() < min_len);
    let top = |ls: &[GeodesicLoop]| {
        let mut best = 0;
        for (i, l) in ls.iter().enumerate() {
            if l.energy() > ls[best].energy() {
                best = i;
            }
        }
        best
    };
    if all_degenerate(&loops) {
        let i = top(&loops);
        return GeodesicResult::new(Status::Degenerate, loops[i].clone(), None, 0, trace);
    }

    let mut prev_e = loops[top(&loops)].energy();
    let mut tracked: Option<(usize, GeodesicLoop)> = None;
    let mut still = 0usize;
    for n in 1..=cfg.max_iters {
        loops = executor.try_map(&loops, |i, l| {
            if boundary[i] || l.length() < min_len {
                Ok(l.clone())
            } else {
                birkhoff_step(l)
            }
        })?;
        let arg = top(&loops);
        let e_n = loops[arg].energy();
        if e_n > prev_e + 1e-12 * prev_e.max(1.0) {
            return Err(Error::Numeric(format!("min-max energy increased at round {n}: {prev_e} -> {e_n}")));
        }
        prev_e = e_n;

        let (current, word, renorm_elem) = match renorm {
            Some(group) => {
                let rn = renormalize(&loops[arg], group)?;
                (rn.image, rn.element.word().to_string(), Some(rn.element))
            }
            None => (loops[arg].clone(), Word::identity().to_string(), None),
        };
        let disp = match &tracked {
            Some((i, last)) if *i == arg => vertex_displacement(last, &current)?,
            _ => f64::INFINITY,
        };
        trace.records.push(TraceRecord { n, e_n, argmax: arg, g_word: word, max_disp: disp });
        still = if disp < cfg.tol_vertex { still + 1 } else { 0 };
        tracked = Some((arg, current));

        if all_degenerate(&loops) {
            let lp = tracked.take().map(|t| t.1).expect("tracked loop");
            return GeodesicResult::new(Status::Degenerate, lp, renorm_elem, n, trace);
        }
        if still >= cfg.window {
            let lp = tracked.as_ref().map(|t| t.1.clone()).expect("tracked loop");
            if is_fixed_point(&lp, cfg)? {
                let status = if lp.length() > r { Status::Found } else { Status::Degenerate };
                return GeodesicResult::new(status, lp, renorm_elem, n, trace);
            }
        }
    }
    let lp = tracked.map(|t| t.1).expect("at least one round");
    GeodesicResult::new(Status::NoConvergence, lp, None, cfg.max_iters, trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loops::{build_sweepout, latitude_map, loop_distance, resample};
    use crate::manifold::{Domain, SPHERE_POLE_GUARD};
    use nalgebra::{DMatrix, DVector};
    use std::f64::consts::PI;

    fn pt(x: &[f64]) -> ChartPoint {
        DVector::from_column_slice(x)
    }

    fn plane(r: f64) -> Arc<MetricChart> {
        Arc::new(MetricChart::euclidean(2, r))
    }

    fn torus_group() -> IsometryGroup {
        IsometryGroup::deck(
            vec![AffineIsometry::translation(pt(&[1.0, 0.0])), AffineIsometry::translation(pt(&[0.0, 1.0]))],
            Domain { bounds: vec![(0.0, 1.0), (0.0, 1.0)] },
        )
        .unwrap()
    }

    fn circle(radius: f64, m: usize) -> GeodesicLoop {
        resample(
            |t| Ok(pt(&[radius * (2.0 * PI * t).cos(), radius * (2.0 * PI * t).sin()])),
            &plane(2.0),
            m,
            None,
        )
        .unwrap()
    }

    #[test]
    fn choose_m_examples() {
        assert_eq!(choose_m(0.0, 1.0), 8);
        assert_eq!(choose_m(2.0 * PI * PI, 1.0), 80);
        assert_eq!(choose_m(8.0, 1.0), 36);
    }

    #[test]
    fn octagon_half_step() {
        let c = circle(1.0, 8);
        let h = half_step(&c, Parity::Even).unwrap();
        for (k, v) in h.vertices().iter().enumerate() {
            let want = if k % 2 == 0 { 1.0 } else { (PI / 4.0).cos() };
            assert!((v.norm() - want).abs() < 1e-12, "{k}: {}", v.norm());
        }
        for k in (0..8).step_by(2) {
            assert_eq!(h.vertices()[k], c.vertices()[k]);
        }
    }

    #[test]
    fn constant_loops_are_fixed() {
        let c = GeodesicLoop::constant(&plane(1.0), &pt(&[0.2, -0.4]), 8).unwrap();
        let d = birkhoff_step(&c).unwrap();
        assert_eq!(d.energy(), 0.0);
        assert!(d.vertices().iter().all(|v| (v - pt(&[0.2, -0.4])).amax() < 1e-15));
    }

    #[test]
    fn straight_lines_are_fixed() {
        let shift = AffineIsometry::translation(pt(&[1.0, 0.0]));
        let line = resample(|t| Ok(pt(&[t, 0.25])), &plane(0.5), 8, Some(shift)).unwrap();
        let d = birkhoff_step(&line).unwrap();
        assert!(vertex_displacement(&line, &d).unwrap() <= 1e-12);
        assert!((d.energy() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn circle_energy_strictly_drops() {
        let c = circle(1.0, 64);
        let d = birkhoff_step(&c).unwrap();
        assert!(d.energy() < c.energy());
        // first stage: odd vertices move to the midpoint of a chord spanning two edges
        let h = half_step(&c, Parity::Even).unwrap();
        assert!((h.vertices()[1].norm() - (PI / 32.0).cos()).abs() < 1e-12);
        let kappa = c.energy();
        assert!(loop_distance(&c, &d).unwrap() <= 2.0 * (2.0 * kappa / 64.0).sqrt());
    }

    #[test]
    fn odd_step_respects_twist() {
        let shift = AffineIsometry::translation(pt(&[1.0, 0.0]));
        let c = resample(|t| Ok(pt(&[t, 0.1 * (2.0 * PI * t).sin()])), &plane(0.5), 16, Some(shift)).unwrap();
        let d = birkhoff_step(&c).unwrap();
        // closing edge still ends at twist(v_0)
        let last = d.edges().last().unwrap().end();
        assert!((last - d.vertex(16)).amax() < 1e-10);
        assert!((d.edges()[0].start() - &d.vertices()[0]).amax() < 1e-12);
        assert!(d.energy() < c.energy());
    }

    #[test]
    fn too_coarse_pairs_fail() {
        let c = circle(1.0, 8);
        let chart = Arc::new(MetricChart::euclidean(2, 1.0));
        let tight = GeodesicLoop::new(&chart, c.vertices().to_vec(), None).unwrap();
        assert!(matches!(half_step(&tight, Parity::Even), Err(Error::Connectivity(_))));
    }

    #[test]
    fn plane_circle_degenerates() {
        let res = shorten_to_limit(&circle(1.0, 64), None, &ShorteningConfig::default()).unwrap();
        assert_eq!(res.status, Status::Degenerate);
        assert!(res.length < 0.02);
    }

    #[test]
    fn torus_sine_loop_straightens() {
        let shift = AffineIsometry::translation(pt(&[1.0, 0.0]));
        let c = resample(|t| Ok(pt(&[t, 0.1 * (2.0 * PI * t).sin()])), &plane(0.5), 16, Some(shift)).unwrap();
        let res = shorten_to_limit(&c, Some(&torus_group()), &ShorteningConfig::default()).unwrap();
        assert_eq!(res.status, Status::Found);
        assert!(res.iterations <= 500, "{}", res.iterations);
        assert!((res.length - 1.0).abs() < 1e-6);
        let y0 = res.lp.vertices()[0][1];
        assert!(res.lp.vertices().iter().all(|v| (v[1] - y0).abs() < 1e-8));
        assert!(res.trace.is_nonincreasing(1e-12));
    }

    #[test]
    fn mobius_core() {
        let glide = AffineIsometry::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]), pt(&[1.0, 0.0])).unwrap();
        let group = IsometryGroup::deck(vec![glide.clone()], Domain { bounds: vec![(0.0, 1.0), (-10.0, 10.0)] }).unwrap();
        let g1 = group.generators()[0].clone();
        let c = resample(|t| Ok(pt(&[t, 0.05 * (PI * t).sin()])), &plane(0.5), 16, Some(g1)).unwrap();
        let res = shorten_to_limit(&c, Some(&group), &ShorteningConfig::default()).unwrap();
        assert_eq!(res.status, Status::Found);
        assert!((res.length - 1.0).abs() < 1e-6);
        assert_eq!(res.twist_word(), "g1");
        assert!(res.lp.vertices().iter().all(|v| v[1].abs() < 1e-7));
    }

    #[test]
    fn minmax_constant_sweepout() {
        let sw = build_sweepout(|_| Ok(pt(&[0.5, 0.5])), &plane(1.0), 2, 5, 8, Executor::Sequential).unwrap();
        let res = minmax(&sw, None, &ShorteningConfig::default(), Executor::Sequential).unwrap();
        assert_eq!(res.status, Status::Degenerate);
        assert_eq!(res.iterations, 0);
    }

    #[test]
    fn minmax_finds_equator() {
        let s = Arc::new(MetricChart::sphere_chart(1.0, 1.0, SPHERE_POLE_GUARD).unwrap());
        let sw = build_sweepout(latitude_map(&s), &s, 2, 41, 80, Executor::Parallel).unwrap();
        assert_eq!(choose_m(sw.kappa(), 1.0), 80);
        let res = minmax(&sw, None, &ShorteningConfig::default(), Executor::Parallel).unwrap();
        assert_eq!(res.status, Status::Found);
        assert!((res.length - 2.0 * PI).abs() < 1e-3);
        assert!((res.energy - 2.0 * PI * PI).abs() < 1e-3);
        assert!(res.trace.is_nonincreasing(1e-12));
        assert!(res.lp.vertices().iter().all(|v| (v[0] - PI / 2.0).abs() < 1e-3));
    }

    #[test]
    fn minmax_torus_single_loop() {
        let shift = AffineIsometry::translation(pt(&[1.0, 0.0]));
        let c = resample(|t| Ok(pt(&[t, 0.3 + 0.1 * (2.0 * PI * t).sin()])), &plane(0.5), 16, Some(shift)).unwrap();
        let res = minmax(&Sweepout::single(c), Some(&torus_group()), &ShorteningConfig::default(), Executor::Sequential).unwrap();
        assert_eq!(res.status, Status::Found);
        assert!((res.length - 1.0).abs() < 1e-6);
    }
}

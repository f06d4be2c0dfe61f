#![allow(dead_code)]

use std::f64::consts::PI;
use std::sync::Arc;

use closed_geodesics::loops::{resample, GeodesicLoop};
use closed_geodesics::manifold::expr::parse_expression;
use closed_geodesics::manifold::{ChartPoint, MetricChart, SPHERE_POLE_GUARD};
use closed_geodesics::symmetry::AffineIsometry;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn pt(x: &[f64]) -> ChartPoint {
    DVector::from_column_slice(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    Euclidean,
    Flat,
    Conformal,
    Sphere,
}

pub const ALL: [Which; 4] = [Which::Euclidean, Which::Flat, Which::Conformal, Which::Sphere];

pub fn g0() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0])
}

pub fn chart(which: Which) -> Arc<MetricChart> {
    Arc::new(match which {
        Which::Euclidean => MetricChart::euclidean(2, 1.0),
        Which::Flat => MetricChart::flat(g0(), 0.5).unwrap(),
        Which::Conformal => {
            MetricChart::conformal(parse_expression("0.1*sin(x1)*cos(x2)").unwrap(), 2, 0.5).unwrap()
        }
        Which::Sphere => MetricChart::sphere_chart(1.0, 1.0, SPHERE_POLE_GUARD).unwrap(),
    })
}

/// A point well inside the region used for random loops.
pub fn random_point(which: Which, rng: &mut ChaCha8Rng) -> ChartPoint {
    match which {
        Which::Sphere => pt(&[rng.gen_range(0.7..2.4), rng.gen_range(-PI..PI)]),
        _ => pt(&[rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]),
    }
}

/// Tangent vector at `p` with `|v|_g` uniform in `(0, max_norm)`.
pub fn random_velocity(chart: &MetricChart, p: &ChartPoint, max_norm: f64, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let a = rng.gen_range(0.0..2.0 * PI);
    let dir = pt(&[a.cos(), a.sin()]);
    let n = chart.norm(p, &dir).unwrap();
    dir * (rng.gen_range(0.05..1.0) * max_norm / n)
}

/// Smooth random loop from a few Fourier modes, sampled at a random even `m`.
pub fn random_loop(which: Which, rng: &mut ChaCha8Rng) -> GeodesicLoop {
    let c = chart(which);
    loop {
        let center = random_point(which, rng);
        let center = if which == Which::Sphere { pt(&[rng.gen_range(1.2..1.9), center[1]]) } else { center };
        let scale = if which == Which::Sphere { 0.3 } else { rng.gen_range(0.1..0.5) };
        let modes: Vec<[f64; 4]> = (0..3).map(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0))).collect();
        let mut m = [16, 24, 32][rng.gen_range(0..3)];
        let curve = |t: f64| {
            let mut x = center.clone();
            for (j, a) in modes.iter().enumerate() {
                let w = 2.0 * PI * (j + 1) as f64 * t;
                let k = scale / (j + 1) as f64;
                x[0] += k * (a[0] * w.cos() + a[1] * w.sin());
                x[1] += k * (a[2] * w.cos() + a[3] * w.sin());
            }
            Ok(x)
        };
        // refine until vertices two apart are within r of each other
        while m <= 256 {
            match resample(curve, &c, m, None) {
                Ok(lp) if lp.edges().iter().all(|e| e.length() < c.injectivity_radius() / 2.0) => return lp,
                _ => m *= 2,
            }
        }
    }
}

fn rotation(a: f64, reflect: bool) -> DMatrix<f64> {
    let (s, c) = a.sin_cos();
    let r = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
    if reflect {
        r * DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0])
    } else {
        r
    }
}

/// A random isometry of the chart's metric.
pub fn random_isometry(which: Which, rng: &mut ChaCha8Rng) -> AffineIsometry {
    let sign = |rng: &mut ChaCha8Rng| if rng.gen_bool(0.5) { -1.0 } else { 1.0 };
    let (a, b) = match which {
        Which::Euclidean => (
            rotation(rng.gen_range(0.0..2.0 * PI), rng.gen_bool(0.5)),
            pt(&[rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)]),
        ),
        Which::Flat => {
            let s = sign(rng);
            (DMatrix::identity(2, 2) * s, pt(&[rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)]))
        }
        Which::Conformal => {
            // x1 -> pi - x1 and x2 -> -x2 preserve sin(x1) cos(x2), as do 2 pi shifts
            let f1 = rng.gen_bool(0.5);
            let f2 = rng.gen_bool(0.5);
            let k1 = rng.gen_range(-1..=1) as f64 * 2.0 * PI;
            let k2 = rng.gen_range(-1..=1) as f64 * 2.0 * PI;
            let a = DMatrix::from_row_slice(2, 2, &[if f1 { -1.0 } else { 1.0 }, 0.0, 0.0, if f2 { -1.0 } else { 1.0 }]);
            (a, pt(&[if f1 { PI + k1 } else { k1 }, k2]))
        }
        Which::Sphere => {
            let f1 = rng.gen_bool(0.5);
            let f2 = rng.gen_bool(0.5);
            let a = DMatrix::from_row_slice(2, 2, &[if f1 { -1.0 } else { 1.0 }, 0.0, 0.0, if f2 { -1.0 } else { 1.0 }]);
            (a, pt(&[if f1 { PI } else { 0.0 }, rng.gen_range(-PI..PI)]))
        }
    };
    AffineIsometry::new(a, b).unwrap()
}

/// Largest coordinate difference between corresponding vertices, with angles wrapped.
pub fn vertex_gap(a: &GeodesicLoop, b: &GeodesicLoop) -> f64 {
    let chart = a.chart();
    a.vertices().iter().zip(b.vertices()).map(|(x, y)| chart.delta(x, y).amax()).fold(0.0, f64::max)
}

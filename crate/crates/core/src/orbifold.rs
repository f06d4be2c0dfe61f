//! Developable orbifolds `M/G`: the twisted closed-geodesic criterion, and
//! the reduction through fixed sets of maximal singular strata on exact
//! models (round spheres in ambient coordinates and flat tori).
//!
//! All reduction steps stay in the ambient coordinates of the original model,
//! so each fixed set `N_i` is an affine subspace of the ambient space and the
//! inclusions `N_i -> M` are the identity on coordinates.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geodesic::{exp_map, GeodesicSegment};
use crate::loops::{tangent_angle, GeodesicLoop};
use crate::manifold::MetricChart;
use crate::symmetry::{
    fixed_set, isotropy_in, normalizer_in, torus_fixed_components, verify_isometry, AffineIsometry, AffineSubspace,
    Ambient, IsometryGroup,
};

const POINT_TOL: f64 = 1e-9;
const INVARIANCE_SAMPLES: usize = 20;
const INVARIANCE_TOL: f64 = 1e-10;

/// Residuals of `g c(0) = c(1)` and `dg c'(0) = c'(1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwistReport {
    pub passed: bool,
    pub position_residual: f64,
    pub velocity_residual: f64,
    /// Largest turning angle between consecutive segments of the path.
    pub corner_defect: f64,
}

/// Checks the twisted closing condition for a chain of geodesic segments
/// traversed over `[0, 1]`. Residuals are measured in the metric at `c(1)`.
pub fn is_twisted_closed_geodesic(chart: &MetricChart, path: &[GeodesicSegment], g: &AffineIsometry, tol: f64) -> Result<TwistReport> {
    let (Some(first), Some(last)) = (path.first(), path.last()) else {
        return Err(Error::Usage("empty path".into()));
    };
    let k = path.len() as f64;
    let end = last.end();
    let gap = chart.delta(&end, &g.apply(&first.start()));
    let position_residual = chart.norm(&end, &gap)?;
    let dv = g.linear() * first.initial_velocity() * k - last.final_velocity() * k;
    let velocity_residual = chart.norm(&end, &dv)?;
    let mut corner_defect = 0.0f64;
    for w in path.windows(2) {
        if w[0].length() > 0.0 && w[1].length() > 0.0 {
            let a = tangent_angle(chart, &w[1].start(), &w[0].final_velocity(), &w[1].initial_velocity())?;
            corner_defect = corner_defect.max(a);
        }
    }
    Ok(TwistReport {
        passed: position_residual <= tol && velocity_residual <= tol,
        position_residual,
        velocity_residual,
        corner_defect,
    })
}

/// [`is_twisted_closed_geodesic`] for a loop, using its closing twist.
pub fn loop_twist_report(lp: &GeodesicLoop, tol: f64) -> Result<TwistReport> {
    let g = lp.twist().cloned().unwrap_or_else(|| AffineIsometry::identity(lp.chart().dim()));
    is_twisted_closed_geodesic(lp.chart(), lp.edges(), &g, tol)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    /// The unit sphere `S^n` in `R^{n+1}`.
    Sphere { n: usize },
    /// `R^n / Z^n` with the standard flat metric.
    FlatTorus { n: usize },
    /// A chart with a deck group; supports the twisted criterion and shortening only.
    Chart(Arc<MetricChart>),
}

/// `M/G` together with the totally geodesic subspace it currently lives on.
#[derive(Debug, Clone)]
pub struct DevelopableOrbifold {
    model: Model,
    group: IsometryGroup,
    /// Elements acting on the current space (the whole model at the start).
    elements: Vec<AffineIsometry>,
    space: AffineSubspace,
    /// Set when orientation-reversing elements were discarded.
    oriented_from: Option<usize>,
}

impl DevelopableOrbifold {
    pub fn sphere(n: usize, group: IsometryGroup) -> Result<Self> {
        let dim = n + 1;
        check_finite(&group, dim)?;
        let chart = MetricChart::euclidean(dim, 1.0);
        for (i, g) in group.elements().iter().enumerate() {
            if g.offset().amax() > 0.0 {
                return Err(Error::Config(format!("sphere symmetry {i} must be linear")));
            }
            let report = verify_isometry(&chart, g, 8, 1e-10, i as u64);
            let orth = (g.linear().transpose() * g.linear() - DMatrix::identity(dim, dim)).amax();
            if !report.passed || orth > 1e-10 {
                return Err(Error::Config(format!("sphere symmetry {i} is not orthogonal")));
            }
        }
        Ok(Self::build(Model::Sphere { n }, group, AffineSubspace::whole(dim)))
    }

    pub fn flat_torus(n: usize, group: IsometryGroup) -> Result<Self> {
        check_finite(&group, n)?;
        if group.ambient() != Ambient::Torus {
            return Err(Error::Config("torus symmetry must be enumerated modulo the lattice".into()));
        }
        for (i, g) in group.elements().iter().enumerate() {
            let a = g.linear();
            let integral = a.iter().all(|x| (x - x.round()).abs() <= 1e-12);
            let orth = (a.transpose() * a - DMatrix::identity(n, n)).amax();
            if !integral || orth > 1e-12 {
                return Err(Error::Config(format!(
                    "torus symmetry {i} needs an integer linear part orthogonal for the flat metric"
                )));
            }
        }
        Ok(Self::build(Model::FlatTorus { n }, group, AffineSubspace::whole(n)))
    }

    pub fn chart(chart: Arc<MetricChart>, group: IsometryGroup) -> Self {
        let n = chart.dim();
        Self::build(Model::Chart(chart), group, AffineSubspace::whole(n))
    }

    fn build(model: Model, group: IsometryGroup, space: AffineSubspace) -> Self {
        let elements = group.elements().to_vec();
        DevelopableOrbifold { model, group, elements, space, oriented_from: None }
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn group(&self) -> &IsometryGroup {
        &self.group
    }

    pub fn elements(&self) -> &[AffineIsometry] {
        &self.elements
    }

    pub fn space(&self) -> &AffineSubspace {
        &self.space
    }

    /// Order of the original group when orientation-reversing elements were dropped.
    pub fn oriented_from(&self) -> Option<usize> {
        self.oriented_from
    }

    fn ambient(&self) -> Ambient {
        match self.model {
            Model::FlatTorus { .. } => Ambient::Torus,
            _ => Ambient::Euclidean,
        }
    }

    fn exact(&self) -> Result<()> {
        match self.model {
            Model::Chart(_) => Err(Error::Usage(
                "automated reduction needs an exact model (sphere or flat torus)".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Dimension of the current space as a manifold: a great sphere or a subtorus.
    pub fn model_dim(&self) -> isize {
        self.set_dim(&self.space)
    }

    fn set_dim(&self, s: &AffineSubspace) -> isize {
        match self.model {
            Model::Sphere { .. } => s.sphere_dim(),
            _ => s.dim,
        }
    }

    fn set_distance(&self, s: &AffineSubspace, x: &DVector<f64>) -> f64 {
        s.distance_in(x, self.ambient())
    }

    /// Whether `g` moves some point of the current space.
    fn acts_nontrivially(&self, g: &AffineIsometry) -> bool {
        !acts_trivially_on(g, &self.space, self.ambient())
    }

    /// Keeps the elements whose restriction to the current space preserves orientation.
    pub fn orientation_preserving(mut self) -> Self {
        let before = self.elements.len();
        let d = &self.space.directions;
        self.elements.retain(|g| {
            let restricted = d.transpose() * g.linear() * d;
            restricted.determinant() > 0.0
        });
        if self.elements.len() < before {
            self.oriented_from = Some(self.oriented_from.unwrap_or(before));
        }
        self
    }

    /// Elements fixing the current space pointwise.
    fn kernel(&self) -> Vec<AffineIsometry> {
        self.elements.iter().filter(|g| !self.acts_nontrivially(g)).cloned().collect()
    }

    /// Fixed-set components of `kernel + {g}` inside the current space, with model dimension.
    fn fixed_components(&self, g: &AffineIsometry, kernel: &[AffineIsometry]) -> Vec<AffineSubspace> {
        let mut sub = kernel.to_vec();
        sub.push(g.clone());
        let comps = match self.model {
            Model::FlatTorus { .. } => torus_fixed_components(&sub),
            _ => vec![fixed_set(&sub)],
        };
        comps
            .into_iter()
            .filter(|c| !c.is_empty() && self.set_dim(c) >= 0)
            .filter(|c| self.set_distance(&self.space, &c.base) < POINT_TOL)
            .map(canonical_directions)
            .collect()
    }
}

fn check_finite(group: &IsometryGroup, dim: usize) -> Result<()> {
    if group.order().is_none() {
        return Err(Error::Config("orbifold symmetry must be a finite group".into()));
    }
    if group.dim() != dim {
        return Err(Error::Config(format!("symmetry acts on R^{} but the model needs R^{dim}", group.dim())));
    }
    Ok(())
}

fn acts_trivially_on(g: &AffineIsometry, s: &AffineSubspace, ambient: Ambient) -> bool {
    let d = &s.directions;
    if (g.linear() * d - d).amax() > POINT_TOL {
        return false;
    }
    ambient.point_distance(&g.apply(&s.base), &s.base) <= POINT_TOL
}

/// Flips each direction so its first significant entry is positive.
fn canonical_directions(mut s: AffineSubspace) -> AffineSubspace {
    for mut col in s.directions.column_iter_mut() {
        if let Some(x) = col.iter().find(|x| x.abs() > 1e-12).copied() {
            if x < 0.0 {
                col.neg_mut();
            }
        }
    }
    s
}

/// A generic point of a maximal singular stratum.
#[derive(Debug, Clone)]
pub struct StratumPoint {
    pub point: DVector<f64>,
    /// Full isotropy group `G_p` in the current group.
    pub isotropy: Vec<AffineIsometry>,
    /// The component through `p` of the fixed set of `G_p`.
    pub fixed: AffineSubspace,
    pub fixed_dim: isize,
    /// No nonidentity element of `G_p` fixes a nonzero normal vector at `p`.
    pub normal_free: bool,
}

const OFFSETS: [f64; 4] = [0.1234, 0.2718, 0.0577, 0.3141];

/// `base + e_1 + t (e_2 + 2 e_3 + ...)` on the fixed component, normalized on spheres.
fn generic_point(orb: &DevelopableOrbifold, c: &AffineSubspace, t: f64) -> DVector<f64> {
    let k = c.directions.ncols();
    let mut coeffs = vec![0.0; k];
    if k > 0 {
        coeffs[0] = 1.0;
    }
    for (j, x) in coeffs.iter_mut().enumerate().skip(1) {
        *x = t * j as f64;
    }
    let p = c.point(&coeffs);
    match orb.model {
        Model::Sphere { .. } => {
            // the sphere meets a linear subspace in its unit vectors
            let n = p.norm();
            if n > 0.0 { p / n } else { p }
        }
        _ => p,
    }
}

/// Whether `G_p` acts freely on the normal space of `N` inside the current space.
fn normal_space_free(orb: &DevelopableOrbifold, n: &AffineSubspace, gp: &[AffineIsometry]) -> bool {
    let s = &orb.space.directions;
    // component of the current space orthogonal to N
    let proj = s - &n.directions * (n.directions.transpose() * s);
    let svd = proj.svd(true, false);
    let u = svd.u.expect("requested U");
    let cols: Vec<DVector<f64>> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &sv)| sv > 1e-9)
        .map(|(k, _)| u.column(k).into_owned())
        .collect();
    if cols.is_empty() {
        return true;
    }
    let q = DMatrix::from_columns(&cols);
    let eye = DMatrix::identity(q.ncols(), q.ncols());
    gp.iter().filter(|g| orb.acts_nontrivially(g)).all(|g| {
        let r = q.transpose() * g.linear() * &q - &eye;
        r.svd(false, false).singular_values.iter().fold(f64::INFINITY, |m, &x| m.min(x)) > 1e-9
    })
}

/// A point on a fixed set of maximal dimension, or `None` when no element
/// has fixed points (the quotient is a manifold).
pub fn maximal_stratum_point(orb: &DevelopableOrbifold) -> Result<Option<StratumPoint>> {
    orb.exact()?;
    let kernel = orb.kernel();
    let mut best: Option<(isize, AffineSubspace)> = None;
    for g in orb.elements.iter().filter(|g| orb.acts_nontrivially(g)) {
        for c in orb.fixed_components(g, &kernel) {
            let d = orb.set_dim(&c);
            if best.as_ref().is_none_or(|(bd, _)| d > *bd) {
                best = Some((d, c));
            }
        }
    }
    let Some((dim, component)) = best else {
        return Ok(None);
    };
    let ambient = orb.ambient();
    let mut fallback = None;
    for t in OFFSETS {
        let p = generic_point(orb, &component, t);
        let gp = isotropy_in(&orb.elements, ambient, &p, POINT_TOL);
        let fixed = fixed_component_through(orb, &gp, &p)?;
        let fixed_dim = orb.set_dim(&fixed);
        let normal_free = normal_space_free(orb, &fixed, &gp);
        let found = StratumPoint { point: p, isotropy: gp, fixed, fixed_dim, normal_free };
        if fixed_dim == dim {
            return Ok(Some(found));
        }
        fallback.get_or_insert(found);
    }
    // every offset landed on a lower stratum; report the first with its freeness verdict
    Ok(fallback)
}

fn fixed_component_through(orb: &DevelopableOrbifold, gp: &[AffineIsometry], p: &DVector<f64>) -> Result<AffineSubspace> {
    let comps = match orb.model {
        Model::FlatTorus { .. } => torus_fixed_components(gp),
        _ => vec![fixed_set(gp)],
    };
    comps
        .into_iter()
        .find(|c| orb.set_distance(c, p) < POINT_TOL)
        .map(canonical_directions)
        .ok_or_else(|| Error::Numeric("isotropy group does not fix its own point".into()))
}

/// One reduction `(M, G) -> (N, H)`.
#[derive(Debug, Clone)]
pub struct ReductionStep {
    pub stratum: StratumPoint,
    /// Model dimension of the space being reduced.
    pub from_dim: isize,
    pub normalizer: Vec<AffineIsometry>,
    /// Order of `H` restricted to `N`, after quotienting the kernel of the restriction.
    pub induced_order: usize,
    pub kernel_order: usize,
    /// Largest distance from `N` of `h x` over `h` in `H` and sampled `x` in `N`.
    pub invariance_residual: f64,
    pub induced: DevelopableOrbifold,
}

impl ReductionStep {
    pub fn invariance_passed(&self) -> bool {
        self.invariance_residual <= INVARIANCE_TOL
    }
}

fn sample_set(orb: &DevelopableOrbifold, n: &AffineSubspace, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = n.directions.ncols();
    (0..count)
        .map(|_| {
            let coeffs: Vec<f64> = (0..k).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let p = n.point(&coeffs);
            match orb.model {
                Model::Sphere { .. } => {
                    let r = p.norm();
                    if r > 0.0 { p / r } else { p }
                }
                _ => p,
            }
        })
        .collect()
}

/// Passes from the current space to the fixed set `N` of a maximal stratum
/// and the normalizer `H` of its isotropy, restricted to the elements
/// preserving the component `N`.
pub fn reduce_once(orb: &DevelopableOrbifold) -> Result<Option<ReductionStep>> {
    let Some(stratum) = maximal_stratum_point(orb)? else {
        return Ok(None);
    };
    let ambient = orb.ambient();
    let n = stratum.fixed.clone();
    let normalizer: Vec<AffineIsometry> = normalizer_in(&orb.elements, ambient, &stratum.isotropy)
        .into_iter()
        .filter(|h| orb.set_distance(&n, &h.apply(&stratum.point)) < POINT_TOL)
        .collect();

    let samples = sample_set(orb, &n, INVARIANCE_SAMPLES, 41);
    let mut invariance_residual = 0.0f64;
    for h in &normalizer {
        for x in &samples {
            invariance_residual = invariance_residual.max(orb.set_distance(&n, &h.apply(x)));
        }
    }

    let kernel_order = normalizer.iter().filter(|h| acts_trivially_on(h, &n, ambient)).count();
    let mut distinct: Vec<&AffineIsometry> = Vec::new();
    for h in &normalizer {
        if !distinct.iter().any(|d| same_on(h, d, &n, ambient)) {
            distinct.push(h);
        }
    }
    let induced = DevelopableOrbifold {
        model: orb.model.clone(),
        group: orb.group.clone(),
        elements: normalizer.clone(),
        space: n,
        oriented_from: orb.oriented_from,
    };
    Ok(Some(ReductionStep {
        from_dim: orb.model_dim(),
        induced_order: distinct.len(),
        kernel_order,
        invariance_residual,
        normalizer,
        induced,
        stratum,
    }))
}

fn same_on(a: &AffineIsometry, b: &AffineIsometry, s: &AffineSubspace, ambient: Ambient) -> bool {
    let d = &s.directions;
    (a.linear() * d - b.linear() * d).amax() <= POINT_TOL
        && ambient.point_distance(&a.apply(&s.base), &b.apply(&s.base)) <= POINT_TOL
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Terminal {
    /// The action on the final space has no fixed points.
    Manifold,
    /// The final space is a circle.
    Dimension1,
    /// Only isolated singular points remain, in even dimension.
    EvenIsolated,
}

impl Terminal {
    pub fn tag(self) -> &'static str {
        match self {
            Terminal::Manifold => "manifold",
            Terminal::Dimension1 => "dimension_1",
            Terminal::EvenIsolated => "even_isolated",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReductionChain {
    pub start: DevelopableOrbifold,
    pub steps: Vec<ReductionStep>,
    pub terminal: Terminal,
    /// The isolated stratum point for an [`Terminal::EvenIsolated`] ending.
    pub isolated: Option<StratumPoint>,
    pub last: DevelopableOrbifold,
}

impl ReductionChain {
    /// Model dimensions: the start, then each fixed set.
    pub fn dims(&self) -> Vec<isize> {
        std::iter::once(self.start.model_dim()).chain(self.steps.iter().map(|s| s.stratum.fixed_dim)).collect()
    }

    pub fn strictly_decreasing(&self) -> bool {
        self.dims().windows(2).all(|w| w[1] < w[0])
    }

    /// Every fixed set in the chain has odd dimension.
    pub fn odd_dimensions(&self) -> bool {
        self.steps.iter().all(|s| s.stratum.fixed_dim.rem_euclid(2) == 1)
    }
}

/// Reduces until the quotient is a manifold, a circle, or has only isolated
/// singularities. Orientation-reversing elements are dropped at every level.
pub fn reduction_chain(orb: &DevelopableOrbifold) -> Result<ReductionChain> {
    orb.exact()?;
    let start = orb.clone().orientation_preserving();
    let mut current = start.clone();
    let mut steps = Vec::new();
    loop {
        let d = current.model_dim();
        if d <= 1 {
            let terminal = if d == 1 { Terminal::Dimension1 } else { Terminal::EvenIsolated };
            return Ok(ReductionChain { start, steps, terminal, isolated: None, last: current });
        }
        let Some(stratum) = maximal_stratum_point(&current)? else {
            return Ok(ReductionChain { start, steps, terminal: Terminal::Manifold, isolated: None, last: current });
        };
        if stratum.fixed_dim <= 0 {
            return Ok(ReductionChain {
                start,
                steps,
                terminal: Terminal::EvenIsolated,
                isolated: Some(stratum),
                last: current,
            });
        }
        let step = reduce_once(&current)?.expect("stratum exists");
        current = step.induced.clone().orientation_preserving();
        steps.push(step);
    }
}

/// A closed geodesic of an exact model, in ambient coordinates:
/// `c(t) = cos(Lt) p + sin(Lt) v/L` on spheres and `c(t) = p + t v` on tori.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGeodesic {
    pub on_sphere: bool,
    pub start: DVector<f64>,
    pub velocity: DVector<f64>,
    /// `g` with `g c(0) = c(1)`, `dg c'(0) = c'(1)`: the identity on spheres,
    /// a lattice translation on tori.
    pub twist: AffineIsometry,
}

impl ModelGeodesic {
    pub fn length(&self) -> f64 {
        self.velocity.norm()
    }

    pub fn point_at(&self, t: f64) -> DVector<f64> {
        if self.on_sphere {
            let l = self.length();
            &self.start * (l * t).cos() + &self.velocity * ((l * t).sin() / l)
        } else {
            &self.start + &self.velocity * t
        }
    }

    pub fn velocity_at(&self, t: f64) -> DVector<f64> {
        if self.on_sphere {
            let l = self.length();
            -&self.start * (l * (l * t).sin()) + &self.velocity * (l * t).cos()
        } else {
            self.velocity.clone()
        }
    }

    /// Twisted closing residuals in ambient coordinates.
    pub fn twist_report(&self, tol: f64) -> TwistReport {
        let position_residual = (self.twist.apply(&self.point_at(0.0)) - self.point_at(1.0)).norm();
        let velocity_residual = (self.twist.linear() * self.velocity_at(0.0) - self.velocity_at(1.0)).norm();
        TwistReport {
            passed: position_residual <= tol && velocity_residual <= tol,
            position_residual,
            velocity_residual,
            corner_defect: 0.0,
        }
    }

    /// Deviation from being a geodesic of the model over `samples` points:
    /// on spheres `|c| = 1`, `c . c' = 0`, `|c'| = L` and `c'' = -L^2 c`;
    /// on tori the residuals of a re-integrated straight segment.
    pub fn geodesic_residual(&self, samples: usize) -> Result<f64> {
        if self.on_sphere {
            let l = self.length();
            let mut worst = 0.0f64;
            for j in 0..=samples {
                let t = j as f64 / samples as f64;
                let c = self.point_at(t);
                let v = self.velocity_at(t);
                // second derivative of the closed form
                let acc = -(&self.start * ((l * t).cos() * l * l)) - &self.velocity * ((l * t).sin() * l);
                worst = worst
                    .max((c.norm() - 1.0).abs())
                    .max(c.dot(&v).abs())
                    .max((v.norm() - l).abs())
                    .max((acc + &c * (l * l)).amax());
            }
            Ok(worst)
        } else {
            let n = self.start.len();
            let chart = Arc::new(MetricChart::euclidean(n, 2.0 * self.length().max(1.0)));
            let seg = exp_map(&chart, &self.start, &self.velocity, None)?;
            let mut worst = 0.0f64;
            for j in 0..=samples {
                let t = j as f64 / samples as f64;
                worst = worst.max((seg.evaluate(t)? - self.point_at(t)).amax());
            }
            Ok(worst)
        }
    }

    /// Largest distance of `g c(t)` from the image of `c` over the given elements.
    pub fn invariance_residual(&self, elements: &[AffineIsometry], samples: usize) -> f64 {
        let (image, ambient) = if self.on_sphere {
            let dirs = DMatrix::from_columns(&[self.start.clone(), self.velocity.normalize()]);
            let dim = 2;
            (AffineSubspace { base: DVector::zeros(self.start.len()), directions: dirs, dim }, Ambient::Euclidean)
        } else {
            let dirs = DMatrix::from_columns(&[self.velocity.normalize()]);
            (AffineSubspace { base: self.start.clone(), directions: dirs, dim: 1 }, Ambient::Torus)
        };
        let mut worst = 0.0f64;
        for g in elements {
            for j in 0..samples {
                let x = self.point_at(j as f64 / samples as f64);
                worst = worst.max(image.distance_in(&g.apply(&x), ambient));
            }
        }
        worst
    }
}

/// The great circle through the first two directions of a linear subspace.
fn great_circle(space: &AffineSubspace) -> ModelGeodesic {
    let n = space.ambient_dim();
    let p = space.directions.column(0).into_owned();
    let u = space.directions.column(1).into_owned();
    ModelGeodesic { on_sphere: true, start: p, velocity: u * (2.0 * PI), twist: AffineIsometry::identity(n) }
}

/// Shortest nonzero integer vector in the span of the directions, searching
/// coordinates up to `bound` in absolute value.
fn shortest_lattice_vector(dirs: &DMatrix<f64>, bound: i64) -> Option<DVector<f64>> {
    let n = dirs.nrows();
    let side = (2 * bound + 1) as u64;
    let total = side.checked_pow(n as u32)?;
    let mut best: Option<DVector<f64>> = None;
    for code in 0..total {
        let mut c = code;
        let w = DVector::from_iterator(
            n,
            (0..n).map(|_| {
                let x = (c % side) as i64 - bound;
                c /= side;
                x as f64
            }),
        );
        if w.iter().all(|x| *x == 0.0) {
            continue;
        }
        let off = (&w - dirs * (dirs.transpose() * &w)).amax();
        if off > 1e-9 {
            continue;
        }
        if best.as_ref().is_none_or(|b| w.norm_squared() < b.norm_squared() - 1e-12) {
            best = Some(w);
        }
    }
    // first nonzero entry positive
    best.map(|w| match w.iter().find(|x| **x != 0.0) {
        Some(x) if *x < 0.0 => -w,
        _ => w,
    })
}

fn lattice_line(space: &AffineSubspace) -> Result<ModelGeodesic> {
    for bound in [2, 4, 8] {
        if let Some(w) = shortest_lattice_vector(&space.directions, bound) {
            return Ok(ModelGeodesic {
                on_sphere: false,
                start: space.base.clone(),
                twist: AffineIsometry::translation(w.clone()),
                velocity: w,
            });
        }
    }
    Err(Error::Numeric("the terminal subtorus has no short lattice direction".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReductionStatus {
    Found,
    ReducedToEvenIsolated,
}

impl ReductionStatus {
    pub fn tag(self) -> &'static str {
        match self {
            ReductionStatus::Found => "found",
            ReductionStatus::ReducedToEvenIsolated => "reduced_to_even_isolated",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReductionResult {
    pub status: ReductionStatus,
    pub chain: ReductionChain,
    pub geodesic: Option<ModelGeodesic>,
    pub twist_report: Option<TwistReport>,
    pub geodesic_residual: Option<f64>,
    /// Against every element of the (orientation-preserving) starting group.
    pub invariance_residual: Option<f64>,
}

impl ReductionResult {
    /// The found geodesic closes up, is a geodesic of the model, and every
    /// chain step passed its invariance check, all within `tol`.
    pub fn verified(&self, tol: f64) -> bool {
        self.status == ReductionStatus::Found
            && self.twist_report.as_ref().is_some_and(|r| r.position_residual <= tol && r.velocity_residual <= tol)
            && self.geodesic_residual.is_some_and(|r| r <= tol)
            && self.chain.steps.iter().all(|s| s.invariance_passed())
    }
}

/// Runs the reduction and returns a closed geodesic on the terminal space:
/// the circle itself, a great circle, or a shortest lattice line. The
/// geodesic is checked in the coordinates of the original model.
pub fn find_closed_geodesic_via_reduction(orb: &DevelopableOrbifold) -> Result<ReductionResult> {
    let chain = reduction_chain(orb)?;
    if chain.terminal == Terminal::EvenIsolated {
        return Ok(ReductionResult {
            status: ReductionStatus::ReducedToEvenIsolated,
            chain,
            geodesic: None,
            twist_report: None,
            geodesic_residual: None,
            invariance_residual: None,
        });
    }
    let space = chain.last.space().clone();
    let geodesic = match chain.last.model() {
        Model::Sphere { .. } => great_circle(&space),
        Model::FlatTorus { .. } => lattice_line(&space)?,
        Model::Chart(_) => unreachable!("reduction rejects charts"),
    };
    let twist_report = geodesic.twist_report(1e-8);
    let geodesic_residual = geodesic.geodesic_residual(64)?;
    let invariance_residual = geodesic.invariance_residual(chain.start.elements(), INVARIANCE_SAMPLES);
    Ok(ReductionResult {
        status: ReductionStatus::Found,
        chain,
        geodesic: Some(geodesic),
        twist_report: Some(twist_report),
        geodesic_residual: Some(geodesic_residual),
        invariance_residual: Some(invariance_residual),
    })
}

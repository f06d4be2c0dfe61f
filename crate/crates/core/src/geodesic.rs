//! Geodesic initial- and boundary-value problems on a [`MetricChart`].
//!
//! The exponential map is a fixed-step RK4 integration of
//! `x'' + Gamma(x)(x', x') = 0` over the parameter interval `[0, 1]`. The
//! boundary-value problem is solved by Newton shooting on the initial
//! velocity with a forward-difference Jacobian and step halving.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::manifold::{quad, ChartPoint, MetricChart, MetricKind, Tangent};
use crate::symmetry::AffineIsometry;

/// Dense RK4 states of one integrated geodesic.
#[derive(Debug)]
struct Path {
    positions: Vec<DVector<f64>>,
    velocities: Vec<DVector<f64>>,
    /// `|v|_g` at the start of the path.
    speed: f64,
}

impl Path {
    fn steps(&self) -> usize {
        self.positions.len() - 1
    }
}

/// A geodesic `c: [0, 1] -> M`, possibly a sub-interval of a longer
/// integrated path (the halves produced when a segment is split at its
/// midpoint share the parent's states).
#[derive(Debug, Clone)]
pub struct GeodesicSegment {
    chart: Arc<MetricChart>,
    path: Arc<Path>,
    lo: f64,
    hi: f64,
}

/// Number of RK4 steps used for a segment of the given arc length.
pub fn steps_for(chart: &MetricChart, speed: f64) -> usize {
    let s = &chart.solver;
    let raw = (s.steps_per_radius * speed / chart.injectivity_radius()).ceil();
    let n = if raw.is_finite() { (raw as usize).max(s.min_steps) } else { s.min_steps };
    // even, so that the midpoint is a stored node
    n + (n % 2)
}

/// Work buffers for one RK4 integration.
struct Rk4 {
    x: Vec<f64>,
    v: Vec<f64>,
    xt: Vec<f64>,
    vt: Vec<f64>,
    dx: Vec<f64>,
    dv: Vec<f64>,
    a: Vec<f64>,
}

impl Rk4 {
    fn new(x: &[f64], v: &[f64]) -> Self {
        let n = x.len();
        Rk4 {
            x: x.to_vec(),
            v: v.to_vec(),
            xt: vec![0.0; n],
            vt: vec![0.0; n],
            dx: vec![0.0; n],
            dv: vec![0.0; n],
            a: vec![0.0; n],
        }
    }

    /// Advances `(x, v)` by one classical RK4 step of size `h`.
    fn step(&mut self, chart: &MetricChart, h: f64) -> Result<()> {
        let n = self.x.len();
        chart.geodesic_acceleration(&self.x, &self.v, &mut self.a)?;
        for i in 0..n {
            self.dx[i] = self.v[i];
            self.dv[i] = self.a[i];
            self.xt[i] = self.x[i] + 0.5 * h * self.v[i];
            self.vt[i] = self.v[i] + 0.5 * h * self.a[i];
        }
        for (stage, (cx, weight)) in [(0.5, 2.0), (1.0, 2.0), (0.0, 1.0)].into_iter().enumerate() {
            chart.geodesic_acceleration(&self.xt, &self.vt, &mut self.a)?;
            for i in 0..n {
                self.dx[i] += weight * self.vt[i];
                self.dv[i] += weight * self.a[i];
            }
            if stage < 2 {
                for i in 0..n {
                    let vt = self.vt[i];
                    self.xt[i] = self.x[i] + cx * h * vt;
                    self.vt[i] = self.v[i] + cx * h * self.a[i];
                }
            }
        }
        for i in 0..n {
            self.x[i] += h / 6.0 * self.dx[i];
            self.v[i] += h / 6.0 * self.dv[i];
        }
        Ok(())
    }
}

fn rk4_step(chart: &MetricChart, x: &DVector<f64>, v: &DVector<f64>, h: f64) -> Result<(DVector<f64>, DVector<f64>)> {
    let mut rk = Rk4::new(x.as_slice(), v.as_slice());
    rk.step(chart, h)?;
    Ok((DVector::from_vec(rk.x), DVector::from_vec(rk.v)))
}

/// Integrates over `[0, 1]`; `keep` decides whether intermediate states are stored.
fn integrate(
    chart: &MetricChart,
    p: &ChartPoint,
    v: &DVector<f64>,
    steps: usize,
    keep: bool,
) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>)> {
    let h = 1.0 / steps as f64;
    let mut xs = Vec::with_capacity(if keep { steps + 1 } else { 2 });
    let mut vs = Vec::with_capacity(if keep { steps + 1 } else { 2 });
    let mut rk = Rk4::new(p.as_slice(), v.as_slice());
    xs.push(p.clone());
    vs.push(v.clone());
    // |v|_g is conserved along geodesics; curved metrics are projected back onto it
    let curved = !matches!(chart.kind(), MetricKind::Euclidean | MetricKind::Flat(_));
    let speed2 = if curved { quad(&chart.metric_at(p)?, v, v) } else { 0.0 };
    for k in 0..steps {
        rk.step(chart, h).map_err(|_| Error::DomainExit { parameter: k as f64 * h })?;
        if !chart.contains(&rk.x) || rk.x.iter().chain(&rk.v).any(|c| !c.is_finite()) {
            return Err(Error::DomainExit { parameter: (k + 1) as f64 * h });
        }
        if speed2 > 0.0 {
            let x = DVector::from_column_slice(&rk.x);
            let w = DVector::from_column_slice(&rk.v);
            let now = quad(&chart.metric_at(&x)?, &w, &w);
            if now > 0.0 {
                let scale = (speed2 / now).sqrt();
                rk.v.iter_mut().for_each(|c| *c *= scale);
            }
        }
        if keep {
            xs.push(DVector::from_column_slice(&rk.x));
            vs.push(DVector::from_column_slice(&rk.v));
        }
    }
    if !keep {
        xs.push(DVector::from_vec(rk.x));
        vs.push(DVector::from_vec(rk.v));
    }
    Ok((xs, vs))
}

/// Geodesic with initial point `p` and velocity `v` over `[0, 1]`.
///
/// `steps` defaults to `max(16, ceil(64 |v|_g / r))`, rounded up to even.
pub fn exp_map(chart: &Arc<MetricChart>, p: &ChartPoint, v: &DVector<f64>, steps: Option<usize>) -> Result<GeodesicSegment> {
    let speed = chart.norm(p, v)?;
    let steps = steps.unwrap_or_else(|| steps_for(chart, speed)).max(1);
    let (positions, velocities) = integrate(chart, p, v, steps, true)?;
    Ok(GeodesicSegment {
        chart: chart.clone(),
        path: Arc::new(Path { positions, velocities, speed }),
        lo: 0.0,
        hi: 1.0,
    })
}

/// [`exp_map`] taking a [`Tangent`].
pub fn exp_tangent(chart: &Arc<MetricChart>, v: &Tangent, steps: Option<usize>) -> Result<GeodesicSegment> {
    exp_map(chart, &v.base, &v.components, steps)
}

fn shoot_endpoint(chart: &MetricChart, p: &ChartPoint, v: &DVector<f64>, steps: usize) -> Result<DVector<f64>> {
    let (mut xs, _) = integrate(chart, p, v, steps, false)?;
    Ok(xs.pop().expect("endpoint"))
}

fn shoot(
    chart: &MetricChart,
    p: &ChartPoint,
    target: &DVector<f64>,
    mut v: DVector<f64>,
    steps: usize,
    tol: f64,
) -> Result<DVector<f64>> {
    let n = p.len();
    let solver = chart.solver;
    let residual = |v: &DVector<f64>| -> Result<DVector<f64>> { Ok(shoot_endpoint(chart, p, v, steps)? - target) };
    let mut res = residual(&v).map_err(|e| Error::Connectivity(format!("initial guess failed: {e}")))?;
    let mut rn = res.amax();
    let floor = 64.0 * f64::EPSILON * (1.0 + target.amax());
    if rn <= floor {
        return Ok(v);
    }

    let fd_jacobian = |v: &DVector<f64>, res: &DVector<f64>| -> Result<DMatrix<f64>> {
        let eps = 1e-7 * v.amax().max(1e-4);
        let mut jac = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut probe = v.clone();
            probe[j] += eps;
            let rj = residual(&probe).map_err(|e| Error::Connectivity(format!("jacobian probe failed: {e}")))?;
            jac.set_column(j, &((rj - res) / eps));
        }
        Ok(jac)
    };
    let solve = |jac: &DMatrix<f64>, res: &DVector<f64>| -> Result<DVector<f64>> {
        jac.clone()
            .lu()
            .solve(res)
            .filter(|d| d.iter().all(|c| c.is_finite()))
            .ok_or_else(|| Error::Connectivity("singular shooting jacobian".into()))
    };

    let mut jac = fd_jacobian(&v, &res)?;
    let mut fresh = true;
    let mut iters = 0;
    while rn > tol {
        if iters >= solver.max_newton {
            return Err(Error::Connectivity(format!(
                "shooting did not converge after {} iterations (residual {rn:e})",
                solver.max_newton
            )));
        }
        let dir = solve(&jac, &res)?;
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..=20 {
            let trial = &v - &dir * lambda;
            if let Ok(r) = residual(&trial) {
                if r.amax() < rn {
                    accepted = Some((trial, r));
                    break;
                }
            }
            lambda *= 0.5;
            if !fresh {
                // a stale Broyden jacobian gets replaced before any damping
                break;
            }
        }
        match accepted {
            Some((trial, r)) => {
                // Broyden rank-one update
                let step = &trial - &v;
                let y = &r - &res;
                let ss = step.dot(&step);
                if ss > 0.0 {
                    let corr = (y - &jac * &step) / ss;
                    jac += corr * step.transpose();
                }
                v = trial;
                res = r;
                rn = res.amax();
                fresh = false;
            }
            None if !fresh => {
                jac = fd_jacobian(&v, &res)?;
                fresh = true;
            }
            None => return Err(Error::Connectivity(format!("damped shooting stalled at residual {rn:e}"))),
        }
        iters += 1;
    }
    // one polishing step toward machine precision
    if rn > floor {
        if let Ok(dir) = solve(&jac, &res) {
            let trial = &v - dir;
            if let Ok(r) = residual(&trial) {
                if r.amax() < rn {
                    v = trial;
                }
            }
        }
    }
    Ok(v)
}

/// The minimizing geodesic from `p` to `q`, assuming `d(p, q) < r`.
///
/// Periodic coordinates of `q` are shifted to the representative nearest `p`.
pub fn connect(chart: &Arc<MetricChart>, p: &ChartPoint, q: &ChartPoint) -> Result<GeodesicSegment> {
    for x in [p, q] {
        if !chart.contains(x.as_slice()) {
            return Err(Error::Domain { point: x.iter().copied().collect() });
        }
    }
    let delta = chart.delta(p, q);
    if delta.iter().all(|d| *d == 0.0) {
        return Ok(GeodesicSegment::constant(chart, p));
    }
    let target = p + &delta;
    let tol = chart.solver.tol_bvp * (1.0 + target.amax());
    let mut v = delta;
    let mut steps = steps_for(chart, chart.norm(p, &v)?);
    for _ in 0..4 {
        v = shoot(chart, p, &target, v, steps, tol)?;
        let again = steps_for(chart, chart.norm(p, &v)?);
        if again == steps {
            break;
        }
        steps = again;
    }
    exp_map(chart, p, &v, Some(steps))
}

/// Riemannian distance of nearby points, the length of [`connect`].
pub fn distance(chart: &Arc<MetricChart>, p: &ChartPoint, q: &ChartPoint) -> Result<f64> {
    Ok(connect(chart, p, q)?.length())
}

impl GeodesicSegment {
    /// The constant curve at `p`.
    pub fn constant(chart: &Arc<MetricChart>, p: &ChartPoint) -> Self {
        let zero = DVector::zeros(p.len());
        GeodesicSegment {
            chart: chart.clone(),
            path: Arc::new(Path {
                positions: vec![p.clone(); 3],
                velocities: vec![zero; 3],
                speed: 0.0,
            }),
            lo: 0.0,
            hi: 1.0,
        }
    }

    pub fn chart(&self) -> &Arc<MetricChart> {
        &self.chart
    }

    fn span(&self) -> f64 {
        self.hi - self.lo
    }

    /// RK4 steps of the underlying integration.
    pub fn steps(&self) -> usize {
        self.path.steps()
    }

    /// Constant speed `|c'|_g` in this segment's own parameter.
    pub fn speed(&self) -> f64 {
        self.path.speed * self.span()
    }

    pub fn length(&self) -> f64 {
        self.speed()
    }

    /// `E = L^2 / 2` for a constant-speed curve on `[0, 1]`.
    pub fn energy(&self) -> f64 {
        0.5 * self.speed() * self.speed()
    }

    fn state_at(&self, t: f64) -> Result<(DVector<f64>, DVector<f64>)> {
        let t = t.clamp(0.0, 1.0);
        let s = self.lo + t * self.span();
        let n = self.path.steps();
        let scaled = s * n as f64;
        let k = (scaled.floor() as usize).min(n);
        let ds = s - k as f64 / n as f64;
        let (x, v) = (&self.path.positions[k], &self.path.velocities[k]);
        if k == n || ds.abs() <= 1e-15 {
            return Ok((x.clone(), v.clone()));
        }
        rk4_step(&self.chart, x, v, ds)
    }

    /// `c(t)`, exact at stored nodes and one RK4 step away otherwise.
    pub fn evaluate(&self, t: f64) -> Result<ChartPoint> {
        Ok(self.state_at(t)?.0)
    }

    /// `c'(t)` in this segment's parameter.
    pub fn velocity_at(&self, t: f64) -> Result<DVector<f64>> {
        Ok(self.state_at(t)?.1 * self.span())
    }

    pub fn midpoint(&self) -> Result<ChartPoint> {
        self.evaluate(0.5)
    }

    pub fn start(&self) -> ChartPoint {
        self.evaluate(0.0).expect("start is a stored node")
    }

    pub fn end(&self) -> ChartPoint {
        self.evaluate(1.0).expect("end is a stored node when hi is")
    }

    pub fn initial_velocity(&self) -> DVector<f64> {
        self.velocity_at(0.0).expect("stored node")
    }

    pub fn final_velocity(&self) -> DVector<f64> {
        self.velocity_at(1.0).expect("stored node")
    }

    /// The restriction to `[a, b]`, reparametrized over `[0, 1]`.
    pub fn sub(&self, a: f64, b: f64) -> Self {
        GeodesicSegment {
            chart: self.chart.clone(),
            path: self.path.clone(),
            lo: self.lo + a * self.span(),
            hi: self.lo + b * self.span(),
        }
    }

    /// The first and second halves.
    pub fn split(&self) -> (Self, Self) {
        (self.sub(0.0, 0.5), self.sub(0.5, 1.0))
    }

    /// The image under an isometry of the chart metric.
    pub fn transformed(&self, g: &AffineIsometry) -> Self {
        let positions = self.path.positions.iter().map(|x| g.apply(x)).collect();
        let velocities = self.path.velocities.iter().map(|v| g.linear() * v).collect();
        GeodesicSegment {
            chart: self.chart.clone(),
            path: Arc::new(Path { positions, velocities, speed: self.path.speed }),
            lo: self.lo,
            hi: self.hi,
        }
    }

    /// Stored nodes lying in this segment's range, with their local parameters.
    fn nodes(&self) -> impl Iterator<Item = (f64, &DVector<f64>, &DVector<f64>)> + '_ {
        let n = self.path.steps() as f64;
        let span = self.span();
        (0..=self.path.steps()).filter_map(move |k| {
            let s = k as f64 / n;
            (s >= self.lo - 1e-15 && s <= self.hi + 1e-15)
                .then(|| ((s - self.lo) / span, &self.path.positions[k], &self.path.velocities[k]))
        })
    }

    /// Largest relative deviation of `|c'|_g` from its initial value over the stored nodes.
    pub fn speed_drift(&self) -> Result<f64> {
        let v0 = self.path.speed;
        if v0 == 0.0 {
            return Ok(0.0);
        }
        let mut worst = 0.0f64;
        for (_, x, v) in self.nodes() {
            let g = self.chart.metric_at(x)?;
            let s = quad(&g, v, v).sqrt();
            worst = worst.max((s - v0).abs() / v0);
        }
        Ok(worst)
    }

    /// `1/2 int_0^1 |c'|^2 dt` by the trapezoid rule over stored nodes.
    pub fn energy_by_quadrature(&self) -> Result<f64> {
        let nodes: Vec<_> = self.nodes().collect();
        if nodes.len() < 2 || self.path.speed == 0.0 {
            return Ok(0.0);
        }
        let span2 = self.span() * self.span();
        let mut total = 0.0;
        let mut prev: Option<(f64, f64)> = None;
        for (t, x, v) in nodes {
            let g = self.chart.metric_at(x)?;
            let e = 0.5 * quad(&g, v, v) * span2;
            if let Some((tp, ep)) = prev {
                total += 0.5 * (e + ep) * (t - tp);
            }
            prev = Some((t, e));
        }
        Ok(total)
    }
}

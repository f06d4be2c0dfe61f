//! Riemannian metrics on a single global coordinate chart.

pub mod expr;

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
pub use expr::{parse_expression, Env, Expression};

/// Chart coordinates of a point.
pub type ChartPoint = DVector<f64>;

/// A tangent vector together with its base point.
#[derive(Debug, Clone, PartialEq)]
pub struct Tangent {
    pub base: ChartPoint,
    pub components: DVector<f64>,
}

impl Tangent {
    pub fn new(base: ChartPoint, components: DVector<f64>) -> Self {
        Tangent { base, components }
    }

    pub fn norm(&self, chart: &MetricChart) -> Result<f64> {
        chart.norm(&self.base, &self.components)
    }
}

/// Closed coordinate box; infinite bounds mean the axis is unrestricted.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    pub bounds: Vec<(f64, f64)>,
}

impl Domain {
    pub fn whole(dim: usize) -> Self {
        Domain { bounds: vec![(f64::NEG_INFINITY, f64::INFINITY); dim] }
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.len() == self.bounds.len()
            && p.iter().zip(&self.bounds).all(|(x, (lo, hi))| x.is_finite() && *lo <= *x && *x <= *hi)
    }

    /// Whether the box `p ± h` along every axis stays inside.
    pub fn contains_with_margin(&self, p: &[f64], h: f64) -> bool {
        p.len() == self.bounds.len()
            && p.iter().zip(&self.bounds).all(|(x, (lo, hi))| x.is_finite() && *lo <= *x - h && *x + h <= *hi)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MetricKind {
    Euclidean,
    /// Constant symmetric positive definite matrix.
    Flat(DMatrix<f64>),
    /// Polar chart `(theta, phi)` of the round sphere: `diag(R^2, R^2 sin^2 theta)`.
    SphereChart { radius: f64 },
    /// `exp(2 lambda(x)) * I`.
    Conformal { lambda: Expression },
    /// Row-major `n x n` entries; only the upper triangle is evaluated.
    Custom { entries: Vec<Expression> },
}

/// Parameters of the geodesic integrator and shooting solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverParams {
    pub tol_bvp: f64,
    pub max_newton: usize,
    pub min_steps: usize,
    /// RK4 steps per injectivity radius of arc length.
    pub steps_per_radius: f64,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams { tol_bvp: 1e-10, max_newton: 50, min_steps: 16, steps_per_radius: 64.0 }
    }
}

/// Default polar guard for the sphere chart.
pub const SPHERE_POLE_GUARD: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricChart {
    dim: usize,
    domain: Domain,
    kind: MetricKind,
    /// Lower bound on the injectivity radius.
    r: f64,
    fd_step: f64,
    /// Period of each coordinate, if it is an angle.
    periods: Vec<Option<f64>>,
    pub solver: SolverParams,
}

impl MetricChart {
    pub fn new(dim: usize, domain: Domain, kind: MetricKind, r: f64, fd_step: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("dimension must be positive".into()));
        }
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::Config(format!("injectivity radius bound must be positive, got {r}")));
        }
        if !(fd_step > 0.0) {
            return Err(Error::Config(format!("fd_step must be positive, got {fd_step}")));
        }
        if domain.bounds.len() != dim {
            return Err(Error::Config("domain dimension mismatch".into()));
        }
        match &kind {
            MetricKind::Flat(g) => {
                if g.nrows() != dim || g.ncols() != dim {
                    return Err(Error::Config("flat metric has wrong shape".into()));
                }
                if (g - g.transpose()).abs().max() > 0.0 {
                    return Err(Error::Config("flat metric is not symmetric".into()));
                }
                if g.clone().cholesky().is_none() {
                    return Err(Error::Config("flat metric is not positive definite".into()));
                }
            }
            MetricKind::SphereChart { radius } => {
                if dim != 2 || !(*radius > 0.0) {
                    return Err(Error::Config("sphere chart needs dim 2 and positive radius".into()));
                }
            }
            MetricKind::Conformal { lambda } => lambda.check_vars(dim, false)?,
            MetricKind::Custom { entries } => {
                if entries.len() != dim * dim {
                    return Err(Error::Config("custom metric needs n*n entries".into()));
                }
                for i in 0..dim {
                    for j in 0..dim {
                        entries[i * dim + j].check_vars(dim, false)?;
                        if entries[i * dim + j] != entries[j * dim + i] {
                            return Err(Error::Config(format!(
                                "custom metric entries ({i},{j}) and ({j},{i}) differ"
                            )));
                        }
                    }
                }
            }
            MetricKind::Euclidean => {}
        }
        Ok(MetricChart {
            dim,
            domain,
            kind,
            r,
            fd_step,
            periods: vec![None; dim],
            solver: SolverParams::default(),
        })
    }

    pub fn euclidean(dim: usize, r: f64) -> Self {
        Self::new(dim, Domain::whole(dim), MetricKind::Euclidean, r, 1e-5).expect("valid euclidean chart")
    }

    pub fn flat(g: DMatrix<f64>, r: f64) -> Result<Self> {
        let dim = g.nrows();
        Self::new(dim, Domain::whole(dim), MetricKind::Flat(g), r, 1e-5)
    }

    /// Polar chart on the sphere of the given radius, `theta` restricted to
    /// `[guard, pi - guard]` and `phi` treated as a `2 pi`-periodic angle.
    pub fn sphere_chart(radius: f64, r: f64, guard: f64) -> Result<Self> {
        let domain = Domain { bounds: vec![(guard, PI - guard), (f64::NEG_INFINITY, f64::INFINITY)] };
        let mut chart = Self::new(2, domain, MetricKind::SphereChart { radius }, r, 1e-5)?;
        chart.periods = vec![None, Some(2.0 * PI)];
        Ok(chart)
    }

    pub fn conformal(lambda: Expression, dim: usize, r: f64) -> Result<Self> {
        Self::new(dim, Domain::whole(dim), MetricKind::Conformal { lambda }, r, 1e-5)
    }

    pub fn with_periods(mut self, periods: Vec<Option<f64>>) -> Result<Self> {
        if periods.len() != self.dim {
            return Err(Error::Config("period list has wrong length".into()));
        }
        self.periods = periods;
        Ok(self)
    }

    pub fn with_fd_step(mut self, h: f64) -> Self {
        self.fd_step = h;
        self
    }

    pub fn with_solver(mut self, solver: SolverParams) -> Self {
        self.solver = solver;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn kind(&self) -> &MetricKind {
        &self.kind
    }

    pub fn injectivity_radius(&self) -> f64 {
        self.r
    }

    pub fn fd_step(&self) -> f64 {
        self.fd_step
    }

    pub fn periods(&self) -> &[Option<f64>] {
        &self.periods
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        self.domain.contains(p)
    }

    /// Coordinate difference `q - p`, with periodic axes wrapped into `[-P/2, P/2)`.
    pub fn delta(&self, p: &ChartPoint, q: &ChartPoint) -> DVector<f64> {
        let mut d = q - p;
        for (di, period) in d.iter_mut().zip(&self.periods) {
            if let Some(period) = period {
                *di -= period * (*di / period + 0.5).floor();
            }
        }
        d
    }

    pub fn metric_at(&self, p: &ChartPoint) -> Result<DMatrix<f64>> {
        if !self.contains(p.as_slice()) {
            return Err(Error::Domain { point: p.iter().copied().collect() });
        }
        Ok(self.metric_unchecked(p.as_slice()))
    }

    fn metric_unchecked(&self, p: &[f64]) -> DMatrix<f64> {
        let n = self.dim;
        match &self.kind {
            MetricKind::Euclidean => DMatrix::identity(n, n),
            MetricKind::Flat(g) => g.clone(),
            MetricKind::SphereChart { radius } => {
                let r2 = radius * radius;
                let s = p[0].sin();
                DMatrix::from_diagonal(&DVector::from_vec(vec![r2, r2 * s * s]))
            }
            MetricKind::Conformal { lambda } => {
                let f = (2.0 * lambda.eval(&Env::coords(p))).exp();
                DMatrix::identity(n, n) * f
            }
            MetricKind::Custom { entries } => {
                let env = Env::coords(p);
                let mut g = DMatrix::zeros(n, n);
                for i in 0..n {
                    for j in i..n {
                        let v = entries[i * n + j].eval(&env);
                        g[(i, j)] = v;
                        g[(j, i)] = v;
                    }
                }
                g
            }
        }
    }

    /// `|v|_g` at `p`.
    pub fn norm(&self, p: &ChartPoint, v: &DVector<f64>) -> Result<f64> {
        let g = self.metric_at(p)?;
        Ok(quad(&g, v, v).max(0.0).sqrt())
    }

    pub fn inner(&self, p: &ChartPoint, a: &DVector<f64>, b: &DVector<f64>) -> Result<f64> {
        let g = self.metric_at(p)?;
        Ok(quad(&g, a, b))
    }

    /// Christoffel symbols of the second kind at `p`.
    pub fn christoffel_at(&self, p: &ChartPoint) -> Result<Christoffel> {
        let n = self.dim;
        match &self.kind {
            MetricKind::Euclidean | MetricKind::Flat(_) => {
                if !self.contains(p.as_slice()) {
                    return Err(Error::Domain { point: p.iter().copied().collect() });
                }
                Ok(Christoffel::zeros(n))
            }
            MetricKind::SphereChart { .. } => {
                if !self.contains(p.as_slice()) {
                    return Err(Error::Domain { point: p.iter().copied().collect() });
                }
                let (s, c) = p[0].sin_cos();
                let mut gamma = Christoffel::zeros(2);
                gamma.set(0, 1, 1, -s * c);
                gamma.set(1, 0, 1, c / s);
                gamma.set(1, 1, 0, c / s);
                Ok(gamma)
            }
            _ => self.christoffel_fd(p.as_slice()),
        }
    }

    /// `out^i = -Gamma^i_{jk}(x) v^j v^k`, without building the symbols for the built-in metrics.
    pub fn geodesic_acceleration(&self, x: &[f64], v: &[f64], out: &mut [f64]) -> Result<()> {
        match &self.kind {
            MetricKind::Euclidean | MetricKind::Flat(_) => {
                if !self.contains(x) {
                    return Err(Error::Domain { point: x.to_vec() });
                }
                out.iter_mut().for_each(|o| *o = 0.0);
            }
            MetricKind::SphereChart { .. } => {
                if !self.contains(x) {
                    return Err(Error::Domain { point: x.to_vec() });
                }
                let (s, c) = x[0].sin_cos();
                out[0] = s * c * v[1] * v[1];
                out[1] = -2.0 * (c / s) * v[0] * v[1];
            }
            _ => self.christoffel_fd(x)?.acceleration(v, out),
        }
        Ok(())
    }

    /// Central finite differences of the metric, symmetrized in the lower indices.
    pub fn christoffel_fd(&self, p: &[f64]) -> Result<Christoffel> {
        let n = self.dim;
        let h = self.fd_step;
        if !self.domain.contains_with_margin(p, h) {
            return Err(Error::Domain { point: p.to_vec() });
        }
        // dg[l] = partial_l g
        let mut dg = Vec::with_capacity(n);
        let mut x = p.to_vec();
        for l in 0..n {
            x[l] = p[l] + h;
            let gp = self.metric_unchecked(&x);
            x[l] = p[l] - h;
            let gm = self.metric_unchecked(&x);
            x[l] = p[l];
            dg.push((gp - gm) / (2.0 * h));
        }
        let g = self.metric_unchecked(p);
        let ginv = g
            .try_inverse()
            .filter(|m| m.iter().all(|v| v.is_finite()))
            .ok_or_else(|| Error::Numeric(format!("singular metric at {p:?}")))?;
        let mut gamma = Christoffel::zeros(n);
        for j in 0..n {
            for k in j..n {
                // first kind: [jk, l] = (d_j g_lk + d_k g_lj - d_l g_jk) / 2
                let first: Vec<f64> =
                    (0..n).map(|l| 0.5 * (dg[j][(l, k)] + dg[k][(l, j)] - dg[l][(j, k)])).collect();
                for i in 0..n {
                    let v: f64 = (0..n).map(|l| ginv[(i, l)] * first[l]).sum();
                    gamma.set(i, j, k, v);
                    gamma.set(i, k, j, v);
                }
            }
        }
        Ok(gamma)
    }
}

/// `a^T G b`.
pub(crate) fn quad(g: &DMatrix<f64>, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let n = a.len();
    let mut s = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += g[(i, j)] * b[j];
        }
        s += a[i] * row;
    }
    s
}

/// `Gamma^i_{jk}` stored densely.
#[derive(Debug, Clone, PartialEq)]
pub struct Christoffel {
    n: usize,
    data: Vec<f64>,
}

impl Christoffel {
    pub fn zeros(n: usize) -> Self {
        Christoffel { n, data: vec![0.0; n * n * n] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.n + j) * self.n + k]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let n = self.n;
        self.data[(i * n + j) * n + k] = v;
    }

    /// `-Gamma^i_{jk} v^j v^k`, the geodesic acceleration.
    pub fn acceleration(&self, v: &[f64], out: &mut [f64]) {
        let n = self.n;
        for (i, o) in out.iter_mut().enumerate().take(n) {
            let mut s = 0.0;
            for j in 0..n {
                let vj = v[j];
                if vj == 0.0 {
                    continue;
                }
                let row = &self.data[(i * n + j) * n..(i * n + j + 1) * n];
                for k in 0..n {
                    s += row[k] * vj * v[k];
                }
            }
            *o = -s;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

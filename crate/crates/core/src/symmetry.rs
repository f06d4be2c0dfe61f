//! Isometric group actions by affine maps.
//!
//! Elements carry the generator word they were built from so traces can
//! report which group element renormalized a loop. Actions on flat tori
//! `R^n / Z^n` compare translations modulo the integer lattice.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::loops::GeodesicLoop;
use crate::manifold::{ChartPoint, Domain, MetricChart, Tangent};

/// Entrywise tolerance for deciding that two group elements coincide.
pub const MATCH_TOL: f64 = 1e-9;

/// A freely reduced word in the generators. Letter `+i` is generator `i - 1`,
/// `-i` its inverse.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Word(Vec<i32>);

impl Word {
    pub fn identity() -> Self {
        Word(Vec::new())
    }

    pub fn generator(index: usize) -> Self {
        Word(vec![index as i32 + 1])
    }

    pub fn letters(&self) -> &[i32] {
        &self.0
    }

    pub fn is_identity(&self) -> bool {
        self.0.is_empty()
    }

    pub fn concat(&self, other: &Word) -> Word {
        let mut out = self.0.clone();
        for &l in &other.0 {
            if out.last() == Some(&-l) {
                out.pop();
            } else {
                out.push(l);
            }
        }
        Word(out)
    }

    pub fn inverse(&self) -> Word {
        Word(self.0.iter().rev().map(|l| -l).collect())
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("e");
        }
        let letters = &self.0;
        let mut i = 0;
        while i < letters.len() {
            let l = letters[i];
            let mut j = i;
            while j < letters.len() && letters[j] == l {
                j += 1;
            }
            if i > 0 {
                f.write_str(" ")?;
            }
            let power = (j - i) as i32 * l.signum();
            if power == 1 {
                write!(f, "g{}", l.abs())?;
            } else {
                write!(f, "g{}^{power}", l.abs())?;
            }
            i = j;
        }
        Ok(())
    }
}

/// `x -> A x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineIsometry {
    a: DMatrix<f64>,
    b: DVector<f64>,
    word: Word,
}

impl AffineIsometry {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if !a.is_square() || a.nrows() != b.len() {
            return Err(Error::Config(format!(
                "affine map needs square A matching b, got {}x{} and {}",
                a.nrows(),
                a.ncols(),
                b.len()
            )));
        }
        if a.clone().try_inverse().is_none() {
            return Err(Error::Config("affine map has singular linear part".into()));
        }
        Ok(AffineIsometry { a, b, word: Word::identity() })
    }

    pub fn identity(n: usize) -> Self {
        AffineIsometry { a: DMatrix::identity(n, n), b: DVector::zeros(n), word: Word::identity() }
    }

    pub fn translation(b: DVector<f64>) -> Self {
        let n = b.len();
        AffineIsometry { a: DMatrix::identity(n, n), b, word: Word::identity() }
    }

    pub fn linear_map(a: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        Self::new(a, DVector::zeros(n))
    }

    pub fn with_word(mut self, word: Word) -> Self {
        self.word = word;
        self
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn linear(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn offset(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn word(&self) -> &Word {
        &self.word
    }

    pub fn apply(&self, p: &ChartPoint) -> ChartPoint {
        &self.a * p + &self.b
    }

    /// `dg` on a tangent vector: linear part only, based at the image point.
    pub fn apply_tangent(&self, w: &Tangent) -> Tangent {
        Tangent::new(self.apply(&w.base), &self.a * &w.components)
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &AffineIsometry) -> AffineIsometry {
        AffineIsometry {
            a: &self.a * &other.a,
            b: &self.a * &other.b + &self.b,
            word: self.word.concat(&other.word),
        }
    }

    pub fn inverse(&self) -> AffineIsometry {
        let ainv = self.a.clone().try_inverse().expect("linear part is invertible");
        let b = -(&ainv * &self.b);
        AffineIsometry { a: ainv, b, word: self.word.inverse() }
    }

    /// `self ∘ other ∘ self^-1`.
    pub fn conjugate(&self, other: &AffineIsometry) -> AffineIsometry {
        self.compose(other).compose(&self.inverse())
    }

    pub fn determinant(&self) -> f64 {
        self.a.determinant()
    }

    pub fn is_identity(&self, ambient: Ambient) -> bool {
        self.matches(&AffineIsometry::identity(self.dim()), ambient)
    }

    /// Entrywise comparison within [`MATCH_TOL`]; on a torus translations are compared mod `Z^n`.
    pub fn matches(&self, other: &AffineIsometry, ambient: Ambient) -> bool {
        if (&self.a - &other.a).amax() > MATCH_TOL {
            return false;
        }
        let d = &self.b - &other.b;
        match ambient {
            Ambient::Euclidean => d.amax() <= MATCH_TOL,
            Ambient::Torus => d.iter().all(|x| (x - x.round()).abs() <= MATCH_TOL),
        }
    }

    /// Representative with translation reduced into `[0, 1)^n`.
    pub fn reduced(&self, ambient: Ambient) -> AffineIsometry {
        match ambient {
            Ambient::Euclidean => self.clone(),
            Ambient::Torus => {
                let b = self.b.map(|x| {
                    let r = x - x.floor();
                    if r >= 1.0 - 1e-12 { 0.0 } else { r }
                });
                AffineIsometry { a: self.a.clone(), b, word: self.word.clone() }
            }
        }
    }
}

impl fmt::Display for AffineIsometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.word)
    }
}

/// Whether points are compared in `R^n` or in the torus `R^n / Z^n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Ambient {
    #[default]
    Euclidean,
    Torus,
}

impl Ambient {
    /// Distance between two points (coordinate norm), modulo the lattice on a torus.
    pub fn point_distance(self, p: &DVector<f64>, q: &DVector<f64>) -> f64 {
        let d = q - p;
        match self {
            Ambient::Euclidean => d.norm(),
            Ambient::Torus => d.map(|x| x - x.round()).norm(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupKind {
    Finite,
    /// Free, properly discontinuous action such as lattice translations or glides.
    Deck,
}

#[derive(Debug, Clone)]
pub struct IsometryGroup {
    generators: Vec<AffineIsometry>,
    kind: GroupKind,
    ambient: Ambient,
    elements: Vec<AffineIsometry>,
    fundamental_domain: Option<Domain>,
}

impl IsometryGroup {
    /// Enumerates the finite group generated by `generators`.
    pub fn finite(generators: Vec<AffineIsometry>, ambient: Ambient, max_elements: usize) -> Result<Self> {
        let generators = label(generators)?;
        let elements = enumerate_group(&generators, ambient, max_elements)?;
        Ok(IsometryGroup { generators, kind: GroupKind::Finite, ambient, elements, fundamental_domain: None })
    }

    /// A deck group with a box fundamental domain `F` (half-open on the upper faces).
    pub fn deck(generators: Vec<AffineIsometry>, fundamental_domain: Domain) -> Result<Self> {
        let generators = label(generators)?;
        if fundamental_domain.bounds.len() != generators[0].dim() {
            return Err(Error::Config("fundamental domain dimension mismatch".into()));
        }
        Ok(IsometryGroup {
            generators,
            kind: GroupKind::Deck,
            ambient: Ambient::Euclidean,
            elements: Vec::new(),
            fundamental_domain: Some(fundamental_domain),
        })
    }

    /// The group of one element.
    pub fn trivial(n: usize, ambient: Ambient) -> Self {
        IsometryGroup {
            generators: Vec::new(),
            kind: GroupKind::Finite,
            ambient,
            elements: vec![AffineIsometry::identity(n)],
            fundamental_domain: None,
        }
    }

    /// A finite group given by an explicit, already closed element list.
    pub fn from_elements(elements: Vec<AffineIsometry>, ambient: Ambient) -> Result<Self> {
        if elements.is_empty() {
            return Err(Error::Usage("empty element list".into()));
        }
        if !is_subgroup(&elements, ambient) {
            return Err(Error::Usage("element list is not closed under composition and inverses".into()));
        }
        Ok(IsometryGroup {
            generators: elements.clone(),
            kind: GroupKind::Finite,
            ambient,
            elements,
            fundamental_domain: None,
        })
    }

    pub fn with_fundamental_domain(mut self, f: Domain) -> Self {
        self.fundamental_domain = Some(f);
        self
    }

    pub fn generators(&self) -> &[AffineIsometry] {
        &self.generators
    }

    pub fn kind(&self) -> GroupKind {
        self.kind
    }

    pub fn ambient(&self) -> Ambient {
        self.ambient
    }

    /// Enumerated elements (finite groups only).
    pub fn elements(&self) -> &[AffineIsometry] {
        &self.elements
    }

    pub fn order(&self) -> Option<usize> {
        (self.kind == GroupKind::Finite).then_some(self.elements.len())
    }

    pub fn fundamental_domain(&self) -> Option<&Domain> {
        self.fundamental_domain.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.elements
            .first()
            .or(self.generators.first())
            .map(|g| g.dim())
            .unwrap_or(0)
    }

    /// Group element `g` with `g p` in the fundamental domain, found by greedy
    /// descent of the box-exit score over generators and their inverses.
    pub fn representative(&self, p: &ChartPoint) -> Result<AffineIsometry> {
        let f = self
            .fundamental_domain
            .as_ref()
            .ok_or_else(|| Error::Renormalization("group has no fundamental domain".into()))?;
        let n = p.len();
        let mut moves: Vec<AffineIsometry> = Vec::new();
        for g in &self.generators {
            moves.push(g.clone());
            moves.push(g.inverse());
        }
        if self.kind == GroupKind::Finite {
            moves = self.elements.clone();
        }
        let mut g = AffineIsometry::identity(n);
        let mut x = p.clone();
        let mut score = exit_score(f, &x);
        for _ in 0..100_000 {
            if score == 0.0 {
                return Ok(g);
            }
            let mut best: Option<(f64, usize)> = None;
            for (i, m) in moves.iter().enumerate() {
                let s = exit_score(f, &m.apply(&x));
                if s < score && best.is_none_or(|(bs, _)| s < bs) {
                    best = Some((s, i));
                }
            }
            let Some((s, i)) = best else {
                // rounding can leave a point on the open face with no exact representative
                if closed_box_excess(f, &x) <= 1e-9 * (1.0 + x.amax()) {
                    return Ok(g);
                }
                return Err(Error::Renormalization(format!(
                    "no group element moves {:?} closer to the fundamental domain",
                    x.as_slice()
                )));
            };
            x = moves[i].apply(&x);
            g = moves[i].compose(&g);
            score = s;
        }
        Err(Error::Renormalization("representative search did not terminate".into()))
    }

    /// The group element carrying `p` to `q` (deck groups act freely, so it is unique).
    pub fn element_relating(&self, p: &ChartPoint, q: &ChartPoint) -> Result<AffineIsometry> {
        let gp = self.representative(p)?;
        let gq = self.representative(q)?;
        let h = gq.inverse().compose(&gp);
        let miss = (h.apply(p) - q).amax();
        if miss > 1e-6 * (1.0 + q.amax()) {
            return Err(Error::Renormalization(format!(
                "points are not in one orbit (mismatch {miss:e})"
            )));
        }
        Ok(h)
    }
}

fn label(generators: Vec<AffineIsometry>) -> Result<Vec<AffineIsometry>> {
    if generators.is_empty() {
        return Err(Error::Config("a group needs at least one generator".into()));
    }
    let n = generators[0].dim();
    if generators.iter().any(|g| g.dim() != n) {
        return Err(Error::Config("generators have mixed dimensions".into()));
    }
    Ok(generators
        .into_iter()
        .enumerate()
        .map(|(i, g)| g.with_word(Word::generator(i)))
        .collect())
}

fn closed_box_excess(f: &Domain, x: &DVector<f64>) -> f64 {
    x.iter()
        .zip(&f.bounds)
        .map(|(&x, &(lo, hi))| (lo - x).max(x - hi).max(0.0))
        .fold(0.0, f64::max)
}

fn exit_score(f: &Domain, x: &DVector<f64>) -> f64 {
    x.iter()
        .zip(&f.bounds)
        .map(|(&x, &(lo, hi))| {
            if x < lo {
                1.0 + (lo - x)
            } else if x >= hi {
                1.0 + (x - hi)
            } else {
                0.0
            }
        })
        .sum()
}

/// Breadth-first closure of the generators, deduplicated within [`MATCH_TOL`].
pub fn enumerate_group(generators: &[AffineIsometry], ambient: Ambient, max_elements: usize) -> Result<Vec<AffineIsometry>> {
    let n = generators.first().map(|g| g.dim()).unwrap_or(0);
    let mut elements = vec![AffineIsometry::identity(n)];
    let mut frontier = 0;
    while frontier < elements.len() {
        let current = elements[frontier].clone();
        frontier += 1;
        for g in generators {
            let candidate = g.compose(&current).reduced(ambient);
            if !elements.iter().any(|e| e.matches(&candidate, ambient)) {
                if elements.len() >= max_elements {
                    return Err(Error::NotFinite { bound: max_elements });
                }
                elements.push(candidate);
            }
        }
    }
    Ok(elements)
}

/// Closed under composition and inverses, and contains the identity.
pub fn is_subgroup(elements: &[AffineIsometry], ambient: Ambient) -> bool {
    let Some(first) = elements.first() else { return false };
    let contains = |x: &AffineIsometry| elements.iter().any(|e| e.matches(x, ambient));
    contains(&AffineIsometry::identity(first.dim()))
        && elements.iter().all(|a| contains(&a.inverse()))
        && elements.iter().all(|a| elements.iter().all(|b| contains(&a.compose(b))))
}

/// Elements fixing `p` up to `tol`.
pub fn isotropy(group: &IsometryGroup, p: &ChartPoint, tol: f64) -> Vec<AffineIsometry> {
    isotropy_in(group.elements(), group.ambient(), p, tol)
}

pub fn isotropy_in(elements: &[AffineIsometry], ambient: Ambient, p: &ChartPoint, tol: f64) -> Vec<AffineIsometry> {
    elements
        .iter()
        .filter(|g| ambient.point_distance(&g.apply(p), p) <= tol)
        .cloned()
        .collect()
}

/// `{h : h S h^-1 = S}` by exhaustive conjugation.
pub fn normalizer(group: &IsometryGroup, subgroup: &[AffineIsometry]) -> Vec<AffineIsometry> {
    normalizer_in(group.elements(), group.ambient(), subgroup)
}

pub fn normalizer_in(elements: &[AffineIsometry], ambient: Ambient, subgroup: &[AffineIsometry]) -> Vec<AffineIsometry> {
    elements
        .iter()
        .filter(|h| {
            subgroup.iter().all(|s| {
                let c = h.conjugate(s);
                subgroup.iter().any(|t| t.matches(&c, ambient))
            })
        })
        .cloned()
        .collect()
}

/// Elements with `det A > 0`.
pub fn orientation_subgroup(group: &IsometryGroup) -> Vec<AffineIsometry> {
    group.elements().iter().filter(|g| g.determinant() > 0.0).cloned().collect()
}

/// Affine subspace `base + span(directions)`, directions orthonormal.
/// Dimension `-1` encodes the empty set.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineSubspace {
    pub base: DVector<f64>,
    pub directions: DMatrix<f64>,
    pub dim: isize,
}

impl AffineSubspace {
    pub fn empty(n: usize) -> Self {
        AffineSubspace { base: DVector::zeros(n), directions: DMatrix::zeros(n, 0), dim: -1 }
    }

    pub fn whole(n: usize) -> Self {
        AffineSubspace { base: DVector::zeros(n), directions: DMatrix::identity(n, n), dim: n as isize }
    }

    pub fn is_empty(&self) -> bool {
        self.dim < 0
    }

    pub fn ambient_dim(&self) -> usize {
        self.base.len()
    }

    /// Orthogonal projection onto the subspace.
    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        let d = x - &self.base;
        &self.base + &self.directions * (self.directions.transpose() * d)
    }

    pub fn distance(&self, x: &DVector<f64>) -> f64 {
        (x - self.project(x)).norm()
    }

    /// `base + sum_j c_j e_j`.
    pub fn point(&self, coeffs: &[f64]) -> DVector<f64> {
        let mut p = self.base.clone();
        for (j, c) in coeffs.iter().enumerate().take(self.directions.ncols()) {
            p += self.directions.column(j) * *c;
        }
        p
    }

    /// Dimension of the intersection with the unit sphere centered at the origin.
    pub fn sphere_dim(&self) -> isize {
        if self.is_empty() {
            return -1;
        }
        let closest = self.project(&DVector::zeros(self.ambient_dim())).norm();
        if closest < 1.0 - 1e-12 {
            self.dim - 1
        } else if closest <= 1.0 + 1e-12 {
            0
        } else {
            -1
        }
    }

    /// Distance to the set of lattice translates of the subspace.
    pub fn torus_distance(&self, x: &DVector<f64>) -> f64 {
        let n = x.len();
        let d = (x - &self.base).map(|c| c - c.round());
        let mut best = f64::INFINITY;
        let shifts = 3usize.pow(n as u32);
        for code in 0..shifts {
            let mut y = d.clone();
            let mut c = code;
            for yi in y.iter_mut() {
                *yi += (c % 3) as f64 - 1.0;
                c /= 3;
            }
            let perp = &y - &self.directions * (self.directions.transpose() * &y);
            best = best.min(perp.norm());
        }
        best
    }

    pub fn distance_in(&self, x: &DVector<f64>, ambient: Ambient) -> f64 {
        match ambient {
            Ambient::Euclidean => self.distance(x),
            Ambient::Torus => self.torus_distance(x),
        }
    }
}

/// Orthonormal basis of the null space of `m` and a least-squares solution of `m x = rhs`.
fn solve_affine(m: &DMatrix<f64>, rhs: &DVector<f64>, n: usize) -> AffineSubspace {
    if m.nrows() == 0 {
        return AffineSubspace::whole(n);
    }
    // pad to at least n rows so the thin SVD exposes the full right singular basis
    let rows = m.nrows().max(n);
    let mut mm = DMatrix::zeros(rows, n);
    mm.view_mut((0, 0), (m.nrows(), n)).copy_from(m);
    let mut rr = DVector::zeros(rows);
    rr.rows_mut(0, m.nrows()).copy_from(rhs);
    let svd = mm.clone().svd(true, true);
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    let u = svd.u.as_ref().expect("requested U");
    let mut x = DVector::zeros(n);
    let mut null = Vec::new();
    for (k, &s) in svd.singular_values.iter().enumerate() {
        let vk = v_t.row(k).transpose();
        if s > 1e-9 {
            let coeff = u.column(k).dot(&rr) / s;
            x += vk * coeff;
        } else {
            null.push(vk);
        }
    }
    if (&mm * &x - &rr).amax() > 1e-9 {
        return AffineSubspace::empty(n);
    }
    let directions = if null.is_empty() { DMatrix::zeros(n, 0) } else { DMatrix::from_columns(&null) };
    let dim = directions.ncols() as isize;
    // canonical base: the point closest to the origin
    let base = &x - &directions * (directions.transpose() * &x);
    AffineSubspace { base, directions, dim }
}

fn stacked_system(subgroup: &[AffineIsometry]) -> (DMatrix<f64>, DVector<f64>, usize) {
    let n = subgroup.first().map(|g| g.dim()).unwrap_or(0);
    let mut m = DMatrix::zeros(n * subgroup.len(), n);
    let mut rhs = DVector::zeros(n * subgroup.len());
    for (i, g) in subgroup.iter().enumerate() {
        let a = g.linear() - DMatrix::<f64>::identity(n, n);
        m.view_mut((i * n, 0), (n, n)).copy_from(&a);
        rhs.rows_mut(i * n, n).copy_from(&(-g.offset()));
    }
    (m, rhs, n)
}

/// Common fixed points `{x : A_i x + b_i = x}` of the subgroup in `R^n`.
pub fn fixed_set(subgroup: &[AffineIsometry]) -> AffineSubspace {
    let (m, rhs, n) = stacked_system(subgroup);
    solve_affine(&m, &rhs, n)
}

/// Connected components of the common fixed set on the torus `R^n / Z^n`:
/// solutions of `(A_i - I) x = -b_i + k_i` over integer vectors `k_i`,
/// deduplicated modulo the lattice.
pub fn torus_fixed_components(subgroup: &[AffineIsometry]) -> Vec<AffineSubspace> {
    let (m, rhs, n) = stacked_system(subgroup);
    let rows = m.nrows();
    // for x in [0,1)^n, (A - I) x + b ranges over a box bounded by row sums
    let ranges: Vec<(i64, i64)> = (0..rows)
        .map(|r| {
            let lo: f64 = (0..n).map(|j| m[(r, j)].min(0.0)).sum::<f64>() - rhs[r];
            let hi: f64 = (0..n).map(|j| m[(r, j)].max(0.0)).sum::<f64>() - rhs[r];
            (lo.floor() as i64 - 1, hi.ceil() as i64 + 1)
        })
        .collect();
    let total: u128 = ranges.iter().map(|(a, b)| (b - a + 1) as u128).product();
    let mut out: Vec<AffineSubspace> = Vec::new();
    if total > 2_000_000 {
        return out;
    }
    let mut k: Vec<i64> = ranges.iter().map(|r| r.0).collect();
    loop {
        let shifted = DVector::from_iterator(rows, (0..rows).map(|r| rhs[r] + k[r] as f64));
        let s = solve_affine(&m, &shifted, n);
        if !s.is_empty() && !out.iter().any(|o| o.dim == s.dim && o.torus_distance(&s.base) < 1e-9) {
            out.push(s);
        }
        // odometer
        let mut i = 0;
        loop {
            if i == rows {
                return canonical_components(out);
            }
            k[i] += 1;
            if k[i] <= ranges[i].1 {
                break;
            }
            k[i] = ranges[i].0;
            i += 1;
        }
    }
}

fn canonical_components(mut comps: Vec<AffineSubspace>) -> Vec<AffineSubspace> {
    for c in comps.iter_mut() {
        // base reduced into [0,1) on axes transverse to the component
        let reduced = c.base.map(|x| {
            let r = x - x.floor();
            if r >= 1.0 - 1e-12 { 0.0 } else { r }
        });
        let base = &reduced - &c.directions * (c.directions.transpose() * &reduced);
        // keep the reduced point itself if projecting broke the reduction
        c.base = if base.iter().all(|x| (-1e-12..1.0).contains(x)) { base } else { reduced };
    }
    comps.sort_by(|a, b| {
        a.base
            .iter()
            .zip(b.base.iter())
            .map(|(x, y)| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    comps
}

/// Result of checking `A^T G(Ap + b) A = G(p)` at sample points.
#[derive(Debug, Clone, PartialEq)]
pub struct IsometryReport {
    pub passed: bool,
    pub samples: usize,
    pub worst_violation: f64,
    /// Matrix entry (row, column) of the worst violation.
    pub worst_entry: (usize, usize),
    pub worst_point: Vec<f64>,
    /// Samples skipped because the image left the chart domain.
    pub skipped: usize,
}

pub fn verify_isometry(chart: &MetricChart, g: &AffineIsometry, sample_count: usize, tol: f64, seed: u64) -> IsometryReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = IsometryReport {
        passed: true,
        samples: 0,
        worst_violation: 0.0,
        worst_entry: (0, 0),
        worst_point: Vec::new(),
        skipped: 0,
    };
    if g.dim() != chart.dim() {
        report.passed = false;
        report.worst_violation = f64::INFINITY;
        return report;
    }
    let a = g.linear();
    for _ in 0..sample_count {
        let p: Vec<f64> = chart
            .domain()
            .bounds
            .iter()
            .map(|&(lo, hi)| rng.gen_range(lo.max(-3.0)..=hi.min(3.0)))
            .collect();
        let p = DVector::from_vec(p);
        let gp = g.apply(&p);
        let (Ok(g0), Ok(g1)) = (chart.metric_at(&p), chart.metric_at(&gp)) else {
            report.skipped += 1;
            continue;
        };
        report.samples += 1;
        let pulled = a.transpose() * g1 * a;
        let diff = pulled - g0;
        for i in 0..diff.nrows() {
            for j in 0..diff.ncols() {
                let v = diff[(i, j)].abs();
                if v > report.worst_violation {
                    report.worst_violation = v;
                    report.worst_entry = (i, j);
                    report.worst_point = p.iter().copied().collect();
                }
            }
        }
    }
    report.passed = report.samples > 0 && report.worst_violation <= tol;
    report
}

/// Outcome of [`renormalize`].
#[derive(Debug, Clone)]
pub struct Renormalized {
    pub element: AffineIsometry,
    pub image: GeodesicLoop,
    /// `sqrt(2E)`, the bound on vertex distances from the first vertex.
    pub margin: f64,
}

/// Moves the loop by the group element that brings its first vertex into the
/// fundamental domain; every vertex then lies within `sqrt(2E)` of it.
pub fn renormalize(lp: &GeodesicLoop, group: &IsometryGroup) -> Result<Renormalized> {
    let g = group.representative(&lp.vertices()[0])?;
    let image = lp.transformed(&g);
    let margin = (2.0 * image.energy()).sqrt();
    let mut along: f64 = 0.0;
    let total = image.length();
    for (k, e) in image.edges().iter().enumerate() {
        // path distance from v_0 to v_k is at most min(forward, backward) <= L <= sqrt(2E)
        let reach = along.min(total - along);
        if reach > margin * (1.0 + 1e-9) + 1e-12 {
            return Err(Error::Renormalization(format!("vertex {k} lies outside the margin")));
        }
        along += e.length();
    }
    Ok(Renormalized { element: g, image, margin })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn m(n: usize, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(n, n, x)
    }

    fn rot2(t: f64) -> DMatrix<f64> {
        m(2, &[t.cos(), -t.sin(), t.sin(), t.cos()])
    }

    fn s3() -> IsometryGroup {
        let t12 = AffineIsometry::linear_map(m(3, &[0., 1., 0., 1., 0., 0., 0., 0., 1.])).unwrap();
        let t23 = AffineIsometry::linear_map(m(3, &[1., 0., 0., 0., 0., 1., 0., 1., 0.])).unwrap();
        IsometryGroup::finite(vec![t12, t23], Ambient::Euclidean, 100).unwrap()
    }

    /// All 3x3 permutation matrices, built directly.
    fn permutation_matrices() -> Vec<(DMatrix<f64>, f64)> {
        let perms = [[0, 1, 2], [1, 0, 2], [0, 2, 1], [2, 1, 0], [1, 2, 0], [2, 0, 1]];
        let signs = [1.0, -1.0, -1.0, -1.0, 1.0, 1.0];
        perms
            .iter()
            .zip(signs)
            .map(|(p, s)| {
                let mut a = DMatrix::zeros(3, 3);
                for (i, &j) in p.iter().enumerate() {
                    a[(j, i)] = 1.0;
                }
                (a, s)
            })
            .collect()
    }

    #[test]
    fn apply_examples() {
        let p = v(&[0.2, 0.5]);
        assert_eq!(AffineIsometry::identity(2).apply(&p), p);
        assert_eq!(AffineIsometry::translation(v(&[1.0, 0.0])).apply(&p), v(&[1.2, 0.5]));
        let glide = AffineIsometry::new(m(2, &[1., 0., 0., -1.]), v(&[1.0, 0.0])).unwrap();
        let w = glide.apply_tangent(&Tangent::new(v(&[0.0, 0.0]), v(&[1.0, 0.0])));
        assert_eq!((w.base, w.components), (v(&[1.0, 0.0]), v(&[1.0, 0.0])));
        let w = glide.apply_tangent(&Tangent::new(v(&[0.0, 0.0]), v(&[0.0, 1.0])));
        assert_eq!(w.components, v(&[0.0, -1.0]));
    }

    #[test]
    fn words_reduce_and_print() {
        let a = Word::generator(0);
        let b = Word::generator(1);
        assert_eq!(a.concat(&a.inverse()), Word::identity());
        assert_eq!(a.concat(&a).concat(&b.inverse()).to_string(), "g1^2 g2^-1");
        assert_eq!(a.inverse().concat(&a.inverse()).to_string(), "g1^-2");
        assert_eq!(Word::identity().to_string(), "e");
    }

    #[test]
    fn verify_isometry_examples() {
        let e = MetricChart::euclidean(2, 1.0);
        let rot = AffineIsometry::linear_map(rot2(0.7)).unwrap();
        assert!(verify_isometry(&e, &rot, 50, 1e-12, 0).passed);

        let lambda = crate::manifold::parse_expression("0.1*sin(2*pi*x1)*sin(2*pi*x2)").unwrap();
        let c = MetricChart::conformal(lambda, 2, 0.5).unwrap();
        let shift = AffineIsometry::translation(v(&[1.0, 0.0]));
        let rep = verify_isometry(&c, &shift, 100, 1e-9, 1);
        assert!(rep.passed, "{rep:?}");

        let stretch = AffineIsometry::linear_map(m(2, &[2., 0., 0., 1.])).unwrap();
        let rep = verify_isometry(&e, &stretch, 10, 1e-9, 0);
        assert!(!rep.passed);
        assert!((rep.worst_violation - 3.0).abs() < 1e-15);
        assert_eq!(rep.worst_entry, (0, 0));
    }

    #[test]
    fn enumerate_examples() {
        let z4 = AffineIsometry::linear_map(rot2(PI / 2.0)).unwrap();
        assert_eq!(enumerate_group(&[z4], Ambient::Euclidean, 100).unwrap().len(), 4);
        assert_eq!(s3().elements().len(), 6);
        let shift = AffineIsometry::translation(v(&[1.0, 0.0]));
        assert_eq!(enumerate_group(&[shift], Ambient::Euclidean, 100), Err(Error::NotFinite { bound: 100 }));
    }

    #[test]
    fn s3_matches_permutation_oracle() {
        let g = s3();
        let oracle = permutation_matrices();
        for (a, _) in &oracle {
            assert!(g.elements().iter().any(|e| (e.linear() - a).amax() < 1e-12));
        }
        assert!(is_subgroup(g.elements(), Ambient::Euclidean));
    }

    #[test]
    fn lattice_representative() {
        let gens = vec![AffineIsometry::translation(v(&[1.0, 0.0])), AffineIsometry::translation(v(&[0.0, 1.0]))];
        let f = Domain { bounds: vec![(0.0, 1.0), (0.0, 1.0)] };
        let z2 = IsometryGroup::deck(gens, f).unwrap();
        let g = z2.representative(&v(&[3.7, -2.2])).unwrap();
        assert!((g.offset() - v(&[-3.0, 3.0])).amax() < 1e-12);
        assert!((g.apply(&v(&[3.7, -2.2])) - v(&[0.7, 0.8])).amax() < 1e-12);
        assert!(z2.representative(&v(&[0.5, 0.5])).unwrap().word().is_identity());
    }

    #[test]
    fn glide_representative() {
        let glide = AffineIsometry::new(m(2, &[1., 0., 0., -1.]), v(&[1.0, 0.0])).unwrap();
        let f = Domain { bounds: vec![(0.0, 1.0), (f64::NEG_INFINITY, f64::INFINITY)] };
        let mobius = IsometryGroup::deck(vec![glide.clone()], f).unwrap();
        let g = mobius.representative(&v(&[2.3, 0.4])).unwrap();
        assert_eq!(g.word().to_string(), "g1^-2");
        // oracle: apply the inverse glide twice by hand
        let inv = glide.inverse();
        let want = inv.apply(&inv.apply(&v(&[2.3, 0.4])));
        assert!((g.apply(&v(&[2.3, 0.4])) - &want).amax() < 1e-12);
        assert!((want - v(&[0.3, 0.4])).amax() < 1e-12);
        // the element relating a point to its glide image is the glide
        let h = mobius.element_relating(&v(&[0.2, 0.1]), &v(&[1.2, -0.1])).unwrap();
        assert!(h.matches(&glide, Ambient::Euclidean));
    }

    fn sphere_z4() -> IsometryGroup {
        let r = m(3, &[0., -1., 0., 1., 0., 0., 0., 0., 1.]);
        IsometryGroup::finite(vec![AffineIsometry::linear_map(r).unwrap()], Ambient::Euclidean, 10).unwrap()
    }

    #[test]
    fn isotropy_examples() {
        let z4 = sphere_z4();
        assert_eq!(isotropy(&z4, &v(&[0.0, 0.0, 1.0]), 1e-9).len(), 4);
        assert_eq!(isotropy(&z4, &v(&[1.0, 0.0, 0.0]), 1e-9).len(), 1);

        let g = s3();
        let p = v(&[1.0, 1.0, 0.0]) / 2f64.sqrt();
        let stab = isotropy(&g, &p, 1e-9);
        // oracle: permutations whose matrix fixes p, by direct check
        let want: Vec<_> = permutation_matrices().into_iter().filter(|(a, _)| (a * &p - &p).amax() < 1e-12).collect();
        assert_eq!(stab.len(), want.len());
        assert_eq!(stab.len(), 2);
        assert!(is_subgroup(&stab, Ambient::Euclidean));
    }

    #[test]
    fn fixed_set_examples() {
        let all = fixed_set(&[AffineIsometry::identity(3)]);
        assert_eq!(all.dim, 3);

        let c = (2.0 * PI / 5.0).cos();
        let s = (2.0 * PI / 5.0).sin();
        let block = m(4, &[c, -s, 0., 0., s, c, 0., 0., 0., 0., 1., 0., 0., 0., 0., 1.]);
        let fs = fixed_set(&[AffineIsometry::linear_map(block).unwrap()]);
        assert_eq!(fs.dim, 2);
        assert_eq!(fs.sphere_dim(), 1);
        assert!(fs.distance(&v(&[0.0, 0.0, 0.6, 0.8])) < 1e-12);
        assert!(fs.distance(&v(&[1.0, 0.0, 0.0, 0.0])) > 0.99);

        let refl = AffineIsometry::linear_map(m(3, &[1., 0., 0., 0., 1., 0., 0., 0., -1.])).unwrap();
        assert_eq!(fixed_set(&[refl]).sphere_dim(), 1);

        // inconsistent: two different translations have no common fixed point
        let t = AffineIsometry::translation(v(&[1.0, 0.0]));
        assert!(fixed_set(&[t]).is_empty());
    }

    #[test]
    fn fixed_points_are_fixed() {
        let g = s3();
        for e in g.elements() {
            let fs = fixed_set(std::slice::from_ref(e));
            for coeffs in [[0.3, -1.2, 0.5], [1.0, 0.0, 2.0]] {
                let x = fs.point(&coeffs);
                assert!((e.apply(&x) - &x).amax() < 1e-10);
            }
        }
    }

    #[test]
    fn torus_half_turn_components() {
        let a = m(3, &[-1., 0., 0., 0., -1., 0., 0., 0., 1.]);
        let g = AffineIsometry::linear_map(a).unwrap();
        let comps = torus_fixed_components(&[g.clone()]);
        assert_eq!(comps.len(), 4);
        // oracle: scan the 2^4 half-integer candidates in (x, y, z) with z in {0, 1/2}
        let mut fixed_xy = Vec::new();
        for code in 0..16u32 {
            let p = v(&[
                (code & 1) as f64 * 0.5,
                ((code >> 1) & 1) as f64 * 0.5,
                ((code >> 2) & 1) as f64 * 0.5,
            ]);
            if Ambient::Torus.point_distance(&g.apply(&p), &p) < 1e-12 {
                fixed_xy.push((p[0], p[1]));
            }
        }
        fixed_xy.sort_by(|a, b| a.partial_cmp(b).unwrap());
        fixed_xy.dedup();
        assert_eq!(fixed_xy.len(), 4);
        for c in &comps {
            assert_eq!(c.dim, 1);
            assert!(fixed_xy.iter().any(|&(x, y)| (c.base[0] - x).abs() < 1e-12 && (c.base[1] - y).abs() < 1e-12));
        }
    }

    #[test]
    fn normalizer_examples() {
        let g = s3();
        let all = normalizer(&g, g.elements());
        assert_eq!(all.len(), 6);
        let trivial = normalizer(&g, &[AffineIsometry::identity(3)]);
        assert_eq!(trivial.len(), 6);

        let t12 = m(3, &[0., 1., 0., 1., 0., 0., 0., 0., 1.]);
        let sub: Vec<_> = g
            .elements()
            .iter()
            .filter(|e| e.is_identity(Ambient::Euclidean) || (e.linear() - &t12).amax() < 1e-12)
            .cloned()
            .collect();
        let h = normalizer(&g, &sub);
        // definitional oracle over the permutation matrices
        let oracle: Vec<_> = permutation_matrices()
            .into_iter()
            .filter(|(p, _)| {
                let pinv = p.transpose();
                [DMatrix::identity(3, 3), t12.clone()].iter().all(|s| {
                    let c = p * s * &pinv;
                    (&c - DMatrix::<f64>::identity(3, 3)).amax() < 1e-12 || (&c - &t12).amax() < 1e-12
                })
            })
            .collect();
        assert_eq!(h.len(), oracle.len());
        assert_eq!(h.len(), 2);
        assert!(is_subgroup(&h, Ambient::Euclidean));
    }

    #[test]
    fn orientation_examples() {
        let z4 = sphere_z4();
        assert_eq!(orientation_subgroup(&z4).len(), 4);
        let antipodal = AffineIsometry::linear_map(-DMatrix::<f64>::identity(3, 3)).unwrap();
        let z2 = IsometryGroup::finite(vec![antipodal], Ambient::Euclidean, 10).unwrap();
        assert_eq!(orientation_subgroup(&z2).len(), 1);
        let a3 = orientation_subgroup(&s3());
        let even = permutation_matrices().iter().filter(|(_, s)| *s > 0.0).count();
        assert_eq!(a3.len(), even);
        assert_eq!(a3.len(), 3);
        assert!(is_subgroup(&a3, Ambient::Euclidean));
    }
}

//! Compactly supported metric perturbations that break the degeneracy of a
//! critical geodesic.
//!
//! A bump `h` lives in a thin tube around a stretch `γ(I)` of the curve. The
//! tube is parametrized chart-linearly by
//! `Φ(s, y, λ) = γ(s) + Σ y_i E_i(s) + λ W(s)`, where `W` is the field to be
//! made non-degenerate and `E_i` is a smooth orthonormal complement of
//! `span(γ̇, W)`. In these coordinates
//! `h = A(s) · R(|y|/ρ) · λ · B(λ/λ_max) · K(s)`, so that `h = 0` on the curve
//! and `∂_W h = K` wherever the axial cutoff `A` equals one. All cutoffs are
//! quintic smoothsteps, which makes `h` twice continuously differentiable and
//! exactly zero outside the coordinate box.
//!
//! Derivatives of `h` are taken in the chart (the flat connection). Since `h`
//! vanishes along the curve, `∇_J h` there does not depend on the connection.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::degeneracy::{self, ClassifyOptions, DegeneracyKind, DegeneracyReport};
use crate::domain::ChartDomain;
use crate::error::{Error, Result};
use crate::flow::{self, GeodesicPath, PeriodicityVerdict};
use crate::gec::{self, BvpGuess, BvpOptions, BvpSolution, Gec};
use crate::linalg::{self, sorted_sym_eigen};
use crate::metric::{AuxiliaryRiemannian, MetricComponents, MetricField, DEGENERACY_TOL};
use crate::variational::{self, FieldAlong, JacobiSolution};

/// Fraction of the interval on which the axial cutoff equals one.
pub const INNER_FRACTION: f64 = 0.8;
/// Perpendicular size, relative to `max ‖J‖`, below which a field counts as tangent.
const TANGENCY_TOL: f64 = 1e-6;
const WINDOW_SAMPLES: usize = 400;
const TUBE_SAMPLES: usize = 256;
const TABLE_STEPS: usize = 512;
/// Table nodes between consecutive candidates of the nearest-point search.
const SEARCH_STRIDE: usize = 16;
const NEWTON_TOL: f64 = 1e-12;

/// `(S(x), S'(x))` for the quintic smoothstep clamped to `[0, 1]`.
fn smoothstep(x: f64) -> (f64, f64) {
    if x <= 0.0 {
        (0.0, 0.0)
    } else if x >= 1.0 {
        (1.0, 0.0)
    } else {
        (x * x * x * (10.0 - 15.0 * x + 6.0 * x * x), 30.0 * x * x * (1.0 - x) * (1.0 - x))
    }
}

/// Even profile equal to one on `|u| ≤ ½` and zero on `|u| ≥ 1`, with its derivative.
fn plateau(u: f64) -> (f64, f64) {
    let a = u.abs();
    if a <= 0.5 {
        (1.0, 0.0)
    } else if a >= 1.0 {
        (0.0, 0.0)
    } else {
        let (s, ds) = smoothstep(2.0 * a - 1.0);
        (1.0 - s, -2.0 * ds * u.signum())
    }
}

/// Axial cutoff on `[a, b]`: one on the inner fraction, ramping to zero at the ends.
fn axial(s: f64, a: f64, b: f64) -> (f64, f64) {
    if s <= a || s >= b {
        return (0.0, 0.0);
    }
    let ramp = 0.5 * (1.0 - INNER_FRACTION) * (b - a);
    let (l, dl) = smoothstep((s - a) / ramp);
    let (r, dr) = smoothstep((b - s) / ramp);
    (l * r, (dl * r - l * dr) / ramp)
}

fn perpendicular(w: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    let vv = v.norm_squared();
    if vv == 0.0 {
        return w.clone();
    }
    w - v * (w.dot(v) / vv)
}

/// The field `W(t) = Σ_{i<terms} J(t + i·shift)` on a window of the curve.
///
/// For a prime curve this is `J` itself. On a curve that wraps around a
/// closed geodesic of period `ω`, every point of `γ` is visited by several
/// passes and only the sum of the Jacobi field over those passes is seen by
/// a perturbation supported near a single stretch.
#[derive(Debug, Clone)]
pub struct EffectiveField {
    pub jacobi: JacobiSolution,
    pub shift: f64,
    pub terms: usize,
    pub window: (f64, f64),
    /// Length of one traversal of the image (`ω`, or `T` for non-periodic curves).
    pub cycle: f64,
    pub closed: bool,
}

impl EffectiveField {
    /// `W = J` on the whole curve.
    pub fn single(jacobi: JacobiSolution) -> Self {
        let t_end = jacobi.t_end();
        Self { jacobi, shift: t_end, terms: 1, window: (0.0, t_end), cycle: t_end, closed: false }
    }

    pub fn path(&self) -> &GeodesicPath {
        &self.jacobi.path
    }

    fn shifted_times(&self, t: f64) -> impl Iterator<Item = f64> + '_ {
        let t_end = self.jacobi.t_end();
        (0..self.terms).map(move |i| (t + i as f64 * self.shift).clamp(0.0, t_end))
    }

    /// `‖W⊥‖ / ‖W‖` with `⊥` taken against `γ̇` in the chart inner product.
    pub fn margin(&self, t: f64) -> f64 {
        let w = self.value(t);
        let n = w.norm();
        if n == 0.0 {
            return 0.0;
        }
        perpendicular(&w, &self.path().velocity(t)).norm() / n
    }

    fn perpendicular_norm(&self, t: f64) -> f64 {
        perpendicular(&self.value(t), &self.path().velocity(t)).norm()
    }

    fn window_samples(&self) -> Vec<f64> {
        let (a, b) = self.window;
        (0..=WINDOW_SAMPLES).map(|k| a + (b - a) * k as f64 / WINDOW_SAMPLES as f64).collect()
    }
}

impl FieldAlong for EffectiveField {
    fn value(&self, t: f64) -> DVector<f64> {
        let m = self.path().dim();
        self.shifted_times(t).fold(DVector::zeros(m), |acc, s| acc + self.jacobi.eval(s).0)
    }

    /// Componentwise derivative, using `J' = DJ − Γ(γ̇, J)`.
    fn derivative(&self, t: f64) -> DVector<f64> {
        let path = self.path();
        let m = path.dim();
        self.shifted_times(t).fold(DVector::zeros(m), |acc, s| {
            let (j, dj) = self.jacobi.eval(s);
            let x = path.position(s);
            let chr = path.metric().christoffel_unchecked(x.as_slice());
            acc + dj - chr.apply(&path.velocity(s), &j)
        })
    }
}

fn max_jacobi_norm(jacobi: &JacobiSolution) -> f64 {
    let t_end = jacobi.t_end();
    (0..=WINDOW_SAMPLES)
        .map(|k| jacobi.eval(t_end * k as f64 / WINDOW_SAMPLES as f64).0.norm())
        .fold(0.0, f64::max)
}

/// Forms the field seen by a perturbation near one pass of the curve.
///
/// On a curve of length `T = nω + t*` along a closed geodesic of period `ω`,
/// the first window `[0, t*]` is traversed `n + 1` times and the second
/// window `[t*, ω]` `n` times. The window whose shifted sum is somewhere
/// transverse to `γ̇` is returned (the first one on ties). A non-periodic
/// curve gives `W = J` on `[0, T]`.
pub fn iterate_sum_field(jacobi: &JacobiSolution, periodicity: &PeriodicityVerdict) -> Result<EffectiveField> {
    let t_end = jacobi.t_end();
    let scale = max_jacobi_norm(jacobi);
    if scale == 0.0 {
        return Err(Error::invalid("Jacobi field vanishes identically"));
    }
    if !periodicity.periodic || periodicity.period <= 0.0 || periodicity.period > t_end * (1.0 + 1e-9) {
        return Ok(EffectiveField::single(jacobi.clone()));
    }
    let omega = periodicity.period;
    let n = ((t_end / omega) * (1.0 + 1e-9)).floor() as usize;
    let rest = t_end - n as f64 * omega;
    let (n, rest) = if omega - rest <= 1e-9 * t_end.max(1.0) { (n + 1, 0.0) } else { (n, rest) };
    let make = |terms: usize, window: (f64, f64)| EffectiveField {
        jacobi: jacobi.clone(),
        shift: omega,
        terms,
        window,
        cycle: omega,
        closed: true,
    };
    let transverse = |f: &EffectiveField| {
        f.window_samples().iter().map(|&t| f.perpendicular_norm(t)).fold(0.0, f64::max) / scale
    };
    let candidates = if rest <= 1e-9 * t_end.max(1.0) {
        vec![make(n, (0.0, omega))]
    } else {
        vec![make(n + 1, (0.0, rest)), make(n, (rest, omega))]
    };
    let scored: Vec<(f64, EffectiveField)> = candidates.into_iter().map(|f| (transverse(&f), f)).collect();
    let best = scored.iter().enumerate().fold(0, |b, (i, s)| if s.0 > scored[b].0 { i } else { b });
    if scored[best].0 <= TANGENCY_TOL {
        return Err(Error::StronglyDegenerateSuspected);
    }
    Ok(scored.into_iter().nth(best).map(|(_, f)| f).expect("non-empty"))
}

/// A stretch `[start, end]` of the curve chosen to carry a bump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
    /// Smallest `‖W⊥‖ / ‖W‖` on the interval.
    pub margin: f64,
    /// Chart distance from `γ(I)` to the rest of one traversal of the curve.
    pub clearance: f64,
}

impl Interval {
    pub fn length(&self) -> f64 {
        self.end - self.start
    }

    /// The interval as fractions of `[0, t_end]`.
    pub fn normalized(&self, t_end: f64) -> (f64, f64) {
        (self.start / t_end, self.end / t_end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntervalOptions {
    /// Interval length as a fraction of the window.
    pub length_fraction: f64,
    pub candidates: usize,
}

impl Default for IntervalOptions {
    fn default() -> Self {
        Self { length_fraction: 0.25, candidates: 64 }
    }
}

fn sample_times(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|k| a + (b - a) * k as f64 / n as f64).collect()
}

/// Distance from `γ([a, b])` to `γ(t)` for the other times of one traversal.
///
/// Times within `buffer` of the interval are skipped, cyclically when the
/// curve is closed.
fn clearance(field: &EffectiveField, a: f64, b: f64, buffer: f64) -> f64 {
    let path = field.path();
    let dom = path.metric().domain();
    let inside: Vec<DVector<f64>> = sample_times(a, b, 64).iter().map(|&t| path.position(t)).collect();
    let cycle = field.cycle;
    let near = |t: f64| {
        if field.closed {
            let gap = |x: f64| {
                let d = (x - t).rem_euclid(cycle);
                d.min(cycle - d)
            };
            (t - a).rem_euclid(cycle) <= b - a || gap(a) < buffer || gap(b) < buffer
        } else {
            t > a - buffer && t < b + buffer
        }
    };
    let mut best = f64::INFINITY;
    for t in sample_times(0.0, cycle.min(path.t_end()), 512) {
        if near(t) {
            continue;
        }
        let x = path.position(t);
        for p in &inside {
            best = best.min(dom.distance(p.as_slice(), x.as_slice()));
        }
    }
    best
}

fn speed_bounds(path: &GeodesicPath, a: f64, b: f64) -> (f64, f64) {
    sample_times(a, b, 32)
        .iter()
        .map(|&t| path.velocity(t).norm())
        .fold((f64::INFINITY, 0.0), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

fn chart_length(path: &GeodesicPath, a: f64, b: f64) -> f64 {
    let ts = sample_times(a, b, 64);
    let h = (b - a) / 64.0;
    ts.iter().enumerate().map(|(k, &t)| {
        let w = if k == 0 || k == 64 { 0.5 } else { 1.0 };
        w * h * path.velocity(t).norm()
    }).sum()
}

/// Default tube radius: a tenth of the chart length of `γ(I)`.
pub fn default_radius(path: &GeodesicPath, start: f64, end: f64) -> f64 {
    0.1 * chart_length(path, start, end)
}

fn interval_score(field: &EffectiveField, a: f64, b: f64, rho: f64) -> Option<Interval> {
    let ts = sample_times(a, b, 32);
    let margin = ts.iter().map(|&t| field.margin(t)).fold(f64::INFINITY, f64::min);
    let (v_min, _) = speed_bounds(field.path(), a, b);
    if !(v_min > 0.0) {
        return None;
    }
    let clear = clearance(field, a, b, 4.0 * rho / v_min);
    (clear >= 2.0 * rho).then_some(Interval { start: a, end: b, margin, clearance: clear })
}

/// Chooses the interval maximizing the smallest transversality margin among
/// those whose image stays `2ρ` away from the rest of the curve.
///
/// Margins within `1e-6` of the best are broken in favour of the largest
/// smallest perpendicular size of `W`, then the earliest start.
pub fn select_interval(field: &EffectiveField, rho: f64, opts: &IntervalOptions) -> Result<Interval> {
    if !(rho > 0.0) || !(opts.length_fraction > 0.0 && opts.length_fraction <= 1.0) || opts.candidates == 0 {
        return Err(Error::invalid("radius and length fraction must be positive"));
    }
    let (w0, w1) = field.window;
    let len = opts.length_fraction * (w1 - w0);
    let n = opts.candidates;
    let mut best: Option<(Interval, f64)> = None;
    for k in 0..n {
        let a = if n == 1 { w0 + 0.5 * (w1 - w0 - len) } else { w0 + (w1 - w0 - len) * k as f64 / (n - 1) as f64 };
        let b = a + len;
        let Some(iv) = interval_score(field, a, b, rho) else { continue };
        let strength = sample_times(a, b, 32).iter().map(|&t| field.perpendicular_norm(t)).fold(f64::INFINITY, f64::min);
        let better = match &best {
            None => true,
            Some((cur, s)) => iv.margin > cur.margin + 1e-6 || (iv.margin > cur.margin - 1e-6 && strength > *s * (1.0 + 1e-9)),
        };
        if better {
            best = Some((iv, strength));
        }
    }
    match best {
        Some((iv, _)) if iv.margin > TANGENCY_TOL => Ok(iv),
        _ => Err(Error::NoValidInterval),
    }
}

/// The symmetric tensor `K` prescribed for `∂_W h` along the interval.
#[derive(Clone)]
pub enum KTarget {
    /// The auxiliary Riemannian metric evaluated on the curve.
    Auxiliary(AuxiliaryRiemannian),
    Constant(DMatrix<f64>),
    Zero,
}

impl std::fmt::Debug for KTarget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KTarget::Auxiliary(a) => write!(f, "Auxiliary({a:?})"),
            KTarget::Constant(k) => write!(f, "Constant({k})"),
            KTarget::Zero => write!(f, "Zero"),
        }
    }
}

impl KTarget {
    fn at(&self, x: &[f64], m: usize) -> DMatrix<f64> {
        match self {
            KTarget::Auxiliary(a) => linalg::symmetrize(&a.eval(x)),
            KTarget::Constant(k) => linalg::symmetrize(k),
            KTarget::Zero => DMatrix::zeros(m, m),
        }
    }

    fn is_constant(&self) -> bool {
        match self {
            KTarget::Auxiliary(a) => a.is_euclidean(),
            _ => true,
        }
    }
}

/// Tube coordinates of a point: axial time `s`, offsets `y` along the
/// complement frame and `λ` along `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct TubePoint {
    pub s: f64,
    pub offsets: DVector<f64>,
    pub lambda: f64,
}

/// Curve and field data at one node of the bump's lookup table.
#[derive(Clone)]
struct Node {
    point: DVector<f64>,
    velocity: DVector<f64>,
    acceleration: DVector<f64>,
    field: DVector<f64>,
    field_derivative: DVector<f64>,
    field_second: DVector<f64>,
}

/// Cubic Hermite interpolation between `(f0, d0)` and `(f1, d1)` on a step `h`.
fn hermite(f0: &DVector<f64>, d0: &DVector<f64>, f1: &DVector<f64>, d1: &DVector<f64>, h: f64, tau: f64) -> DVector<f64> {
    let t2 = tau * tau;
    let t3 = t2 * tau;
    f0 * (2.0 * t3 - 3.0 * t2 + 1.0) + d0 * (h * (t3 - 2.0 * t2 + tau)) + f1 * (3.0 * t2 - 2.0 * t3) + d1 * (h * (t3 - t2))
}

struct Frame {
    point: DVector<f64>,
    velocity: DVector<f64>,
    field: DVector<f64>,
    field_derivative: DVector<f64>,
    complement: DMatrix<f64>,
}

/// A compactly supported symmetric tensor field built around `γ(I)`.
#[derive(Clone)]
pub struct PerturbationBump {
    pub interval: Interval,
    pub radius: f64,
    /// Range of the `λ` coordinate, `ρ / max_I ‖W‖`.
    pub lambda_max: f64,
    pub target: KTarget,
    field: Arc<EffectiveField>,
    reference_frame: DMatrix<f64>,
    table: Arc<Vec<Node>>,
    table_start: f64,
    table_step: f64,
    samples: Vec<(f64, DVector<f64>)>,
    sample_gap: f64,
    bounding_box: Vec<(f64, f64)>,
}

impl std::fmt::Debug for PerturbationBump {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PerturbationBump")
            .field("interval", &self.interval)
            .field("radius", &self.radius)
            .field("lambda_max", &self.lambda_max)
            .field("target", &self.target)
            .finish()
    }
}

/// Orthonormal basis of the complement of the columns of `span`.
fn complement_basis(span: &[DVector<f64>], m: usize) -> DMatrix<f64> {
    let mut proj = DMatrix::<f64>::identity(m, m);
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for v in span {
        let mut u = v.clone();
        for b in &basis {
            u -= b * b.dot(&u);
        }
        let n = u.norm();
        if n > 1e-12 {
            basis.push(u / n);
        }
    }
    for b in &basis {
        proj -= b * b.transpose();
    }
    let (vals, vecs) = sorted_sym_eigen(&proj);
    let k = m - basis.len();
    let start = vals.len() - k;
    vecs.columns(start, k).into_owned()
}

impl PerturbationBump {
    pub fn field(&self) -> &EffectiveField {
        &self.field
    }

    fn dim(&self) -> usize {
        self.field.path().dim()
    }

    fn domain(&self) -> &ChartDomain {
        self.field.path().metric().domain()
    }

    /// Smooth orthonormal complement of `span(γ̇, W)`, Löwdin-aligned with
    /// the reference frame at the middle of the interval.
    fn complement(&self, velocity: &DVector<f64>, field: &DVector<f64>) -> DMatrix<f64> {
        let m = self.dim();
        let r = &self.reference_frame;
        if r.ncols() == 0 {
            return DMatrix::zeros(m, 0);
        }
        let span = complement_basis(&[velocity.clone(), field.clone()], m);
        let proj = &span * span.transpose();
        let pr = &proj * r;
        let gram = r.transpose() * &pr;
        let (vals, vecs) = sorted_sym_eigen(&gram);
        let inv_sqrt = &vecs * DMatrix::from_diagonal(&vals.map(|v| 1.0 / v.max(1e-300).sqrt())) * vecs.transpose();
        pr * inv_sqrt
    }

    /// Interpolated `(γ, γ̇, W, W')` at `s`, clamped to the table.
    fn curve_at(&self, s: f64) -> (DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>) {
        let n = self.table.len() - 1;
        let x = ((s - self.table_start) / self.table_step).clamp(0.0, n as f64);
        let k = (x.floor() as usize).min(n - 1);
        let tau = x - k as f64;
        let (a, b, h) = (&self.table[k], &self.table[k + 1], self.table_step);
        (
            hermite(&a.point, &a.velocity, &b.point, &b.velocity, h, tau),
            hermite(&a.velocity, &a.acceleration, &b.velocity, &b.acceleration, h, tau),
            hermite(&a.field, &a.field_derivative, &b.field, &b.field_derivative, h, tau),
            hermite(&a.field_derivative, &a.field_second, &b.field_derivative, &b.field_second, h, tau),
        )
    }

    fn frame(&self, s: f64) -> Frame {
        let (point, velocity, field, field_derivative) = self.curve_at(s);
        let complement = self.complement(&velocity, &field);
        Frame { point, velocity, field, field_derivative, complement }
    }

    fn complement_derivative(&self, s: f64) -> DMatrix<f64> {
        let h = 1e-3 * self.table_step;
        let at = |t: f64| {
            let (_, v, w, _) = self.curve_at(t);
            self.complement(&v, &w)
        };
        (at(s + h) - at(s - h)) / (2.0 * h)
    }

    /// `Φ(s, y, λ)` in raw (unwrapped) chart coordinates.
    pub fn embed(&self, q: &TubePoint) -> DVector<f64> {
        let f = self.frame(q.s);
        f.point + &f.complement * &q.offsets + f.field * q.lambda
    }

    fn jacobian(&self, q: &TubePoint, f: &Frame) -> DMatrix<f64> {
        let m = self.dim();
        let c = f.complement.ncols();
        let mut d = DMatrix::zeros(m, m);
        let mut ds = &f.velocity + &f.field_derivative * q.lambda;
        if c > 0 {
            ds += self.complement_derivative(q.s) * &q.offsets;
            d.columns_mut(1, c).copy_from(&f.complement);
        }
        d.set_column(0, &ds);
        d.set_column(m - 1, &f.field);
        d
    }

    fn target_at(&self, s: f64) -> DMatrix<f64> {
        let x = self.domain().wrap(self.curve_at(s).0.as_slice());
        self.target.at(&x, self.dim())
    }

    fn target_derivative(&self, s: f64) -> DMatrix<f64> {
        let m = self.dim();
        if self.target.is_constant() {
            return DMatrix::zeros(m, m);
        }
        let h = 1e-3 * self.table_step;
        (self.target_at(s + h) - self.target_at(s - h)) / (2.0 * h)
    }

    /// True when `x` lies strictly inside the coordinate box of the tube.
    pub fn in_tube(&self, x: &[f64]) -> bool {
        self.coordinates(x).is_some()
    }

    /// Tube coordinates of `x`, or `None` outside the tube.
    pub fn coordinates(&self, x: &[f64]) -> Option<TubePoint> {
        self.solve_coordinates(x).filter(|q| {
            q.s > self.interval.start && q.s < self.interval.end && q.offsets.norm() < self.radius && q.lambda.abs() < self.lambda_max
        })
    }

    fn solve_coordinates(&self, x: &[f64]) -> Option<TubePoint> {
        let m = self.dim();
        let dom = self.domain();
        let xw = dom.wrap(x);
        if xw.len() != m {
            return None;
        }
        let reach = 2.0 * self.radius + self.sample_gap;
        let anchor = &self.samples[0].1;
        let rel = dom.displacement(&xw, anchor.as_slice());
        let local: Vec<f64> = rel.iter().zip(anchor.iter()).map(|(d, a)| a + d).collect();
        if local.iter().zip(&self.bounding_box).any(|(v, (lo, hi))| *v < lo - reach || *v > hi + reach) {
            return None;
        }
        let (mut s, d0) = self.samples.iter().fold((0.0, f64::INFINITY), |(bs, bd), (t, p)| {
            let d = dom.distance(&xw, p.as_slice());
            if d < bd { (*t, d) } else { (bs, bd) }
        });
        if d0 > reach {
            return None;
        }
        let c = m.saturating_sub(2);
        let mut q = TubePoint { s, offsets: DVector::zeros(c), lambda: 0.0 };
        let (a, b) = (self.interval.start, self.interval.end);
        let pad = 0.1 * (b - a);
        let scale = 1.0 + xw.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        for _ in 0..40 {
            let f = self.frame(q.s);
            let p = &f.point + &f.complement * &q.offsets + &f.field * q.lambda;
            let r = DVector::from_vec(dom.displacement(p.as_slice(), &xw));
            if r.amax() <= NEWTON_TOL * scale {
                return Some(q);
            }
            let jac = self.jacobian(&q, &f);
            let step = jac.lu().solve(&r)?;
            s = (q.s - step[0]).clamp(a - pad, b + pad);
            q = TubePoint { s, offsets: &q.offsets - step.rows(1, c), lambda: q.lambda - step[m - 1] };
        }
        None
    }

    /// `h(x)`; exactly zero outside the tube.
    pub fn value(&self, x: &[f64]) -> DMatrix<f64> {
        let m = self.dim();
        let Some(q) = self.coordinates(x) else { return DMatrix::zeros(m, m) };
        let (ax, _) = axial(q.s, self.interval.start, self.interval.end);
        let (rad, _) = plateau(q.offsets.norm() / self.radius);
        let (prof, _) = plateau(q.lambda / self.lambda_max);
        self.target_at(q.s) * (ax * rad * q.lambda * prof)
    }

    /// `∂_k h(x)` for every chart direction `k`.
    pub fn derivatives(&self, x: &[f64]) -> Vec<DMatrix<f64>> {
        let m = self.dim();
        let Some(q) = self.coordinates(x) else { return vec![DMatrix::zeros(m, m); m] };
        let (a, b) = (self.interval.start, self.interval.end);
        let (ax, dax) = axial(q.s, a, b);
        let ynorm = q.offsets.norm();
        let (rad, drad) = plateau(ynorm / self.radius);
        let (prof, dprof) = plateau(q.lambda / self.lambda_max);
        let lam = q.lambda * prof;
        let dlam = prof + q.lambda * dprof / self.lambda_max;
        let k = self.target_at(q.s);
        // Coefficients of K and K' in ∂h/∂q_a.
        let c = m.saturating_sub(2);
        let mut coef = vec![0.0; m];
        coef[0] = dax * rad * lam;
        if ynorm > 0.0 && drad != 0.0 {
            for i in 0..c {
                coef[1 + i] = ax * drad * q.offsets[i] / (ynorm * self.radius) * lam;
            }
        }
        coef[m - 1] = ax * rad * dlam;
        let f = self.frame(q.s);
        let Some(inv) = self.jacobian(&q, &f).try_inverse() else { return vec![DMatrix::zeros(m, m); m] };
        let dk = self.target_derivative(q.s) * (ax * rad * lam);
        (0..m)
            .map(|xk| {
                let mut d = &k * (0..m).map(|qa| coef[qa] * inv[(qa, xk)]).sum::<f64>();
                if inv[(0, xk)] != 0.0 {
                    d += &dk * inv[(0, xk)];
                }
                d
            })
            .collect()
    }

    /// `∂_v h(x) = Σ_k v^k ∂_k h(x)`.
    pub fn directional(&self, x: &[f64], v: &DVector<f64>) -> DMatrix<f64> {
        let m = self.dim();
        self.derivatives(x).iter().zip(v.iter()).fold(DMatrix::zeros(m, m), |acc, (d, vk)| acc + d * *vk)
    }

    /// `K(s)` at the curve point `γ(s)`.
    pub fn target_on_curve(&self, s: f64) -> DMatrix<f64> {
        self.target_at(s)
    }

    /// Upper estimate of `‖∂h‖` near the curve: `max_I ‖K‖ / ‖W⊥‖`.
    pub fn derivative_scale(&self) -> f64 {
        sample_times(self.interval.start, self.interval.end, 32)
            .iter()
            .map(|&s| {
                let k = self.target_at(s).norm();
                let w = self.field.perpendicular_norm(s);
                if w > 0.0 { k / w } else { 0.0 }
            })
            .fold(0.0, f64::max)
    }

    /// `½ ∫_I A(s) K(γ̇, γ̇) ds`, the value the mixed derivative should take
    /// for a field whose pass sum is `W`.
    pub fn predicted_mixed_derivative(&self) -> f64 {
        let (a, b) = (self.interval.start, self.interval.end);
        let path = self.field.path();
        quadrature(a, b, 64, |s| {
            let v = path.velocity(s);
            0.5 * axial(s, a, b).0 * v.dot(&(self.target_at(s) * &v))
        })
    }

    /// `½ ∫_I g_R(γ̇, γ̇) ds` with the chart inner product.
    pub fn reference_energy(&self) -> f64 {
        let path = self.field.path();
        quadrature(self.interval.start, self.interval.end, 64, |s| 0.5 * path.velocity(s).norm_squared())
    }

    /// Points `Φ(q)` for pseudo-random coordinates `q` in the tube box.
    pub fn sample_points(&self, n: usize, seed: u64) -> Vec<DVector<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = self.dim().saturating_sub(2);
        (0..n)
            .map(|_| {
                let s = rng.gen_range(self.interval.start..self.interval.end);
                let mut y = DVector::from_iterator(c, (0..c).map(|_| rng.sample::<f64, _>(StandardNormal)));
                if c > 0 {
                    let r = self.radius * rng.gen::<f64>().powf(1.0 / c as f64);
                    y *= r / y.norm().max(1e-300);
                }
                let lambda = self.lambda_max * rng.gen_range(-1.0..1.0);
                self.embed(&TubePoint { s, offsets: y, lambda })
            })
            .collect()
    }
}

/// Composite five-point Gauss–Legendre quadrature.
fn quadrature<F: Fn(f64) -> f64>(a: f64, b: f64, panels: usize, f: F) -> f64 {
    let (nodes, weights) = linalg::gauss_legendre(5);
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|p| {
            let lo = a + p as f64 * h;
            nodes.iter().zip(&weights).map(|(x, w)| 0.5 * h * w * f(lo + 0.5 * h * (x + 1.0))).sum::<f64>()
        })
        .sum()
}

/// Builds the bump around `γ(I)` with `∂_W h = K` on the inner part of `I`.
///
/// Fails with `TubeTooWide` when the coordinate map does not invert cleanly
/// on the tube, leaves the chart, or the tube contains points of the curve
/// off `γ(I)`.
pub fn build_bump(field: &EffectiveField, interval: &Interval, target: KTarget, rho: f64) -> Result<PerturbationBump> {
    let bump = build_bump_unchecked(field, interval, target, rho)?;
    let too_wide = Error::TubeTooWide { radius: rho };
    let dom = bump.domain();
    for x in bump.sample_points(200, 0x7475_6265) {
        let q = bump.solve_coordinates(x.as_slice()).ok_or_else(|| too_wide.clone())?;
        let back = bump.embed(&q);
        if dom.distance(back.as_slice(), x.as_slice()) > 1e-9 * (1.0 + x.amax()) || !dom.contains(&dom.wrap(x.as_slice())) {
            return Err(too_wide);
        }
    }
    let path = field.path();
    let w_scale = bump.radius * 1e-6;
    for t in sample_times(0.0, path.t_end(), 2000) {
        if let Some(q) = bump.coordinates(path.position(t).as_slice()) {
            let w = bump.field.value(q.s).norm();
            if q.offsets.norm() > w_scale || (q.lambda * w).abs() > w_scale {
                return Err(too_wide);
            }
        }
    }
    Ok(bump)
}

/// Selects an interval and builds the bump on it, with the tube radius a
/// tenth of the chart length of a window fraction.
pub fn bump_for(field: &EffectiveField, target: KTarget, opts: &IntervalOptions) -> Result<PerturbationBump> {
    let (w0, w1) = field.window;
    let rho = 0.1 * opts.length_fraction * chart_length(field.path(), w0, w1);
    let interval = select_interval(field, rho, opts)?;
    build_bump(field, &interval, target, rho)
}

/// Builds the bump without the embedding and clearance checks.
pub fn build_bump_unchecked(field: &EffectiveField, interval: &Interval, target: KTarget, rho: f64) -> Result<PerturbationBump> {
    let path = field.path();
    let m = path.dim();
    if m < 2 {
        return Err(Error::invalid("bumps need dimension at least 2"));
    }
    if !(rho > 0.0) || !(interval.end > interval.start) {
        return Err(Error::invalid("radius and interval length must be positive"));
    }
    if interval.start < field.window.0 - 1e-12 || interval.end > field.window.1 + 1e-12 {
        return Err(Error::invalid("interval must lie in the field's window"));
    }
    if let KTarget::Constant(k) = &target {
        if k.nrows() != m || k.ncols() != m {
            return Err(Error::DimensionMismatch { expected: m, found: k.nrows() });
        }
    }
    let ts = sample_times(interval.start, interval.end, TUBE_SAMPLES);
    let w_max = ts.iter().map(|&t| field.value(t).norm()).fold(0.0, f64::max);
    let margin = ts.iter().map(|&t| field.margin(t)).fold(f64::INFINITY, f64::min);
    if !(w_max > 0.0) || margin <= TANGENCY_TOL {
        return Err(Error::NoValidInterval);
    }
    let mid = 0.5 * (interval.start + interval.end);
    let reference_frame = complement_basis(&[path.velocity(mid), field.value(mid)], m);
    let dom = path.metric().domain().clone();
    let anchor = path.position(interval.start);
    let unwrap = |x: &DVector<f64>| {
        let d = dom.displacement(x.as_slice(), anchor.as_slice());
        DVector::from_iterator(m, anchor.iter().zip(d).map(|(a, d)| a + d))
    };
    let pad = 0.1 * interval.length();
    let table_start = (interval.start - pad).max(0.0);
    let table_end = (interval.end + pad).min(path.t_end());
    let table_step = (table_end - table_start) / TABLE_STEPS as f64;
    let metric = path.metric();
    let mut table: Vec<Node> = sample_times(table_start, table_end, TABLE_STEPS)
        .iter()
        .map(|&t| {
            let x = path.position(t);
            let v = path.velocity(t);
            Node {
                acceleration: metric.geodesic_acceleration(x.as_slice(), &v),
                point: unwrap(&x),
                velocity: v,
                field: field.value(t),
                field_derivative: field.derivative(t),
                field_second: DVector::zeros(m),
            }
        })
        .collect();
    for k in 0..table.len() {
        let (lo, hi) = (k.saturating_sub(1), (k + 1).min(table.len() - 1));
        let d = (&table[hi].field_derivative - &table[lo].field_derivative) / ((hi - lo) as f64 * table_step);
        table[k].field_second = d;
    }
    let samples: Vec<(f64, DVector<f64>)> = (0..table.len())
        .step_by(SEARCH_STRIDE)
        .map(|k| (table_start + k as f64 * table_step, table[k].point.clone()))
        .collect();
    let sample_gap = samples.windows(2).map(|w| (&w[1].1 - &w[0].1).norm()).fold(0.0, f64::max);
    let bounding_box: Vec<(f64, f64)> = (0..m)
        .map(|i| samples.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, p)| (lo.min(p[i]), hi.max(p[i]))))
        .collect();
    let bump = PerturbationBump {
        interval: *interval,
        radius: rho,
        lambda_max: rho / w_max,
        target,
        field: Arc::new(field.clone()),
        reference_frame,
        table: Arc::new(table),
        table_start,
        table_step,
        samples,
        sample_gap,
        bounding_box,
    };
    // Löwdin alignment needs the complement to stay close to the reference.
    for &t in ts.iter().step_by(8) {
        let f = bump.frame(t);
        let gram = f.complement.transpose() * &bump.reference_frame;
        if gram.ncols() > 0 && linalg::singular_values(&gram).iter().cloned().fold(f64::INFINITY, f64::min) < 0.1 {
            return Err(Error::NoValidInterval);
        }
    }
    Ok(bump)
}

/// `∫ h(γ̇, DJ) + ½ (∇_J h)(γ̇, γ̇) dt` over the whole curve.
pub fn mixed_derivative(bump: &PerturbationBump, jacobi: &JacobiSolution) -> f64 {
    let path = &jacobi.path;
    let panels = 512.max(8 * (path.t_end() / bump.interval.length()).ceil() as usize * 16);
    quadrature(0.0, path.t_end(), panels, |t| {
        let x = path.position(t);
        if !bump.in_tube(x.as_slice()) {
            return 0.0;
        }
        let v = path.velocity(t);
        let (j, dj) = jacobi.eval(t);
        let h = bump.value(x.as_slice());
        let dh = bump.directional(x.as_slice(), &j);
        v.dot(&(h * dj)) + 0.5 * v.dot(&(dh * &v))
    })
}

/// Components `g + ε h`, with first derivatives from the base metric and
/// the bump.
struct PerturbedComponents {
    base: MetricField,
    bump: PerturbationBump,
    epsilon: f64,
}

impl MetricComponents for PerturbedComponents {
    fn dim(&self) -> usize {
        self.base.dim()
    }
    fn value(&self, x: &[f64]) -> DMatrix<f64> {
        self.base.value(x) + self.bump.value(x) * self.epsilon
    }
    fn first_derivatives(&self, x: &[f64]) -> Option<Vec<DMatrix<f64>>> {
        let base = self.base.first_derivatives(x);
        let bump = self.bump.derivatives(x);
        Some(base.into_iter().zip(bump).map(|(g, h)| g + h * self.epsilon).collect())
    }
}

/// The metric `g + ε h`. Second derivatives are central differences of the
/// first derivatives.
pub fn perturbed_metric(metric: &MetricField, bump: &PerturbationBump, epsilon: f64) -> Result<MetricField> {
    let comps = PerturbedComponents { base: metric.clone(), bump: bump.clone(), epsilon };
    Ok(MetricField::new(metric.domain().clone(), metric.index(), Arc::new(comps), format!("{}+bump", metric.label()))?)
}

/// Checks the signature of `metric` at the curve samples and at `n`
/// pseudo-random points of the tube.
pub fn check_signature(metric: &MetricField, bump: &PerturbationBump, n: usize, seed: u64) -> Result<()> {
    let m = metric.dim();
    let expected = (m - metric.index(), metric.index(), 0);
    let dom = metric.domain();
    let mut points = bump.sample_points(n, seed);
    points.extend(bump.samples.iter().map(|(_, p)| p.clone()));
    for p in points {
        let x = dom.wrap(p.as_slice());
        if !dom.contains(&x) {
            continue;
        }
        if linalg::inertia(&metric.value(&x), DEGENERACY_TOL) != expected {
            return Err(Error::SignatureBroken { point: x });
        }
    }
    Ok(())
}

/// A boundary-value problem together with a known solution.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub metric: MetricField,
    pub gec: Gec,
    pub base: BvpSolution,
}

impl Scenario {
    pub fn solve(metric: MetricField, gec: Gec, guess: &BvpGuess, opts: &BvpOptions) -> Result<Self> {
        let base = gec::solve_gp_geodesic(&metric, &gec, guess, opts)?;
        Ok(Self { metric, gec, base })
    }

    /// The base solution as an initial guess.
    pub fn guess(&self) -> BvpGuess {
        BvpGuess {
            params: self.base.params.iter().copied().collect(),
            velocity: self.base.path.initial_velocity().iter().copied().collect(),
            duration: self.base.path.t_end(),
        }
    }

    /// Guesses displaced from the base solution along the bump's Jacobi
    /// field by `τ·λ_max` for each `τ` in `offsets`.
    pub fn kernel_guesses(&self, bump: &PerturbationBump, offsets: &[f64]) -> Vec<(f64, BvpGuess)> {
        let path = &self.base.path;
        let m = path.dim();
        let jacobi = &bump.field().jacobi;
        let (j0, dj0) = jacobi.eval(0.0);
        let (j1, _) = jacobi.eval(jacobi.t_end());
        let x0 = path.initial_position();
        let v0 = path.initial_velocity();
        let chr = self.metric.christoffel_unchecked(x0.as_slice());
        let dv = dj0 - chr.apply(&v0, &j0);
        let d = self.gec.param_dim();
        let du = if d == 0 {
            DVector::zeros(0)
        } else {
            let mut ends = DVector::zeros(2 * m);
            ends.rows_mut(0, m).copy_from(&j0);
            ends.rows_mut(m, m).copy_from(&j1);
            linalg::lstsq(&self.gec.tangent(self.base.params.as_slice()), &ends, 1e-10)
        };
        let base = self.guess();
        offsets
            .iter()
            .map(|&tau| {
                let step = tau * bump.lambda_max;
                let mut g = base.clone();
                g.params.iter_mut().zip(du.iter()).for_each(|(p, d)| *p += step * d);
                g.velocity.iter_mut().zip(dv.iter()).for_each(|(v, d)| *v += step * d);
                (tau, g)
            })
            .collect()
    }

    /// A non-tangent Jacobi field in the degenerate kernel of the base solution.
    pub fn degenerate_field(&self, opts: &ClassifyOptions) -> Result<JacobiSolution> {
        let path = &self.base.path;
        let m = path.dim();
        let report = degeneracy::classify(path, &self.gec, opts)?;
        let data = match &report.kind {
            DegeneracyKind::Degenerate { basis, .. } => DVector::from_column_slice(&basis[0]),
            DegeneracyKind::S1Degenerate { .. } => {
                let aux = AuxiliaryRiemannian::euclidean(m);
                let mono = variational::monodromy(path, &aux, &opts.ode)?;
                let mut tangent = DVector::zeros(2 * m);
                tangent.rows_mut(0, m).copy_from(&path.initial_velocity());
                let tangent = tangent.normalize();
                (0..mono.fixed_space.ncols())
                    .map(|c| {
                        let col = mono.fixed_space.column(c).into_owned();
                        &col - &tangent * tangent.dot(&col)
                    })
                    .max_by(|a, b| a.norm().total_cmp(&b.norm()))
                    .ok_or_else(|| Error::invalid("empty fixed space"))?
            }
            DegeneracyKind::StronglyDegenerate { .. } => return Err(Error::StronglyDegenerateSuspected),
            _ => return Err(Error::invalid("base solution is not degenerate")),
        };
        variational::propagate_jacobi(path, &data.rows(0, m).into_owned(), &data.rows(m, m).into_owned(), &opts.ode)
    }

    /// The field a bump should be built from, summed over passes when the
    /// base solution wraps a closed geodesic.
    pub fn effective_field(&self, opts: &ClassifyOptions) -> Result<EffectiveField> {
        let jacobi = self.degenerate_field(opts)?;
        let path = &self.base.path;
        let verdict = flow::detect_periodicity(path, opts.periodicity_tol * (1.0 + path.initial_velocity().amax()));
        iterate_sum_field(&jacobi, &verdict)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecheckOptions {
    pub bvp: BvpOptions,
    pub classify: ClassifyOptions,
    pub signature_samples: usize,
    pub max_halvings: usize,
    pub seed: u64,
    /// Displacements of the initial guess along the Jacobi field, in units
    /// of `λ_max`, tried in order before the base solution itself.
    pub kernel_offsets: [f64; 6],
}

impl Default for RecheckOptions {
    fn default() -> Self {
        Self {
            bvp: BvpOptions::default(),
            classify: ClassifyOptions::default(),
            signature_samples: 1000,
            max_halvings: 8,
            seed: 0,
            kernel_offsets: [0.7, -0.7, 0.85, -0.85, 0.55, -0.55],
        }
    }
}

/// Outcome of re-solving and classifying under `g + ε h`.
#[derive(Debug, Clone, Serialize)]
pub struct Recheck {
    pub epsilon: f64,
    /// `ε` after automatic halving, relative to `max_I ‖g‖`.
    pub epsilon_used: f64,
    pub halvings: usize,
    pub report: DegeneracyReport,
    /// Smallest non-zero singular value of the shooting map, relative to the largest.
    pub kernel_gap: Option<f64>,
    pub bvp_residual: f64,
    /// Distance between the old and new initial states `(γ(0), γ̇(0))`.
    pub shift: f64,
    /// Offset along the Jacobi field of the guess that converged (`0` for the base).
    pub guess_offset: f64,
    #[serde(skip)]
    pub solution: Option<BvpSolution>,
}

fn metric_scale(metric: &MetricField, bump: &PerturbationBump) -> f64 {
    let path = bump.field.path();
    sample_times(bump.interval.start, bump.interval.end, 16)
        .iter()
        .map(|&t| linalg::singular_values(&metric.value(path.position(t).as_slice()))[0])
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE)
}

/// Applies `g + ε·‖g‖·h`, re-solves the scenario's boundary-value problem
/// from the base solution and classifies the result.
///
/// `ε` is halved while the perturbed metric loses its signature, at most
/// `max_halvings` times.
pub fn apply_and_recheck(scenario: &Scenario, bump: &PerturbationBump, epsilon: f64, opts: &RecheckOptions) -> Result<Recheck> {
    let scale = metric_scale(&scenario.metric, bump);
    let mut eps = epsilon;
    let mut halvings = 0;
    let metric = loop {
        if eps == 0.0 {
            break scenario.metric.clone();
        }
        let p = perturbed_metric(&scenario.metric, bump, eps * scale)?;
        match check_signature(&p, bump, opts.signature_samples, opts.seed) {
            Ok(()) => break p,
            Err(e) if halvings >= opts.max_halvings => return Err(e),
            Err(_) => {
                eps *= 0.5;
                halvings += 1;
            }
        }
    };
    let mut guesses = if eps == 0.0 { Vec::new() } else { scenario.kernel_guesses(bump, &opts.kernel_offsets) };
    guesses.push((0.0, scenario.guess()));
    let mut last_err = None;
    let mut found = None;
    for (tau, guess) in guesses {
        match gec::solve_gp_geodesic(&metric, &scenario.gec, &guess, &opts.bvp) {
            Ok(sol) => {
                found = Some((tau, sol));
                break;
            }
            Err(e) => last_err = Some(e),
        }
    }
    let Some((guess_offset, sol)) = found else { return Err(last_err.expect("at least one guess")) };
    let report = degeneracy::classify(&sol.path, &scenario.gec, &opts.classify)?;
    let kernel_gap = match report.kind {
        DegeneracyKind::Nondegenerate => report.evidence.shooting_gap,
        _ => None,
    };
    let dom = metric.domain();
    let dx = dom.distance(sol.path.initial_position().as_slice(), scenario.base.path.initial_position().as_slice());
    let dv = (sol.path.initial_velocity() - scenario.base.path.initial_velocity()).norm();
    let shift = dx.hypot(dv);
    Ok(Recheck {
        epsilon,
        epsilon_used: eps,
        halvings,
        report,
        kernel_gap,
        bvp_residual: sol.residual.endpoint.max(sol.residual.orthogonality),
        shift,
        guess_offset,
        solution: Some(sol),
    })
}

/// Positive scalar function for conformal rescaling.
pub type ConformalFactor = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

struct ConformalComponents {
    base: MetricField,
    factor: ConformalFactor,
}

impl MetricComponents for ConformalComponents {
    fn dim(&self) -> usize {
        self.base.dim()
    }
    fn value(&self, x: &[f64]) -> DMatrix<f64> {
        self.base.value(x) * (self.factor)(x)
    }
    fn first_derivatives(&self, x: &[f64]) -> Option<Vec<DMatrix<f64>>> {
        let f = (self.factor)(x);
        let g = self.base.value(x);
        let h = 1e-6;
        let mut y = x.to_vec();
        Some(
            self.base
                .first_derivatives(x)
                .into_iter()
                .enumerate()
                .map(|(k, dg)| {
                    y[k] = x[k] + h;
                    let fp = (self.factor)(&y);
                    y[k] = x[k] - h;
                    let fm = (self.factor)(&y);
                    y[k] = x[k];
                    dg * f + &g * ((fp - fm) / (2.0 * h))
                })
                .collect(),
        )
    }
}

/// The metric `f·g` for a positive function `f`, checked on a grid of the
/// chart's sampling box.
pub fn conformal_perturb(metric: &MetricField, factor: ConformalFactor, samples_per_axis: usize) -> Result<MetricField> {
    let m = metric.dim();
    let per_axis = samples_per_axis.max(1);
    let bx = metric.domain().sampling_box(10.0);
    let total = per_axis.pow(m as u32);
    for idx in 0..total {
        let mut rem = idx;
        let x: Vec<f64> = bx
            .iter()
            .map(|(lo, hi)| {
                let k = rem % per_axis;
                rem /= per_axis;
                lo + (hi - lo) * (k as f64 + 0.5) / per_axis as f64
            })
            .collect();
        let f = factor(&x);
        if !(f > 0.0) {
            return Err(Error::NonPositiveFactor { point: x });
        }
    }
    let comps = ConformalComponents { base: metric.clone(), factor };
    MetricField::new(metric.domain().clone(), metric.index(), Arc::new(comps), format!("conformal({})", metric.label()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum TrialOutcome {
    Nondegenerate { kernel_gap: Option<f64> },
    Degenerate { kind: String },
    SolverFailed { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub interval: Option<(f64, f64)>,
    pub radius: Option<f64>,
    pub outcome: TrialOutcome,
}

/// Random bumps applied to a degenerate scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenericityTrial {
    pub base_metric: String,
    pub gec: String,
    pub epsilon: f64,
    pub seed: u64,
    pub trials: Vec<TrialRecord>,
    pub nondegenerate_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloOptions {
    pub recheck: RecheckOptions,
    /// Range of interval lengths as fractions of the window.
    pub min_length_fraction: f64,
    pub max_length_fraction: f64,
    pub placement_attempts: usize,
}

impl Default for MonteCarloOptions {
    fn default() -> Self {
        let mut recheck = RecheckOptions::default();
        recheck.classify.index_form_elements = 0;
        recheck.signature_samples = 200;
        Self { recheck, min_length_fraction: 0.15, max_length_fraction: 0.35, placement_attempts: 32 }
    }
}

fn random_trial(
    scenario: &Scenario,
    field: &EffectiveField,
    trial: usize,
    epsilon: f64,
    seed: u64,
    opts: &MonteCarloOptions,
) -> TrialRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    let m = field.path().dim();
    let (w0, w1) = field.window;
    let mut placed = None;
    for _ in 0..opts.placement_attempts {
        let frac = rng.gen_range(opts.min_length_fraction..=opts.max_length_fraction);
        let len = frac * (w1 - w0);
        let a = w0 + rng.gen::<f64>() * (w1 - w0 - len);
        let rho = default_radius(field.path(), a, a + len);
        if let Some(iv) = interval_score(field, a, a + len, rho) {
            if iv.margin > 0.05 {
                placed = Some((iv, rho));
                break;
            }
        }
    }
    let b = DMatrix::from_fn(m, m, |_, _| rng.sample::<f64, _>(StandardNormal));
    let k = &b * b.transpose() / m as f64;
    let Some((iv, rho)) = placed else {
        return TrialRecord { trial, interval: None, radius: None, outcome: TrialOutcome::SolverFailed { reason: "no admissible interval".into() } };
    };
    let outcome = build_bump(field, &iv, KTarget::Constant(k), rho)
        .and_then(|bump| apply_and_recheck(scenario, &bump, epsilon, &opts.recheck))
        .map(|r| match r.report.kind {
            DegeneracyKind::Nondegenerate | DegeneracyKind::S1Nondegenerate => TrialOutcome::Nondegenerate { kernel_gap: r.kernel_gap },
            other => TrialOutcome::Degenerate { kind: serde_json::to_value(&other).ok().and_then(|v| v.get("kind").and_then(|k| k.as_str().map(String::from))).unwrap_or_default() },
        })
        .unwrap_or_else(|e| TrialOutcome::SolverFailed { reason: e.to_string() });
    TrialRecord { trial, interval: Some((iv.start, iv.end)), radius: Some(rho), outcome }
}

/// Applies `n_trials` random bumps (random interval, random positive
/// semi-definite `K`) to a degenerate scenario and reports how often the
/// continued solution is nondegenerate. Trial `i` draws from the ChaCha
/// stream `i` keyed by `seed`, so results do not depend on scheduling.
pub fn genericity_montecarlo(
    scenario: &Scenario,
    n_trials: usize,
    epsilon: f64,
    seed: u64,
    opts: &MonteCarloOptions,
) -> Result<GenericityTrial> {
    let field = scenario.effective_field(&opts.recheck.classify)?;
    let trials: Vec<TrialRecord> =
        (0..n_trials).into_par_iter().map(|i| random_trial(scenario, &field, i, epsilon, seed, opts)).collect();
    let good = trials.iter().filter(|t| matches!(t.outcome, TrialOutcome::Nondegenerate { .. })).count();
    Ok(GenericityTrial {
        base_metric: scenario.metric.label().to_string(),
        gec: scenario.gec.kind().to_string(),
        epsilon,
        seed,
        nondegenerate_fraction: if n_trials == 0 { 0.0 } else { good as f64 / n_trials as f64 },
        trials,
    })
}

//! General endpoint conditions `𝒫 ⊂ M × M`, their boundary geometry,
//! boundary-value solving by shooting, and the shooting count of boundary
//! Jacobi fields.
//!
//! Every condition is handled through a single parametrization
//! `ψ: R^D → R^{2m}`; the doubled metric is `ḡ = g ⊕ (−g)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{self, GeodesicPath, LinearizedFlow};
use crate::linalg::{self, null_space, singular_values};
use crate::metric::{AuxiliaryRiemannian, MetricField};
use crate::ode::OdeOptions;

/// Relative singular-value threshold shared by all kernel computations.
pub const KERNEL_THRESHOLD: f64 = 1e-6;
/// Required ratio between the smallest kept and largest rejected value.
pub const KERNEL_GAP: f64 = 100.0;
/// Relative size below which the restricted Gram matrix is called degenerate.
pub const RESTRICTION_TOL: f64 = 1e-8;

/// A smooth map from a parameter box into coordinate space.
pub trait Immersion: Send + Sync {
    fn param_dim(&self) -> usize;
    fn target_dim(&self) -> usize;
    fn value(&self, u: &[f64]) -> DVector<f64>;

    /// Columns `∂_a ψ`; central differences unless overridden.
    fn jacobian(&self, u: &[f64]) -> DMatrix<f64> {
        let d = self.param_dim();
        let h = 1e-6;
        let mut out = DMatrix::zeros(self.target_dim(), d);
        let mut w = u.to_vec();
        for a in 0..d {
            w[a] = u[a] + h;
            let p = self.value(&w);
            w[a] = u[a] - h;
            let q = self.value(&w);
            w[a] = u[a];
            out.set_column(a, &((p - q) / (2.0 * h)));
        }
        out
    }

    /// `out[a][b] = ∂_a ∂_b ψ`; central differences of the Jacobian unless
    /// overridden.
    fn second_derivatives(&self, u: &[f64]) -> Vec<Vec<DVector<f64>>> {
        let d = self.param_dim();
        let h = 1e-4;
        let mut out = vec![vec![DVector::zeros(self.target_dim()); d]; d];
        let mut w = u.to_vec();
        for a in 0..d {
            w[a] = u[a] + h;
            let p = self.jacobian(&w);
            w[a] = u[a] - h;
            let q = self.jacobian(&w);
            w[a] = u[a];
            let diff = (p - q) / (2.0 * h);
            for b in 0..d {
                out[a][b] = diff.column(b).into_owned();
            }
        }
        for a in 0..d {
            for b in (a + 1)..d {
                let avg = (&out[a][b] + &out[b][a]) * 0.5;
                out[a][b] = avg.clone();
                out[b][a] = avg;
            }
        }
        out
    }

    /// Parameter box; periodic parameters use their fundamental window.
    fn param_box(&self) -> Vec<(f64, f64)>;

    /// Period of each parameter, if any.
    fn param_periods(&self) -> Vec<Option<f64>> {
        vec![None; self.param_dim()]
    }
}

/// A single point, as a zero-dimensional submanifold.
#[derive(Debug, Clone)]
pub struct PointImmersion(pub Vec<f64>);

impl Immersion for PointImmersion {
    fn param_dim(&self) -> usize {
        0
    }
    fn target_dim(&self) -> usize {
        self.0.len()
    }
    fn value(&self, _: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(&self.0)
    }
    fn jacobian(&self, _: &[f64]) -> DMatrix<f64> {
        DMatrix::zeros(self.0.len(), 0)
    }
    fn second_derivatives(&self, _: &[f64]) -> Vec<Vec<DVector<f64>>> {
        Vec::new()
    }
    fn param_box(&self) -> Vec<(f64, f64)> {
        Vec::new()
    }
}

/// Round circle `c + r (cos u, sin u)` in a coordinate plane of `R^2`.
#[derive(Debug, Clone)]
pub struct Circle {
    pub center: [f64; 2],
    pub radius: f64,
}

impl Immersion for Circle {
    fn param_dim(&self) -> usize {
        1
    }
    fn target_dim(&self) -> usize {
        2
    }
    fn value(&self, u: &[f64]) -> DVector<f64> {
        let (s, c) = u[0].sin_cos();
        DVector::from_vec(vec![self.center[0] + self.radius * c, self.center[1] + self.radius * s])
    }
    fn jacobian(&self, u: &[f64]) -> DMatrix<f64> {
        let (s, c) = u[0].sin_cos();
        DMatrix::from_column_slice(2, 1, &[-self.radius * s, self.radius * c])
    }
    fn second_derivatives(&self, u: &[f64]) -> Vec<Vec<DVector<f64>>> {
        let (s, c) = u[0].sin_cos();
        vec![vec![DVector::from_vec(vec![-self.radius * c, -self.radius * s])]]
    }
    fn param_box(&self) -> Vec<(f64, f64)> {
        vec![(0.0, std::f64::consts::TAU)]
    }
    fn param_periods(&self) -> Vec<Option<f64>> {
        vec![Some(std::f64::consts::TAU)]
    }
}

type VecFn = Arc<dyn Fn(&[f64]) -> DVector<f64> + Send + Sync>;

/// Immersion given by a closure; derivatives by central differences.
#[derive(Clone)]
pub struct FnImmersion {
    param_dim: usize,
    target_dim: usize,
    f: VecFn,
    bounds: Vec<(f64, f64)>,
    periods: Vec<Option<f64>>,
}

impl FnImmersion {
    pub fn new<F>(param_dim: usize, target_dim: usize, bounds: Vec<(f64, f64)>, f: F) -> Self
    where
        F: Fn(&[f64]) -> DVector<f64> + Send + Sync + 'static,
    {
        Self { param_dim, target_dim, f: Arc::new(f), bounds, periods: vec![None; param_dim] }
    }

    pub fn with_periods(mut self, periods: Vec<Option<f64>>) -> Self {
        self.periods = periods;
        self
    }
}

impl Immersion for FnImmersion {
    fn param_dim(&self) -> usize {
        self.param_dim
    }
    fn target_dim(&self) -> usize {
        self.target_dim
    }
    fn value(&self, u: &[f64]) -> DVector<f64> {
        (self.f)(u)
    }
    fn param_box(&self) -> Vec<(f64, f64)> {
        self.bounds.clone()
    }
    fn param_periods(&self) -> Vec<Option<f64>> {
        self.periods.clone()
    }
}

/// Swaps the two factors of an immersion into `M × M`.
struct Transposed(Arc<dyn Immersion>);

impl Transposed {
    fn swap(v: DVector<f64>) -> DVector<f64> {
        let m = v.len() / 2;
        let mut out = v.clone();
        out.rows_mut(0, m).copy_from(&v.rows(m, m));
        out.rows_mut(m, m).copy_from(&v.rows(0, m));
        out
    }
}

impl Immersion for Transposed {
    fn param_dim(&self) -> usize {
        self.0.param_dim()
    }
    fn target_dim(&self) -> usize {
        self.0.target_dim()
    }
    fn value(&self, u: &[f64]) -> DVector<f64> {
        Self::swap(self.0.value(u))
    }
    fn jacobian(&self, u: &[f64]) -> DMatrix<f64> {
        let j = self.0.jacobian(u);
        let cols: Vec<DVector<f64>> = (0..j.ncols()).map(|a| Self::swap(j.column(a).into_owned())).collect();
        DMatrix::from_columns(&cols).resize(j.nrows(), j.ncols(), 0.0)
    }
    fn second_derivatives(&self, u: &[f64]) -> Vec<Vec<DVector<f64>>> {
        self.0.second_derivatives(u).into_iter().map(|row| row.into_iter().map(Self::swap).collect()).collect()
    }
    fn param_box(&self) -> Vec<(f64, f64)> {
        self.0.param_box()
    }
    fn param_periods(&self) -> Vec<Option<f64>> {
        self.0.param_periods()
    }
}

/// An endpoint condition.
#[derive(Clone)]
pub enum Gec {
    FixedPoints { p: Vec<f64>, q: Vec<f64> },
    Product { first: Arc<dyn Immersion>, second: Arc<dyn Immersion> },
    /// Closed curves: `γ(0) = γ(T)` (modulo periodic chart axes).
    Diagonal { dim: usize },
    Parametrized { map: Arc<dyn Immersion> },
}

impl fmt::Debug for Gec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Gec::FixedPoints { p, q } => f.debug_struct("FixedPoints").field("p", p).field("q", q).finish(),
            Gec::Product { first, second } => f
                .debug_struct("Product")
                .field("first_dim", &first.param_dim())
                .field("second_dim", &second.param_dim())
                .finish(),
            Gec::Diagonal { dim } => f.debug_struct("Diagonal").field("dim", dim).finish(),
            Gec::Parametrized { map } => f.debug_struct("Parametrized").field("param_dim", &map.param_dim()).finish(),
        }
    }
}

impl Gec {
    pub fn kind(&self) -> &'static str {
        match self {
            Gec::FixedPoints { .. } => "fixed",
            Gec::Product { .. } => "product",
            Gec::Diagonal { .. } => "diagonal",
            Gec::Parametrized { .. } => "parametrized",
        }
    }

    pub fn is_diagonal(&self) -> bool {
        matches!(self, Gec::Diagonal { .. })
    }

    /// Dimension `m` of the base chart.
    pub fn base_dim(&self) -> usize {
        match self {
            Gec::FixedPoints { p, .. } => p.len(),
            Gec::Product { first, .. } => first.target_dim(),
            Gec::Diagonal { dim } => *dim,
            Gec::Parametrized { map } => map.target_dim() / 2,
        }
    }

    /// Dimension `D` of `𝒫`.
    pub fn param_dim(&self) -> usize {
        match self {
            Gec::FixedPoints { .. } => 0,
            Gec::Product { first, second } => first.param_dim() + second.param_dim(),
            Gec::Diagonal { dim } => *dim,
            Gec::Parametrized { map } => map.param_dim(),
        }
    }

    /// Checks that the condition lives in `M × M` for an `m`-dimensional chart.
    pub fn validate(&self, m: usize) -> Result<()> {
        let ok = match self {
            Gec::FixedPoints { p, q } => p.len() == m && q.len() == m,
            Gec::Product { first, second } => first.target_dim() == m && second.target_dim() == m,
            Gec::Diagonal { dim } => *dim == m,
            Gec::Parametrized { map } => map.target_dim() == 2 * m,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { expected: m, found: self.base_dim() })
        }
    }

    /// The reversed condition `𝒫ᵗ = {(q, p) : (p, q) ∈ 𝒫}`.
    pub fn transpose(&self) -> Gec {
        match self {
            Gec::FixedPoints { p, q } => Gec::FixedPoints { p: q.clone(), q: p.clone() },
            Gec::Product { first, second } => Gec::Product { first: second.clone(), second: first.clone() },
            Gec::Diagonal { dim } => Gec::Diagonal { dim: *dim },
            Gec::Parametrized { map } => Gec::Parametrized { map: Arc::new(Transposed(map.clone())) },
        }
    }

    /// `ψ(u) ∈ R^{2m}`.
    pub fn point(&self, u: &[f64]) -> DVector<f64> {
        match self {
            Gec::FixedPoints { p, q } => DVector::from_iterator(p.len() * 2, p.iter().chain(q).copied()),
            Gec::Product { first, second } => {
                let d1 = first.param_dim();
                let a = first.value(&u[..d1]);
                let b = second.value(&u[d1..]);
                DVector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
            }
            Gec::Diagonal { dim } => DVector::from_iterator(2 * dim, u.iter().chain(u).copied()),
            Gec::Parametrized { map } => map.value(u),
        }
    }

    /// Tangent basis `B = ∂ψ` as a `2m × D` matrix.
    pub fn tangent(&self, u: &[f64]) -> DMatrix<f64> {
        let m = self.base_dim();
        let d = self.param_dim();
        match self {
            Gec::FixedPoints { .. } => DMatrix::zeros(2 * m, 0),
            Gec::Product { first, second } => {
                let d1 = first.param_dim();
                let mut out = DMatrix::zeros(2 * m, d);
                if d1 > 0 {
                    out.view_mut((0, 0), (m, d1)).copy_from(&first.jacobian(&u[..d1]));
                }
                if d > d1 {
                    out.view_mut((m, d1), (m, d - d1)).copy_from(&second.jacobian(&u[d1..]));
                }
                out
            }
            Gec::Diagonal { .. } => {
                let mut out = DMatrix::zeros(2 * m, m);
                for i in 0..m {
                    out[(i, i)] = 1.0;
                    out[(m + i, i)] = 1.0;
                }
                out
            }
            Gec::Parametrized { map } => map.jacobian(u),
        }
    }

    /// `∂_a ∂_b ψ`.
    pub fn second_derivatives(&self, u: &[f64]) -> Vec<Vec<DVector<f64>>> {
        let m = self.base_dim();
        let d = self.param_dim();
        match self {
            Gec::FixedPoints { .. } => Vec::new(),
            Gec::Product { first, second } => {
                let d1 = first.param_dim();
                let mut out = vec![vec![DVector::zeros(2 * m); d]; d];
                if d1 > 0 {
                    let a = first.second_derivatives(&u[..d1]);
                    for i in 0..d1 {
                        for j in 0..d1 {
                            out[i][j].rows_mut(0, m).copy_from(&a[i][j]);
                        }
                    }
                }
                if d > d1 {
                    let b = second.second_derivatives(&u[d1..]);
                    for i in 0..(d - d1) {
                        for j in 0..(d - d1) {
                            out[d1 + i][d1 + j].rows_mut(m, m).copy_from(&b[i][j]);
                        }
                    }
                }
                out
            }
            Gec::Diagonal { .. } => vec![vec![DVector::zeros(2 * m); d]; d],
            Gec::Parametrized { map } => map.second_derivatives(u),
        }
    }

    /// Parameter box used for sampling and multi-start.
    pub fn param_box(&self, metric: &MetricField) -> Vec<(f64, f64)> {
        match self {
            Gec::FixedPoints { .. } => Vec::new(),
            Gec::Product { first, second } => first.param_box().into_iter().chain(second.param_box()).collect(),
            Gec::Diagonal { .. } => metric.domain().sampling_box(10.0),
            Gec::Parametrized { map } => map.param_box(),
        }
    }

    pub fn param_periods(&self, metric: &MetricField) -> Vec<Option<f64>> {
        match self {
            Gec::FixedPoints { .. } => Vec::new(),
            Gec::Product { first, second } => first.param_periods().into_iter().chain(second.param_periods()).collect(),
            Gec::Diagonal { .. } => metric.domain().periods.clone(),
            Gec::Parametrized { map } => map.param_periods(),
        }
    }

    /// Parameters of the point of `𝒫` closest to `pair` (Gauss–Newton from
    /// `hint`, or from a grid over the parameter box).
    pub fn locate(&self, metric: &MetricField, pair: &DVector<f64>, hint: Option<&[f64]>) -> Result<(DVector<f64>, f64)> {
        let m = self.base_dim();
        let d = self.param_dim();
        let dom = metric.domain().product(metric.domain());
        let resid = |u: &DVector<f64>| DVector::from_vec(dom.displacement(pair.as_slice(), self.point(u.as_slice()).as_slice()));
        if d == 0 {
            let r = resid(&DVector::zeros(0)).norm();
            return Ok((DVector::zeros(0), r));
        }
        if let Gec::Diagonal { .. } = self {
            let u = pair.rows(0, m).into_owned();
            let r = resid(&u).norm();
            return Ok((u, r));
        }
        let starts: Vec<DVector<f64>> = match hint {
            Some(h) => vec![DVector::from_column_slice(h)],
            None => grid(&self.param_box(metric), 9),
        };
        let mut best: Option<(DVector<f64>, f64)> = None;
        for mut u in starts {
            for _ in 0..50 {
                let r = resid(&u);
                let b = self.tangent(u.as_slice());
                let step = linalg::lstsq(&b, &r, 1e-12);
                u += &step;
                if step.amax() < 1e-15 {
                    break;
                }
            }
            let r = resid(&u).norm();
            if best.as_ref().map_or(true, |b| r < b.1) {
                best = Some((u, r));
            }
        }
        best.ok_or_else(|| Error::invalid("empty parameter box"))
    }
}

/// Uniform grid with `per_axis` points per axis (cell centres).
pub(crate) fn grid(bx: &[(f64, f64)], per_axis: usize) -> Vec<DVector<f64>> {
    let d = bx.len();
    let total = per_axis.pow(d as u32);
    (0..total)
        .map(|mut idx| {
            DVector::from_iterator(
                d,
                (0..d).map(|i| {
                    let j = idx % per_axis;
                    idx /= per_axis;
                    let (lo, hi) = bx[i];
                    lo + (hi - lo) * (j as f64 + 0.5) / per_axis as f64
                }),
            )
        })
        .collect()
}

/// Brings periodic parameters back into their fundamental window.
pub(crate) fn wrap_params(u: &mut DVector<f64>, periods: &[Option<f64>], bx: &[(f64, f64)]) {
    for (a, p) in periods.iter().enumerate() {
        if let Some(p) = p {
            let lo = bx[a].0;
            u[a] = lo + (u[a] - lo).rem_euclid(*p);
        }
    }
}

/// Doubled metric `ḡ = g(x₁) ⊕ (−g(x₂))` at a point pair.
pub fn doubled_metric(metric: &MetricField, pair: &[f64]) -> DMatrix<f64> {
    let m = metric.dim();
    let mut out = DMatrix::zeros(2 * m, 2 * m);
    out.view_mut((0, 0), (m, m)).copy_from(&metric.value(&pair[..m]));
    out.view_mut((m, m), (m, m)).copy_from(&(-metric.value(&pair[m..])));
    out
}

/// Local geometry of `𝒫` at a point.
#[derive(Debug, Clone)]
pub struct BoundaryGeometry {
    pub params: DVector<f64>,
    pub point: DVector<f64>,
    /// Tangent basis `B` (`2m × D`).
    pub tangent: DMatrix<f64>,
    /// `ḡ` at the point.
    pub metric: DMatrix<f64>,
    /// `Bᵀ ḡ B`.
    pub gram: DMatrix<f64>,
    /// `σ_max / σ_min` of the Gram matrix (infinite when singular).
    pub condition: f64,
    pub nondegenerate: bool,
    /// `∇̄_{b_a} b_b = ∂_a∂_b ψ + Γ̄(b_a, b_b)`.
    pub covariant_hessian: Vec<Vec<DVector<f64>>>,
}

impl BoundaryGeometry {
    /// `S_η(b_a, b_b) = ḡ(∇̄_{b_a} b_b, η)` as a `D × D` matrix.
    pub fn second_fundamental(&self, eta: &DVector<f64>) -> DMatrix<f64> {
        let d = self.tangent.ncols();
        let geta = &self.metric * eta;
        let mut s = DMatrix::from_fn(d, d, |a, b| self.covariant_hessian[a][b].dot(&geta));
        s = linalg::symmetrize(&s);
        s
    }

    /// `ḡ`-orthogonal projector onto the normal space `T𝒫^⊥` (requires a
    /// nondegenerate restriction).
    pub fn normal_projector(&self) -> Result<DMatrix<f64>> {
        let n = self.point.len();
        if self.tangent.ncols() == 0 {
            return Ok(DMatrix::identity(n, n));
        }
        if !self.nondegenerate {
            return Err(Error::DegenerateRestriction { condition: self.condition });
        }
        let inv = crate::metric::invert(&self.gram);
        Ok(DMatrix::identity(n, n) - &self.tangent * inv * self.tangent.transpose() * &self.metric)
    }

    /// Components `ḡ(w, b_a)`.
    pub fn tangent_components(&self, w: &DVector<f64>) -> DVector<f64> {
        self.tangent.transpose() * (&self.metric * w)
    }
}

fn restriction_condition(gram: &DMatrix<f64>, tangent: &DMatrix<f64>) -> (f64, bool) {
    if gram.nrows() == 0 {
        return (1.0, true);
    }
    let sv = singular_values(gram);
    let smax = sv[0];
    let smin = *sv.last().unwrap();
    let scale = singular_values(tangent).first().copied().unwrap_or(1.0).powi(2).max(f64::MIN_POSITIVE);
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    (cond, smin > RESTRICTION_TOL * scale)
}

/// Geometry of `𝒫` at `ψ(u)` without the nondegeneracy requirement.
pub fn boundary_geometry_unchecked(gec: &Gec, metric: &MetricField, u: &[f64]) -> BoundaryGeometry {
    let m = metric.dim();
    let point = gec.point(u);
    let tangent = gec.tangent(u);
    let gbar = doubled_metric(metric, point.as_slice());
    let gram = linalg::symmetrize(&(tangent.transpose() * &gbar * &tangent));
    let (condition, nondegenerate) = restriction_condition(&gram, &tangent);
    let d = tangent.ncols();
    let second = gec.second_derivatives(u);
    let c1 = metric.christoffel_unchecked(&point.as_slice()[..m]);
    let c2 = metric.christoffel_unchecked(&point.as_slice()[m..]);
    let mut covariant_hessian = vec![vec![DVector::zeros(2 * m); d]; d];
    for a in 0..d {
        let ba = tangent.column(a).into_owned();
        for b in 0..d {
            let bb = tangent.column(b).into_owned();
            let mut v = second[a][b].clone();
            let top = c1.apply(&ba.rows(0, m).into_owned(), &bb.rows(0, m).into_owned());
            let bot = c2.apply(&ba.rows(m, m).into_owned(), &bb.rows(m, m).into_owned());
            v.rows_mut(0, m).add_assign_from(&top);
            v.rows_mut(m, m).add_assign_from(&bot);
            covariant_hessian[a][b] = v;
        }
    }
    BoundaryGeometry {
        params: DVector::from_column_slice(u),
        point,
        tangent,
        metric: gbar,
        gram,
        condition,
        nondegenerate,
        covariant_hessian,
    }
}

trait AddAssignFrom {
    fn add_assign_from(&mut self, other: &DVector<f64>);
}

impl AddAssignFrom for nalgebra::DVectorViewMut<'_, f64> {
    fn add_assign_from(&mut self, other: &DVector<f64>) {
        for i in 0..other.len() {
            self[i] += other[i];
        }
    }
}

/// Geometry of `𝒫` at `ψ(u)`; fails when `ḡ` restricted to `T𝒫` is degenerate.
pub fn boundary_geometry(gec: &Gec, metric: &MetricField, u: &[f64]) -> Result<BoundaryGeometry> {
    gec.validate(metric.dim())?;
    if u.len() != gec.param_dim() {
        return Err(Error::DimensionMismatch { expected: gec.param_dim(), found: u.len() });
    }
    let geo = boundary_geometry_unchecked(gec, metric, u);
    if !geo.nondegenerate {
        return Err(Error::DegenerateRestriction { condition: geo.condition });
    }
    Ok(geo)
}

/// Initial guess for a boundary-value solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BvpGuess {
    pub params: Vec<f64>,
    pub velocity: Vec<f64>,
    /// Parameter length of the geodesic (defaults to 1).
    #[serde(default = "one")]
    pub duration: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BvpOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub fd_step: f64,
    pub ode: OdeOptions,
}

impl Default for BvpOptions {
    fn default() -> Self {
        Self { tol: 1e-9, max_iter: 50, fd_step: 1e-6, ode: OdeOptions::default() }
    }
}

/// Residual certificate of a boundary-value solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BvpResidual {
    /// `‖γ(T) − ψ₂(u)‖`.
    pub endpoint: f64,
    /// `max_a |ḡ((γ̇(0), γ̇(T)), b_a)|`.
    pub orthogonality: f64,
}

/// A `(g, 𝒫)`-geodesic.
#[derive(Debug, Clone)]
pub struct BvpSolution {
    pub path: GeodesicPath,
    pub params: DVector<f64>,
    pub residual: BvpResidual,
    pub jacobian_condition: f64,
    pub iterations: usize,
}

impl BvpSolution {
    /// `η = (γ̇(0), γ̇(T))`.
    pub fn endpoint_velocities(&self) -> DVector<f64> {
        let m = self.path.dim();
        let mut eta = DVector::zeros(2 * m);
        eta.rows_mut(0, m).copy_from(&self.path.initial_velocity());
        eta.rows_mut(m, m).copy_from(&self.path.velocity(self.path.t_end()));
        eta
    }

    pub fn geometry(&self, gec: &Gec) -> BoundaryGeometry {
        boundary_geometry_unchecked(gec, self.path.metric(), self.params.as_slice())
    }
}

struct Shooter<'a> {
    metric: &'a MetricField,
    gec: &'a Gec,
    duration: f64,
    ode: OdeOptions,
}

impl Shooter<'_> {
    fn residual(&self, z: &DVector<f64>) -> Result<(DVector<f64>, GeodesicPath)> {
        let m = self.metric.dim();
        let d = self.gec.param_dim();
        let u = z.rows(0, d).into_owned();
        let v0 = z.rows(d, m).into_owned();
        let pt = self.gec.point(u.as_slice());
        let x0 = pt.rows(0, m).into_owned();
        let path = flow::integrate_geodesic(self.metric, x0.as_slice(), v0.as_slice(), self.duration, &self.ode)?
            .require_complete()?;
        let x1 = path.position(self.duration);
        let v1 = path.velocity(self.duration);
        let dom = self.metric.domain();
        let mut r = DVector::zeros(m + d);
        let disp = dom.displacement(x1.as_slice(), &pt.as_slice()[m..]);
        r.rows_mut(0, m).copy_from_slice(&disp);
        if d > 0 {
            let b = self.gec.tangent(u.as_slice());
            let mut eta = DVector::zeros(2 * m);
            eta.rows_mut(0, m).copy_from(&v0);
            eta.rows_mut(m, m).copy_from(&v1);
            let mut pair = pt.clone();
            pair.rows_mut(m, m).copy_from(&x1);
            let gbar = doubled_metric(self.metric, pair.as_slice());
            r.rows_mut(m, d).copy_from(&(b.transpose() * (gbar * eta)));
        }
        Ok((r, path))
    }
}

/// Solves for a `(g, 𝒫)`-geodesic by damped Newton shooting on the
/// parameters `u` of the initial point and the initial velocity.
pub fn solve_gp_geodesic(metric: &MetricField, gec: &Gec, guess: &BvpGuess, opts: &BvpOptions) -> Result<BvpSolution> {
    let m = metric.dim();
    gec.validate(m)?;
    let d = gec.param_dim();
    if guess.params.len() != d || guess.velocity.len() != m {
        return Err(Error::DimensionMismatch { expected: d + m, found: guess.params.len() + guess.velocity.len() });
    }
    if !(guess.duration > 0.0) {
        return Err(Error::invalid("duration must be positive"));
    }
    let shooter = Shooter { metric, gec, duration: guess.duration, ode: opts.ode };
    let mut z = DVector::from_iterator(d + m, guess.params.iter().chain(&guess.velocity).copied());
    let (mut r, mut path) = shooter.residual(&z)?;
    let mut jac_cond = f64::NAN;
    let mut iterations = 0;
    let converged = |r: &DVector<f64>| r.rows(0, m).amax() <= opts.tol && (d == 0 || r.rows(m, d).amax() <= opts.tol);
    let mut radius = 0.1 * (1.0 + z.norm());
    while !converged(&r) {
        if iterations >= opts.max_iter {
            return Err(Error::NewtonDiverged { iterations, residual: r.norm() });
        }
        iterations += 1;
        let jac = fd_jacobian(&shooter, &z, opts.fd_step)?;
        let svd = jac.clone().svd(true, true);
        let sv = singular_values(&jac);
        jac_cond = if let (Some(a), Some(b)) = (sv.first(), sv.last()) { a / b } else { 1.0 };
        let norm0 = r.norm();
        loop {
            let step = trust_region_step(&svd, &r, radius);
            let predicted = norm0 * norm0 - (&r + &jac * &step).norm_squared();
            let trial = &z + &step;
            let outcome = shooter.residual(&trial).ok().map(|(rt, pt)| {
                let actual = norm0 * norm0 - rt.norm_squared();
                (rt, pt, actual)
            });
            match outcome {
                Some((rt, pt, actual))
                    if (actual > 1e-4 * predicted.max(0.0) && rt.norm() < norm0) || rt.norm() <= opts.tol * 0.1 =>
                {
                    let ratio = if predicted > 0.0 { actual / predicted } else { 1.0 };
                    if ratio > 0.75 && step.norm() >= 0.99 * radius {
                        radius *= 2.0;
                    } else if ratio < 0.25 {
                        radius = 0.5 * step.norm();
                    }
                    z = trial;
                    r = rt;
                    path = pt;
                    break;
                }
                _ => {
                    radius = 0.25 * radius.min(step.norm());
                    if radius < 1e-14 * (1.0 + z.norm()) {
                        return Err(Error::NewtonDiverged { iterations, residual: norm0 });
                    }
                }
            }
        }
    }
    if jac_cond.is_nan() {
        let jac = fd_jacobian(&shooter, &z, opts.fd_step)?;
        let sv = singular_values(&jac);
        jac_cond = if let (Some(a), Some(b)) = (sv.first(), sv.last()) { a / b } else { 1.0 };
    }
    let residual = BvpResidual {
        endpoint: r.rows(0, m).amax(),
        orthogonality: if d > 0 { r.rows(m, d).amax() } else { 0.0 },
    };
    Ok(BvpSolution { path, params: z.rows(0, d).into_owned(), residual, jacobian_condition: jac_cond, iterations })
}

/// Least-squares Newton step restricted to `‖s‖ ≤ radius` through the
/// Levenberg–Marquardt parameter, found by bisection in log scale.
fn trust_region_step(svd: &nalgebra::SVD<f64, nalgebra::Dyn, nalgebra::Dyn>, r: &DVector<f64>, radius: f64) -> DVector<f64> {
    let u = svd.u.as_ref().expect("left singular vectors");
    let vt = svd.v_t.as_ref().expect("right singular vectors");
    let sig = &svd.singular_values;
    let smax = sig.iter().cloned().fold(0.0, f64::max);
    let coef: Vec<f64> = (0..sig.len()).map(|i| -u.column(i).dot(r)).collect();
    let step = |mu: f64| {
        let mut s = DVector::zeros(vt.ncols());
        for i in 0..sig.len() {
            let si = sig[i];
            let w = if mu == 0.0 {
                if si > 1e-10 * smax { 1.0 / si } else { 0.0 }
            } else {
                si / (si * si + mu)
            };
            s += vt.row(i).transpose() * (w * coef[i]);
        }
        s
    };
    let newton = step(0.0);
    if newton.norm() <= radius {
        return newton;
    }
    let (mut lo, mut hi) = (1e-30f64, (smax * smax).max(1e-30) * 1e12);
    for _ in 0..100 {
        let mid = (lo * hi).sqrt();
        if step(mid).norm() > radius {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo < 1.0 + 1e-6 {
            break;
        }
    }
    step(hi)
}

fn fd_jacobian(shooter: &Shooter<'_>, z: &DVector<f64>, h: f64) -> Result<DMatrix<f64>> {
    let n = z.len();
    let mut cols = Vec::with_capacity(n);
    for k in 0..n {
        let mut zp = z.clone();
        zp[k] += h;
        let mut zm = z.clone();
        zm[k] -= h;
        let (rp, _) = shooter.residual(&zp)?;
        let (rm, _) = shooter.residual(&zm)?;
        cols.push((rp - rm) / (2.0 * h));
    }
    Ok(DMatrix::from_columns(&cols))
}

/// Solves from every guess in parallel and keeps distinct solutions, ordered
/// by their initial parameters. Two solutions are the same when their
/// initial phase states differ by less than `1e-4`.
pub fn solve_multistart(metric: &MetricField, gec: &Gec, guesses: &[BvpGuess], opts: &BvpOptions) -> Vec<BvpSolution> {
    let mut sols: Vec<BvpSolution> =
        guesses.par_iter().filter_map(|g| solve_gp_geodesic(metric, gec, g, opts).ok()).collect();
    let key = |s: &BvpSolution| -> Vec<f64> {
        s.params.iter().copied().chain(s.path.initial_velocity().iter().copied()).collect()
    };
    sols.sort_by(|a, b| {
        key(a).iter().zip(key(b).iter()).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
    });
    let dom = metric.domain();
    let mut out: Vec<BvpSolution> = Vec::new();
    for s in sols {
        let dup = out.iter().any(|o| {
            let dx = dom.distance(s.path.initial_position().as_slice(), o.path.initial_position().as_slice());
            let dv = (s.path.initial_velocity() - o.path.initial_velocity()).norm();
            (dx * dx + dv * dv).sqrt() < 1e-4
        });
        if !dup {
            out.push(s);
        }
    }
    out
}

/// Residual of the linearized endpoint condition for a Jacobi field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PJacobiResidual {
    /// Distance of `(J(0), J(T))` from `T𝒫`.
    pub membership: f64,
    /// Components `ḡ((DJ(0), DJ(T)), b_a) + S_η(J̄, b_a)`.
    pub tangential: Vec<f64>,
}

impl PJacobiResidual {
    pub fn norm(&self) -> f64 {
        self.membership.max(self.tangential.iter().fold(0.0, |a, b| a.max(b.abs())))
    }
}

/// Boundary residual of a Jacobi field with endpoint data `(J0, DJ0)` and
/// `(J1, DJ1)` along a `(g, 𝒫)`-geodesic.
pub fn pjacobi_boundary_residual(
    geometry: &BoundaryGeometry,
    eta: &DVector<f64>,
    ends: (&DVector<f64>, &DVector<f64>, &DVector<f64>, &DVector<f64>),
) -> PJacobiResidual {
    let (j0, dj0, j1, dj1) = ends;
    let m = j0.len();
    let mut jbar = DVector::zeros(2 * m);
    jbar.rows_mut(0, m).copy_from(j0);
    jbar.rows_mut(m, m).copy_from(j1);
    let mut djbar = DVector::zeros(2 * m);
    djbar.rows_mut(0, m).copy_from(dj0);
    djbar.rows_mut(m, m).copy_from(dj1);
    let b = &geometry.tangent;
    let coeff = if b.ncols() > 0 { linalg::lstsq(b, &jbar, 1e-12) } else { DVector::zeros(0) };
    let membership = (&jbar - b * &coeff).norm();
    let s = geometry.second_fundamental(eta);
    let tangential = (geometry.tangent_components(&djbar) + s * coeff).iter().copied().collect();
    PJacobiResidual { membership, tangential }
}

/// Result of the shooting count of boundary Jacobi fields.
#[derive(Debug, Clone)]
pub struct PJacobiKernel {
    pub dimension: usize,
    /// Initial data `(J(0), DJ(0))` of a basis, as columns (`2m × dim`).
    pub initial_data: DMatrix<f64>,
    /// Singular values of the shooting map, ascending.
    pub singular_values: Vec<f64>,
    /// Smallest singular value not counted as zero, relative to the largest
    /// (the "kernel gap").
    pub gap: f64,
}

/// Counts Jacobi fields satisfying the linearized endpoint condition by
/// shooting: unknowns are the parameters `c ∈ R^D` of `(J(0), J(T)) = B c`
/// and `w = DJ(0)`; equations are `J(T) = B₂ c` and the tangential boundary
/// condition.
pub fn pjacobi_shooting(sol: &BvpSolution, gec: &Gec, opts: &OdeOptions) -> Result<PJacobiKernel> {
    pjacobi_shooting_at(&sol.path, gec, sol.params.as_slice(), opts)
}

/// [`pjacobi_shooting`] for a geodesic whose endpoint pair is `ψ(params)`.
pub fn pjacobi_shooting_at(path: &GeodesicPath, gec: &Gec, params: &[f64], opts: &OdeOptions) -> Result<PJacobiKernel> {
    let metric = path.metric();
    let m = metric.dim();
    gec.validate(m)?;
    let t_end = path.t_end();
    let init = DMatrix::identity(2 * m, 2 * m);
    let lin = flow::integrate_linearized(
        metric,
        path.initial_position().as_slice(),
        path.initial_velocity().as_slice(),
        t_end,
        &init,
        opts,
    )?;
    if let Some(e) = flow_error(&lin) {
        return Err(e);
    }
    let phi = lin.jacobi(t_end);
    let geo = boundary_geometry_unchecked(gec, metric, params);
    let mut eta = DVector::zeros(2 * m);
    eta.rows_mut(0, m).copy_from(&path.initial_velocity());
    eta.rows_mut(m, m).copy_from(&path.velocity(t_end));
    let op = shooting_operator(&phi, &geo, &eta, m);
    let d = geo.tangent.ncols();
    let (ns, sv) = null_space(&op, KERNEL_THRESHOLD, KERNEL_GAP);
    let dim = ns.ncols();
    let scale = sv.last().copied().unwrap_or(1.0).max(f64::MIN_POSITIVE);
    let gap = sv.get(dim).copied().unwrap_or(f64::INFINITY) / scale;
    // Map (c, w) to initial data (J(0), DJ(0)) = (B₁ c, w).
    let mut data = DMatrix::zeros(2 * m, dim);
    for k in 0..dim {
        let c = ns.view((0, k), (d, 1)).into_owned();
        let w = ns.view((d, k), (m, 1)).into_owned();
        let j0 = geo.tangent.view((0, 0), (m, d)) * c;
        data.view_mut((0, k), (m, 1)).copy_from(&j0);
        data.view_mut((m, k), (m, 1)).copy_from(&w);
    }
    Ok(PJacobiKernel { dimension: dim, initial_data: data, singular_values: sv, gap })
}

fn flow_error(lin: &LinearizedFlow) -> Option<Error> {
    match lin.status {
        flow::FlowStatus::Completed => None,
        flow::FlowStatus::DomainExit { t } => Some(Error::DomainExit { t }),
        flow::FlowStatus::StepFailure { t } => Some(Error::StepFailure { t }),
    }
}

/// The square shooting matrix acting on `(c, w) ∈ R^D × R^m`.
fn shooting_operator(phi: &DMatrix<f64>, geo: &BoundaryGeometry, eta: &DVector<f64>, m: usize) -> DMatrix<f64> {
    let d = geo.tangent.ncols();
    let b1 = geo.tangent.view((0, 0), (m, d)).into_owned();
    let b2 = geo.tangent.view((m, 0), (m, d)).into_owned();
    let pjj = phi.view((0, 0), (m, m)).into_owned();
    let pjd = phi.view((0, m), (m, m)).into_owned();
    let pdj = phi.view((m, 0), (m, m)).into_owned();
    let pdd = phi.view((m, m), (m, m)).into_owned();
    let mut op = DMatrix::zeros(m + d, d + m);
    // J(T) − B₂ c = Φ_JJ B₁ c + Φ_JD w − B₂ c
    op.view_mut((0, 0), (m, d)).copy_from(&(&pjj * &b1 - &b2));
    op.view_mut((0, d), (m, m)).copy_from(&pjd);
    if d > 0 {
        // ḡ((w, DJ(T)), b_a) + (S c)_a with DJ(T) = Φ_DJ B₁ c + Φ_DD w
        let gbar = &geo.metric;
        let g0 = gbar.view((0, 0), (m, m)).into_owned();
        let g1n = gbar.view((m, m), (m, m)).into_owned();
        let s = geo.second_fundamental(eta);
        let wc = b1.transpose() * &g0;
        let dj_c = &pdj * &b1;
        op.view_mut((m, 0), (d, d)).copy_from(&(b2.transpose() * &g1n * dj_c + s));
        op.view_mut((m, d), (d, m)).copy_from(&(wc + b2.transpose() * &g1n * &pdd));
    }
    op
}

/// Verdict of the admissibility check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdmissibilityVerdict {
    Admissible,
    NotAdmissible,
    Undetermined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub compact: bool,
    pub nondegenerate_restriction: bool,
    /// Largest restricted-Gram condition number over the samples.
    pub worst_condition: f64,
    pub transversal_to_diagonal: bool,
    /// Smallest `σ_min/σ_max` of `[B | Δ]` over intersection points with `Δ`.
    pub worst_transversality_margin: f64,
    pub diagonal_intersections: usize,
    /// Estimated lower bound for the auxiliary length of solutions.
    pub length_lower_bound: Option<f64>,
    pub length_bound_estimated: bool,
    pub verdict: AdmissibilityVerdict,
    pub rule: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdmissibilityOptions {
    /// Grid points per parameter axis for the restriction check.
    pub samples_per_axis: usize,
    pub bvp: BvpOptions,
}

impl Default for AdmissibilityOptions {
    fn default() -> Self {
        Self { samples_per_axis: 12, bvp: BvpOptions::default() }
    }
}

/// Checks compactness, restricted nondegeneracy and transversality to the
/// diagonal, and estimates the length lower bound.
pub fn check_admissibility(gec: &Gec, metric: &MetricField, opts: &AdmissibilityOptions) -> Result<AdmissibilityReport> {
    let m = metric.dim();
    gec.validate(m)?;
    let mut report = AdmissibilityReport {
        compact: true,
        nondegenerate_restriction: true,
        worst_condition: 1.0,
        transversal_to_diagonal: true,
        worst_transversality_margin: 1.0,
        diagonal_intersections: 0,
        length_lower_bound: None,
        length_bound_estimated: false,
        verdict: AdmissibilityVerdict::Undetermined,
        rule: String::new(),
    };
    if let Gec::Diagonal { .. } = gec {
        report.compact = metric.domain().is_bounded();
        report.nondegenerate_restriction = false;
        report.worst_condition = f64::INFINITY;
        report.transversal_to_diagonal = false;
        report.worst_transversality_margin = 0.0;
        report.verdict = AdmissibilityVerdict::NotAdmissible;
        report.rule = "diagonal: the doubled metric vanishes identically on its tangent spaces".into();
        return Ok(report);
    }

    let bx = gec.param_box(metric);
    report.compact = bx.iter().all(|(a, b)| a.is_finite() && b.is_finite());

    // Intersections with the diagonal: ψ₁(u) = ψ₂(u).
    let dom = metric.domain();
    let gap = |u: &DVector<f64>| {
        let p = gec.point(u.as_slice());
        DVector::from_vec(dom.displacement(&p.as_slice()[..m], &p.as_slice()[m..]))
    };
    let mut hits: Vec<DVector<f64>> = Vec::new();
    let d = gec.param_dim();
    let periods = gec.param_periods(metric);
    let starts = if d == 0 { vec![DVector::zeros(0)] } else { grid(&bx, 9.min(opts.samples_per_axis).max(3)) };
    let mut min_gap = f64::INFINITY;
    for mut u in starts {
        min_gap = min_gap.min(gap(&u).norm());
        if d == 0 {
            if gap(&u).norm() < 1e-10 {
                hits.push(u);
            }
            continue;
        }
        for _ in 0..60 {
            let r = gap(&u);
            let b = gec.tangent(u.as_slice());
            let jac = b.rows(0, m) - b.rows(m, m);
            let step = linalg::lstsq(&jac, &(-&r), 1e-12);
            u += &step;
            if step.amax() < 1e-14 {
                break;
            }
        }
        wrap_params(&mut u, &periods, &bx);
        let g = gap(&u).norm();
        min_gap = min_gap.min(g);
        if g < 1e-9 && !hits.iter().any(|h| (h - &u).norm() < 1e-6) {
            hits.push(u);
        }
    }
    report.diagonal_intersections = hits.len();

    // Restricted nondegeneracy at a parameter grid and at the intersections.
    let mut samples = if d == 0 { Vec::new() } else { grid(&bx, opts.samples_per_axis) };
    samples.extend(hits.iter().cloned());
    for u in &samples {
        let geo = boundary_geometry_unchecked(gec, metric, u.as_slice());
        report.worst_condition = report.worst_condition.max(geo.condition);
        if !geo.nondegenerate {
            report.nondegenerate_restriction = false;
        }
    }

    for u in &hits {
        let b = gec.tangent(u.as_slice());
        let mut span = DMatrix::zeros(2 * m, b.ncols() + m);
        span.view_mut((0, 0), (2 * m, b.ncols())).copy_from(&b);
        for i in 0..m {
            span[(i, b.ncols() + i)] = 1.0;
            span[(m + i, b.ncols() + i)] = 1.0;
        }
        let sv = singular_values(&span);
        let margin = if sv.len() >= 2 * m && sv[0] > 0.0 { sv[2 * m - 1] / sv[0] } else { 0.0 };
        report.worst_transversality_margin = report.worst_transversality_margin.min(margin);
        if margin < 1e-8 {
            report.transversal_to_diagonal = false;
        }
    }

    if !report.nondegenerate_restriction {
        report.verdict = AdmissibilityVerdict::NotAdmissible;
        report.rule = "restricted doubled metric is degenerate somewhere on the condition".into();
        return Ok(report);
    }
    if !report.compact {
        report.verdict = AdmissibilityVerdict::NotAdmissible;
        report.rule = "condition is not compact".into();
        return Ok(report);
    }
    if hits.is_empty() {
        // Minimal auxiliary distance between the two endpoints over 𝒫.
        let a = refine_min_gap(gec, metric, &bx, min_gap);
        report.length_lower_bound = Some(a);
        report.length_bound_estimated = d > 0;
        report.verdict = AdmissibilityVerdict::Admissible;
        report.rule = "compact, nondegenerate restriction, disjoint from the diagonal".into();
        return Ok(report);
    }
    if !report.transversal_to_diagonal {
        report.verdict = AdmissibilityVerdict::Undetermined;
        report.rule = "intersection with the diagonal is not transversal".into();
        return Ok(report);
    }
    report.length_lower_bound = estimate_short_solutions(gec, metric, &hits, &opts.bvp).map(|l| 0.9 * l);
    report.length_bound_estimated = true;
    report.verdict = AdmissibilityVerdict::Admissible;
    report.rule = "compact, nondegenerate restriction, transversal to the diagonal".into();
    Ok(report)
}

/// Local minimization of the chart distance between the two endpoints.
fn refine_min_gap(gec: &Gec, metric: &MetricField, bx: &[(f64, f64)], coarse: f64) -> f64 {
    let m = metric.dim();
    let d = gec.param_dim();
    let dom = metric.domain();
    let dist = |u: &DVector<f64>| {
        let p = gec.point(u.as_slice());
        DVector::from_vec(dom.displacement(&p.as_slice()[..m], &p.as_slice()[m..])).norm()
    };
    if d == 0 {
        return dist(&DVector::zeros(0));
    }
    let mut best = coarse;
    for mut u in grid(bx, 9) {
        // Gradient descent with backtracking on the squared distance.
        let mut f = dist(&u);
        let mut step = 0.1;
        for _ in 0..200 {
            let h = 1e-7;
            let grad = DVector::from_iterator(
                d,
                (0..d).map(|a| {
                    let mut up = u.clone();
                    up[a] += h;
                    let mut um = u.clone();
                    um[a] -= h;
                    (dist(&up) - dist(&um)) / (2.0 * h)
                }),
            );
            if grad.norm() < 1e-12 {
                break;
            }
            let trial = &u - &grad * step;
            let ft = dist(&trial);
            if ft < f {
                u = trial;
                f = ft;
                step *= 1.5;
            } else {
                step *= 0.5;
                if step < 1e-12 {
                    break;
                }
            }
        }
        best = best.min(f);
    }
    best
}

/// Shortest nonconstant solution found from seeds around diagonal
/// intersection points.
fn estimate_short_solutions(gec: &Gec, metric: &MetricField, hits: &[DVector<f64>], opts: &BvpOptions) -> Option<f64> {
    let m = metric.dim();
    let d = gec.param_dim();
    let aux = AuxiliaryRiemannian::euclidean(m);
    let mut guesses = Vec::new();
    for h in hits {
        for k in 0..(2 * d.max(1)) {
            let mut u = h.clone();
            if d > 0 {
                u[k % d] += if k < d { 0.3 } else { -0.3 };
            }
            let p = gec.point(u.as_slice());
            let v: Vec<f64> = (0..m).map(|i| p[m + i] - p[i]).collect();
            guesses.push(BvpGuess { params: u.iter().copied().collect(), velocity: v, duration: 1.0 });
        }
    }
    let sols = solve_multistart(metric, gec, &guesses, opts);
    sols.iter()
        .map(|s| flow::riem_length_energy(&s.path, &aux).length_r)
        .filter(|&l| l > 1e-6)
        .fold(None, |acc: Option<f64>, l| Some(acc.map_or(l, |a| a.min(l))))
}

/// Focality verdict for `P × Q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FocalityReport {
    pub focal: bool,
    /// `(kernel dimension, auxiliary length)` per solution found.
    pub solutions: Vec<(usize, f64)>,
}

/// Solves from the given guesses and reports whether some solution carries
/// a nontrivial boundary Jacobi field.
pub fn focality_report(metric: &MetricField, gec: &Gec, guesses: &[BvpGuess], opts: &BvpOptions) -> Result<FocalityReport> {
    if !matches!(gec, Gec::Product { .. } | Gec::FixedPoints { .. }) {
        return Err(Error::invalid("focality is defined for product conditions"));
    }
    let aux = AuxiliaryRiemannian::euclidean(metric.dim());
    let sols = solve_multistart(metric, gec, guesses, opts);
    if sols.is_empty() {
        return Err(Error::NewtonDiverged { iterations: opts.max_iter, residual: f64::NAN });
    }
    let mut out = Vec::new();
    for s in &sols {
        let k = pjacobi_shooting(s, gec, &opts.ode)?;
        out.push((k.dimension, flow::riem_length_energy(&s.path, &aux).length_r));
    }
    Ok(FocalityReport { focal: out.iter().any(|(k, _)| *k > 0), solutions: out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtins;
    use std::f64::consts::{FRAC_PI_2, PI, TAU};

    fn circle_to_point(q: [f64; 2]) -> Gec {
        Gec::Product {
            first: Arc::new(Circle { center: [0.0, 0.0], radius: 1.0 }),
            second: Arc::new(PointImmersion(q.to_vec())),
        }
    }

    #[test]
    fn fixed_points_geometry_is_trivial() {
        let e = builtins::euclidean(2);
        let gec = Gec::FixedPoints { p: vec![0.0, 0.0], q: vec![1.0, 0.0] };
        let geo = boundary_geometry(&gec, &e, &[]).unwrap();
        assert_eq!(geo.tangent.ncols(), 0);
        assert_eq!(geo.second_fundamental(&DVector::zeros(4)).nrows(), 0);
    }

    #[test]
    fn circle_second_fundamental_form() {
        // Oracle: a circle of radius r has curvature 1/r, with the curvature
        // vector pointing inward; unit tangent at angle u is (−sin u, cos u).
        let e = builtins::euclidean(2);
        for &r in &[0.5, 1.0, 3.0] {
            let gec = Gec::Product {
                first: Arc::new(Circle { center: [0.2, -0.1], radius: r }),
                second: Arc::new(PointImmersion(vec![5.0, 5.0])),
            };
            let u = 0.7;
            let geo = boundary_geometry(&gec, &e, &[u]).unwrap();
            let outward = DVector::from_vec(vec![u.cos(), u.sin(), 0.0, 0.0]);
            let s = geo.second_fundamental(&outward)[(0, 0)] / (r * r);
            assert!((s + 1.0 / r).abs() < 1e-12, "r={r} s={s}");
        }
    }

    #[test]
    fn diagonal_restriction_is_degenerate() {
        let e = builtins::euclidean(2);
        let gec = Gec::Diagonal { dim: 2 };
        assert!(matches!(boundary_geometry(&gec, &e, &[0.3, 0.4]), Err(Error::DegenerateRestriction { .. })));
    }

    #[test]
    fn straight_segment_between_fixed_points() {
        let e = builtins::euclidean(2);
        let gec = Gec::FixedPoints { p: vec![0.0, 0.0], q: vec![2.0, 1.0] };
        let guess = BvpGuess { params: vec![], velocity: vec![0.5, 0.0], duration: 1.0 };
        let sol = solve_gp_geodesic(&e, &gec, &guess, &BvpOptions::default()).unwrap();
        assert!((sol.path.initial_velocity() - DVector::from_vec(vec![2.0, 1.0])).amax() < 1e-9);
        let k = pjacobi_shooting(&sol, &gec, &OdeOptions::default()).unwrap();
        assert_eq!(k.dimension, 0);
    }

    #[test]
    fn circle_to_outside_point_is_radial() {
        let e = builtins::euclidean(2);
        let gec = circle_to_point([3.0, 0.0]);
        let guess = BvpGuess { params: vec![0.3], velocity: vec![1.5, -0.4], duration: 1.0 };
        let sol = solve_gp_geodesic(&e, &gec, &guess, &BvpOptions::default()).unwrap();
        assert!(sol.params[0].abs() < 1e-9);
        assert!((sol.path.initial_velocity() - DVector::from_vec(vec![2.0, 0.0])).amax() < 1e-8);
        assert!(sol.residual.orthogonality <= 1e-9 && sol.residual.endpoint <= 1e-9);
        assert_eq!(pjacobi_shooting(&sol, &gec, &OdeOptions::default()).unwrap().dimension, 0);
    }

    #[test]
    fn focality_examples() {
        let e = builtins::euclidean(2);
        let opts = BvpOptions::default();
        let centre = circle_to_point([0.0, 0.0]);
        let guess = BvpGuess { params: vec![0.2], velocity: vec![-1.0, 0.0], duration: 1.0 };
        assert!(focality_report(&e, &centre, &[guess], &opts).unwrap().focal);
        let outside = circle_to_point([3.0, 0.0]);
        let guess = BvpGuess { params: vec![0.2], velocity: vec![2.0, 0.0], duration: 1.0 };
        assert!(!focality_report(&e, &outside, &[guess], &opts).unwrap().focal);
        let s2 = builtins::round_sphere(1.0);
        let antipodal = Gec::FixedPoints { p: vec![FRAC_PI_2, 0.0], q: vec![FRAC_PI_2, PI] };
        let guess = BvpGuess { params: vec![], velocity: vec![0.0, 3.0], duration: 1.0 };
        assert!(focality_report(&s2, &antipodal, &[guess], &opts).unwrap().focal);
    }

    #[test]
    fn pjacobi_residual_examples() {
        let s2 = builtins::round_sphere(1.0);
        let gec = Gec::FixedPoints { p: vec![FRAC_PI_2, 0.0], q: vec![FRAC_PI_2, PI] };
        let guess = BvpGuess { params: vec![], velocity: vec![0.0, 3.0], duration: 1.0 };
        let sol = solve_gp_geodesic(&s2, &gec, &guess, &BvpOptions::default()).unwrap();
        let geo = sol.geometry(&gec);
        let eta = sol.endpoint_velocities();
        let z = DVector::zeros(2);
        assert_eq!(pjacobi_boundary_residual(&geo, &eta, (&z, &z, &z, &z)).norm(), 0.0);
        // J = sin(πt)·N with N = −∂_θ along the equator; t ∈ [0, 1].
        let n0 = DVector::from_vec(vec![-PI, 0.0]);
        let n1 = DVector::from_vec(vec![PI, 0.0]);
        let r = pjacobi_boundary_residual(&geo, &eta, (&z, &n0, &z, &n1));
        assert!(r.norm() <= 1e-12);
        // The tangent field is never admissible for a nonconstant solution.
        let v0 = sol.path.initial_velocity();
        let v1 = sol.path.velocity(1.0);
        let r = pjacobi_boundary_residual(&geo, &eta, (&v0, &z, &v1, &z));
        assert!(r.membership > 1.0);
    }

    #[test]
    fn transpose_reverses_solutions() {
        let e = builtins::euclidean(2);
        let gec = circle_to_point([3.0, 0.5]);
        let sol = solve_gp_geodesic(&e, &gec, &BvpGuess { params: vec![0.1], velocity: vec![2.0, 0.4], duration: 1.0 }, &BvpOptions::default()).unwrap();
        let t = gec.transpose();
        let p1 = sol.path.position(1.0);
        let rev = solve_gp_geodesic(
            &e,
            &t,
            &BvpGuess { params: vec![sol.params[0]], velocity: (-sol.path.velocity(1.0)).iter().copied().collect(), duration: 1.0 },
            &BvpOptions::default(),
        )
        .unwrap();
        assert!((rev.path.initial_position() - p1).amax() < 1e-9);
        assert!((rev.path.position(1.0) - sol.path.initial_position()).amax() < 1e-9);
        let k1 = pjacobi_shooting(&sol, &gec, &OdeOptions::default()).unwrap().dimension;
        let k2 = pjacobi_shooting(&rev, &t, &OdeOptions::default()).unwrap().dimension;
        assert_eq!(k1, k2);
    }

    #[test]
    fn football_equator_as_closed_solution() {
        let fb = builtins::football();
        let gec = Gec::Diagonal { dim: 2 };
        let guess = BvpGuess { params: vec![0.0, 0.05], velocity: vec![1.02, 0.0], duration: TAU };
        let sol = solve_gp_geodesic(&fb, &gec, &guess, &BvpOptions::default()).unwrap();
        assert!(sol.params[1].abs() < 1e-7, "{:?}", sol.params);
        let k = pjacobi_shooting(&sol, &gec, &OdeOptions::default()).unwrap();
        assert_eq!(k.dimension, 1);
    }

    #[test]
    fn admissibility_examples() {
        let e = builtins::euclidean(2);
        let opts = AdmissibilityOptions::default();
        let fixed = Gec::FixedPoints { p: vec![0.0, 0.0], q: vec![3.0, 4.0] };
        let r = check_admissibility(&fixed, &e, &opts).unwrap();
        assert_eq!(r.verdict, AdmissibilityVerdict::Admissible);
        assert!((r.length_lower_bound.unwrap() - 5.0).abs() < 1e-12);
        let r = check_admissibility(&Gec::Diagonal { dim: 2 }, &e, &opts).unwrap();
        assert_eq!(r.verdict, AdmissibilityVerdict::NotAdmissible);
        let circles = Gec::Product {
            first: Arc::new(Circle { center: [0.0, 0.0], radius: 1.0 }),
            second: Arc::new(Circle { center: [1.0, 0.0], radius: 1.0 }),
        };
        let r = check_admissibility(&circles, &e, &opts).unwrap();
        assert_eq!(r.verdict, AdmissibilityVerdict::Admissible, "{r:?}");
        assert_eq!(r.diagonal_intersections, 2);
        let tangent = Gec::Parametrized {
            map: Arc::new(FnImmersion::new(1, 4, vec![(-1.0, 1.0)], |u| DVector::from_vec(vec![u[0], 0.0, u[0], u[0] * u[0]]))),
        };
        let r = check_admissibility(&tangent, &e, &opts).unwrap();
        assert_eq!(r.verdict, AdmissibilityVerdict::NotAdmissible);
        assert!(!r.nondegenerate_restriction);
    }
}

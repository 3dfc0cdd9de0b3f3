//! Jacobi fields, conjugate points, monodromy of closed geodesics, the first
//! variation of the energy and the discretized index form.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{self, golden_min, FlowStatus, GeodesicPath, LinearizedFlow};
use crate::gec::{self, BoundaryGeometry, Gec, KERNEL_GAP, KERNEL_THRESHOLD};
use crate::linalg::{self, gauss_legendre, gauss_lobatto_nodes, singular_values, sorted_sym_eigen};
use crate::metric::{AuxiliaryRiemannian, MetricField};
use crate::ode::OdeOptions;

/// Polynomial degree of the index-form elements.
pub const ELEMENT_DEGREE: usize = 4;
/// Relative `σ_min/σ_max` below which a local minimum of the Jacobi block is
/// examined as a conjugate point without a sign change of the determinant.
const CONJUGATE_CANDIDATE: f64 = 1e-3;

fn flow_status_error(status: FlowStatus) -> Result<()> {
    match status {
        FlowStatus::Completed => Ok(()),
        FlowStatus::DomainExit { t } => Err(Error::DomainExit { t }),
        FlowStatus::StepFailure { t } => Err(Error::StepFailure { t }),
    }
}

/// Fundamental solution along `path` for the given initial covariant data.
fn fundamental(path: &GeodesicPath, init: &DMatrix<f64>, opts: &OdeOptions) -> Result<LinearizedFlow> {
    let lin = flow::integrate_linearized(
        path.metric(),
        path.initial_position().as_slice(),
        path.initial_velocity().as_slice(),
        path.t_end(),
        init,
        opts,
    )?;
    flow_status_error(lin.status)?;
    Ok(lin)
}

/// A Jacobi field along a geodesic.
#[derive(Debug, Clone)]
pub struct JacobiSolution {
    pub path: GeodesicPath,
    pub initial_value: DVector<f64>,
    pub initial_derivative: DVector<f64>,
    flow: LinearizedFlow,
}

impl JacobiSolution {
    pub fn t_end(&self) -> f64 {
        self.path.t_end()
    }

    /// Integration nodes.
    pub fn times(&self) -> &[f64] {
        self.flow.times()
    }

    /// `(J(t), DJ(t))`.
    pub fn eval(&self, t: f64) -> (DVector<f64>, DVector<f64>) {
        let m = self.path.dim();
        let y = self.flow.jacobi(t);
        (y.column(0).rows(0, m).into_owned(), y.column(0).rows(m, m).into_owned())
    }

    /// `(J, DJ)` at every integration node.
    pub fn nodes(&self) -> Vec<(f64, DVector<f64>, DVector<f64>)> {
        self.times().iter().map(|&t| {
            let (j, dj) = self.eval(t);
            (t, j, dj)
        }).collect()
    }

    /// Largest `|D²J − R(γ̇, J)γ̇|` at step midpoints, with the outer
    /// covariant derivative taken by central differences of the dense output.
    pub fn residual(&self) -> f64 {
        let metric = self.path.metric();
        let mut worst: f64 = 0.0;
        for w in self.times().windows(2) {
            let t = 0.5 * (w[0] + w[1]);
            let d = 1e-3 * (w[1] - w[0]);
            let (_, djp) = self.eval(t + d);
            let (_, djm) = self.eval(t - d);
            let (j, dj) = self.eval(t);
            let (x, v) = self.flow.base(t);
            let chr = metric.christoffel_unchecked(x.as_slice());
            let ddj = (djp - djm) / (2.0 * d) + chr.apply(&v, &dj);
            let curv = metric.curvature_unchecked(x.as_slice());
            let rhs = curv.apply(&v, &j, &v);
            worst = worst.max((ddj - rhs).amax());
        }
        worst
    }
}

/// Solves the Jacobi equation `D²J = R(γ̇, J)γ̇` with `J(0) = j0`, `DJ(0) = dj0`.
pub fn propagate_jacobi(path: &GeodesicPath, j0: &DVector<f64>, dj0: &DVector<f64>, opts: &OdeOptions) -> Result<JacobiSolution> {
    let m = path.dim();
    if j0.len() != m || dj0.len() != m {
        return Err(Error::DimensionMismatch { expected: m, found: j0.len().min(dj0.len()) });
    }
    let mut init = DMatrix::zeros(2 * m, 1);
    init.view_mut((0, 0), (m, 1)).copy_from(j0);
    init.view_mut((m, 0), (m, 1)).copy_from(dj0);
    let flow = fundamental(path, &init, opts)?;
    Ok(JacobiSolution { path: path.clone(), initial_value: j0.clone(), initial_derivative: dj0.clone(), flow })
}

/// A conjugate instant and its multiplicity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConjugatePoint {
    pub t: f64,
    pub multiplicity: usize,
}

/// Instants `t ∈ (0, T]` at which `γ(t)` is conjugate to `γ(0)`: singular
/// instants of the Jacobi block `A(t)` of the fundamental solution with
/// `J(0) = 0`.
pub fn conjugate_points(path: &GeodesicPath, opts: &OdeOptions) -> Result<Vec<ConjugatePoint>> {
    let m = path.dim();
    let t_end = path.t_end();
    if !(t_end > 0.0) {
        return Ok(Vec::new());
    }
    let mut init = DMatrix::zeros(2 * m, m);
    for i in 0..m {
        init[(m + i, i)] = 1.0;
    }
    let lin = fundamental(path, &init, opts)?;
    let block = |t: f64| lin.jacobi(t).view((0, 0), (m, m)).into_owned();
    let det = |t: f64| block(t).determinant();
    let ratio = |t: f64| {
        let sv = singular_values(&block(t));
        if sv[0] > 0.0 { sv[m - 1] / sv[0] } else { 0.0 }
    };

    // Sample on a grid fine enough to separate conjugate instants, merged
    // with the integrator nodes.
    let samples = 400usize.max(lin.times().len());
    let t0 = t_end * 1e-4;
    let ts: Vec<f64> = (0..=samples).map(|k| t0 + (t_end - t0) * k as f64 / samples as f64).collect();
    let dets: Vec<f64> = ts.iter().map(|&t| det(t)).collect();
    let ratios: Vec<f64> = ts.iter().map(|&t| ratio(t)).collect();

    let mut found: Vec<f64> = Vec::new();
    for k in 0..samples {
        let (a, b) = (ts[k], ts[k + 1]);
        if dets[k] == 0.0 {
            found.push(a);
        } else if dets[k].signum() != dets[k + 1].signum() && dets[k + 1] != 0.0 {
            let (mut lo, mut hi) = (a, b);
            let mut flo = dets[k];
            while hi - lo > 1e-14 * t_end.max(1.0) {
                let mid = 0.5 * (lo + hi);
                let fm = det(mid);
                if fm == 0.0 {
                    lo = mid;
                    hi = mid;
                    break;
                }
                if fm.signum() == flo.signum() {
                    lo = mid;
                    flo = fm;
                } else {
                    hi = mid;
                }
            }
            found.push(0.5 * (lo + hi));
        }
    }
    // Even multiplicities: local minima of the normalized smallest singular value.
    for k in 1..samples {
        if ratios[k] <= ratios[k - 1] && ratios[k] <= ratios[k + 1] && ratios[k] < CONJUGATE_CANDIDATE {
            let (t, r) = golden_min(&ratio, ts[k - 1], ts[k + 1], 1e-12);
            if r <= KERNEL_THRESHOLD {
                found.push(t);
            }
        }
    }
    if ratios[samples] < CONJUGATE_CANDIDATE && ratio(t_end) <= KERNEL_THRESHOLD {
        found.push(t_end);
    }
    found.sort_by(|a, b| a.total_cmp(b));
    let mut out: Vec<ConjugatePoint> = Vec::new();
    for t in found {
        if out.last().map_or(false, |p| (t - p.t).abs() < 1e-6) {
            continue;
        }
        let sv = singular_values(&block(t));
        let multiplicity = sv.iter().filter(|&&s| s <= KERNEL_THRESHOLD * sv[0]).count();
        if multiplicity > 0 {
            out.push(ConjugatePoint { t, multiplicity });
        }
    }
    Ok(out)
}

/// Linearized return map of a closed geodesic.
#[derive(Debug, Clone)]
pub struct MonodromyMap {
    pub period: f64,
    /// `(J(0), DJ(0)) ↦ (J(ω), DJ(ω))` in a `g_R`-orthonormal basis at `γ(0)`.
    pub matrix: DMatrix<f64>,
    /// `dim ker(Φ − I)`.
    pub fixed_dimension: usize,
    /// Singular values of `Φ − I`, ascending.
    pub singular_values: Vec<f64>,
    /// Initial chart data `(J(0), DJ(0))` of the periodic Jacobi fields.
    pub fixed_space: DMatrix<f64>,
    /// `‖Φ(γ̇, 0) − (γ̇, 0)‖` relative to `‖γ̇‖`.
    pub tangent_defect: f64,
}

/// Monodromy over the full interval of a closed geodesic.
pub fn monodromy(path: &GeodesicPath, aux: &AuxiliaryRiemannian, opts: &OdeOptions) -> Result<MonodromyMap> {
    let m = path.dim();
    let omega = path.t_end();
    let x0 = path.initial_position();
    let v0 = path.initial_velocity();
    let scale = 1.0 + v0.amax();
    let close = DVector::from_vec(path.metric().domain().displacement(path.position(omega).as_slice(), x0.as_slice()));
    if !path.is_complete() || close.amax().max((path.velocity(omega) - &v0).amax()) > 1e-6 * scale {
        return Err(Error::NotPeriodic);
    }
    let lin = fundamental(path, &DMatrix::identity(2 * m, 2 * m), opts)?;
    let phi_chart = lin.jacobi(omega);

    // Orthonormal frame E with Eᵀ g_R E = I; coordinates c ↦ E c.
    let gr = aux.eval(x0.as_slice());
    let chol = Cholesky::new(gr).ok_or_else(|| Error::invalid("auxiliary metric is not positive definite"))?;
    let e = chol.l().transpose().try_inverse().ok_or_else(|| Error::invalid("singular auxiliary metric"))?;
    let e_inv = chol.l().transpose();
    let mut big_e = DMatrix::zeros(2 * m, 2 * m);
    let mut big_e_inv = DMatrix::zeros(2 * m, 2 * m);
    for blk in 0..2 {
        big_e.view_mut((blk * m, blk * m), (m, m)).copy_from(&e);
        big_e_inv.view_mut((blk * m, blk * m), (m, m)).copy_from(&e_inv);
    }
    let matrix = &big_e_inv * &phi_chart * &big_e;

    let shifted = &matrix - DMatrix::identity(2 * m, 2 * m);
    let phi_scale = singular_values(&matrix)[0].max(1.0);
    let (kernel, sv) = gec_null_space(&shifted, phi_scale);
    let fixed_space = &big_e * kernel;

    let mut tan = DVector::zeros(2 * m);
    tan.rows_mut(0, m).copy_from(&v0);
    let tangent_defect = (&phi_chart * &tan - &tan).norm() / v0.norm().max(f64::MIN_POSITIVE);
    Ok(MonodromyMap { period: omega, matrix, fixed_dimension: fixed_space.ncols(), singular_values: sv, fixed_space, tangent_defect })
}

/// Null space of `a` with the kernel threshold relative to `scale`.
fn gec_null_space(a: &DMatrix<f64>, scale: f64) -> (DMatrix<f64>, Vec<f64>) {
    let n = a.ncols();
    let ata = a.transpose() * a;
    let (vals, vecs) = sorted_sym_eigen(&ata);
    let sv: Vec<f64> = vals.iter().map(|&l| l.max(0.0).sqrt()).collect();
    let k = linalg::kernel_count(&sv, scale, KERNEL_THRESHOLD, KERNEL_GAP).min(n);
    (vecs.columns(0, k).into_owned(), sv)
}

/// A curve `[0, T] → M` in chart coordinates.
pub trait Curve: Sync {
    fn metric(&self) -> &MetricField;
    fn t_end(&self) -> f64;
    fn position(&self, t: f64) -> DVector<f64>;
    fn velocity(&self, t: f64) -> DVector<f64>;
    /// Instants where the curve may fail to be smooth.
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }
}

impl Curve for GeodesicPath {
    fn metric(&self) -> &MetricField {
        GeodesicPath::metric(self)
    }
    fn t_end(&self) -> f64 {
        GeodesicPath::t_end(self)
    }
    fn position(&self, t: f64) -> DVector<f64> {
        GeodesicPath::position(self, t)
    }
    fn velocity(&self, t: f64) -> DVector<f64> {
        GeodesicPath::velocity(self, t)
    }
    fn breakpoints(&self) -> Vec<f64> {
        self.times().to_vec()
    }
}

type CurveFn = Arc<dyn Fn(f64) -> (DVector<f64>, DVector<f64>) + Send + Sync>;

/// A curve given by a closure returning position and velocity.
#[derive(Clone)]
pub struct SampledCurve {
    metric: MetricField,
    t_end: f64,
    f: CurveFn,
    breaks: Vec<f64>,
}

impl SampledCurve {
    pub fn new<F>(metric: &MetricField, t_end: f64, f: F) -> Self
    where
        F: Fn(f64) -> (DVector<f64>, DVector<f64>) + Send + Sync + 'static,
    {
        Self { metric: metric.clone(), t_end, f: Arc::new(f), breaks: Vec::new() }
    }

    pub fn with_breakpoints(mut self, breaks: Vec<f64>) -> Self {
        self.breaks = breaks;
        self
    }
}

impl Curve for SampledCurve {
    fn metric(&self) -> &MetricField {
        &self.metric
    }
    fn t_end(&self) -> f64 {
        self.t_end
    }
    fn position(&self, t: f64) -> DVector<f64> {
        (self.f)(t).0
    }
    fn velocity(&self, t: f64) -> DVector<f64> {
        (self.f)(t).1
    }
    fn breakpoints(&self) -> Vec<f64> {
        self.breaks.clone()
    }
}

/// A vector field along a curve, in chart components.
pub trait FieldAlong: Sync {
    fn value(&self, t: f64) -> DVector<f64>;
    /// Ordinary `t`-derivative of the components.
    fn derivative(&self, t: f64) -> DVector<f64>;
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }
}

/// Continuous piecewise-linear field through node values.
#[derive(Debug, Clone)]
pub struct PiecewiseLinearField {
    pub times: Vec<f64>,
    pub values: Vec<DVector<f64>>,
}

impl PiecewiseLinearField {
    pub fn new(times: Vec<f64>, values: Vec<DVector<f64>>) -> Result<Self> {
        if times.len() < 2 || times.len() != values.len() || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("piecewise-linear field needs at least two increasing nodes"));
        }
        Ok(Self { times, values })
    }

    /// Hat function `e · φ_k` on a uniform grid of `n + 1` nodes over `[0, T]`.
    pub fn hat(t_end: f64, n: usize, k: usize, direction: &DVector<f64>) -> Self {
        let times: Vec<f64> = (0..=n).map(|i| t_end * i as f64 / n as f64).collect();
        let values = (0..=n).map(|i| if i == k { direction.clone() } else { DVector::zeros(direction.len()) }).collect();
        Self { times, values }
    }

    fn segment(&self, t: f64) -> usize {
        let n = self.times.len();
        match self.times.binary_search_by(|s| s.total_cmp(&t)) {
            Ok(i) => i.min(n - 2),
            Err(i) => i.clamp(1, n - 1) - 1,
        }
    }
}

impl FieldAlong for PiecewiseLinearField {
    fn value(&self, t: f64) -> DVector<f64> {
        let i = self.segment(t);
        let (a, b) = (self.times[i], self.times[i + 1]);
        let s = (t - a) / (b - a);
        &self.values[i] * (1.0 - s) + &self.values[i + 1] * s
    }
    fn derivative(&self, t: f64) -> DVector<f64> {
        let i = self.segment(t);
        (&self.values[i + 1] - &self.values[i]) / (self.times[i + 1] - self.times[i])
    }
    fn breakpoints(&self) -> Vec<f64> {
        self.times.clone()
    }
}

type FieldFn = Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>;

/// Field given by closures for its components and their derivative.
#[derive(Clone)]
pub struct FnField {
    value: FieldFn,
    derivative: FieldFn,
}

impl FnField {
    pub fn new<F, G>(value: F, derivative: G) -> Self
    where
        F: Fn(f64) -> DVector<f64> + Send + Sync + 'static,
        G: Fn(f64) -> DVector<f64> + Send + Sync + 'static,
    {
        Self { value: Arc::new(value), derivative: Arc::new(derivative) }
    }
}

impl FieldAlong for FnField {
    fn value(&self, t: f64) -> DVector<f64> {
        (self.value)(t)
    }
    fn derivative(&self, t: f64) -> DVector<f64> {
        (self.derivative)(t)
    }
}

/// Composite Gauss–Legendre rule on `[0, T]` respecting breakpoints.
fn quadrature(t_end: f64, breaks: &[f64], min_pieces: usize) -> Vec<(f64, f64)> {
    let (nodes, weights) = gauss_legendre(10);
    let mut cuts: Vec<f64> = (0..=min_pieces).map(|k| t_end * k as f64 / min_pieces as f64).collect();
    cuts.extend(breaks.iter().copied().filter(|&b| b > 0.0 && b < t_end));
    cuts.sort_by(|a, b| a.total_cmp(b));
    cuts.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * t_end.max(1.0));
    let mut out = Vec::new();
    for w in cuts.windows(2) {
        let h = w[1] - w[0];
        for (s, wt) in nodes.iter().zip(&weights) {
            out.push((w[0] + s * h, wt * h));
        }
    }
    out
}

/// `g`-energy `½ ∫ g(ċ, ċ) dt` of a curve.
pub fn curve_energy(curve: &dyn Curve) -> f64 {
    quadrature(curve.t_end(), &curve.breakpoints(), 64)
        .into_iter()
        .map(|(t, w)| {
            let v = curve.velocity(t);
            0.5 * w * curve.metric().inner(curve.position(t).as_slice(), &v, &v)
        })
        .sum()
}

/// Endpoint pair `(c(0), c(T))` of a curve.
fn endpoint_pair(curve: &dyn Curve) -> DVector<f64> {
    let a = curve.position(0.0);
    let b = curve.position(curve.t_end());
    DVector::from_iterator(a.len() * 2, a.iter().chain(b.iter()).copied())
}

/// Locates the endpoints of `curve` on the condition, failing when they are
/// off it by more than `tol`.
fn endpoint_params(curve: &dyn Curve, gec: &Gec, tol: f64) -> Result<DVector<f64>> {
    let pair = endpoint_pair(curve);
    let (u, r) = gec.locate(curve.metric(), &pair, None)?;
    if r > tol * (1.0 + pair.amax()) {
        return Err(Error::ConstraintViolated { residual: r });
    }
    Ok(u)
}

/// `dE_g(c)[v] = ∫ g(ċ, D_t v) dt` for a field `v` whose endpoint pair is
/// tangent to the condition.
pub fn first_variation(curve: &dyn Curve, gec: &Gec, field: &dyn FieldAlong) -> Result<f64> {
    let metric = curve.metric();
    gec.validate(metric.dim())?;
    let u = endpoint_params(curve, gec, 1e-7)?;
    let b = gec.tangent(u.as_slice());
    let v0 = field.value(0.0);
    let v1 = field.value(curve.t_end());
    let vbar = DVector::from_iterator(v0.len() * 2, v0.iter().chain(v1.iter()).copied());
    let coeff = if b.ncols() > 0 { linalg::lstsq(&b, &vbar, 1e-12) } else { DVector::zeros(0) };
    let off = (&vbar - &b * coeff).norm();
    if off > 1e-8 * (1.0 + vbar.norm()) {
        return Err(Error::ConstraintViolated { residual: off });
    }
    let mut breaks = curve.breakpoints();
    breaks.extend(field.breakpoints());
    Ok(quadrature(curve.t_end(), &breaks, 64)
        .into_iter()
        .map(|(t, w)| {
            let x = curve.position(t);
            let c = curve.velocity(t);
            let chr = metric.christoffel_unchecked(x.as_slice());
            let dv = field.derivative(t) + chr.apply(&c, &field.value(t));
            w * metric.inner(x.as_slice(), &c, &dv)
        })
        .sum())
}

/// Discretized second variation of the energy at a `(g, 𝒫)`-geodesic.
///
/// Variation fields are continuous piecewise polynomials of degree
/// [`ELEMENT_DEGREE`] on `n_elements` equal elements, in chart components,
/// with endpoint values `(v(0), v(T)) = B c` tangent to the condition.
/// Unknowns are the interior node values followed by `c`.
#[derive(Debug, Clone)]
pub struct IndexFormOperator {
    pub path: GeodesicPath,
    pub gec: Gec,
    /// Parameters of the endpoint pair on the condition.
    pub params: DVector<f64>,
    pub n_elements: usize,
    /// Times of the global nodes.
    pub node_times: Vec<f64>,
    /// Bilinear form in the unknowns.
    pub matrix: DMatrix<f64>,
    /// Inner product `v(0)·w(0) + ∫ v'·w' dt` in the unknowns.
    pub mass: DMatrix<f64>,
    /// Generalized eigenvalues, ascending.
    pub eigenvalues: Vec<f64>,
    /// Mass-orthonormal eigenvectors (columns).
    pub eigenvectors: DMatrix<f64>,
    pub kernel_dimension: usize,
    /// Number of negative eigenvalues beyond the kernel threshold.
    pub morse_index: usize,
    /// `|λ|` of the smallest eigenvalue outside the kernel relative to the largest.
    pub gap: f64,
    /// Map from unknowns to node values (`(n_nodes · m) × n_unknowns`).
    pub expansion: DMatrix<f64>,
}

impl IndexFormOperator {
    pub fn dim(&self) -> usize {
        self.path.dim()
    }

    /// Node values of the field with unknowns `z`, one row per node.
    pub fn node_values(&self, z: &DVector<f64>) -> Vec<DVector<f64>> {
        let m = self.dim();
        let full = &self.expansion * z;
        (0..self.node_times.len()).map(|k| full.rows(k * m, m).into_owned()).collect()
    }

    /// Node values of a basis of the kernel.
    pub fn kernel_fields(&self) -> Vec<Vec<DVector<f64>>> {
        (0..self.kernel_dimension).map(|k| self.node_values(&self.eigenvectors.column(self.kernel_index(k)).into_owned())).collect()
    }

    /// The lowest `n` eigenvalues.
    pub fn spectrum_head(&self, n: usize) -> Vec<f64> {
        self.eigenvalues.iter().take(n).copied().collect()
    }

    fn kernel_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.eigenvalues.len()).collect();
        idx.sort_by(|&a, &b| self.eigenvalues[a].abs().total_cmp(&self.eigenvalues[b].abs()));
        idx
    }

    fn kernel_index(&self, k: usize) -> usize {
        self.kernel_order()[k]
    }
}

/// Lagrange basis on the reference nodes: values and derivatives at `s`.
fn lagrange(nodes: &[f64], s: f64) -> (Vec<f64>, Vec<f64>) {
    let n = nodes.len();
    let mut val = vec![0.0; n];
    let mut der = vec![0.0; n];
    for i in 0..n {
        let mut p = 1.0;
        for j in 0..n {
            if j != i {
                p *= (s - nodes[j]) / (nodes[i] - nodes[j]);
            }
        }
        val[i] = p;
        let mut d = 0.0;
        for k in 0..n {
            if k == i {
                continue;
            }
            let mut q = 1.0 / (nodes[i] - nodes[k]);
            for j in 0..n {
                if j != i && j != k {
                    q *= (s - nodes[j]) / (nodes[i] - nodes[j]);
                }
            }
            d += q;
        }
        der[i] = d;
    }
    (val, der)
}

/// Boundary data shared by the index form and its refinement.
pub(crate) fn critical_geometry(path: &GeodesicPath, gec: &Gec) -> Result<(DVector<f64>, BoundaryGeometry, DVector<f64>)> {
    let metric = path.metric();
    let m = metric.dim();
    gec.validate(m)?;
    path.clone().require_complete()?;
    let u = endpoint_params(path, gec, 1e-6).map_err(|e| match e {
        Error::ConstraintViolated { residual } => Error::NotCritical { residual },
        other => other,
    })?;
    let geo = gec::boundary_geometry_unchecked(gec, metric, u.as_slice());
    let mut eta = DVector::zeros(2 * m);
    eta.rows_mut(0, m).copy_from(&path.initial_velocity());
    eta.rows_mut(m, m).copy_from(&path.velocity(path.t_end()));
    let ortho = geo.tangent_components(&eta);
    let scale = 1.0 + eta.amax() * eta.amax();
    if ortho.len() > 0 && ortho.amax() > 1e-6 * scale {
        return Err(Error::NotCritical { residual: ortho.amax() });
    }
    Ok((u, geo, eta))
}

/// Assembles and diagonalizes the index form on `n_elements` elements.
pub fn index_form(path: &GeodesicPath, gec: &Gec, n_elements: usize) -> Result<IndexFormOperator> {
    if n_elements == 0 {
        return Err(Error::invalid("index form needs at least one element"));
    }
    let (u, geo, eta) = critical_geometry(path, gec)?;
    // The diagonal carries a degenerate restricted metric but its boundary
    // condition (periodicity) needs no normal projection.
    if !gec.is_diagonal() && !geo.nondegenerate {
        return Err(Error::DegenerateRestriction { condition: geo.condition });
    }
    let metric = path.metric();
    let m = metric.dim();
    let t_end = path.t_end();
    let p = ELEMENT_DEGREE;
    let n_nodes = n_elements * p + 1;
    let h = t_end / n_elements as f64;
    let ref_nodes = gauss_lobatto_nodes(p + 1);
    let node_times: Vec<f64> =
        (0..n_elements).flat_map(|e| ref_nodes[..p].iter().map(move |&s| (e as f64 + s) * h).collect::<Vec<_>>()).chain([t_end]).collect();

    let nf = n_nodes * m;
    let mut h_full = DMatrix::zeros(nf, nf);
    let mut m_full = DMatrix::zeros(nf, nf);
    let (qn, qw) = gauss_legendre(p + 6);
    let basis: Vec<(Vec<f64>, Vec<f64>)> = qn.iter().map(|&s| lagrange(&ref_nodes, s)).collect();
    for e in 0..n_elements {
        let first = e * p;
        for (q, (&s, &w)) in qn.iter().zip(&qw).enumerate() {
            let t = (e as f64 + s) * h;
            let wt = w * h;
            let x = path.position(t);
            let v = path.velocity(t);
            let g = metric.value(x.as_slice());
            let gv = metric.christoffel_unchecked(x.as_slice()).contract_first(&v);
            let curv = metric.curvature_unchecked(x.as_slice());
            // Column c is R(γ̇, e_c)γ̇.
            let mut k = DMatrix::zeros(m, m);
            for c in 0..m {
                let mut ec = DVector::zeros(m);
                ec[c] = 1.0;
                k.set_column(c, &curv.apply(&v, &ec, &v));
            }
            let gk_t = (&g * &k).transpose();
            let (ell, dell) = &basis[q];
            let a: Vec<DMatrix<f64>> =
                (0..=p).map(|i| DMatrix::identity(m, m) * (dell[i] / h) + &gv * ell[i]).collect();
            for i in 0..=p {
                let ga = &g * &a[i];
                for j in 0..=p {
                    let blk = a[j].transpose() * &ga + &gk_t * (ell[i] * ell[j]);
                    let mut target = h_full.view_mut(((first + j) * m, (first + i) * m), (m, m));
                    target += blk * wt;
                    let mass = dell[i] * dell[j] / (h * h) * wt;
                    for c in 0..m {
                        m_full[((first + j) * m + c, (first + i) * m + c)] += mass;
                    }
                }
            }
        }
    }
    for c in 0..m {
        m_full[(c, c)] += 1.0;
    }

    // Unknowns: interior nodes, then endpoint parameters.
    let d = geo.tangent.ncols();
    let n_int = (n_nodes - 2) * m;
    let nz = n_int + d;
    let mut expansion = DMatrix::zeros(nf, nz);
    for r in 0..n_int {
        expansion[(m + r, r)] = 1.0;
    }
    if d > 0 {
        expansion.view_mut((0, n_int), (m, d)).copy_from(&geo.tangent.rows(0, m));
        expansion.view_mut(((n_nodes - 1) * m, n_int), (m, d)).copy_from(&geo.tangent.rows(m, m));
    }
    let mut matrix = expansion.transpose() * &h_full * &expansion;
    if d > 0 {
        let s = geo.second_fundamental(&eta);
        let mut corner = matrix.view_mut((n_int, n_int), (d, d));
        corner -= s;
    }
    let matrix = linalg::symmetrize(&matrix);
    let mass = linalg::symmetrize(&(expansion.transpose() * &m_full * &expansion));

    let chol = Cholesky::new(mass.clone()).ok_or_else(|| Error::invalid("index-form mass matrix is not positive definite"))?;
    let l = chol.l();
    let l_inv = l.clone().try_inverse().ok_or_else(|| Error::invalid("singular mass factor"))?;
    let reduced = linalg::symmetrize(&(&l_inv * &matrix * l_inv.transpose()));
    let (vals, vecs) = sorted_sym_eigen(&reduced);
    let eigenvectors = l_inv.transpose() * vecs;
    let eigenvalues: Vec<f64> = vals.iter().copied().collect();
    let scale = eigenvalues.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let abs: Vec<f64> = eigenvalues.iter().map(|v| v.abs()).collect();
    let kernel_dimension = linalg::kernel_count(&abs, scale, KERNEL_THRESHOLD, KERNEL_GAP);
    let mut sorted_abs = abs.clone();
    sorted_abs.sort_by(|a, b| a.total_cmp(b));
    let gap = sorted_abs.get(kernel_dimension).copied().unwrap_or(f64::INFINITY) / scale.max(f64::MIN_POSITIVE);
    let cutoff = sorted_abs.get(kernel_dimension.saturating_sub(1)).copied().filter(|_| kernel_dimension > 0).unwrap_or(-1.0);
    let morse_index = eigenvalues.iter().filter(|&&l| l < 0.0 && l.abs() > cutoff).count();
    Ok(IndexFormOperator {
        path: path.clone(),
        gec: gec.clone(),
        params: u,
        n_elements,
        node_times,
        matrix,
        mass,
        eigenvalues,
        eigenvectors,
        kernel_dimension,
        morse_index,
        gap,
        expansion,
    })
}

/// Relative boundary residual accepted for a refined kernel field.
const REFINE_TOL: f64 = 1e-5;

/// Turns each discrete kernel vector into an exact Jacobi field: initial
/// data are fitted by least squares to the node values, the field is
/// propagated, and the linearized boundary condition is verified.
pub fn kernel_refine(op: &IndexFormOperator, opts: &OdeOptions) -> Result<Vec<JacobiSolution>> {
    if op.kernel_dimension == 0 {
        return Ok(Vec::new());
    }
    let path = &op.path;
    let m = path.dim();
    let lin = fundamental(path, &DMatrix::identity(2 * m, 2 * m), opts)?;
    let n = op.node_times.len();
    let mut design = DMatrix::zeros(n * m, 2 * m);
    for (k, &t) in op.node_times.iter().enumerate() {
        design.view_mut((k * m, 0), (m, 2 * m)).copy_from(&lin.jacobi(t).rows(0, m));
    }
    let geo = gec::boundary_geometry_unchecked(&op.gec, path.metric(), op.params.as_slice());
    let mut eta = DVector::zeros(2 * m);
    eta.rows_mut(0, m).copy_from(&path.initial_velocity());
    eta.rows_mut(m, m).copy_from(&path.velocity(path.t_end()));
    let mut out = Vec::new();
    for field in op.kernel_fields() {
        let target = DVector::from_iterator(n * m, field.iter().flat_map(|v| v.iter().copied()));
        let mut c = linalg::lstsq(&design, &target, 1e-12);
        let norm = c.norm();
        if !(norm > 0.0) {
            return Err(Error::RefinementDiverged { residual: f64::INFINITY });
        }
        c /= norm;
        let j0 = c.rows(0, m).into_owned();
        let dj0 = c.rows(m, m).into_owned();
        let sol = propagate_jacobi(path, &j0, &dj0, opts)?;
        let (j1, dj1) = sol.eval(path.t_end());
        let res = gec::pjacobi_boundary_residual(&geo, &eta, (&j0, &dj0, &j1, &dj1));
        let scale = 1.0 + eta.amax();
        if res.norm() > REFINE_TOL * scale {
            return Err(Error::RefinementDiverged { residual: res.norm() });
        }
        out.push(sol);
    }
    Ok(out)
}

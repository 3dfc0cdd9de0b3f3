//! Geodesics: integration, exponential map, parallel transport, lengths and
//! energies, self-intersections and periodicity.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::gauss_legendre;
use crate::metric::{AuxiliaryRiemannian, MetricField};
use crate::ode::{self, OdeOptions, Solution, Status};

/// How an integration ended.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum FlowStatus {
    Completed,
    DomainExit { t: f64 },
    StepFailure { t: f64 },
}

impl From<Status> for FlowStatus {
    fn from(s: Status) -> Self {
        match s {
            Status::Completed => FlowStatus::Completed,
            Status::Stopped { t } => FlowStatus::DomainExit { t },
            Status::StepFailure { t } => FlowStatus::StepFailure { t },
        }
    }
}

/// An integrated geodesic `t ↦ (γ(t), γ̇(t))` on `[0, T]` with dense output.
#[derive(Debug, Clone)]
pub struct GeodesicPath {
    metric: MetricField,
    solution: Solution,
    /// `g(γ̇, γ̇)` at `t = 0`.
    pub speed: f64,
    pub status: FlowStatus,
}

impl GeodesicPath {
    pub fn metric(&self) -> &MetricField {
        &self.metric
    }

    pub fn dim(&self) -> usize {
        self.metric.dim()
    }

    /// Final time actually reached.
    pub fn t_end(&self) -> f64 {
        self.solution.t_end()
    }

    pub fn is_complete(&self) -> bool {
        self.status == FlowStatus::Completed
    }

    /// Turns a truncated integration into the corresponding error.
    pub fn require_complete(self) -> Result<Self> {
        match self.status {
            FlowStatus::Completed => Ok(self),
            FlowStatus::DomainExit { t } => Err(Error::DomainExit { t }),
            FlowStatus::StepFailure { t } => Err(Error::StepFailure { t }),
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.solution.ts
    }

    pub fn state(&self, t: f64) -> DVector<f64> {
        self.solution.eval(t)
    }

    pub fn position(&self, t: f64) -> DVector<f64> {
        let m = self.dim();
        self.state(t).rows(0, m).into_owned()
    }

    pub fn velocity(&self, t: f64) -> DVector<f64> {
        let m = self.dim();
        self.state(t).rows(m, m).into_owned()
    }

    pub fn initial_position(&self) -> DVector<f64> {
        self.solution.ys[0].rows(0, self.dim()).into_owned()
    }

    pub fn initial_velocity(&self) -> DVector<f64> {
        self.solution.ys[0].rows(self.dim(), self.dim()).into_owned()
    }

    /// Grid states `(t_i, x_i, v_i)`.
    pub fn nodes(&self) -> impl Iterator<Item = (f64, DVector<f64>, DVector<f64>)> + '_ {
        let m = self.dim();
        self.solution
            .ts
            .iter()
            .zip(&self.solution.ys)
            .map(move |(&t, y)| (t, y.rows(0, m).into_owned(), y.rows(m, m).into_owned()))
    }

    /// Largest `|g(γ̇,γ̇)(t_i) − c|` over the grid.
    pub fn conservation_error(&self) -> f64 {
        self.nodes()
            .map(|(_, x, v)| (self.metric.inner(x.as_slice(), &v, &v) - self.speed).abs())
            .fold(0.0, f64::max)
    }

    /// Largest `|γ̈ + Γ(γ̇,γ̇)|` at step midpoints, with `γ̈` from a central
    /// difference of the dense output.
    pub fn ode_residual(&self) -> f64 {
        let ts = &self.solution.ts;
        let mut worst: f64 = 0.0;
        for w in ts.windows(2) {
            let h = w[1] - w[0];
            let t = 0.5 * (w[0] + w[1]);
            let d = 1e-3 * h;
            let acc = (self.velocity(t + d) - self.velocity(t - d)) / (2.0 * d);
            let x = self.position(t);
            let v = self.velocity(t);
            worst = worst.max((acc + self.metric.geodesic_acceleration(x.as_slice(), &v)).amax());
        }
        worst
    }

    /// `n`-fold concatenation of a closed geodesic on `[0, nT]`.
    pub fn iterate(&self, n: usize, tol: f64) -> Result<GeodesicPath> {
        if n == 0 {
            return Err(Error::invalid("iterate order must be at least 1"));
        }
        let m = self.dim();
        let x0 = self.initial_position();
        let x1 = self.position(self.t_end());
        let disp = DVector::from_vec(self.metric.domain().displacement(x1.as_slice(), x0.as_slice()));
        let dv = self.velocity(self.t_end()) - self.initial_velocity();
        if disp.amax().max(dv.amax()) > tol || !self.is_complete() {
            return Err(Error::NotPeriodic);
        }
        // Unwrapped drift across one period (multiples of periods on periodic axes).
        let mut shift = DVector::zeros(2 * m);
        for i in 0..m {
            shift[i] = x1[i] - x0[i] - disp[i];
        }
        Ok(GeodesicPath {
            metric: self.metric.clone(),
            solution: self.solution.repeat(n, &shift),
            speed: self.speed,
            status: self.status,
        })
    }
}

fn check_start(metric: &MetricField, x0: &[f64], v0: &[f64]) -> Result<()> {
    let m = metric.dim();
    if x0.len() != m || v0.len() != m {
        return Err(Error::DimensionMismatch { expected: m, found: x0.len().min(v0.len()) });
    }
    metric.eval(x0)?;
    if !v0.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("initial velocity must be finite"));
    }
    Ok(())
}

/// Integrates the geodesic equation `γ̈ + Γ(γ̇,γ̇) = 0` on `[0, T]` (or
/// `[T, 0]` for negative `T`). Leaving the chart truncates the path and sets
/// [`FlowStatus::DomainExit`].
pub fn integrate_geodesic(
    metric: &MetricField,
    x0: &[f64],
    v0: &[f64],
    t_end: f64,
    opts: &OdeOptions,
) -> Result<GeodesicPath> {
    check_start(metric, x0, v0)?;
    let m = metric.dim();
    let mut y0 = DVector::zeros(2 * m);
    y0.rows_mut(0, m).copy_from_slice(x0);
    y0.rows_mut(m, m).copy_from_slice(v0);
    let rhs = |_: f64, y: &DVector<f64>| geodesic_rhs(metric, y);
    let domain = metric.domain();
    let stop = |y: &DVector<f64>| !domain.contains(&y.as_slice()[..m]);
    let solution = ode::integrate(rhs, 0.0, y0, t_end, opts, Some(&stop));
    let v = DVector::from_column_slice(v0);
    let speed = metric.inner(x0, &v, &v);
    let status = solution.status.into();
    Ok(GeodesicPath { metric: metric.clone(), solution, speed, status })
}

fn geodesic_rhs(metric: &MetricField, y: &DVector<f64>) -> DVector<f64> {
    let m = metric.dim();
    let v = y.rows(m, m).into_owned();
    let acc = metric.geodesic_acceleration(&y.as_slice()[..m], &v);
    let mut out = DVector::zeros(2 * m);
    out.rows_mut(0, m).copy_from(&v);
    out.rows_mut(m, m).copy_from(&(-acc));
    out
}

/// `exp_x(v)`: the geodesic position at `t = 1`.
pub fn exp_map(metric: &MetricField, x: &[f64], v: &[f64], opts: &OdeOptions) -> Result<DVector<f64>> {
    if v.iter().all(|&c| c == 0.0) {
        metric.eval(x)?;
        return Ok(DVector::from_column_slice(x));
    }
    let path = integrate_geodesic(metric, x, v, 1.0, opts)?.require_complete()?;
    Ok(path.position(1.0))
}

/// Geodesic together with `p` solutions of its linearization.
///
/// Each variation column carries `(ξ, η)` with `ξ' = η` and
/// `η' = −(∂_ξ Γ)(v, v) − 2Γ(v, η)`, the derivative of the geodesic flow in
/// chart coordinates. The covariant data of the corresponding Jacobi field
/// are `J = ξ` and `DJ = η + Γ(γ̇, ξ)`.
#[derive(Debug, Clone)]
pub struct LinearizedFlow {
    metric: MetricField,
    pub columns: usize,
    solution: Solution,
    pub status: FlowStatus,
}

impl LinearizedFlow {
    pub fn metric(&self) -> &MetricField {
        &self.metric
    }

    pub fn t_end(&self) -> f64 {
        self.solution.t_end()
    }

    pub fn times(&self) -> &[f64] {
        &self.solution.ts
    }

    /// `(γ(t), γ̇(t))`.
    pub fn base(&self, t: f64) -> (DVector<f64>, DVector<f64>) {
        let m = self.metric.dim();
        let y = self.solution.eval(t);
        (y.rows(0, m).into_owned(), y.rows(m, m).into_owned())
    }

    /// `(ξ, η)` chart variations of every column as `2m × p`.
    pub fn chart_variations(&self, t: f64) -> DMatrix<f64> {
        let m = self.metric.dim();
        let y = self.solution.eval(t);
        DMatrix::from_column_slice(2 * m, self.columns, &y.as_slice()[2 * m..])
    }

    /// `(J, DJ)` of every column as `2m × p`.
    pub fn jacobi(&self, t: f64) -> DMatrix<f64> {
        let m = self.metric.dim();
        let y = self.solution.eval(t);
        let x = &y.as_slice()[..m];
        let v = y.rows(m, m).into_owned();
        let gamma_v = self.metric.christoffel_unchecked(x).contract_first(&v);
        let mut out = DMatrix::from_column_slice(2 * m, self.columns, &y.as_slice()[2 * m..]);
        for c in 0..self.columns {
            let xi = out.view((0, c), (m, 1)).into_owned();
            let corr = &gamma_v * xi;
            let mut eta = out.view_mut((m, c), (m, 1));
            eta += corr;
        }
        out
    }
}

/// Integrates the geodesic from `(x0, v0)` with variation columns whose
/// initial covariant data `(J(0), DJ(0))` are the columns of `init` (`2m × p`).
pub fn integrate_linearized(
    metric: &MetricField,
    x0: &[f64],
    v0: &[f64],
    t_end: f64,
    init: &DMatrix<f64>,
    opts: &OdeOptions,
) -> Result<LinearizedFlow> {
    check_start(metric, x0, v0)?;
    let m = metric.dim();
    if init.nrows() != 2 * m {
        return Err(Error::DimensionMismatch { expected: 2 * m, found: init.nrows() });
    }
    let p = init.ncols();
    let v0v = DVector::from_column_slice(v0);
    let gamma0 = metric.christoffel_unchecked(x0).contract_first(&v0v);
    let mut y0 = DVector::zeros(2 * m + 2 * m * p);
    y0.rows_mut(0, m).copy_from_slice(x0);
    y0.rows_mut(m, m).copy_from_slice(v0);
    for c in 0..p {
        let j = init.view((0, c), (m, 1)).into_owned();
        let dj = init.view((m, c), (m, 1)).into_owned();
        let eta = dj - &gamma0 * &j;
        let off = 2 * m + 2 * m * c;
        y0.rows_mut(off, m).copy_from(&j);
        y0.rows_mut(off + m, m).copy_from(&eta);
    }
    let rhs = |_: f64, y: &DVector<f64>| {
        let x = &y.as_slice()[..m];
        let v = y.rows(m, m).into_owned();
        let chr = metric.christoffel_unchecked(x);
        let dchr = metric.christoffel_derivatives(x);
        let mut out = DVector::zeros(y.len());
        out.rows_mut(0, m).copy_from(&v);
        out.rows_mut(m, m).copy_from(&(-chr.apply(&v, &v)));
        // (∂_p Γ)(v, v) for each p, and Γ(v, ·).
        let dq: Vec<DVector<f64>> = dchr
            .iter()
            .map(|dp| DVector::from_iterator(m, dp.iter().map(|s| v.dot(&(s * &v)))))
            .collect();
        let gv = chr.contract_first(&v);
        for c in 0..p {
            let off = 2 * m + 2 * m * c;
            let xi = y.rows(off, m);
            let eta = y.rows(off + m, m).into_owned();
            let mut acc = -(&gv * &eta) * 2.0;
            for (pidx, d) in dq.iter().enumerate() {
                if xi[pidx] != 0.0 {
                    acc.axpy(-xi[pidx], d, 1.0);
                }
            }
            out.rows_mut(off, m).copy_from(&eta);
            out.rows_mut(off + m, m).copy_from(&acc);
        }
        out
    };
    let domain = metric.domain();
    let stop = |y: &DVector<f64>| !domain.contains(&y.as_slice()[..m]);
    let solution = ode::integrate(rhs, 0.0, y0, t_end, opts, Some(&stop));
    let status = solution.status.into();
    Ok(LinearizedFlow { metric: metric.clone(), columns: p, solution, status })
}

/// Parallel frame along a geodesic, solving `w' = −Γ(γ̇, w)` together with
/// the geodesic itself.
#[derive(Debug, Clone)]
pub struct ParallelField {
    m: usize,
    columns: usize,
    solution: Solution,
    pub status: FlowStatus,
}

impl ParallelField {
    /// Transported vectors at `t` as columns of an `m × p` matrix.
    pub fn at(&self, t: f64) -> DMatrix<f64> {
        let y = self.solution.eval(t);
        DMatrix::from_column_slice(self.m, self.columns, &y.as_slice()[2 * self.m..])
    }

    pub fn times(&self) -> &[f64] {
        &self.solution.ts
    }
}

/// Parallel transport of the columns of `w0` along `path`.
pub fn parallel_transport(path: &GeodesicPath, w0: &DMatrix<f64>, opts: &OdeOptions) -> Result<ParallelField> {
    let metric = path.metric();
    let m = metric.dim();
    if w0.nrows() != m {
        return Err(Error::DimensionMismatch { expected: m, found: w0.nrows() });
    }
    let p = w0.ncols();
    let mut y0 = DVector::zeros(2 * m + m * p);
    y0.rows_mut(0, m).copy_from(&path.initial_position());
    y0.rows_mut(m, m).copy_from(&path.initial_velocity());
    y0.rows_mut(2 * m, m * p).copy_from_slice(w0.as_slice());
    let rhs = |_: f64, y: &DVector<f64>| {
        let x = &y.as_slice()[..m];
        let v = y.rows(m, m).into_owned();
        let chr = metric.christoffel_unchecked(x);
        let gv = chr.contract_first(&v);
        let mut out = DVector::zeros(y.len());
        out.rows_mut(0, m).copy_from(&v);
        out.rows_mut(m, m).copy_from(&(-chr.apply(&v, &v)));
        let w = DMatrix::from_column_slice(m, p, &y.as_slice()[2 * m..]);
        let dw = -(&gv * w);
        out.rows_mut(2 * m, m * p).copy_from_slice(dw.as_slice());
        out
    };
    let domain = metric.domain();
    let stop = |y: &DVector<f64>| !domain.contains(&y.as_slice()[..m]);
    let solution = ode::integrate(rhs, 0.0, y0, path.t_end(), opts, Some(&stop));
    let status: FlowStatus = solution.status.into();
    if let FlowStatus::DomainExit { t } = status {
        return Err(Error::DomainExit { t });
    }
    Ok(ParallelField { m, columns: p, solution, status })
}

/// Auxiliary length, auxiliary energy and `g`-energy of a path on its own
/// time interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthEnergy {
    pub length_r: f64,
    pub energy_r: f64,
    pub energy_g: f64,
}

/// Gauss–Legendre quadrature (8 nodes per step) on the dense output.
pub fn riem_length_energy(path: &GeodesicPath, aux: &AuxiliaryRiemannian) -> LengthEnergy {
    let (nodes, weights) = gauss_legendre(8);
    let mut out = LengthEnergy { length_r: 0.0, energy_r: 0.0, energy_g: 0.0 };
    for w in path.times().windows(2) {
        let h = w[1] - w[0];
        for (s, wt) in nodes.iter().zip(&weights) {
            let t = w[0] + s * h;
            let x = path.position(t);
            let v = path.velocity(t);
            let nr = aux.norm_sq(x.as_slice(), &v);
            out.length_r += wt * h * nr.sqrt();
            out.energy_r += 0.5 * wt * h * nr;
            out.energy_g += 0.5 * wt * h * path.metric().inner(x.as_slice(), &v, &v);
        }
    }
    out
}

/// Result of a periodicity search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodicityVerdict {
    pub periodic: bool,
    /// Minimal period when periodic.
    pub period: f64,
    /// Number of whole periods contained in `[0, T]`.
    pub iterate_order: usize,
    /// Phase-space return residual at the reported period (or the best
    /// near-return found).
    pub residual: f64,
}

fn phase_distance(path: &GeodesicPath, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let m = path.dim();
    let dom = path.metric().domain();
    let dx = dom.displacement(&a.as_slice()[..m], &b.as_slice()[..m]);
    let dv = (a.rows(m, m) - b.rows(m, m)).norm();
    (dx.iter().map(|d| d * d).sum::<f64>() + dv * dv).sqrt()
}

/// Finds the smallest `ω ∈ (0, T]` with `(γ, γ̇)(ω) = (γ, γ̇)(0)` within `tol`.
pub fn detect_periodicity(path: &GeodesicPath, tol: f64) -> PeriodicityVerdict {
    let t_end = path.t_end();
    let none = |residual: f64| PeriodicityVerdict { periodic: false, period: t_end, iterate_order: 0, residual };
    if t_end <= 0.0 {
        return none(f64::INFINITY);
    }
    let s0 = path.state(0.0);
    let d = |t: f64| phase_distance(path, &path.state(t), &s0);
    let n = (path.times().len() * 8).clamp(2000, 200_000);
    let dt = t_end / n as f64;
    let samples: Vec<f64> = (0..=n).map(|i| d(i as f64 * dt)).collect();
    let scale = samples.iter().fold(0.0f64, |a, &b| a.max(b));
    if scale <= tol {
        // Constant curve: not a periodic geodesic in any useful sense.
        return none(0.0);
    }
    // Skip the initial stretch where the state is still close to its start.
    let far = (0.1 * scale).max(100.0 * tol);
    let Some(start) = samples.iter().position(|&v| v > far) else {
        return none(f64::INFINITY);
    };
    let mut best = f64::INFINITY;
    for i in start..=n {
        let left = samples[i - 1];
        let right = if i < n { samples[i + 1] } else { f64::INFINITY };
        if !(samples[i] <= left && samples[i] <= right) || samples[i] > far {
            continue;
        }
        let lo = (i - 1) as f64 * dt;
        let hi = ((i + 1) as f64 * dt).min(t_end);
        let (omega, res) = golden_min(&d, lo, hi, 1e-13 * t_end.max(1.0));
        best = best.min(res);
        if res <= tol {
            let k = ((t_end / omega) + 1e-6).floor().max(1.0) as usize;
            return PeriodicityVerdict { periodic: true, period: omega, iterate_order: k, residual: res };
        }
    }
    none(best)
}

/// Golden-section minimization of a unimodal function on `[lo, hi]`.
pub(crate) fn golden_min<F: Fn(f64) -> f64>(f: &F, mut lo: f64, mut hi: f64, xtol: f64) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..200 {
        if hi - lo <= xtol {
            break;
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = f(x2);
        }
    }
    let candidates = [(lo, f(lo)), (x1, f1), (x2, f2), (hi, f(hi))];
    candidates.into_iter().fold((lo, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a })
}

/// Self-intersection pairs of a path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfIntersections {
    /// Pairs `(t, s)` with `t < s` and `γ(t) = γ(s)`.
    pub pairs: Vec<(f64, f64)>,
    /// Set when the path retraces itself (a periodic geodesic run past one
    /// period), in which case the intersection set is a continuum and
    /// `pairs` is left empty; see [`detect_periodicity`].
    pub retraces: bool,
}

/// Locates parameter pairs where the path meets itself, within `tol` in the
/// auxiliary norm. Nearby candidates are clustered with radius `10·tol`.
pub fn self_intersections(path: &GeodesicPath, aux: &AuxiliaryRiemannian, tol: f64) -> SelfIntersections {
    let t_end = path.t_end();
    let verdict = detect_periodicity(path, tol.max(1e-8));
    if verdict.periodic && t_end > verdict.period * (1.0 + 1e-6) + 10.0 * tol {
        return SelfIntersections { pairs: Vec::new(), retraces: true };
    }
    let m = path.dim();
    let dom = path.metric().domain();
    let n = (path.times().len() * 16).clamp(1000, 100_000);
    let dt = t_end / n as f64;
    let pts: Vec<DVector<f64>> = (0..=n).map(|i| path.position(i as f64 * dt)).collect();
    let step_len = pts.windows(2).map(|w| dom.distance(w[0].as_slice(), w[1].as_slice())).fold(0.0, f64::max);
    let cell = (4.0 * step_len).max(10.0 * tol);
    let dist = |a: &DVector<f64>, b: &DVector<f64>| -> f64 {
        let d = DVector::from_vec(dom.displacement(a.as_slice(), b.as_slice()));
        aux.norm(a.as_slice(), &d)
    };

    // Spatial hash on wrapped coordinates.
    let key = |p: &DVector<f64>| -> Vec<i64> { dom.wrap(p.as_slice()).iter().map(|c| (c / cell).floor() as i64).collect() };
    let mut grid: std::collections::HashMap<Vec<i64>, Vec<usize>> = std::collections::HashMap::new();
    for (i, p) in pts.iter().enumerate() {
        grid.entry(key(p)).or_default().push(i);
    }
    let mut candidates: Vec<(usize, usize)> = Vec::new();
    let offsets: Vec<Vec<i64>> = (0..3usize.pow(m as u32))
        .map(|mut c| {
            (0..m)
                .map(|_| {
                    let o = (c % 3) as i64 - 1;
                    c /= 3;
                    o
                })
                .collect()
        })
        .collect();
    for (i, p) in pts.iter().enumerate() {
        let k = key(p);
        for off in &offsets {
            let nb: Vec<i64> = k.iter().zip(off).map(|(a, b)| a + b).collect();
            if let Some(list) = grid.get(&nb) {
                for &j in list {
                    if j > i + 1 && dist(p, &pts[j]) < cell {
                        candidates.push((i, j));
                    }
                }
            }
        }
    }
    // Discard pairs on the same branch: the path must leave the cell between them.
    candidates.retain(|&(i, j)| (i..=j).any(|k| dist(&pts[i], &pts[k]) > 2.0 * cell));

    let mut pairs: Vec<(f64, f64)> = Vec::new();
    for (i, j) in candidates {
        let (t, s) = refine_crossing(path, i as f64 * dt, j as f64 * dt, t_end);
        let d = dist(&path.position(t), &path.position(s));
        if d <= tol && t < s {
            pairs.push((t, s));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut clustered: Vec<(f64, f64)> = Vec::new();
    for p in pairs {
        if let Some(last) = clustered.last() {
            if (p.0 - last.0).abs() <= 10.0 * tol.max(dt) && (p.1 - last.1).abs() <= 10.0 * tol.max(dt) {
                continue;
            }
        }
        if !clustered.iter().any(|q| (p.0 - q.0).abs() <= 10.0 * tol.max(dt) && (p.1 - q.1).abs() <= 10.0 * tol.max(dt)) {
            clustered.push(p);
        }
    }
    SelfIntersections { pairs: clustered, retraces: false }
}

/// Gauss–Newton on `γ(t) − γ(s) = 0` in `(t, s)`, kept inside `[0, T]`.
fn refine_crossing(path: &GeodesicPath, mut t: f64, mut s: f64, t_end: f64) -> (f64, f64) {
    let dom = path.metric().domain();
    for _ in 0..30 {
        let r = DVector::from_vec(dom.displacement(path.position(t).as_slice(), path.position(s).as_slice()));
        let jt = path.velocity(t);
        let js = -path.velocity(s);
        let jac = DMatrix::from_columns(&[jt, js]);
        let step = crate::linalg::lstsq(&jac, &(-&r), 1e-12);
        t = (t + step[0]).clamp(0.0, t_end);
        s = (s + step[1]).clamp(0.0, t_end);
        if step.amax() < 1e-14 {
            break;
        }
    }
    (t, s)
}

/// Both sides of the turning inequality
/// `‖γ̇(b)/‖γ̇(b)‖ − γ̇(a)/‖γ̇(a)‖‖ ≤ c ∫‖γ̇‖` over a compact box `K`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TurningBound {
    pub lhs: f64,
    pub rhs: f64,
    /// `c = 2 (max_K ‖Γ‖ + 1)`.
    pub constant: f64,
    pub holds: bool,
}

/// Upper bound for `‖Γ‖` on a box from a uniform grid of samples.
pub fn christoffel_bound(metric: &MetricField, bx: &[(f64, f64)], per_axis: usize) -> f64 {
    let m = metric.dim();
    let total = per_axis.pow(m as u32);
    let mut worst: f64 = 0.0;
    for mut idx in 0..total {
        let x: Vec<f64> = (0..m)
            .map(|i| {
                let j = idx % per_axis;
                idx /= per_axis;
                let (lo, hi) = bx[i];
                if per_axis == 1 {
                    0.5 * (lo + hi)
                } else {
                    lo + (hi - lo) * j as f64 / (per_axis - 1) as f64
                }
            })
            .collect();
        worst = worst.max(metric.christoffel_unchecked(&x).norm());
    }
    worst
}

pub fn turning_bound_check(path: &GeodesicPath, bx: &[(f64, f64)]) -> Result<TurningBound> {
    let m = path.dim();
    if bx.len() != m {
        return Err(Error::DimensionMismatch { expected: m, found: bx.len() });
    }
    if let FlowStatus::DomainExit { t } = path.status {
        return Err(Error::DomainExit { t });
    }
    let dom = path.metric().domain();
    let inside = |x: &DVector<f64>| {
        let w = dom.wrap(x.as_slice());
        (0..m).all(|i| w[i] >= bx[i].0 - 1e-12 && w[i] <= bx[i].1 + 1e-12)
    };
    let (nodes, weights) = gauss_legendre(8);
    let mut integral = 0.0;
    let mut max_gamma: f64 = 0.0;
    for w in path.times().windows(2) {
        let h = w[1] - w[0];
        for (s, wt) in nodes.iter().zip(&weights) {
            let t = w[0] + s * h;
            let x = path.position(t);
            if !inside(&x) {
                return Err(Error::DomainExit { t });
            }
            max_gamma = max_gamma.max(path.metric().christoffel_unchecked(x.as_slice()).norm());
            integral += wt * h * path.velocity(t).norm();
        }
    }
    let per_axis = match m {
        1 => 64,
        2 => 24,
        3 => 10,
        4 => 6,
        _ => 3,
    };
    let kappa = christoffel_bound(path.metric(), bx, per_axis).max(max_gamma) + 1.0;
    let c = 2.0 * kappa;
    let v0 = path.initial_velocity();
    let v1 = path.velocity(path.t_end());
    let lhs = if v0.norm() == 0.0 { 0.0 } else { (v1.normalize() - v0.normalize()).norm() };
    let rhs = c * integral;
    Ok(TurningBound { lhs, rhs, constant: c, holds: lhs <= rhs })
}

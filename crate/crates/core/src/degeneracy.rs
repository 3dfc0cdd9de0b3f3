//! Degeneracy classification of `(g, 𝒫)`-geodesics, energies of iterates,
//! and the census of closed geodesics in a compact box.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{self, GeodesicPath, PeriodicityVerdict};
use crate::gec::{self, Gec, KERNEL_GAP, KERNEL_THRESHOLD};
use crate::linalg;
use crate::metric::{AuxiliaryRiemannian, MetricField};
use crate::ode::OdeOptions;
use crate::variational::{self, JacobiSolution};

/// Relative residual accepted for the vanishing iterate sum of a witness.
pub const STRONG_TOL: f64 = 1e-6;

/// Classification of a critical point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DegeneracyKind {
    Nondegenerate,
    Degenerate {
        kernel_dim: usize,
        /// Initial data `(J(0), DJ(0))` of a kernel basis.
        basis: Vec<Vec<f64>>,
    },
    StronglyDegenerate {
        k: usize,
        /// Initial data `(J(0), DJ(0))` of the witness.
        witness: Vec<f64>,
        residual: f64,
    },
    S1Nondegenerate,
    S1Degenerate {
        fixed_dim: usize,
    },
}

/// Numerical thresholds behind a classification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub kernel_relative: f64,
    pub kernel_gap_factor: f64,
    pub strong_relative: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { kernel_relative: KERNEL_THRESHOLD, kernel_gap_factor: KERNEL_GAP, strong_relative: STRONG_TOL }
    }
}

/// Quantities supporting a classification.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub shooting_kernel: Option<usize>,
    pub index_form_kernel: Option<usize>,
    pub index_form_elements: Option<usize>,
    pub index_form_gap: Option<f64>,
    pub morse_index: Option<usize>,
    pub cross_check_agrees: Option<bool>,
    pub monodromy_fixed_dim: Option<usize>,
    pub iterate_order: Option<usize>,
    /// Relative singular value separating the shooting kernel from the rest.
    pub shooting_gap: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DegeneracyReport {
    #[serde(flatten)]
    pub kind: DegeneracyKind,
    pub thresholds: Thresholds,
    pub evidence: Evidence,
    #[serde(skip)]
    pub witness: Option<StrongWitness>,
}

impl DegeneracyReport {
    pub fn is_s1_nondegenerate(&self) -> bool {
        matches!(self.kind, DegeneracyKind::S1Nondegenerate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifyOptions {
    pub index_form_elements: usize,
    pub periodicity_tol: f64,
    pub ode: OdeOptions,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        Self { index_form_elements: 64, periodicity_tol: 1e-6, ode: OdeOptions::default() }
    }
}

/// Classifies a critical point of the energy under the condition `gec`.
///
/// For a non-diagonal condition the kernel dimension comes from the
/// shooting count and is cross-checked against the index form. For closed
/// geodesics the monodromy decides S¹-nondegeneracy, and degenerate
/// iterates are searched for a strong-degeneracy witness.
pub fn classify(path: &GeodesicPath, gec: &Gec, opts: &ClassifyOptions) -> Result<DegeneracyReport> {
    let (params, _, _) = variational::critical_geometry(path, gec)?;
    let mut evidence = Evidence::default();
    let thresholds = Thresholds::default();
    if gec.is_diagonal() {
        let aux = AuxiliaryRiemannian::euclidean(path.dim());
        let mono = variational::monodromy(path, &aux, &opts.ode)?;
        let verdict = flow::detect_periodicity(path, opts.periodicity_tol * (1.0 + path.initial_velocity().amax()));
        let k = if verdict.periodic { verdict.iterate_order } else { 1 };
        evidence.monodromy_fixed_dim = Some(mono.fixed_dimension);
        evidence.iterate_order = Some(k);
        if mono.fixed_dimension <= 1 {
            return Ok(DegeneracyReport { kind: DegeneracyKind::S1Nondegenerate, thresholds, evidence, witness: None });
        }
        if k >= 2 {
            if let Some(w) = strongly_degenerate_check(path, k, &mono.fixed_space, &opts.ode)? {
                let kind = DegeneracyKind::StronglyDegenerate {
                    k,
                    witness: w.initial_data.iter().copied().collect(),
                    residual: w.residual,
                };
                return Ok(DegeneracyReport { kind, thresholds, evidence, witness: Some(w) });
            }
        }
        let kind = DegeneracyKind::S1Degenerate { fixed_dim: mono.fixed_dimension };
        return Ok(DegeneracyReport { kind, thresholds, evidence, witness: None });
    }
    let shots = gec::pjacobi_shooting_at(path, gec, params.as_slice(), &opts.ode)?;
    evidence.shooting_kernel = Some(shots.dimension);
    evidence.shooting_gap = Some(shots.gap);
    if opts.index_form_elements > 0 {
        let op = variational::index_form(path, gec, opts.index_form_elements)?;
        evidence.index_form_kernel = Some(op.kernel_dimension);
        evidence.index_form_elements = Some(opts.index_form_elements);
        evidence.index_form_gap = Some(op.gap);
        evidence.morse_index = Some(op.morse_index);
        evidence.cross_check_agrees = Some(op.kernel_dimension == shots.dimension);
    }
    let kind = if shots.dimension == 0 {
        DegeneracyKind::Nondegenerate
    } else {
        DegeneracyKind::Degenerate {
            kernel_dim: shots.dimension,
            basis: (0..shots.dimension).map(|c| shots.initial_data.column(c).iter().copied().collect()).collect(),
        }
    };
    Ok(DegeneracyReport { kind, thresholds, evidence, witness: None })
}

/// A Jacobi field whose sum over the `k` shifts by the prime period vanishes.
#[derive(Debug, Clone)]
pub struct StrongWitness {
    pub k: usize,
    /// `(J(0), DJ(0))`.
    pub initial_data: DVector<f64>,
    pub jacobi: JacobiSolution,
    /// Largest `‖Σ_i J(t + iω)‖ / ‖J‖` over the sample grid.
    pub residual: f64,
}

/// Searches the span of `kernel` (initial data of periodic Jacobi fields,
/// `2m × r`) together with the fields `γ̇` and `tγ̇` for a nonzero Jacobi
/// field whose `k` shifted copies sum to zero. The path must be the `k`-fold
/// iterate of a closed geodesic.
pub fn strongly_degenerate_check(
    path: &GeodesicPath,
    k: usize,
    kernel: &DMatrix<f64>,
    opts: &OdeOptions,
) -> Result<Option<StrongWitness>> {
    if k < 2 {
        return Ok(None);
    }
    let m = path.dim();
    if kernel.nrows() != 2 * m {
        return Err(Error::DimensionMismatch { expected: 2 * m, found: kernel.nrows() });
    }
    let omega = path.t_end() / k as f64;
    let v0 = path.initial_velocity();

    // Orthonormal basis of the search space.
    let mut cols: Vec<DVector<f64>> = kernel.column_iter().map(|c| c.into_owned()).collect();
    let mut tan = DVector::zeros(2 * m);
    tan.rows_mut(0, m).copy_from(&v0);
    cols.push(tan.clone());
    let mut lin_t = DVector::zeros(2 * m);
    lin_t.rows_mut(m, m).copy_from(&v0);
    cols.push(lin_t);
    let span = DMatrix::from_columns(&cols);
    let svd = span.clone().svd(true, false);
    let u = svd.u.ok_or_else(|| Error::invalid("search-space decomposition failed"))?;
    let smax = svd.singular_values.max();
    let rank = svd.singular_values.iter().filter(|&&s| s > 1e-10 * smax).count();
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let basis = DMatrix::from_columns(&order[..rank].iter().map(|&i| u.column(i).into_owned()).collect::<Vec<_>>());

    // The shifted sum of a Jacobi field is again a Jacobi field, so it
    // vanishes identically iff its data at t = 0 vanish.
    let fund = variational_fundamental(path, opts)?;
    let mut sum = DMatrix::zeros(2 * m, 2 * m);
    for i in 0..k {
        sum += fund.jacobi(i as f64 * omega);
    }
    let (null, _) = linalg::null_space(&(&sum * &basis), KERNEL_THRESHOLD, KERNEL_GAP);
    if null.ncols() == 0 {
        return Ok(None);
    }
    let mut data = &basis * null.column(0);
    data /= data.norm();
    let jacobi = variational::propagate_jacobi(path, &data.rows(0, m).into_owned(), &data.rows(m, m).into_owned(), opts)?;
    let samples = 64;
    let mut scale: f64 = 0.0;
    let mut worst: f64 = 0.0;
    for s in 0..samples {
        let t = omega * s as f64 / samples as f64;
        let mut acc = DVector::zeros(m);
        for i in 0..k {
            let j = jacobi.eval(t + i as f64 * omega).0;
            scale = scale.max(j.norm());
            acc += j;
        }
        worst = worst.max(acc.norm());
    }
    let residual = worst / scale.max(f64::MIN_POSITIVE);
    if scale == 0.0 || residual > STRONG_TOL {
        return Ok(None);
    }
    Ok(Some(StrongWitness { k, initial_data: data, jacobi, residual }))
}

fn variational_fundamental(path: &GeodesicPath, opts: &OdeOptions) -> Result<flow::LinearizedFlow> {
    let m = path.dim();
    let lin = flow::integrate_linearized(
        path.metric(),
        path.initial_position().as_slice(),
        path.initial_velocity().as_slice(),
        path.t_end(),
        &DMatrix::identity(2 * m, 2 * m),
        opts,
    )?;
    match lin.status {
        flow::FlowStatus::Completed => Ok(lin),
        flow::FlowStatus::DomainExit { t } => Err(Error::DomainExit { t }),
        flow::FlowStatus::StepFailure { t } => Err(Error::StepFailure { t }),
    }
}

/// Total and minimal auxiliary energy of a closed curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyPair {
    /// Auxiliary energy after affine reparametrization to `[0, 1]`.
    pub total: f64,
    /// `total / k²`.
    pub minimal: f64,
    pub iterate_order: usize,
}

/// Energies of a path; `k` is the detected iterate order (1 when prime or
/// not periodic).
pub fn energies(path: &GeodesicPath, aux: &AuxiliaryRiemannian, periodicity: &PeriodicityVerdict) -> EnergyPair {
    let t_end = path.t_end();
    let total = t_end * flow::riem_length_energy(path, aux).energy_r;
    let k = if periodicity.periodic { periodicity.iterate_order.max(1) } else { 1 };
    EnergyPair { total, minimal: total / (k * k) as f64, iterate_order: k }
}

/// `n`-fold iterate of a closed geodesic.
pub fn iterate(path: &GeodesicPath, n: usize) -> Result<GeodesicPath> {
    path.iterate(n, 1e-6 * (1.0 + path.initial_velocity().amax()))
}

/// Seeding of the census.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CensusOptions {
    /// Seed positions per axis of the box.
    pub positions_per_axis: usize,
    /// Seed directions on the unit auxiliary sphere.
    pub directions: usize,
    /// Near-returns of each seed used as trial periods.
    pub trial_periods: usize,
    /// Return residual accepted by the Newton solve.
    pub tol: f64,
    pub max_newton: usize,
    /// Seed for the random directions used when `m ≥ 3`.
    pub seed: u64,
}

impl Default for CensusOptions {
    fn default() -> Self {
        Self { positions_per_axis: 4, directions: 8, trial_periods: 3, tol: 1e-9, max_newton: 30, seed: 0 }
    }
}

/// A closed geodesic found by the census.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CensusOrbit {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    /// Parameter length of the (possibly iterated) orbit.
    pub period: f64,
    pub prime_period: f64,
    pub energies: EnergyPair,
    pub classification: DegeneracyReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CensusResult {
    pub bounds: Vec<(f64, f64)>,
    pub a: f64,
    pub b: f64,
    pub seeds: usize,
    pub options: CensusOptions,
    pub orbits: Vec<CensusOrbit>,
    /// Every listed orbit is S¹-nondegenerate; supported only relative to
    /// the seed density.
    pub member: bool,
    pub note: String,
    pub wall_clock_seconds: f64,
}

impl CensusResult {
    /// Membership for smaller bounds, using the same orbit list.
    pub fn member_for(&self, a: f64, b: f64) -> bool {
        self.orbits
            .iter()
            .filter(|o| o.energies.total <= b && o.energies.minimal <= a)
            .all(|o| o.classification.is_s1_nondegenerate())
    }
}

struct PrimeOrbit {
    path: GeodesicPath,
    cloud: Vec<DVector<f64>>,
    energy: f64,
}

fn seed_directions(m: usize, n: usize, seed: u64) -> Vec<DVector<f64>> {
    match m {
        1 => vec![DVector::from_element(1, 1.0), DVector::from_element(1, -1.0)],
        2 => (0..n)
            .map(|i| {
                let a = std::f64::consts::TAU * i as f64 / n as f64;
                DVector::from_vec(vec![a.cos(), a.sin()])
            })
            .collect(),
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n)
                .map(|_| {
                    let v = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
                    let nv = v.norm();
                    v / nv
                })
                .collect()
        }
    }
}

/// Phase-space return residual and the path, for `(x0, v0, T)`.
fn return_residual(metric: &MetricField, aux: &AuxiliaryRiemannian, z: &DVector<f64>, ode: &OdeOptions) -> Option<DVector<f64>> {
    let m = metric.dim();
    let t = z[2 * m];
    if !(t > 0.0) {
        return None;
    }
    let x0 = z.rows(0, m).into_owned();
    let v0 = z.rows(m, m).into_owned();
    let path = flow::integrate_geodesic(metric, x0.as_slice(), v0.as_slice(), t, ode).ok()?;
    if !path.is_complete() {
        return None;
    }
    let mut r = DVector::zeros(2 * m + 1);
    let disp = metric.domain().displacement(path.position(t).as_slice(), x0.as_slice());
    r.rows_mut(0, m).copy_from_slice(&disp);
    r.rows_mut(m, m).copy_from(&(path.velocity(t) - &v0));
    r[2 * m] = aux.norm_sq(x0.as_slice(), &v0) - 1.0;
    Some(r)
}

fn newton_return(metric: &MetricField, aux: &AuxiliaryRiemannian, mut z: DVector<f64>, opts: &CensusOptions, ode: &OdeOptions) -> Option<DVector<f64>> {
    let n = z.len();
    let mut r = return_residual(metric, aux, &z, ode)?;
    for _ in 0..opts.max_newton {
        if r.amax() <= opts.tol {
            return Some(z);
        }
        let h = 1e-7;
        let mut cols = Vec::with_capacity(n);
        for k in 0..n {
            let mut zp = z.clone();
            zp[k] += h;
            let mut zm = z.clone();
            zm[k] -= h;
            cols.push((return_residual(metric, aux, &zp, ode)? - return_residual(metric, aux, &zm, ode)?) / (2.0 * h));
        }
        let jac = DMatrix::from_columns(&cols);
        let step = linalg::lstsq(&jac, &(-&r), 1e-9);
        let mut lambda = 1.0;
        loop {
            let trial = &z + &step * lambda;
            if let Some(rt) = return_residual(metric, aux, &trial, ode) {
                if rt.norm() < r.norm() * (1.0 - 1e-4 * lambda) || rt.amax() <= opts.tol {
                    z = trial;
                    r = rt;
                    break;
                }
            }
            lambda *= 0.5;
            if lambda < 1e-4 {
                return None;
            }
        }
    }
    (r.amax() <= opts.tol).then_some(z)
}

/// Near-returns of the seed trajectory up to `t_max`, best first.
fn trial_periods(path: &GeodesicPath, count: usize) -> Vec<f64> {
    let t_end = path.t_end();
    let n = 2000;
    let s0 = path.state(0.0);
    let m = path.dim();
    let dom = path.metric().domain();
    let dist = |t: f64| {
        let s = path.state(t);
        let dx = dom.displacement(&s.as_slice()[..m], &s0.as_slice()[..m]);
        (dx.iter().map(|d| d * d).sum::<f64>() + (s.rows(m, m) - s0.rows(m, m)).norm_squared()).sqrt()
    };
    let d: Vec<f64> = (0..=n).map(|i| dist(t_end * i as f64 / n as f64)).collect();
    let scale = d.iter().fold(0.0f64, |a, &b| a.max(b));
    let Some(start) = d.iter().position(|&v| v > 0.2 * scale) else {
        return Vec::new();
    };
    let mut mins: Vec<(f64, f64)> = (start.max(1)..n)
        .filter(|&i| d[i] <= d[i - 1] && d[i] <= d[i + 1] && d[i] < 0.5 * scale)
        .map(|i| (d[i], t_end * i as f64 / n as f64))
        .collect();
    mins.sort_by(|a, b| a.0.total_cmp(&b.0));
    mins.into_iter().take(count).map(|(_, t)| t).collect()
}

fn in_box(metric: &MetricField, bounds: &[(f64, f64)], path: &GeodesicPath) -> bool {
    let dom = metric.domain();
    (0..=400).all(|i| {
        let x = dom.wrap(path.position(path.t_end() * i as f64 / 400.0).as_slice());
        x.iter().zip(bounds).all(|(v, (lo, hi))| *v >= lo - 1e-9 && *v <= hi + 1e-9)
    })
}

/// `n` equally spaced points of a closed path (the endpoint is omitted).
fn point_cloud(path: &GeodesicPath, n: usize) -> Vec<DVector<f64>> {
    (0..n).map(|i| path.position(path.t_end() * i as f64 / n as f64)).collect()
}

fn chart_distance(metric: &MetricField, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    metric.domain().distance(a.as_slice(), b.as_slice())
}

/// Distance from `p` to the two segments adjacent to vertex `j` of the
/// closed polygon with vertices `cloud`.
fn distance_near_vertex(metric: &MetricField, p: &DVector<f64>, cloud: &[DVector<f64>], j: usize) -> f64 {
    let dom = metric.domain();
    let n = cloud.len();
    let mut best = chart_distance(metric, p, &cloud[j]);
    for (i0, i1) in [((j + n - 1) % n, j), (j, (j + 1) % n)] {
        let a = DVector::from_vec(dom.displacement(p.as_slice(), cloud[i0].as_slice()));
        let seg = DVector::from_vec(dom.displacement(cloud[i1].as_slice(), cloud[i0].as_slice()));
        let len2 = seg.norm_squared();
        let s = if len2 > 0.0 { (a.dot(&seg) / len2).clamp(0.0, 1.0) } else { 0.0 };
        best = best.min((a - seg * s).norm());
    }
    best
}

/// Whether every point of `a` lies within `threshold` of the closed polygon
/// with vertices `b`. The nearest vertex is tracked by walking along `b` from
/// the previous one, after a full scan for the first point.
fn directed_within(metric: &MetricField, a: &[DVector<f64>], b: &[DVector<f64>], threshold: f64) -> bool {
    let n = b.len();
    let dist = |p: &DVector<f64>, j: usize| chart_distance(metric, p, &b[j]);
    let mut j = (0..n).min_by(|&x, &y| dist(&a[0], x).total_cmp(&dist(&a[0], y))).unwrap_or(0);
    for p in a {
        loop {
            let here = dist(p, j);
            let next = (j + 1) % n;
            let prev = (j + n - 1) % n;
            if dist(p, next) < here {
                j = next;
            } else if dist(p, prev) < here {
                j = prev;
            } else {
                break;
            }
        }
        if distance_near_vertex(metric, p, b, j) >= threshold {
            return false;
        }
    }
    true
}

/// Whether the Hausdorff distance between two closed polylines is below
/// `threshold`.
fn hausdorff_below(metric: &MetricField, a: &[DVector<f64>], b: &[DVector<f64>], threshold: f64) -> bool {
    directed_within(metric, a, b, threshold) && directed_within(metric, b, a, threshold)
}

/// Searches the box for closed geodesics with total energy at most `b` and
/// minimal energy at most `a`, classifies each, and decides membership in
/// the family of metrics whose such geodesics are all S¹-nondegenerate.
pub fn periodic_census(
    metric: &MetricField,
    bounds: &[(f64, f64)],
    a: f64,
    b: f64,
    opts: &CensusOptions,
    ode: &OdeOptions,
) -> Result<CensusResult> {
    let started = Instant::now();
    let m = metric.dim();
    if bounds.len() != m {
        return Err(Error::DimensionMismatch { expected: m, found: bounds.len() });
    }
    if bounds.iter().any(|(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo < hi)) {
        return Err(Error::invalid("census box must be finite with lower < upper"));
    }
    if !(a >= 0.0 && b >= 0.0) {
        return Err(Error::invalid("energy bounds must be nonnegative"));
    }
    let aux = AuxiliaryRiemannian::euclidean(m);
    let positions = gec::grid(bounds, opts.positions_per_axis.max(1));
    let dirs = seed_directions(m, opts.directions.max(1), opts.seed);
    let seeds: Vec<(DVector<f64>, DVector<f64>)> =
        positions.iter().flat_map(|x| dirs.iter().map(move |v| (x.clone(), v.clone()))).collect();
    // Unit auxiliary speed gives total energy about T²/2.
    let t_max = 1.5 * (2.0 * b).sqrt();

    let found: Vec<DVector<f64>> = seeds
        .par_iter()
        .flat_map_iter(|(x, v)| {
            let v = v / aux.norm(x.as_slice(), v);
            let mut out = Vec::new();
            if !metric.domain().contains(x.as_slice()) || t_max <= 0.0 {
                return out;
            }
            let Ok(seed_path) = flow::integrate_geodesic(metric, x.as_slice(), v.as_slice(), t_max, ode) else {
                return out;
            };
            for t in trial_periods(&seed_path, opts.trial_periods) {
                let z0 = DVector::from_iterator(2 * m + 1, x.iter().chain(v.iter()).copied().chain([t]));
                if let Some(z) = newton_return(metric, &aux, z0, opts, ode) {
                    out.push(z);
                }
            }
            out
        })
        .collect();

    // Reduce to prime orbits inside the box.
    let primes: Vec<Option<PrimeOrbit>> = found
        .par_iter()
        .map(|z| {
            let x0 = metric.domain().wrap(&z.as_slice()[..m]);
            let v0 = z.rows(m, m).into_owned();
            let path = flow::integrate_geodesic(metric, &x0, v0.as_slice(), z[2 * m], ode).ok()?;
            let verdict = flow::detect_periodicity(&path, 1e-6);
            if !verdict.periodic {
                return None;
            }
            let prime = flow::integrate_geodesic(metric, &x0, v0.as_slice(), verdict.period, ode).ok()?;
            if !prime.is_complete() || !in_box(metric, bounds, &prime) {
                return None;
            }
            let once = PeriodicityVerdict { periodic: true, period: verdict.period, iterate_order: 1, residual: verdict.residual };
            let energy = energies(&prime, &aux, &once).total;
            Some(PrimeOrbit { cloud: point_cloud(&prime, 1000), path: prime, energy })
        })
        .collect();
    let mut primes: Vec<PrimeOrbit> = primes.into_iter().flatten().collect();
    primes.sort_by(|p, q| {
        p.energy.total_cmp(&q.energy).then_with(|| {
            let (a, b) = (p.path.initial_position(), q.path.initial_position());
            a.iter().zip(b.iter()).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    let mut distinct: Vec<PrimeOrbit> = Vec::new();
    for p in primes {
        if !distinct.iter().any(|d| hausdorff_below(metric, &d.cloud, &p.cloud, 1e-4)) {
            distinct.push(p);
        }
    }

    // Enumerate admissible iterates and classify them.
    let classify_opts = ClassifyOptions { index_form_elements: 0, ..ClassifyOptions::default() };
    let mut jobs: Vec<(usize, usize)> = Vec::new();
    for (i, p) in distinct.iter().enumerate() {
        if p.energy > a {
            continue;
        }
        let mut n = 1;
        while (n * n) as f64 * p.energy <= b {
            jobs.push((i, n));
            n += 1;
        }
    }
    let orbits: Vec<CensusOrbit> = jobs
        .par_iter()
        .filter_map(|&(i, n)| {
            let p = &distinct[i];
            let path = iterate(&p.path, n).ok()?;
            let verdict = PeriodicityVerdict { periodic: true, period: p.path.t_end(), iterate_order: n, residual: 0.0 };
            let energies = energies(&path, &aux, &verdict);
            let classification = classify(&path, &Gec::Diagonal { dim: m }, &classify_opts).ok()?;
            Some(CensusOrbit {
                position: path.initial_position().iter().copied().collect(),
                velocity: path.initial_velocity().iter().copied().collect(),
                period: path.t_end(),
                prime_period: p.path.t_end(),
                energies,
                classification,
            })
        })
        .collect();
    let member = orbits.iter().all(|o| o.classification.is_s1_nondegenerate());
    Ok(CensusResult {
        bounds: bounds.to_vec(),
        a,
        b,
        seeds: seeds.len(),
        options: *opts,
        orbits,
        member,
        note: "membership is supported only relative to the seed density; a census cannot prove that no other closed geodesic exists".into(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtins;
    use std::f64::consts::{FRAC_PI_2, PI, TAU};

    fn opts() -> OdeOptions {
        OdeOptions::default()
    }

    fn football_equator() -> GeodesicPath {
        flow::integrate_geodesic(&builtins::football(), &[0.0, 0.0], &[1.0, 0.0], TAU, &opts()).unwrap()
    }

    #[test]
    fn classify_examples() {
        let e = builtins::euclidean(2);
        let seg = flow::integrate_geodesic(&e, &[0.0, 0.0], &[1.0, 2.0], 1.0, &opts()).unwrap();
        let fixed = Gec::FixedPoints { p: vec![0.0, 0.0], q: vec![1.0, 2.0] };
        let r = classify(&seg, &fixed, &ClassifyOptions::default()).unwrap();
        assert_eq!(r.kind, DegeneracyKind::Nondegenerate);
        assert_eq!(r.evidence.cross_check_agrees, Some(true));

        let s2 = builtins::round_sphere(1.0);
        let half = flow::integrate_geodesic(&s2, &[FRAC_PI_2, 0.0], &[0.0, 1.0], PI, &opts()).unwrap();
        let antipodal = Gec::FixedPoints { p: vec![FRAC_PI_2, 0.0], q: vec![FRAC_PI_2, PI] };
        let r = classify(&half, &antipodal, &ClassifyOptions::default()).unwrap();
        assert!(matches!(r.kind, DegeneracyKind::Degenerate { kernel_dim: 1, .. }), "{r:?}");
        assert_eq!(r.evidence.cross_check_agrees, Some(true));

        let diag = Gec::Diagonal { dim: 2 };
        let r = classify(&football_equator(), &diag, &ClassifyOptions::default()).unwrap();
        assert_eq!(r.kind, DegeneracyKind::S1Nondegenerate);
        let twice = iterate(&football_equator(), 2).unwrap();
        let r = classify(&twice, &diag, &ClassifyOptions::default()).unwrap();
        assert!(matches!(r.kind, DegeneracyKind::StronglyDegenerate { k: 2, .. }), "{r:?}");
        // Strong degeneracy implies S¹-degeneracy.
        assert!(r.evidence.monodromy_fixed_dim.unwrap() >= 2);

        let off = flow::integrate_geodesic(&s2, &[FRAC_PI_2, 0.0], &[0.0, 1.0], 2.0, &opts()).unwrap();
        assert!(matches!(classify(&off, &antipodal, &ClassifyOptions::default()), Err(Error::NotCritical { .. })));
    }

    #[test]
    fn strong_degeneracy_examples() {
        let aux = AuxiliaryRiemannian::euclidean(2);
        let twice = iterate(&football_equator(), 2).unwrap();
        let mono = variational::monodromy(&twice, &aux, &opts()).unwrap();
        let w = strongly_degenerate_check(&twice, 2, &mono.fixed_space, &opts()).unwrap().expect("witness");
        // The witness is a multiple of cos(t/2 + φ)·∂_z.
        let (j0, dj0) = (w.initial_data.rows(0, 2).into_owned(), w.initial_data.rows(2, 2).into_owned());
        assert!(j0[0].abs() < 1e-8 && dj0[0].abs() < 1e-8);
        for t in [0.3f64, 2.0, 7.0] {
            let expected = j0[1] * (0.5 * t).cos() + 2.0 * dj0[1] * (0.5 * t).sin();
            assert!((w.jacobi.eval(t).0[1] - expected).abs() < 1e-7);
        }

        let torus = builtins::flat_torus(2, 1.0);
        let loop1 = flow::integrate_geodesic(&torus, &[0.1, 0.2], &[1.0, 0.0], 1.0, &opts()).unwrap();
        let loop2 = iterate(&loop1, 2).unwrap();
        let mono = variational::monodromy(&loop2, &aux, &opts()).unwrap();
        assert!(strongly_degenerate_check(&loop2, 2, &mono.fixed_space, &opts()).unwrap().is_none());
        assert!(strongly_degenerate_check(&loop1, 1, &mono.fixed_space, &opts()).unwrap().is_none());
    }

    #[test]
    fn energies_examples() {
        let aux = AuxiliaryRiemannian::euclidean(2);
        // Unit circle traversed on [0, 1]: flat torus of period 2π, speed 2π.
        let torus = builtins::flat_torus(2, TAU);
        let prime = flow::integrate_geodesic(&torus, &[0.0, 1.0], &[TAU, 0.0], 1.0, &opts()).unwrap();
        let v = flow::detect_periodicity(&prime, 1e-8);
        let e = energies(&prime, &aux, &v);
        assert!((e.total - 2.0 * PI * PI).abs() < 1e-9 && (e.minimal - e.total).abs() < 1e-12);
        let two = iterate(&prime, 2).unwrap();
        let e2 = energies(&two, &aux, &flow::detect_periodicity(&two, 1e-8));
        assert_eq!(e2.iterate_order, 2);
        assert!((e2.total - 8.0 * PI * PI).abs() < 1e-8 && (e2.minimal - 2.0 * PI * PI).abs() < 1e-8);
        let e = builtins::euclidean(2);
        let point = flow::integrate_geodesic(&e, &[0.0, 0.0], &[0.0, 0.0], 1.0, &opts()).unwrap();
        let ep = energies(&point, &aux, &flow::detect_periodicity(&point, 1e-8));
        assert_eq!((ep.total, ep.minimal), (0.0, 0.0));
    }

    #[test]
    fn iterate_energy_law() {
        let aux = AuxiliaryRiemannian::euclidean(2);
        let eq = football_equator();
        let base = flow::riem_length_energy(&eq, &aux).energy_r * eq.t_end();
        assert_eq!(iterate(&eq, 1).unwrap().t_end(), eq.t_end());
        for n in [2usize, 3] {
            let it = iterate(&eq, n).unwrap();
            let total = flow::riem_length_energy(&it, &aux).energy_r * it.t_end();
            assert!((total / base - (n * n) as f64).abs() <= 1e-8 * (n * n) as f64);
        }
        let torus = builtins::flat_torus(2, 1.0);
        let l = flow::integrate_geodesic(&torus, &[0.1, 0.2], &[1.0, 1.0], 1.0, &opts()).unwrap();
        let base = flow::riem_length_energy(&l, &aux).energy_r * l.t_end();
        let it = iterate(&l, 3).unwrap();
        assert!((flow::riem_length_energy(&it, &aux).energy_r * it.t_end() / base - 9.0).abs() < 1e-8);
        let open = flow::integrate_geodesic(&torus, &[0.1, 0.2], &[1.0, 0.3], 1.0, &opts()).unwrap();
        assert!(matches!(iterate(&open, 2), Err(Error::NotPeriodic)));
    }

    #[test]
    fn census_examples() {
        let small = CensusOptions { positions_per_axis: 2, directions: 4, trial_periods: 2, ..CensusOptions::default() };
        let e = builtins::euclidean(2);
        let r = periodic_census(&e, &[(-1.0, 1.0), (-1.0, 1.0)], 10.0, 10.0, &small, &opts()).unwrap();
        assert!(r.orbits.is_empty() && r.member);

        let torus = builtins::flat_torus(2, 1.0);
        let r = periodic_census(&torus, &[(0.0, 1.0), (0.0, 1.0)], 5.0, 5.0, &small, &opts()).unwrap();
        assert!(!r.orbits.is_empty());
        assert!(r.orbits.iter().all(|o| matches!(o.classification.kind, DegeneracyKind::S1Degenerate { .. })));
        assert!(!r.member);
        // Monotonicity of the families on the same output.
        assert!(!r.member_for(5.0, 5.0));
        assert!(r.member_for(0.1, 0.1));

        let fb = builtins::football();
        let bound = 2.0 * PI * PI + 1.0;
        let band = CensusOptions { positions_per_axis: 3, directions: 4, trial_periods: 2, ..CensusOptions::default() };
        let r = periodic_census(&fb, &[(-PI, PI), (-0.3, 0.3)], bound, bound, &band, &opts()).unwrap();
        assert_eq!(r.orbits.len(), 1, "{:?}", r.orbits);
        assert!(r.orbits[0].position[1].abs() < 1e-6);
        assert!(r.orbits[0].classification.is_s1_nondegenerate());
        assert!(r.member);
    }
}

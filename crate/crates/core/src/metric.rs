//! Metric fields on a chart and their Levi-Civita data.
//!
//! Derivative arrays use the convention `dg[k] = ∂_k g` and
//! `ddg[k][l] = ∂_k ∂_l g`. Christoffel symbols are stored as
//! `symbols[k][(i, j)] = Γ^k_ij`, and the Riemann tensor follows
//! `R(X,Y)Z = ∇_X∇_Y Z − ∇_Y∇_X Z − ∇_[X,Y] Z`, so that the unit sphere has
//! sectional curvature `+1` and the Jacobi equation reads `D²J = R(γ̇,J)γ̇`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::domain::ChartDomain;
use crate::error::{Error, Result};
use crate::linalg::{self, sorted_sym_eigen};

pub const DEFAULT_FIRST_STEP: f64 = 1e-5;
pub const DEFAULT_SECOND_STEP: f64 = 1e-4;
/// Relative band for classifying a vector as lightlike.
pub const DEFAULT_LIGHTLIKE_TOL: f64 = 1e-9;
/// Relative eigenvalue magnitude below which a metric counts as degenerate.
pub const DEGENERACY_TOL: f64 = 1e-10;

/// Component functions of a symmetric bilinear form field in chart coordinates.
pub trait MetricComponents: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> DMatrix<f64>;
    /// `∂_k g` for `k = 0..m`, when known in closed form.
    fn first_derivatives(&self, _x: &[f64]) -> Option<Vec<DMatrix<f64>>> {
        None
    }
    /// `∂_k ∂_l g`, when known in closed form.
    fn second_derivatives(&self, _x: &[f64]) -> Option<Vec<Vec<DMatrix<f64>>>> {
        None
    }
}

/// Components given by a plain closure, without analytic derivatives.
pub struct FnComponents<F> {
    dim: usize,
    f: F,
}

impl<F> FnComponents<F>
where
    F: Fn(&[f64]) -> DMatrix<f64> + Send + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> MetricComponents for FnComponents<F>
where
    F: Fn(&[f64]) -> DMatrix<f64> + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[f64]) -> DMatrix<f64> {
        (self.f)(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeMode {
    Analytic,
    FiniteDifference(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CausalCharacter {
    Timelike,
    Lightlike,
    Spacelike,
}

/// A semi-Riemannian metric of fixed index on a chart.
#[derive(Clone)]
pub struct MetricField {
    domain: ChartDomain,
    index: usize,
    components: Arc<dyn MetricComponents>,
    derivative_mode: DerivativeMode,
    second_derivative_mode: DerivativeMode,
    label: String,
}

impl fmt::Debug for MetricField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MetricField")
            .field("label", &self.label)
            .field("dim", &self.dim())
            .field("index", &self.index)
            .field("derivative_mode", &self.derivative_mode)
            .field("second_derivative_mode", &self.second_derivative_mode)
            .finish()
    }
}

impl MetricField {
    /// Builds a field using analytic derivatives where the components provide
    /// them and central differences otherwise.
    pub fn new(
        domain: ChartDomain,
        index: usize,
        components: Arc<dyn MetricComponents>,
        label: impl Into<String>,
    ) -> Result<Self> {
        let m = domain.dim();
        if components.dim() != m {
            return Err(Error::DimensionMismatch { expected: m, found: components.dim() });
        }
        if index > m {
            return Err(Error::invalid(format!("index {index} exceeds dimension {m}")));
        }
        Ok(Self {
            domain,
            index,
            components,
            derivative_mode: DerivativeMode::Analytic,
            second_derivative_mode: DerivativeMode::Analytic,
            label: label.into(),
        })
    }

    pub fn with_derivative_modes(mut self, first: DerivativeMode, second: DerivativeMode) -> Self {
        self.derivative_mode = first;
        self.second_derivative_mode = second;
        self
    }

    /// Switches both derivative modes to central differences with default steps.
    pub fn finite_difference(self) -> Self {
        self.with_derivative_modes(
            DerivativeMode::FiniteDifference(DEFAULT_FIRST_STEP),
            DerivativeMode::FiniteDifference(DEFAULT_SECOND_STEP),
        )
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn with_domain(mut self, domain: ChartDomain) -> Result<Self> {
        if domain.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: domain.dim() });
        }
        self.domain = domain;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }
    pub fn index(&self) -> usize {
        self.index
    }
    pub fn domain(&self) -> &ChartDomain {
        &self.domain
    }
    pub fn label(&self) -> &str {
        &self.label
    }
    pub fn components(&self) -> &Arc<dyn MetricComponents> {
        &self.components
    }
    pub fn derivative_mode(&self) -> DerivativeMode {
        self.derivative_mode
    }
    pub fn second_derivative_mode(&self) -> DerivativeMode {
        self.second_derivative_mode
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: x.len() });
        }
        if !self.domain.contains(x) {
            return Err(Error::OutOfDomain { point: x.to_vec() });
        }
        Ok(())
    }

    /// Symmetrized components without domain or signature checks.
    pub fn value(&self, x: &[f64]) -> DMatrix<f64> {
        linalg::symmetrize(&self.components.value(x))
    }

    /// Components at `x`, verifying domain membership, nondegeneracy and index.
    pub fn eval(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_point(x)?;
        let g = self.value(x);
        let (vals, _) = sorted_sym_eigen(&g);
        let scale = vals.amax().max(1.0);
        let min_abs = vals.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
        if !min_abs.is_finite() || min_abs < DEGENERACY_TOL * scale {
            return Err(Error::DegenerateAtPoint { point: x.to_vec(), min_abs_eigenvalue: min_abs });
        }
        let neg = vals.iter().filter(|&&v| v < 0.0).count();
        if neg != self.index {
            return Err(Error::SignatureMismatch { point: x.to_vec(), expected: self.index, found: neg });
        }
        Ok(g)
    }

    /// `(positive, negative, near-zero)` eigenvalue counts of `g(x)`.
    pub fn signature(&self, x: &[f64]) -> (usize, usize, usize) {
        linalg::inertia(&self.value(x), DEGENERACY_TOL)
    }

    /// `∂_k g(x)` for every coordinate direction.
    pub fn first_derivatives(&self, x: &[f64]) -> Vec<DMatrix<f64>> {
        if self.derivative_mode == DerivativeMode::Analytic {
            if let Some(d) = self.components.first_derivatives(x) {
                return d.iter().map(linalg::symmetrize).collect();
            }
        }
        let h = match self.derivative_mode {
            DerivativeMode::FiniteDifference(h) => h,
            DerivativeMode::Analytic => DEFAULT_FIRST_STEP,
        };
        central_difference(x, h, |y| self.value(y))
    }

    /// `∂_k ∂_l g(x)`. In finite-difference mode, analytic first derivatives
    /// are differenced once when the first-derivative mode is analytic;
    /// otherwise the components are differenced twice.
    pub fn second_derivatives(&self, x: &[f64]) -> Vec<Vec<DMatrix<f64>>> {
        let m = self.dim();
        if self.second_derivative_mode == DerivativeMode::Analytic {
            if let Some(d) = self.components.second_derivatives(x) {
                return d.iter().map(|row| row.iter().map(linalg::symmetrize).collect()).collect();
            }
        }
        let h = match self.second_derivative_mode {
            DerivativeMode::FiniteDifference(h) => h,
            DerivativeMode::Analytic => DEFAULT_SECOND_STEP,
        };
        let analytic_first = self.derivative_mode == DerivativeMode::Analytic
            && self.components.first_derivatives(x).is_some();
        let mut out = vec![vec![DMatrix::zeros(m, m); m]; m];
        if analytic_first {
            // ∂_l (∂_k g) by central differences, then symmetrize in (k, l).
            let mut y = x.to_vec();
            for l in 0..m {
                y[l] = x[l] + h;
                let plus = self.first_derivatives(&y);
                y[l] = x[l] - h;
                let minus = self.first_derivatives(&y);
                y[l] = x[l];
                for k in 0..m {
                    out[k][l] = (&plus[k] - &minus[k]) / (2.0 * h);
                }
            }
            for k in 0..m {
                for l in (k + 1)..m {
                    let avg = (&out[k][l] + &out[l][k]) * 0.5;
                    out[k][l] = avg.clone();
                    out[l][k] = avg;
                }
            }
            return out;
        }
        let g0 = self.value(x);
        let mut y = x.to_vec();
        for k in 0..m {
            y[k] = x[k] + h;
            let gp = self.value(&y);
            y[k] = x[k] - h;
            let gm = self.value(&y);
            y[k] = x[k];
            out[k][k] = (&gp - &g0 * 2.0 + &gm) / (h * h);
            for l in (k + 1)..m {
                let mut eval = |sk: f64, sl: f64| {
                    y[k] = x[k] + sk * h;
                    y[l] = x[l] + sl * h;
                    let v = self.value(&y);
                    y[k] = x[k];
                    y[l] = x[l];
                    v
                };
                let d = (eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0))
                    / (4.0 * h * h);
                out[k][l] = d.clone();
                out[l][k] = d;
            }
        }
        out
    }

    /// Christoffel symbols of the Levi-Civita connection at `x`.
    pub fn christoffel(&self, x: &[f64]) -> Result<Christoffel> {
        self.check_point(x)?;
        Ok(self.christoffel_unchecked(x))
    }

    pub fn christoffel_unchecked(&self, x: &[f64]) -> Christoffel {
        let g = self.value(x);
        let ginv = invert(&g);
        let dg = self.first_derivatives(x);
        let lowered = lowered_christoffel(&dg);
        Christoffel { point: x.to_vec(), symbols: raise(&ginv, &lowered) }
    }

    /// `∂_p Γ^k_ij` as `out[p][k][(i, j)]`.
    pub fn christoffel_derivatives(&self, x: &[f64]) -> Vec<Vec<DMatrix<f64>>> {
        let m = self.dim();
        let g = self.value(x);
        let ginv = invert(&g);
        let dg = self.first_derivatives(x);
        let ddg = self.second_derivatives(x);
        let lowered = lowered_christoffel(&dg);
        let mut out = Vec::with_capacity(m);
        for p in 0..m {
            let dginv = -(&ginv * &dg[p] * &ginv);
            let dlowered = lowered_christoffel(&ddg[p]);
            let a = raise(&dginv, &lowered);
            let b = raise(&ginv, &dlowered);
            out.push(a.into_iter().zip(b).map(|(a, b)| a + b).collect());
        }
        out
    }

    /// `Γ(x)(v, v)`, the quadratic part of the geodesic equation, evaluated
    /// without building the full symbol array.
    pub fn geodesic_acceleration(&self, x: &[f64], v: &DVector<f64>) -> DVector<f64> {
        let m = self.dim();
        let g = self.value(x);
        let dg = self.first_derivatives(x);
        let mut w = DVector::zeros(m);
        for i in 0..m {
            if v[i] != 0.0 {
                w.axpy(v[i], &(&dg[i] * v), 1.0);
            }
        }
        for l in 0..m {
            w[l] -= 0.5 * v.dot(&(&dg[l] * v));
        }
        solve_sym(&g, &w)
    }

    /// Riemann, Ricci and scalar curvature at `x`.
    pub fn curvature(&self, x: &[f64]) -> Result<Curvature> {
        self.check_point(x)?;
        Ok(self.curvature_unchecked(x))
    }

    pub fn curvature_unchecked(&self, x: &[f64]) -> Curvature {
        let m = self.dim();
        let gamma = self.christoffel_unchecked(x);
        let dgamma = self.christoffel_derivatives(x);
        let mut riemann = vec![0.0; m * m * m * m];
        for i in 0..m {
            for j in 0..m {
                for k in 0..m {
                    for l in 0..m {
                        let mut r = dgamma[k][i][(l, j)] - dgamma[l][i][(k, j)];
                        for p in 0..m {
                            r += gamma.symbols[i][(k, p)] * gamma.symbols[p][(l, j)]
                                - gamma.symbols[i][(l, p)] * gamma.symbols[p][(k, j)];
                        }
                        riemann[((i * m + j) * m + k) * m + l] = r;
                    }
                }
            }
        }
        let mut ricci = DMatrix::zeros(m, m);
        for j in 0..m {
            for l in 0..m {
                ricci[(j, l)] = (0..m).map(|k| riemann[((k * m + j) * m + k) * m + l]).sum();
            }
        }
        let ricci = linalg::symmetrize(&ricci);
        let g = self.value(x);
        let ginv = invert(&g);
        let scalar = ginv.component_mul(&ricci).sum();
        Curvature { point: x.to_vec(), dim: m, metric: g, riemann, ricci, scalar }
    }

    /// Doubled metric `g ⊕ (−g)` on `U × U`; its index is always `m`.
    pub fn product_metric(&self) -> MetricField {
        let m = self.dim();
        MetricField {
            domain: self.domain.product(&self.domain),
            index: m,
            components: Arc::new(DirectSum { first: self.components.clone(), second: self.components.clone(), second_sign: -1.0 }),
            derivative_mode: self.derivative_mode,
            second_derivative_mode: self.second_derivative_mode,
            label: format!("{}+(-{})", self.label, self.label),
        }
    }

    /// Causal character of `v` at `x` using the Euclidean auxiliary metric and
    /// the default lightlike band.
    pub fn causal_character(&self, x: &[f64], v: &[f64]) -> Result<CausalCharacter> {
        self.causal_character_with(x, v, &AuxiliaryRiemannian::euclidean(self.dim()), DEFAULT_LIGHTLIKE_TOL)
    }

    pub fn causal_character_with(
        &self,
        x: &[f64],
        v: &[f64],
        aux: &AuxiliaryRiemannian,
        rel_tol: f64,
    ) -> Result<CausalCharacter> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: v.len() });
        }
        if v.iter().all(|&c| c == 0.0) {
            return Err(Error::ZeroVector);
        }
        let g = self.eval(x)?;
        let v = DVector::from_column_slice(v);
        let q = v.dot(&(&g * &v));
        let scale = aux.norm_sq(x, &v);
        Ok(if q.abs() <= rel_tol * scale {
            CausalCharacter::Lightlike
        } else if q < 0.0 {
            CausalCharacter::Timelike
        } else {
            CausalCharacter::Spacelike
        })
    }

    /// `g(x)(u, v)` without checks.
    pub fn inner(&self, x: &[f64], u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        u.dot(&(self.value(x) * v))
    }
}

/// `Γ_ijl = ½(∂_i g_jl + ∂_j g_il − ∂_l g_ij)` stored as `out[l][(i, j)]`.
fn lowered_christoffel(dg: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
    let m = dg.len();
    (0..m)
        .map(|l| {
            DMatrix::from_fn(m, m, |i, j| 0.5 * (dg[i][(j, l)] + dg[j][(i, l)] - dg[l][(i, j)]))
        })
        .collect()
}

fn raise(ginv: &DMatrix<f64>, lowered: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
    let m = lowered.len();
    (0..m)
        .map(|k| {
            let mut acc = DMatrix::zeros(m, m);
            for (l, low) in lowered.iter().enumerate() {
                let c = ginv[(k, l)];
                if c != 0.0 {
                    acc += low * c;
                }
            }
            acc
        })
        .collect()
}

fn central_difference<F>(x: &[f64], h: f64, f: F) -> Vec<DMatrix<f64>>
where
    F: Fn(&[f64]) -> DMatrix<f64>,
{
    let mut y = x.to_vec();
    (0..x.len())
        .map(|k| {
            y[k] = x[k] + h;
            let p = f(&y);
            y[k] = x[k] - h;
            let q = f(&y);
            y[k] = x[k];
            (p - q) / (2.0 * h)
        })
        .collect()
}

/// Inverse of a nonsingular (possibly indefinite) symmetric matrix.
pub fn invert(g: &DMatrix<f64>) -> DMatrix<f64> {
    g.clone().lu().try_inverse().unwrap_or_else(|| DMatrix::from_element(g.nrows(), g.ncols(), f64::NAN))
}

fn solve_sym(g: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    g.clone().lu().solve(b).unwrap_or_else(|| DVector::from_element(b.len(), f64::NAN))
}

/// Christoffel symbols `Γ^k_ij` at a point.
#[derive(Debug, Clone)]
pub struct Christoffel {
    pub point: Vec<f64>,
    pub symbols: Vec<DMatrix<f64>>,
}

impl Christoffel {
    /// The vector `Γ(u, v)` with components `Γ^k_ij u^i v^j`.
    pub fn apply(&self, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.symbols.len(), self.symbols.iter().map(|s| u.dot(&(s * v))))
    }

    /// `Γ(u, ·)` as a matrix acting on the second slot.
    pub fn contract_first(&self, u: &DVector<f64>) -> DMatrix<f64> {
        let m = self.symbols.len();
        let mut out = DMatrix::zeros(m, m);
        for (k, s) in self.symbols.iter().enumerate() {
            out.set_row(k, &(u.transpose() * s));
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.symbols.iter().map(|s| s.amax()).fold(0.0, f64::max)
    }

    /// Frobenius norm of the full array; bounds the bilinear operator norm.
    pub fn norm(&self) -> f64 {
        self.symbols.iter().map(|s| s.norm_squared()).sum::<f64>().sqrt()
    }

    /// Largest violation of `Γ^k_ij = Γ^k_ji`.
    pub fn asymmetry(&self) -> f64 {
        self.symbols.iter().map(linalg::asymmetry).fold(0.0, f64::max)
    }
}

/// Curvature data at a point.
#[derive(Debug, Clone)]
pub struct Curvature {
    pub point: Vec<f64>,
    pub dim: usize,
    pub metric: DMatrix<f64>,
    /// `R^i_jkl` at flat index `((i·m + j)·m + k)·m + l`.
    pub riemann: Vec<f64>,
    pub ricci: DMatrix<f64>,
    pub scalar: f64,
}

impl Curvature {
    pub fn component(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        let m = self.dim;
        self.riemann[((i * m + j) * m + k) * m + l]
    }

    /// `R(x, y)z`.
    pub fn apply(&self, x: &DVector<f64>, y: &DVector<f64>, z: &DVector<f64>) -> DVector<f64> {
        self.operator(x, y) * z
    }

    /// The endomorphism `z ↦ R(x, y)z`.
    pub fn operator(&self, x: &DVector<f64>, y: &DVector<f64>) -> DMatrix<f64> {
        let m = self.dim;
        let mut out = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                let mut s = 0.0;
                for k in 0..m {
                    if x[k] == 0.0 {
                        continue;
                    }
                    for l in 0..m {
                        s += self.component(i, j, k, l) * x[k] * y[l];
                    }
                }
                out[(i, j)] = s;
            }
        }
        out
    }

    /// `g(R(x, y)z, w)`.
    pub fn lowered(&self, x: &DVector<f64>, y: &DVector<f64>, z: &DVector<f64>, w: &DVector<f64>) -> f64 {
        (self.operator(x, y) * z).dot(&(&self.metric * w))
    }

    /// Sectional curvature of the plane spanned by `u`, `v`.
    pub fn sectional(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        let g = &self.metric;
        let guu = u.dot(&(g * u));
        let gvv = v.dot(&(g * v));
        let guv = u.dot(&(g * v));
        self.lowered(u, v, v, u) / (guu * gvv - guv * guv)
    }

    pub fn max_abs(&self) -> f64 {
        self.riemann.iter().fold(0.0, |a, r| a.max(r.abs()))
    }
}

/// `first ⊕ (second_sign · second)` on the product chart.
pub struct DirectSum {
    pub first: Arc<dyn MetricComponents>,
    pub second: Arc<dyn MetricComponents>,
    pub second_sign: f64,
}

impl DirectSum {
    fn block(&self, a: DMatrix<f64>, b: DMatrix<f64>) -> DMatrix<f64> {
        let (m1, m2) = (a.nrows(), b.nrows());
        let mut out = DMatrix::zeros(m1 + m2, m1 + m2);
        out.view_mut((0, 0), (m1, m1)).copy_from(&a);
        out.view_mut((m1, m1), (m2, m2)).copy_from(&(b * self.second_sign));
        out
    }
}

impl MetricComponents for DirectSum {
    fn dim(&self) -> usize {
        self.first.dim() + self.second.dim()
    }

    fn value(&self, x: &[f64]) -> DMatrix<f64> {
        let m1 = self.first.dim();
        self.block(self.first.value(&x[..m1]), self.second.value(&x[m1..]))
    }

    fn first_derivatives(&self, x: &[f64]) -> Option<Vec<DMatrix<f64>>> {
        let (m1, m2) = (self.first.dim(), self.second.dim());
        let a = self.first.first_derivatives(&x[..m1])?;
        let b = self.second.first_derivatives(&x[m1..])?;
        let mut out = Vec::with_capacity(m1 + m2);
        for d in a {
            out.push(self.block(d, DMatrix::zeros(m2, m2)));
        }
        for d in b {
            out.push(self.block(DMatrix::zeros(m1, m1), d));
        }
        Some(out)
    }

    fn second_derivatives(&self, x: &[f64]) -> Option<Vec<Vec<DMatrix<f64>>>> {
        let (m1, m2) = (self.first.dim(), self.second.dim());
        let a = self.first.second_derivatives(&x[..m1])?;
        let b = self.second.second_derivatives(&x[m1..])?;
        let n = m1 + m2;
        let mut out = vec![vec![DMatrix::zeros(n, n); n]; n];
        for k in 0..m1 {
            for l in 0..m1 {
                out[k][l] = self.block(a[k][l].clone(), DMatrix::zeros(m2, m2));
            }
        }
        for k in 0..m2 {
            for l in 0..m2 {
                out[m1 + k][m1 + l] = self.block(DMatrix::zeros(m1, m1), b[k][l].clone());
            }
        }
        Some(out)
    }
}

type MatrixFn = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;

/// A positive-definite reference metric used for lengths, norms and frames.
#[derive(Clone)]
pub struct AuxiliaryRiemannian {
    dim: usize,
    components: Option<MatrixFn>,
}

impl fmt::Debug for AuxiliaryRiemannian {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AuxiliaryRiemannian")
            .field("dim", &self.dim)
            .field("euclidean", &self.components.is_none())
            .finish()
    }
}

impl AuxiliaryRiemannian {
    /// The chart's Euclidean inner product `δ_ij`.
    pub fn euclidean(dim: usize) -> Self {
        Self { dim, components: None }
    }

    pub fn from_fn<F>(dim: usize, f: F) -> Self
    where
        F: Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    {
        Self { dim, components: Some(Arc::new(f)) }
    }

    /// Uses a Riemannian metric field as the auxiliary metric.
    pub fn from_metric(metric: &MetricField) -> Result<Self> {
        if metric.index() != 0 {
            return Err(Error::invalid("auxiliary metric must be Riemannian"));
        }
        let c = metric.components().clone();
        Ok(Self::from_fn(metric.dim(), move |x| linalg::symmetrize(&c.value(x))))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_euclidean(&self) -> bool {
        self.components.is_none()
    }

    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        match &self.components {
            None => DMatrix::identity(self.dim, self.dim),
            Some(f) => f(x),
        }
    }

    pub fn inner(&self, x: &[f64], u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        match &self.components {
            None => u.dot(v),
            Some(f) => u.dot(&(f(x) * v)),
        }
    }

    pub fn norm_sq(&self, x: &[f64], v: &DVector<f64>) -> f64 {
        self.inner(x, v, v)
    }

    pub fn norm(&self, x: &[f64], v: &DVector<f64>) -> f64 {
        self.norm_sq(x, v).max(0.0).sqrt()
    }

    /// Doubled auxiliary metric `g_R ⊕ g_R` on the product chart.
    pub fn doubled(&self) -> Self {
        match &self.components {
            None => Self::euclidean(2 * self.dim),
            Some(f) => {
                let f = f.clone();
                let m = self.dim;
                Self::from_fn(2 * m, move |x| {
                    let mut out = DMatrix::zeros(2 * m, 2 * m);
                    out.view_mut((0, 0), (m, m)).copy_from(&f(&x[..m]));
                    out.view_mut((m, m), (m, m)).copy_from(&f(&x[m..]));
                    out
                })
            }
        }
    }
}

/// A rank-`ν` distribution given by a projector field onto its fibres.
#[derive(Clone)]
pub struct DistributionField {
    pub domain: ChartDomain,
    pub rank: usize,
    projector: MatrixFn,
}

impl DistributionField {
    pub fn new<F>(domain: ChartDomain, rank: usize, projector: F) -> Self
    where
        F: Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    {
        Self { domain, rank, projector: Arc::new(projector) }
    }

    /// Constant distribution spanned by the columns of `basis`.
    pub fn constant_span(domain: ChartDomain, basis: DMatrix<f64>) -> Self {
        let rank = basis.ncols();
        let p = if rank == 0 {
            DMatrix::zeros(basis.nrows(), basis.nrows())
        } else {
            let gram = basis.transpose() * &basis;
            &basis * invert(&gram) * basis.transpose()
        };
        Self::new(domain, rank, move |_| p.clone())
    }

    pub fn projector(&self, x: &[f64]) -> DMatrix<f64> {
        (self.projector)(x)
    }

    /// Largest `‖P² − P‖` and `|tr P − ν|` over a deterministic sample of the
    /// domain.
    pub fn validate(&self) -> Result<()> {
        for x in sample_points(&self.domain, 3) {
            let p = self.projector(&x);
            let defect = (&p * &p - &p).amax().max((p.trace() - self.rank as f64).abs());
            if !(defect <= 1e-10) {
                return Err(Error::ProjectorNotIdempotent { defect });
            }
        }
        Ok(())
    }
}

/// Deterministic grid of `per_axis^m` interior points of a domain (clipped to
/// `[-1, 1]` on unbounded axes); used for validation sampling.
pub fn sample_points(domain: &ChartDomain, per_axis: usize) -> Vec<Vec<f64>> {
    let bx = domain.sampling_box(1.0);
    let m = domain.dim();
    let total = per_axis.pow(m as u32);
    (0..total)
        .map(|mut idx| {
            (0..m)
                .map(|i| {
                    let j = idx % per_axis;
                    idx /= per_axis;
                    let (lo, hi) = bx[i];
                    lo + (hi - lo) * (j as f64 + 0.5) / per_axis as f64
                })
                .collect()
        })
        .collect()
}

/// Metric equal to `g_R` on the `g_R`-orthogonal complement of the
/// distribution and to `−g_R` on the distribution itself.
pub fn metric_from_distribution(dist: &DistributionField, aux: &AuxiliaryRiemannian) -> Result<MetricField> {
    dist.validate()?;
    let m = dist.domain.dim();
    let dist2 = dist.clone();
    let aux2 = aux.clone();
    let comps = FnComponents::new(m, move |x: &[f64]| {
        let gr = aux2.eval(x);
        let q = orthogonal_projector_onto_range(&dist2.projector(x), &gr, dist2.rank);
        let gq = &gr * q;
        linalg::symmetrize(&(&gr - gq * 2.0))
    });
    Ok(MetricField::new(dist.domain.clone(), dist.rank, Arc::new(comps), "from-distribution")?.finite_difference())
}

/// `g_R`-orthogonal projector onto the range of `p` (assumed of rank `rank`).
fn orthogonal_projector_onto_range(p: &DMatrix<f64>, gr: &DMatrix<f64>, rank: usize) -> DMatrix<f64> {
    let m = p.nrows();
    if rank == 0 {
        return DMatrix::zeros(m, m);
    }
    let svd = p.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let basis = DMatrix::from_columns(&order[..rank].iter().map(|&i| u.column(i).into_owned()).collect::<Vec<_>>());
    let gram = basis.transpose() * gr * &basis;
    &basis * invert(&gram) * basis.transpose() * gr
}

/// Projector onto the sum of negative eigenspaces of the `g_R`-self-adjoint
/// operator `A` defined by `g = g_R(A·, ·)`.
pub fn negative_eigenprojector(metric: &MetricField, aux: &AuxiliaryRiemannian, x: &[f64]) -> Result<DMatrix<f64>> {
    let g = metric.eval(x)?;
    let gr = aux.eval(x);
    let m = g.nrows();
    let chol = Cholesky::new(gr).ok_or_else(|| Error::invalid("auxiliary metric is not positive definite"))?;
    let l = chol.l();
    let linv = l.clone().try_inverse().ok_or_else(|| Error::invalid("singular auxiliary metric"))?;
    let c = &linv * &g * linv.transpose();
    let (vals, vecs) = sorted_sym_eigen(&c);
    let neg = vals.iter().filter(|&&v| v < 0.0).count();
    let vn = vecs.columns(0, neg);
    let inner = if neg == 0 { DMatrix::zeros(m, m) } else { &vn * vn.transpose() };
    Ok(linv.transpose() * inner * l.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtins;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn vec(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn sphere_christoffels_match_hand_values() {
        let s2 = builtins::round_sphere(1.0);
        let x = [FRAC_PI_4, 0.3];
        let c = s2.christoffel(&x).unwrap();
        let (s, co) = (FRAC_PI_4.sin(), FRAC_PI_4.cos());
        assert!((c.symbols[0][(1, 1)] + s * co).abs() < 1e-14);
        assert!((c.symbols[1][(0, 1)] - co / s).abs() < 1e-14);
        assert!(c.asymmetry() < 1e-15);
    }

    #[test]
    fn finite_difference_christoffels_match_analytic() {
        // Independent oracle: plain central differences of the components.
        let s2 = builtins::round_sphere(1.0);
        let x = [FRAC_PI_4, 0.0];
        let h = 1e-5;
        let g = |t: f64| DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, t.sin().powi(2)]);
        let dgphi_dtheta = (g(x[0] + h)[(1, 1)] - g(x[0] - h)[(1, 1)]) / (2.0 * h);
        let expected_theta_phiphi = -0.5 * dgphi_dtheta;
        let expected_phi_thetaphi = 0.5 * dgphi_dtheta / g(x[0])[(1, 1)];
        let c = s2.clone().finite_difference().christoffel(&x).unwrap();
        assert!((c.symbols[0][(1, 1)] - expected_theta_phiphi).abs() < 1e-9);
        assert!((c.symbols[1][(1, 0)] - expected_phi_thetaphi).abs() < 1e-9);
    }

    #[test]
    fn sphere_curvature_is_one() {
        let s2 = builtins::round_sphere(1.0);
        for &theta in &[0.3, 1.0, FRAC_PI_2, 2.5] {
            let k = s2.curvature(&[theta, 0.7]).unwrap();
            assert!((k.sectional(&vec(&[1.0, 0.0]), &vec(&[0.0, 1.0])) - 1.0).abs() < 1e-10);
            assert!((k.scalar - 2.0).abs() < 1e-10);
        }
    }

    #[test]
    fn product_metric_blocks() {
        let e2 = builtins::euclidean(2);
        let p = e2.product_metric();
        assert_eq!(p.dim(), 4);
        assert_eq!(p.index(), 2);
        let g = p.eval(&[0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(g, DMatrix::from_diagonal(&vec(&[1.0, 1.0, -1.0, -1.0])));
        let s = builtins::round_sphere(1.0).product_metric();
        assert_eq!(s.signature(&[1.0, 0.0, 2.0, 0.0]), (2, 2, 0));
        assert_eq!(builtins::minkowski().product_metric().index(), 4);
    }

    #[test]
    fn distribution_metric_examples() {
        let d = ChartDomain::unbounded(2, "plane");
        let aux = AuxiliaryRiemannian::euclidean(2);
        let line = DistributionField::constant_span(d.clone(), DMatrix::from_column_slice(2, 1, &[1.0, 0.0]));
        let g = metric_from_distribution(&line, &aux).unwrap();
        assert_eq!(g.index(), 1);
        assert!((g.eval(&[0.3, 0.1]).unwrap() - DMatrix::from_diagonal(&vec(&[-1.0, 1.0]))).amax() < 1e-14);

        let zero = DistributionField::constant_span(d.clone(), DMatrix::zeros(2, 0));
        let g0 = metric_from_distribution(&zero, &aux).unwrap();
        assert!((g0.eval(&[0.0, 0.0]).unwrap() - DMatrix::identity(2, 2)).amax() < 1e-14);

        let full = DistributionField::constant_span(d.clone(), DMatrix::identity(2, 2));
        let gf = metric_from_distribution(&full, &aux).unwrap();
        assert!((gf.eval(&[0.0, 0.0]).unwrap() + DMatrix::identity(2, 2)).amax() < 1e-14);

        let bad = DistributionField::new(d, 1, |_| DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]));
        assert!(matches!(metric_from_distribution(&bad, &aux), Err(Error::ProjectorNotIdempotent { .. })));
    }

    #[test]
    fn eigenprojector_examples() {
        let aux4 = AuxiliaryRiemannian::euclidean(4);
        let p = negative_eigenprojector(&builtins::minkowski(), &aux4, &[0.0; 4]).unwrap();
        assert!((p - DMatrix::from_diagonal(&vec(&[1.0, 0.0, 0.0, 0.0]))).amax() < 1e-14);
        let aux2 = AuxiliaryRiemannian::euclidean(2);
        let p0 = negative_eigenprojector(&builtins::euclidean(2), &aux2, &[0.0; 2]).unwrap();
        assert!(p0.amax() < 1e-14);
        let full = DistributionField::constant_span(ChartDomain::unbounded(2, "plane"), DMatrix::identity(2, 2));
        let neg = metric_from_distribution(&full, &aux2).unwrap();
        let pi = negative_eigenprojector(&neg, &aux2, &[0.2, 0.2]).unwrap();
        assert!((pi - DMatrix::identity(2, 2)).amax() < 1e-12);
    }

    #[test]
    fn causal_characters() {
        let mink = builtins::minkowski();
        let x = [0.0; 4];
        assert_eq!(mink.causal_character(&x, &[1.0, 0.0, 0.0, 0.0]).unwrap(), CausalCharacter::Timelike);
        assert_eq!(mink.causal_character(&x, &[1.0, 1.0, 0.0, 0.0]).unwrap(), CausalCharacter::Lightlike);
        assert_eq!(mink.causal_character(&x, &[0.0, 0.0, 1.0, 0.0]).unwrap(), CausalCharacter::Spacelike);
        assert_eq!(builtins::euclidean(3).causal_character(&[0.0; 3], &[0.1, -2.0, 0.0]).unwrap(), CausalCharacter::Spacelike);
        assert!(matches!(mink.causal_character(&x, &[0.0; 4]), Err(Error::ZeroVector)));
    }

    #[test]
    fn eval_reports_domain_and_degeneracy() {
        let s2 = builtins::round_sphere(1.0);
        assert!(matches!(s2.eval(&[-0.5, 0.0]), Err(Error::OutOfDomain { .. })));
        let degenerate = MetricField::new(
            ChartDomain::unbounded(2, "plane"),
            0,
            Arc::new(FnComponents::new(2, |_: &[f64]| DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0])))),
            "degenerate",
        )
        .unwrap();
        assert!(matches!(degenerate.eval(&[0.0, 0.0]), Err(Error::DegenerateAtPoint { .. })));
    }
}

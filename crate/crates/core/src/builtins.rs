//! Library of metrics with closed-form first and second derivatives.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::domain::ChartDomain;
use crate::error::{Error, Result};
use crate::metric::{MetricComponents, MetricField};

/// Distance kept from coordinate singularities (poles, horizons).
pub const CHART_MARGIN: f64 = 1e-3;

/// Values, gradients and Hessians of the diagonal entries of a diagonal metric.
pub struct DiagonalJet {
    pub values: Vec<f64>,
    /// `grads[i][k] = ∂_k g_ii`
    pub grads: Vec<Vec<f64>>,
    /// `hessians[i][k][l] = ∂_k ∂_l g_ii`
    pub hessians: Vec<Vec<Vec<f64>>>,
}

impl DiagonalJet {
    fn constant(values: Vec<f64>) -> Self {
        let m = values.len();
        Self { values, grads: vec![vec![0.0; m]; m], hessians: vec![vec![vec![0.0; m]; m]; m] }
    }
}

type JetFn = dyn Fn(&[f64]) -> DiagonalJet + Send + Sync;

/// Diagonal components described by their jet.
pub struct Diagonal {
    dim: usize,
    jet: Box<JetFn>,
}

impl Diagonal {
    pub fn new<F>(dim: usize, jet: F) -> Self
    where
        F: Fn(&[f64]) -> DiagonalJet + Send + Sync + 'static,
    {
        Self { dim, jet: Box::new(jet) }
    }
}

impl MetricComponents for Diagonal {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&(self.jet)(x).values.into())
    }

    fn first_derivatives(&self, x: &[f64]) -> Option<Vec<DMatrix<f64>>> {
        let jet = (self.jet)(x);
        let m = self.dim;
        Some((0..m).map(|k| DMatrix::from_fn(m, m, |i, j| if i == j { jet.grads[i][k] } else { 0.0 })).collect())
    }

    fn second_derivatives(&self, x: &[f64]) -> Option<Vec<Vec<DMatrix<f64>>>> {
        let jet = (self.jet)(x);
        let m = self.dim;
        Some(
            (0..m)
                .map(|k| {
                    (0..m)
                        .map(|l| DMatrix::from_fn(m, m, |i, j| if i == j { jet.hessians[i][k][l] } else { 0.0 }))
                        .collect()
                })
                .collect(),
        )
    }
}

fn build(domain: ChartDomain, index: usize, comps: Diagonal, label: &str) -> MetricField {
    MetricField::new(domain, index, Arc::new(comps), label).expect("builtin metric dimensions are consistent")
}

/// Flat metric `δ_ij` on `R^m`.
pub fn euclidean(m: usize) -> MetricField {
    build(
        ChartDomain::unbounded(m, "R^m"),
        0,
        Diagonal::new(m, move |_| DiagonalJet::constant(vec![1.0; m])),
        "euclidean",
    )
}

/// Flat Lorentzian metric `diag(−1, 1, …, 1)` on `R^m`.
pub fn minkowski_n(m: usize) -> MetricField {
    build(
        ChartDomain::unbounded(m, "R^m"),
        1,
        Diagonal::new(m, move |_| {
            let mut v = vec![1.0; m];
            v[0] = -1.0;
            DiagonalJet::constant(v)
        }),
        "minkowski",
    )
}

/// Four-dimensional Minkowski space.
pub fn minkowski() -> MetricField {
    minkowski_n(4)
}

/// Flat metric on `R^m` with every axis identified modulo `period`.
pub fn flat_torus(m: usize, period: f64) -> MetricField {
    let domain = ChartDomain::with_periods(vec![0.0; m], vec![period; m], vec![Some(period); m], "T^m")
        .expect("positive period");
    build(domain, 0, Diagonal::new(m, move |_| DiagonalJet::constant(vec![1.0; m])), "flat_torus")
}

/// Round sphere of radius `r` in colatitude/longitude `(θ, φ)`:
/// `diag(r², r² sin²θ)`, `θ ∈ (ε, π − ε)`, `φ` periodic.
pub fn round_sphere(r: f64) -> MetricField {
    let domain = ChartDomain::with_periods(
        vec![CHART_MARGIN, -PI],
        vec![PI - CHART_MARGIN, PI],
        vec![None, Some(TAU)],
        "S^2 polar chart",
    )
    .expect("valid sphere chart");
    let r2 = r * r;
    build(
        domain,
        0,
        Diagonal::new(2, move |x| {
            let s = x[0].sin();
            let (s2, c2) = (2.0 * x[0]).sin_cos();
            DiagonalJet {
                values: vec![r2, r2 * s * s],
                grads: vec![vec![0.0, 0.0], vec![r2 * s2, 0.0]],
                hessians: vec![vec![vec![0.0; 2]; 2], vec![vec![2.0 * r2 * c2, 0.0], vec![0.0, 0.0]]],
            }
        }),
        "round_sphere",
    )
}

/// Surface of revolution `diag(cos²(z/2), 1)` in `(θ, z)`, `θ` periodic and
/// `|z| < π`. Its Gauss curvature is the constant `1/4`, and every geodesic
/// other than the meridians closes up after length `4π`.
pub fn football() -> MetricField {
    let domain = ChartDomain::with_periods(
        vec![-PI, -PI + CHART_MARGIN],
        vec![PI, PI - CHART_MARGIN],
        vec![Some(TAU), None],
        "football chart",
    )
    .expect("valid football chart");
    build(
        domain,
        0,
        Diagonal::new(2, |x| {
            let z = x[1];
            let c = (0.5 * z).cos();
            DiagonalJet {
                values: vec![c * c, 1.0],
                grads: vec![vec![0.0, -0.5 * z.sin()], vec![0.0, 0.0]],
                hessians: vec![vec![vec![0.0, 0.0], vec![0.0, -0.5 * z.cos()]], vec![vec![0.0; 2]; 2]],
            }
        }),
        "football",
    )
}

/// Schwarzschild metric of mass `mass` in `(t, r, θ, φ)` outside the horizon.
pub fn schwarzschild(mass: f64) -> MetricField {
    let domain = ChartDomain::with_periods(
        vec![f64::NEG_INFINITY, 2.0 * mass + CHART_MARGIN, CHART_MARGIN, -PI],
        vec![f64::INFINITY, f64::INFINITY, PI - CHART_MARGIN, PI],
        vec![None, None, None, Some(TAU)],
        "Schwarzschild exterior",
    )
    .expect("valid Schwarzschild chart");
    build(
        domain,
        1,
        Diagonal::new(4, move |x| {
            let (r, th) = (x[1], x[2]);
            let f = 1.0 - 2.0 * mass / r;
            let f1 = 2.0 * mass / (r * r);
            let f2 = -4.0 * mass / (r * r * r);
            let s = th.sin();
            let (s2t, c2t) = (2.0 * th).sin_cos();
            let mut grads = vec![vec![0.0; 4]; 4];
            let mut hess = vec![vec![vec![0.0; 4]; 4]; 4];
            grads[0][1] = -f1;
            hess[0][1][1] = -f2;
            grads[1][1] = -f1 / (f * f);
            hess[1][1][1] = -f2 / (f * f) + 2.0 * f1 * f1 / (f * f * f);
            grads[2][1] = 2.0 * r;
            hess[2][1][1] = 2.0;
            grads[3][1] = 2.0 * r * s * s;
            grads[3][2] = r * r * s2t;
            hess[3][1][1] = 2.0 * s * s;
            hess[3][1][2] = 2.0 * r * s2t;
            hess[3][2][1] = 2.0 * r * s2t;
            hess[3][2][2] = 2.0 * r * r * c2t;
            DiagonalJet { values: vec![-f, 1.0 / f, r * r, r * r * s * s], grads, hessians: hess }
        }),
        "schwarzschild",
    )
}

/// Names accepted by [`by_name`].
pub const NAMES: &[&str] = &["euclidean", "minkowski", "round_sphere", "flat_torus", "football", "schwarzschild"];

/// Looks up a builtin by name with numeric parameters.
///
/// | name | parameters (defaults) |
/// |---|---|
/// | `euclidean` | `dim` (2) |
/// | `minkowski` | `dim` (4) |
/// | `round_sphere` | `radius` (1) |
/// | `flat_torus` | `dim` (2), `period` (2π) |
/// | `football` | none |
/// | `schwarzschild` | `mass` (1) |
pub fn by_name(name: &str, params: &BTreeMap<String, f64>) -> Result<MetricField> {
    let allowed: &[&str] = match name {
        "euclidean" | "minkowski" => &["dim"],
        "round_sphere" => &["radius"],
        "flat_torus" => &["dim", "period"],
        "football" => &[],
        "schwarzschild" => &["mass"],
        other => return Err(Error::invalid(format!("unknown builtin metric `{other}`"))),
    };
    if let Some(k) = params.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(Error::invalid(format!("builtin `{name}` has no parameter `{k}`")));
    }
    let get = |k: &str, d: f64| params.get(k).copied().unwrap_or(d);
    let dim = |d: f64| -> Result<usize> {
        let v = get("dim", d);
        if v < 1.0 || v.fract() != 0.0 || v > 64.0 {
            return Err(Error::invalid(format!("invalid dimension {v}")));
        }
        Ok(v as usize)
    };
    let positive = |k: &str, d: f64| -> Result<f64> {
        let v = get(k, d);
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::invalid(format!("parameter `{k}` must be positive, got {v}")));
        }
        Ok(v)
    };
    Ok(match name {
        "euclidean" => euclidean(dim(2.0)?),
        "minkowski" => {
            let m = dim(4.0)?;
            if m < 2 {
                return Err(Error::invalid("minkowski needs dim >= 2"));
            }
            minkowski_n(m)
        }
        "round_sphere" => round_sphere(positive("radius", 1.0)?),
        "flat_torus" => flat_torus(dim(2.0)?, positive("period", TAU)?),
        "football" => football(),
        _ => schwarzschild(positive("mass", 1.0)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use proptest::prelude::*;

    fn all() -> Vec<(MetricField, Vec<f64>)> {
        vec![
            (euclidean(3), vec![0.1, -0.2, 0.3]),
            (minkowski(), vec![0.0, 1.0, 2.0, 3.0]),
            (round_sphere(1.0), vec![1.0, 0.5]),
            (round_sphere(2.0), vec![2.0, -1.0]),
            (flat_torus(2, TAU), vec![1.0, 5.0]),
            (football(), vec![0.3, 0.7]),
            (schwarzschild(1.0), vec![0.0, 7.0, 1.1, 0.4]),
        ]
    }

    #[test]
    fn hand_values() {
        assert_eq!(euclidean(2).eval(&[3.0, 4.0]).unwrap(), DMatrix::identity(2, 2));
        assert_eq!(
            minkowski().eval(&[1.0, 2.0, 3.0, 4.0]).unwrap(),
            DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, 1.0, 1.0, 1.0]))
        );
        let g = round_sphere(1.0).eval(&[PI / 2.0, 0.0]).unwrap();
        assert!((g - DMatrix::identity(2, 2)).amax() < 1e-15);
    }

    #[test]
    fn analytic_derivatives_match_finite_differences() {
        for (g, x) in all() {
            let fd = g.clone().finite_difference();
            let a = g.christoffel(&x).unwrap();
            let b = fd.christoffel(&x).unwrap();
            let scale = a.max_abs().max(1.0);
            for k in 0..g.dim() {
                assert!((&a.symbols[k] - &b.symbols[k]).amax() <= 10.0 * 1e-10 * scale + 1e-9, "{}", g.label());
            }
            let ka = g.curvature(&x).unwrap();
            let kb = fd.curvature(&x).unwrap();
            for (ra, rb) in ka.riemann.iter().zip(&kb.riemann) {
                assert!((ra - rb).abs() < 1e-6 * ka.max_abs().max(1.0), "{}", g.label());
            }
        }
    }

    #[test]
    fn football_has_quarter_curvature() {
        let k = football().curvature(&[0.0, 0.9]).unwrap();
        let s = k.sectional(&DVector::from_vec(vec![1.0, 0.0]), &DVector::from_vec(vec![0.0, 1.0]));
        assert!((s - 0.25).abs() < 1e-12);
    }

    #[test]
    fn by_name_validates_parameters() {
        let mut p = BTreeMap::new();
        p.insert("radius".to_string(), 2.0);
        assert_eq!(by_name("round_sphere", &p).unwrap().label(), "round_sphere");
        assert!(by_name("euclidean", &p).is_err());
        assert!(by_name("hyperbolic", &BTreeMap::new()).is_err());
        p.insert("radius".to_string(), -1.0);
        assert!(by_name("round_sphere", &p).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn symmetric_with_constant_signature(u in prop::collection::vec(0.0f64..1.0, 4)) {
            for (g, _) in all() {
                let bx = g.domain().sampling_box(10.0);
                let x: Vec<f64> = (0..g.dim()).map(|i| {
                    let (lo, hi) = bx[i];
                    let (lo, hi) = if g.label() == "schwarzschild" && i == 1 { (2.5, 20.0) } else { (lo, hi) };
                    lo + (hi - lo) * (0.02 + 0.96 * u[i])
                }).collect();
                let raw = g.components().value(&x);
                prop_assert!((&raw - raw.transpose()).amax() <= 1e-12);
                let (pos, neg, zero) = g.signature(&x);
                prop_assert_eq!((pos, neg, zero), (g.dim() - g.index(), g.index(), 0));
            }
        }

        #[test]
        fn connection_is_metric_compatible(
            u in prop::collection::vec(0.05f64..0.95, 4),
            a in prop::collection::vec(-1.0f64..1.0, 12),
        ) {
            // ∂_u g(v,w) = g(Γ(u,v),w) + g(v,Γ(u,w)) with both sides from
            // independent evaluations: a central difference of g on the left.
            let h = 1e-5;
            for (g, _) in all() {
                let m = g.dim();
                let bx = g.domain().sampling_box(10.0);
                let x: Vec<f64> = (0..m).map(|i| {
                    let (lo, hi) = bx[i];
                    let (lo, hi) = if g.label() == "schwarzschild" && i == 1 { (3.0, 20.0) } else { (lo, hi) };
                    lo + (hi - lo) * u[i]
                }).collect();
                let uu = DVector::from_column_slice(&a[0..m]);
                let v = DVector::from_column_slice(&a[4..4 + m]);
                let w = DVector::from_column_slice(&a[8..8 + m]);
                let shift = |s: f64| -> Vec<f64> { x.iter().zip(uu.iter()).map(|(xi, ui)| xi + s * h * ui).collect() };
                let lhs = (g.inner(&shift(1.0), &v, &w) - g.inner(&shift(-1.0), &v, &w)) / (2.0 * h);
                let c = g.christoffel(&x).unwrap();
                let rhs = g.inner(&x, &c.apply(&uu, &v), &w) + g.inner(&x, &v, &c.apply(&uu, &w));
                let scale = g.value(&x).amax().max(1.0);
                prop_assert!((lhs - rhs).abs() <= 100.0 * h * h * scale, "{} {} {}", g.label(), lhs, rhs);
            }
        }

        #[test]
        fn curvature_symmetries(
            u in prop::collection::vec(0.05f64..0.95, 4),
            a in prop::collection::vec(-1.0f64..1.0, 16),
        ) {
            for (g, _) in all() {
                let m = g.dim();
                let bx = g.domain().sampling_box(10.0);
                let x: Vec<f64> = (0..m).map(|i| {
                    let (lo, hi) = bx[i];
                    let (lo, hi) = if g.label() == "schwarzschild" && i == 1 { (3.0, 20.0) } else { (lo, hi) };
                    lo + (hi - lo) * u[i]
                }).collect();
                let k = g.curvature(&x).unwrap();
                let vx = DVector::from_column_slice(&a[0..m]);
                let vy = DVector::from_column_slice(&a[4..4 + m]);
                let vz = DVector::from_column_slice(&a[8..8 + m]);
                let vw = DVector::from_column_slice(&a[12..12 + m]);
                let anti = (k.apply(&vx, &vy, &vz) + k.apply(&vy, &vx, &vz)).amax();
                prop_assert!(anti <= 1e-6);
                let pair = k.lowered(&vx, &vy, &vz, &vw) - k.lowered(&vz, &vw, &vx, &vy);
                prop_assert!(pair.abs() <= 1e-6, "{} {}", g.label(), pair);
            }
        }
    }
}

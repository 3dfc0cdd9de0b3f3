//! Axis-aligned coordinate boxes, optionally with periodic axes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A coordinate chart `U ⊂ R^m` given as a box. Periodic axes are
/// identified modulo their period; `lower` is the start of the fundamental
/// window on those axes and `upper` is ignored for containment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub periods: Vec<Option<f64>>,
    pub label: String,
}

impl ChartDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        let m = lower.len();
        Self::with_periods(lower, upper, vec![None; m], label)
    }

    pub fn with_periods(
        lower: Vec<f64>,
        upper: Vec<f64>,
        periods: Vec<Option<f64>>,
        label: impl Into<String>,
    ) -> Result<Self> {
        let m = lower.len();
        if m == 0 {
            return Err(Error::invalid("chart dimension must be at least 1"));
        }
        if upper.len() != m || periods.len() != m {
            return Err(Error::DimensionMismatch { expected: m, found: upper.len().min(periods.len()) });
        }
        for i in 0..m {
            if lower[i].is_nan() || upper[i].is_nan() || lower[i] >= upper[i] {
                return Err(Error::invalid(format!("axis {i}: lower bound must be below upper bound")));
            }
            if let Some(p) = periods[i] {
                if !(p.is_finite() && p > 0.0 && lower[i].is_finite()) {
                    return Err(Error::invalid(format!("axis {i}: invalid period {p}")));
                }
            }
        }
        Ok(Self { lower, upper, periods, label: label.into() })
    }

    /// The whole of `R^m`.
    pub fn unbounded(m: usize, label: impl Into<String>) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; m],
            upper: vec![f64::INFINITY; m],
            periods: vec![None; m],
            label: label.into(),
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn is_periodic(&self, axis: usize) -> bool {
        self.periods[axis].is_some()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.contains_with_margin(x, 0.0)
    }

    /// Containment with every non-periodic face pushed inward by `margin`.
    pub fn contains_with_margin(&self, x: &[f64], margin: f64) -> bool {
        x.len() == self.dim()
            && x.iter().enumerate().all(|(i, &xi)| {
                xi.is_finite()
                    && (self.periods[i].is_some()
                        || (xi > self.lower[i] + margin && xi < self.upper[i] - margin))
            })
    }

    /// Maps periodic coordinates into their fundamental window.
    pub fn wrap(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, &xi)| match self.periods[i] {
                Some(p) => self.lower[i] + (xi - self.lower[i]).rem_euclid(p),
                None => xi,
            })
            .collect()
    }

    /// `a - b` with periodic components reduced to `(-p/2, p/2]`.
    pub fn displacement(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        a.iter()
            .zip(b)
            .enumerate()
            .map(|(i, (&ai, &bi))| {
                let d = ai - bi;
                match self.periods[i] {
                    Some(p) => {
                        let r = d.rem_euclid(p);
                        if r > 0.5 * p {
                            r - p
                        } else {
                            r
                        }
                    }
                    None => d,
                }
            })
            .collect()
    }

    /// Euclidean distance in chart coordinates, modulo periods.
    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        self.displacement(a, b).iter().map(|d| d * d).sum::<f64>().sqrt()
    }

    /// Cartesian product chart of `self × other`.
    pub fn product(&self, other: &ChartDomain) -> ChartDomain {
        let cat = |a: &[f64], b: &[f64]| a.iter().chain(b).copied().collect::<Vec<_>>();
        ChartDomain {
            lower: cat(&self.lower, &other.lower),
            upper: cat(&self.upper, &other.upper),
            periods: self.periods.iter().chain(&other.periods).copied().collect(),
            label: format!("{}x{}", self.label, other.label),
        }
    }

    /// True when every non-periodic axis has finite bounds.
    pub fn is_bounded(&self) -> bool {
        (0..self.dim()).all(|i| {
            self.periods[i].is_some() || (self.lower[i].is_finite() && self.upper[i].is_finite())
        })
    }

    /// Finite sampling window per axis; infinite bounds are clipped to `±clip`.
    pub fn sampling_box(&self, clip: f64) -> Vec<(f64, f64)> {
        (0..self.dim())
            .map(|i| match self.periods[i] {
                Some(p) => (self.lower[i], self.lower[i] + p),
                None => (self.lower[i].max(-clip), self.upper[i].min(clip)),
            })
            .collect()
    }
}

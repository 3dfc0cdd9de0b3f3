//! Metric components and immersions written as expression strings.
//!
//! Variables are chart coordinates (named per problem, `x0, x1, …` by
//! default) and named constants. Partial derivatives are symbolic, so
//! expression metrics have analytic Christoffel symbols and curvature.

use std::collections::BTreeMap;

use exmex::prelude::*;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::metric::MetricComponents;

/// Names available inside expressions.
#[derive(Debug, Clone, PartialEq)]
pub struct Scope {
    pub coordinates: Vec<String>,
    pub constants: BTreeMap<String, f64>,
}

impl Scope {
    /// Coordinates `x0, …, x{dim-1}` and no constants.
    pub fn default_coordinates(dim: usize) -> Self {
        Self { coordinates: (0..dim).map(|i| format!("x{i}")).collect(), constants: BTreeMap::new() }
    }

    pub fn new(coordinates: Vec<String>, constants: BTreeMap<String, f64>) -> Result<Self> {
        for (i, name) in coordinates.iter().enumerate() {
            if coordinates[..i].contains(name) || constants.contains_key(name) {
                return Err(Error::Expression(format!("name `{name}` is defined twice")));
            }
        }
        Ok(Self { coordinates, constants })
    }

    pub fn dim(&self) -> usize {
        self.coordinates.len()
    }
}

#[derive(Debug, Clone, Copy)]
enum Slot {
    Coordinate(usize),
    Constant(f64),
}

/// A parsed scalar expression in the chart coordinates.
#[derive(Debug, Clone)]
pub struct Expression {
    source: String,
    flat: FlatEx<f64>,
    slots: Vec<Slot>,
}

impl Expression {
    pub fn parse(source: &str, scope: &Scope) -> Result<Self> {
        let flat = exmex::parse::<f64>(source).map_err(|e| Error::Expression(format!("`{source}`: {e}")))?;
        Self::bind(source.to_string(), flat, scope)
    }

    fn bind(source: String, flat: FlatEx<f64>, scope: &Scope) -> Result<Self> {
        let slots = flat
            .var_names()
            .iter()
            .map(|name| {
                if let Some(k) = scope.coordinates.iter().position(|c| c == name) {
                    Ok(Slot::Coordinate(k))
                } else if let Some(&c) = scope.constants.get(name) {
                    Ok(Slot::Constant(c))
                } else {
                    Err(Error::Expression(format!("`{source}`: unknown name `{name}`")))
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self { source, flat, slots })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Value at chart point `x`; domain errors such as `sqrt(-1)` give NaN.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let args: Vec<f64> = self
            .slots
            .iter()
            .map(|s| match *s {
                Slot::Coordinate(k) => x[k],
                Slot::Constant(c) => c,
            })
            .collect();
        self.flat.eval(&args).unwrap_or(f64::NAN)
    }

    /// Symbolic partial derivative along coordinate `k`.
    pub fn partial(&self, k: usize, scope: &Scope) -> Result<Expression> {
        let Some(pos) = self.slots.iter().position(|s| matches!(s, Slot::Coordinate(j) if *j == k)) else {
            return Expression::parse("0", scope);
        };
        let d = self
            .flat
            .clone()
            .partial(pos)
            .map_err(|e| Error::Expression(format!("cannot differentiate `{}`: {e}", self.source)))?;
        Self::bind(format!("d/d{} ({})", scope.coordinates[k], self.source), d, scope)
    }
}

/// Metric components given entrywise by expressions, with symbolic first
/// and second derivatives.
#[derive(Debug, Clone)]
pub struct ExpressionMetric {
    entries: Vec<Expression>,
    first: Vec<Vec<Expression>>,
    second: Vec<Vec<Vec<Expression>>>,
    dim: usize,
}

impl ExpressionMetric {
    /// Parses a full `m × m` table; the table must be symmetric as strings.
    pub fn new(table: &[Vec<String>], scope: &Scope) -> Result<Self> {
        let m = scope.dim();
        if table.len() != m || table.iter().any(|row| row.len() != m) {
            return Err(Error::DimensionMismatch { expected: m, found: table.len() });
        }
        for i in 0..m {
            for j in 0..i {
                if table[i][j].trim() != table[j][i].trim() {
                    return Err(Error::Expression(format!("entries ({i},{j}) and ({j},{i}) differ")));
                }
            }
        }
        // Upper-triangular storage, index i*m + j with i <= j.
        let mut entries = Vec::with_capacity(m * m);
        for (i, row) in table.iter().enumerate() {
            for (j, s) in row.iter().enumerate() {
                entries.push(if j >= i { Expression::parse(s, scope)? } else { Expression::parse("0", scope)? });
            }
        }
        let first = entries.iter().map(|e| (0..m).map(|k| e.partial(k, scope)).collect::<Result<Vec<_>>>()).collect::<Result<Vec<_>>>()?;
        let second = first
            .iter()
            .map(|row| row.iter().map(|e| (0..m).map(|l| e.partial(l, scope)).collect::<Result<Vec<_>>>()).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { entries, first, second, dim: m })
    }

    fn symmetric(&self, f: impl Fn(usize) -> f64) -> DMatrix<f64> {
        let m = self.dim;
        let mut g = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in i..m {
                let v = f(i * m + j);
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        g
    }
}

impl MetricComponents for ExpressionMetric {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> DMatrix<f64> {
        self.symmetric(|e| self.entries[e].eval(x))
    }

    fn first_derivatives(&self, x: &[f64]) -> Option<Vec<DMatrix<f64>>> {
        Some((0..self.dim).map(|k| self.symmetric(|e| self.first[e][k].eval(x))).collect())
    }

    fn second_derivatives(&self, x: &[f64]) -> Option<Vec<Vec<DMatrix<f64>>>> {
        let m = self.dim;
        Some((0..m).map(|k| (0..m).map(|l| self.symmetric(|e| self.second[e][k][l].eval(x))).collect()).collect())
    }
}

/// A vector-valued map given componentwise by expressions in its parameters.
#[derive(Debug, Clone)]
pub struct ExpressionMap {
    components: Vec<Expression>,
}

impl ExpressionMap {
    pub fn new(components: &[String], scope: &Scope) -> Result<Self> {
        Ok(Self { components: components.iter().map(|s| Expression::parse(s, scope)).collect::<Result<_>>()? })
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn eval(&self, u: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.components.len(), self.components.iter().map(|e| e.eval(u)))
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;

    use super::*;
    use crate::builtins;
    use crate::metric::MetricField;

    fn scope(names: &[&str]) -> Scope {
        Scope::new(names.iter().map(|s| s.to_string()).collect(), BTreeMap::new()).unwrap()
    }

    fn table(rows: &[&[&str]]) -> Vec<Vec<String>> {
        rows.iter().map(|r| r.iter().map(|s| s.to_string()).collect()).collect()
    }

    #[test]
    fn evaluates_and_differentiates() {
        let mut constants = BTreeMap::new();
        constants.insert("a".to_string(), 3.0);
        let s = Scope::new(vec!["x".into(), "y".into()], constants).unwrap();
        let e = Expression::parse("a * x^2 * sin(y)", &s).unwrap();
        assert_relative_eq!(e.eval(&[2.0, 0.5]), 12.0 * 0.5f64.sin(), epsilon = 1e-14);
        let dx = e.partial(0, &s).unwrap();
        assert_relative_eq!(dx.eval(&[2.0, 0.5]), 12.0 * 0.5f64.sin(), epsilon = 1e-14);
        let dy = e.partial(1, &s).unwrap();
        assert_relative_eq!(dy.eval(&[2.0, 0.5]), 12.0 * 0.5f64.cos(), epsilon = 1e-14);
        let constant = Expression::parse("2", &s).unwrap();
        assert_eq!(constant.partial(1, &s).unwrap().eval(&[1.0, 1.0]), 0.0);
    }

    #[test]
    fn rejects_bad_input() {
        let s = scope(&["x"]);
        assert!(matches!(Expression::parse("1 +", &s), Err(Error::Expression(_))));
        assert!(matches!(Expression::parse("x * z", &s), Err(Error::Expression(_))));
        assert!(Scope::new(vec!["x".into(), "x".into()], BTreeMap::new()).is_err());
        let asym = table(&[&["1", "x"], &["0", "1"]]);
        assert!(ExpressionMetric::new(&asym, &scope(&["x", "y"])).is_err());
    }

    #[test]
    fn sphere_from_expressions_matches_builtin() {
        let comps = ExpressionMetric::new(&table(&[&["1", "0"], &["0", "sin(th)^2"]]), &scope(&["th", "ph"])).unwrap();
        let builtin = builtins::round_sphere(1.0);
        let metric = MetricField::new(builtin.domain().clone(), 0, std::sync::Arc::new(comps), "sphere").unwrap();
        for x in [[0.7, 0.1], [1.3, 2.0], [2.4, -1.0]] {
            let a = metric.christoffel(&x).unwrap();
            let b = builtin.christoffel(&x).unwrap();
            for k in 0..2 {
                assert!((&a.symbols[k] - &b.symbols[k]).amax() < 1e-13);
            }
            let ra = metric.curvature(&x).unwrap();
            let rb = builtin.curvature(&x).unwrap();
            assert_relative_eq!(ra.component(0, 1, 0, 1), rb.component(0, 1, 0, 1), epsilon = 1e-12);
        }
    }

    #[test]
    fn symbolic_derivatives_match_differences() {
        let s = scope(&["t", "r"]);
        let comps = ExpressionMetric::new(&table(&[&["-(1 - 2/r)", "0"], &["0", "1/(1 - 2/r)"]]), &s).unwrap();
        let x = [0.3, 5.0];
        let h = 1e-5;
        let d = comps.first_derivatives(&x).unwrap();
        let fd = (comps.value(&[x[0], x[1] + h]) - comps.value(&[x[0], x[1] - h])) / (2.0 * h);
        assert!((&d[1] - fd).amax() < 1e-9);
        assert!(d[0].amax() == 0.0);
        let dd = comps.second_derivatives(&x).unwrap();
        assert_relative_eq!(dd[1][1][(0, 0)], 4.0 / 125.0, epsilon = 1e-14);
    }

    #[test]
    fn maps_evaluate_componentwise() {
        let map = ExpressionMap::new(&["cos(u)".into(), "sin(u)".into()], &scope(&["u"])).unwrap();
        let v = map.eval(&[std::f64::consts::FRAC_PI_2]);
        assert_relative_eq!(v[0], 0.0, epsilon = 1e-15);
        assert_relative_eq!(v[1], 1.0);
        assert_eq!(map.len(), 2);
    }
}

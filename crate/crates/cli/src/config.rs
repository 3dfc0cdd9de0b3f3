//! JSON problem configuration.
//!
//! Unknown keys are rejected everywhere. Every command reads the `metric`
//! block plus its own section; the `gec` block is needed by `bvp` and
//! `perturb` and defaults to closed curves for `classify`.

use std::collections::BTreeMap;
use std::sync::Arc;

use geovar::degeneracy::{CensusOptions, ClassifyOptions};
use geovar::expr::{ExpressionMap, ExpressionMetric, Scope};
use geovar::gec::{BvpGuess, BvpOptions, Circle, FnImmersion, Gec, Immersion, PointImmersion};
use geovar::ode::OdeOptions;
use geovar::perturb::{IntervalOptions, MonteCarloOptions, RecheckOptions};
use geovar::report::SCHEMA_VERSION;
use geovar::{builtins, ChartDomain, DerivativeMode, MetricField};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub schema_version: u32,
    pub metric: MetricSpec,
    #[serde(default)]
    pub gec: Option<GecSpec>,
    #[serde(default)]
    pub ode: Option<OdeOptions>,
    #[serde(default)]
    pub geodesic: Option<GeodesicSection>,
    #[serde(default)]
    pub bvp: Option<BvpSection>,
    #[serde(default)]
    pub classify: Option<ClassifySection>,
    #[serde(default)]
    pub census: Option<CensusSection>,
    #[serde(default)]
    pub perturb: Option<PerturbSection>,
}

impl ProblemConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: ProblemConfig = serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn section<'a, T>(&self, value: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
        value.as_ref().ok_or_else(|| CliError::Config(format!("config has no `{name}` section")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Derivatives {
    #[default]
    Analytic,
    FiniteDifference,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum MetricSpec {
    Builtin(BuiltinMetric),
    Components(ComponentMetric),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuiltinMetric {
    pub builtin: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default)]
    pub derivatives: Derivatives,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentMetric {
    /// Full symmetric table of expression strings.
    pub components: Vec<Vec<String>>,
    pub dim: usize,
    pub index: usize,
    pub domain: DomainSpec,
    /// Coordinate names; `x0, x1, …` when omitted.
    #[serde(default)]
    pub coordinates: Option<Vec<String>>,
    #[serde(default)]
    pub constants: BTreeMap<String, f64>,
    #[serde(default)]
    pub derivatives: Derivatives,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    #[serde(default)]
    pub periods: Option<Vec<Option<f64>>>,
}

impl MetricSpec {
    pub fn build(&self) -> Result<MetricField, CliError> {
        let (metric, derivatives) = match self {
            MetricSpec::Builtin(b) => (builtins::by_name(&b.builtin, &b.params)?, b.derivatives),
            MetricSpec::Components(c) => {
                let coords = c.coordinates.clone().unwrap_or_else(|| Scope::default_coordinates(c.dim).coordinates);
                if coords.len() != c.dim {
                    return Err(CliError::Config(format!("{} coordinate names for dimension {}", coords.len(), c.dim)));
                }
                let scope = Scope::new(coords, c.constants.clone())?;
                let comps = ExpressionMetric::new(&c.components, &scope)?;
                let periods = c.domain.periods.clone().unwrap_or_else(|| vec![None; c.dim]);
                let domain = ChartDomain::with_periods(c.domain.lower.clone(), c.domain.upper.clone(), periods, "expression chart")?;
                let metric = MetricField::new(domain, c.index, Arc::new(comps), "expression")?;
                // Reject tables whose signature is wrong at a sample point.
                let centre = metric.domain().sampling_box(1.0).iter().map(|(a, b)| 0.5 * (a + b)).collect::<Vec<_>>();
                metric.eval(&centre)?;
                (metric, c.derivatives)
            }
        };
        Ok(match derivatives {
            Derivatives::Analytic => metric,
            Derivatives::FiniteDifference => metric.finite_difference(),
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum GecSpec {
    Fixed { p: Vec<f64>, q: Vec<f64> },
    Product { first: ImmersionSpec, second: ImmersionSpec },
    Diagonal,
    /// A map from a parameter box into `M × M`, one expression per coordinate.
    Parametrized {
        parameters: Vec<String>,
        components: Vec<String>,
        bounds: Vec<(f64, f64)>,
        #[serde(default)]
        periods: Option<Vec<Option<f64>>>,
        #[serde(default)]
        constants: BTreeMap<String, f64>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ImmersionSpec {
    Point {
        at: Vec<f64>,
    },
    Circle {
        center: [f64; 2],
        radius: f64,
    },
    Map {
        parameters: Vec<String>,
        components: Vec<String>,
        bounds: Vec<(f64, f64)>,
        #[serde(default)]
        periods: Option<Vec<Option<f64>>>,
        #[serde(default)]
        constants: BTreeMap<String, f64>,
    },
}

fn expression_immersion(
    parameters: &[String],
    components: &[String],
    bounds: &[(f64, f64)],
    periods: &Option<Vec<Option<f64>>>,
    constants: &BTreeMap<String, f64>,
) -> Result<FnImmersion, CliError> {
    if bounds.len() != parameters.len() {
        return Err(CliError::Config("one parameter bound per parameter is required".into()));
    }
    let scope = Scope::new(parameters.to_vec(), constants.clone())?;
    let map = ExpressionMap::new(components, &scope)?;
    let target = map.len();
    let mut imm = FnImmersion::new(parameters.len(), target, bounds.to_vec(), move |u| map.eval(u));
    if let Some(p) = periods {
        if p.len() != parameters.len() {
            return Err(CliError::Config("one period entry per parameter is required".into()));
        }
        imm = imm.with_periods(p.clone());
    }
    Ok(imm)
}

impl ImmersionSpec {
    fn build(&self) -> Result<Arc<dyn Immersion>, CliError> {
        Ok(match self {
            ImmersionSpec::Point { at } => Arc::new(PointImmersion(at.clone())),
            ImmersionSpec::Circle { center, radius } => {
                if !(*radius > 0.0) {
                    return Err(CliError::Config("circle radius must be positive".into()));
                }
                Arc::new(Circle { center: *center, radius: *radius })
            }
            ImmersionSpec::Map { parameters, components, bounds, periods, constants } => {
                Arc::new(expression_immersion(parameters, components, bounds, periods, constants)?)
            }
        })
    }
}

impl GecSpec {
    pub fn build(&self, dim: usize) -> Result<Gec, CliError> {
        let gec = match self {
            GecSpec::Fixed { p, q } => Gec::FixedPoints { p: p.clone(), q: q.clone() },
            GecSpec::Product { first, second } => Gec::Product { first: first.build()?, second: second.build()? },
            GecSpec::Diagonal => Gec::Diagonal { dim },
            GecSpec::Parametrized { parameters, components, bounds, periods, constants } => {
                Gec::Parametrized { map: Arc::new(expression_immersion(parameters, components, bounds, periods, constants)?) }
            }
        };
        gec.validate(dim)?;
        Ok(gec)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeodesicSection {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub duration: f64,
    /// Equally spaced rows in the trajectory CSV.
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_periodicity_tol")]
    pub periodicity_tol: f64,
}

fn default_samples() -> usize {
    201
}

fn default_periodicity_tol() -> f64 {
    1e-6
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BvpSection {
    pub guess: BvpGuess,
    #[serde(default)]
    pub options: Option<BvpOptions>,
    #[serde(default)]
    pub classify: Option<ClassifyOptions>,
    #[serde(default = "default_true")]
    pub admissibility: bool,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifySection {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub duration: f64,
    #[serde(default)]
    pub options: Option<ClassifyOptions>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CensusSection {
    pub bounds: Vec<(f64, f64)>,
    pub a: f64,
    pub b: f64,
    #[serde(default)]
    pub options: Option<CensusOptions>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TargetSpec {
    /// The auxiliary Riemannian metric.
    #[default]
    Auxiliary,
    Zero,
    /// A constant symmetric matrix.
    Constant(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbSection {
    pub guess: BvpGuess,
    #[serde(default)]
    pub bvp: Option<BvpOptions>,
    #[serde(default)]
    pub classify: Option<ClassifyOptions>,
    #[serde(default)]
    pub target: TargetSpec,
    #[serde(default)]
    pub interval: IntervalOptions,
    /// Tube radius; a tenth of the interval's chart length when omitted.
    #[serde(default)]
    pub radius: Option<f64>,
    #[serde(default = "default_epsilons")]
    pub epsilons: Vec<f64>,
    #[serde(default)]
    pub recheck: Option<RecheckOptions>,
    #[serde(default)]
    pub montecarlo: Option<MonteCarloSection>,
    /// Grid size per tube axis for the bump-field CSV; no CSV when zero.
    #[serde(default)]
    pub field_samples: usize,
}

fn default_epsilons() -> Vec<f64> {
    vec![1e-2, -1e-2]
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloSection {
    pub trials: usize,
    pub epsilon: f64,
    #[serde(default)]
    pub options: Option<MonteCarloOptions>,
}

/// The derivative mode actually used, for reports.
pub fn derivative_label(metric: &MetricField) -> &'static str {
    match metric.derivative_mode() {
        DerivativeMode::Analytic => "analytic",
        DerivativeMode::FiniteDifference(_) => "finite_difference",
    }
}

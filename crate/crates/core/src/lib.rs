//! Numerical toolkit for geodesic variational problems on semi-Riemannian
//! metrics of arbitrary index, working in a single coordinate chart.
//!
//! The crate is organised bottom-up:
//!
//! - [`metric`] and [`builtins`]: metric fields, Christoffel symbols, curvature,
//!   product metrics and the distribution/metric correspondence.
//! - [`ode`] and [`flow`]: an embedded Runge–Kutta integrator with dense output,
//!   geodesics, the exponential map, parallel transport, periodicity.
//! - [`variational`]: Jacobi fields, conjugate points, monodromy, first
//!   variation and the discretized index form.
//! - [`gec`]: general endpoint conditions, boundary-value solving and the
//!   shooting count of boundary Jacobi fields.
//! - [`degeneracy`]: classification of critical geodesics and the periodic census.
//! - [`perturb`]: compactly supported metric bumps that break degeneracy.
//! - [`obstruction`]: topological existence verdicts for metrics of given index.

pub mod builtins;
pub mod degeneracy;
pub mod domain;
pub mod error;
pub mod expr;
pub mod flow;
pub mod gec;
pub mod linalg;
pub mod metric;
pub mod obstruction;
pub mod ode;
pub mod perturb;
pub mod report;
pub mod variational;

pub use domain::ChartDomain;
pub use error::{Error, Result};
pub use metric::{AuxiliaryRiemannian, DerivativeMode, MetricField};

//! End-to-end use of the public API: expression metrics through the
//! geodesic, conjugate point and report layers.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::Arc;

use geovar::expr::{ExpressionMetric, Scope};
use geovar::flow;
use geovar::obstruction::{self, ManifoldDescriptor};
use geovar::ode::OdeOptions;
use geovar::report::{self, Envelope};
use geovar::variational;
use geovar::{builtins, MetricField};

fn expression_sphere(radius: f64) -> MetricField {
    let scope = Scope::new(vec!["th".into(), "ph".into()], BTreeMap::from([("r".to_string(), radius)])).unwrap();
    let table = vec![vec!["r^2".to_string(), "0".to_string()], vec!["0".to_string(), "r^2*sin(th)^2".to_string()]];
    let comps = ExpressionMetric::new(&table, &scope).unwrap();
    let domain = builtins::round_sphere(radius).domain().clone();
    MetricField::new(domain, 0, Arc::new(comps), "expression sphere").unwrap()
}

#[test]
fn expression_sphere_geodesics_match_builtin() {
    let opts = OdeOptions::default();
    let x = [1.1, 0.2];
    let v = [0.3, 0.4];
    let a = flow::integrate_geodesic(&expression_sphere(2.0), &x, &v, 3.0, &opts).unwrap();
    let b = flow::integrate_geodesic(&builtins::round_sphere(2.0), &x, &v, 3.0, &opts).unwrap();
    assert!((a.state(3.0) - b.state(3.0)).amax() < 1e-9);
}

#[test]
fn expression_sphere_first_conjugate_point_is_antipodal() {
    let radius = 2.0;
    let path = flow::integrate_geodesic(&expression_sphere(radius), &[FRAC_PI_2, 0.0], &[0.0, 1.0 / radius], 4.0 * PI, &OdeOptions::default())
        .unwrap();
    let points = variational::conjugate_points(&path, &OdeOptions::default()).unwrap();
    assert!((points[0].t - PI * radius).abs() < 1e-6);
}

#[test]
fn verdict_report_round_trips() {
    let verdict = obstruction::metric_exists(&ManifoldDescriptor::Sphere { dim: 5 }, 1).unwrap();
    let text = report::to_json(&Envelope::new("obstruct", &verdict)).unwrap();
    let value: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(value["schema_version"], 1);
    assert_eq!(value["command"], "obstruct");
    assert_eq!(value["exists"], "yes");
    assert!(text.ends_with('\n'));
}

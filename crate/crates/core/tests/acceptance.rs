//! Acceptance criteria. Each criterion prints one PASS/FAIL line; the
//! process fails if any criterion fails.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::panic::{self, AssertUnwindSafe};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use geovar::degeneracy::{self, ClassifyOptions, DegeneracyKind};
use geovar::flow::{self, GeodesicPath};
use geovar::gec::{self, AdmissibilityOptions, AdmissibilityVerdict, BvpGuess, BvpOptions, Circle, FnImmersion, Gec, PointImmersion};
use geovar::obstruction::{self, Existence, ManifoldDescriptor, Surface};
use geovar::ode::OdeOptions;
use geovar::perturb::{self, EffectiveField, IntervalOptions, KTarget, MonteCarloOptions, RecheckOptions, Scenario};
use geovar::variational::{self, FieldAlong, JacobiSolution};
use geovar::{builtins, AuxiliaryRiemannian, Error, MetricField};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

/// `(label, |g(γ̇,γ̇) − c|, c)` for every geodesic integrated by the suite.
static CONSERVATION: Mutex<Vec<(String, f64, f64)>> = Mutex::new(Vec::new());

fn track(label: &str, path: &GeodesicPath) {
    CONSERVATION.lock().unwrap().push((label.to_string(), path.conservation_error(), path.speed));
}

fn integrate(label: &str, metric: &MetricField, x: &[f64], v: &[f64], t: f64) -> Result<GeodesicPath, String> {
    let path = flow::integrate_geodesic(metric, x, v, t, &OdeOptions::default()).map_err(|e| format!("{label}: {e}"))?;
    ensure!(path.is_complete(), "{label}: integration stopped early ({:?})", path.status);
    track(label, &path);
    Ok(path)
}

fn err(e: Error) -> String {
    e.to_string()
}

fn random_point(rng: &mut ChaCha8Rng, m: usize, half_width: f64) -> Vec<f64> {
    (0..m).map(|_| rng.gen_range(-half_width..half_width)).collect()
}

fn flatness() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let metrics = [builtins::euclidean(2), builtins::euclidean(3), builtins::euclidean(4), builtins::minkowski()];
    let (mut analytic, mut fd) = (0.0f64, 0.0f64);
    for metric in &metrics {
        let fd_metric = metric.clone().finite_difference();
        for _ in 0..100 {
            let x = random_point(&mut rng, metric.dim(), 10.0);
            analytic = analytic.max(metric.christoffel(&x).map_err(err)?.max_abs()).max(metric.curvature(&x).map_err(err)?.max_abs());
            fd = fd.max(fd_metric.christoffel(&x).map_err(err)?.max_abs()).max(fd_metric.curvature(&x).map_err(err)?.max_abs());
        }
    }
    let secs = started.elapsed().as_secs_f64();
    ensure!(analytic <= 1e-12, "analytic max norm {analytic:e}");
    ensure!(fd <= 1e-6, "finite-difference max norm {fd:e}");
    ensure!(secs < 1.0, "took {secs:.3} s");
    Ok(format!("analytic {analytic:.1e}, finite difference {fd:.1e}, {secs:.3} s"))
}

fn vacuum() -> Outcome {
    let started = Instant::now();
    let metric = builtins::schwarzschild(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let x = [rng.gen_range(-5.0..5.0), rng.gen_range(4.0..20.0), rng.gen_range(0.3..PI - 0.3), rng.gen_range(-PI..PI)];
        worst = worst.max(metric.curvature(&x).map_err(err)?.ricci.amax());
    }
    let secs = started.elapsed().as_secs_f64();
    ensure!(worst <= 1e-5, "Ricci max norm {worst:e}");
    ensure!(secs < 5.0, "took {secs:.3} s");
    Ok(format!("Ricci max norm {worst:.1e}, {secs:.3} s"))
}

fn conjugate_points() -> Outcome {
    // Base colatitudes and headings (from the θ axis) chosen so the great
    // circles stay inside the polar chart.
    let starts: [(f64, f64); 5] = [(FRAC_PI_2, 1.57), (1.2, 1.2), (1.9, 2.0), (1.4, 2.5), (1.7, 0.9)];
    let mut worst = 0.0f64;
    for radius in [1.0, 2.0] {
        let metric = builtins::round_sphere(radius);
        for &(theta, heading) in &starts {
            let v = [heading.cos() / radius, heading.sin() / (radius * theta.sin())];
            let expected = PI * radius;
            let path = integrate("sphere great circle", &metric, &[theta, 0.3], &v, 1.3 * expected)?;
            ensure!((path.speed - 1.0).abs() < 1e-12, "not unit speed");
            let points = variational::conjugate_points(&path, &OdeOptions::default()).map_err(err)?;
            let first = points.first().ok_or("no conjugate point")?;
            ensure!(first.multiplicity == 1, "multiplicity {}", first.multiplicity);
            worst = worst.max((first.t - expected).abs());
            ensure!((first.t - expected).abs() <= 1e-6, "radius {radius}: t* = {} (expected {expected})", first.t);
        }
    }
    Ok(format!("10 geodesics, worst |t* − πr| = {worst:.1e}"))
}

fn conservation_and_order() -> Outcome {
    // Closure error of a tilted great circle with fixed steps h and h/2.
    let metric = builtins::round_sphere(1.0);
    let (theta, heading) = (FRAC_PI_2, 1.0f64);
    let v = [heading.cos(), heading.sin()];
    let closure = |steps: usize| -> Result<f64, String> {
        let opts = OdeOptions::fixed(TAU / steps as f64);
        let path = flow::integrate_geodesic(&metric, &[theta, 0.0], &v, TAU, &opts).map_err(err)?;
        track("fixed-step great circle", &path);
        let start = path.state(0.0);
        let end = path.state(TAU);
        let dx = metric.domain().displacement(&[end[0], end[1]], &[start[0], start[1]]);
        Ok((dx[0].hypot(dx[1])).hypot((end[2] - start[2]).hypot(end[3] - start[3])))
    };
    let coarse = closure(64)?;
    let fine = closure(128)?;
    let ratio = coarse / fine;
    ensure!(ratio >= 8.0, "closure error ratio {ratio:.2} ({coarse:e} → {fine:e})");
    let log = CONSERVATION.lock().unwrap();
    let mut worst = 0.0f64;
    for (label, e, c) in log.iter() {
        let rel = e / (1.0 + c.abs());
        worst = worst.max(rel);
        ensure!(rel <= 1e-8, "{label}: |g(γ̇,γ̇) − c| = {e:e} with c = {c}");
    }
    Ok(format!("{} geodesics, worst relative drift {worst:.1e}; halving the step cuts closure error {ratio:.1}×", log.len()))
}

fn solve(label: &str, metric: &MetricField, gec: &Gec, guess: BvpGuess) -> Result<gec::BvpSolution, String> {
    let sol = gec::solve_gp_geodesic(metric, gec, &guess, &BvpOptions::default()).map_err(|e| format!("{label}: {e}"))?;
    track(label, &sol.path);
    Ok(sol)
}

fn oracle_equivalence() -> Outcome {
    let e2 = builtins::euclidean(2);
    let s2 = builtins::round_sphere(1.0);
    let fb = builtins::football();
    let circle_to_point =
        Gec::Product { first: Arc::new(Circle { center: [0.0, 0.0], radius: 1.0 }), second: Arc::new(PointImmersion(vec![3.0, 0.0])) };
    let cases: Vec<(&str, MetricField, Gec, BvpGuess, Option<usize>)> = vec![
        (
            "Euclidean fixed endpoints",
            e2.clone(),
            Gec::FixedPoints { p: vec![0.0, 0.0], q: vec![1.0, 2.0] },
            BvpGuess { params: vec![], velocity: vec![1.0, 2.0], duration: 1.0 },
            Some(0),
        ),
        (
            "S² antipodal",
            s2.clone(),
            Gec::FixedPoints { p: vec![FRAC_PI_2, 0.0], q: vec![FRAC_PI_2, PI] },
            BvpGuess { params: vec![], velocity: vec![0.0, 1.0], duration: PI },
            Some(1),
        ),
        (
            "S² sub-antipodal",
            s2,
            Gec::FixedPoints { p: vec![FRAC_PI_2, 0.0], q: vec![FRAC_PI_2, PI - 0.5] },
            BvpGuess { params: vec![], velocity: vec![0.0, 1.0], duration: PI - 0.5 },
            Some(0),
        ),
        ("circle to point", e2, circle_to_point, BvpGuess { params: vec![0.2], velocity: vec![2.0, -0.1], duration: 1.0 }, Some(0)),
        (
            "football diagonal",
            fb,
            Gec::Diagonal { dim: 2 },
            BvpGuess { params: vec![0.0, 0.05], velocity: vec![1.02, 0.0], duration: TAU },
            None,
        ),
    ];
    let mut summary = Vec::new();
    for (label, metric, gec, guess, expected) in cases {
        let sol = solve(label, &metric, &gec, guess)?;
        let shooting = gec::pjacobi_shooting(&sol, &gec, &OdeOptions::default()).map_err(err)?.dimension;
        let expected = match expected {
            Some(d) => d,
            None => {
                let aux = AuxiliaryRiemannian::euclidean(metric.dim());
                variational::monodromy(&sol.path, &aux, &OdeOptions::default()).map_err(err)?.fixed_dimension
            }
        };
        ensure!(shooting == expected, "{label}: shooting dimension {shooting}, expected {expected}");
        for n in [32, 64, 128] {
            let op = variational::index_form(&sol.path, &gec, n).map_err(err)?;
            ensure!(op.kernel_dimension == shooting, "{label}, {n} elements: index-form kernel {} vs shooting {shooting}", op.kernel_dimension);
        }
        summary.push(format!("{label} {shooting}"));
    }
    Ok(summary.join(", "))
}

fn max_norm(j: &JacobiSolution) -> f64 {
    (0..=2000).map(|k| j.eval(j.t_end() * k as f64 / 2000.0).0.norm()).fold(0.0, f64::max)
}

fn strong_degeneracy() -> Outcome {
    let opts = OdeOptions::default();
    let aux = AuxiliaryRiemannian::euclidean(2);
    let fb = builtins::football();
    let once = integrate("football equator", &fb, &[0.0, 0.0], &[1.0, 0.0], TAU)?;
    let twice = degeneracy::iterate(&once, 2).map_err(err)?;
    track("football double cover", &twice);
    let mono = variational::monodromy(&twice, &aux, &opts).map_err(err)?;
    let witness = degeneracy::strongly_degenerate_check(&twice, 2, &mono.fixed_space, &opts).map_err(err)?.ok_or("no witness on the double cover")?;
    ensure!(witness.k == 2, "k = {}", witness.k);
    ensure!(witness.residual <= 1e-6, "witness residual {:e}", witness.residual);

    // Bumps around the first pass, seen by the witness on both passes.
    let j = &witness.jacobi;
    let j_norm = max_norm(j);
    let first_pass = variational::propagate_jacobi(&once, &j.initial_value, &j.initial_derivative, &opts).map_err(err)?;
    let field = EffectiveField::single(first_pass);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut built, mut attempts, mut worst) = (0, 0, 0.0f64);
    while built < 20 {
        attempts += 1;
        ensure!(attempts < 400, "only {built} bumps could be placed");
        let len = rng.gen_range(0.4..1.2);
        let start = rng.gen_range(0.1..(TAU - len - 0.1));
        let rho = perturb::default_radius(&once, start, start + len);
        let interval = perturb::Interval { start, end: start + len, margin: 0.0, clearance: 0.0 };
        let b = DMatrix::from_fn(2, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let Ok(bump) = perturb::build_bump(&field, &interval, KTarget::Constant(&b * b.transpose()), rho) else { continue };
        let value = perturb::mixed_derivative(&bump, j);
        let bound = 1e-6 * bump.derivative_scale() * j_norm;
        worst = worst.max(value.abs() / (bump.derivative_scale() * j_norm));
        ensure!(value.abs() <= bound, "bump {built}: mixed derivative {value:e} exceeds {bound:e}");
        built += 1;
    }

    let torus = builtins::flat_torus(2, 1.0);
    let loop1 = integrate("flat torus loop", &torus, &[0.1, 0.2], &[1.0, 0.0], 1.0)?;
    let loop2 = degeneracy::iterate(&loop1, 2).map_err(err)?;
    let mono = variational::monodromy(&loop2, &aux, &opts).map_err(err)?;
    let none = degeneracy::strongly_degenerate_check(&loop2, 2, &mono.fixed_space, &opts).map_err(err)?;
    ensure!(none.is_none(), "flat torus double cover has a witness");
    Ok(format!("witness residual {:.1e}; 20 bumps, worst relative mixed derivative {worst:.1e}; torus clean", witness.residual))
}

fn perturbation_efficacy() -> Outcome {
    let started = Instant::now();
    let gec = Gec::FixedPoints { p: vec![FRAC_PI_2, 0.0], q: vec![FRAC_PI_2, PI] };
    let guess = BvpGuess { params: vec![], velocity: vec![0.0, 1.0], duration: PI };
    let scenario = Scenario::solve(builtins::round_sphere(1.0), gec, &guess, &BvpOptions::default()).map_err(err)?;
    track("S² antipodal", &scenario.base.path);
    let field = scenario.effective_field(&ClassifyOptions::default()).map_err(err)?;
    let target = KTarget::Auxiliary(AuxiliaryRiemannian::euclidean(2));
    let bump = perturb::bump_for(&field, target, &IntervalOptions::default()).map_err(err)?;
    let path = field.path();
    let iv = bump.interval;
    let ramp = 0.1 * iv.length();
    let (mut on_curve, mut derivative) = (0.0f64, 0.0f64);
    for k in 0..=400 {
        let t = iv.start + iv.length() * k as f64 / 400.0;
        let x = path.position(t);
        on_curve = on_curve.max(bump.value(x.as_slice()).norm());
        if t >= iv.start + ramp && t <= iv.end - ramp {
            let dh = bump.directional(x.as_slice(), &field.value(t));
            derivative = derivative.max((dh - bump.target_on_curve(t)).norm());
        }
    }
    ensure!(on_curve <= 1e-8, "h on the curve {on_curve:e}");
    ensure!(derivative <= 1e-4, "∇_W h − K = {derivative:e}");
    let mixed = perturb::mixed_derivative(&bump, &field.jacobi);
    ensure!(mixed > 0.0, "mixed derivative {mixed:e}");
    let recheck = perturb::apply_and_recheck(&scenario, &bump, 1e-2, &RecheckOptions::default()).map_err(err)?;
    ensure!(recheck.report.kind == DegeneracyKind::Nondegenerate, "recheck gave {:?}", recheck.report.kind);
    let gap = recheck.kernel_gap.unwrap_or(0.0);
    ensure!(gap > 0.0, "kernel gap {gap}");
    let trial = perturb::genericity_montecarlo(&scenario, 100, 1e-2, 7, &MonteCarloOptions::default()).map_err(err)?;
    ensure!(trial.nondegenerate_fraction >= 0.95, "nondegenerate fraction {}", trial.nondegenerate_fraction);
    let secs = started.elapsed().as_secs_f64();
    ensure!(secs < 60.0, "took {secs:.1} s");
    Ok(format!(
        "h on curve {on_curve:.1e}, ∇_W h − K {derivative:.1e}, mixed derivative {mixed:.4}, kernel gap {gap:.3}, fraction {:.2}, {secs:.1} s",
        trial.nondegenerate_fraction
    ))
}

fn admissibility() -> Outcome {
    let e = builtins::euclidean(2);
    let opts = AdmissibilityOptions::default();
    let verdict = |gec: &Gec| gec::check_admissibility(gec, &e, &opts).map_err(err);
    let fixed = verdict(&Gec::FixedPoints { p: vec![0.0, 0.0], q: vec![3.0, 4.0] })?;
    ensure!(fixed.verdict == AdmissibilityVerdict::Admissible, "fixed endpoints: {:?}", fixed.verdict);
    let diagonal = gec::check_admissibility(&Gec::Diagonal { dim: 2 }, &builtins::football(), &opts).map_err(err)?;
    ensure!(diagonal.verdict == AdmissibilityVerdict::NotAdmissible, "diagonal: {:?}", diagonal.verdict);
    let circles = Gec::Product {
        first: Arc::new(Circle { center: [0.0, 0.0], radius: 1.0 }),
        second: Arc::new(Circle { center: [1.0, 0.0], radius: 1.0 }),
    };
    let pair = verdict(&circles)?;
    ensure!(pair.verdict == AdmissibilityVerdict::Admissible, "circle pair: {:?}", pair.verdict);
    let tangent = Gec::Parametrized {
        map: Arc::new(FnImmersion::new(1, 4, vec![(-1.0, 1.0)], |u| DVector::from_vec(vec![u[0], 0.0, u[0], u[0] * u[0]]))),
    };
    let touching = verdict(&tangent)?;
    ensure!(touching.verdict == AdmissibilityVerdict::NotAdmissible, "tangent condition: {:?}", touching.verdict);
    ensure!(!touching.nondegenerate_restriction, "tangent condition restriction reported nondegenerate");
    let at_tangency = gec::boundary_geometry(&tangent, &e, &[0.0]);
    ensure!(matches!(at_tangency, Err(Error::DegenerateRestriction { .. })), "no DegenerateRestriction at the tangency");
    Ok("fixed admissible, diagonal not, circle pair admissible, tangent not (degenerate restriction)".into())
}

fn obstruction_table() -> Outcome {
    let started = Instant::now();
    let surface = |s| ManifoldDescriptor::Surface { surface: s };
    let mut cases: Vec<(String, ManifoldDescriptor, usize, Existence)> = vec![
        ("S², 1".into(), surface(Surface::Sphere), 1, Existence::No),
        ("T², 1".into(), surface(Surface::Torus), 1, Existence::Yes),
        ("Klein, 1".into(), surface(Surface::KleinBottle), 1, Existence::Yes),
        (
            "noncompact R⁴, 1".into(),
            ManifoldDescriptor::Generic { compact: false, orientable: true, dim: 4, euler_characteristic: None },
            1,
            Existence::Yes,
        ),
    ];
    for nu in 0..=3 {
        cases.push((format!("S³, {nu}"), ManifoldDescriptor::Sphere { dim: 3 }, nu, Existence::Yes));
    }
    for nu in 1..=3 {
        cases.push((format!("S⁴, {nu}"), ManifoldDescriptor::Sphere { dim: 4 }, nu, Existence::No));
    }
    for nu in 0..=7 {
        cases.push((format!("S⁷, {nu}"), ManifoldDescriptor::Sphere { dim: 7 }, nu, Existence::Yes));
    }
    for (label, desc, nu, expected) in &cases {
        let v = obstruction::metric_exists(desc, *nu).map_err(err)?;
        ensure!(v.exists == *expected, "{label}: {:?} by {}", v.exists, v.rule);
    }
    let secs = started.elapsed().as_secs_f64();
    ensure!(secs < 0.1, "took {secs:.4} s");
    Ok(format!("{} verdicts match, {:.1} ms", cases.len(), secs * 1e3))
}

fn energy_iterate_law() -> Outcome {
    let aux = AuxiliaryRiemannian::euclidean(2);
    let s2 = builtins::round_sphere(1.0);
    let fb = builtins::football();
    let loops = [
        ("S² equator", integrate("S² equator", &s2, &[FRAC_PI_2, 0.0], &[0.0, 1.0], TAU)?),
        ("football equator", integrate("football equator", &fb, &[0.0, 0.0], &[1.0, 0.0], TAU)?),
    ];
    let total = |p: &GeodesicPath| p.t_end() * flow::riem_length_energy(p, &aux).energy_r;
    let mut worst = 0.0f64;
    for (label, path) in &loops {
        let base = total(path);
        for n in [2usize, 3] {
            let it = degeneracy::iterate(path, n).map_err(err)?;
            let rel = (total(&it) / base - (n * n) as f64).abs() / (n * n) as f64;
            worst = worst.max(rel);
            ensure!(rel <= 1e-8, "{label}, n = {n}: relative error {rel:e}");
        }
    }
    Ok(format!("worst relative deviation from n² {worst:.1e}"))
}

fn census() -> Outcome {
    let fb = builtins::football();
    let bounds = [(-PI, PI), (-0.3, 0.3)];
    let prime = 2.0 * PI * PI;
    let opts = degeneracy::CensusOptions { positions_per_axis: 3, directions: 4, trial_periods: 2, ..Default::default() };
    let run = |threads: usize, a: f64, b: f64| -> Result<(degeneracy::CensusResult, String), String> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| e.to_string())?;
        let r = pool.install(|| degeneracy::periodic_census(&fb, &bounds, a, b, &opts, &OdeOptions::default())).map_err(err)?;
        let orbits = serde_json::to_string(&r.orbits).map_err(|e| e.to_string())?;
        Ok((r, orbits))
    };
    let (single, one_thread) = run(1, prime + 1.0, prime + 1.0)?;
    let (_, eight_threads) = run(8, prime + 1.0, prime + 1.0)?;
    ensure!(one_thread == eight_threads, "census differs between 1 and 8 threads");
    ensure!(single.orbits.len() == 1, "{} orbits", single.orbits.len());
    let orbit = &single.orbits[0];
    ensure!(orbit.position[1].abs() < 1e-6, "orbit is not the equator: {:?}", orbit.position);
    ensure!(orbit.classification.is_s1_nondegenerate(), "equator classified {:?}", orbit.classification.kind);
    ensure!(single.member, "membership rejected");

    // With room for the double cover it is listed, degenerate and strongly so.
    let (double, one_thread) = run(1, prime + 1.0, 4.0 * prime + 1.0)?;
    let (_, eight_threads) = run(8, prime + 1.0, 4.0 * prime + 1.0)?;
    ensure!(one_thread == eight_threads, "extended census differs between 1 and 8 threads");
    ensure!(double.orbits.len() == 2, "{} orbits with the double cover admitted", double.orbits.len());
    let geometric = double.orbits.iter().all(|o| (o.prime_period - TAU).abs() < 1e-6 && o.position[1].abs() < 1e-6);
    ensure!(geometric, "more than one geometric orbit");
    let cover = double.orbits.iter().find(|o| o.energies.iterate_order == 2).ok_or("double cover not listed")?;
    ensure!(
        matches!(cover.classification.kind, DegeneracyKind::StronglyDegenerate { k: 2, .. }),
        "double cover classified {:?}",
        cover.classification.kind
    );
    ensure!(!cover.classification.is_s1_nondegenerate(), "double cover reported S¹-nondegenerate");
    ensure!(!double.member, "membership accepted despite the degenerate cover");
    Ok("equator found once, S¹-nondegenerate; double cover strongly degenerate; identical on 1 and 8 threads".into())
}

fn main() {
    type Criterion = (usize, &'static str, fn() -> Outcome);
    // Conservation (4) runs last so it sees every geodesic of the suite.
    let criteria: [Criterion; 11] = [
        (1, "flatness of Euclidean and Minkowski", flatness),
        (2, "Schwarzschild vacuum", vacuum),
        (3, "conjugate points on round spheres", conjugate_points),
        (5, "index form and shooting agree", oracle_equivalence),
        (6, "strong degeneracy of the football double cover", strong_degeneracy),
        (7, "perturbation efficacy on S² antipodal", perturbation_efficacy),
        (8, "admissibility verdicts", admissibility),
        (9, "obstruction table", obstruction_table),
        (10, "energy iterate law", energy_iterate_law),
        (11, "football census", census),
        (4, "conservation and integrator order", conservation_and_order),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut results: Vec<(usize, &str, Outcome, f64)> = criteria
        .iter()
        .map(|&(id, title, run)| {
            let started = Instant::now();
            let outcome = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
                let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
                Err(format!("panicked: {}", msg.unwrap_or_default()))
            });
            (id, title, outcome, started.elapsed().as_secs_f64())
        })
        .collect();
    let _ = panic::take_hook();
    results.sort_by_key(|r| r.0);
    let mut failed = 0;
    for (id, title, outcome, secs) in &results {
        match outcome {
            Ok(detail) => println!("criterion {id:>2} PASS  {title}: {detail} [{secs:.2} s]"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id:>2} FAIL  {title}: {detail} [{secs:.2} s]");
            }
        }
    }
    println!("{} of {} acceptance criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

//! One function per subcommand. Each writes its report files and prints the
//! main JSON report on stdout.

use std::path::Path;

use geovar::degeneracy::{self, ClassifyOptions, DegeneracyReport, EnergyPair};
use geovar::flow::{self, FlowStatus, GeodesicPath, LengthEnergy, PeriodicityVerdict};
use geovar::gec::{self, AdmissibilityOptions, AdmissibilityReport, AdmissibilityVerdict, BvpOptions, BvpResidual, Gec};
use geovar::obstruction::{self, ManifoldDescriptor, Surface};
use geovar::ode::OdeOptions;
use geovar::perturb::{self, GenericityTrial, Interval, KTarget, Recheck, Scenario, TubePoint};
use geovar::variational::{self, ConjugatePoint};
use geovar::{AuxiliaryRiemannian, MetricField};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::config::{derivative_label, ProblemConfig, TargetSpec};
use crate::output::{columns, OutDir, Table};
use crate::{Cli, CliError, ObstructArgs};

fn out_dir(cli: &Cli) -> Result<OutDir, CliError> {
    OutDir::create(cli.out.as_deref().unwrap_or(Path::new(".")))
}

fn ode_options(cli: &Cli, cfg: &ProblemConfig) -> OdeOptions {
    let base = cfg.ode.unwrap_or_default();
    match cli.tol {
        Some(tol) => OdeOptions { rtol: tol, atol: tol * 1e-2, ..base },
        None => base,
    }
}

fn bvp_options(cli: &Cli, cfg: &ProblemConfig, given: Option<BvpOptions>) -> BvpOptions {
    let mut opts = given.unwrap_or(BvpOptions { ode: ode_options(cli, cfg), ..BvpOptions::default() });
    if let Some(tol) = cli.tol {
        opts.tol = tol;
        opts.ode = OdeOptions { rtol: tol, atol: tol * 1e-2, ..opts.ode };
    }
    opts
}

fn classify_options(cli: &Cli, cfg: &ProblemConfig, given: Option<ClassifyOptions>) -> ClassifyOptions {
    let mut opts = given.unwrap_or(ClassifyOptions { ode: ode_options(cli, cfg), ..ClassifyOptions::default() });
    if let Some(tol) = cli.tol {
        opts.ode = OdeOptions { rtol: tol, atol: tol * 1e-2, ..opts.ode };
    }
    opts
}

fn gec_or_diagonal(cfg: &ProblemConfig, metric: &MetricField) -> Result<Gec, CliError> {
    match &cfg.gec {
        Some(spec) => spec.build(metric.dim()),
        None => Ok(Gec::Diagonal { dim: metric.dim() }),
    }
}

fn emit(out: &OutDir, name: &str, command: &str, body: &impl Serialize) -> Result<(), CliError> {
    let text = out.json(name, command, body)?;
    print!("{text}");
    Ok(())
}

fn vec(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

#[derive(Serialize)]
struct MetricInfo {
    label: String,
    dim: usize,
    index: usize,
    derivatives: &'static str,
}

impl MetricInfo {
    fn of(metric: &MetricField) -> Self {
        Self {
            label: metric.label().to_string(),
            dim: metric.dim(),
            index: metric.index(),
            derivatives: derivative_label(metric),
        }
    }
}

/// Trajectory samples at `n` equally spaced parameters.
fn trajectory(path: &GeodesicPath, n: usize) -> Table {
    let m = path.dim();
    let header = std::iter::once("t".to_string())
        .chain(columns("x", m))
        .chain(columns("v", m))
        .chain(std::iter::once("g_vv".to_string()))
        .collect();
    let mut table = Table::new(header);
    let t_end = path.t_end();
    let n = n.max(2);
    for i in 0..n {
        let t = t_end * i as f64 / (n - 1) as f64;
        let x = path.position(t);
        let v = path.velocity(t);
        let g = path.metric().inner(x.as_slice(), &v, &v);
        let mut row = vec![t];
        row.extend(x.iter());
        row.extend(v.iter());
        row.push(g);
        table.push(row);
    }
    table
}

#[derive(Serialize)]
struct GeodesicReport {
    metric: MetricInfo,
    initial_position: Vec<f64>,
    initial_velocity: Vec<f64>,
    duration: f64,
    status: FlowStatus,
    reached: f64,
    final_position: Vec<f64>,
    final_velocity: Vec<f64>,
    speed: f64,
    conservation_error: f64,
    auxiliary: LengthEnergy,
    periodicity: PeriodicityVerdict,
}

pub fn geodesic(cli: &Cli, cfg: &ProblemConfig) -> Result<(), CliError> {
    let sec = cfg.section(&cfg.geodesic, "geodesic")?;
    let metric = cfg.metric.build()?;
    let ode = ode_options(cli, cfg);
    let path = flow::integrate_geodesic(&metric, &sec.position, &sec.velocity, sec.duration, &ode)?;
    let out = out_dir(cli)?;
    out.csv("trajectory.csv", &trajectory(&path, sec.samples))?;
    let aux = AuxiliaryRiemannian::euclidean(metric.dim());
    let reached = path.t_end();
    let report = GeodesicReport {
        metric: MetricInfo::of(&metric),
        initial_position: sec.position.clone(),
        initial_velocity: sec.velocity.clone(),
        duration: sec.duration,
        status: path.status,
        reached,
        final_position: vec(&path.position(reached)),
        final_velocity: vec(&path.velocity(reached)),
        speed: path.speed,
        conservation_error: path.conservation_error(),
        auxiliary: flow::riem_length_energy(&path, &aux),
        periodicity: flow::detect_periodicity(&path, sec.periodicity_tol),
    };
    emit(&out, "geodesic.json", "geodesic", &report)
}

#[derive(Serialize)]
struct ConjugateReport {
    metric: MetricInfo,
    initial_position: Vec<f64>,
    initial_velocity: Vec<f64>,
    duration: f64,
    status: FlowStatus,
    conjugate_points: Vec<ConjugatePoint>,
}

pub fn conjugate(cli: &Cli, cfg: &ProblemConfig) -> Result<(), CliError> {
    let sec = cfg.section(&cfg.geodesic, "geodesic")?;
    let metric = cfg.metric.build()?;
    let ode = ode_options(cli, cfg);
    let path = flow::integrate_geodesic(&metric, &sec.position, &sec.velocity, sec.duration, &ode)?;
    let points = variational::conjugate_points(&path, &ode)?;
    let out = out_dir(cli)?;
    let report = ConjugateReport {
        metric: MetricInfo::of(&metric),
        initial_position: sec.position.clone(),
        initial_velocity: sec.velocity.clone(),
        duration: sec.duration,
        status: path.status,
        conjugate_points: points,
    };
    emit(&out, "conjugate.json", "conjugate", &report)
}

#[derive(Serialize)]
struct SolutionInfo {
    params: Vec<f64>,
    initial_position: Vec<f64>,
    initial_velocity: Vec<f64>,
    duration: f64,
    residual: BvpResidual,
    jacobian_condition: f64,
    iterations: usize,
}

#[derive(Serialize)]
struct BvpReport {
    metric: MetricInfo,
    gec: &'static str,
    admissibility: Option<AdmissibilityReport>,
    solution: Option<SolutionInfo>,
    degeneracy: Option<DegeneracyReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn solution_info(sol: &gec::BvpSolution) -> SolutionInfo {
    SolutionInfo {
        params: vec(&sol.params),
        initial_position: vec(&sol.path.initial_position()),
        initial_velocity: vec(&sol.path.initial_velocity()),
        duration: sol.path.t_end(),
        residual: sol.residual,
        jacobian_condition: sol.jacobian_condition,
        iterations: sol.iterations,
    }
}

pub fn bvp(cli: &Cli, cfg: &ProblemConfig) -> Result<(), CliError> {
    let sec = cfg.section(&cfg.bvp, "bvp")?;
    let gec_spec = cfg.section(&cfg.gec, "gec")?;
    let metric = cfg.metric.build()?;
    let gec = gec_spec.build(metric.dim())?;
    let opts = bvp_options(cli, cfg, sec.options);
    let out = out_dir(cli)?;
    let mut report = BvpReport { metric: MetricInfo::of(&metric), gec: gec.kind(), admissibility: None, solution: None, degeneracy: None, error: None };
    if sec.admissibility || cli.require_admissible {
        let adm = gec::check_admissibility(&gec, &metric, &AdmissibilityOptions { bvp: opts, ..AdmissibilityOptions::default() })?;
        let rejected = adm.verdict == AdmissibilityVerdict::NotAdmissible;
        report.admissibility = Some(adm);
        if rejected && cli.require_admissible {
            emit(&out, "bvp.json", "bvp", &report)?;
            return Err(CliError::NotAdmissible);
        }
    }
    // Failures after the admissibility check still leave a report behind.
    let fail = |mut report: BvpReport, e: geovar::Error| -> Result<(), CliError> {
        report.error = Some(e.to_string());
        emit(&out, "bvp.json", "bvp", &report)?;
        Err(e.into())
    };
    let sol = match gec::solve_gp_geodesic(&metric, &gec, &sec.guess, &opts) {
        Ok(sol) => sol,
        Err(e) => return fail(report, e),
    };
    out.csv("solution.csv", &trajectory(&sol.path, sec.samples))?;
    report.solution = Some(solution_info(&sol));
    match degeneracy::classify(&sol.path, &gec, &classify_options(cli, cfg, sec.classify)) {
        Ok(d) => report.degeneracy = Some(d),
        Err(e) => return fail(report, e),
    }
    emit(&out, "bvp.json", "bvp", &report)
}

#[derive(Serialize)]
struct ClassifyReport {
    metric: MetricInfo,
    gec: &'static str,
    periodicity: PeriodicityVerdict,
    energies: EnergyPair,
    degeneracy: DegeneracyReport,
}

pub fn classify(cli: &Cli, cfg: &ProblemConfig) -> Result<(), CliError> {
    let sec = cfg.section(&cfg.classify, "classify")?;
    let metric = cfg.metric.build()?;
    let gec = gec_or_diagonal(cfg, &metric)?;
    let opts = classify_options(cli, cfg, sec.options);
    let path = flow::integrate_geodesic(&metric, &sec.position, &sec.velocity, sec.duration, &opts.ode)?.require_complete()?;
    let scale = 1.0 + path.initial_velocity().amax();
    let periodicity = flow::detect_periodicity(&path, opts.periodicity_tol * scale);
    let aux = AuxiliaryRiemannian::euclidean(metric.dim());
    let report = ClassifyReport {
        metric: MetricInfo::of(&metric),
        gec: gec.kind(),
        periodicity,
        energies: degeneracy::energies(&path, &aux, &periodicity),
        degeneracy: degeneracy::classify(&path, &gec, &opts)?,
    };
    emit(&out_dir(cli)?, "classify.json", "classify", &report)
}

#[derive(Serialize)]
struct CensusReport {
    metric: MetricInfo,
    bounds: Vec<(f64, f64)>,
    a: f64,
    b: f64,
    seeds: usize,
    options: degeneracy::CensusOptions,
    orbits: Vec<degeneracy::CensusOrbit>,
    member: bool,
    note: String,
}

pub fn census(cli: &Cli, cfg: &ProblemConfig) -> Result<(), CliError> {
    let sec = cfg.section(&cfg.census, "census")?;
    let metric = cfg.metric.build()?;
    let mut opts = sec.options.unwrap_or_default();
    if let Some(seed) = cli.seed {
        opts.seed = seed;
    }
    if let Some(tol) = cli.tol {
        opts.tol = tol;
    }
    let result = degeneracy::periodic_census(&metric, &sec.bounds, sec.a, sec.b, &opts, &ode_options(cli, cfg))?;
    // Wall-clock time would break byte-identical reports, so it goes to stderr.
    eprintln!("geovar: census finished in {:.3} s", result.wall_clock_seconds);
    let report = CensusReport {
        metric: MetricInfo::of(&metric),
        bounds: result.bounds,
        a: result.a,
        b: result.b,
        seeds: result.seeds,
        options: result.options,
        orbits: result.orbits,
        member: result.member,
        note: result.note,
    };
    emit(&out_dir(cli)?, "census.json", "census", &report)
}

#[derive(Serialize)]
struct RecheckEntry {
    epsilon: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    result: Option<Recheck>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Serialize)]
struct PerturbReport {
    metric: MetricInfo,
    gec: &'static str,
    base: SolutionInfo,
    interval: Interval,
    radius: f64,
    lambda_max: f64,
    mixed_derivative: f64,
    predicted_mixed_derivative: f64,
    reference_energy: f64,
    rechecks: Vec<RecheckEntry>,
    montecarlo: Option<GenericityTrial>,
}

fn k_target(spec: &TargetSpec, m: usize) -> Result<KTarget, CliError> {
    Ok(match spec {
        TargetSpec::Auxiliary => KTarget::Auxiliary(AuxiliaryRiemannian::euclidean(m)),
        TargetSpec::Zero => KTarget::Zero,
        TargetSpec::Constant(rows) => {
            if rows.len() != m || rows.iter().any(|r| r.len() != m) {
                return Err(CliError::Config(format!("constant target must be {m} × {m}")));
            }
            let k = DMatrix::from_fn(m, m, |i, j| rows[i][j]);
            if (&k - k.transpose()).amax() > 0.0 {
                return Err(CliError::Config("constant target must be symmetric".into()));
            }
            KTarget::Constant(k)
        }
    })
}

/// Bump entries on an `n × n` grid of the tube's `(s, λ)` plane.
fn bump_field(bump: &perturb::PerturbationBump, n: usize) -> Table {
    let m = bump.field().path().dim();
    let mut header: Vec<String> = vec!["s".into(), "lambda".into()];
    header.extend(columns("x", m));
    for i in 0..m {
        for j in i..m {
            header.push(format!("h{i}{j}"));
        }
    }
    let mut table = Table::new(header);
    let n = n.max(2);
    let (a, b) = (bump.interval.start, bump.interval.end);
    for i in 0..n {
        let s = a + (b - a) * i as f64 / (n - 1) as f64;
        for k in 0..n {
            let lambda = bump.lambda_max * (2.0 * k as f64 / (n - 1) as f64 - 1.0);
            let x = bump.embed(&TubePoint { s, offsets: DVector::zeros(m.saturating_sub(2)), lambda });
            let h = bump.value(x.as_slice());
            let mut row = vec![s, lambda];
            row.extend(x.iter());
            for p in 0..m {
                for q in p..m {
                    row.push(h[(p, q)]);
                }
            }
            table.push(row);
        }
    }
    table
}

pub fn perturb(cli: &Cli, cfg: &ProblemConfig) -> Result<(), CliError> {
    let sec = cfg.section(&cfg.perturb, "perturb")?;
    let gec_spec = cfg.section(&cfg.gec, "gec")?;
    let metric = cfg.metric.build()?;
    let m = metric.dim();
    let gec = gec_spec.build(m)?;
    let bvp_opts = bvp_options(cli, cfg, sec.bvp);
    let classify_opts = classify_options(cli, cfg, sec.classify);
    let scenario = Scenario::solve(metric.clone(), gec.clone(), &sec.guess, &bvp_opts)?;
    let field = scenario.effective_field(&classify_opts)?;
    let target = k_target(&sec.target, m)?;
    let bump = match sec.radius {
        Some(rho) => {
            let interval = perturb::select_interval(&field, rho, &sec.interval)?;
            perturb::build_bump(&field, &interval, target, rho)?
        }
        None => perturb::bump_for(&field, target, &sec.interval)?,
    };
    let mut recheck = sec.recheck.unwrap_or(perturb::RecheckOptions { bvp: bvp_opts, classify: classify_opts, ..Default::default() });
    if let Some(seed) = cli.seed {
        recheck.seed = seed;
    }
    let rechecks = sec
        .epsilons
        .iter()
        .map(|&epsilon| match perturb::apply_and_recheck(&scenario, &bump, epsilon, &recheck) {
            Ok(r) => RecheckEntry { epsilon, result: Some(r), error: None },
            Err(e) => RecheckEntry { epsilon, result: None, error: Some(e.to_string()) },
        })
        .collect();
    let montecarlo = match &sec.montecarlo {
        Some(mc) => {
            let opts = mc.options.unwrap_or_default();
            let seed = cli.seed.unwrap_or(opts.recheck.seed);
            Some(perturb::genericity_montecarlo(&scenario, mc.trials, mc.epsilon, seed, &opts)?)
        }
        None => None,
    };
    let out = out_dir(cli)?;
    if sec.field_samples > 0 {
        out.csv("bump_field.csv", &bump_field(&bump, sec.field_samples))?;
    }
    let report = PerturbReport {
        metric: MetricInfo::of(&metric),
        gec: gec.kind(),
        base: solution_info(&scenario.base),
        interval: bump.interval,
        radius: bump.radius,
        lambda_max: bump.lambda_max,
        mixed_derivative: perturb::mixed_derivative(&bump, &field.jacobi),
        predicted_mixed_derivative: bump.predicted_mixed_derivative(),
        reference_energy: bump.reference_energy(),
        rechecks,
        montecarlo,
    };
    emit(&out, "perturb.json", "perturb", &report)
}

fn surface(args: &ObstructArgs, name: &str) -> Result<Surface, CliError> {
    let need = |v: Option<u32>, flag: &str| v.ok_or_else(|| CliError::Config(format!("surface `{name}` needs --{flag}")));
    Ok(match name {
        "sphere" => Surface::Sphere,
        "torus" => Surface::Torus,
        "klein" | "klein_bottle" => Surface::KleinBottle,
        "projective_plane" => Surface::ProjectivePlane,
        "orientable" => Surface::Orientable { genus: need(args.genus, "genus")? },
        "non_orientable" => Surface::NonOrientable { crosscaps: need(args.crosscaps, "crosscaps")? },
        other => return Err(CliError::Config(format!("unknown surface `{other}`"))),
    })
}

#[derive(Serialize)]
struct ObstructReport {
    manifold: ManifoldDescriptor,
    #[serde(flatten)]
    verdict: obstruction::ObstructionVerdict,
}

pub fn obstruct(cli: &Cli, args: &ObstructArgs) -> Result<(), CliError> {
    let manifold = if let Some(dim) = args.sphere {
        ManifoldDescriptor::Sphere { dim }
    } else if let Some(name) = &args.surface {
        ManifoldDescriptor::Surface { surface: surface(args, name)? }
    } else {
        let need = |v: Option<bool>, flag: &str| v.ok_or_else(|| CliError::Config(format!("--generic needs --{flag}")));
        ManifoldDescriptor::Generic {
            compact: need(args.compact, "compact")?,
            orientable: need(args.orientable, "orientable")?,
            dim: args.dim.ok_or_else(|| CliError::Config("--generic needs --dim".into()))?,
            euler_characteristic: args.chi,
        }
    };
    let verdict = obstruction::metric_exists(&manifold, args.index)?;
    let report = ObstructReport { manifold, verdict };
    match &cli.out {
        Some(dir) => emit(&OutDir::create(dir)?, "obstruct.json", "obstruct", &report),
        None => {
            let text = geovar::report::to_json(&geovar::report::Envelope::new("obstruct", &report))
                .map_err(|e| CliError::Numerical(e.to_string()))?;
            print!("{text}");
            Ok(())
        }
    }
}

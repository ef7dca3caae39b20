//! Dispatches a configuration to the experiment of its problem's module.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use reglab::affine::{
    self, check_assumption_ab, check_growth, euler_error_study, regularity_experiment, AffineBlocks,
    AffineError, AffineOcp, AffineSweepOptions, GrowthOptions, GrowthVariant, RegularityMode,
};
use reglab::geneq::{lipschitz_envelope, GeneqError, MetricSpec, PerturbationRecord};
use reglab::grid::GridFn;
use reglab::mayer::{
    self, coercivity_on_cone, complete_from_control, pmp_residual, solve_pmp, DisturbanceBlocks,
    MayerError, SweepOptions,
};
use reglab::nlp::{
    self, check_coercivity, check_strict_mfcq, kkt_residual, solve_perturbed_kkt, KktDisturbance,
    KktTriple, NlpError, NlpMetrics, NlpProblem, QuadraticProgram,
};
use reglab::parabolic::{
    self, check_growth_parabolic, holder_experiment, optimality_residual, solve_optimality,
    ControlRule, Field2D, HolderOptions, Mesh, ParabolicBlocks, ParabolicDisturbance, ParabolicError,
    ParabolicOcp,
};
use reglab::problems::{self, EnergyMayer, HeatAnalytic, Integrator, ParabolicBang};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Experiment, ExperimentConfig};
use crate::records::{fit_records, records_csv, FitSummary};
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleSummary {
    pub total: usize,
    pub converged: usize,
    /// Sample indices whose perturbed solve failed.
    pub failed: Vec<u64>,
}

impl SampleSummary {
    fn of(records: &[PerturbationRecord]) -> Self {
        Self {
            total: records.len(),
            converged: records.iter().filter(|r| r.solver_converged).count(),
            failed: records
                .iter()
                .filter(|r| !r.solver_converged)
                .map(|r| r.sample_index)
                .collect(),
        }
    }
}

/// Everything written to `report.json`. Wall time is not part of it (it
/// goes to stderr) so that reports are reproducible byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub config: ExperimentConfig,
    pub module: String,
    pub fit: Option<FitSummary>,
    /// Second fit of a Hölder sweep (state and adjoint distance).
    pub state_fit: Option<FitSummary>,
    pub checks: BTreeMap<String, Value>,
    pub samples: SampleSummary,
    pub warnings: Vec<String>,
}

/// Report plus the file contents to write.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub report: Report,
    pub records: Vec<PerturbationRecord>,
    /// Study-specific CSV files `(name, contents)`.
    pub extra_files: Vec<(String, String)>,
}

impl RunOutput {
    pub fn records_csv(&self) -> Result<Vec<u8>, CliError> {
        records_csv(self.report.config.seed, &self.records)
    }

    pub fn report_json(&self) -> Result<Vec<u8>, CliError> {
        let mut bytes = serde_json::to_vec_pretty(&self.report).map_err(|e| CliError::Io(e.to_string()))?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    /// Writes `records.csv`, `report.json` and the extra files into the
    /// configured output directory.
    pub fn write(&self) -> Result<(), CliError> {
        let dir = &self.report.config.output_dir;
        let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", dir.display()));
        std::fs::create_dir_all(dir).map_err(io)?;
        std::fs::write(dir.join("records.csv"), self.records_csv()?).map_err(io)?;
        std::fs::write(dir.join("report.json"), self.report_json()?).map_err(io)?;
        for (name, text) in &self.extra_files {
            std::fs::write(dir.join(name), text).map_err(io)?;
        }
        Ok(())
    }
}

/// Collects the pieces of a run.
struct Outcome {
    module: &'static str,
    fit: Option<FitSummary>,
    state_fit: Option<FitSummary>,
    checks: BTreeMap<String, Value>,
    records: Vec<PerturbationRecord>,
    extra_files: Vec<(String, String)>,
    warnings: Vec<String>,
}

impl Outcome {
    fn new(module: &'static str) -> Self {
        Self {
            module,
            fit: None,
            state_fit: None,
            checks: BTreeMap::new(),
            records: Vec::new(),
            extra_files: Vec::new(),
            warnings: Vec::new(),
        }
    }

    fn check(&mut self, key: &str, value: Value) {
        self.checks.insert(key.to_string(), value);
    }

    /// Fits `records` (a failed fit becomes a warning) and keeps them.
    fn sweep(&mut self, cfg: &ExperimentConfig, records: Vec<PerturbationRecord>) {
        self.fit = self.fit_or_warn(cfg, &records, "records");
        let failed = records.iter().filter(|r| !r.solver_converged).count();
        if failed > 0 {
            self.warnings
                .push(format!("{failed} of {} perturbed solves did not converge", records.len()));
        }
        self.check(
            "lipschitz_envelope",
            json!(lipschitz_envelope(&records, cfg.tolerance("min_dist", reglab::geneq::DEFAULT_MIN_DIST))),
        );
        self.records = records;
    }

    fn fit_or_warn(&mut self, cfg: &ExperimentConfig, records: &[PerturbationRecord], what: &str) -> Option<FitSummary> {
        match fit_records(records, cfg.tolerance("min_dist", reglab::geneq::DEFAULT_MIN_DIST)) {
            Ok(f) => Some(f),
            Err(e) => {
                self.warnings.push(format!("fit of {what} failed: {e}"));
                None
            }
        }
    }
}

fn unsupported(cfg: &ExperimentConfig, module: &str) -> CliError {
    CliError::Unsupported {
        experiment: cfg.experiment.name().to_string(),
        module: module.to_string(),
    }
}

fn geneq_kind(e: &GeneqError) -> bool {
    matches!(e, GeneqError::InvalidOption(_) | GeneqError::InvalidMetric(_) | GeneqError::Dimension { .. })
}

fn nlp_err(e: NlpError) -> CliError {
    match &e {
        NlpError::Dimension { .. } => CliError::Config(e.to_string()),
        NlpError::Geneq(g) if geneq_kind(g) => CliError::Config(e.to_string()),
        _ => CliError::Solver(e.to_string()),
    }
}

fn mayer_err(e: MayerError) -> CliError {
    match &e {
        MayerError::InvalidOption(_) | MayerError::Dimension { .. } => CliError::Config(e.to_string()),
        MayerError::Geneq(g) if geneq_kind(g) => CliError::Config(e.to_string()),
        _ => CliError::Solver(e.to_string()),
    }
}

fn affine_err(e: AffineError) -> CliError {
    match &e {
        AffineError::InvalidOption(_)
        | AffineError::Precondition(_)
        | AffineError::Sampling(_)
        | AffineError::Dimension { .. } => CliError::Config(e.to_string()),
        _ => CliError::Solver(e.to_string()),
    }
}

fn parabolic_err(e: ParabolicError) -> CliError {
    match &e {
        ParabolicError::InvalidOption(_) | ParabolicError::Sampling(_) | ParabolicError::Mesh { .. } => {
            CliError::Config(e.to_string())
        }
        _ => CliError::Solver(e.to_string()),
    }
}

/// Runs the experiment of `cfg` without touching the file system.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput, CliError> {
    cfg.validate()?;
    let (_, module, _) = problems::lookup(&cfg.problem_id).ok_or_else(|| CliError::UnknownProblem(cfg.problem_id.clone()))?;
    let out = match module {
        "nlp-kkt" => run_nlp(cfg)?,
        "ocp-mayer" => run_mayer(cfg)?,
        "ocp-affine" => run_affine(cfg)?,
        "parabolic-1d" => run_parabolic(cfg)?,
        other => return Err(CliError::Config(format!("no runner for module {other}"))),
    };
    Ok(RunOutput {
        report: Report {
            config: cfg.clone(),
            module: out.module.to_string(),
            fit: out.fit,
            state_fit: out.state_fit,
            checks: out.checks,
            samples: SampleSummary::of(&out.records),
            warnings: out.warnings,
        },
        records: out.records,
        extra_files: out.extra_files,
    })
}

fn nlp_problem(id: &str) -> (QuadraticProgram, KktTriple) {
    match id {
        "p1-duplicated-constraint" => (problems::p1_duplicated(), problems::p1_duplicated_kkt()),
        _ => (problems::p1_quadratic(1.0), problems::p1_kkt()),
    }
}

fn run_nlp(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let mut out = Outcome::new("nlp-kkt");
    let (problem, reference) = nlp_problem(&cfg.problem_id);
    let tol = cfg.tolerance("solver", 1e-13);
    let reference_residual = kkt_residual(&problem, &reference).map_err(nlp_err)?.total();
    out.check("reference_residual", json!(reference_residual));
    match cfg.experiment {
        Experiment::Solve => {
            let start = KktTriple {
                x: vec![0.0; problem.n()],
                lambda: vec![0.0; problem.m()],
                ystar: vec![0.0; problem.p()],
            };
            let r = solve_perturbed_kkt(&problem, &KktDisturbance::zero(&problem), &start, tol).map_err(nlp_err)?;
            if !r.converged {
                return Err(CliError::Solver(format!(
                    "KKT solve did not converge (residual history {:?})",
                    r.history
                )));
            }
            out.check("converged", json!(r.converged));
            out.check("iterations", json!(r.iterations));
            out.check("residual_history", json!(r.history));
            out.check("x", json!(r.triple.x));
            out.check("lambda", json!(r.triple.lambda));
        }
        Experiment::Smsr => {
            if reference_residual > 1e-8 {
                return Err(CliError::Solver(format!("reference KKT residual {reference_residual:e}")));
            }
            let dirs = cfg.count("directions", 20)?;
            let records = nlp::smsr_experiment(
                &problem,
                &reference,
                cfg.seed,
                &cfg.magnitudes,
                dirs,
                &NlpMetrics::default(),
                tol,
            )
            .map_err(nlp_err)?;
            out.sweep(cfg, records);
        }
        Experiment::Coercivity => {
            let r = check_coercivity(&problem, &reference, &MetricSpec::euclidean()).map_err(nlp_err)?;
            out.check("c0", json!(r.c0));
            out.check("holds", json!(r.c0 > 0.0));
            out.check("vacuous", json!(r.vacuous));
            out.check("exact", json!(r.exact));
            out.check("direction", json!(r.direction));
        }
        Experiment::Mfcq => {
            let r = check_strict_mfcq(&problem, &reference, cfg.tolerance("solver", 1e-8)).map_err(nlp_err)?;
            out.check("holds", json!(r.holds));
            out.check("active", json!(r.active));
            out.check("degenerate", json!(r.degenerate));
            out.check(
                "certificate",
                json!(r.certificate.map(|c| json!({"lambda": c.lambda, "ystar": c.ystar}))),
            );
        }
        _ => return Err(unsupported(cfg, "nlp-kkt")),
    }
    Ok(out)
}

fn run_mayer(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let mut out = Outcome::new("ocp-mayer");
    let ocp = EnergyMayer::p2();
    let cells = cfg.cells(200)?;
    let tol = cfg.tolerance("solver", 1e-11);
    let reference = ocp.reference(cells);
    let res = pmp_residual(&ocp, &reference).map_err(mayer_err)?;
    out.check("reference_residual", json!(res.strong));
    match cfg.experiment {
        Experiment::Solve => {
            let u = GridFn::constant(cells, &[0.5]);
            let start = complete_from_control(&ocp, &u, &[0.0, 0.0]).map_err(mayer_err)?;
            let r = solve_pmp(&ocp, &start, tol).map_err(mayer_err)?;
            if !r.converged {
                return Err(CliError::Solver(format!(
                    "Newton did not converge in {} iterations (history {:?})",
                    r.iterations, r.history
                )));
            }
            out.check("converged", json!(true));
            out.check("iterations", json!(r.iterations));
            out.check("residual_history", json!(r.history));
            out.check("final_strong_residual", json!(pmp_residual(&ocp, &r.solution).map_err(mayer_err)?.strong));
            out.extra_files.push(("trajectory.csv".into(), r.solution.to_csv(0.0)));
        }
        Experiment::Coercivity => {
            let delta = cfg.parameters.get("delta").copied();
            let r = coercivity_on_cone(&ocp, &reference, delta).map_err(mayer_err)?;
            out.check("c_delta", json!(r.c_delta));
            out.check("delta", json!(r.delta));
            out.check("holds", json!(r.c_delta > 0.0));
            out.check("vacuous", json!(r.vacuous));
            out.check("exact", json!(r.exact));
        }
        Experiment::Smsr => {
            if !(res.strong <= 1e-8) {
                return Err(CliError::Solver(format!("reference residual {:e}", res.strong)));
            }
            let opts = SweepOptions {
                directions: cfg.count("directions", 20)?,
                blocks: if cfg.rho_only() { DisturbanceBlocks::RHO } else { DisturbanceBlocks::ALL },
                tol,
                trust_radius: cfg.parameters.get("trust_radius").copied(),
            };
            let e = mayer::smsr_experiment(&ocp, &reference, cfg.seed, &cfg.magnitudes, &opts).map_err(mayer_err)?;
            out.check("trust_region_binding", json!(e.trust_region_binding));
            out.sweep(cfg, e.records);
        }
        _ => return Err(unsupported(cfg, "ocp-mayer")),
    }
    Ok(out)
}

fn affine_problem(id: &str) -> Integrator {
    match id {
        "p3-tangential" => Integrator::tangential(),
        _ => Integrator::p3(),
    }
}

fn grid_csv(h: f64, g: &GridFn, name: &str) -> String {
    let mut s = String::from("t");
    for i in 0..g.dim() {
        let _ = write!(s, ",{name}{i}");
    }
    s.push('\n');
    for j in 0..g.rows() {
        let _ = write!(s, "{:.16e}", j as f64 * h);
        for &v in g.row(j) {
            let _ = write!(s, ",{v:.16e}");
        }
        s.push('\n');
    }
    s
}

fn run_affine(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let mut out = Outcome::new("ocp-affine");
    let ocp = affine_problem(&cfg.problem_id);
    let tol = cfg.tolerance("solver", 1e-10);
    let max_sweeps = cfg.count("max_sweeps", 200)?;
    if cfg.experiment == Experiment::EulerStudy {
        let grids = cfg
            .grid
            .n_list
            .clone()
            .unwrap_or_else(|| vec![16, 32, 64, 128, 256, 512, 1024]);
        let reference = cfg.grid.n_reference.unwrap_or(8192);
        let study = euler_error_study(&ocp, &grids, reference, tol).map_err(|e| match e {
            AffineError::Reference(m) => CliError::Solver(m),
            e => affine_err(e),
        })?;
        out.check("slope_u_L1", json!(study.slope_u));
        out.check("slope_x_Linf", json!(study.slope_x));
        out.extra_files.push(("euler.csv".into(), study.to_csv()));
        return Ok(out);
    }
    let cells = cfg.cells(2000)?;
    let start = GridFn::constant(cells, &ocp.control_set().vertices()[0]);
    let sol = affine::solve_affine_pmp(&ocp, &start, tol, max_sweeps).map_err(|e| CliError::Solver(e.to_string()))?;
    if !sol.converged {
        return Err(CliError::Solver(format!(
            "reference solve did not converge in {} sweeps (residual {:e})",
            sol.sweeps, sol.residual
        )));
    }
    out.check("reference_residual", json!(sol.residual));
    out.check("reference_sweeps", json!(sol.sweeps));
    let s = &sol.solution;
    match cfg.experiment {
        Experiment::Solve => {
            out.check("within_bound", json!(sol.within_bound));
            out.extra_files.push(("trajectory.csv".into(), s.to_csv(0.0)));
            out.extra_files.push(("switching.csv".into(), sol.sigma.to_csv(&s.u)));
        }
        Experiment::Smsr | Experiment::Smr => {
            let mode = if cfg.experiment == Experiment::Smsr { RegularityMode::Smsr } else { RegularityMode::Smr };
            let opts = AffineSweepOptions {
                directions: cfg.count("directions", 20)?,
                blocks: if cfg.rho_only() { AffineBlocks::RHO } else { AffineBlocks::ALL },
                tol,
                max_sweeps,
            };
            let e = regularity_experiment(&ocp, s, mode, cfg.seed, &cfg.magnitudes, &opts).map_err(affine_err)?;
            out.check("symmetric_hypothesis", json!(e.symmetric_hypothesis));
            out.sweep(cfg, e.records);
        }
        Experiment::AbCheck => {
            let r = check_assumption_ab(&sol.sigma, &ocp.control_set(), cfg.parameter("tau", 0.2), cfg.parameter("threshold", 0.1))
                .map_err(affine_err)?;
            out.check("holds", json!(r.holds));
            out.check("kappa_est", json!(r.kappa_est));
            out.check("zeros", json!(r.zeros));
            out.extra_files.push(("switching.csv".into(), sol.sigma.to_csv(&s.u)));
        }
        Experiment::Growth => {
            let variant = match cfg.variant.as_deref() {
                Some("AA2") => GrowthVariant::AA2,
                Some("AA2'") => GrowthVariant::AA2Prime,
                Some("PB") => GrowthVariant::PB,
                _ => GrowthVariant::AA2p,
            };
            let opts = GrowthOptions {
                c0: cfg.parameter("c0", 0.1),
                alpha0: cfg.parameter("alpha", 0.5),
                gamma0: cfg.parameter("gamma", 0.05),
                seed: cfg.seed,
                n_samples: cfg.count("samples", 600)?,
                kappa_exp: cfg.parameter("kappa_exp", 2.0),
            };
            let r = check_growth(&ocp, s, variant, &opts).map_err(affine_err)?;
            out.check("holds", json!(r.holds));
            out.check("c0_empirical", json!(r.c0_empirical));
            out.check("n_samples", json!(r.n_samples));
            out.extra_files.push(("worst_control.csv".into(), grid_csv(s.h, &r.worst_control, "u")));
        }
        _ => return Err(unsupported(cfg, "ocp-affine")),
    }
    Ok(out)
}

fn run_parabolic(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let mut out = Outcome::new("parabolic-1d");
    let heat = cfg.problem_id == "heat-analytic";
    let p4 = ParabolicBang::default();
    let h = HeatAnalytic::default();
    let ocp: &dyn ParabolicOcp = if heat { &h } else { &p4 };
    let nx = cfg.grid.nx.unwrap_or(49);
    let nt = cfg.grid.nt.unwrap_or(100);
    let mesh = Mesh::new(nx, nt, ocp.horizon()).map_err(parabolic_err)?;
    parabolic::validate_problem(ocp, &mesh).map_err(parabolic_err)?;
    let tol = cfg.tolerance("solver", 1e-12);
    let max_sweeps = cfg.count("max_sweeps", 100)?;
    let reference = if heat { mesh.cellwise() } else { p4.reference_control(mesh) };
    match cfg.experiment {
        Experiment::Solve => {
            let zero = ParabolicDisturbance::zero(mesh);
            let r = solve_optimality(ocp, &zero, &mesh.cellwise(), ControlRule::CellAverage, tol, max_sweeps)
                .map_err(parabolic_err)?;
            if !r.converged {
                return Err(CliError::Solver(format!(
                    "optimality sweeps did not converge (last change {:e})",
                    r.change
                )));
            }
            let res = optimality_residual(ocp, &r.y, &r.p, &r.u, None).map_err(parabolic_err)?;
            out.check("sweeps", json!(r.sweeps));
            out.check("strong_residual", json!(res.strong));
            out.check("weak_residual", json!(res.weak));
            out.check("objective", json!(parabolic::objective(ocp, &r.u).map_err(parabolic_err)?));
            if heat {
                let pi = std::f64::consts::PI;
                let decay = (-pi * pi * mesh.horizon).exp();
                let err = (0..nx)
                    .map(|i| (r.y.get(nt, i) - decay * (pi * mesh.x(i)).sin()).abs())
                    .fold(0.0, f64::max);
                out.check("max_error_final_time", json!(err));
                // The analytic comparison time used in the test suite.
                let k = (0.1 / mesh.ht()).round() as usize;
                if k <= nt && (mesh.t(k) - 0.1).abs() < 1e-12 {
                    let err = (0..nx)
                        .map(|i| (r.y.get(k, i) - (-pi * pi * 0.1f64).exp() * (pi * mesh.x(i)).sin()).abs())
                        .fold(0.0, f64::max);
                    out.check("max_error_t_0.1", json!(err));
                }
            } else {
                out.check("distance_to_reference_L1", json!(r.u.sub(&reference).l1()));
            }
            out.extra_files.push(("control.csv".into(), r.u.to_csv()));
            out.extra_files.push(("state.csv".into(), r.y.to_csv()));
            out.extra_files.push(("adjoint.csv".into(), r.p.to_csv()));
        }
        Experiment::Holder => {
            let opts = HolderOptions {
                directions: cfg.count("directions", 10)?,
                blocks: if cfg.rho_only() { ParabolicBlocks::RHO } else { ParabolicBlocks::ALL },
                rule: ControlRule::CellAverage,
                tol,
                max_sweeps,
            };
            let e = holder_experiment(ocp, &reference, cfg.seed, &cfg.magnitudes, &opts).map_err(parabolic_err)?;
            out.state_fit = out.fit_or_warn(cfg, &e.state, "state records");
            out.extra_files.push((
                "records_state.csv".into(),
                String::from_utf8(records_csv(cfg.seed, &e.state)?).expect("CSV is UTF-8"),
            ));
            out.sweep(cfg, e.control);
        }
        Experiment::Growth => {
            let r = check_growth_parabolic(
                ocp,
                &reference,
                cfg.parameter("c0", 0.05),
                cfg.parameter("alpha", 0.5),
                cfg.parameter("gamma", 1.0),
                cfg.seed,
                cfg.count("samples", 300)?,
            )
            .map_err(parabolic_err)?;
            out.check("holds", json!(r.holds));
            out.check("c0_empirical", json!(r.c0_empirical));
            out.check("n_samples", json!(r.n_samples));
            let worst = Field2D {
                mesh,
                nodal: false,
                values: r.worst_control,
            };
            out.extra_files.push(("worst_control.csv".into(), worst.to_csv()));
        }
        _ => return Err(unsupported(cfg, "parabolic-1d")),
    }
    Ok(out)
}

//! Subcommand bodies. Each returns the process exit code.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use meanfield::certificates::{
    build_reference_function_with, certify, ConcentrationParams, CertifyOptions, ConstantsReport, QuadratureSettings,
    ReferenceFunction,
};
use meanfield::experiments::{
    chaos_experiment, concentration_experiment, contraction_experiment, gaussian_sharpness_check,
    integrated_distance_experiment, moment_experiment, path_chaos_experiment, ExperimentConfig, ExperimentResult,
    Verdict,
};
use meanfield::potentials::{make_builtin, ModelKind, PotentialModel};
use meanfield::simulator::{self, fmt_f64, Ensemble, SimConfig, SimState, SnapshotWriter};
use meanfield::Error;

use crate::config::{ConfigError, RunConfig};
use crate::Command;

const EXIT_OK: u8 = 0;
const EXIT_ERROR: u8 = 1;
const EXIT_FAILED: u8 = 2;

/// Default replica count for tail estimates when none is configured.
const CONCENTRATION_REPLICAS: usize = 10_000;

enum Failure {
    Config(ConfigError),
    Lib(Error),
    Io(std::io::Error),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}
impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}
impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e)
    }
}

/// Certification failures map to exit 2; everything else is an error.
fn failure_code(f: &Failure) -> u8 {
    match f {
        Failure::Lib(Error::InteractionTooStrong(_) | Error::DriftGrowthViolated(_) | Error::Uncertified) => {
            EXIT_FAILED
        }
        _ => EXIT_ERROR,
    }
}

fn describe(f: &Failure) -> String {
    match f {
        Failure::Config(e) => format!("config error: {e}"),
        Failure::Lib(e) => format!("error: {e}"),
        Failure::Io(e) => format!("io error: {e}"),
    }
}

pub fn run(command: Command, mut cfg: RunConfig) -> u8 {
    if command == Command::Concentrate {
        let default = format!("experiment.replicas = {}", ExperimentConfig::default().replicas);
        if let Some(slot) = cfg.defaults_applied.iter_mut().find(|d| **d == default) {
            *slot = format!("experiment.replicas = {CONCENTRATION_REPLICAS}");
            cfg.experiment.replicas = CONCENTRATION_REPLICAS;
        }
    }
    println!("{} seed={}", command.name(), cfg.sim.seed);
    let ledger = Ledger::new(&cfg, command);
    let result = match command {
        Command::Certify => certify_cmd(&cfg, &ledger),
        Command::Simulate => simulate_cmd(&cfg, &ledger),
        _ => experiment_cmd(command, &cfg, &ledger),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("{}", describe(&f));
            failure_code(&f)
        }
    }
}

/// Per-run ledger: echoed defaults and overrides, then `name,model,seed,verdict`.
struct Ledger {
    path: PathBuf,
    preamble: Vec<String>,
}

impl Ledger {
    fn new(cfg: &RunConfig, command: Command) -> Self {
        let mut preamble: Vec<String> = cfg.defaults_applied.iter().map(|d| format!("# default {d}")).collect();
        preamble.extend(cfg.overrides.iter().map(|o| format!("# set {o}")));
        Ledger { path: output_path(cfg, &format!("ledger_{}", command.name())), preamble }
    }

    fn write(&self, row: &str) -> Result<(), Failure> {
        let mut out = create(&self.path)?;
        for line in &self.preamble {
            writeln!(out, "{line}")?;
        }
        writeln!(out, "name,model,seed,verdict")?;
        writeln!(out, "{row}")?;
        out.flush()?;
        Ok(())
    }
}

fn output_path(cfg: &RunConfig, stem: &str) -> PathBuf {
    cfg.io.dir.join(format!("{stem}_seed{}.csv", cfg.sim.seed))
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn build_model(cfg: &RunConfig) -> Result<PotentialModel, Failure> {
    Ok(make_builtin(cfg.model.kind, cfg.model.beta, cfg.model.k, cfg.model.dim)?)
}

fn reference(model: &PotentialModel) -> Result<ReferenceFunction, Failure> {
    Ok(build_reference_function_with(model, &QuadratureSettings::default())?)
}

fn options(cfg: &RunConfig) -> CertifyOptions {
    CertifyOptions {
        eps: cfg.experiment.eps,
        eps_tilde: cfg.experiment.eps_tilde,
        eps_numerator: cfg.experiment.eps_numerator,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn write_report(path: &Path, r: &ConstantsReport) -> Result<(), Failure> {
    let mut out = create(path)?;
    writeln!(
        out,
        "h_margin,c_lip,kappa,k_eps,a_eps,c_hat,m2,c_g,hprime0,hprime_sup,truncation_radius"
    )?;
    writeln!(
        out,
        "{},{},{},{},{},{},{},{},{},{},{}",
        fmt_f64(r.h_margin),
        opt(r.c_lip),
        fmt_f64(r.kappa),
        opt(r.k_eps),
        opt(r.a_eps),
        opt(r.c_hat),
        fmt_f64(r.m2_mu0),
        fmt_f64(r.c_g_mu0),
        fmt_f64(r.hprime_at_zero),
        fmt_f64(r.hprime_sup),
        fmt_f64(r.truncation_radius)
    )?;
    out.flush()?;
    Ok(())
}

fn certify_cmd(cfg: &RunConfig, ledger: &Ledger) -> Result<u8, Failure> {
    let model = build_model(cfg)?;
    let rf = reference(&model)?;
    let path = output_path(cfg, "certify");
    let (report, code) = match certify(&model, &rf, &options(cfg), &cfg.experiment.mu0) {
        Ok(r) => (r, EXIT_OK),
        Err(Error::InteractionTooStrong(r)) => (*r, EXIT_FAILED),
        Err(e) => return Err(e.into()),
    };
    write_report(&path, &report)?;
    let status = if report.certified { "certified" } else { "uncertified" };
    ledger.write(&format!("certify,{},{},{status}", model.summary().replace(',', ";"), cfg.sim.seed))?;
    println!("{status}: h_margin={} -> {}", report.h_margin, path.display());
    Ok(code)
}

fn sim_config(cfg: &RunConfig) -> SimConfig {
    SimConfig {
        dt: cfg.sim.dt,
        t_end: cfg.sim.t_end,
        n_particles: cfg.sim.n,
        dim: cfg.model.dim,
        seed: cfg.sim.seed,
        workers: cfg.sim.workers,
    }
}

fn simulate_cmd(cfg: &RunConfig, ledger: &Ledger) -> Result<u8, Failure> {
    let model = build_model(cfg)?;
    let sim = sim_config(cfg);
    let ens = Ensemble::sample(sim.n_particles, sim.dim, &cfg.experiment.mu0, sim.seed)?;
    let mut state = SimState::Particles(ens);
    let path = output_path(cfg, "simulate");
    let mut writer = SnapshotWriter::new(create(&path)?, cfg.io.stride);
    simulator::run(&model, &sim, &mut state, &mut [&mut writer])?;
    writer.into_inner().flush()?;
    ledger.write(&format!("simulate,{},{},completed", model.summary().replace(',', ";"), cfg.sim.seed))?;
    println!("completed -> {}", path.display());
    Ok(EXIT_OK)
}

fn experiment_config(cfg: &RunConfig) -> ExperimentConfig {
    ExperimentConfig {
        sim: sim_config(cfg),
        delta: cfg.sim.delta,
        replicas: cfg.experiment.replicas,
        record_every: cfg.experiment.record_every,
        burn_in: cfg.experiment.burn_in,
        cloud_budget: (cfg.experiment.cloud_budget > 0).then_some(cfg.experiment.cloud_budget),
    }
}

fn certified(model: &PotentialModel, rf: &ReferenceFunction, cfg: &RunConfig) -> Result<ConstantsReport, Failure> {
    Ok(certify(model, rf, &options(cfg), &cfg.experiment.mu0)?)
}

fn experiment_cmd(command: Command, cfg: &RunConfig, ledger: &Ledger) -> Result<u8, Failure> {
    let ex = &cfg.experiment;
    let econf = experiment_config(cfg);
    let result = if command == Command::Sharpness {
        if cfg.model.kind != ModelKind::Gaussian {
            return Err(ConfigError("`sharpness` needs model.kind = gaussian".into()).into());
        }
        let x0 = cfg.configuration(&ex.x0, "experiment.x0")?;
        gaussian_sharpness_check(cfg.model.beta, cfg.model.k, &x0, &econf)?
    } else {
        let model = build_model(cfg)?;
        let rf = reference(&model)?;
        let report = certified(&model, &rf, cfg)?;
        match command {
            Command::Contraction => {
                let (x0, y0) = (cfg.configuration(&ex.x0, "experiment.x0")?, cfg.configuration(&ex.y0, "experiment.y0")?);
                contraction_experiment(&model, &report, &x0, &y0, &econf)?
            }
            Command::Integrated => {
                let (x0, y0) = (cfg.configuration(&ex.x0, "experiment.x0")?, cfg.configuration(&ex.y0, "experiment.y0")?);
                integrated_distance_experiment(&model, &report, &rf, &x0, &y0, &econf)?
            }
            Command::Chaos => {
                chaos_experiment(&model, &report, &ex.mu0, ex.k_marginal, &ex.n_list, &ex.t_grid, &econf)?
            }
            Command::Pathchaos => {
                path_chaos_experiment(&model, &report, &ex.mu0, ex.k_marginal, cfg.sim.n, &ex.t_grid, &econf)?
            }
            Command::Moments => moment_experiment(&model, &report, &ex.mu0, ex.lambda, &econf)?,
            Command::Concentrate => {
                let params = ConcentrationParams {
                    n: cfg.sim.n,
                    horizon: cfg.sim.t_end,
                    delta: 0.0,
                    alpha: ex.alpha,
                    order: ex.order,
                };
                concentration_experiment(&model, &report, &ex.mu0, ex.kind, &params, &ex.delta_grid, &econf)?
            }
            Command::Certify | Command::Simulate | Command::Sharpness => unreachable!("handled elsewhere"),
        }
    };
    write_result(command, cfg, &result)?;
    ledger.write(&result.ledger_row(cfg.sim.seed))?;
    for note in &result.notes {
        println!("note: {note}");
    }
    for check in &result.checks {
        println!("check {}: {} ({})", check.name, if check.passed { "passed" } else { "failed" }, check.detail);
    }
    println!("{}", result.verdict);
    Ok(match result.verdict {
        Verdict::BoundRespected => EXIT_OK,
        Verdict::BoundViolated => EXIT_FAILED,
        Verdict::Inconclusive => EXIT_ERROR,
    })
}

fn write_result(command: Command, cfg: &RunConfig, result: &ExperimentResult) -> Result<(), Failure> {
    let path = output_path(cfg, command.name());
    let mut out = create(&path)?;
    result.write_csv(&mut out)?;
    out.flush()?;
    for aux in &result.aux {
        let mut out = create(&output_path(cfg, &format!("{}_{}", command.name(), aux.name)))?;
        result.write_aux_csv(aux, &mut out)?;
        out.flush()?;
    }
    println!("wrote {}", path.display());
    Ok(())
}

//! Monte Carlo campaigns that compare simulated quantities with certified bounds.
//!
//! Every driver runs independent replicas seeded by `derive_seed(seed, r)`,
//! aggregates them in replica-index order and returns an [`ExperimentResult`]
//! whose verdict is a pure function of the recorded series.

use std::fmt;
use std::io::Write;

use crate::certificates::{
    concentration_bound, ConcentrationKind, ConcentrationParams, ConstantsReport, InitialLaw, ReferenceFunction,
};
use crate::error::{invalid, Error, Result};
use crate::metrics::{self, mean_stderr};
use crate::noise::derive_seed;
use crate::par;
use crate::potentials::{make_builtin, ModelKind, PotentialModel};
use crate::simulator::{
    fmt_f64, step_chaos_coupled, step_coupled, step_particles, step_particles_deterministic, CoupledEnsemble,
    Ensemble, LawProvider, SimConfig,
};

/// Monte Carlo settings shared by the drivers.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub sim: SimConfig,
    /// Width of the band in which the coupling switches from reflection to synchronous.
    pub delta: f64,
    pub replicas: usize,
    /// Recording stride in steps.
    pub record_every: u64,
    /// Fraction of the recorded points dropped before fitting decay rates.
    pub burn_in: f64,
    /// Largest reference cloud allowed when no exact law is available.
    pub cloud_budget: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            sim: SimConfig::default(),
            delta: 0.5,
            replicas: 2000,
            record_every: 100,
            burn_in: 0.1,
            cloud_budget: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    BoundRespected,
    BoundViolated,
    Inconclusive,
}

impl Verdict {
    pub fn name(self) -> &'static str {
        match self {
            Verdict::BoundRespected => "bound_respected",
            Verdict::BoundViolated => "bound_violated",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Comparison {
    /// `measured <= bound + k * stderr + slack`.
    Upper,
    /// `|measured - bound| <= k * stderr + slack`.
    TwoSided,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerance {
    pub k_sigma: f64,
    pub comparison: Comparison,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeriesPoint {
    pub abscissa: f64,
    pub measured: f64,
    pub stderr: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundPoint {
    pub abscissa: f64,
    pub bound: f64,
    /// Deterministic allowance added to the statistical one.
    pub slack: f64,
}

/// A secondary pass/fail condition that feeds into the verdict.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuxSeries {
    pub name: String,
    pub points: Vec<SeriesPoint>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentResult {
    pub name: String,
    pub model_summary: String,
    pub series: Vec<SeriesPoint>,
    pub bound_series: Vec<BoundPoint>,
    pub tolerance: Tolerance,
    pub checks: Vec<Check>,
    /// Scalars written as extra CSV columns, such as a fitted rate.
    pub scalars: Vec<(String, f64)>,
    /// Reported but never verdicted.
    pub aux: Vec<AuxSeries>,
    pub notes: Vec<String>,
    pub verdict: Verdict,
}

impl ExperimentResult {
    fn new(name: &str, model: &PotentialModel, tolerance: Tolerance) -> Self {
        ExperimentResult {
            name: name.to_string(),
            model_summary: model.summary(),
            series: Vec::new(),
            bound_series: Vec::new(),
            tolerance,
            checks: Vec::new(),
            scalars: Vec::new(),
            aux: Vec::new(),
            notes: Vec::new(),
            verdict: Verdict::Inconclusive,
        }
    }

    fn push(&mut self, abscissa: f64, measured: f64, stderr: f64, bound: f64, slack: f64) {
        self.series.push(SeriesPoint { abscissa, measured, stderr });
        self.bound_series.push(BoundPoint { abscissa, bound, slack });
    }

    fn check(&mut self, name: &str, value: f64, passed: bool, detail: String) {
        self.checks.push(Check { name: name.to_string(), value, passed, detail });
    }

    pub fn scalar(&self, name: &str) -> Option<f64> {
        self.scalars.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn check_named(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn aux_named(&self, name: &str) -> Option<&AuxSeries> {
        self.aux.iter().find(|a| a.name == name)
    }

    /// Verdict of a single grid point.
    pub fn point_verdict(&self, i: usize) -> Verdict {
        let (p, b) = (self.series[i], self.bound_series[i]);
        if !(p.measured.is_finite() && p.stderr.is_finite() && b.bound.is_finite()) {
            return Verdict::Inconclusive;
        }
        let allowance = self.tolerance.k_sigma * p.stderr + b.slack;
        let ok = match self.tolerance.comparison {
            Comparison::Upper => p.measured <= b.bound + allowance,
            Comparison::TwoSided => (p.measured - b.bound).abs() <= allowance,
        };
        if ok {
            Verdict::BoundRespected
        } else {
            Verdict::BoundViolated
        }
    }

    fn finish(mut self) -> Self {
        let points: Vec<Verdict> = (0..self.series.len()).map(|i| self.point_verdict(i)).collect();
        self.verdict = if points.is_empty() || points.contains(&Verdict::Inconclusive) {
            Verdict::Inconclusive
        } else if points.contains(&Verdict::BoundViolated) || self.checks.iter().any(|c| !c.passed) {
            Verdict::BoundViolated
        } else {
            Verdict::BoundRespected
        };
        self
    }

    /// `abscissa, measured, stderr, bound, verdict` followed by one column per scalar.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let mut header = String::from("abscissa,measured,stderr,bound,verdict");
        for (name, _) in &self.scalars {
            header.push(',');
            header.push_str(name);
        }
        writeln!(out, "{header}")?;
        for (i, (p, b)) in self.series.iter().zip(&self.bound_series).enumerate() {
            let mut line = format!(
                "{},{},{},{},{}",
                fmt_f64(p.abscissa),
                fmt_f64(p.measured),
                fmt_f64(p.stderr),
                fmt_f64(b.bound),
                self.point_verdict(i)
            );
            for (_, v) in &self.scalars {
                line.push(',');
                line.push_str(&fmt_f64(*v));
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    /// `abscissa, measured, stderr` for one auxiliary series.
    pub fn write_aux_csv<W: Write>(&self, aux: &AuxSeries, mut out: W) -> Result<()> {
        writeln!(out, "abscissa,measured,stderr")?;
        for p in &aux.points {
            writeln!(out, "{},{},{}", fmt_f64(p.abscissa), fmt_f64(p.measured), fmt_f64(p.stderr))?;
        }
        Ok(())
    }

    /// `name, model, seed, verdict`.
    pub fn ledger_row(&self, seed: u64) -> String {
        format!("{},{},{},{}", self.name, self.model_summary.replace(',', ";"), seed, self.verdict)
    }
}

fn check_config(config: &ExperimentConfig) -> Result<u64> {
    if config.replicas == 0 {
        return Err(invalid("experiment.replicas", "must be positive"));
    }
    if !(config.delta > 0.0) || !config.delta.is_finite() {
        return Err(invalid("sim.delta", "must be positive"));
    }
    if !(0.0..1.0).contains(&config.burn_in) {
        return Err(invalid("experiment.burn_in", "must lie in [0, 1)"));
    }
    config.sim.steps()
}

/// Runs `f` for every replica in parallel; results come back in index order.
fn replicas<R: Send>(
    config: &ExperimentConfig,
    count: usize,
    stream: u64,
    f: impl Fn(u64) -> Result<R> + Sync + Send,
) -> Result<Vec<R>> {
    let base = derive_seed(config.sim.seed, stream);
    let workers = par::Workers::new(config.sim.workers);
    workers
        .install(|| par::map_indexed(count, |r| f(derive_seed(base, r as u64))))
        .into_iter()
        .collect()
}

/// Step indices `0, every, 2 every, ..` plus the final step.
fn record_steps(steps: u64, every: u64) -> Vec<u64> {
    let every = every.max(1);
    let mut out: Vec<u64> = (0..=steps).step_by(every as usize).collect();
    if *out.last().unwrap() != steps {
        out.push(steps);
    }
    out
}

fn steps_for_times(times: &[f64], dt: f64) -> Result<Vec<u64>> {
    times
        .iter()
        .map(|&t| {
            if !(t >= 0.0) || !t.is_finite() {
                Err(invalid("experiment.t_grid", "times must be nonnegative"))
            } else {
                Ok((t / dt).round() as u64)
            }
        })
        .collect()
}

/// Column-wise mean and standard error of per-replica rows.
fn aggregate(rows: &[Vec<f64>]) -> Vec<(f64, f64)> {
    let width = rows.first().map_or(0, Vec::len);
    (0..width)
        .map(|g| mean_stderr(&rows.iter().map(|r| r[g]).collect::<Vec<f64>>()))
        .collect()
}

fn require_contraction(report: &ConstantsReport) -> Result<(f64, f64)> {
    if !report.certified {
        return Err(Error::Uncertified);
    }
    match (report.k_eps, report.a_eps) {
        (Some(k), Some(a)) if k > 0.0 => Ok((k, a)),
        _ => Err(invalid("eps", "contraction rate must be positive")),
    }
}

fn coupled_pair(dim: usize, x0: &[f64], y0: &[f64], seed: u64, delta: f64) -> Result<CoupledEnsemble> {
    if x0.len() != y0.len() {
        return Err(Error::ShapeMismatch("x0 and y0 differ in length".into()));
    }
    CoupledEnsemble::new(Ensemble::new(dim, x0.to_vec(), seed)?, Ensemble::new(dim, y0.to_vec(), seed)?, delta)
}

/// Expected coupled distance against `A e^{-K t} d_l1(x0, y0)`.
pub fn contraction_experiment(
    model: &PotentialModel,
    report: &ConstantsReport,
    x0: &[f64],
    y0: &[f64],
    config: &ExperimentConfig,
) -> Result<ExperimentResult> {
    require_contraction(report)?;
    let steps = check_config(config)?;
    let dim = model.dim();
    let d0 = metrics::d_l1(x0, y0, dim)?;
    let marks = record_steps(steps, config.record_every);
    let dt = config.sim.dt;
    let rows = replicas(config, config.replicas, 0, |seed| {
        let mut c = coupled_pair(dim, x0, y0, seed, config.delta)?;
        let mut row = Vec::with_capacity(marks.len());
        for &m in &marks {
            while c.step_index() < m {
                step_coupled(model, &mut c, dt)?;
            }
            row.push(c.distance());
        }
        Ok(row)
    })?;
    let mut res = ExperimentResult::new(
        "contraction",
        model,
        Tolerance { k_sigma: 3.0, comparison: Comparison::Upper },
    );
    let times: Vec<f64> = marks.iter().map(|&m| m as f64 * dt).collect();
    for (t, (mean, se)) in times.iter().zip(aggregate(&rows)) {
        res.push(*t, mean, se, report.contraction_bound(*t, d0)?, 0.0);
    }
    let measured: Vec<f64> = res.series.iter().map(|p| p.measured).collect();
    match metrics::fit_decay_rate_after(&times, &measured, config.burn_in) {
        Ok(fit) => {
            res.scalars.push(("fitted_rate".into(), fit.rate));
            res.scalars.push(("fitted_prefactor".into(), fit.prefactor / d0));
            res.scalars.push(("r_squared".into(), fit.r_squared));
        }
        Err(_) => res.notes.push("decay fit skipped: the measured curve is not positive".into()),
    }
    Ok(res.finish())
}

/// Largest horizon tried before giving up on the tail criterion, in units of the starting horizon.
const MAX_HORIZON_DOUBLINGS: u32 = 6;

/// Time integral of the expected coupled distance against
/// `sum_i h(|x0_i - y0_i|) / margin`.
pub fn integrated_distance_experiment(
    model: &PotentialModel,
    report: &ConstantsReport,
    rf: &ReferenceFunction,
    x0: &[f64],
    y0: &[f64],
    config: &ExperimentConfig,
) -> Result<ExperimentResult> {
    if !report.certified {
        return Err(Error::Uncertified);
    }
    check_config(config)?;
    let dim = model.dim();
    if x0.len() != y0.len() || x0.len() % dim != 0 {
        return Err(Error::ShapeMismatch("x0 and y0 must be N x d arrays of equal size".into()));
    }
    let gaps: Vec<f64> = x0
        .chunks_exact(dim)
        .zip(y0.chunks_exact(dim))
        .map(|(a, b)| metrics::d_l1(a, b, dim))
        .collect::<Result<_>>()?;
    let bound = report.integrated_bound(rf, &gaps)?;
    let dt = config.sim.dt;
    let mut horizon = match report.k_eps {
        Some(k) if k > 0.0 => config.sim.t_end.max(10.0 / k),
        _ => config.sim.t_end,
    };
    horizon = (horizon / dt - 1e-9).ceil() * dt;
    for _ in 0..=MAX_HORIZON_DOUBLINGS {
        let steps = SimConfig { t_end: horizon, ..config.sim }.steps()?;
        let marks = record_steps(steps, config.record_every);
        let rows = replicas(config, config.replicas, 1, |seed| {
            let mut c = coupled_pair(dim, x0, y0, seed, config.delta)?;
            let mut integral = 0.0;
            let mut curve = Vec::with_capacity(marks.len() + 1);
            for s in 0..steps {
                if marks.binary_search(&s).is_ok() {
                    curve.push(c.distance());
                }
                integral += c.distance() * dt;
                step_coupled(model, &mut c, dt)?;
            }
            curve.push(c.distance());
            curve.push(integral);
            Ok(curve)
        })?;
        let agg = aggregate(&rows);
        let (integral, se) = *agg.last().unwrap();
        let curve = &agg[..agg.len() - 1];
        let times: Vec<f64> = marks.iter().map(|&m| m as f64 * dt).collect();
        let tail = tail_estimate(&times, curve, config.burn_in);
        if tail <= 0.01 * integral || integral == 0.0 {
            let mut res = ExperimentResult::new(
                "integrated_distance",
                model,
                Tolerance { k_sigma: 3.0, comparison: Comparison::Upper },
            );
            res.push(horizon, integral, se, bound, 0.0);
            res.scalars.push(("horizon".into(), horizon));
            res.scalars.push(("tail_estimate".into(), tail));
            res.aux.push(AuxSeries {
                name: "distance".into(),
                points: times
                    .iter()
                    .zip(curve)
                    .map(|(&t, &(m, s))| SeriesPoint { abscissa: t, measured: m, stderr: s })
                    .collect(),
            });
            return Ok(res.finish());
        }
        horizon *= 2.0;
    }
    Err(Error::ToleranceUnreachable { achieved: horizon, required: 0.01 })
}

/// `E d(T) / rate`, the mass of an exponential tail beyond the horizon.
fn tail_estimate(times: &[f64], curve: &[(f64, f64)], burn_in: f64) -> f64 {
    let last = curve.last().map_or(0.0, |c| c.0);
    if last <= 0.0 {
        return 0.0;
    }
    let positive = curve.iter().take_while(|c| c.0 > 0.0).count();
    match metrics::fit_decay_rate_after(&times[..positive], &curve[..positive].iter().map(|c| c.0).collect::<Vec<_>>(), burn_in) {
        Ok(fit) if fit.rate > 0.0 => last / fit.rate,
        _ => f64::INFINITY,
    }
}

/// OLS slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() < 2 || x.len() != y.len() || y.iter().chain(x).any(|v| !(*v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Acceptable range for the fitted log-log slope of the chaos distance.
pub const CHAOS_SLOPE_RANGE: (f64, f64) = (-0.7, -0.3);

fn make_provider(
    model: &PotentialModel,
    mu0: &InitialLaw,
    cloud_size: usize,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<LawProvider> {
    if model.kind() == ModelKind::Gaussian {
        return LawProvider::gaussian(model, mu0);
    }
    match config.cloud_budget {
        Some(budget) if cloud_size <= budget => {
            LawProvider::reference_cloud(model, mu0, cloud_size, derive_seed(seed, u64::MAX))
        }
        Some(budget) => Err(Error::ProviderUnavailable(format!(
            "reference cloud of {cloud_size} particles exceeds the budget {budget}"
        ))),
        None => Err(Error::ProviderUnavailable(format!(
            "no exact law for {} and no reference-cloud budget",
            model.kind()
        ))),
    }
}

fn provider_mean(provider: &LawProvider, dim: usize) -> Vec<f64> {
    match provider {
        LawProvider::GaussianExact { law, time, .. } => law.mean_at(*time),
        LawProvider::ReferenceCloud(cloud) => column_means(cloud.positions(), dim),
    }
}

fn column_means(positions: &[f64], dim: usize) -> Vec<f64> {
    let n = (positions.len() / dim) as f64;
    let mut m = vec![0.0; dim];
    for p in positions.chunks_exact(dim) {
        for (a, b) in m.iter_mut().zip(p) {
            *a += b;
        }
    }
    m.iter_mut().for_each(|a| *a /= n);
    m
}

/// Per-replica observations of the chaos coupling at one grid time.
struct ChaosSample {
    /// `k` times the mean distance between coupled copies.
    distance: f64,
    /// First coordinate of particle 0.
    marginal: f64,
    /// Mean first coordinate of the particle system minus that of `mu_t`.
    bias: f64,
    /// Marginal W1 to the cloud, when the provider is a cloud.
    cloud_w1: Option<f64>,
}

#[allow(clippy::too_many_arguments)]
fn chaos_replica(
    model: &PotentialModel,
    mu0: &InitialLaw,
    n: usize,
    k: usize,
    marks: &[u64],
    cloud_size: usize,
    config: &ExperimentConfig,
    seed: u64,
    mut path: Option<&mut Vec<f64>>,
) -> Result<Vec<ChaosSample>> {
    let dim = model.dim();
    let dt = config.sim.dt;
    let x = Ensemble::sample(n, dim, mu0, seed)?;
    let y = Ensemble::sample(n, dim, mu0, seed)?;
    let mut c = CoupledEnsemble::new(x, y, config.delta)?;
    let mut provider = make_provider(model, mu0, cloud_size, config, seed)?;
    let mut out = Vec::with_capacity(marks.len());
    let mut integral = 0.0;
    let scale = k as f64 / n as f64;
    for &m in marks {
        while c.step_index() < m {
            integral += scale * c.distance() * dt;
            step_chaos_coupled(model, &mut c, &mut provider, dt)?;
        }
        if let Some(p) = path.as_deref_mut() {
            p.push(integral);
        }
        let mean = provider_mean(&provider, dim);
        let ym = column_means(c.y.positions(), dim);
        let cloud_w1 = match &provider {
            LawProvider::ReferenceCloud(cloud) if dim == 1 => {
                Some(metrics::w1_samples(c.y.positions(), cloud.positions()))
            }
            _ => None,
        };
        out.push(ChaosSample {
            distance: scale * c.distance(),
            marginal: c.y.particle(0)[0],
            bias: ym[0] - mean[0],
            cloud_w1,
        });
    }
    Ok(out)
}

fn chaos_checks(report: &ConstantsReport, k: usize, n_list: &[usize]) -> Result<()> {
    if k == 0 {
        return Err(invalid("experiment.k_marginal", "must be at least 1"));
    }
    if n_list.is_empty() {
        return Err(invalid("experiment.n_list", "must not be empty"));
    }
    for &n in n_list {
        if k > n {
            return Err(invalid("experiment.k_marginal", format!("exceeds N = {n}")));
        }
        report.chaos_bound(k, n)?;
    }
    Ok(())
}

/// Coupled distance between the first `k` particles and independent nonlinear
/// copies for each `N`, against the uniform-in-time chaos bound.
pub fn chaos_experiment(
    model: &PotentialModel,
    report: &ConstantsReport,
    mu0: &InitialLaw,
    k: usize,
    n_list: &[usize],
    t_grid: &[f64],
    config: &ExperimentConfig,
) -> Result<ExperimentResult> {
    chaos_checks(report, k, n_list)?;
    check_config(config)?;
    if t_grid.is_empty() {
        return Err(invalid("experiment.t_grid", "must not be empty"));
    }
    let dt = config.sim.dt;
    let marks = steps_for_times(t_grid, dt)?;
    let mut sorted = marks.clone();
    sorted.sort_unstable();
    sorted.dedup();
    let cloud_size = 10 * n_list.iter().copied().max().unwrap();
    let mut res = ExperimentResult::new("chaos", model, Tolerance { k_sigma: 3.0, comparison: Comparison::Upper });
    let t_final = *sorted.last().unwrap() as f64 * dt;
    let exact_law = match LawProvider::gaussian(model, mu0) {
        Ok(LawProvider::GaussianExact { law, .. }) if model.dim() == 1 => Some(law),
        _ => None,
    };
    let mut final_points = Vec::new();
    let mut grid_points = Vec::new();
    for &n in n_list {
        let samples = replicas(config, config.replicas, n as u64, |seed| {
            chaos_replica(model, mu0, n, k, &sorted, cloud_size, config, seed, None)
        })?;
        let bound = report.chaos_bound(k, n)?;
        let mut dist = Vec::new();
        let mut bias = Vec::new();
        let mut marg = Vec::new();
        let mut cloud = Vec::new();
        for (g, &m) in sorted.iter().enumerate() {
            let t = m as f64 * dt;
            let (dm, ds) = mean_stderr(&samples.iter().map(|s| s[g].distance).collect::<Vec<_>>());
            let (bm, bs) = mean_stderr(&samples.iter().map(|s| s[g].bias).collect::<Vec<_>>());
            dist.push(SeriesPoint { abscissa: t, measured: dm, stderr: ds });
            bias.push(SeriesPoint { abscissa: t, measured: bm.abs(), stderr: bs });
            grid_points.push((n, t, dm, ds, bound));
            let draws: Vec<f64> = samples.iter().map(|s| s[g].marginal).collect();
            if let Some(law) = &exact_law {
                let w = metrics::w1_to_gaussian(&draws, law.mean_at(t)[0], law.variance_at(t).sqrt());
                marg.push(SeriesPoint { abscissa: t, measured: w, stderr: f64::NAN });
            }
            let cw: Vec<f64> = samples.iter().filter_map(|s| s[g].cloud_w1).collect();
            if !cw.is_empty() {
                let (cm, cs) = mean_stderr(&cw);
                cloud.push(SeriesPoint { abscissa: t, measured: cm, stderr: cs });
            }
        }
        let last = *dist.last().unwrap();
        final_points.push((n, last.measured, last.stderr, bound));
        res.aux.push(AuxSeries { name: format!("distance_n{n}"), points: dist });
        res.aux.push(AuxSeries { name: format!("bias_n{n}"), points: bias });
        if !marg.is_empty() {
            res.aux.push(AuxSeries { name: format!("marginal_w1_n{n}"), points: marg });
        }
        if !cloud.is_empty() {
            res.aux.push(AuxSeries { name: format!("cloud_w1_n{n}"), points: cloud });
        }
    }
    for &(n, m, s, b) in &final_points {
        res.push(n as f64, m, s, b, 0.0);
    }
    let interior = grid_points
        .iter()
        .filter(|&&(_, t, dm, ds, b)| t < t_final && dm > b + 3.0 * ds)
        .count();
    res.check(
        "grid_bound",
        interior as f64,
        interior == 0,
        format!("{interior} earlier grid times above the bound"),
    );
    let ns: Vec<f64> = final_points.iter().map(|p| p.0 as f64).collect();
    let ms: Vec<f64> = final_points.iter().map(|p| p.1).collect();
    match loglog_slope(&ns, &ms) {
        Some(slope) => {
            res.scalars.push(("loglog_slope".into(), slope));
            let (lo, hi) = CHAOS_SLOPE_RANGE;
            res.check("slope", slope, (lo..=hi).contains(&slope), format!("slope {slope:.4} vs [{lo}, {hi}]"));
        }
        None => res.notes.push("slope not fitted: fewer than two N or a zero distance".into()),
    }
    res.scalars.push(("t".into(), t_final));
    Ok(res.finish())
}

/// Time-integrated chaos distance per particle against the linear-in-time path bound.
pub fn path_chaos_experiment(
    model: &PotentialModel,
    report: &ConstantsReport,
    mu0: &InitialLaw,
    k: usize,
    n: usize,
    t_grid: &[f64],
    config: &ExperimentConfig,
) -> Result<ExperimentResult> {
    chaos_checks(report, k, &[n])?;
    check_config(config)?;
    if t_grid.is_empty() {
        return Err(invalid("experiment.t_grid", "must not be empty"));
    }
    let dt = config.sim.dt;
    let mut marks = steps_for_times(t_grid, dt)?;
    marks.sort_unstable();
    marks.dedup();
    let rows = replicas(config, config.replicas, n as u64, |seed| {
        let mut path = Vec::with_capacity(marks.len());
        chaos_replica(model, mu0, n, k, &marks, 10 * n, config, seed, Some(&mut path))?;
        Ok(path.into_iter().map(|v| v / k as f64).collect::<Vec<f64>>())
    })?;
    let mut res = ExperimentResult::new(
        "path_chaos",
        model,
        Tolerance { k_sigma: 3.0, comparison: Comparison::Upper },
    );
    for (&m, (mean, se)) in marks.iter().zip(aggregate(&rows)) {
        let t = m as f64 * dt;
        res.push(t, mean, se, report.path_chaos_bound(n, t)?, 0.0);
    }
    Ok(res.finish())
}

/// Largest admissible exponent for the Gaussian moment of the nonlinear law.
pub fn exp_moment_lambda_max(model: &PotentialModel, report: &ConstantsReport) -> Result<f64> {
    let eps = report.eps_tilde.ok_or(Error::DriftGrowthViolated(report.growth_gap))?;
    let growth = model.drift_growth();
    Ok(0.5 * (growth.c1 - growth.c3 - model.mixed_hessian_bound() - eps))
}

/// Second moment of a self-consistent cloud against `max(m2(mu0), c_hat)`,
/// plus the Gaussian moment `E exp(lambda |X_t|^2)`.
pub fn moment_experiment(
    model: &PotentialModel,
    report: &ConstantsReport,
    mu0: &InitialLaw,
    lambda: f64,
    config: &ExperimentConfig,
) -> Result<ExperimentResult> {
    let scale = report.moment_scale().ok_or(Error::DriftGrowthViolated(report.growth_gap))?;
    let lambda_max = exp_moment_lambda_max(model, report)?;
    if !(lambda > 0.0 && lambda <= lambda_max) {
        return Err(invalid("lambda", format!("must lie in (0, {lambda_max}], got {lambda}")));
    }
    let steps = check_config(config)?;
    let marks = record_steps(steps, config.record_every);
    let dim = model.dim();
    let n = config.sim.n_particles;
    let dt = config.sim.dt;
    // per replica and mark: sum q, sum q^2, sum e, sum e^2 with q = |x|^2, e = exp(lambda q)
    let rows = replicas(config, config.replicas, 2, |seed| {
        let mut ens = Ensemble::sample(n, dim, mu0, seed)?;
        let mut row = Vec::with_capacity(4 * marks.len());
        for &m in &marks {
            while ens.step_index() < m {
                step_particles(model, &mut ens, dt)?;
            }
            let mut acc = [0.0; 4];
            for p in ens.positions().chunks_exact(dim) {
                let q: f64 = p.iter().map(|v| v * v).sum();
                let e = (lambda * q).exp();
                acc[0] += q;
                acc[1] += q * q;
                acc[2] += e;
                acc[3] += e * e;
            }
            row.extend_from_slice(&acc);
        }
        Ok(row)
    })?;
    let count = (n * config.replicas) as f64;
    let pooled = |g: usize, j: usize| -> (f64, f64) {
        let s: f64 = rows.iter().map(|r| r[4 * g + j]).sum();
        let s2: f64 = rows.iter().map(|r| r[4 * g + j + 1]).sum();
        let mean = s / count;
        let var = if count > 1.0 { ((s2 - count * mean * mean) / (count - 1.0)).max(0.0) } else { 0.0 };
        (mean, (var / count).sqrt())
    };
    let mut res = ExperimentResult::new("moments", model, Tolerance { k_sigma: 3.0, comparison: Comparison::Upper });
    let mut exp_series = Vec::with_capacity(marks.len());
    for (g, &m) in marks.iter().enumerate() {
        let t = m as f64 * dt;
        let (q, qs) = pooled(g, 0);
        let root = q.sqrt();
        let se = if root > 0.0 { qs / (2.0 * root) } else { 0.0 };
        res.push(t, root, se, scale, 0.0);
        let (e, es) = pooled(g, 2);
        exp_series.push(SeriesPoint { abscissa: t, measured: e, stderr: es });
    }
    let blowup = monotone_blowup(&exp_series);
    res.check(
        "exp_moment_bounded",
        exp_series.last().map_or(f64::NAN, |p| p.measured),
        !blowup,
        format!("lambda = {lambda}, admissible up to {lambda_max}"),
    );
    res.scalars.push(("lambda".into(), lambda));
    res.aux.push(AuxSeries { name: "exp_moment".into(), points: exp_series });
    Ok(res.finish())
}

/// True when the second half of the series only increases and ends
/// significantly above its midpoint.
pub fn monotone_blowup(series: &[SeriesPoint]) -> bool {
    if series.len() < 3 {
        return false;
    }
    let mid = series.len() / 2;
    let tail = &series[mid..];
    let increasing = tail.windows(2).all(|w| w[1].measured >= w[0].measured);
    let (a, b) = (tail[0], tail[tail.len() - 1]);
    increasing && b.measured > a.measured + 3.0 * (a.stderr + b.stderr)
}

/// Kernel used for the concentration statistics: mean first coordinate of the tuple.
fn first_coordinate_mean(tuple: &[&[f64]]) -> f64 {
    tuple.iter().map(|p| p[0]).sum::<f64>() / tuple.len() as f64
}

/// Tail frequencies of a centred statistic against a concentration bound.
///
/// The endpoint kinds use the empirical mean of the first coordinate at the
/// horizon; the time-average kind integrates the order-`m` U-statistic of the
/// mean-first-coordinate kernel over the recorded grid.
pub fn concentration_experiment(
    model: &PotentialModel,
    report: &ConstantsReport,
    mu0: &InitialLaw,
    kind: ConcentrationKind,
    params: &ConcentrationParams,
    delta_grid: &[f64],
    config: &ExperimentConfig,
) -> Result<ExperimentResult> {
    if !report.certified {
        return Err(Error::Uncertified);
    }
    let horizon = params.horizon;
    let sim = SimConfig { t_end: horizon, n_particles: params.n, ..config.sim };
    let steps = check_config(&ExperimentConfig { sim, ..config.clone() })?;
    if params.n != config.sim.n_particles {
        return Err(invalid("sim.n", "must equal the statistic's particle count"));
    }
    if delta_grid.iter().any(|d| !(*d >= 0.0)) {
        return Err(invalid("experiment.delta_grid", "deviations must be nonnegative"));
    }
    if kind == ConcentrationKind::TimeAverageUstat && params.order > params.n {
        return Err(invalid("experiment.order", "exceeds N"));
    }
    let dim = model.dim();
    let dt = sim.dt;
    let marks = record_steps(steps, config.record_every);
    let stats = replicas(config, config.replicas, 3, |seed| {
        let mut ens = Ensemble::sample(params.n, dim, mu0, seed)?;
        match kind {
            ConcentrationKind::TimeAverageUstat => {
                let mut values = Vec::with_capacity(marks.len());
                for &m in &marks {
                    while ens.step_index() < m {
                        step_particles(model, &mut ens, dt)?;
                    }
                    values.push(u_statistic(first_coordinate_mean, params.order, ens.positions(), dim)?);
                }
                let mut integral = 0.0;
                for w in 0..marks.len() - 1 {
                    integral += values[w] * (marks[w + 1] - marks[w]) as f64 * dt;
                }
                Ok(if horizon > 0.0 { integral / horizon } else { values[0] })
            }
            _ => {
                for _ in 0..steps {
                    step_particles(model, &mut ens, dt)?;
                }
                Ok(column_means(ens.positions(), dim)[0])
            }
        }
    })?;
    let r = stats.len() as f64;
    let center = stats.iter().sum::<f64>() / r;
    let mut res = ExperimentResult::new(
        "concentration",
        model,
        Tolerance { k_sigma: 1.96, comparison: Comparison::Upper },
    );
    for &delta in delta_grid {
        let hits = stats.iter().filter(|&&s| s - center > delta).count() as f64;
        let freq = hits / r;
        let se = (freq * (1.0 - freq) / r).sqrt();
        let bound = concentration_bound(report, kind, &ConcentrationParams { delta, ..*params })?;
        if bound * r < 5.0 {
            res.notes.push(format!(
                "advisory: bound {bound:.3e} at deviation {delta} expects fewer than 5 exceedances in {r} replicas"
            ));
        }
        res.push(delta, freq, se, bound, 0.0);
    }
    let (_, spread) = mean_stderr(&stats);
    res.scalars.push(("statistic_sd".into(), spread * r.sqrt()));
    Ok(res.finish())
}

/// Checks `E g(X_t) = e^{-beta(1-K)t} g(x0)` for `g(x) = sum of all coordinates`
/// on the gaussian model, and the integral identity `∫ E g(X_t) dt = g(x0) / (beta(1-K))`.
pub fn gaussian_sharpness_check(beta: f64, k: f64, x0: &[f64], config: &ExperimentConfig) -> Result<ExperimentResult> {
    if !(0.0..1.0).contains(&k) {
        return Err(invalid("model.k", format!("must lie in [0, 1), got {k}")));
    }
    let dim = config.sim.dim;
    let model = make_builtin(ModelKind::Gaussian, beta, k, dim)?;
    let rate = beta * (1.0 - k);
    let g0: f64 = x0.iter().sum();
    let dt = config.sim.dt;
    let steps = check_config(config)?;
    let marks = record_steps(steps, config.record_every);
    let horizon = 10.0 / rate;
    let long_steps = (horizon / dt).round() as u64;
    let rows = replicas(config, config.replicas, 4, |seed| {
        let mut ens = Ensemble::new(dim, x0.to_vec(), seed)?;
        let mut row = Vec::with_capacity(marks.len() + 1);
        let mut integral = 0.0;
        let end = long_steps.max(steps);
        let mut next_mark = 0;
        for s in 0..=end {
            let g: f64 = ens.positions().iter().sum();
            if next_mark < marks.len() && marks[next_mark] == s {
                row.push(g);
                next_mark += 1;
            }
            if s < long_steps {
                integral += g * dt;
            }
            if s < end {
                step_particles(&model, &mut ens, dt)?;
            }
        }
        row.push(integral);
        Ok(row)
    })?;
    let agg = aggregate(&rows);
    let mut res = ExperimentResult::new(
        "gaussian_sharpness",
        &model,
        Tolerance { k_sigma: 3.0, comparison: Comparison::TwoSided },
    );
    let factor = 1.0 - rate * dt;
    for (&m, &(mean, se)) in marks.iter().zip(&agg) {
        let t = m as f64 * dt;
        let exact = (-rate * t).exp() * g0;
        let euler = factor.powi(m as i32) * g0;
        res.push(t, mean, se, exact, (euler - exact).abs());
    }
    let (integral, se) = *agg.last().unwrap();
    let target = g0 / rate;
    // noiseless Euler run isolates truncation and discretization from sampling error
    let mut det = Ensemble::new(dim, x0.to_vec(), config.sim.seed)?;
    let mut det_integral = 0.0;
    for _ in 0..long_steps {
        det_integral += det.positions().iter().sum::<f64>() * dt;
        step_particles_deterministic(&model, &mut det, dt)?;
    }
    let slack = (det_integral - target).abs();
    let within = (integral - target).abs() <= 3.0 * se + slack + 1e-12;
    res.check(
        "poisson_integral",
        integral,
        within,
        format!("measured {integral:.6} +- {se:.2e} vs {target:.6}"),
    );
    let rel = if target != 0.0 { (det_integral - target).abs() / target.abs() } else { det_integral.abs() };
    res.check(
        "poisson_integral_noiseless",
        det_integral,
        rel <= 1e-3,
        format!("relative error {rel:.2e}"),
    );
    res.scalars.push(("poisson_integral".into(), integral));
    res.scalars.push(("poisson_integral_noiseless".into(), det_integral));
    Ok(res.finish())
}

/// Largest number of tuples [`u_statistic`] will enumerate.
pub const U_STATISTIC_MAX_TUPLES: f64 = 1e8;

/// Average of `kernel` over ordered tuples of `m` distinct particles.
///
/// The kernel should be symmetric; that is not checked.
pub fn u_statistic(kernel: impl Fn(&[&[f64]]) -> f64, m: usize, positions: &[f64], dim: usize) -> Result<f64> {
    if dim == 0 || positions.len() % dim != 0 {
        return Err(Error::ShapeMismatch("positions must form an N x d array".into()));
    }
    let n = positions.len() / dim;
    if m == 0 || m > n {
        return Err(invalid("order", format!("must lie in [1, {n}], got {m}")));
    }
    let tuples: f64 = (0..m).map(|j| (n - j) as f64).product();
    if tuples > U_STATISTIC_MAX_TUPLES {
        return Err(Error::SizeGuard(format!("{tuples:e} tuples exceed {U_STATISTIC_MAX_TUPLES:e}")));
    }
    let particles: Vec<&[f64]> = positions.chunks_exact(dim).collect();
    let mut chosen: Vec<&[f64]> = Vec::with_capacity(m);
    let mut used = vec![false; n];
    let total = enumerate_tuples(&kernel, &particles, m, &mut chosen, &mut used);
    Ok(total / tuples)
}

fn enumerate_tuples<'a>(
    kernel: &impl Fn(&[&[f64]]) -> f64,
    particles: &[&'a [f64]],
    m: usize,
    chosen: &mut Vec<&'a [f64]>,
    used: &mut [bool],
) -> f64 {
    if chosen.len() == m {
        return kernel(chosen);
    }
    let mut total = 0.0;
    for i in 0..particles.len() {
        if used[i] {
            continue;
        }
        used[i] = true;
        chosen.push(particles[i]);
        total += enumerate_tuples(kernel, particles, m, chosen, used);
        chosen.pop();
        used[i] = false;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certificates::{build_reference_function, certify, CertifyOptions};

    fn gaussian(beta: f64, k: f64) -> (PotentialModel, ReferenceFunction, ConstantsReport) {
        let m = make_builtin(ModelKind::Gaussian, beta, k, 1).unwrap();
        let rf = build_reference_function(&m, 10.0, 10.0 / 4096.0, 1e-6).unwrap();
        let opts = CertifyOptions { eps: 1.0, eps_tilde: Some(0.25), eps_numerator: None };
        let rep = certify(&m, &rf, &opts, &InitialLaw::PointMass(vec![0.0])).unwrap();
        (m, rf, rep)
    }

    fn small(replicas: usize, t_end: f64, n: usize) -> ExperimentConfig {
        ExperimentConfig {
            sim: SimConfig { t_end, n_particles: n, ..SimConfig::default() },
            replicas,
            record_every: 50,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn u_statistic_examples() {
        let cfg = [1.0, 2.0, 3.0];
        assert_eq!(u_statistic(|t| t[0][0], 1, &cfg, 1).unwrap(), 2.0);
        let v = u_statistic(|t| t[0][0] * t[1][0], 2, &cfg, 1).unwrap();
        assert!((v - 22.0 / 6.0).abs() < 1e-15);
        assert_eq!(u_statistic(|_| 4.5, 3, &cfg, 1).unwrap(), 4.5);
        assert!(u_statistic(|_| 0.0, 4, &cfg, 1).is_err());
    }

    #[test]
    fn verdict_rules() {
        let m = make_builtin(ModelKind::Gaussian, 1.0, 0.0, 1).unwrap();
        let mut r = ExperimentResult::new("t", &m, Tolerance { k_sigma: 3.0, comparison: Comparison::Upper });
        r.push(0.0, 1.2, 0.1, 1.0, 0.0);
        assert_eq!(r.clone().finish().verdict, Verdict::BoundRespected);
        r.push(1.0, 1.4, 0.1, 1.0, 0.0);
        assert_eq!(r.clone().finish().verdict, Verdict::BoundViolated);
        r.push(2.0, f64::NAN, 0.1, 1.0, 0.0);
        assert_eq!(r.finish().verdict, Verdict::Inconclusive);
        let mut two = ExperimentResult::new("t", &m, Tolerance { k_sigma: 1.0, comparison: Comparison::TwoSided });
        two.push(0.0, 0.5, 0.1, 1.0, 0.0);
        assert_eq!(two.finish().verdict, Verdict::BoundViolated);
    }

    #[test]
    fn csv_layout() {
        let m = make_builtin(ModelKind::Gaussian, 1.0, 0.0, 1).unwrap();
        let mut r = ExperimentResult::new("t", &m, Tolerance { k_sigma: 3.0, comparison: Comparison::Upper });
        r.push(0.5, 0.25, 0.0, 1.0, 0.0);
        r.scalars.push(("fitted_rate".into(), 1.5));
        let r = r.finish();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "abscissa,measured,stderr,bound,verdict,fitted_rate");
        assert!(lines[1].ends_with(",bound_respected,1.5000000000000000e0"));
        assert!(r.ledger_row(7).ends_with(",7,bound_respected"));
    }

    #[test]
    fn identical_starts_never_separate() {
        let (m, rf, rep) = gaussian(2.0, 0.25);
        let x0 = vec![0.3; 4];
        let cfg = small(4, 0.5, 4);
        let res = contraction_experiment(&m, &rep, &x0, &x0, &cfg).unwrap();
        assert!(res.series.iter().all(|p| p.measured == 0.0));
        assert_eq!(res.verdict, Verdict::BoundRespected);
        let int = integrated_distance_experiment(&m, &rep, &rf, &x0, &x0, &cfg).unwrap();
        assert_eq!(int.series[0].measured, 0.0);
        let k = rep.k_eps.unwrap();
        assert!(int.series[0].abscissa >= 10.0 / k && int.series[0].abscissa < 10.0 / k + 1e-3);
    }

    #[test]
    fn zero_interaction_chaos_is_exact() {
        let (m, _, rep) = gaussian(1.0, 0.0);
        let mu0 = InitialLaw::PointMass(vec![0.0]);
        let res = chaos_experiment(&m, &rep, &mu0, 1, &[4, 8], &[0.1, 0.2], &small(3, 0.2, 4)).unwrap();
        for name in ["distance_n4", "distance_n8"] {
            assert!(res.aux_named(name).unwrap().points.iter().all(|p| p.measured == 0.0));
        }
        assert_eq!(res.verdict, Verdict::BoundRespected);
    }

    #[test]
    fn path_chaos_zero_horizon() {
        let (m, _, rep) = gaussian(1.0, 0.25);
        let mu0 = InitialLaw::PointMass(vec![0.0]);
        let res = path_chaos_experiment(&m, &rep, &mu0, 1, 6, &[0.0, 0.1], &small(2, 0.1, 6)).unwrap();
        assert_eq!(res.series[0].measured, 0.0);
        assert_eq!(res.bound_series[0].bound, 0.0);
        let b1 = rep.path_chaos_bound(101, 1.0).unwrap();
        assert!((rep.path_chaos_bound(101, 2.0).unwrap() - 2.0 * b1).abs() < 1e-15);
    }

    #[test]
    fn moment_lambda_range_enforced() {
        let (m, _, rep) = gaussian(1.0, 0.0);
        let mu0 = InitialLaw::PointMass(vec![0.0]);
        let err = moment_experiment(&m, &rep, &mu0, 5.0, &small(1, 0.1, 10)).unwrap_err();
        assert!(err.to_string().contains("0.375"), "{err}");
    }

    #[test]
    fn far_start_moment_uses_initial_scale() {
        let (m, _, _) = gaussian(1.0, 0.0);
        let rf = build_reference_function(&m, 10.0, 10.0 / 4096.0, 1e-6).unwrap();
        let mu0 = InitialLaw::PointMass(vec![100.0]);
        let rep = certify(&m, &rf, &CertifyOptions::default(), &mu0).unwrap();
        let res = moment_experiment(&m, &rep, &mu0, 0.2, &small(1, 0.5, 20)).unwrap();
        assert_eq!(res.bound_series[0].bound, 100.0);
        assert!(res.series.windows(2).all(|w| w[1].measured < w[0].measured));
    }

    #[test]
    fn concentration_tail_is_monotone_and_bounded() {
        let (m, _, _) = gaussian(2.0, 0.25);
        let rf = build_reference_function(&m, 10.0, 10.0 / 4096.0, 1e-6).unwrap();
        let mu0 = InitialLaw::IsotropicGaussian { variance: 0.5 };
        let rep = certify(&m, &rf, &CertifyOptions::default(), &mu0).unwrap();
        let params = ConcentrationParams { n: 10, horizon: 0.1, ..ConcentrationParams::default() };
        let cfg = small(200, 0.1, 10);
        let grid = [0.0, 0.05, 0.1, 0.2];
        let res = concentration_experiment(&m, &rep, &mu0, ConcentrationKind::EndpointEmpiricalMean, &params, &grid, &cfg)
            .unwrap();
        assert!(res.series.windows(2).all(|w| w[1].measured <= w[0].measured));
        assert!(res.series.iter().all(|p| p.measured <= 1.0));
        assert_eq!(res.bound_series[0].bound, 1.0);
        let ustat = ConcentrationParams { order: 1, ..params };
        let res = concentration_experiment(&m, &rep, &mu0, ConcentrationKind::TimeAverageUstat, &ustat, &grid, &cfg)
            .unwrap();
        assert_eq!(res.series.len(), 4);
    }

    #[test]
    fn sharpness_with_zero_sum_start() {
        let cfg = ExperimentConfig {
            sim: SimConfig { t_end: 0.5, n_particles: 2, ..SimConfig::default() },
            replicas: 50,
            record_every: 100,
            ..ExperimentConfig::default()
        };
        let res = gaussian_sharpness_check(2.0, 0.5, &[1.0, -1.0], &cfg).unwrap();
        assert!(res.series.iter().all(|p| p.measured.abs() <= 3.0 * p.stderr + 1e-12));
        assert!(gaussian_sharpness_check(2.0, 1.0, &[1.0], &cfg).is_err());
    }

    #[test]
    fn uncertified_reports_rejected() {
        let (m, rf, mut rep) = gaussian(1.0, 0.25);
        rep.certified = false;
        let cfg = small(1, 0.1, 2);
        assert!(contraction_experiment(&m, &rep, &[1.0, 0.0], &[0.0, 0.0], &cfg).is_err());
        assert!(integrated_distance_experiment(&m, &rep, &rf, &[1.0], &[0.0], &cfg).is_err());
    }

    #[test]
    fn results_independent_of_worker_count() {
        let (m, _, rep) = gaussian(2.0, 0.25);
        let mut cfg = small(16, 0.2, 5);
        let run = |cfg: &ExperimentConfig| {
            let mut buf = Vec::new();
            contraction_experiment(&m, &rep, &[1.0; 5], &[0.0; 5], cfg).unwrap().write_csv(&mut buf).unwrap();
            buf
        };
        let one = run(&cfg);
        cfg.sim.workers = 3;
        assert_eq!(one, run(&cfg));
    }
}

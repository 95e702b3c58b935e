//! Flat `section.key = value` run configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use meanfield::certificates::{ConcentrationKind, InitialLaw};
use meanfield::potentials::ModelKind;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

/// Every accepted key with its default; `None` marks a required key.
const SCHEMA: &[(&str, Option<&str>)] = &[
    ("model.kind", None),
    ("model.beta", Some("1")),
    ("model.k", Some("0")),
    ("model.dim", Some("1")),
    ("sim.dt", Some("0.001")),
    ("sim.t_end", Some("1")),
    ("sim.n", Some("10")),
    ("sim.seed", Some("0")),
    ("sim.workers", Some("1")),
    ("sim.delta", Some("0.5")),
    ("experiment.replicas", Some("2000")),
    ("experiment.n_list", Some("64,256,1024")),
    ("experiment.t_grid", Some("1,2")),
    ("experiment.delta_grid", Some("0.05,0.1,0.2,0.3")),
    ("experiment.eps", Some("1")),
    ("experiment.eps_tilde", Some("auto")),
    ("experiment.eps_numerator", Some("auto")),
    ("experiment.k_marginal", Some("1")),
    ("experiment.mu0", Some("point:0")),
    ("experiment.x0", Some("1")),
    ("experiment.y0", Some("0")),
    ("experiment.lambda", Some("0.2")),
    ("experiment.kind", Some("empirical_mean")),
    ("experiment.alpha", Some("1")),
    ("experiment.order", Some("1")),
    ("experiment.record_every", Some("100")),
    ("experiment.burn_in", Some("0.1")),
    ("experiment.cloud_budget", Some("0")),
    ("io.dir", Some("out")),
    ("io.stride", Some("100")),
];

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBlock {
    pub kind: ModelKind,
    pub beta: f64,
    pub k: f64,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimBlock {
    pub dt: f64,
    pub t_end: f64,
    pub n: usize,
    pub seed: u64,
    pub workers: usize,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentBlock {
    pub replicas: usize,
    pub n_list: Vec<usize>,
    pub t_grid: Vec<f64>,
    pub delta_grid: Vec<f64>,
    pub eps: f64,
    pub eps_tilde: Option<f64>,
    pub eps_numerator: Option<f64>,
    pub k_marginal: usize,
    pub mu0: InitialLaw,
    pub x0: Vec<f64>,
    pub y0: Vec<f64>,
    pub lambda: f64,
    pub kind: ConcentrationKind,
    pub alpha: f64,
    pub order: usize,
    pub record_every: u64,
    pub burn_in: f64,
    /// Zero disables the reference cloud.
    pub cloud_budget: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IoBlock {
    pub dir: PathBuf,
    pub stride: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelBlock,
    pub sim: SimBlock,
    pub experiment: ExperimentBlock,
    pub io: IoBlock,
    /// `key = value` for every default that was applied.
    pub defaults_applied: Vec<String>,
    /// `key = value` for every command-line override.
    pub overrides: Vec<String>,
}

/// Reads `section.key = value` lines; `#` starts a comment.
fn read_pairs(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut out = BTreeMap::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return err(format!("line {}: expected `section.key = value`", no + 1));
        };
        let key = key.trim();
        check_key(key)?;
        out.insert(key.to_string(), value.trim().to_string());
    }
    Ok(out)
}

fn check_key(key: &str) -> Result<(), ConfigError> {
    if SCHEMA.iter().any(|(k, _)| *k == key) {
        Ok(())
    } else {
        err(format!("unknown key `{key}`"))
    }
}

/// Parses `text`, then applies `section.key=value` overrides in order.
pub fn parse_with_overrides(text: &str, overrides: &[String]) -> Result<RunConfig, ConfigError> {
    let mut pairs = read_pairs(text)?;
    let mut applied = Vec::new();
    for o in overrides {
        let Some((key, value)) = o.split_once('=') else {
            return err(format!("override `{o}` is not `section.key=value`"));
        };
        let key = key.trim();
        check_key(key)?;
        pairs.insert(key.to_string(), value.trim().to_string());
        applied.push(format!("{key} = {}", value.trim()));
    }
    let mut defaults = Vec::new();
    for (key, default) in SCHEMA {
        if !pairs.contains_key(*key) {
            match default {
                Some(v) => {
                    pairs.insert(key.to_string(), v.to_string());
                    defaults.push(format!("{key} = {v}"));
                }
                None => return err(format!("`{key}` is required")),
            }
        }
    }
    let mut cfg = build(&Values(pairs))?;
    cfg.defaults_applied = defaults;
    cfg.overrides = applied;
    Ok(cfg)
}

struct Values(BTreeMap<String, String>);

impl Values {
    fn raw(&self, key: &str) -> &str {
        &self.0[key]
    }

    fn get<T: FromStr>(&self, key: &str, what: &str) -> Result<T, ConfigError> {
        self.raw(key)
            .parse()
            .or_else(|_| err(format!("`{key}` must be {what}, got `{}`", self.raw(key))))
    }

    fn positive(&self, key: &str) -> Result<f64, ConfigError> {
        let v: f64 = self.get(key, "a number")?;
        if v > 0.0 && v.is_finite() {
            Ok(v)
        } else {
            err(format!("`{key}` must be positive, got {v}"))
        }
    }

    fn count(&self, key: &str) -> Result<usize, ConfigError> {
        let v: usize = self.get(key, "a nonnegative integer")?;
        if v == 0 {
            return err(format!("`{key}` must be at least 1"));
        }
        Ok(v)
    }

    fn list<T: FromStr>(&self, key: &str, what: &str) -> Result<Vec<T>, ConfigError> {
        self.raw(key)
            .split(',')
            .map(|s| s.trim().parse().or_else(|_| err(format!("`{key}` must be a comma list of {what}"))))
            .collect()
    }

    fn optional(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.raw(key) {
            "auto" => Ok(None),
            _ => self.positive(key).map(Some),
        }
    }
}

fn parse_mu0(text: &str) -> Result<InitialLaw, ConfigError> {
    let bad = || err(format!("`experiment.mu0` must be `point:x1,..` or `gaussian:variance`, got `{text}`"));
    let Some((form, arg)) = text.split_once(':') else { return bad() };
    match form.trim() {
        "point" => {
            let coords: Result<Vec<f64>, _> = arg.split(',').map(|s| s.trim().parse()).collect();
            coords.map(InitialLaw::PointMass).or_else(|_| bad())
        }
        "gaussian" => match arg.trim().parse::<f64>() {
            Ok(v) if v >= 0.0 => Ok(InitialLaw::IsotropicGaussian { variance: v }),
            _ => bad(),
        },
        _ => bad(),
    }
}

fn parse_kind(text: &str) -> Result<ConcentrationKind, ConfigError> {
    match text {
        "general" => Ok(ConcentrationKind::EndpointGeneral),
        "empirical_mean" => Ok(ConcentrationKind::EndpointEmpiricalMean),
        "ustat" => Ok(ConcentrationKind::TimeAverageUstat),
        _ => err(format!("`experiment.kind` must be general, empirical_mean or ustat, got `{text}`")),
    }
}

fn build(v: &Values) -> Result<RunConfig, ConfigError> {
    let kind: ModelKind = v
        .raw("model.kind")
        .parse()
        .or_else(|_| err(format!("`model.kind` must be gaussian, curie_weiss or double_well, got `{}`", v.raw("model.kind"))))?;
    let model = ModelBlock {
        kind,
        beta: v.positive("model.beta")?,
        k: v.get("model.k", "a number")?,
        dim: v.count("model.dim")?,
    };
    let sim = SimBlock {
        dt: v.positive("sim.dt")?,
        t_end: {
            let t: f64 = v.get("sim.t_end", "a number")?;
            if !(t >= 0.0) {
                return err("`sim.t_end` must be nonnegative");
            }
            t
        },
        n: v.count("sim.n")?,
        seed: v.get("sim.seed", "an unsigned integer")?,
        workers: v.count("sim.workers")?,
        delta: v.positive("sim.delta")?,
    };
    let mut mu0 = parse_mu0(v.raw("experiment.mu0"))?;
    if let InitialLaw::PointMass(x) = &mu0 {
        if x.len() == 1 && model.dim > 1 {
            mu0 = InitialLaw::PointMass(vec![x[0]; model.dim]);
        } else if x.len() != model.dim {
            return err(format!("`experiment.mu0` point has {} coordinates, model.dim is {}", x.len(), model.dim));
        }
    }
    let burn_in: f64 = v.get("experiment.burn_in", "a number")?;
    if !(0.0..1.0).contains(&burn_in) {
        return err("`experiment.burn_in` must lie in [0, 1)");
    }
    let experiment = ExperimentBlock {
        replicas: v.count("experiment.replicas")?,
        n_list: v.list("experiment.n_list", "integers")?,
        t_grid: v.list("experiment.t_grid", "numbers")?,
        delta_grid: v.list("experiment.delta_grid", "numbers")?,
        eps: {
            let e: f64 = v.get("experiment.eps", "a number")?;
            if !(e >= 0.0) {
                return err("`experiment.eps` must be nonnegative");
            }
            e
        },
        eps_tilde: v.optional("experiment.eps_tilde")?,
        eps_numerator: v.optional("experiment.eps_numerator")?,
        k_marginal: v.count("experiment.k_marginal")?,
        mu0,
        x0: v.list("experiment.x0", "numbers")?,
        y0: v.list("experiment.y0", "numbers")?,
        lambda: v.positive("experiment.lambda")?,
        kind: parse_kind(v.raw("experiment.kind"))?,
        alpha: v.positive("experiment.alpha")?,
        order: v.count("experiment.order")?,
        record_every: v.get::<u64>("experiment.record_every", "a positive integer")?.max(1),
        burn_in,
        cloud_budget: v.get("experiment.cloud_budget", "a nonnegative integer")?,
    };
    let io = IoBlock { dir: PathBuf::from(v.raw("io.dir")), stride: v.get::<u64>("io.stride", "a positive integer")?.max(1) };
    Ok(RunConfig { model, sim, experiment, io, defaults_applied: Vec::new(), overrides: Vec::new() })
}

impl RunConfig {
    /// Expands a scalar to every coordinate of `n` particles, or checks a full list.
    pub fn configuration(&self, values: &[f64], key: &str) -> Result<Vec<f64>, ConfigError> {
        let len = self.sim.n * self.model.dim;
        match values.len() {
            1 => Ok(vec![values[0]; len]),
            l if l == len => Ok(values.to_vec()),
            l => err(format!("`{key}` has {l} entries; expected 1 or {len}")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
        parse_with_overrides(text, &[])
    }

    #[test]
    fn minimal_gaussian() {
        let cfg = parse_config("model.kind = gaussian\nmodel.beta = 2\nmodel.k = 0.5").unwrap();
        assert_eq!(cfg.model.kind, ModelKind::Gaussian);
        assert_eq!((cfg.model.beta, cfg.model.k), (2.0, 0.5));
        assert_eq!(cfg.sim.seed, 0);
        assert!(cfg.defaults_applied.iter().any(|d| d == "sim.seed = 0"));
        assert!(!cfg.defaults_applied.iter().any(|d| d.starts_with("model.beta")));
    }

    #[test]
    fn negative_beta_names_key() {
        let e = parse_config("model.kind = gaussian\nmodel.beta = -1").unwrap_err();
        assert!(e.0.contains("model.beta") && e.0.contains("positive"), "{e}");
    }

    #[test]
    fn missing_kind_required() {
        let e = parse_config("").unwrap_err();
        assert!(e.0.contains("model.kind") && e.0.contains("required"), "{e}");
    }

    #[test]
    fn unknown_key_named() {
        let e = parse_config("model.kind = gaussian\nsim.colour = blue").unwrap_err();
        assert!(e.0.contains("sim.colour"), "{e}");
    }

    #[test]
    fn type_mismatch() {
        let e = parse_config("model.kind = gaussian\nsim.n = many").unwrap_err();
        assert!(e.0.contains("sim.n"), "{e}");
    }

    #[test]
    fn comments_and_overrides() {
        let cfg = parse_with_overrides(
            "# header\nmodel.kind = double_well # trailing\nsim.seed = 3",
            &["sim.seed=9".to_string()],
        )
        .unwrap();
        assert_eq!(cfg.model.kind, ModelKind::DoubleWell);
        assert_eq!(cfg.sim.seed, 9);
        assert_eq!(cfg.overrides, vec!["sim.seed = 9".to_string()]);
        assert!(parse_with_overrides("model.kind = gaussian", &["nope=1".to_string()]).is_err());
    }

    #[test]
    fn initial_laws() {
        let cfg = parse_config("model.kind = gaussian\nexperiment.mu0 = gaussian:0.5").unwrap();
        assert_eq!(cfg.experiment.mu0, InitialLaw::IsotropicGaussian { variance: 0.5 });
        let cfg = parse_config("model.kind = gaussian\nmodel.dim = 2\nexperiment.mu0 = point:3").unwrap();
        assert_eq!(cfg.experiment.mu0, InitialLaw::PointMass(vec![3.0, 3.0]));
        assert!(parse_config("model.kind = gaussian\nexperiment.mu0 = uniform:1").is_err());
    }

    #[test]
    fn configuration_expansion() {
        let cfg = parse_config("model.kind = gaussian\nsim.n = 3").unwrap();
        assert_eq!(cfg.configuration(&[1.0], "experiment.x0").unwrap(), vec![1.0; 3]);
        assert!(cfg.configuration(&[1.0, 2.0], "experiment.x0").is_err());
    }
}

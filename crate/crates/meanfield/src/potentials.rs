//! Confinement and interaction potentials.
//!
//! A [`PotentialModel`] bundles the gradient of the confinement `V`, the
//! x-gradient of the pair interaction `W`, the radial dissipativity profile
//! `b0` and the structural constants consumed by the certificates.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Gaussian,
    CurieWeiss,
    DoubleWell,
    Custom,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Gaussian => "gaussian",
            ModelKind::CurieWeiss => "curie_weiss",
            ModelKind::DoubleWell => "double_well",
            ModelKind::Custom => "custom",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(ModelKind::Gaussian),
            "curie_weiss" => Ok(ModelKind::CurieWeiss),
            "double_well" => Ok(ModelKind::DoubleWell),
            "custom" => Ok(ModelKind::Custom),
            other => Err(invalid(
                "model.kind",
                format!("unknown kind `{other}` (expected gaussian, curie_weiss, double_well or custom)"),
            )),
        }
    }
}

/// Constants `(c1, c2, c3)` with `<x, grad V(x)> >= c1|x|^2 - c2` and
/// `<z, d2xx W z> >= -c3 |z|^2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DriftGrowth {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

impl DriftGrowth {
    /// `c1 - c3 - mixed`, which must be positive for the moment and chaos bounds.
    pub fn gap(&self, mixed_hessian_bound: f64) -> f64 {
        self.c1 - self.c3 - mixed_hessian_bound
    }
}

pub type VectorField = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
pub type PairField = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;
pub type RadialProfile = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type ScalarField = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type PairScalar = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// Evaluators and declared constants for a user-supplied model.
///
/// Nothing is inferred: the constants are taken as declared and only
/// checked on grids by [`validate_dissipativity`].
#[derive(Clone)]
pub struct CustomSpec {
    pub dim: usize,
    pub beta: f64,
    pub interaction_k: f64,
    pub grad_v: VectorField,
    pub grad_xw: PairField,
    pub b0: RadialProfile,
    pub mixed_hessian_bound: f64,
    pub lower_curvature_m: f64,
    pub drift_growth: DriftGrowth,
    pub grad_xw_origin_norm: f64,
    pub potential_v: Option<ScalarField>,
    pub potential_w: Option<PairScalar>,
}

#[derive(Clone)]
struct CustomFns {
    grad_v: VectorField,
    grad_xw: PairField,
    b0: RadialProfile,
    potential_v: Option<ScalarField>,
    potential_w: Option<PairScalar>,
}

/// Closed-form drift pieces for the built-in models, usable in tight loops.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Confinement {
    /// `grad V(x) = beta x`
    Quadratic { beta: f64 },
    /// `grad V(x) = beta (x^3 - x)`, one-dimensional
    Quartic { beta: f64 },
}

impl Confinement {
    #[inline(always)]
    pub(crate) fn grad(self, x: f64) -> f64 {
        match self {
            Confinement::Quadratic { beta } => beta * x,
            Confinement::Quartic { beta } => beta * (x * x * x - x),
        }
    }
}

/// `grad_x W(x, y) = a x + b y` componentwise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct LinearPair {
    pub a: f64,
    pub b: f64,
}

#[derive(Clone)]
pub struct PotentialModel {
    kind: ModelKind,
    beta: f64,
    interaction_k: f64,
    dim: usize,
    mixed_hessian_bound: f64,
    lower_curvature_m: f64,
    drift_growth: DriftGrowth,
    grad_xw_origin_norm: f64,
    growth_slack: f64,
    custom: Option<CustomFns>,
}

impl fmt::Debug for PotentialModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PotentialModel")
            .field("kind", &self.kind)
            .field("beta", &self.beta)
            .field("interaction_k", &self.interaction_k)
            .field("dim", &self.dim)
            .field("mixed_hessian_bound", &self.mixed_hessian_bound)
            .field("lower_curvature_m", &self.lower_curvature_m)
            .field("drift_growth", &self.drift_growth)
            .finish()
    }
}

/// Builds a built-in model with the default growth slack `beta / 10`.
pub fn make_builtin(kind: ModelKind, beta: f64, interaction_k: f64, dim: usize) -> Result<PotentialModel> {
    make_builtin_with_slack(kind, beta, interaction_k, dim, beta / 10.0)
}

/// Builds a built-in model; `slack` is the positive margin added to `c1`.
pub fn make_builtin_with_slack(
    kind: ModelKind,
    beta: f64,
    interaction_k: f64,
    dim: usize,
    slack: f64,
) -> Result<PotentialModel> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(invalid("model.beta", format!("must be positive and finite, got {beta}")));
    }
    if !interaction_k.is_finite() {
        return Err(invalid("model.k", "must be finite"));
    }
    if !(slack > 0.0) || !slack.is_finite() {
        return Err(invalid("model.slack", format!("must be positive, got {slack}")));
    }
    if dim == 0 {
        return Err(invalid("model.dim", "must be at least 1"));
    }
    let k_abs = interaction_k.abs();
    let (mixed, m, growth) = match kind {
        ModelKind::Gaussian => {
            (beta * k_abs, -beta, DriftGrowth { c1: beta, c2: 0.0, c3: 0.0 })
        }
        ModelKind::CurieWeiss => {
            if dim != 1 {
                return Err(Error::UnsupportedDim { kind: kind.name(), dim });
            }
            let c1 = k_abs * beta + slack;
            let c2 = beta / 4.0 * (1.0 + k_abs + slack / beta).powi(2);
            (beta * k_abs, beta, DriftGrowth { c1, c2, c3: 0.0 })
        }
        ModelKind::DoubleWell => {
            if dim != 1 {
                return Err(Error::UnsupportedDim { kind: kind.name(), dim });
            }
            let growth = if interaction_k >= 0.0 {
                DriftGrowth {
                    c1: 2.0 * k_abs * beta + slack,
                    c2: beta / 4.0 * (1.0 + 2.0 * k_abs + slack / beta).powi(2),
                    c3: 0.0,
                }
            } else {
                DriftGrowth {
                    c1: -4.0 * interaction_k * beta + slack,
                    c2: beta / 4.0 * (1.0 - 4.0 * interaction_k + slack / beta).powi(2),
                    c3: -2.0 * interaction_k * beta,
                }
            };
            (2.0 * beta * k_abs, beta * (1.0 - 2.0 * interaction_k), growth)
        }
        ModelKind::Custom => {
            return Err(invalid("model.kind", "custom models are built with PotentialModel::custom"));
        }
    };
    Ok(PotentialModel {
        kind,
        beta,
        interaction_k,
        dim,
        mixed_hessian_bound: mixed,
        lower_curvature_m: m,
        drift_growth: growth,
        grad_xw_origin_norm: 0.0,
        growth_slack: slack,
        custom: None,
    })
}

impl PotentialModel {
    pub fn custom(spec: CustomSpec) -> Result<Self> {
        if spec.dim == 0 {
            return Err(invalid("model.dim", "must be at least 1"));
        }
        if !(spec.mixed_hessian_bound >= 0.0) {
            return Err(invalid("mixed_hessian_bound", "must be nonnegative"));
        }
        if !(spec.grad_xw_origin_norm >= 0.0) {
            return Err(invalid("grad_xw_origin_norm", "must be nonnegative"));
        }
        Ok(PotentialModel {
            kind: ModelKind::Custom,
            beta: spec.beta,
            interaction_k: spec.interaction_k,
            dim: spec.dim,
            mixed_hessian_bound: spec.mixed_hessian_bound,
            lower_curvature_m: spec.lower_curvature_m,
            drift_growth: spec.drift_growth,
            grad_xw_origin_norm: spec.grad_xw_origin_norm,
            growth_slack: 0.0,
            custom: Some(CustomFns {
                grad_v: spec.grad_v,
                grad_xw: spec.grad_xw,
                b0: spec.b0,
                potential_v: spec.potential_v,
                potential_w: spec.potential_w,
            }),
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn interaction_k(&self) -> f64 {
        self.interaction_k
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    /// Sup norm of the mixed Hessian of `W`.
    pub fn mixed_hessian_bound(&self) -> f64 {
        self.mixed_hessian_bound
    }
    /// `M` with `b0(r) <= M r`.
    pub fn lower_curvature_m(&self) -> f64 {
        self.lower_curvature_m
    }
    pub fn drift_growth(&self) -> DriftGrowth {
        self.drift_growth
    }
    pub fn grad_xw_origin_norm(&self) -> f64 {
        self.grad_xw_origin_norm
    }
    /// Slack used in the `(c1, c2)` recipe; zero for custom models.
    pub fn growth_slack(&self) -> f64 {
        self.growth_slack
    }

    /// One-line parameter echo used in result files.
    pub fn summary(&self) -> String {
        format!("{}(beta={},k={},d={})", self.kind, self.beta, self.interaction_k, self.dim)
    }

    pub fn b0(&self, r: f64) -> f64 {
        let beta = self.beta;
        match self.kind {
            ModelKind::Gaussian => -beta * r,
            ModelKind::CurieWeiss => beta * r * (1.0 - r * r / 4.0),
            ModelKind::DoubleWell => beta * r * (1.0 - 2.0 * self.interaction_k - r * r / 4.0),
            ModelKind::Custom => (self.custom_fns().b0)(r),
        }
    }

    pub fn grad_v(&self, x: &[f64], out: &mut [f64]) {
        match self.kind {
            ModelKind::Gaussian => {
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = self.beta * xi;
                }
            }
            ModelKind::CurieWeiss | ModelKind::DoubleWell => {
                out[0] = self.beta * (x[0] * x[0] * x[0] - x[0]);
            }
            ModelKind::Custom => (self.custom_fns().grad_v)(x, out),
        }
    }

    pub fn grad_xw(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        match self.linear_pair() {
            Some(LinearPair { a, b }) => {
                for ((o, xi), yi) in out.iter_mut().zip(x).zip(y) {
                    *o = a * xi + b * yi;
                }
            }
            None => (self.custom_fns().grad_xw)(x, y, out),
        }
    }

    /// `V(x)` where known in closed form.
    pub fn potential_v(&self, x: &[f64]) -> Option<f64> {
        let beta = self.beta;
        match self.kind {
            ModelKind::Gaussian => Some(beta * x.iter().map(|v| v * v).sum::<f64>() / 2.0),
            ModelKind::CurieWeiss | ModelKind::DoubleWell => {
                let v = x[0];
                Some(beta * (v.powi(4) / 4.0 - v * v / 2.0))
            }
            ModelKind::Custom => self.custom_fns().potential_v.as_ref().map(|f| f(x)),
        }
    }

    /// `W(x, y)` where known in closed form.
    pub fn potential_w(&self, x: &[f64], y: &[f64]) -> Option<f64> {
        let bk = self.beta * self.interaction_k;
        match self.kind {
            ModelKind::Gaussian | ModelKind::CurieWeiss => {
                Some(-bk * x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>())
            }
            ModelKind::DoubleWell => Some(bk * (x[0] - y[0]).powi(2)),
            ModelKind::Custom => self.custom_fns().potential_w.as_ref().map(|f| f(x, y)),
        }
    }

    /// `-grad_x W(x, y)`, the pair contribution to the particle drift.
    pub fn drift_pair_term(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim || y.len() != self.dim {
            return Err(Error::ShapeMismatch(format!(
                "points must have dimension {}, got {} and {}",
                self.dim,
                x.len(),
                y.len()
            )));
        }
        if x.iter().chain(y).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("drift_pair_term"));
        }
        let mut out = vec![0.0; self.dim];
        self.grad_xw(x, y, &mut out);
        for o in &mut out {
            *o = -*o;
        }
        Ok(out)
    }

    pub(crate) fn confinement(&self) -> Option<Confinement> {
        match self.kind {
            ModelKind::Gaussian => Some(Confinement::Quadratic { beta: self.beta }),
            ModelKind::CurieWeiss | ModelKind::DoubleWell => Some(Confinement::Quartic { beta: self.beta }),
            ModelKind::Custom => None,
        }
    }

    pub(crate) fn linear_pair(&self) -> Option<LinearPair> {
        let bk = self.beta * self.interaction_k;
        match self.kind {
            ModelKind::Gaussian | ModelKind::CurieWeiss => Some(LinearPair { a: 0.0, b: -bk }),
            ModelKind::DoubleWell => Some(LinearPair { a: 2.0 * bk, b: -2.0 * bk }),
            ModelKind::Custom => None,
        }
    }

    fn custom_fns(&self) -> &CustomFns {
        self.custom.as_ref().expect("custom evaluators present for custom kind")
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConditionCheck {
    pub passed: bool,
    /// Grid point that decided the outcome.
    pub witness_r: f64,
    pub value: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DissipativityReport {
    /// `b0(r)/r < 0` at the far end of the grid.
    pub at_infinity: ConditionCheck,
    /// Positive part of `b0` vanishes as `r -> 0+`.
    pub at_origin: ConditionCheck,
    /// `b0(r) <= M r` on the whole grid; `value` is the largest `b0(r)/r - M`.
    pub below_curvature: ConditionCheck,
}

impl DissipativityReport {
    pub fn passed(&self) -> bool {
        self.at_infinity.passed && self.at_origin.passed && self.below_curvature.passed
    }

    /// Names of the failed conditions.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.at_infinity.passed {
            out.push(format!(
                "not dissipative at infinity: b0(r)/r = {} at r = {}",
                self.at_infinity.value, self.at_infinity.witness_r
            ));
        }
        if !self.at_origin.passed {
            out.push(format!(
                "positive part of b0 does not vanish at 0+: b0 = {} at r = {:e}",
                self.at_origin.value, self.at_origin.witness_r
            ));
        }
        if !self.below_curvature.passed {
            out.push(format!(
                "b0(r) exceeds M r: b0(r)/r - M = {} at r = {}",
                self.below_curvature.value, self.below_curvature.witness_r
            ));
        }
        out
    }
}

const ORIGIN_HALVINGS: i32 = 40;
const ORIGIN_TOL: f64 = 1e-6;

pub fn validate_dissipativity(model: &PotentialModel, r_grid: &[f64]) -> Result<DissipativityReport> {
    if r_grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if r_grid[0] <= 0.0 || r_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("r_grid", "must be positive and strictly increasing"));
    }
    let r_max = *r_grid.last().unwrap();
    let far_ratio = model.b0(r_max) / r_max;
    let at_infinity = ConditionCheck { passed: far_ratio < 0.0, witness_r: r_max, value: far_ratio };

    let r_tiny = r_grid[0] * 2f64.powi(-ORIGIN_HALVINGS);
    let b_tiny = model.b0(r_tiny).max(0.0);
    let at_origin = ConditionCheck { passed: b_tiny <= ORIGIN_TOL, witness_r: r_tiny, value: b_tiny };

    let m = model.lower_curvature_m();
    let slack = 1e-12 * (1.0 + m.abs());
    let (witness_r, worst) = r_grid
        .iter()
        .map(|&r| (r, model.b0(r) / r - m))
        .fold((r_grid[0], f64::NEG_INFINITY), |acc, p| if p.1 > acc.1 { p } else { acc });
    let below_curvature = ConditionCheck { passed: worst <= slack, witness_r, value: worst };

    Ok(DissipativityReport { at_infinity, at_origin, below_curvature })
}

/// Uniform grid `step, 2 step, ..., r_max`.
pub fn uniform_grid(r_max: f64, points: usize) -> Vec<f64> {
    let step = r_max / points as f64;
    (1..=points).map(|i| i as f64 * step).collect()
}

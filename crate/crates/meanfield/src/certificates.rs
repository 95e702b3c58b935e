//! Reference function and certified constants.
//!
//! The reference function solves `4h'' + b0 h' = -r`, `h(0) = 0`, through
//!
//! ```text
//! h'(r) = 1/4 ∫_r^∞ s exp((B(s) - B(r)) / 4) ds,   B(s) = ∫_0^s b0(u) du.
//! ```
//!
//! Both integrals are evaluated with 8-point Gauss–Legendre panels on the
//! tabulation cells. The outer integral is truncated at a radius where a
//! Gaussian majorant of the neglected mass falls below `tol / 100`.

use crate::error::{invalid, Error, Result};
use crate::potentials::{ModelKind, PotentialModel};

const GL_NODES: [f64; 8] = [
    -0.960_289_856_497_536_3,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL_WEIGHTS: [f64; 8] = [
    0.101_228_536_290_376_3,
    0.222_381_034_453_374_5,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362,
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

fn gauss_legendre(a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    GL_NODES
        .iter()
        .zip(GL_WEIGHTS.iter())
        .map(|(x, w)| w * f(mid + half * x))
        .sum::<f64>()
        * half
}

/// Grid and tolerance settings for [`build_reference_function_with`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadratureSettings {
    pub r_max: f64,
    pub grid_step: f64,
    /// Target accuracy for `h'`; the neglected tail is held below `tol / 100`.
    pub tol: f64,
    /// Gate on the central-difference residual of the Poisson equation,
    /// scaled by `1 + r`.
    pub residual_tol: f64,
}

impl Default for QuadratureSettings {
    fn default() -> Self {
        QuadratureSettings { r_max: 10.0, grid_step: 10.0 / 4096.0, tol: 1e-6, residual_tol: 1e-3 }
    }
}

/// Largest number of extension cells past `r_max` before giving up.
const MAX_EXTENSION_FACTOR: usize = 64;
/// Radius at which the limit of `h'` at infinity is estimated, in units of `r_max`.
const FAR_FACTOR: f64 = 1e6;

#[derive(Clone, Debug)]
pub struct ReferenceFunction {
    pub r_grid: Vec<f64>,
    pub h_values: Vec<f64>,
    pub hprime_values: Vec<f64>,
    pub hprime_at_zero: f64,
    pub hprime_sup: f64,
    pub truncation_radius: f64,
    pub tail_bound: f64,
    /// Estimate of `lim h'(r)` as `r -> ∞`, taken as `-r / b0(r)` far out.
    pub hprime_limit: f64,
    /// Largest scaled Poisson residual at interior grid points.
    pub max_residual: f64,
    hsecond_values: Vec<f64>,
    step: f64,
}

pub fn build_reference_function(
    model: &PotentialModel,
    r_max: f64,
    grid_step: f64,
    tol: f64,
) -> Result<ReferenceFunction> {
    build_reference_function_with(model, &QuadratureSettings { r_max, grid_step, tol, ..Default::default() })
}

pub fn build_reference_function_with(
    model: &PotentialModel,
    settings: &QuadratureSettings,
) -> Result<ReferenceFunction> {
    let QuadratureSettings { r_max, grid_step, tol, residual_tol } = *settings;
    for (name, v) in [("r_max", r_max), ("grid_step", grid_step), ("tol", tol), ("residual_tol", residual_tol)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(invalid(name, format!("must be positive, got {v}")));
        }
    }
    let n = (r_max / grid_step).round().max(2.0) as usize;
    let step = r_max / n as f64;
    let quarter_b0 = |u: f64| 0.25 * model.b0(u);

    let far_ratio = model.b0(r_max) / r_max;
    if !(far_ratio < 0.0) {
        return Err(Error::NotDissipative { r: r_max, ratio: far_ratio });
    }

    // Log-weights L(r_i) = B(r_i)/4 on the tabulation grid.
    let mut log_w = Vec::with_capacity(n + 1);
    log_w.push(0.0);
    for i in 0..n {
        let a = i as f64 * step;
        let next = log_w[i] + gauss_legendre(a, a + step, quarter_b0);
        log_w.push(next);
    }
    let log_w_min = log_w.iter().cloned().fold(f64::INFINITY, f64::min);
    let target = tol / 100.0;

    // Extend past r_max until the tail majorant certifies the cut.
    let max_cells = n * (1 + MAX_EXTENSION_FACTOR);
    let tail_bound;
    loop {
        let cells = log_w.len() - 1;
        let radius = cells as f64 * step;
        let alpha = tail_rate(model, radius);
        if alpha > 0.0 {
            let bound = (log_w[cells] - log_w_min).exp() / alpha;
            if bound <= target {
                tail_bound = bound;
                break;
            }
        }
        if cells >= max_cells {
            return Err(Error::NotDissipative { r: radius, ratio: model.b0(radius) / radius });
        }
        let a = cells as f64 * step;
        let next = log_w[cells] + gauss_legendre(a, a + step, quarter_b0);
        log_w.push(next);
    }
    let cells = log_w.len() - 1;
    let truncation_radius = cells as f64 * step;

    // Backward recursion J_i = ∫_{r_i}^{R} s e^{L(s) - L(r_i)} ds.
    let mut outer = vec![0.0; cells + 1];
    for i in (0..cells).rev() {
        let a = i as f64 * step;
        let cell = gauss_legendre(a, a + step, |s| s * gauss_legendre(a, s, quarter_b0).exp());
        outer[i] = cell + (log_w[i + 1] - log_w[i]).exp() * outer[i + 1];
    }

    let r_grid: Vec<f64> = (0..=n).map(|i| i as f64 * step).collect();
    let hprime_values: Vec<f64> = outer[..=n].iter().map(|j| 0.25 * j).collect();
    let hsecond_values: Vec<f64> = r_grid
        .iter()
        .zip(&hprime_values)
        .map(|(&r, &hp)| -(r + model.b0(r) * hp) / 4.0)
        .collect();
    let mut h_values = Vec::with_capacity(n + 1);
    h_values.push(0.0);
    for i in 0..n {
        let inc = 0.5 * step * (hprime_values[i] + hprime_values[i + 1])
            + step * step / 12.0 * (hsecond_values[i] - hsecond_values[i + 1]);
        h_values.push(h_values[i] + inc);
    }

    let mut max_residual: f64 = 0.0;
    for i in 1..n {
        let r = r_grid[i];
        let hpp = (hprime_values[i + 1] - hprime_values[i - 1]) / (2.0 * step);
        let res = (4.0 * hpp + model.b0(r) * hprime_values[i] + r).abs() / (1.0 + r);
        max_residual = max_residual.max(res);
    }
    if max_residual > residual_tol {
        return Err(Error::ToleranceUnreachable { achieved: max_residual, required: residual_tol });
    }

    let r_far = FAR_FACTOR * r_max.max(1.0);
    let hprime_limit = (-r_far / model.b0(r_far)).max(0.0);
    let hprime_sup = hprime_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    Ok(ReferenceFunction {
        hprime_at_zero: hprime_values[0],
        hprime_sup,
        truncation_radius,
        tail_bound,
        hprime_limit,
        max_residual,
        r_grid,
        h_values,
        hprime_values,
        hsecond_values,
        step,
    })
}

/// `alpha` with `b0(s) <= -alpha s` for `s >= radius`, probed on a doubling sequence.
fn tail_rate(model: &PotentialModel, radius: f64) -> f64 {
    (0..48)
        .map(|j| {
            let s = radius * 2f64.powi(j);
            -model.b0(s) / s
        })
        .fold(f64::INFINITY, f64::min)
}

impl ReferenceFunction {
    pub fn r_max(&self) -> f64 {
        *self.r_grid.last().unwrap()
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// `h(r)` by cubic Hermite interpolation; linear continuation past `r_max`.
    pub fn h_at(&self, r: f64) -> f64 {
        let n = self.r_grid.len() - 1;
        if r >= self.r_max() {
            return self.h_values[n] + self.hprime_values[n] * (r - self.r_max());
        }
        let r = r.max(0.0);
        let i = ((r / self.step) as usize).min(n - 1);
        hermite(
            self.step,
            r - self.r_grid[i],
            self.h_values[i],
            self.h_values[i + 1],
            self.hprime_values[i],
            self.hprime_values[i + 1],
        )
    }

    /// `h'(r)` by cubic Hermite interpolation; held constant past `r_max`.
    pub fn hprime_at(&self, r: f64) -> f64 {
        let n = self.r_grid.len() - 1;
        if r >= self.r_max() {
            return self.hprime_values[n];
        }
        let r = r.max(0.0);
        let i = ((r / self.step) as usize).min(n - 1);
        hermite(
            self.step,
            r - self.r_grid[i],
            self.hprime_values[i],
            self.hprime_values[i + 1],
            self.hsecond_values[i],
            self.hsecond_values[i + 1],
        )
    }

    /// Scaled residuals `|4h'' + b0 h' + r| / (1 + r)` at interior grid points,
    /// with `h''` from central differences of `h'`.
    pub fn poisson_residuals(&self, model: &PotentialModel) -> Vec<(f64, f64)> {
        let n = self.r_grid.len() - 1;
        (1..n)
            .map(|i| {
                let r = self.r_grid[i];
                let hpp = (self.hprime_values[i + 1] - self.hprime_values[i - 1]) / (2.0 * self.step);
                (r, (4.0 * hpp + model.b0(r) * self.hprime_values[i] + r).abs() / (1.0 + r))
            })
            .collect()
    }

    /// Ratios `h(r)/r + eps` over the grid, plus the limits at `0+` and infinity.
    fn shifted_ratios(&self, eps: f64) -> impl Iterator<Item = f64> + '_ {
        let interior = self.r_grid.iter().zip(&self.h_values).skip(1).map(move |(r, h)| h / r + eps);
        interior.chain([self.hprime_at_zero + eps, self.hprime_limit + eps])
    }

    /// `sup r/(h(r)+eps r) * sup (h(r)+eps r)/r`.
    pub fn a_eps(&self, eps: f64) -> f64 {
        let (lo, hi) = self
            .shifted_ratios(eps)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), q| (lo.min(q), hi.max(q)));
        hi / lo
    }

    /// Cruder bound `(sup h' + eps) / (inf h' + eps)`; infinite when both
    /// `eps` and the infimum vanish.
    pub fn a_eps_crude(&self, eps: f64) -> f64 {
        let inf = self.hprime_values.iter().cloned().fold(self.hprime_limit, f64::min);
        (self.hprime_sup + eps) / (inf + eps)
    }
}

fn hermite(step: f64, dx: f64, f0: f64, f1: f64, d0: f64, d1: f64) -> f64 {
    let t = dx / step;
    let t2 = t * t;
    let t3 = t2 * t;
    (2.0 * t3 - 3.0 * t2 + 1.0) * f0
        + (t3 - 2.0 * t2 + t) * step * d0
        + (-2.0 * t3 + 3.0 * t2) * f1
        + (t3 - t2) * step * d1
}

/// Initial law, described by what the bounds need from it.
#[derive(Clone, Debug, PartialEq)]
pub enum InitialLaw {
    PointMass(Vec<f64>),
    /// Centered isotropic Gaussian with per-coordinate variance.
    IsotropicGaussian { variance: f64 },
    /// Any other law with caller-supplied second moment and concentration constant.
    Declared { m2: f64, c_g: f64 },
}

impl InitialLaw {
    pub fn second_moment_sqrt(&self, dim: usize) -> f64 {
        match self {
            InitialLaw::PointMass(x) => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
            InitialLaw::IsotropicGaussian { variance } => (variance * dim as f64).sqrt(),
            InitialLaw::Declared { m2, .. } => *m2,
        }
    }

    pub fn concentration_constant(&self) -> f64 {
        match self {
            InitialLaw::PointMass(_) => 0.0,
            InitialLaw::IsotropicGaussian { variance } => *variance,
            InitialLaw::Declared { c_g, .. } => *c_g,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CertifyOptions {
    pub eps: f64,
    /// Slack in the denominator of the moment constant; `None` picks half the gap.
    pub eps_tilde: Option<f64>,
    /// Slack paired with `|grad_x W(0,0)|^2`; `None` reuses `eps_tilde`.
    pub eps_numerator: Option<f64>,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions { eps: 1.0, eps_tilde: None, eps_numerator: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConstantsReport {
    pub certified: bool,
    pub h_margin: f64,
    pub c_lip: Option<f64>,
    pub kappa: f64,
    pub k_eps: Option<f64>,
    pub a_eps: Option<f64>,
    pub eps: f64,
    pub eps_tilde: Option<f64>,
    pub eps_numerator: Option<f64>,
    pub m2_mu0: f64,
    pub c_hat: Option<f64>,
    pub c_g_mu0: f64,
    pub hprime_at_zero: f64,
    pub hprime_sup: f64,
    pub truncation_radius: f64,
    pub mixed_hessian_bound: f64,
    /// `c1 - c3 - ||d2xy W||`.
    pub growth_gap: f64,
    pub dim: usize,
}

impl ConstantsReport {
    pub fn k_eps_positive(&self) -> bool {
        self.k_eps.is_some_and(|k| k > 0.0)
    }

    /// `max(m2(mu0), c_hat)`, the scale of the moment and chaos bounds.
    pub fn moment_scale(&self) -> Option<f64> {
        self.c_hat.map(|c| c.max(self.m2_mu0))
    }

    fn require_certified(&self) -> Result<()> {
        if self.certified {
            Ok(())
        } else {
            Err(Error::Uncertified)
        }
    }

    fn require_chaos(&self) -> Result<(f64, f64, f64)> {
        self.require_certified()?;
        let scale = self.moment_scale().ok_or(Error::DriftGrowthViolated(self.growth_gap))?;
        match (self.k_eps, self.a_eps) {
            (Some(k), Some(a)) if k > 0.0 => Ok((k, a, scale)),
            _ => Err(invalid("eps", "contraction rate is not positive for this eps")),
        }
    }

    /// Uniform-in-time chaos bound for the first `k` of `n` particles.
    pub fn chaos_bound(&self, k: usize, n: usize) -> Result<f64> {
        let (k_eps, a_eps, scale) = self.require_chaos()?;
        if n < 2 {
            return Err(invalid("n", "at least two particles are needed"));
        }
        Ok(k as f64 / ((n - 1) as f64).sqrt() * (a_eps / k_eps) * self.mixed_hessian_bound * scale)
    }

    /// Path-space chaos bound per particle over `[0, horizon]`.
    pub fn path_chaos_bound(&self, n: usize, horizon: f64) -> Result<f64> {
        self.require_chaos()?;
        if n < 2 {
            return Err(invalid("n", "at least two particles are needed"));
        }
        let scale = self.moment_scale().unwrap();
        let lh = self.mixed_hessian_bound * self.hprime_sup;
        Ok(horizon / ((n - 1) as f64).sqrt() * lh / self.h_margin * scale)
    }

    /// Bound on the time integral of the coupled distance, from the initial gaps.
    pub fn integrated_bound(&self, rf: &ReferenceFunction, gaps: &[f64]) -> Result<f64> {
        self.require_certified()?;
        Ok(gaps.iter().map(|&g| rf.h_at(g)).sum::<f64>() / self.h_margin)
    }

    /// Contraction envelope `A e^{-K t} d0`.
    pub fn contraction_bound(&self, t: f64, d0: f64) -> Result<f64> {
        self.require_certified()?;
        match (self.k_eps, self.a_eps) {
            (Some(k), Some(a)) => Ok(a * (-k * t).exp() * d0),
            _ => Err(Error::Uncertified),
        }
    }
}

pub fn certify(
    model: &PotentialModel,
    rf: &ReferenceFunction,
    options: &CertifyOptions,
    mu0: &InitialLaw,
) -> Result<ConstantsReport> {
    let eps = options.eps;
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(invalid("experiment.eps", format!("must be nonnegative, got {eps}")));
    }
    let mixed = model.mixed_hessian_bound();
    let m = model.lower_curvature_m();
    let h_margin = 1.0 - mixed * rf.hprime_sup;
    let kappa = -m - mixed;
    let gap = model.drift_growth().gap(mixed);

    let eps_tilde = match options.eps_tilde {
        Some(e) if gap > 0.0 && !(e > 0.0 && e < gap) => {
            return Err(invalid("experiment.eps_tilde", format!("must lie in (0, {gap}), got {e}")));
        }
        Some(e) => Some(e),
        None if gap > 0.0 => Some(gap / 2.0),
        None => None,
    };
    let eps_numerator = options.eps_numerator.or(eps_tilde);
    if let Some(e) = eps_numerator {
        if !(e > 0.0) {
            return Err(invalid("experiment.eps_numerator", format!("must be positive, got {e}")));
        }
    }
    let m2_mu0 = mu0.second_moment_sqrt(model.dim());
    let c_g_mu0 = mu0.concentration_constant();
    let c_hat = match (gap > 0.0, eps_tilde, eps_numerator) {
        (true, Some(et), Some(en)) => {
            let g0 = model.grad_xw_origin_norm();
            let growth = model.drift_growth();
            Some(((model.dim() as f64 + growth.c2 + g0 * g0 / (4.0 * en)) / (gap - et)).sqrt())
        }
        _ => None,
    };

    let certified = h_margin > 0.0;
    let mut report = ConstantsReport {
        certified,
        h_margin,
        c_lip: None,
        kappa,
        k_eps: None,
        a_eps: None,
        eps,
        eps_tilde,
        eps_numerator,
        m2_mu0,
        c_hat: None,
        c_g_mu0,
        hprime_at_zero: rf.hprime_at_zero,
        hprime_sup: rf.hprime_sup,
        truncation_radius: rf.truncation_radius,
        mixed_hessian_bound: mixed,
        growth_gap: gap,
        dim: model.dim(),
    };
    if !certified {
        return Err(Error::InteractionTooStrong(Box::new(report)));
    }
    report.c_lip = Some(rf.hprime_at_zero / h_margin);
    report.k_eps = Some((h_margin - eps * (m + mixed)) / (rf.hprime_sup + eps));
    report.a_eps = Some(rf.a_eps(eps));
    report.c_hat = c_hat;
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SufficientCondition {
    pub lhs: f64,
    pub passed: bool,
}

/// Closed-form sufficient condition for the interaction margin on the
/// quartic models. Failing it says nothing; the quadrature is authoritative.
pub fn check_sufficient_condition(model: &PotentialModel) -> Result<SufficientCondition> {
    let beta = model.beta();
    let k = model.interaction_k();
    let root = (std::f64::consts::PI * beta).sqrt();
    let lhs = match model.kind() {
        ModelKind::CurieWeiss => k.abs() * root * (beta / 4.0).exp(),
        ModelKind::DoubleWell if k <= 0.5 => {
            2.0 * k.abs() * root * ((1.0 - 2.0 * k).powi(2) * beta / 4.0).exp()
        }
        ModelKind::DoubleWell => 2.0 * k.abs() * root,
        other => {
            return Err(invalid("model.kind", format!("no closed-form condition for {other}")));
        }
    };
    Ok(SufficientCondition { lhs, passed: lhs <= 1.0 })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConcentrationKind {
    /// Endpoint functional with per-coordinate Lipschitz constant `alpha`.
    EndpointGeneral,
    /// Endpoint empirical mean of a 1-Lipschitz observable.
    EndpointEmpiricalMean,
    /// Time-averaged U-statistic of order `m`.
    TimeAverageUstat,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConcentrationParams {
    pub n: usize,
    pub horizon: f64,
    pub delta: f64,
    pub alpha: f64,
    pub order: usize,
}

impl Default for ConcentrationParams {
    fn default() -> Self {
        ConcentrationParams { n: 1, horizon: 1.0, delta: 0.0, alpha: 1.0, order: 1 }
    }
}

/// Upper bound on `P{statistic - mean > delta}`.
///
/// `delta = 0` returns 1; negative `delta` is rejected.
pub fn concentration_bound(
    report: &ConstantsReport,
    kind: ConcentrationKind,
    params: &ConcentrationParams,
) -> Result<f64> {
    report.require_certified()?;
    let ConcentrationParams { n, horizon, delta, alpha, order } = *params;
    if !(delta >= 0.0) {
        return Err(invalid("delta", format!("must be nonnegative, got {delta}")));
    }
    if n == 0 {
        return Err(invalid("n", "must be positive"));
    }
    if !(horizon > 0.0) {
        return Err(invalid("horizon", "must be positive"));
    }
    let n = n as f64;
    let c_g = report.c_g_mu0;
    let exponent = match kind {
        ConcentrationKind::EndpointGeneral | ConcentrationKind::EndpointEmpiricalMean => {
            let (k, a) = match (report.k_eps, report.a_eps) {
                (Some(k), Some(a)) if k > 0.0 => (k, a),
                _ => return Err(invalid("eps", "contraction rate is not positive for this eps")),
            };
            let bracket = 1.0 + 2.0 * c_g * k * (-2.0 * k * horizon).exp();
            if kind == ConcentrationKind::EndpointGeneral {
                if !(alpha > 0.0) {
                    return Err(invalid("alpha", "must be positive"));
                }
                k * delta * delta / (n * alpha * alpha * a * a * bracket)
            } else {
                n * k * delta * delta / (a * a * bracket)
            }
        }
        ConcentrationKind::TimeAverageUstat => {
            if order == 0 {
                return Err(invalid("order", "must be at least 1"));
            }
            let m = order as f64;
            let h0 = report.hprime_at_zero;
            report.h_margin.powi(2) * n * horizon * delta * delta
                / (2.0 * m * m * h0 * h0 * (1.0 + c_g / horizon))
        }
    };
    Ok((-exponent).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::make_builtin;

    fn default_rf(model: &PotentialModel) -> ReferenceFunction {
        build_reference_function_with(model, &QuadratureSettings::default()).unwrap()
    }

    #[test]
    fn gauss_legendre_is_exact_on_polynomials() {
        let v = gauss_legendre(0.0, 2.0, |x| x.powi(15) + 3.0 * x * x);
        assert!((v - (2f64.powi(16) / 16.0 + 8.0)).abs() < 1e-9);
    }

    #[test]
    fn gaussian_reference_function_is_linear() {
        for beta in [1.0, 2.0] {
            let m = make_builtin(ModelKind::Gaussian, beta, 0.0, 1).unwrap();
            let rf = default_rf(&m);
            for hp in &rf.hprime_values {
                assert!((hp - 1.0 / beta).abs() < 1e-8, "{hp}");
            }
            assert!((rf.hprime_at_zero - 1.0 / beta).abs() < 1e-8);
            assert!((rf.hprime_sup - 1.0 / beta).abs() < 1e-8);
        }
        let m = make_builtin(ModelKind::Gaussian, 1.0, 0.0, 1).unwrap();
        assert!((default_rf(&m).h_at(2.0) - 2.0).abs() < 1e-8);
    }

    #[test]
    fn non_dissipative_profile_rejected() {
        let m = make_builtin(ModelKind::CurieWeiss, 1.0, 0.0, 1).unwrap();
        assert!(matches!(
            build_reference_function(&m, 1.5, 1.5 / 4096.0, 1e-6),
            Err(Error::NotDissipative { .. })
        ));
    }

    #[test]
    fn coarse_grid_reports_residual() {
        let m = make_builtin(ModelKind::CurieWeiss, 4.0, 0.0, 1).unwrap();
        let settings = QuadratureSettings { r_max: 10.0, grid_step: 0.5, tol: 1e-6, residual_tol: 1e-6 };
        match build_reference_function_with(&m, &settings) {
            Err(Error::ToleranceUnreachable { achieved, .. }) => assert!(achieved > 1e-6),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn gaussian_certificate() {
        let m = make_builtin(ModelKind::Gaussian, 2.0, 0.5, 1).unwrap();
        let rf = default_rf(&m);
        for eps in [0.0, 0.3, 5.0] {
            let opts = CertifyOptions { eps, ..Default::default() };
            let rep = certify(&m, &rf, &opts, &InitialLaw::PointMass(vec![0.0])).unwrap();
            assert!((rep.c_lip.unwrap() - 1.0).abs() < 1e-8);
            assert!((rep.h_margin - 0.5).abs() < 1e-8);
            assert!((rep.k_eps.unwrap() - 1.0).abs() < 1e-8);
            assert!((rep.a_eps.unwrap() - 1.0).abs() < 1e-8);
            assert!((rep.kappa - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn strong_interaction_is_uncertified() {
        let m = make_builtin(ModelKind::Gaussian, 2.0, 1.5, 1).unwrap();
        let rf = default_rf(&m);
        match certify(&m, &rf, &CertifyOptions::default(), &InitialLaw::PointMass(vec![0.0])) {
            Err(Error::InteractionTooStrong(rep)) => {
                assert!((rep.h_margin + 0.5).abs() < 1e-8);
                assert!(!rep.certified);
                assert!(rep.k_eps.is_none() && rep.a_eps.is_none() && rep.c_hat.is_none());
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn moment_constant_for_gaussian() {
        let m = make_builtin(ModelKind::Gaussian, 1.0, 0.25, 1).unwrap();
        let rf = default_rf(&m);
        let opts = CertifyOptions { eps: 1.0, eps_tilde: Some(0.25), eps_numerator: None };
        let rep = certify(&m, &rf, &opts, &InitialLaw::PointMass(vec![0.0])).unwrap();
        assert!((rep.c_hat.unwrap() - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(rep.m2_mu0, 0.0);
        assert_eq!(rep.c_g_mu0, 0.0);
        let bad = CertifyOptions { eps: 1.0, eps_tilde: Some(0.9), eps_numerator: None };
        assert!(certify(&m, &rf, &bad, &InitialLaw::PointMass(vec![0.0])).is_err());
    }

    #[test]
    fn chaos_bounds_for_gaussian() {
        let m = make_builtin(ModelKind::Gaussian, 1.0, 0.25, 1).unwrap();
        let rf = default_rf(&m);
        let opts = CertifyOptions { eps: 1.0, eps_tilde: Some(0.25), eps_numerator: None };
        let rep = certify(&m, &rf, &opts, &InitialLaw::PointMass(vec![0.0])).unwrap();
        let expected = 0.1 / 0.75 * 0.25 * 2f64.sqrt();
        assert!((rep.chaos_bound(1, 101).unwrap() - expected).abs() < 1e-8);
        let path = 0.2 * (0.25 / 0.75) * 2f64.sqrt();
        assert!((rep.path_chaos_bound(101, 2.0).unwrap() - path).abs() < 1e-8);
        assert_eq!(rep.path_chaos_bound(101, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn initial_law_constants() {
        let g = InitialLaw::IsotropicGaussian { variance: 0.25 };
        assert!((g.second_moment_sqrt(4) - 1.0).abs() < 1e-15);
        assert_eq!(g.concentration_constant(), 0.25);
        assert_eq!(InitialLaw::PointMass(vec![3.0, 4.0]).second_moment_sqrt(2), 5.0);
    }

    #[test]
    fn sufficient_conditions() {
        let cw = make_builtin(ModelKind::CurieWeiss, 1.0, 0.2, 1).unwrap();
        let sc = check_sufficient_condition(&cw).unwrap();
        assert!((sc.lhs - 0.455_17).abs() < 1e-5 && sc.passed);
        let cw0 = make_builtin(ModelKind::CurieWeiss, 1.0, 0.0, 1).unwrap();
        assert_eq!(check_sufficient_condition(&cw0).unwrap().lhs, 0.0);
        let dw = make_builtin(ModelKind::DoubleWell, 1.0, 0.6, 1).unwrap();
        let sc = check_sufficient_condition(&dw).unwrap();
        assert!((sc.lhs - 2.127_00).abs() < 1e-4 && !sc.passed);
        let g = make_builtin(ModelKind::Gaussian, 1.0, 0.2, 1).unwrap();
        assert!(check_sufficient_condition(&g).is_err());
    }

    fn concentration_report() -> ConstantsReport {
        let m = make_builtin(ModelKind::Gaussian, 2.0, 0.25, 1).unwrap();
        let rf = default_rf(&m);
        certify(&m, &rf, &CertifyOptions::default(), &InitialLaw::IsotropicGaussian { variance: 0.5 }).unwrap()
    }

    #[test]
    fn empirical_mean_bound_value() {
        let rep = concentration_report();
        let p = ConcentrationParams { n: 100, horizon: 1.0, delta: 0.3, ..Default::default() };
        let b = concentration_bound(&rep, ConcentrationKind::EndpointEmpiricalMean, &p).unwrap();
        let by_hand = (-13.5 / (1.0 + 1.5 * (-3.0f64).exp())).exp();
        assert!((b - by_hand).abs() < 1e-6 * by_hand);
        assert!((b - 3.5e-6).abs() < 0.05e-6);
    }

    #[test]
    fn concentration_edge_cases() {
        let rep = concentration_report();
        let zero = ConcentrationParams { n: 100, delta: 0.0, ..Default::default() };
        for kind in [
            ConcentrationKind::EndpointGeneral,
            ConcentrationKind::EndpointEmpiricalMean,
            ConcentrationKind::TimeAverageUstat,
        ] {
            assert_eq!(concentration_bound(&rep, kind, &zero).unwrap(), 1.0);
        }
        let neg = ConcentrationParams { delta: -0.1, ..zero };
        assert!(concentration_bound(&rep, ConcentrationKind::EndpointGeneral, &neg).is_err());

        let base = ConcentrationParams { n: 10, delta: 0.2, alpha: 0.1, ..Default::default() };
        let scaled = ConcentrationParams { delta: 0.6, alpha: 0.3, ..base };
        let a = concentration_bound(&rep, ConcentrationKind::EndpointGeneral, &base).unwrap();
        let b = concentration_bound(&rep, ConcentrationKind::EndpointGeneral, &scaled).unwrap();
        assert!((a - b).abs() < 1e-14);

        let one_over_n = ConcentrationParams { n: 10, delta: 0.2, alpha: 0.1, ..Default::default() };
        let general = concentration_bound(&rep, ConcentrationKind::EndpointGeneral, &one_over_n).unwrap();
        let mean = concentration_bound(&rep, ConcentrationKind::EndpointEmpiricalMean, &one_over_n).unwrap();
        assert!((general - mean).abs() < 1e-14);
    }
}

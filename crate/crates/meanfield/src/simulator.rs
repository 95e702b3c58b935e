//! Euler–Maruyama stepping of the particle system and its couplings.
//!
//! The interaction on particle `i` is always the direct sum over `j != i`
//! in ascending `j`. Noise comes from [`NoiseSource`], addressed by
//! `(seed, particle, step)`, so results are identical for any worker count.

use std::io::Write;

use crate::certificates::InitialLaw;
use crate::error::{invalid, Error, Result};
use crate::metrics::d_l1;
use crate::noise::NoiseSource;
use crate::par;
use crate::potentials::{ModelKind, PotentialModel};

/// Particles per parallel task.
const PARTICLES_PER_TASK: usize = 64;

#[derive(Clone, Debug)]
pub struct Ensemble {
    n_particles: usize,
    dim: usize,
    positions: Vec<f64>,
    time: f64,
    seed: u64,
    step_index: u64,
    noise: NoiseSource,
    next: Vec<f64>,
}

impl Ensemble {
    /// Ensemble from a flat `N x d` position array.
    pub fn new(dim: usize, positions: Vec<f64>, seed: u64) -> Result<Self> {
        if dim == 0 || positions.is_empty() || positions.len() % dim != 0 {
            return Err(Error::ShapeMismatch(format!(
                "{} coordinates do not form particles of dimension {dim}",
                positions.len()
            )));
        }
        if positions.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Ensemble::new"));
        }
        let n_particles = positions.len() / dim;
        let next = vec![0.0; positions.len()];
        Ok(Ensemble {
            n_particles,
            dim,
            positions,
            time: 0.0,
            seed,
            step_index: 0,
            noise: NoiseSource::new(seed),
            next,
        })
    }

    /// `n` particles drawn i.i.d. from `law`, using the reserved initial noise.
    pub fn sample(n: usize, dim: usize, law: &InitialLaw, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(invalid("sim.n", "must be positive"));
        }
        let noise = NoiseSource::new(seed);
        let mut positions = vec![0.0; n * dim];
        match law {
            InitialLaw::PointMass(x0) => {
                if x0.len() != dim {
                    return Err(Error::ShapeMismatch(format!(
                        "point mass has dimension {}, expected {dim}",
                        x0.len()
                    )));
                }
                for p in positions.chunks_exact_mut(dim) {
                    p.copy_from_slice(x0);
                }
            }
            InitialLaw::IsotropicGaussian { variance } => {
                let sd = variance.sqrt();
                for (i, p) in positions.chunks_exact_mut(dim).enumerate() {
                    noise.fill_initial(i, p);
                    p.iter_mut().for_each(|v| *v *= sd);
                }
            }
            InitialLaw::Declared { .. } => {
                return Err(invalid("mu0", "a declared law carries no sampler"));
            }
        }
        Ensemble::new(dim, positions, seed)
    }

    pub fn n_particles(&self) -> usize {
        self.n_particles
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn positions(&self) -> &[f64] {
        &self.positions
    }
    pub fn particle(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }
    pub fn time(&self) -> f64 {
        self.time
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn step_index(&self) -> u64 {
        self.step_index
    }
    pub fn noise(&self) -> &NoiseSource {
        &self.noise
    }

    fn commit(&mut self, dt: f64) -> Result<()> {
        if let Some(bad) = self.next.iter().position(|v| !v.is_finite()) {
            return Err(Error::Blowup { particle: bad / self.dim, step: self.step_index });
        }
        std::mem::swap(&mut self.positions, &mut self.next);
        self.step_index += 1;
        self.time = self.step_index as f64 * dt;
        Ok(())
    }
}

/// Writes the particle drift `-grad V(x_i) - 1/(N-1) sum_{j != i} grad_x W(x_i, x_j)`.
fn particle_drift(model: &PotentialModel, pos: &[f64], dim: usize, i: usize, out: &mut [f64]) {
    let n = pos.len() / dim;
    let xi = &pos[i * dim..(i + 1) * dim];
    let inv = if n > 1 { 1.0 / (n - 1) as f64 } else { 0.0 };
    match (model.confinement(), model.linear_pair()) {
        (Some(conf), Some(pair)) if dim == 1 => {
            let x = xi[0];
            let mut acc = 0.0;
            for &y in &pos[..i] {
                acc += pair.a * x + pair.b * y;
            }
            for &y in &pos[i + 1..] {
                acc += pair.a * x + pair.b * y;
            }
            out[0] = -conf.grad(x) - acc * inv;
        }
        (Some(_), Some(pair)) => {
            model.grad_v(xi, out);
            for o in out.iter_mut() {
                *o = -*o;
            }
            for c in 0..dim {
                let x = xi[c];
                let mut acc = 0.0;
                for j in (0..n).filter(|&j| j != i) {
                    acc += pair.a * x + pair.b * pos[j * dim + c];
                }
                out[c] -= acc * inv;
            }
        }
        _ => {
            model.grad_v(xi, out);
            for o in out.iter_mut() {
                *o = -*o;
            }
            let mut acc = vec![0.0; dim];
            let mut term = vec![0.0; dim];
            for j in (0..n).filter(|&j| j != i) {
                model.grad_xw(xi, &pos[j * dim..(j + 1) * dim], &mut term);
                for (a, t) in acc.iter_mut().zip(&term) {
                    *a += t;
                }
            }
            for (o, a) in out.iter_mut().zip(&acc) {
                *o -= a * inv;
            }
        }
    }
}

fn check_step(model: &PotentialModel, dim: usize, dt: f64) -> Result<()> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(invalid("sim.dt", format!("must be positive, got {dt}")));
    }
    if model.dim() != dim {
        return Err(Error::ShapeMismatch(format!(
            "model dimension {} differs from ensemble dimension {dim}",
            model.dim()
        )));
    }
    Ok(())
}

/// One Euler–Maruyama step of the particle system.
pub fn step_particles(model: &PotentialModel, ens: &mut Ensemble, dt: f64) -> Result<()> {
    step_particles_scaled(model, ens, dt, 1.0)
}

/// Drift-only step, the noise-free limit of [`step_particles`].
pub fn step_particles_deterministic(model: &PotentialModel, ens: &mut Ensemble, dt: f64) -> Result<()> {
    step_particles_scaled(model, ens, dt, 0.0)
}

fn step_particles_scaled(model: &PotentialModel, ens: &mut Ensemble, dt: f64, noise_scale: f64) -> Result<()> {
    let dim = ens.dim;
    check_step(model, dim, dt)?;
    let amp = (2.0 * dt).sqrt() * noise_scale;
    let pos = &ens.positions;
    let noise = &ens.noise;
    let step = ens.step_index;
    par::fill_chunks(&mut ens.next, dim, PARTICLES_PER_TASK, |first, chunk| {
        let mut drift = vec![0.0; dim];
        let mut xi = vec![0.0; dim];
        for (k, out) in chunk.chunks_exact_mut(dim).enumerate() {
            let i = first + k;
            particle_drift(model, pos, dim, i, &mut drift);
            if noise_scale != 0.0 {
                noise.fill(i, step, &mut xi);
            }
            for c in 0..dim {
                out[c] = pos[i * dim + c] + drift[c] * dt + amp * xi[c];
            }
        }
    });
    ens.commit(dt)
}

/// Ramp between synchronous (`r <= delta/2`) and reflected (`r >= delta`) noise.
pub fn lambda_pi(r: f64, delta: f64) -> (f64, f64) {
    let t = ((2.0 * r - delta) / delta).clamp(0.0, 1.0);
    if t >= 1.0 {
        (1.0, 0.0)
    } else if t <= 0.0 {
        (0.0, 1.0)
    } else {
        let theta = std::f64::consts::FRAC_PI_2 * t;
        (theta.sin(), theta.cos())
    }
}

/// `xi - 2 <e, xi> e`, reflection across the hyperplane orthogonal to `e`.
pub fn reflect(e: &[f64], xi: &[f64], out: &mut [f64]) {
    let dot: f64 = e.iter().zip(xi).map(|(a, b)| a * b).sum();
    for ((o, ei), x) in out.iter_mut().zip(e).zip(xi) {
        *o = x - 2.0 * dot * ei;
    }
}

/// Per-particle noise for a coupled pair: `(first side, second side)`.
fn coupled_noise(
    zx: &[f64],
    zy: &[f64],
    delta: f64,
    xi: &[f64],
    nx: &mut [f64],
    ny: &mut [f64],
    e: &mut [f64],
) {
    let dim = zx.len();
    let (xi1, xi2) = xi.split_at(dim);
    let mut r2 = 0.0;
    for c in 0..dim {
        e[c] = zx[c] - zy[c];
        r2 += e[c] * e[c];
    }
    let r = r2.sqrt();
    if r > 0.0 {
        e.iter_mut().for_each(|v| *v /= r);
    } else {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[0] = 1.0;
    }
    let (lam, pi) = lambda_pi(r, delta);
    reflect(e, xi1, ny);
    for c in 0..dim {
        nx[c] = lam * xi1[c] + pi * xi2[c];
        ny[c] = lam * ny[c] + pi * xi2[c];
    }
}

#[derive(Clone, Debug)]
pub struct CoupledEnsemble {
    pub x: Ensemble,
    pub y: Ensemble,
    delta: f64,
    pair_distances: Vec<f64>,
}

impl CoupledEnsemble {
    pub fn new(x: Ensemble, y: Ensemble, delta: f64) -> Result<Self> {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(invalid("sim.delta", format!("must be positive, got {delta}")));
        }
        if x.n_particles != y.n_particles || x.dim != y.dim {
            return Err(Error::ShapeMismatch("coupled ensembles differ in N or d".into()));
        }
        if x.seed != y.seed || x.step_index != y.step_index {
            return Err(invalid("coupling", "coupled ensembles must share seed and step index"));
        }
        let mut c = CoupledEnsemble { x, y, delta, pair_distances: Vec::new() };
        c.refresh_distances();
        Ok(c)
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
    /// `|X^i - Y^i|` for each particle.
    pub fn pair_distances(&self) -> &[f64] {
        &self.pair_distances
    }
    pub fn time(&self) -> f64 {
        self.x.time
    }
    pub fn step_index(&self) -> u64 {
        self.x.step_index
    }
    /// `d_l1` between the two configurations.
    pub fn distance(&self) -> f64 {
        self.pair_distances.iter().sum()
    }

    fn refresh_distances(&mut self) {
        let d = self.x.dim;
        self.pair_distances = self
            .x
            .positions
            .chunks_exact(d)
            .zip(self.y.positions.chunks_exact(d))
            .map(|(a, b)| a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt())
            .collect();
    }
}

/// One step of the approximate reflection coupling of two particle systems.
pub fn step_coupled(model: &PotentialModel, c: &mut CoupledEnsemble, dt: f64) -> Result<()> {
    let dim = c.x.dim;
    check_step(model, dim, dt)?;
    let amp = (2.0 * dt).sqrt();
    let delta = c.delta;
    let step = c.x.step_index;
    let (px, py) = (&c.x.positions, &c.y.positions);
    let noise = &c.x.noise;
    par::fill_chunks_pair(&mut c.x.next, &mut c.y.next, dim, PARTICLES_PER_TASK, |first, ox, oy| {
        let mut scratch = Scratch::new(dim);
        for (k, (outx, outy)) in ox.chunks_exact_mut(dim).zip(oy.chunks_exact_mut(dim)).enumerate() {
            let i = first + k;
            let (xi_x, xi_y) = (&px[i * dim..(i + 1) * dim], &py[i * dim..(i + 1) * dim]);
            particle_drift(model, px, dim, i, &mut scratch.drift_x);
            particle_drift(model, py, dim, i, &mut scratch.drift_y);
            scratch.advance(noise, i, step, xi_x, xi_y, delta, dt, amp, outx, outy);
        }
    });
    c.x.commit(dt)?;
    c.y.commit(dt)?;
    c.refresh_distances();
    Ok(())
}

struct Scratch {
    drift_x: Vec<f64>,
    drift_y: Vec<f64>,
    xi: Vec<f64>,
    nx: Vec<f64>,
    ny: Vec<f64>,
    e: Vec<f64>,
}

impl Scratch {
    fn new(dim: usize) -> Self {
        Scratch {
            drift_x: vec![0.0; dim],
            drift_y: vec![0.0; dim],
            xi: vec![0.0; 2 * dim],
            nx: vec![0.0; dim],
            ny: vec![0.0; dim],
            e: vec![0.0; dim],
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn advance(
        &mut self,
        noise: &NoiseSource,
        i: usize,
        step: u64,
        x: &[f64],
        y: &[f64],
        delta: f64,
        dt: f64,
        amp: f64,
        outx: &mut [f64],
        outy: &mut [f64],
    ) {
        noise.fill(i, step, &mut self.xi);
        coupled_noise(x, y, delta, &self.xi, &mut self.nx, &mut self.ny, &mut self.e);
        for c in 0..x.len() {
            outx[c] = x[c] + self.drift_x[c] * dt + amp * self.nx[c];
            outy[c] = y[c] + self.drift_y[c] * dt + amp * self.ny[c];
        }
    }
}

/// Closed-form law of the self-consistent gaussian process from a Gaussian
/// or point-mass start: mean `m0 e^{-beta(1-K)t}` and per-coordinate
/// variance `v0 e^{-2 beta t} + (1 - e^{-2 beta t}) / beta`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianLaw {
    pub beta: f64,
    pub interaction_k: f64,
    pub mean0: Vec<f64>,
    pub variance0: f64,
}

impl GaussianLaw {
    pub fn mean_at(&self, t: f64) -> Vec<f64> {
        let decay = (-self.beta * (1.0 - self.interaction_k) * t).exp();
        self.mean0.iter().map(|m| m * decay).collect()
    }

    pub fn variance_at(&self, t: f64) -> f64 {
        let decay = (-2.0 * self.beta * t).exp();
        self.variance0 * decay + (1.0 - decay) / self.beta
    }
}

/// Source of the nonlinear law `mu_t` seen by the independent copies.
#[derive(Clone, Debug)]
pub enum LawProvider {
    GaussianExact { law: GaussianLaw, steps: u64, time: f64 },
    /// Particle cloud evolved alongside as a proxy for `mu_t`.
    ReferenceCloud(Ensemble),
}

impl LawProvider {
    pub fn gaussian(model: &PotentialModel, mu0: &InitialLaw) -> Result<Self> {
        if model.kind() != ModelKind::Gaussian {
            return Err(Error::ProviderUnavailable(format!(
                "exact law is only known for the gaussian kind, not {}",
                model.kind()
            )));
        }
        let (mean0, variance0) = match mu0 {
            InitialLaw::PointMass(x) => (x.clone(), 0.0),
            InitialLaw::IsotropicGaussian { variance } => (vec![0.0; model.dim()], *variance),
            InitialLaw::Declared { .. } => {
                return Err(Error::ProviderUnavailable("declared initial laws have no closed form".into()));
            }
        };
        let law = GaussianLaw { beta: model.beta(), interaction_k: model.interaction_k(), mean0, variance0 };
        Ok(LawProvider::GaussianExact { law, steps: 0, time: 0.0 })
    }

    pub fn reference_cloud(model: &PotentialModel, mu0: &InitialLaw, size: usize, seed: u64) -> Result<Self> {
        if size < 2 {
            return Err(invalid("reference_cloud", "needs at least two particles"));
        }
        Ok(LawProvider::ReferenceCloud(Ensemble::sample(size, model.dim(), mu0, seed)?))
    }

    pub fn time(&self) -> f64 {
        match self {
            LawProvider::GaussianExact { time, .. } => *time,
            LawProvider::ReferenceCloud(e) => e.time,
        }
    }

    /// `∫ grad_x W(x, y) mu_t(dy)`.
    fn interaction(&self, model: &PotentialModel, mean: &[f64], x: &[f64], out: &mut [f64]) {
        match self {
            LawProvider::GaussianExact { .. } => {
                let pair = model.linear_pair().expect("gaussian kind has a linear pair term");
                for c in 0..x.len() {
                    out[c] = pair.a * x[c] + pair.b * mean[c];
                }
            }
            LawProvider::ReferenceCloud(cloud) => {
                let dim = x.len();
                let mut term = vec![0.0; dim];
                out.iter_mut().for_each(|o| *o = 0.0);
                for y in cloud.positions.chunks_exact(dim) {
                    model.grad_xw(x, y, &mut term);
                    for (o, t) in out.iter_mut().zip(&term) {
                        *o += t;
                    }
                }
                let m = cloud.n_particles as f64;
                out.iter_mut().for_each(|o| *o /= m);
            }
        }
    }

    fn current_mean(&self) -> Vec<f64> {
        match self {
            LawProvider::GaussianExact { law, time, .. } => law.mean_at(*time),
            LawProvider::ReferenceCloud(_) => Vec::new(),
        }
    }

    fn advance(&mut self, model: &PotentialModel, dt: f64) -> Result<()> {
        match self {
            LawProvider::GaussianExact { steps, time, .. } => {
                *steps += 1;
                *time = *steps as f64 * dt;
                Ok(())
            }
            LawProvider::ReferenceCloud(cloud) => step_particles(model, cloud, dt),
        }
    }
}

/// One step of the coupling between independent nonlinear copies (`c.x`)
/// and the particle system (`c.y`).
pub fn step_chaos_coupled(
    model: &PotentialModel,
    c: &mut CoupledEnsemble,
    provider: &mut LawProvider,
    dt: f64,
) -> Result<()> {
    let dim = c.x.dim;
    check_step(model, dim, dt)?;
    let t = c.time();
    if (provider.time() - t).abs() > 1e-9 * t.max(1.0) {
        return Err(Error::ProviderTime { provider: provider.time(), ensemble: t });
    }
    let amp = (2.0 * dt).sqrt();
    let delta = c.delta;
    let step = c.x.step_index;
    let mean = provider.current_mean();
    let (px, py) = (&c.x.positions, &c.y.positions);
    let noise = &c.x.noise;
    let prov = &*provider;
    par::fill_chunks_pair(&mut c.x.next, &mut c.y.next, dim, PARTICLES_PER_TASK, |first, ox, oy| {
        let mut scratch = Scratch::new(dim);
        let mut conv = vec![0.0; dim];
        for (k, (outx, outy)) in ox.chunks_exact_mut(dim).zip(oy.chunks_exact_mut(dim)).enumerate() {
            let i = first + k;
            let (xi_x, xi_y) = (&px[i * dim..(i + 1) * dim], &py[i * dim..(i + 1) * dim]);
            model.grad_v(xi_x, &mut scratch.drift_x);
            prov.interaction(model, &mean, xi_x, &mut conv);
            for (d, w) in scratch.drift_x.iter_mut().zip(&conv) {
                *d = -*d - w;
            }
            particle_drift(model, py, dim, i, &mut scratch.drift_y);
            scratch.advance(noise, i, step, xi_x, xi_y, delta, dt, amp, outx, outy);
        }
    });
    c.x.commit(dt)?;
    c.y.commit(dt)?;
    c.refresh_distances();
    provider.advance(model, dt)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub t_end: f64,
    pub n_particles: usize,
    pub dim: usize,
    pub seed: u64,
    pub workers: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { dt: 1e-3, t_end: 1.0, n_particles: 10, dim: 1, seed: 0, workers: 1 }
    }
}

impl SimConfig {
    /// Number of steps, `t_end / dt` rounded to an integer.
    pub fn steps(&self) -> Result<u64> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(invalid("sim.dt", format!("must be positive, got {}", self.dt)));
        }
        if !(self.t_end >= 0.0) || !self.t_end.is_finite() {
            return Err(invalid("sim.t_end", format!("must be nonnegative, got {}", self.t_end)));
        }
        if self.t_end > 0.0 && self.dt > self.t_end {
            return Err(invalid("sim.dt", "must not exceed sim.t_end"));
        }
        let steps = (self.t_end / self.dt).round();
        if (steps * self.dt - self.t_end).abs() > 1e-9 * self.t_end.max(1.0) {
            return Err(invalid("sim.t_end", "must be an integer multiple of sim.dt"));
        }
        Ok(steps as u64)
    }
}

/// State advanced by [`run`].
#[derive(Clone, Debug)]
pub enum SimState {
    Particles(Ensemble),
    Coupled(CoupledEnsemble),
    Chaos { coupled: CoupledEnsemble, provider: LawProvider },
}

impl SimState {
    pub fn step_index(&self) -> u64 {
        match self {
            SimState::Particles(e) => e.step_index,
            SimState::Coupled(c) | SimState::Chaos { coupled: c, .. } => c.step_index(),
        }
    }

    pub fn time(&self) -> f64 {
        match self {
            SimState::Particles(e) => e.time,
            SimState::Coupled(c) | SimState::Chaos { coupled: c, .. } => c.time(),
        }
    }

    /// The particle system being observed (the second side of a chaos coupling).
    pub fn primary(&self) -> &Ensemble {
        match self {
            SimState::Particles(e) => e,
            SimState::Coupled(c) => &c.x,
            SimState::Chaos { coupled, .. } => &coupled.y,
        }
    }

    pub fn coupled(&self) -> Option<&CoupledEnsemble> {
        match self {
            SimState::Particles(_) => None,
            SimState::Coupled(c) | SimState::Chaos { coupled: c, .. } => Some(c),
        }
    }

    fn step(&mut self, model: &PotentialModel, dt: f64) -> Result<()> {
        match self {
            SimState::Particles(e) => step_particles(model, e, dt),
            SimState::Coupled(c) => step_coupled(model, c, dt),
            SimState::Chaos { coupled, provider } => step_chaos_coupled(model, coupled, provider, dt),
        }
    }
}

pub trait Observer {
    /// Observation stride in steps.
    fn stride(&self) -> u64;
    fn observe(&mut self, state: &SimState) -> Result<()>;
}

/// Steps `state` to `config.t_end`, calling each observer at step 0, every
/// `stride` steps, and at the final step.
pub fn run(
    model: &PotentialModel,
    config: &SimConfig,
    state: &mut SimState,
    observers: &mut [&mut dyn Observer],
) -> Result<()> {
    let steps = config.steps()?;
    let workers = par::Workers::new(config.workers);
    let start = state.step_index();
    let notify = |state: &SimState, observers: &mut [&mut dyn Observer], last: bool| -> Result<()> {
        let k = state.step_index() - start;
        for obs in observers.iter_mut() {
            let stride = obs.stride().max(1);
            if k % stride == 0 || last {
                obs.observe(state)?;
            }
        }
        Ok(())
    };
    notify(state, observers, steps == 0)?;
    for s in 1..=steps {
        workers.install(|| state.step(model, config.dt))?;
        notify(state, observers, s == steps)?;
    }
    Ok(())
}

/// Formats with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Snapshot CSV: `t, particle, coord0..` and, for coupled states,
/// `ycoord0.., pair_distance`.
pub struct SnapshotWriter<W: Write> {
    stride: u64,
    out: W,
    header_done: bool,
}

impl<W: Write> SnapshotWriter<W> {
    pub fn new(out: W, stride: u64) -> Self {
        SnapshotWriter { stride, out, header_done: false }
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write> Observer for SnapshotWriter<W> {
    fn stride(&self) -> u64 {
        self.stride
    }

    fn observe(&mut self, state: &SimState) -> Result<()> {
        let (x, coupled) = match state {
            SimState::Particles(e) => (e, None),
            SimState::Coupled(c) | SimState::Chaos { coupled: c, .. } => (&c.x, Some(c)),
        };
        let dim = x.dim;
        if !self.header_done {
            let mut cols = vec!["t".to_string(), "particle".to_string()];
            cols.extend((0..dim).map(|c| format!("coord{c}")));
            if coupled.is_some() {
                cols.extend((0..dim).map(|c| format!("ycoord{c}")));
                cols.push("pair_distance".into());
            }
            writeln!(self.out, "{}", cols.join(","))?;
            self.header_done = true;
        }
        let t = fmt_f64(state.time());
        for i in 0..x.n_particles {
            let mut row = vec![t.clone(), i.to_string()];
            row.extend(x.particle(i).iter().map(|v| fmt_f64(*v)));
            if let Some(c) = coupled {
                row.extend(c.y.particle(i).iter().map(|v| fmt_f64(*v)));
                row.push(fmt_f64(c.pair_distances[i]));
            }
            writeln!(self.out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Records `(t, sqrt(mean |x|^2))` of the primary ensemble.
#[derive(Clone, Debug, Default)]
pub struct MomentTracker {
    pub stride: u64,
    pub records: Vec<(f64, f64)>,
}

impl Observer for MomentTracker {
    fn stride(&self) -> u64 {
        self.stride
    }

    fn observe(&mut self, state: &SimState) -> Result<()> {
        let e = state.primary();
        self.records.push((state.time(), crate::metrics::second_moment_sqrt(&e.positions, e.dim)));
        Ok(())
    }
}

/// Records `(t, d_l1)` between the first `k` components of a coupled state
/// (all components when `k` is `None`).
#[derive(Clone, Debug, Default)]
pub struct DistanceTracker {
    pub stride: u64,
    pub first_k: Option<usize>,
    pub records: Vec<(f64, f64)>,
}

impl Observer for DistanceTracker {
    fn stride(&self) -> u64 {
        self.stride
    }

    fn observe(&mut self, state: &SimState) -> Result<()> {
        let c = state
            .coupled()
            .ok_or_else(|| invalid("observer", "distance tracking needs a coupled state"))?;
        let k = self.first_k.unwrap_or(c.x.n_particles).min(c.x.n_particles);
        let d = c.x.dim;
        let value = d_l1(&c.x.positions[..k * d], &c.y.positions[..k * d], d)?;
        self.records.push((state.time(), value));
        Ok(())
    }
}

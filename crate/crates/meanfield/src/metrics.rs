//! Distances between configurations and measures, plus small estimators.

use crate::error::{invalid, Error, Result};

/// Sum over particles of the Euclidean distance between matching blocks.
pub fn d_l1(x: &[f64], y: &[f64], dim: usize) -> Result<f64> {
    if dim == 0 || x.len() != y.len() || x.len() % dim != 0 {
        return Err(Error::ShapeMismatch(format!(
            "configurations of length {} and {} with block size {dim}",
            x.len(),
            y.len()
        )));
    }
    Ok(x.chunks_exact(dim)
        .zip(y.chunks_exact(dim))
        .map(|(a, b)| euclidean(a, b))
        .sum())
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalMeasure {
    atoms: Vec<f64>,
    dim: usize,
    weights: Vec<f64>,
    uniform: bool,
}

impl EmpiricalMeasure {
    pub fn uniform(atoms: Vec<f64>, dim: usize) -> Result<Self> {
        let n = Self::check_atoms(&atoms, dim)?;
        Ok(EmpiricalMeasure { atoms, dim, weights: vec![1.0 / n as f64; n], uniform: true })
    }

    pub fn weighted(atoms: Vec<f64>, dim: usize, weights: Vec<f64>) -> Result<Self> {
        let n = Self::check_atoms(&atoms, dim)?;
        if weights.len() != n {
            return Err(Error::ShapeMismatch(format!("{n} atoms but {} weights", weights.len())));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(invalid("weights", "must be nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid("weights", format!("must sum to 1, got {total}")));
        }
        Ok(EmpiricalMeasure { atoms, dim, weights, uniform: false })
    }

    fn check_atoms(atoms: &[f64], dim: usize) -> Result<usize> {
        if dim == 0 || atoms.is_empty() || atoms.len() % dim != 0 {
            return Err(Error::ShapeMismatch("atoms must form a nonempty n x d array".into()));
        }
        if atoms.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("EmpiricalMeasure"));
        }
        Ok(atoms.len() / dim)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }
    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn atom(&self, i: usize) -> &[f64] {
        &self.atoms[i * self.dim..(i + 1) * self.dim]
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Marginal on coordinate `c` as a one-dimensional weighted measure.
    pub fn marginal(&self, c: usize) -> EmpiricalMeasure {
        let atoms = (0..self.len()).map(|i| self.atom(i)[c]).collect();
        EmpiricalMeasure { atoms, dim: 1, weights: self.weights.clone(), uniform: self.uniform }
    }
}

/// Exact one-dimensional W1.
///
/// Equal-size uniform inputs use the sorted matching; anything else
/// integrates `|F_a - F_b|` between pooled breakpoints.
pub fn w1_1d(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<f64> {
    if a.dim != 1 || b.dim != 1 {
        return Err(invalid("dim", "one-dimensional W1 needs d = 1"));
    }
    if a.uniform && b.uniform && a.len() == b.len() {
        return Ok(w1_sorted(a.atoms.clone(), b.atoms.clone()));
    }
    Ok(w1_cdf(&a.atoms, &a.weights, &b.atoms, &b.weights))
}

/// [`w1_1d`] on raw uniform samples.
pub fn w1_samples(a: &[f64], b: &[f64]) -> f64 {
    if a.len() == b.len() {
        w1_sorted(a.to_vec(), b.to_vec())
    } else {
        let wa = vec![1.0 / a.len() as f64; a.len()];
        let wb = vec![1.0 / b.len() as f64; b.len()];
        w1_cdf(a, &wa, b, &wb)
    }
}

fn w1_sorted(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

fn w1_cdf(a: &[f64], wa: &[f64], b: &[f64], wb: &[f64]) -> f64 {
    let mut events: Vec<(f64, f64)> = a
        .iter()
        .zip(wa)
        .map(|(&x, &w)| (x, w))
        .chain(b.iter().zip(wb).map(|(&x, &w)| (x, -w)))
        .collect();
    events.sort_by(|p, q| p.0.total_cmp(&q.0));
    let mut diff = 0.0;
    let mut total = 0.0;
    for k in 0..events.len() {
        diff += events[k].1;
        if k + 1 < events.len() {
            total += diff.abs() * (events[k + 1].0 - events[k].0);
        }
    }
    total
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GroundMetric {
    Euclidean,
    /// Sum of Euclidean distances over consecutive blocks of this size.
    BlockL1 { block_dim: usize },
}

impl GroundMetric {
    fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            GroundMetric::Euclidean => euclidean(a, b),
            GroundMetric::BlockL1 { block_dim } => {
                a.chunks(block_dim).zip(b.chunks(block_dim)).map(|(u, v)| euclidean(u, v)).sum()
            }
        }
    }
}

/// Largest measure the brute-force oracle accepts.
pub const ORACLE_MAX_ATOMS: usize = 8;

/// Exact optimal transport cost by exhaustive search.
///
/// Equal-size uniform measures are solved as an assignment over all
/// permutations; weighted ones as a min-cost flow.
pub fn w1_oracle(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, ground: GroundMetric) -> Result<f64> {
    if mu.len() > ORACLE_MAX_ATOMS || nu.len() > ORACLE_MAX_ATOMS {
        return Err(Error::SizeGuard(format!(
            "oracle accepts at most {ORACLE_MAX_ATOMS} atoms, got {} and {}",
            mu.len(),
            nu.len()
        )));
    }
    if mu.dim != nu.dim {
        return Err(Error::ShapeMismatch("measures live in different dimensions".into()));
    }
    if let GroundMetric::BlockL1 { block_dim } = ground {
        if block_dim == 0 || mu.dim % block_dim != 0 {
            return Err(invalid("block_dim", "must divide the dimension"));
        }
    }
    let cost: Vec<Vec<f64>> = (0..mu.len())
        .map(|i| (0..nu.len()).map(|j| ground.distance(mu.atom(i), nu.atom(j))).collect())
        .collect();
    if mu.uniform && nu.uniform && mu.len() == nu.len() {
        return Ok(best_assignment(&cost) / mu.len() as f64);
    }
    transport_cost(&cost, &mu.weights, &nu.weights).ok_or(Error::NonFinite("w1_oracle residual cycle"))
}

fn best_assignment(cost: &[Vec<f64>]) -> f64 {
    let n = cost.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let eval = |p: &[usize]| p.iter().enumerate().map(|(i, &j)| cost[i][j]).sum::<f64>();
    let mut best = eval(&perm);
    // Heap's algorithm
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(eval(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

const MASS_EPS: f64 = 1e-13;

struct Arc {
    to: usize,
    cap: f64,
    cost: f64,
}

/// Min-cost transport by successive shortest augmenting paths (Bellman-Ford
/// on the residual network).
fn transport_cost(cost: &[Vec<f64>], a: &[f64], b: &[f64]) -> Option<f64> {
    let (n, m) = (a.len(), b.len());
    let (source, sink) = (n + m, n + m + 1);
    let mut arcs: Vec<Arc> = Vec::new();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n + m + 2];
    let mut add = |arcs: &mut Vec<Arc>, u: usize, v: usize, cap: f64, c: f64| {
        adj[u].push(arcs.len());
        arcs.push(Arc { to: v, cap, cost: c });
        adj[v].push(arcs.len());
        arcs.push(Arc { to: u, cap: 0.0, cost: -c });
    };
    for (i, &w) in a.iter().enumerate() {
        add(&mut arcs, source, i, w, 0.0);
    }
    for (j, &w) in b.iter().enumerate() {
        add(&mut arcs, n + j, sink, w, 0.0);
    }
    for i in 0..n {
        for j in 0..m {
            add(&mut arcs, i, n + j, f64::INFINITY, cost[i][j]);
        }
    }
    let nodes = n + m + 2;
    // Relaxations must beat rounding noise, or ties create zero-cost cycles.
    let max_cost = cost.iter().flatten().fold(0.0f64, |acc, c| acc.max(c.abs()));
    let tol = 1e-12 * (1.0 + max_cost);
    let mut total = 0.0;
    loop {
        let mut dist = vec![f64::INFINITY; nodes];
        let mut via: Vec<Option<usize>> = vec![None; nodes];
        dist[source] = 0.0;
        for _ in 0..nodes {
            let mut changed = false;
            for u in 0..nodes {
                if dist[u].is_infinite() {
                    continue;
                }
                for &e in &adj[u] {
                    let arc = &arcs[e];
                    if arc.cap > MASS_EPS && dist[u] + arc.cost < dist[arc.to] - tol {
                        dist[arc.to] = dist[u] + arc.cost;
                        via[arc.to] = Some(e);
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        if dist[sink].is_infinite() {
            return Some(total);
        }
        let mut path = Vec::new();
        let mut v = sink;
        while let Some(e) = via[v] {
            if path.len() > nodes {
                return None;
            }
            path.push(e);
            v = arcs[e ^ 1].to;
        }
        let push = path.iter().fold(f64::INFINITY, |p, &e| p.min(arcs[e].cap));
        for &e in &path {
            arcs[e].cap -= push;
            arcs[e ^ 1].cap += push;
            total += push * arcs[e].cost;
        }
    }
}

/// Equally spaced snapshots of an `N x d` configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub dim: usize,
    pub stride_dt: f64,
    pub snapshots: Vec<Vec<f64>>,
}

/// Left Riemann sum of `d_l1(x_t, y_t)` over the snapshot times.
pub fn path_l1(x: &Trajectory, y: &Trajectory) -> Result<f64> {
    if x.snapshots.len() != y.snapshots.len() {
        return Err(Error::ShapeMismatch("trajectories have different snapshot counts".into()));
    }
    if (x.stride_dt - y.stride_dt).abs() > 1e-12 * x.stride_dt.abs().max(1.0) || x.dim != y.dim {
        return Err(invalid("stride", "trajectories must share stride and dimension"));
    }
    let gaps = x
        .snapshots
        .iter()
        .zip(&y.snapshots)
        .map(|(a, b)| d_l1(a, b, x.dim))
        .collect::<Result<Vec<f64>>>()?;
    Ok(riemann_left(&gaps, x.stride_dt))
}

/// `sum_{k < K} g_k dt` over samples `g_0..g_K`.
pub fn riemann_left(samples: &[f64], dt: f64) -> f64 {
    match samples.split_last() {
        Some((_, head)) => head.iter().sum::<f64>() * dt,
        None => 0.0,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecayFit {
    pub rate: f64,
    pub prefactor: f64,
    pub r_squared: f64,
}

/// Least-squares fit of `log(values)` against `times`.
pub fn fit_decay_rate(times: &[f64], values: &[f64]) -> Result<DecayFit> {
    if times.len() != values.len() {
        return Err(Error::ShapeMismatch("times and values differ in length".into()));
    }
    if times.len() < 3 {
        return Err(invalid("values", "need at least three points"));
    }
    if values.iter().any(|v| !(*v > 0.0)) {
        return Err(invalid("values", "must be positive"));
    }
    let n = times.len() as f64;
    let logs: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let tm = times.iter().sum::<f64>() / n;
    let lm = logs.iter().sum::<f64>() / n;
    let stt: f64 = times.iter().map(|t| (t - tm).powi(2)).sum();
    let stl: f64 = times.iter().zip(&logs).map(|(t, l)| (t - tm) * (l - lm)).sum();
    if stt == 0.0 {
        return Err(invalid("times", "must not all coincide"));
    }
    let slope = stl / stt;
    let intercept = lm - slope * tm;
    let ss_res: f64 = times.iter().zip(&logs).map(|(t, l)| (l - intercept - slope * t).powi(2)).sum();
    let ss_tot: f64 = logs.iter().map(|l| (l - lm).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(DecayFit { rate: -slope, prefactor: intercept.exp(), r_squared })
}

/// [`fit_decay_rate`] after dropping the first `burn_in` fraction of points.
pub fn fit_decay_rate_after(times: &[f64], values: &[f64], burn_in: f64) -> Result<DecayFit> {
    let skip = ((times.len() as f64) * burn_in.clamp(0.0, 1.0)).floor() as usize;
    fit_decay_rate(&times[skip.min(times.len())..], &values[skip.min(values.len())..])
}

/// `(mean of |x|^2)^{1/2}` over an `n x d` array.
pub fn second_moment_sqrt(samples: &[f64], dim: usize) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let n = samples.len() / dim.max(1);
    (samples.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt()
}

/// Sample mean and its standard error.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Standard normal quantile: rational approximation refined by one Halley
/// step against `erfc`, accurate to about 1e-15 relative away from the tails
/// and to 1e-9 absolute everywhere on (0, 1).
pub fn gaussian_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    let low = 0.024_25;
    let x = if p < low {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let e = 0.5 * libm::erfc(-x / std::f64::consts::SQRT_2) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (x * x / 2.0).exp();
    x - u / (1.0 + x * u / 2.0)
}

/// W1 between uniform samples and `N(mean, sd^2)` via the quantile grid
/// `F^{-1}((i - 1/2) / n)`.
pub fn w1_to_gaussian(samples: &[f64], mean: f64, sd: f64) -> f64 {
    let n = samples.len();
    let grid: Vec<f64> = (0..n).map(|i| mean + sd * gaussian_quantile((i as f64 + 0.5) / n as f64)).collect();
    w1_sorted(samples.to_vec(), grid)
}

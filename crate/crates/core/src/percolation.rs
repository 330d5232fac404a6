//! Percolation time through the crossing-component proxy, dense-cell events,
//! the critical-intensity calibration and the displacement coupling.

use std::collections::{HashMap, HashSet};
use std::sync::{Mutex, OnceLock};

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{required_buffer, unit_ball_volume, unit_sphere_area, AxisBox, SimConfig, Trajectory, MAX_DIM};
use crate::detection::{report_steps, TailCurve};
use crate::error::{invalid, Error, Result};
use crate::graph::{CellGrid, GeometricGraph, UnionFind};
use crate::points::{sample_poisson_intensity, NodeEnsemble};
use crate::rng::{tag, StreamRng, TrialKey};
use crate::stats::{chernoff_lower_exponent, median, median_bootstrap_se, quantile};

/// Relative margin above the calibrated critical intensity required by the
/// supercritical estimators.
pub const SUPERCRITICAL_MARGIN: f64 = 0.1;

/// One percolation-time trial, observed at integer times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PercTrial {
    pub trial: u64,
    pub proxy_side: f64,
    pub perc_at: Option<usize>,
    pub censored: bool,
    /// Crossing components seen at the time of percolation (or at the horizon).
    pub crossing_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PercTail {
    pub trials: Vec<PercTrial>,
    pub curve: TailCurve,
    /// Intensity is below the calibrated critical value plus margin.
    pub subcritical_warning: bool,
}

impl PercTail {
    pub fn percolated_fraction(&self) -> f64 {
        let n = self.trials.len();
        self.trials.iter().filter(|t| !t.censored).count() as f64 / n as f64
    }
}

/// One trial with key `key`, nodes thinned to `keep` of the intensity.
pub fn perc_trial(
    config: &SimConfig,
    side: f64,
    horizon: usize,
    target: &Trajectory,
    key: TrialKey,
    keep: f64,
) -> Result<PercTrial> {
    let d = config.d;
    let cube = AxisBox::centered_cube(d, side);
    let region = cube.inflated(required_buffer(config.r, horizon as f64));
    let mut ens = sample_poisson_intensity(d, config.lambda, &region, &key, None)?;
    if keep < 1.0 {
        ens = ens.thinned(keep);
    }
    let u = target.grid_path(d, 1.0, horizon, &key)?;
    let mut crossing_count = 0;
    for i in 0..=horizon {
        if i > 0 {
            ens.step_in_place(1.0)?;
        }
        let inside = ens.restricted(&cube);
        if inside.is_empty() {
            crossing_count = 0;
            continue;
        }
        let graph = GeometricGraph::build(&inside, config.r)?;
        let crossing = graph.crossing_components(side);
        crossing_count = crossing.len();
        if let Some(c) = graph.component_of_target(&u[i * d..(i + 1) * d]) {
            if crossing.contains(&c) {
                return Ok(PercTrial {
                    trial: key.trial,
                    proxy_side: side,
                    perc_at: Some(i),
                    censored: false,
                    crossing_count,
                });
            }
        }
    }
    Ok(PercTrial {
        trial: key.trial,
        proxy_side: side,
        perc_at: None,
        censored: true,
        crossing_count,
    })
}

/// Survival of the percolation time of `target` (stationary at the origin or
/// Brownian), observed at integer times `0..=horizon` through the crossing
/// component of `Q_side`.
pub fn estimate_perc_tail(
    config: &SimConfig,
    side: f64,
    trials: usize,
    horizon: usize,
    target: &Trajectory,
    lambda_c: Option<f64>,
) -> Result<PercTail> {
    config.validate()?;
    if !(side > 0.0) || trials == 0 {
        return Err(invalid("need a positive proxy side and at least one trial"));
    }
    let out: Vec<PercTrial> = (0..trials as u64)
        .into_par_iter()
        .map(|i| perc_trial(config, side, horizon, target, TrialKey::new(config.seed, i), 1.0))
        .collect::<Result<_>>()?;
    let hits: Vec<Option<usize>> = out.iter().map(|t| t.perc_at).collect();
    Ok(PercTail {
        curve: TailCurve::from_steps(&hits, 1.0, &report_steps(horizon, horizon.max(1))),
        subcritical_warning: lambda_c.is_some_and(|lc| config.lambda < lc * (1.0 + SUPERCRITICAL_MARGIN)),
        trials: out,
    })
}

/// Percolation times at several intensities on shared randomness (thinning
/// of the largest intensity by node marks).
pub fn perc_times_by_lambda(
    config: &SimConfig,
    side: f64,
    trials: usize,
    horizon: usize,
    lambdas: &[f64],
) -> Result<Vec<Vec<Option<usize>>>> {
    let top = lambdas.iter().copied().fold(0.0f64, f64::max);
    let base = config.with_lambda(top);
    base.validate()?;
    let rows: Vec<Vec<Option<usize>>> = (0..trials as u64)
        .into_par_iter()
        .map(|i| {
            lambdas
                .iter()
                .map(|&l| {
                    let keep = if top > 0.0 { l / top } else { 1.0 };
                    let key = TrialKey::new(config.seed, i);
                    Ok(perc_trial(&base, side, horizon, &Trajectory::Stationary, key, keep)?.perc_at)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok((0..lambdas.len()).map(|j| rows.iter().map(|r| r[j]).collect()).collect())
}

/// Intensity at which the static Poisson graph on `Q_side` first has a
/// crossing component, for one realisation of the marked process at
/// intensity `lambda_max` (infinite if it never crosses).
pub fn crossing_threshold(d: usize, r: f64, side: f64, lambda_max: f64, key: &TrialKey) -> Result<f64> {
    let cube = AxisBox::centered_cube(d, side);
    let ens = sample_poisson_intensity(d, lambda_max, &cube, key, None)?;
    let n = ens.len();
    if n == 0 {
        return Ok(f64::INFINITY);
    }
    let mut order: Vec<(f64, usize)> = (0..n).map(|i| (key.mark(ens.stream_ids()[i]), i)).collect();
    order.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    let half = side / 2.0;
    let full = ((1u16 << (2 * d)) - 1) as u8;
    let grid = CellGrid::build(ens.positions(), d, r, None);
    let mut uf = UnionFind::new(n);
    let mut mask = vec![0u8; n];
    let mut added = vec![false; n];
    let r2 = r * r;
    for &(mark, i) in &order {
        let p = ens.position(i);
        let mut m = 0u8;
        for a in 0..d {
            if p[a] <= -half + r {
                m |= 1 << (2 * a);
            }
            if p[a] >= half - r {
                m |= 1 << (2 * a + 1);
            }
        }
        mask[i] = m;
        added[i] = true;
        grid.for_each_near(p, |j| {
            let j = j as usize;
            if added[j] && j != i && crate::config::dist2(p, ens.position(j)) <= r2 {
                let (a, b) = (uf.find(i as u32) as usize, uf.find(j as u32) as usize);
                let merged = mask[a] | mask[b];
                if let Some(root) = uf.union(a as u32, b as u32) {
                    mask[root as usize] = merged;
                }
            }
        });
        let acc = mask[uf.find(i as u32) as usize];
        if acc == full {
            return Ok(mark * lambda_max);
        }
    }
    Ok(f64::INFINITY)
}

/// Interval estimate of the critical intensity from crossing probabilities of `Q_side`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaCEstimate {
    pub d: usize,
    pub r: f64,
    pub side: f64,
    /// Intensity at which the crossing probability equals 1/2.
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub std_error: f64,
    /// Per-trial crossing thresholds, sorted.
    pub thresholds: Vec<f64>,
}

impl LambdaCEstimate {
    /// Empirical crossing probability at `lambda` (same trials).
    pub fn crossing_probability(&self, lambda: f64) -> f64 {
        let hit = self.thresholds.partition_point(|&t| t < lambda);
        hit as f64 / self.thresholds.len() as f64
    }
}

type CacheKey = (usize, u64, u64, usize, u64);

fn lambda_c_cache() -> &'static Mutex<HashMap<CacheKey, LambdaCEstimate>> {
    static CACHE: OnceLock<Mutex<HashMap<CacheKey, LambdaCEstimate>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Largest intensity examined by the calibration: mean degree 24.
pub fn calibration_ceiling(d: usize, r: f64) -> f64 {
    24.0 / (unit_ball_volume(d) * r.powi(d as i32))
}

/// Crossing probability of `Q_side` at intensity `lambda`, bisected for the
/// level 1/2. Each trial realises the marked process once at the ceiling
/// intensity, so the crossing indicator is monotone in `lambda` and the
/// bisection reduces to the median of per-trial thresholds. Results are
/// cached per `(d, r, side, trials, seed)`.
pub fn calibrate_lambda_c(d: usize, r: f64, side: f64, trials: usize, seed: u64) -> Result<LambdaCEstimate> {
    if !(2..=3).contains(&d) {
        return Err(invalid("calibration supports d = 2 or 3"));
    }
    if !(r > 0.0 && side > 2.0 * r) || trials < 2 {
        return Err(invalid("calibration needs r > 0, side > 2r and at least two trials"));
    }
    let ck = (d, r.to_bits(), side.to_bits(), trials, seed);
    if let Some(hit) = lambda_c_cache().lock().expect("cache lock").get(&ck) {
        return Ok(hit.clone());
    }
    let top = calibration_ceiling(d, r);
    let thresholds: Vec<f64> = (0..trials as u64)
        .into_par_iter()
        .map(|i| crossing_threshold(d, r, side, top, &TrialKey::new(seed, i)))
        .collect::<Result<_>>()?;
    let out = lambda_c_from_thresholds(d, r, side, thresholds, seed);
    lambda_c_cache().lock().expect("cache lock").insert(ck, out.clone());
    Ok(out)
}

/// Median of per-trial crossing thresholds with a bootstrap standard error
/// and an order-statistic interval at about 95%.
pub fn lambda_c_from_thresholds(d: usize, r: f64, side: f64, mut thresholds: Vec<f64>, seed: u64) -> LambdaCEstimate {
    thresholds.sort_by(|a, b| a.total_cmp(b));
    let mut rng = TrialKey::new(seed, u64::MAX).stream(tag::BOOTSTRAP);
    let n = thresholds.len() as f64;
    let half = 1.96 * n.sqrt() / 2.0 / n;
    LambdaCEstimate {
        d,
        r,
        side,
        estimate: median(&thresholds),
        ci_low: quantile(&thresholds, (0.5 - half).max(0.0)),
        ci_high: quantile(&thresholds, (0.5 + half).min(1.0)),
        std_error: median_bootstrap_se(&thresholds, 200, &mut rng),
        thresholds,
    }
}

/// Partition of the centred cube `Q_K` into cells of side `ℓ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tessellation {
    pub cube_side: f64,
    pub cell_side: f64,
    pub threshold: u64,
    pub xi: f64,
}

impl Tessellation {
    /// Threshold `⌈(1 - ξ) λ ℓ^d⌉`, at least 1.
    pub fn new(d: usize, cube_side: f64, cell_side: f64, lambda: f64, xi: f64) -> Result<Self> {
        if !(xi > 0.0 && xi < 1.0) {
            return Err(invalid("xi must lie in (0, 1)"));
        }
        if !(cell_side > 0.0 && cube_side >= cell_side) {
            return Err(invalid("cells must be positive and fit in the cube"));
        }
        let per_axis = cube_side / cell_side;
        if (per_axis - per_axis.round()).abs() > 1e-9 {
            return Err(invalid("cube side must be a multiple of the cell side"));
        }
        let mean = lambda * cell_side.powi(d as i32);
        let threshold = (((1.0 - xi) * mean) - 1e-9).ceil().max(1.0) as u64;
        Ok(Self {
            cube_side,
            cell_side,
            threshold,
            xi,
        })
    }

    pub fn cells_per_axis(&self) -> usize {
        (self.cube_side / self.cell_side).round() as usize
    }

    pub fn cell_count(&self, d: usize) -> usize {
        self.cells_per_axis().pow(d as u32)
    }

    /// Cell index of `p`, if `p` lies in the cube.
    pub fn cell_of(&self, p: &[f64]) -> Option<usize> {
        let m = self.cells_per_axis();
        let half = self.cube_side / 2.0;
        let mut idx = 0usize;
        for a in (0..p.len()).rev() {
            let x = p[a] + half;
            if !(0.0..self.cube_side).contains(&x) {
                return None;
            }
            let c = ((x / self.cell_side) as usize).min(m - 1);
            idx = idx * m + c;
        }
        Some(idx)
    }

    pub fn counts(&self, d: usize, positions: &[f64]) -> Vec<u64> {
        let mut counts = vec![0u64; self.cell_count(d)];
        for p in positions.chunks_exact(d) {
            if let Some(c) = self.cell_of(p) {
                counts[c] += 1;
            }
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityReport {
    /// Dense steps over observed steps.
    pub fraction: f64,
    pub dense_steps: usize,
    pub steps: usize,
    /// Minimum cell occupancy at each observed integer time.
    pub min_occupancy: Vec<u64>,
    pub threshold: u64,
    /// Union bound `cells * steps * exp(-λℓ^d ξ^2 / 2)` on any non-dense step.
    pub chernoff_union_bound: f64,
}

/// Fraction of integer times `i = 0..t-1` at which every cell holds at least
/// the threshold. Nodes move by exact unit-time Brownian increments.
pub fn density_fraction(config: &SimConfig, tess: &Tessellation, t: usize, key: &TrialKey) -> Result<DensityReport> {
    config.validate()?;
    if t == 0 {
        return Err(invalid("density horizon must be at least one step"));
    }
    let d = config.d;
    let cube = AxisBox::centered_cube(d, tess.cube_side);
    let region = cube.inflated(required_buffer(config.r, t as f64));
    let mut ens = sample_poisson_intensity(d, config.lambda, &region, key, None)?;
    let mut min_occupancy = Vec::with_capacity(t);
    for i in 0..t {
        if i > 0 {
            ens.step_in_place(1.0)?;
        }
        let counts = tess.counts(d, ens.positions());
        min_occupancy.push(counts.iter().copied().min().unwrap_or(0));
    }
    let dense_steps = min_occupancy.iter().filter(|&&m| m >= tess.threshold).count();
    let mean = config.lambda * tess.cell_side.powi(d as i32);
    Ok(DensityReport {
        fraction: dense_steps as f64 / t as f64,
        dense_steps,
        steps: t,
        min_occupancy,
        threshold: tess.threshold,
        chernoff_union_bound: (tess.cell_count(d) * t) as f64 * (-chernoff_lower_exponent(mean, tess.xi)).exp(),
    })
}

/// Parameters of the displacement coupling on `Q_K` with cells of side `ℓ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingSpec {
    pub d: usize,
    pub k: f64,
    pub k_prime: f64,
    pub ell: f64,
    pub beta: f64,
    pub eps: f64,
    pub delta: f64,
    pub rho: f64,
}

/// Radius rule `2 sqrt(d Δ log(8d / ε))`.
pub fn psi_radius(d: usize, delta: f64, eps: f64) -> f64 {
    2.0 * (d as f64 * delta * (8.0 * d as f64 / eps).ln()).sqrt()
}

impl CouplingSpec {
    /// `Δ = 16 d^2 ℓ^2 / ε^2`, `ρ = sqrt(d) ℓ`, and `K` the smallest multiple
    /// of `ℓ` with `K >= K' + 2R`.
    pub fn standard(d: usize, beta: f64, ell: f64, eps: f64, k_prime: f64) -> Self {
        let delta = 16.0 * (d * d) as f64 * ell * ell / (eps * eps);
        let r = psi_radius(d, delta, eps);
        let k = ((k_prime + 2.0 * r) / ell).ceil() * ell;
        Self {
            d,
            k,
            k_prime,
            ell,
            beta,
            eps,
            delta,
            rho: (d as f64).sqrt() * ell,
        }
    }

    pub fn radius(&self) -> f64 {
        psi_radius(self.d, self.delta, self.eps)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.d) {
            return Err(invalid("coupling supports d in 1..=3"));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(invalid("eps must lie in (0, 1)"));
        }
        if !(self.beta >= 0.0 && self.ell > 0.0 && self.rho > 0.0) {
            return Err(invalid("beta must be non-negative; ell and rho positive"));
        }
        let c1 = 16.0 * (self.d * self.d) as f64;
        if self.delta + 1e-9 < c1 * self.ell * self.ell / (self.eps * self.eps) {
            return Err(invalid(format!("Delta must be at least {c1} ell^2 / eps^2")));
        }
        if !(self.k_prime > 0.0) {
            return Err(invalid("K' must be positive"));
        }
        if self.k_prime > self.k - 2.0 * self.radius() + 1e-9 {
            return Err(invalid(format!(
                "K' = {} exceeds K - 2R = {}",
                self.k_prime,
                self.k - 2.0 * self.radius()
            )));
        }
        let cells = self.k / self.ell;
        if (cells - cells.round()).abs() > 1e-9 {
            return Err(invalid("K must be a multiple of ell"));
        }
        Ok(())
    }

    /// `∫ g` over all of `R^d`, i.e. `1 - ψ`.
    pub fn pair_mass(&self) -> f64 {
        radial_g_integral(self.d, self.rho, self.delta, f64::INFINITY)
    }

    fn tessellation(&self) -> Tessellation {
        Tessellation {
            cube_side: self.k,
            cell_side: self.ell,
            threshold: (self.beta * self.ell.powi(self.d as i32)).ceil() as u64,
            xi: 0.0,
        }
    }
}

/// `∫_{B(0,R)} g(z) dz` for `g(z) = (2πΔ)^{-d/2} exp(-(|z| + ρ)^2 / 2Δ)`, by
/// radial Simpson quadrature refined until the relative change is below 1e-10.
pub fn radial_g_integral(d: usize, rho: f64, delta: f64, radius: f64) -> f64 {
    let sd = delta.sqrt();
    // beyond 40 sd the integrand is below 1e-300
    let upper = radius.min(40.0 * sd + 1.0);
    let norm = unit_sphere_area(d) * (2.0 * std::f64::consts::PI * delta).powf(-(d as f64) / 2.0);
    let f = |s: f64| s.powi(d as i32 - 1) * (-(s + rho) * (s + rho) / (2.0 * delta)).exp();
    let simpson = |n: usize| {
        let h = upper / n as f64;
        let mut sum = f(0.0) + f(upper);
        for i in 1..n {
            sum += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        sum * h / 3.0
    };
    let mut n = 256;
    let mut prev = simpson(n);
    loop {
        n *= 2;
        let cur = simpson(n);
        if (cur - prev).abs() <= 1e-10 * cur.abs() || n > 1 << 22 {
            return norm * cur;
        }
        prev = cur;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsiReport {
    pub integral: f64,
    pub target: f64,
    /// Hypotheses `Δ >= 16 d^2 ρ^2 / ε^2` and `R >= 2 sqrt(d Δ log(8d/ε))` hold.
    pub applicable: bool,
    /// Present only when applicable.
    pub pass: Option<bool>,
}

/// Evaluates `∫_{B(0,R)} g` and compares it with `1 - ε/2`; outside the
/// hypotheses the value is reported without a verdict.
pub fn check_psi_bound(d: usize, eps: f64, rho: f64, delta: f64, radius: f64) -> Result<PsiReport> {
    if !(1..=MAX_DIM).contains(&d) || !(rho > 0.0 && delta > 0.0 && radius > 0.0) {
        return Err(invalid("need d in range and positive rho, Delta, R"));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(invalid("eps must lie in (0, 1)"));
    }
    let integral = radial_g_integral(d, rho, delta, radius);
    let applicable = delta * (1.0 + 1e-12) >= 16.0 * (d * d) as f64 * rho * rho / (eps * eps)
        && radius * (1.0 + 1e-12) >= psi_radius(d, delta, eps);
    let target = 1.0 - eps / 2.0;
    Ok(PsiReport {
        integral,
        target,
        applicable,
        pass: applicable.then_some(integral >= target),
    })
}

/// Reference process `Φ₀` on `Q_K`: independent Poisson(`λ ℓ^d`) counts per
/// cell, each conditioned to be at least `⌈β ℓ^d⌉`, placed uniformly.
pub fn dense_reference(spec: &CouplingSpec, lambda: f64, key: &TrialKey) -> Result<NodeEnsemble> {
    let tess = spec.tessellation();
    let d = spec.d;
    let m = tess.cells_per_axis();
    let mean = lambda * spec.ell.powi(d as i32);
    if !(mean > 0.0) {
        return Err(invalid("reference intensity must be positive"));
    }
    let pois = Poisson::new(mean).map_err(|e| invalid(e.to_string()))?;
    let mut rng = key.stream(tag::POINTS);
    let half = spec.k / 2.0;
    let mut positions = Vec::new();
    let mut idx = vec![0usize; d];
    for _ in 0..tess.cell_count(d) {
        let n = loop {
            let n = pois.sample(&mut rng) as u64;
            if n >= tess.threshold {
                break n;
            }
        };
        for _ in 0..n {
            for a in 0..d {
                let lo = -half + idx[a] as f64 * spec.ell;
                positions.push(rng.random_range(lo..lo + spec.ell));
            }
        }
        for c in idx.iter_mut() {
            *c += 1;
            if *c < m {
                break;
            }
            *c = 0;
        }
    }
    Ok(NodeEnsemble::from_positions(d, positions, *key))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingDiagnostics {
    pub xi0_count: usize,
    pub phi0_count: usize,
    pub paired: usize,
    /// Pairs whose joint move was rejected (Ξ node deleted).
    pub rejected: usize,
    pub psi: f64,
    /// Survivor intensity lower bound `(1 - ε/2) β ∫_{B(0,R)} g`.
    pub mu_r: f64,
    pub stage3_ratio: f64,
    /// Cells where `Ξ₀` outnumbers `Φ₀`.
    pub overfull_cells: usize,
    /// Every Ξ node in `Q_K'` coincides bitwise with a `Φ_Δ` node.
    pub subset_exact: bool,
}

#[derive(Debug, Clone)]
pub struct CouplingOutcome {
    /// Final Ξ on `Q_K'`.
    pub xi: NodeEnsemble,
    pub phi_delta: NodeEnsemble,
    pub success: bool,
    pub diagnostics: CouplingDiagnostics,
}

/// Node indices grouped by tessellation cell (counting sort).
struct CellBuckets {
    start: Vec<usize>,
    items: Vec<u32>,
}

impl CellBuckets {
    fn new(tess: &Tessellation, ens: &NodeEnsemble, ncell: usize) -> Self {
        let mut start = vec![0usize; ncell + 1];
        for i in 0..ens.len() {
            if let Some(c) = tess.cell_of(ens.position(i)) {
                start[c + 1] += 1;
            }
        }
        for c in 0..ncell {
            start[c + 1] += start[c];
        }
        let mut fill = start.clone();
        let mut items = vec![0u32; start[ncell]];
        for i in 0..ens.len() {
            if let Some(c) = tess.cell_of(ens.position(i)) {
                items[fill[c]] = i as u32;
                fill[c] += 1;
            }
        }
        Self { start, items }
    }

    fn get(&self, c: usize) -> &[u32] {
        &self.items[self.start[c]..self.start[c + 1]]
    }
}

fn gauss(p: &mut [f64], centre: Option<&[f64]>, sd: f64, rng: &mut StreamRng) {
    for a in 0..p.len() {
        let z: f64 = StandardNormal.sample(rng);
        p[a] = centre.map_or(0.0, |c| c[a]) + sd * z;
    }
}

/// Three-stage construction of `Ξ ⊂ Φ_Δ`. `Φ₀` moves for time `Δ`; a fresh
/// `Ξ₀` of intensity `(1 - ε/2)β` is paired cell by cell with `Φ₀`, pairs
/// share the displacement drawn from `g`, rejected pairs drop their Ξ node,
/// and the survivors in `Q_K'` are thinned to intensity `(1 - ε)β`.
pub fn run_coupling(spec: &CouplingSpec, phi0: &NodeEnsemble, key: &TrialKey) -> Result<CouplingOutcome> {
    spec.validate()?;
    let d = spec.d;
    if phi0.dim() != d {
        return Err(invalid("reference process dimension does not match"));
    }
    let tess = spec.tessellation();
    let cube = AxisBox::centered_cube(d, spec.k);
    let inner = AxisBox::centered_cube(d, spec.k_prime);
    let mut rng = key.stream(tag::COUPLING);

    // stage 1
    let xi0 = sample_poisson_intensity(d, (1.0 - spec.eps / 2.0) * spec.beta, &cube, &key.child(tag::COUPLING, 1), None)?;
    let ncell = tess.cell_count(d);
    let phi_by_cell = CellBuckets::new(&tess, phi0, ncell);
    let xi_by_cell = CellBuckets::new(&tess, &xi0, ncell);
    let overfull_cells = (0..ncell).filter(|&c| xi_by_cell.get(c).len() > phi_by_cell.get(c).len()).count();
    let success = overfull_cells == 0;

    // stage 2
    let sd = spec.delta.sqrt();
    let rho = spec.rho;
    let accept = |z: &[f64]| {
        let n = z.iter().map(|x| x * x).sum::<f64>().sqrt();
        (-(2.0 * n * rho + rho * rho) / (2.0 * spec.delta)).exp()
    };
    let mut phi_new: Vec<f64> = phi0.positions().to_vec();
    let mut moved = vec![false; phi0.len()];
    let mut survivors: Vec<f64> = Vec::new();
    let (mut paired, mut rejected) = (0usize, 0usize);
    let mut z = vec![0.0; d];
    let mut w = vec![0.0; d];
    let mut target = vec![0.0; d];
    for c in 0..ncell {
        for (slot, &xi_i) in xi_by_cell.get(c).iter().enumerate() {
            let xi_i = xi_i as usize;
            let y_xi = xi0.position(xi_i);
            gauss(&mut z, None, sd, &mut rng);
            let take = rng.random::<f64>() < accept(&z);
            let partner = phi_by_cell.get(c).get(slot).map(|&j| j as usize);
            if take {
                for a in 0..d {
                    target[a] = y_xi[a] + z[a];
                }
                if let Some(j) = partner {
                    phi_new[j * d..(j + 1) * d].copy_from_slice(&target);
                    moved[j] = true;
                }
                survivors.extend_from_slice(&target);
            } else if let Some(j) = partner {
                // residual law (φ(w - y) - g(w - y')) / ψ, by rejection
                let y = phi0.position(j);
                loop {
                    gauss(&mut w, Some(y), sd, &mut rng);
                    let nz = crate::config::dist(&w, y_xi);
                    let g = (-(nz + rho).powi(2) / (2.0 * spec.delta)).exp();
                    let phi = (-crate::config::dist2(&w, y) / (2.0 * spec.delta)).exp();
                    if rng.random::<f64>() * phi >= g {
                        break;
                    }
                }
                phi_new[j * d..(j + 1) * d].copy_from_slice(&w);
                moved[j] = true;
            }
            if partner.is_some() {
                paired += 1;
                if !take {
                    rejected += 1;
                }
            }
        }
    }
    for j in 0..phi0.len() {
        if !moved[j] {
            gauss(&mut phi_new[j * d..(j + 1) * d], Some(phi0.position(j)), sd, &mut rng);
        }
    }

    // stage 3
    let mass_r = radial_g_integral(d, rho, spec.delta, spec.radius());
    let mu_r = (1.0 - spec.eps / 2.0) * spec.beta * mass_r;
    let ratio = if mu_r > 0.0 { ((1.0 - spec.eps) * spec.beta / mu_r).min(1.0) } else { 0.0 };
    let mut xi_pos = Vec::new();
    for p in survivors.chunks_exact(d) {
        if inner.contains(p) && rng.random::<f64>() < ratio {
            xi_pos.extend_from_slice(p);
        }
    }
    let phi_delta = NodeEnsemble::from_positions(d, phi_new, phi0.key());
    let xi = NodeEnsemble::from_positions(d, xi_pos, *key);
    let subset_exact = is_bitwise_subset(&xi, &phi_delta);
    Ok(CouplingOutcome {
        diagnostics: CouplingDiagnostics {
            xi0_count: xi0.len(),
            phi0_count: phi0.len(),
            paired,
            rejected,
            psi: 1.0 - spec.pair_mass(),
            mu_r,
            stage3_ratio: ratio,
            overfull_cells,
            subset_exact,
        },
        xi,
        phi_delta,
        success,
    })
}

/// Every position of `a` equals some position of `b` bit for bit.
pub fn is_bitwise_subset(a: &NodeEnsemble, b: &NodeEnsemble) -> bool {
    if a.is_empty() {
        return true;
    }
    if a.dim() != b.dim() {
        return false;
    }
    let key = |p: &[f64]| {
        let mut k = [0u64; MAX_DIM];
        for (slot, x) in k.iter_mut().zip(p) {
            *slot = x.to_bits();
        }
        k
    };
    let bbox = AxisBox::bounding(a.positions(), a.dim()).expect("non-empty");
    let set: HashSet<[u64; MAX_DIM]> = (0..b.len())
        .map(|i| b.position(i))
        .filter(|p| bbox.contains(p))
        .map(key)
        .collect();
    (0..a.len()).all(|i| set.contains(&key(a.position(i))))
}

/// Required-margin check used by the supercritical estimators.
pub fn require_supercritical(lambda: f64, lambda_c: f64) -> Result<()> {
    let required = lambda_c * (1.0 + SUPERCRITICAL_MARGIN);
    if lambda < required {
        return Err(Error::Subcritical { lambda, required });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psi_example_values() {
        let r = psi_radius(2, 256.0, 0.5);
        assert!((r - 84.25).abs() < 0.01);
        let rep = check_psi_bound(2, 0.5, 1.0, 256.0, r).unwrap();
        assert!(rep.applicable && rep.pass == Some(true));
        assert!(rep.integral >= 0.75);
        // ρ → 0 limit is the Gaussian mass of the ball
        let near = radial_g_integral(2, 1e-9, 1.0, 3.0);
        assert!((near - (1.0 - (-4.5f64).exp())).abs() < 1e-8);
    }

    #[test]
    fn psi_not_applicable_without_hypotheses() {
        let rep = check_psi_bound(2, 0.5, 1.0, 10.0, 5.0).unwrap();
        assert!(!rep.applicable);
        assert_eq!(rep.pass, None);
    }

    #[test]
    fn tessellation_threshold() {
        let t = Tessellation::new(2, 10.0, 5.0, 2.0, 0.99).unwrap();
        assert_eq!(t.threshold, 1);
        assert!(Tessellation::new(2, 10.0, 3.0, 2.0, 0.5).is_err());
        assert_eq!(t.cell_of(&[-4.9, 4.9]), Some(2));
        assert_eq!(t.cell_of(&[5.1, 0.0]), None);
    }

    #[test]
    fn zero_intensity_density_is_zero() {
        let c = SimConfig::boxed(2, 0.0, 1.0, 1.0, 5.0, 10.0, 1);
        let t = Tessellation::new(2, 10.0, 5.0, 0.0, 0.5).unwrap();
        let rep = density_fraction(&c, &t, 5, &TrialKey::new(1, 0)).unwrap();
        assert_eq!(rep.fraction, 0.0);
    }

    #[test]
    fn zero_intensity_never_percolates() {
        let c = SimConfig::boxed(2, 0.0, 1.0, 1.0, 3.0, 10.0, 1);
        let tail = estimate_perc_tail(&c, 10.0, 5, 3, &Trajectory::Stationary, None).unwrap();
        assert!(tail.trials.iter().all(|t| t.censored));
    }

    #[test]
    fn threshold_matches_static_graph() {
        let (d, r, side) = (2, 1.0, 8.0);
        let top = calibration_ceiling(d, r);
        for i in 0..10 {
            let key = TrialKey::new(5, i);
            let th = crossing_threshold(d, r, side, top, &key).unwrap();
            let ens = sample_poisson_intensity(d, top, &AxisBox::centered_cube(d, side), &key, None).unwrap();
            for l in [0.5 * th, 0.999 * th, th, 1.001 * th] {
                if !l.is_finite() {
                    continue;
                }
                let sub = ens.thinned(l / top);
                let crosses = !sub.is_empty()
                    && GeometricGraph::build(&sub, r).unwrap().crossing_component(side).exists;
                assert_eq!(crosses, l > th, "trial {i} lambda {l} threshold {th}");
            }
        }
    }

    #[test]
    fn calibration_is_cached_and_monotone() {
        let a = calibrate_lambda_c(2, 1.0, 10.0, 40, 3).unwrap();
        let b = calibrate_lambda_c(2, 1.0, 10.0, 40, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.crossing_probability(0.0), 0.0);
        let ps: Vec<f64> = [0.5, 1.0, 1.5, 2.0, 3.0].iter().map(|&l| a.crossing_probability(l)).collect();
        assert!(ps.windows(2).all(|w| w[0] <= w[1]));
        assert!(a.ci_low <= a.estimate && a.estimate <= a.ci_high);
    }

    #[test]
    fn zero_beta_coupling_is_empty() {
        let spec = CouplingSpec::standard(1, 0.0, 1.0, 0.5, 4.0);
        let phi = dense_reference(&spec, 1.0, &TrialKey::new(1, 0)).unwrap();
        let out = run_coupling(&spec, &phi, &TrialKey::new(1, 0)).unwrap();
        assert!(out.success && out.xi.is_empty() && out.diagnostics.subset_exact);
    }

    #[test]
    fn small_coupling_is_exact_subset() {
        let spec = CouplingSpec::standard(1, 2.0, 4.0, 0.5, 20.0);
        for i in 0..5 {
            let key = TrialKey::new(9, i);
            let phi = dense_reference(&spec, 10.0, &key.child(tag::POINTS, 0)).unwrap();
            let out = run_coupling(&spec, &phi, &key).unwrap();
            assert!(out.success);
            assert!(out.diagnostics.subset_exact);
            assert!(!out.xi.is_empty());
        }
        let mut bad = spec;
        bad.k_prime = bad.k;
        assert!(bad.validate().is_err());
    }
}

//! Detection time `T_det` of a target by the mobile nodes.
//!
//! Each trial samples the nodes once on the window ⊕ buffer and evaluates
//! every node's grid walk lazily, nearest node first. A node only needs to be
//! followed up to the earliest detection found so far, which keeps the cost
//! proportional to the detection time rather than to the horizon.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{dist2, SimConfig, Trajectory};
use crate::coverage::TargetSet;
use crate::error::{invalid, Result};
use crate::points::{sample_poisson_points, NodeEnsemble, NodeWalk};
use crate::rng::TrialKey;
use crate::sausage::{per_path_volumes, relative_path, path_volume, SausageOptions, SausageSpec};
use crate::stats::{binomial_se, MeanVar};

/// Outcome of one detection trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionTrial {
    pub trial: u64,
    /// Grid step of the first detection.
    pub step: Option<usize>,
    pub detected_at: Option<f64>,
    pub censored: bool,
    /// The target path left the observation window before the horizon.
    pub left_window: bool,
    pub nodes: usize,
}

/// Empirical survival function `Pr[T > t]` on a set of grid times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailCurve {
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
    pub std_error: Vec<f64>,
    pub trials: usize,
}

impl TailCurve {
    /// Builds the curve at grid steps `report` from first-hit steps (None = censored).
    pub fn from_steps(hits: &[Option<usize>], dt: f64, report: &[usize]) -> Self {
        let n = hits.len();
        let mut sorted: Vec<usize> = hits.iter().flatten().copied().collect();
        sorted.sort_unstable();
        let survival: Vec<f64> = report
            .iter()
            .map(|&k| {
                if n == 0 {
                    return 1.0;
                }
                let hit_by = sorted.partition_point(|&s| s <= k);
                (n - hit_by) as f64 / n as f64
            })
            .collect();
        Self {
            times: report.iter().map(|&k| k as f64 * dt).collect(),
            std_error: survival.iter().map(|&p| binomial_se(p, n)).collect(),
            survival,
            trials: n,
        }
    }

    /// Survival and standard error at the reported time nearest to `t`.
    pub fn at(&self, t: f64) -> Option<(f64, f64)> {
        let i = self
            .times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))?
            .0;
        Some((self.survival[i], self.std_error[i]))
    }

    pub fn is_monotone(&self) -> bool {
        self.survival.windows(2).all(|w| w[1] <= w[0])
    }
}

/// Default report grid: at most `points + 1` evenly spaced steps, always
/// including 0 and `steps`.
pub fn report_steps(steps: usize, points: usize) -> Vec<usize> {
    let points = points.max(1);
    if steps <= points {
        return (0..=steps).collect();
    }
    let mut out: Vec<usize> = (0..=points).map(|j| j * steps / points).collect();
    out.dedup();
    out
}

/// Earliest step `k <= steps` at which some node is within `r` of `target[k]`.
pub(crate) fn first_detection(ens: &NodeEnsemble, target: &[f64], r: f64, dt: f64, steps: usize) -> Option<usize> {
    let d = ens.dim();
    let r2 = r * r;
    let origin = &target[..d];
    let mut order: Vec<(f64, usize)> = (0..ens.len()).map(|i| (dist2(ens.position(i), origin), i)).collect();
    order.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    let key = ens.key();
    // best = first step not yet known to be a detection
    let mut best = steps + 1;
    for &(d0, i) in &order {
        if d0 <= r2 {
            return Some(0);
        }
        let mut walk = NodeWalk::new(&key, ens.stream_ids()[i], ens.position(i), dt);
        for k in 1..best {
            let p = walk.advance();
            if dist2(p, &target[k * d..(k + 1) * d]) <= r2 {
                best = k;
                break;
            }
        }
    }
    (best <= steps).then_some(best)
}

/// Validates a detection configuration for `trials` trials.
pub fn check_detection_inputs(config: &SimConfig, trials: usize) -> Result<()> {
    config.validate()?;
    if config.domain.is_torus() {
        return Err(invalid("detection runs on the boxed plane"));
    }
    if trials == 0 {
        return Err(invalid("need at least one trial"));
    }
    config.check_buffer(config.horizon)
}

fn run_trial(config: &SimConfig, target: &Trajectory, ens: &NodeEnsemble, trial: u64) -> Result<DetectionTrial> {
    let steps = config.steps();
    let path = target.grid_path(config.d, config.dt, steps, &ens.key())?;
    let window = config.domain.window(config.d);
    let left_window = path.chunks_exact(config.d).any(|p| !window.contains(p));
    let step = first_detection(ens, &path, config.r, config.dt, steps);
    Ok(DetectionTrial {
        trial,
        step,
        detected_at: step.map(|k| k as f64 * config.dt),
        censored: step.is_none(),
        left_window,
        nodes: ens.len(),
    })
}

fn trial_ensemble(config: &SimConfig, trial: u64) -> Result<NodeEnsemble> {
    let region = config.domain.sampling_region(config.d);
    sample_poisson_points(config, &region, &TrialKey::new(config.seed, trial))
}

/// Trial `i` of a configuration already checked by [`check_detection_inputs`].
pub fn detection_trial(config: &SimConfig, target: &Trajectory, i: u64) -> Result<DetectionTrial> {
    run_trial(config, target, &trial_ensemble(config, i)?, i)
}

/// Per-trial detection outcomes; trial `i` uses key `(config.seed, i)`.
pub fn detection_trials(config: &SimConfig, target: &Trajectory, trials: usize) -> Result<Vec<DetectionTrial>> {
    check_detection_inputs(config, trials)?;
    (0..trials as u64)
        .into_par_iter()
        .map(|i| detection_trial(config, target, i))
        .collect()
}

/// Survival curve of `T_det` on the default report grid.
pub fn simulate_detection(config: &SimConfig, target: &Trajectory, trials: usize) -> Result<TailCurve> {
    let out = detection_trials(config, target, trials)?;
    Ok(tail_of(&out, config))
}

pub fn tail_of(out: &[DetectionTrial], config: &SimConfig) -> TailCurve {
    let hits: Vec<Option<usize>> = out.iter().map(|t| t.step).collect();
    TailCurve::from_steps(&hits, config.dt, &report_steps(config.steps(), 200))
}

/// Detection outcomes for several intensities on shared randomness: the
/// process at the largest intensity is thinned by node marks, so each lower
/// intensity sees a subset of the same moving nodes.
pub fn detection_trials_by_lambda(
    config: &SimConfig,
    target: &Trajectory,
    lambdas: &[f64],
    trials: usize,
) -> Result<Vec<Vec<DetectionTrial>>> {
    let top = lambdas.iter().copied().fold(0.0f64, f64::max);
    if lambdas.iter().any(|&l| !(l >= 0.0)) {
        return Err(invalid("intensities must be non-negative"));
    }
    let base = config.with_lambda(top);
    check_detection_inputs(&base, trials)?;
    let per_trial: Vec<Vec<DetectionTrial>> = (0..trials as u64)
        .into_par_iter()
        .map(|i| {
            let full = trial_ensemble(&base, i)?;
            lambdas
                .iter()
                .map(|&l| {
                    let ens = if top > 0.0 { full.thinned(l / top) } else { full.clone() };
                    run_trial(&config.with_lambda(l), target, &ens, i)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok((0..lambdas.len())
        .map(|j| per_trial.iter().map(|row| row[j]).collect())
        .collect())
}

/// Direct survival estimate next to the sausage-based prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrosscheckReport {
    pub t: f64,
    pub direct: f64,
    pub direct_se: f64,
    pub predicted: f64,
    pub predicted_se: f64,
    pub z: f64,
    pub pass: bool,
}

fn crosscheck_report(t: f64, direct: (f64, f64), predicted: (f64, f64)) -> CrosscheckReport {
    let se = (direct.1.powi(2) + predicted.1.powi(2)).sqrt();
    let diff = (direct.0 - predicted.0).abs();
    let z = if se > 0.0 { diff / se } else if diff == 0.0 { 0.0 } else { f64::INFINITY };
    CrosscheckReport {
        t,
        direct: direct.0,
        direct_se: direct.1,
        predicted: predicted.0,
        predicted_se: predicted.1,
        z,
        pass: z <= 3.0,
    }
}

/// Compares the simulated `Pr[T_det > t]` with `exp(-λ E vol)`, the volume
/// estimated by `paths` independent sausage paths on the same grid. For a
/// Brownian target the prediction is `E[exp(-λ E[vol | g])]`, with the
/// conditional volume estimated from `inner` relative paths per outer path.
pub fn detection_formula_crosscheck(
    config: &SimConfig,
    target: &Trajectory,
    t: f64,
    trials: usize,
    paths: usize,
) -> Result<CrosscheckReport> {
    let cfg = SimConfig {
        horizon: t,
        ..config.clone()
    };
    let runs = detection_trials(&cfg, target, trials)?;
    let steps = cfg.steps();
    let survived = runs.iter().filter(|r| r.step.is_none_or(|k| k > steps)).count();
    let p = survived as f64 / trials as f64;
    let direct = (p, binomial_se(p, trials));
    if config.lambda == 0.0 {
        return Ok(crosscheck_report(t, direct, (1.0, 0.0)));
    }
    // independent randomness for the oracle
    let seed = config.seed ^ 0x5a05_a6e5_0000_0001;
    let predicted = match target {
        Trajectory::Brownian => conditional_survival(config.d, config.r, t, config.lambda, paths, 16, config.dt, seed)?,
        g => {
            let spec = SausageSpec::new(config.d, config.r, t, seed).with_drift(g.clone());
            let vols = per_path_volumes(&spec, paths, config.dt, &SausageOptions::default())?;
            let mv: MeanVar = vols.into_iter().collect();
            let s = (-config.lambda * mv.mean).exp();
            // delta method
            (s, config.lambda * s * mv.std_error())
        }
    };
    Ok(crosscheck_report(t, direct, predicted))
}

/// Outer-expectation estimator `E_g[exp(-λ E[vol(W_g(t)) | g])]` for a
/// Brownian target.
#[allow(clippy::too_many_arguments)]
pub fn conditional_survival(
    d: usize,
    r: f64,
    t: f64,
    lambda: f64,
    outer: usize,
    inner: usize,
    dt: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    if outer == 0 || inner == 0 {
        return Err(invalid("need at least one outer and one inner path"));
    }
    let steps = crate::config::grid_steps(t, dt);
    let opts = SausageOptions::default();
    let vals: Vec<f64> = (0..outer as u64)
        .into_par_iter()
        .map(|j| {
            let okey = TrialKey::new(seed, j);
            let g = Trajectory::Brownian.grid_path(d, dt, steps, &okey)?;
            let spec = SausageSpec::new(d, r, t, seed);
            let method = spec.default_method();
            let mut sum = 0.0;
            for m in 0..inner as u64 {
                let ikey = okey.child(crate::rng::tag::PATH, m);
                let h = relative_path(&g, d, dt, &mut ikey.stream(crate::rng::tag::PATH));
                sum += path_volume(&h, d, r, None, method, &opts, &mut ikey.stream(crate::rng::tag::SAMPLE))?;
            }
            Ok((-lambda * sum / inner as f64).exp())
        })
        .collect::<Result<_>>()?;
    let mv: MeanVar = vals.into_iter().collect();
    Ok((mv.mean, mv.std_error()))
}

/// Survival of `T_det(K)`: first grid time some node is within `r` of a
/// point of the net of `K`. `K` is held fixed in space.
pub fn compact_detection_tail(set: &TargetSet, config: &SimConfig, trials: usize) -> Result<TailCurve> {
    let hits = compact_detection_steps(set, config, trials)?;
    Ok(TailCurve::from_steps(&hits, config.dt, &report_steps(config.steps(), 200)))
}

pub fn compact_detection_steps(set: &TargetSet, config: &SimConfig, trials: usize) -> Result<Vec<Option<usize>>> {
    if set.is_empty() || set.d != config.d {
        return Err(invalid("target set must be non-empty and match the dimension"));
    }
    config.validate()?;
    if trials == 0 {
        return Err(invalid("need at least one trial"));
    }
    let buffer = crate::config::required_buffer(config.r, config.horizon);
    let region = set.bounding_box().expect("non-empty").inflated(buffer);
    let r = config.r;
    let steps = config.steps();
    let grid = set.index(r);
    (0..trials as u64)
        .into_par_iter()
        .map(|i| {
            let key = TrialKey::new(config.seed, i);
            let ens = crate::points::sample_poisson_intensity(config.d, config.lambda, &region, &key, None)?;
            let mut best = steps + 1;
            for j in 0..ens.len() {
                let mut walk = NodeWalk::new(&key, ens.stream_ids()[j], ens.position(j), config.dt);
                if set.within(&grid, walk.position(), r) {
                    return Ok(Some(0));
                }
                for k in 1..best {
                    if set.within(&grid, walk.advance(), r) {
                        best = k;
                        break;
                    }
                }
            }
            Ok((best <= steps).then_some(best))
        })
        .collect()
}

/// Survival curves of several target motions on shared node randomness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StayPutReport {
    pub targets: Vec<String>,
    pub curves: Vec<TailCurve>,
    /// `Some(pass)` when the dominance of the stationary target is asserted (d = 1).
    pub dominance: Option<bool>,
}

/// Stationary target first; other targets are compared to it.
pub fn stay_put_comparison(config: &SimConfig, targets: &[Trajectory], trials: usize) -> Result<StayPutReport> {
    let mut curves = Vec::with_capacity(targets.len() + 1);
    let mut names = vec!["stationary".to_string()];
    curves.push(simulate_detection(config, &Trajectory::Stationary, trials)?);
    for g in targets {
        names.push(g.name().to_string());
        curves.push(simulate_detection(config, g, trials)?);
    }
    let dominance = (config.d == 1).then(|| {
        let base = &curves[0];
        curves[1..].iter().all(|c| {
            c.survival
                .iter()
                .zip(&c.std_error)
                .zip(base.survival.iter().zip(&base.std_error))
                .all(|((s, se), (b, bse))| *b >= s - 3.0 * (se * se + bse * bse).sqrt())
        })
    });
    Ok(StayPutReport {
        targets: names,
        curves,
        dominance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::DeterministicPath;

    fn cfg(d: usize, lambda: f64, r: f64, horizon: f64, dt: f64, seed: u64) -> SimConfig {
        SimConfig::boxed(d, lambda, r, dt, horizon, 1.0, seed)
    }

    #[test]
    fn zero_intensity_never_detects() {
        let c = cfg(2, 0.0, 1.0, 1.0, 0.1, 1);
        let tail = simulate_detection(&c, &Trajectory::Stationary, 20).unwrap();
        assert!(tail.survival.iter().all(|&s| s == 1.0));
        let x = detection_formula_crosscheck(&c, &Trajectory::Stationary, 1.0, 10, 10).unwrap();
        assert_eq!((x.direct, x.predicted), (1.0, 1.0));
    }

    #[test]
    fn small_buffer_is_refused() {
        let mut c = cfg(1, 1.0, 0.5, 1.0, 0.01, 1);
        c.domain = crate::config::DomainSpec::boxed(1.0, 1.0);
        assert!(simulate_detection(&c, &Trajectory::Stationary, 5).is_err());
    }

    #[test]
    fn survival_at_zero_is_one_ball() {
        let c = cfg(2, 1.0, 1.0, 0.0, 0.1, 3);
        let tail = simulate_detection(&c, &Trajectory::Stationary, 4000).unwrap();
        let (s, se) = tail.at(0.0).unwrap();
        assert!((s - (-std::f64::consts::PI).exp()).abs() < 3.0 * se.max(1e-3));
    }

    #[test]
    fn lazy_walks_match_coevolved_ensemble() {
        let c = cfg(2, 1.0, 0.5, 0.5, 0.05, 9);
        for trial in 0..20 {
            let ens = trial_ensemble(&c, trial).unwrap();
            let lazy = first_detection(&ens, &vec![0.0; 2 * (c.steps() + 1)], c.r, c.dt, c.steps());
            let mut e = ens.clone();
            let mut brute = None;
            for k in 0..=c.steps() {
                if k > 0 {
                    e.step_in_place(c.dt).unwrap();
                }
                if (0..e.len()).any(|i| dist2(e.position(i), &[0.0, 0.0]) <= c.r * c.r) {
                    brute = Some(k);
                    break;
                }
            }
            assert_eq!(lazy, brute);
        }
    }

    #[test]
    fn identical_targets_identical_curves() {
        let c = cfg(1, 1.0, 0.5, 0.5, 0.01, 4);
        let rep = stay_put_comparison(&c, &[Trajectory::Stationary], 200).unwrap();
        assert_eq!(rep.curves[0], rep.curves[1]);
        assert_eq!(rep.dominance, Some(true));
    }

    #[test]
    fn monotone_in_lambda_pathwise() {
        let c = cfg(2, 1.0, 0.5, 1.0, 0.05, 8);
        let runs = detection_trials_by_lambda(&c, &Trajectory::Stationary, &[0.5, 1.0, 2.0], 100).unwrap();
        for i in 0..100 {
            let k = |j: usize| runs[j][i].step.unwrap_or(usize::MAX);
            assert!(k(0) >= k(1) && k(1) >= k(2));
        }
    }

    #[test]
    fn linear_target_path_is_validated() {
        let g = Trajectory::Deterministic(DeterministicPath::linear(vec![1.0]));
        let c = cfg(1, 1.0, 0.5, 0.5, 0.01, 2);
        let tail = simulate_detection(&c, &g, 50).unwrap();
        assert!(tail.is_monotone());
    }

    #[test]
    fn point_set_matches_stationary_detection_law() {
        let c = cfg(2, 0.5, 1.0, 0.5, 0.05, 6);
        let k = TargetSet::point_at(vec![0.0, 0.0]);
        let a = compact_detection_tail(&k, &c, 500).unwrap();
        let b = simulate_detection(&c, &Trajectory::Stationary, 500).unwrap();
        let (sa, ea) = a.at(0.5).unwrap();
        let (sb, eb) = b.at(0.5).unwrap();
        assert!((sa - sb).abs() <= 3.0 * (ea * ea + eb * eb).sqrt());
    }
}

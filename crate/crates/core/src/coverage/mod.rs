//! Coverage time `T_cov(RA)` of a scaled target set by the moving nodes.

mod target;

pub use target::*;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{required_buffer, DomainSpec, SimConfig};
use crate::error::{invalid, Result};
use crate::graph::CellGrid;
use crate::points::{sample_poisson_intensity, NodeEnsemble, NodeWalk};
use crate::rng::TrialKey;
use crate::stats::{linear_regression, LinearFit, MeanVar};

/// Net points not yet covered, by first-cover step. A point is covered once
/// some node has been within `r - net_radius` of it at a past grid time.
#[derive(Debug, Clone)]
pub struct CoverState {
    /// First-cover step per net point; `never` while uncovered.
    cover: Vec<u32>,
    /// Number of net points per first-cover step (last slot: uncovered).
    hist: Vec<u32>,
    /// Largest occupied slot of `hist`.
    latest: usize,
    never: u32,
}

impl CoverState {
    pub fn new(points: usize, steps: usize) -> Self {
        let never = steps as u32 + 1;
        let mut hist = vec![0u32; steps + 2];
        hist[never as usize] = points as u32;
        Self {
            cover: vec![never; points],
            hist,
            latest: if points == 0 { 0 } else { never as usize },
            never,
        }
    }

    /// Records that point `j` is covered at step `k`.
    pub fn mark(&mut self, j: usize, k: usize) {
        let old = self.cover[j] as usize;
        if k < old {
            self.hist[old] -= 1;
            self.hist[k] += 1;
            self.cover[j] = k as u32;
            while self.latest > 0 && self.hist[self.latest] == 0 {
                self.latest -= 1;
            }
        }
    }

    pub fn uncovered(&self) -> usize {
        self.hist[self.never as usize] as usize
    }

    /// Steps after which no node can change the cover time.
    pub fn bound(&self) -> usize {
        self.latest
    }

    pub fn cover_step(&self) -> Option<usize> {
        (self.uncovered() == 0).then_some(self.latest)
    }

    pub fn first_cover(&self, j: usize) -> Option<usize> {
        (self.cover[j] != self.never).then_some(self.cover[j] as usize)
    }
}

/// First grid step at which every net point has been within `radius` of some
/// node. Nodes are walked lazily, nearest first, and only as long as they can
/// still lower the cover time.
pub(crate) fn cover_step(
    ens: &NodeEnsemble,
    set: &TargetSet,
    grid: &CellGrid,
    radius: f64,
    dt: f64,
    steps: usize,
) -> Option<usize> {
    let d = set.d;
    let r2 = radius * radius;
    let bbox = set.bounding_box().expect("non-empty set");
    let mut order: Vec<(f64, usize)> = (0..ens.len()).map(|i| (bbox.distance(ens.position(i)), i)).collect();
    order.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    let key = ens.key();
    let mut state = CoverState::new(set.len(), steps);
    let near = bbox.inflated(radius);
    let visit = |state: &mut CoverState, p: &[f64], k: usize| {
        if !near.contains(p) {
            return;
        }
        grid.for_each_near(p, |j| {
            let j = j as usize;
            if crate::config::dist2(p, &set.points[j * d..(j + 1) * d]) <= r2 {
                state.mark(j, k);
            }
        });
    };
    for &(_, i) in &order {
        if state.bound() == 0 {
            break;
        }
        let mut walk = NodeWalk::new(&key, ens.stream_ids()[i], ens.position(i), dt);
        visit(&mut state, walk.position(), 0);
        let mut k = 1;
        while k < state.bound() {
            let p = walk.advance();
            visit(&mut state, p, k);
            k += 1;
        }
    }
    state.cover_step()
}

/// Sample of cover times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverEstimate {
    /// Per trial; `None` when censored at the horizon.
    pub times: Vec<Option<f64>>,
    /// Mean over uncensored trials.
    pub mean: f64,
    pub std_error: f64,
    pub censored: usize,
    /// More than half of the trials hit the horizon.
    pub unreliable: bool,
    pub net_points: usize,
}

impl CoverEstimate {
    pub fn trials(&self) -> usize {
        self.times.len()
    }

    fn from_times(times: Vec<Option<f64>>, net_points: usize) -> Self {
        let mv: MeanVar = times.iter().flatten().copied().collect();
        let censored = times.iter().filter(|t| t.is_none()).count();
        Self {
            mean: if mv.count > 0 { mv.mean } else { f64::NAN },
            std_error: mv.std_error(),
            unreliable: 2 * censored > times.len(),
            censored,
            times,
            net_points,
        }
    }
}

/// Nodes are sampled on the set's bounding box inflated by the larger of the
/// configured buffer and the truncation rule for the horizon.
fn sampling_box(set: &TargetSet, config: &SimConfig) -> crate::config::AxisBox {
    let rule = required_buffer(config.r, config.horizon);
    let buffer = match config.domain {
        DomainSpec::BoxedPlane { buffer, .. } => buffer.max(rule),
        DomainSpec::Torus { .. } => rule,
    };
    set.bounding_box().expect("non-empty set").inflated(buffer)
}

/// A validated coverage problem: the net, its cell index and the sampling box.
pub struct CoverProblem<'a> {
    set: &'a TargetSet,
    config: SimConfig,
    grid: CellGrid,
    radius: f64,
    region: crate::config::AxisBox,
}

impl<'a> CoverProblem<'a> {
    pub fn new(set: &'a TargetSet, config: &SimConfig) -> Result<Self> {
        config.validate()?;
        if config.domain.is_torus() {
            return Err(invalid("coverage runs on the boxed plane"));
        }
        if set.is_empty() || set.d != config.d {
            return Err(invalid("target set must be non-empty and match the dimension"));
        }
        let radius = config.r - set.net_radius;
        if !(radius > 0.0) {
            return Err(invalid(format!(
                "net radius {} must be below r = {}",
                set.net_radius, config.r
            )));
        }
        Ok(Self {
            set,
            config: config.clone(),
            grid: set.index(radius),
            radius,
            region: sampling_box(set, config),
        })
    }

    /// First-cover step of trial `i`, nodes thinned to `keep` of the intensity.
    pub fn trial(&self, i: u64, keep: f64) -> Result<Option<usize>> {
        let c = &self.config;
        let key = TrialKey::new(c.seed, i);
        let mut ens = sample_poisson_intensity(c.d, c.lambda, &self.region, &key, None)?;
        if keep < 1.0 {
            ens = ens.thinned(keep);
        }
        Ok(cover_step(&ens, self.set, &self.grid, self.radius, c.dt, c.steps()))
    }
}

/// First-cover steps per trial, nodes thinned to `keep` of the configured intensity.
pub fn cover_steps(set: &TargetSet, config: &SimConfig, trials: usize, keep: f64) -> Result<Vec<Option<usize>>> {
    if trials == 0 {
        return Err(invalid("need at least one trial"));
    }
    let problem = CoverProblem::new(set, config)?;
    (0..trials as u64).into_par_iter().map(|i| problem.trial(i, keep)).collect()
}

/// Monte Carlo sample of `T_cov` for the net `set`.
pub fn estimate_cover_time(set: &TargetSet, config: &SimConfig, trials: usize) -> Result<CoverEstimate> {
    let steps = cover_steps(set, config, trials, 1.0)?;
    let times = steps.into_iter().map(|s| s.map(|k| k as f64 * config.dt)).collect();
    Ok(CoverEstimate::from_times(times, set.len()))
}

/// Growth-law rate function of the scale for dimension `d` (constants omitted).
pub fn rate_function(d: usize, scale: f64) -> f64 {
    let l = scale.ln();
    match d {
        1 => l * l,
        2 => l * l.ln().max(0.0),
        _ => l,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub scale: f64,
    pub mean: f64,
    pub std_error: f64,
    pub censored: usize,
    pub net_points: usize,
    pub rate: f64,
    /// Coefficient of variation of the uncensored cover times.
    pub cv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingStudy {
    pub kind: TargetKind,
    pub d: usize,
    pub rows: Vec<ScalingRow>,
    /// Mean cover time regressed on the rate function.
    pub fit: LinearFit,
    /// Mean cover time regressed on `log R`.
    pub log_fit: LinearFit,
}

/// Cover times of `kind` at each scale, with regressions against the rate
/// function of the dimension and against `log R`.
pub fn coverage_scaling_study(
    kind: TargetKind,
    scales: &[f64],
    epsilon: f64,
    config: &SimConfig,
    trials: usize,
) -> Result<ScalingStudy> {
    if scales.len() < 4 {
        return Err(invalid("scaling study needs at least 4 scales"));
    }
    let ratio = scales[1] / scales[0];
    if !(ratio > 1.0) || scales.windows(2).any(|w| ((w[1] / w[0]) / ratio - 1.0).abs() > 1e-9) {
        return Err(invalid("scales must form an increasing geometric progression"));
    }
    let mut rows = Vec::with_capacity(scales.len());
    for &scale in scales {
        let set = build_target(kind, config.d, scale, epsilon)?;
        let est = estimate_cover_time(&set, config, trials)?;
        let sd = est.std_error * ((est.trials() - est.censored) as f64).sqrt();
        rows.push(ScalingRow {
            scale,
            mean: est.mean,
            std_error: est.std_error,
            censored: est.censored,
            net_points: est.net_points,
            rate: rate_function(config.d, scale),
            cv: sd / est.mean,
        });
    }
    let y: Vec<f64> = rows.iter().map(|r| r.mean).collect();
    let rate: Vec<f64> = rows.iter().map(|r| r.rate).collect();
    let logs: Vec<f64> = scales.iter().map(|s| s.ln()).collect();
    Ok(ScalingStudy {
        kind,
        d: config.d,
        fit: linear_regression(&rate, &y),
        log_fit: linear_regression(&logs, &y),
        rows,
    })
}

/// Ratio of mean cover times of two kinds at the same scale, on shared node randomness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionRatio {
    pub numerator: CoverEstimate,
    pub denominator: CoverEstimate,
    pub ratio: f64,
    /// Delta-method standard error of the ratio (estimates treated as independent).
    pub std_error: f64,
}

pub fn cover_time_ratio(
    num: TargetKind,
    den: TargetKind,
    scale: f64,
    epsilon: f64,
    config: &SimConfig,
    trials: usize,
) -> Result<DimensionRatio> {
    let a = estimate_cover_time(&build_target(num, config.d, scale, epsilon)?, config, trials)?;
    let b = estimate_cover_time(&build_target(den, config.d, scale, epsilon)?, config, trials)?;
    let ratio = a.mean / b.mean;
    let se = ratio * ((a.std_error / a.mean).powi(2) + (b.std_error / b.mean).powi(2)).sqrt();
    Ok(DimensionRatio {
        numerator: a,
        denominator: b,
        ratio,
        std_error: se,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(d: usize, lambda: f64, horizon: f64, dt: f64, seed: u64) -> SimConfig {
        SimConfig::boxed(d, lambda, 1.0, dt, horizon, 1.0, seed)
    }

    #[test]
    fn cover_state_tracks_latest() {
        let mut s = CoverState::new(3, 10);
        assert_eq!(s.bound(), 11);
        s.mark(0, 4);
        s.mark(1, 7);
        assert_eq!(s.cover_step(), None);
        s.mark(2, 2);
        assert_eq!(s.cover_step(), Some(7));
        s.mark(1, 1);
        assert_eq!(s.cover_step(), Some(4));
        s.mark(0, 9);
        assert_eq!(s.first_cover(0), Some(4));
    }

    #[test]
    fn zero_intensity_is_always_censored() {
        let set = build_target(TargetKind::Segment, 1, 2.0, 0.1).unwrap();
        let est = estimate_cover_time(&set, &cfg(1, 0.0, 0.5, 0.05, 1), 5).unwrap();
        assert_eq!(est.censored, 5);
        assert!(est.unreliable);
    }

    #[test]
    fn point_cover_equals_detection() {
        let c = cfg(2, 1.0, 0.5, 0.05, 4);
        let set = TargetSet::point_at(vec![0.0, 0.0]);
        let cov = cover_steps(&set, &c, 50, 1.0).unwrap();
        let det = crate::detection::compact_detection_steps(&set, &c, 50).unwrap();
        assert_eq!(cov, det);
    }

    #[test]
    fn conservative_against_fine_grid() {
        let c = cfg(1, 2.0, 3.0, 0.01, 7);
        let coarse = build_target(TargetKind::Segment, 1, 2.0, 0.1).unwrap();
        let fine_pts: Vec<f64> = (0..=2000).map(|i| -1.0 + i as f64 * 1e-3).collect();
        let fine = TargetSet::custom(1, fine_pts, 0.0).unwrap();
        let a = cover_steps(&coarse, &c, 40, 1.0).unwrap();
        let b = cover_steps(&fine, &c, 40, 1.0).unwrap();
        for (x, y) in a.iter().zip(&b) {
            let x = x.unwrap_or(usize::MAX);
            let y = y.unwrap_or(usize::MAX);
            assert!(x >= y);
        }
    }

    #[test]
    fn monotone_under_inclusion_and_lambda() {
        let c = cfg(2, 1.0, 3.0, 0.05, 2);
        let big = build_target(TargetKind::Cube, 2, 3.0, 0.2).unwrap();
        // same bounding box, so both runs sample the same nodes
        let bb = big.bounding_box().unwrap();
        let pts: Vec<f64> = (0..big.len())
            .filter(|&j| {
                let p = big.point(j);
                j % 3 == 0 || (0..2).all(|a| p[a] == bb.lo[a] || p[a] == bb.hi[a])
            })
            .flat_map(|j| big.point(j).to_vec())
            .collect();
        let sub = TargetSet::custom(2, pts, big.net_radius).unwrap();
        assert_eq!(sub.bounding_box(), big.bounding_box());
        let a = cover_steps(&sub, &c, 20, 1.0).unwrap();
        let b = cover_steps(&big, &c, 20, 1.0).unwrap();
        let thin = cover_steps(&big, &c, 20, 0.5).unwrap();
        for i in 0..20 {
            let f = |s: Option<usize>| s.unwrap_or(usize::MAX);
            assert!(f(a[i]) <= f(b[i]));
            assert!(f(b[i]) <= f(thin[i]));
        }
    }

    #[test]
    fn net_radius_at_r_is_rejected() {
        let set = build_target(TargetKind::Segment, 1, 2.0, 1.0).unwrap();
        assert!(estimate_cover_time(&set, &cfg(1, 1.0, 1.0, 0.1, 1), 2).is_err());
    }

    #[test]
    fn scaling_needs_geometric_scales() {
        let c = cfg(1, 1.0, 1.0, 0.1, 1);
        assert!(coverage_scaling_study(TargetKind::Segment, &[1.0, 2.0, 3.0, 4.0], 0.1, &c, 2).is_err());
    }
}

//! Simulation parameters, domains and target trajectories.

use std::fmt;
use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{tag, TrialKey};

pub const MAX_DIM: usize = 4;

/// Multiplier `c` in the truncation buffer `r + c * sqrt(t * ln(1/delta))`.
pub const BUFFER_C: f64 = 4.0;
/// Per-trial truncation failure probability `delta`.
pub const BUFFER_DELTA: f64 = 1e-6;

/// Smallest buffer for which nodes outside `window ⊕ buffer` influence the
/// window before `t_max` with probability below `delta`.
pub fn required_buffer_with(r: f64, t_max: f64, delta: f64) -> f64 {
    r + BUFFER_C * (t_max.max(0.0) * (1.0 / delta).ln()).sqrt()
}

pub fn required_buffer(r: f64, t_max: f64) -> f64 {
    required_buffer_with(r, t_max, BUFFER_DELTA)
}

/// Volume of the unit ball in `d` dimensions.
pub fn unit_ball_volume(d: usize) -> f64 {
    use std::f64::consts::PI;
    match d {
        0 => 1.0,
        1 => 2.0,
        2 => PI,
        3 => 4.0 * PI / 3.0,
        4 => PI * PI / 2.0,
        _ => 2.0 * PI / d as f64 * unit_ball_volume(d - 2),
    }
}

/// Surface area of the unit sphere in `d` dimensions.
pub fn unit_sphere_area(d: usize) -> f64 {
    d as f64 * unit_ball_volume(d)
}

/// Simulation domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum DomainSpec {
    /// Observation window `Q_side` centred at the origin, sampled together with
    /// a margin of width `buffer` on every side.
    BoxedPlane { side: f64, buffer: f64 },
    /// Periodic cube `[0, side)^d`.
    Torus { side: f64 },
}

impl DomainSpec {
    pub fn boxed(side: f64, buffer: f64) -> Self {
        DomainSpec::BoxedPlane { side, buffer }
    }

    pub fn torus(side: f64) -> Self {
        DomainSpec::Torus { side }
    }

    /// Torus holding `n` nodes in expectation at intensity `lambda`.
    pub fn torus_for_count(n: f64, lambda: f64, d: usize) -> Self {
        DomainSpec::Torus {
            side: (n / lambda).powf(1.0 / d as f64),
        }
    }

    pub fn side(&self) -> f64 {
        match *self {
            DomainSpec::BoxedPlane { side, .. } | DomainSpec::Torus { side } => side,
        }
    }

    pub fn buffer(&self) -> f64 {
        match *self {
            DomainSpec::BoxedPlane { buffer, .. } => buffer,
            DomainSpec::Torus { .. } => 0.0,
        }
    }

    pub fn is_torus(&self) -> bool {
        matches!(self, DomainSpec::Torus { .. })
    }

    pub fn validate(&self) -> Result<()> {
        let side = self.side();
        if !(side > 0.0 && side.is_finite()) {
            return Err(invalid(format!("domain side must be positive, got {side}")));
        }
        if !(self.buffer() >= 0.0) {
            return Err(invalid("domain buffer must be non-negative"));
        }
        Ok(())
    }

    /// Observation window (boxed) or the fundamental cell (torus).
    pub fn window(&self, d: usize) -> AxisBox {
        match *self {
            DomainSpec::BoxedPlane { side, .. } => AxisBox::centered_cube(d, side),
            DomainSpec::Torus { side } => AxisBox::new(vec![0.0; d], vec![side; d]),
        }
    }

    /// Region in which nodes are sampled.
    pub fn sampling_region(&self, d: usize) -> AxisBox {
        self.window(d).inflated(self.buffer())
    }
}

/// Axis-aligned box `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl AxisBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        assert_eq!(lo.len(), hi.len(), "box corners must have equal dimension");
        Self { lo, hi }
    }

    /// Cube `Q_side` centred at the origin.
    pub fn centered_cube(d: usize, side: f64) -> Self {
        Self::new(vec![-side / 2.0; d], vec![side / 2.0; d])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn volume(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| (h - l).max(0.0))
            .product()
    }

    pub fn inflated(&self, w: f64) -> Self {
        Self::new(
            self.lo.iter().map(|x| x - w).collect(),
            self.hi.iter().map(|x| x + w).collect(),
        )
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(x, (l, h))| *x >= *l && *x <= *h)
    }

    pub fn contains_box(&self, other: &AxisBox) -> bool {
        self.contains(&other.lo) && self.contains(&other.hi)
    }

    /// Euclidean distance from `p` to the box (0 inside).
    pub fn distance(&self, p: &[f64]) -> f64 {
        p.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(x, (l, h))| {
                let e = (l - x).max(x - h).max(0.0);
                e * e
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Bounding box of a flat list of `d`-vectors.
    pub fn bounding(points: &[f64], d: usize) -> Option<Self> {
        if points.is_empty() {
            return None;
        }
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for p in points.chunks_exact(d) {
            for a in 0..d {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        Some(Self::new(lo, hi))
    }
}

/// Global simulation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Node intensity (nodes per unit volume).
    pub lambda: f64,
    /// Connection / detection radius.
    pub r: f64,
    pub d: usize,
    pub dt: f64,
    pub horizon: f64,
    pub domain: DomainSpec,
    pub seed: u64,
}

impl SimConfig {
    /// Boxed-plane configuration whose buffer is the minimum allowed for
    /// `horizon`, around an observation window of side `side`.
    pub fn boxed(d: usize, lambda: f64, r: f64, dt: f64, horizon: f64, side: f64, seed: u64) -> Self {
        Self {
            lambda,
            r,
            d,
            dt,
            horizon,
            domain: DomainSpec::boxed(side, required_buffer(r, horizon)),
            seed,
        }
    }

    pub fn torus(d: usize, lambda: f64, r: f64, dt: f64, horizon: f64, side: f64, seed: u64) -> Self {
        Self {
            lambda,
            r,
            d,
            dt,
            horizon,
            domain: DomainSpec::torus(side),
            seed,
        }
    }

    /// Zero intensity is accepted as a degenerate (empty) model.
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(invalid(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(invalid(format!("r must be positive, got {}", self.r)));
        }
        if !(1..=MAX_DIM).contains(&self.d) {
            return Err(invalid(format!("dimension must be in 1..={MAX_DIM}, got {}", self.d)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(invalid(format!("horizon must be non-negative, got {}", self.horizon)));
        }
        if self.horizon > 0.0 && self.dt > self.horizon * (1.0 + 1e-12) {
            return Err(invalid("dt must not exceed the horizon"));
        }
        self.domain.validate()
    }

    /// Number of dt steps in the horizon.
    pub fn steps(&self) -> usize {
        grid_steps(self.horizon, self.dt)
    }

    /// Rejects boxed domains whose buffer is below the truncation rule for `t_max`.
    pub fn check_buffer(&self, t_max: f64) -> Result<()> {
        self.check_buffer_with(t_max, BUFFER_DELTA)
    }

    pub fn check_buffer_with(&self, t_max: f64, delta: f64) -> Result<()> {
        if let DomainSpec::BoxedPlane { buffer, .. } = self.domain {
            let need = required_buffer_with(self.r, t_max, delta);
            if buffer + 1e-9 < need {
                return Err(Error::InsufficientBuffer { have: buffer, need });
            }
        }
        Ok(())
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self { lambda, ..self.clone() }
    }
}

/// Number of grid steps of size `dt` covering `[0, horizon]`.
pub fn grid_steps(horizon: f64, dt: f64) -> usize {
    let n = horizon / dt;
    let rounded = n.round();
    if (n - rounded).abs() < 1e-9 * n.max(1.0) {
        rounded as usize
    } else {
        n.ceil() as usize
    }
}

type PathFn = dyn Fn(f64, &mut [f64]) + Send + Sync;

/// Deterministic continuous path `g` with `g(0) = 0`.
#[derive(Clone)]
pub struct DeterministicPath {
    label: String,
    eval: Arc<PathFn>,
    /// Declared bound `c` with `|g(t + dt) - g(t)| <= c * sqrt(dt)` on the grid.
    continuity: Option<f64>,
}

impl DeterministicPath {
    pub fn new(label: impl Into<String>, f: impl Fn(f64, &mut [f64]) + Send + Sync + 'static) -> Self {
        Self {
            label: label.into(),
            eval: Arc::new(f),
            continuity: None,
        }
    }

    /// `g(t) = t * velocity`.
    pub fn linear(velocity: Vec<f64>) -> Self {
        let label = format!("linear{velocity:?}");
        Self::new(label, move |t, out| {
            for (o, v) in out.iter_mut().zip(&velocity) {
                *o = v * t;
            }
        })
    }

    /// Piecewise-linear interpolation of samples taken every `spacing` time units,
    /// held constant after the last sample.
    pub fn tabulated(spacing: f64, samples: Vec<Vec<f64>>) -> Result<Self> {
        if samples.is_empty() || !(spacing > 0.0) {
            return Err(invalid("tabulated path needs samples and a positive spacing"));
        }
        let d = samples[0].len();
        if samples.iter().any(|s| s.len() != d) {
            return Err(invalid("tabulated samples must share one dimension"));
        }
        Ok(Self::new("tabulated", move |t, out| {
            let x = (t / spacing).max(0.0);
            let i = (x.floor() as usize).min(samples.len() - 1);
            let j = (i + 1).min(samples.len() - 1);
            let w = (x - i as f64).clamp(0.0, 1.0);
            for a in 0..out.len() {
                out[a] = samples[i][a] * (1.0 - w) + samples[j][a] * w;
            }
        }))
    }

    pub fn with_continuity(mut self, c: f64) -> Self {
        self.continuity = Some(c);
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn eval(&self, t: f64, out: &mut [f64]) {
        (self.eval)(t, out)
    }
}

impl fmt::Debug for DeterministicPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DeterministicPath").field("label", &self.label).finish()
    }
}

/// Motion of the target that the nodes try to detect.
#[derive(Debug, Clone)]
pub enum Trajectory {
    Stationary,
    /// Standard Brownian motion independent of the nodes.
    Brownian,
    Deterministic(DeterministicPath),
}

impl Trajectory {
    pub fn name(&self) -> &str {
        match self {
            Trajectory::Stationary => "stationary",
            Trajectory::Brownian => "brownian",
            Trajectory::Deterministic(p) => p.label(),
        }
    }

    pub fn is_random(&self) -> bool {
        matches!(self, Trajectory::Brownian)
    }

    /// Samples the path on the grid `k * dt`, `k = 0..=steps`, as a flat
    /// `(steps + 1) * d` array. Brownian paths use the trial's target substream.
    pub fn grid_path(&self, d: usize, dt: f64, steps: usize, key: &TrialKey) -> Result<Vec<f64>> {
        let mut out = vec![0.0; (steps + 1) * d];
        match self {
            Trajectory::Stationary => {}
            Trajectory::Brownian => {
                let mut rng = key.stream(tag::TARGET);
                let sd = dt.sqrt();
                for k in 1..=steps {
                    for a in 0..d {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        out[k * d + a] = out[(k - 1) * d + a] + sd * z;
                    }
                }
            }
            Trajectory::Deterministic(p) => {
                for k in 0..=steps {
                    p.eval(k as f64 * dt, &mut out[k * d..(k + 1) * d]);
                }
                if out[..d].iter().any(|x| x.abs() > 1e-12) {
                    return Err(invalid("deterministic trajectory must start at the origin"));
                }
                if let Some(c) = p.continuity {
                    let bound = c * dt.sqrt();
                    for k in 1..=steps {
                        let jump = dist(&out[(k - 1) * d..k * d], &out[k * d..(k + 1) * d]);
                        if jump > bound {
                            return Err(invalid(format!(
                                "trajectory '{}' jumps {jump} > {bound} at step {k}",
                                p.label()
                            )));
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

#[inline]
pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    dist2(a, b).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ball_volumes() {
        assert_eq!(unit_ball_volume(1), 2.0);
        assert!((unit_ball_volume(2) - std::f64::consts::PI).abs() < 1e-15);
        assert!((unit_ball_volume(3) - 4.18879020478639).abs() < 1e-12);
        assert!((unit_ball_volume(5) - 5.263789013914324).abs() < 1e-12);
    }

    #[test]
    fn validation_rejects_bad_values() {
        let ok = SimConfig::boxed(2, 1.0, 1.0, 0.01, 1.0, 10.0, 0);
        assert!(ok.validate().is_ok());
        assert!(SimConfig { r: 0.0, ..ok.clone() }.validate().is_err());
        assert!(SimConfig { d: 5, ..ok.clone() }.validate().is_err());
        assert!(SimConfig { dt: 2.0, ..ok.clone() }.validate().is_err());
        assert!(SimConfig { lambda: -1.0, ..ok.clone() }.validate().is_err());
        assert!(SimConfig { horizon: 0.0, ..ok.clone() }.validate().is_ok());
    }

    #[test]
    fn buffer_rule() {
        let cfg = SimConfig::boxed(2, 1.0, 1.0, 0.01, 4.0, 10.0, 0);
        assert!(cfg.check_buffer(4.0).is_ok());
        assert!(matches!(cfg.check_buffer(9.0), Err(Error::InsufficientBuffer { .. })));
        let expect = 1.0 + 4.0 * (4.0 * (1e6f64).ln()).sqrt();
        assert!((cfg.domain.buffer() - expect).abs() < 1e-12);
    }

    #[test]
    fn torus_side_from_count() {
        let dom = DomainSpec::torus_for_count(2000.0, 2.0, 2);
        assert!((dom.side() - 1000f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn grid_steps_rounding() {
        assert_eq!(grid_steps(1.0, 1e-4), 10_000);
        assert_eq!(grid_steps(0.3, 0.1), 3);
        assert_eq!(grid_steps(0.0, 0.1), 0);
        assert_eq!(grid_steps(1.05, 0.1), 11);
    }

    #[test]
    fn deterministic_path_must_start_at_origin() {
        let p = DeterministicPath::new("shifted", |t, out| out[0] = 1.0 + t);
        let err = Trajectory::Deterministic(p).grid_path(1, 0.1, 3, &TrialKey::new(0, 0));
        assert!(err.is_err());
        let lin = Trajectory::Deterministic(DeterministicPath::linear(vec![1.0, 0.0]));
        let path = lin.grid_path(2, 0.5, 2, &TrialKey::new(0, 0)).unwrap();
        assert_eq!(path, vec![0.0, 0.0, 0.5, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn continuity_declaration_is_enforced() {
        let jumpy = DeterministicPath::new("step", |t, out| out[0] = if t > 0.5 { 3.0 } else { 0.0 })
            .with_continuity(2.0);
        let r = Trajectory::Deterministic(jumpy).grid_path(1, 0.01, 100, &TrialKey::new(0, 0));
        assert!(r.is_err());
    }

    #[test]
    fn tabulated_interpolates() {
        let p = DeterministicPath::tabulated(1.0, vec![vec![0.0], vec![2.0]]).unwrap();
        let mut out = [0.0];
        p.eval(0.25, &mut out);
        assert!((out[0] - 0.5).abs() < 1e-12);
        p.eval(5.0, &mut out);
        assert_eq!(out[0], 2.0);
    }
}

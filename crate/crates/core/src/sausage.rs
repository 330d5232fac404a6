//! Expected Wiener sausage volumes `E vol(∪_{s ≤ t} B(g(s) - ζ(s), r))`,
//! optionally with the ball replaced by an enlarged compact set `K^r`.
//!
//! The sausage is the union over grid times `k * dt`, matching the grid on
//! which detection is simulated.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::{dist2, grid_steps, unit_ball_volume, AxisBox, Trajectory, MAX_DIM};
use crate::coverage::TargetSet;
use crate::error::{invalid, Error, Result};
use crate::graph::CellGrid;
use crate::rng::{tag, StreamRng, TrialKey};
use crate::stats::MeanVar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VolumeMethod {
    /// `2r + max - min` of the relative path (d = 1, point set).
    ExactMinMax1D,
    /// Uniform samples in the inflated bounding box of the body.
    HitOrMiss,
    /// Randomly shifted voxel lattice.
    Voxel,
}

#[derive(Debug, Clone)]
pub struct SausageSpec {
    pub d: usize,
    pub r: f64,
    pub t: f64,
    pub drift: Trajectory,
    /// Sweep `K^r` instead of the ball `B(0, r)`.
    pub enlarged_set: Option<TargetSet>,
    pub seed: u64,
}

impl SausageSpec {
    pub fn new(d: usize, r: f64, t: f64, seed: u64) -> Self {
        Self {
            d,
            r,
            t,
            drift: Trajectory::Stationary,
            enlarged_set: None,
            seed,
        }
    }

    pub fn with_drift(mut self, drift: Trajectory) -> Self {
        self.drift = drift;
        self
    }

    pub fn with_set(mut self, set: TargetSet) -> Self {
        self.enlarged_set = Some(set);
        self
    }

    fn validate(&self) -> Result<()> {
        if !(1..=MAX_DIM).contains(&self.d) {
            return Err(invalid(format!("dimension must be in 1..={MAX_DIM}")));
        }
        if !(self.r > 0.0) {
            return Err(invalid("sausage radius must be positive"));
        }
        if !(self.t >= 0.0 && self.t.is_finite()) {
            return Err(invalid("sausage horizon must be non-negative"));
        }
        if let Some(k) = &self.enlarged_set {
            if k.is_empty() {
                return Err(invalid("enlarged set is empty"));
            }
            if k.d != self.d {
                return Err(invalid("enlarged set dimension does not match"));
            }
        }
        Ok(())
    }

    fn point_like(&self) -> bool {
        self.enlarged_set.as_ref().is_none_or(|k| k.len() == 1)
    }

    /// Method used when none is requested.
    pub fn default_method(&self) -> VolumeMethod {
        if self.d == 1 && self.point_like() && !self.drift.is_random() {
            VolumeMethod::ExactMinMax1D
        } else {
            VolumeMethod::HitOrMiss
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SausageOptions {
    pub method: Option<VolumeMethod>,
    /// Hit-or-miss samples per path.
    pub samples_per_path: usize,
    /// Voxel side; defaults to `r / 10`.
    pub voxel_resolution: Option<f64>,
    /// Cap on the occupancy map (one bit per voxel) of a single path, in bytes.
    pub voxel_cap_bytes: usize,
}

impl Default for SausageOptions {
    fn default() -> Self {
        Self {
            method: None,
            samples_per_path: 256,
            voxel_resolution: None,
            voxel_cap_bytes: 256 << 20,
        }
    }
}

impl SausageOptions {
    pub fn method(method: VolumeMethod) -> Self {
        Self {
            method: Some(method),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumeEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub method: VolumeMethod,
    pub paths: usize,
    pub dt: f64,
}

impl VolumeEstimate {
    fn from_samples(samples: &[f64], method: VolumeMethod, dt: f64) -> Self {
        let mv: MeanVar = samples.iter().copied().collect();
        Self {
            mean: mv.mean,
            std_error: mv.std_error(),
            method,
            paths: samples.len(),
            dt,
        }
    }
}

/// Relative path `g - ζ` on the grid, given the drift's grid path and the
/// generator of the Brownian driver `ζ`.
pub fn relative_path(drift_path: &[f64], d: usize, dt: f64, zeta: &mut StreamRng) -> Vec<f64> {
    let steps = drift_path.len() / d - 1;
    let mut out = drift_path.to_vec();
    let sd = dt.sqrt();
    let mut z = [0.0f64; MAX_DIM];
    for k in 1..=steps {
        for a in 0..d {
            let inc: f64 = StandardNormal.sample(zeta);
            z[a] -= sd * inc;
            out[k * d + a] += z[a];
        }
    }
    out
}

/// The swept body `∪_k (K^r + h_k)` of one relative path `h`.
pub struct SweptBody<'a> {
    d: usize,
    r: f64,
    path: &'a [f64],
    set: Option<&'a TargetSet>,
    /// Cells over the path (point set) or over the net (extended set).
    grid: CellGrid,
    /// Centres indexed by `grid` when the set is a single point.
    centres: Vec<f64>,
    bounds: AxisBox,
}

impl<'a> SweptBody<'a> {
    pub fn new(path: &'a [f64], d: usize, r: f64, set: Option<&'a TargetSet>) -> Self {
        let path_box = AxisBox::bounding(path, d).expect("path has at least one point");
        let (grid, centres, bounds) = match set {
            Some(k) if k.len() > 1 => {
                let kb = k.bounding_box().expect("non-empty set");
                let lo = (0..d).map(|a| kb.lo[a] + path_box.lo[a] - r).collect();
                let hi = (0..d).map(|a| kb.hi[a] + path_box.hi[a] + r).collect();
                (k.index(r), Vec::new(), AxisBox::new(lo, hi))
            }
            _ => {
                let shift = set.map(|k| k.point(0).to_vec()).unwrap_or_else(|| vec![0.0; d]);
                let centres: Vec<f64> = path
                    .chunks_exact(d)
                    .flat_map(|p| p.iter().zip(&shift).map(|(x, s)| x + s).collect::<Vec<_>>())
                    .collect();
                let b = AxisBox::bounding(&centres, d).expect("non-empty").inflated(r);
                (CellGrid::build(&centres, d, r, None), centres, b)
            }
        };
        Self {
            d,
            r,
            path,
            set: set.filter(|k| k.len() > 1),
            grid,
            centres,
            bounds,
        }
    }

    pub fn bounds(&self) -> &AxisBox {
        &self.bounds
    }

    pub fn contains(&self, u: &[f64]) -> bool {
        let d = self.d;
        let r2 = self.r * self.r;
        match self.set {
            None => self
                .grid
                .any_near(u, |i| dist2(u, &self.centres[i as usize * d..(i as usize + 1) * d]) <= r2),
            Some(k) => {
                let mut q = [0.0f64; MAX_DIM];
                self.path.chunks_exact(d).any(|h| {
                    for a in 0..d {
                        q[a] = u[a] - h[a];
                    }
                    let q = &q[..d];
                    self.grid.any_near(q, |i| dist2(q, k.point(i as usize)) <= r2)
                })
            }
        }
    }

    /// Unbiased hit-or-miss estimate of the body's volume.
    pub fn hit_or_miss(&self, samples: usize, rng: &mut StreamRng) -> f64 {
        let mut u = [0.0f64; MAX_DIM];
        let mut hits = 0usize;
        for _ in 0..samples {
            for a in 0..self.d {
                u[a] = rng.random_range(self.bounds.lo[a]..=self.bounds.hi[a]);
            }
            if self.contains(&u[..self.d]) {
                hits += 1;
            }
        }
        self.bounds.volume() * hits as f64 / samples as f64
    }

    /// Number of voxels of side `h` needed to tile the bounding box.
    pub fn voxel_count(&self, h: f64) -> f64 {
        (0..self.d)
            .map(|a| ((self.bounds.hi[a] - self.bounds.lo[a]) / h).ceil() + 1.0)
            .product()
    }

    /// Voxel-centre count on a lattice of side `h` shifted by a uniform offset;
    /// unbiased for the volume given the path.
    pub fn voxel_volume(&self, h: f64, rng: &mut StreamRng) -> f64 {
        let d = self.d;
        let mut origin = [0.0f64; MAX_DIM];
        let mut dims = [1usize; MAX_DIM];
        for a in 0..d {
            let shift: f64 = rng.random();
            origin[a] = self.bounds.lo[a] - shift * h;
            dims[a] = ((self.bounds.hi[a] - origin[a]) / h).ceil() as usize + 1;
        }
        let total: usize = dims[..d].iter().product();
        let mut idx = [0usize; MAX_DIM];
        let mut u = [0.0f64; MAX_DIM];
        let mut count = 0usize;
        for _ in 0..total {
            for a in 0..d {
                u[a] = origin[a] + (idx[a] as f64 + 0.5) * h;
            }
            if self.contains(&u[..d]) {
                count += 1;
            }
            for a in 0..d {
                idx[a] += 1;
                if idx[a] < dims[a] {
                    break;
                }
                idx[a] = 0;
            }
        }
        count as f64 * h.powi(d as i32)
    }
}

/// Volume of one relative path's body by the given method.
pub fn path_volume(
    path: &[f64],
    d: usize,
    r: f64,
    set: Option<&TargetSet>,
    method: VolumeMethod,
    opts: &SausageOptions,
    rng: &mut StreamRng,
) -> Result<f64> {
    match method {
        VolumeMethod::ExactMinMax1D => {
            if d != 1 || set.is_some_and(|k| k.len() > 1) {
                return Err(invalid("exact min/max volume needs d = 1 and a point set"));
            }
            let (lo, hi) = path
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
            Ok(2.0 * r + hi - lo)
        }
        VolumeMethod::HitOrMiss => {
            if opts.samples_per_path == 0 {
                return Err(invalid("hit-or-miss needs at least one sample per path"));
            }
            Ok(SweptBody::new(path, d, r, set).hit_or_miss(opts.samples_per_path, rng))
        }
        VolumeMethod::Voxel => {
            let h = opts.voxel_resolution.unwrap_or(r / 10.0);
            if !(h > 0.0) {
                return Err(invalid("voxel resolution must be positive"));
            }
            let body = SweptBody::new(path, d, r, set);
            let bytes = body.voxel_count(h) / 8.0;
            if bytes > opts.voxel_cap_bytes as f64 {
                return Err(Error::CapExceeded(format!(
                    "voxel map needs ~{:.0} bytes (> cap {}); coarsen the resolution to at least {:.3e} or raise the cap",
                    bytes,
                    opts.voxel_cap_bytes,
                    h * (bytes / opts.voxel_cap_bytes as f64).powf(1.0 / d as f64)
                )));
            }
            Ok(body.voxel_volume(h, rng))
        }
    }
}

/// Per-path volumes; path `i` uses driver `ζ` from `(seed, i)` so that specs
/// differing only in drift, radius or horizon share their Brownian paths.
pub fn per_path_volumes(spec: &SausageSpec, paths: usize, dt: f64, opts: &SausageOptions) -> Result<Vec<f64>> {
    spec.validate()?;
    if paths == 0 {
        return Err(invalid("need at least one path"));
    }
    if !(dt > 0.0) {
        return Err(invalid("dt must be positive"));
    }
    let method = opts.method.unwrap_or_else(|| spec.default_method());
    if method == VolumeMethod::ExactMinMax1D && (spec.d != 1 || !spec.point_like()) {
        return Err(invalid("exact min/max volume needs d = 1 and a point set"));
    }
    let steps = grid_steps(spec.t, dt);
    (0..paths)
        .map(|i| {
            let key = TrialKey::new(spec.seed, i as u64);
            let g = spec.drift.grid_path(spec.d, dt, steps, &key)?;
            let h = relative_path(&g, spec.d, dt, &mut key.stream(tag::PATH));
            path_volume(
                &h,
                spec.d,
                spec.r,
                spec.enlarged_set.as_ref(),
                method,
                opts,
                &mut key.stream(tag::SAMPLE),
            )
        })
        .collect()
}

pub fn sausage_volume_with(spec: &SausageSpec, paths: usize, dt: f64, opts: &SausageOptions) -> Result<VolumeEstimate> {
    let method = opts.method.unwrap_or_else(|| spec.default_method());
    let samples = per_path_volumes(spec, paths, dt, opts)?;
    Ok(VolumeEstimate::from_samples(&samples, method, dt))
}

/// Monte Carlo estimate of the expected sausage volume.
pub fn sausage_volume(spec: &SausageSpec, paths: usize, dt: f64) -> Result<VolumeEstimate> {
    sausage_volume_with(spec, paths, dt, &SausageOptions::default())
}

/// Closed form `sqrt(8t/π) + 2r` of the one-dimensional stationary sausage.
pub fn sausage_volume_1d_exact(r: f64, t: f64) -> f64 {
    (8.0 * t / std::f64::consts::PI).sqrt() + 2.0 * r
}

/// Volume `v_d r^d` of the sausage at time zero.
pub fn ball_volume(d: usize, r: f64) -> f64 {
    unit_ball_volume(d) * r.powi(d as i32)
}

/// Estimates for several drifts on shared Brownian drivers.
pub fn drift_comparison(
    d: usize,
    r: f64,
    t: f64,
    drifts: &[Trajectory],
    paths: usize,
    dt: f64,
    seed: u64,
) -> Result<Vec<VolumeEstimate>> {
    drifts
        .iter()
        .map(|g| {
            let spec = SausageSpec::new(d, r, t, seed).with_drift(g.clone());
            sausage_volume(&spec, paths, dt)
        })
        .collect()
}

/// Expected volume swept by `K^r` along one Brownian path (hit-or-miss).
pub fn compact_set_sweep_volume(
    set: &TargetSet,
    r: f64,
    t: f64,
    paths: usize,
    dt: f64,
    seed: u64,
) -> Result<VolumeEstimate> {
    if set.is_empty() {
        return Err(invalid("target set is empty"));
    }
    let spec = SausageSpec::new(set.d, r, t, seed).with_set(set.clone());
    sausage_volume_with(&spec, paths, dt, &SausageOptions::method(VolumeMethod::HitOrMiss))
}

/// Estimates on the grids `dt` and `dt / factor` built from the same fine paths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinementReport {
    pub coarse: VolumeEstimate,
    pub fine: VolumeEstimate,
    pub relative_difference: f64,
}

pub fn refinement_check(
    spec: &SausageSpec,
    paths: usize,
    dt: f64,
    factor: usize,
    opts: &SausageOptions,
) -> Result<RefinementReport> {
    spec.validate()?;
    if factor < 2 || paths == 0 {
        return Err(invalid("refinement needs factor >= 2 and at least one path"));
    }
    let method = opts.method.unwrap_or_else(|| spec.default_method());
    let d = spec.d;
    let fine_dt = dt / factor as f64;
    let steps = grid_steps(spec.t, dt);
    let mut coarse = Vec::with_capacity(paths);
    let mut fine = Vec::with_capacity(paths);
    for i in 0..paths {
        let key = TrialKey::new(spec.seed, i as u64);
        let g = spec.drift.grid_path(d, fine_dt, steps * factor, &key)?;
        let h = relative_path(&g, d, fine_dt, &mut key.stream(tag::PATH));
        let sub: Vec<f64> = h.chunks_exact(d).step_by(factor).flatten().copied().collect();
        let set = spec.enlarged_set.as_ref();
        coarse.push(path_volume(&sub, d, spec.r, set, method, opts, &mut key.stream(tag::SAMPLE))?);
        fine.push(path_volume(&h, d, spec.r, set, method, opts, &mut key.stream(tag::SAMPLE))?);
    }
    let coarse = VolumeEstimate::from_samples(&coarse, method, dt);
    let fine = VolumeEstimate::from_samples(&fine, method, fine_dt);
    Ok(RefinementReport {
        relative_difference: (fine.mean - coarse.mean).abs() / fine.mean,
        coarse,
        fine,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::DeterministicPath;
    use crate::coverage::{build_target, TargetKind};

    #[test]
    fn zero_horizon_is_one_ball() {
        for d in 1..=3 {
            let spec = SausageSpec::new(d, 0.7, 0.0, 1);
            let est = sausage_volume_with(&spec, 1, 0.1, &SausageOptions::default()).unwrap();
            if d == 1 {
                assert_eq!(est.mean, 1.4);
            } else {
                // hit-or-miss on a single ball: bounded by the box volume
                assert!(est.mean > 0.0 && est.mean <= (1.4f64).powi(d as i32));
            }
        }
        assert!((ball_volume(3, 2.0) - 32.0 * std::f64::consts::PI / 3.0).abs() < 1e-12);
    }

    #[test]
    fn exact_method_rejected_in_2d() {
        let spec = SausageSpec::new(2, 1.0, 0.1, 1);
        let r = sausage_volume_with(&spec, 2, 0.01, &SausageOptions::method(VolumeMethod::ExactMinMax1D));
        assert!(r.is_err());
    }

    #[test]
    fn shared_paths_give_identical_estimates_for_identical_drifts() {
        let est = drift_comparison(1, 0.5, 0.5, &[Trajectory::Stationary, Trajectory::Stationary], 50, 0.01, 3)
            .unwrap();
        assert_eq!(est[0], est[1]);
    }

    #[test]
    fn monotone_in_t_and_r_pathwise() {
        let base = SausageSpec::new(1, 0.5, 0.5, 11);
        let opts = SausageOptions::default();
        let short = per_path_volumes(&base, 40, 0.01, &opts).unwrap();
        let long = per_path_volumes(&SausageSpec { t: 1.0, ..base.clone() }, 40, 0.01, &opts).unwrap();
        let wide = per_path_volumes(&SausageSpec { r: 0.8, ..base.clone() }, 40, 0.01, &opts).unwrap();
        for i in 0..40 {
            assert!(long[i] >= short[i]);
            assert!(wide[i] >= short[i]);
        }
    }

    #[test]
    fn voxel_cap_refuses() {
        let spec = SausageSpec::new(3, 1.0, 1.0, 1);
        let opts = SausageOptions {
            method: Some(VolumeMethod::Voxel),
            voxel_resolution: Some(0.001),
            voxel_cap_bytes: 1024,
            ..SausageOptions::default()
        };
        let err = sausage_volume_with(&spec, 1, 0.1, &opts).unwrap_err();
        assert!(matches!(err, Error::CapExceeded(_)));
    }

    #[test]
    fn single_point_set_matches_plain_sausage() {
        let k = build_target(TargetKind::Point, 2, 1.0, 0.1).unwrap();
        let plain = sausage_volume(&SausageSpec::new(2, 1.0, 0.2, 5), 30, 0.01).unwrap();
        let swept = compact_set_sweep_volume(&k, 1.0, 0.2, 30, 0.01, 5).unwrap();
        assert_eq!(plain.mean, swept.mean);
    }

    #[test]
    fn empty_set_is_rejected() {
        let mut k = build_target(TargetKind::Point, 2, 1.0, 0.1).unwrap();
        k.points.clear();
        assert!(compact_set_sweep_volume(&k, 1.0, 0.2, 3, 0.01, 5).is_err());
    }

    #[test]
    fn linear_drift_path_is_shifted() {
        let g = Trajectory::Deterministic(DeterministicPath::linear(vec![1.0]));
        let est = drift_comparison(1, 0.5, 1.0, &[g], 200, 0.01, 2).unwrap();
        assert!(est[0].mean > 2.0);
    }
}

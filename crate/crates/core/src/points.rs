//! Poisson point sampling and Brownian motion of node ensembles.

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::{grid_steps, required_buffer_with, AxisBox, DomainSpec, SimConfig};
use crate::error::{invalid, Error, Result};
use crate::rng::{tag, StreamRng, TrialKey};
use crate::stats::{poisson_moment_test, PoissonMomentTest};

/// Positions of the nodes at one time slice, with the keys of their motion substreams.
#[derive(Debug, Clone)]
pub struct NodeEnsemble {
    pub time: f64,
    d: usize,
    positions: Vec<f64>,
    stream_ids: Vec<u64>,
    key: TrialKey,
    torus_side: Option<f64>,
    /// Per-node generators, created on the first step.
    rngs: Vec<StreamRng>,
}

impl NodeEnsemble {
    pub fn empty(d: usize, key: TrialKey) -> Self {
        Self::from_positions(d, Vec::new(), key)
    }

    /// Ensemble with explicit positions; stream ids are `0..n`.
    pub fn from_positions(d: usize, positions: Vec<f64>, key: TrialKey) -> Self {
        assert_eq!(positions.len() % d, 0, "flat positions must be a multiple of d");
        let n = positions.len() / d;
        Self {
            time: 0.0,
            d,
            positions,
            stream_ids: (0..n as u64).collect(),
            key,
            torus_side: None,
            rngs: Vec::new(),
        }
    }

    pub fn from_points(points: &[Vec<f64>], key: TrialKey) -> Self {
        let d = points.first().map_or(1, |p| p.len());
        Self::from_positions(d, points.iter().flatten().copied().collect(), key)
    }

    /// Makes coordinates periodic on `[0, side)^d`.
    pub fn on_torus(mut self, side: f64) -> Self {
        self.torus_side = Some(side);
        for x in self.positions.iter_mut() {
            *x = wrap(*x, side);
        }
        self
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.stream_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stream_ids.is_empty()
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.d..(i + 1) * self.d]
    }

    pub fn stream_ids(&self) -> &[u64] {
        &self.stream_ids
    }

    pub fn key(&self) -> TrialKey {
        self.key
    }

    pub fn torus_side(&self) -> Option<f64> {
        self.torus_side
    }

    /// Independent thinning: node `i` is kept iff its counter-based mark is
    /// below `keep`. Marks depend only on the stream id, so thinnings with
    /// `keep1 <= keep2` are nested and kept nodes retain their motion.
    pub fn thinned(&self, keep: f64) -> NodeEnsemble {
        let mut out = NodeEnsemble {
            time: self.time,
            d: self.d,
            positions: Vec::new(),
            stream_ids: Vec::new(),
            key: self.key,
            torus_side: self.torus_side,
            rngs: Vec::new(),
        };
        for (i, &id) in self.stream_ids.iter().enumerate() {
            if self.key.mark(id) < keep {
                out.positions.extend_from_slice(self.position(i));
                out.stream_ids.push(id);
                if !self.rngs.is_empty() {
                    out.rngs.push(self.rngs[i].clone());
                }
            }
        }
        out
    }

    /// Nodes inside `region`, as `(index, position)` pairs.
    pub fn indices_in(&self, region: &AxisBox) -> Vec<usize> {
        (0..self.len()).filter(|&i| region.contains(self.position(i))).collect()
    }

    pub fn count_in(&self, region: &AxisBox) -> usize {
        (0..self.len()).filter(|&i| region.contains(self.position(i))).count()
    }

    /// Sub-ensemble restricted to `region` (stream ids preserved).
    pub fn restricted(&self, region: &AxisBox) -> NodeEnsemble {
        let idx = self.indices_in(region);
        let mut out = NodeEnsemble {
            time: self.time,
            d: self.d,
            positions: Vec::with_capacity(idx.len() * self.d),
            stream_ids: Vec::with_capacity(idx.len()),
            key: self.key,
            torus_side: self.torus_side,
            rngs: Vec::new(),
        };
        for &i in &idx {
            out.positions.extend_from_slice(self.position(i));
            out.stream_ids.push(self.stream_ids[i]);
            if !self.rngs.is_empty() {
                out.rngs.push(self.rngs[i].clone());
            }
        }
        out
    }

    /// Advances every node by an independent `N(0, dt I)` increment drawn from
    /// its own substream, wrapping on the torus.
    pub fn step_in_place(&mut self, dt: f64) -> Result<()> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(invalid(format!("dt must be positive, got {dt}")));
        }
        if self.rngs.len() != self.stream_ids.len() {
            self.rngs = self.stream_ids.iter().map(|&id| self.key.node_stream(id)).collect();
        }
        let sd = dt.sqrt();
        let d = self.d;
        for (p, rng) in self.positions.chunks_exact_mut(d).zip(self.rngs.iter_mut()) {
            brownian_increment(p, rng, sd);
        }
        if let Some(side) = self.torus_side {
            for x in self.positions.iter_mut() {
                *x = wrap(*x, side);
            }
        }
        self.time += dt;
        Ok(())
    }

    /// Functional form of [`NodeEnsemble::step_in_place`].
    pub fn step_brownian(&self, dt: f64) -> Result<NodeEnsemble> {
        let mut next = self.clone();
        next.step_in_place(dt)?;
        Ok(next)
    }
}

/// Adds `sd * N(0, I)` to `p`, one draw per coordinate in order.
#[inline]
pub fn brownian_increment(p: &mut [f64], rng: &mut StreamRng, sd: f64) {
    for x in p.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *x += sd * z;
    }
}

#[inline]
pub fn wrap(x: f64, side: f64) -> f64 {
    let y = x.rem_euclid(side);
    if y >= side {
        0.0
    } else {
        y
    }
}

/// Grid path of a single node, produced lazily and bit-identical to what the
/// node experiences inside a co-evolved [`NodeEnsemble`] (no torus wrapping).
pub struct NodeWalk {
    pos: Vec<f64>,
    rng: StreamRng,
    sd: f64,
}

impl NodeWalk {
    pub fn new(key: &TrialKey, stream_id: u64, start: &[f64], dt: f64) -> Self {
        Self {
            pos: start.to_vec(),
            rng: key.node_stream(stream_id),
            sd: dt.sqrt(),
        }
    }

    pub fn position(&self) -> &[f64] {
        &self.pos
    }

    pub fn advance(&mut self) -> &[f64] {
        brownian_increment(&mut self.pos, &mut self.rng, self.sd);
        &self.pos
    }
}

/// Samples a homogeneous Poisson process of intensity `config.lambda` on
/// `region`; stream ids are `0..n`.
pub fn sample_poisson_points(config: &SimConfig, region: &AxisBox, key: &TrialKey) -> Result<NodeEnsemble> {
    sample_poisson_intensity(config.d, config.lambda, region, key, Some(&config.domain))
}

/// As [`sample_poisson_points`] with an explicit intensity and optional domain check.
pub fn sample_poisson_intensity(
    d: usize,
    lambda: f64,
    region: &AxisBox,
    key: &TrialKey,
    domain: Option<&DomainSpec>,
) -> Result<NodeEnsemble> {
    if region.dim() != d {
        return Err(invalid("region dimension does not match"));
    }
    let vol = region.volume();
    if !(vol > 0.0) || region.lo.iter().zip(&region.hi).any(|(l, h)| !(h > l)) {
        return Err(invalid("sampling region must have positive volume"));
    }
    if !(lambda >= 0.0) {
        return Err(invalid("intensity must be non-negative"));
    }
    if let Some(dom) = domain {
        let allowed = dom.sampling_region(d).inflated(1e-9);
        if !allowed.contains_box(region) {
            return Err(invalid("sampling region lies outside the domain"));
        }
    }
    let mut rng = key.stream(tag::POINTS);
    let mean = lambda * vol;
    let n = if mean > 0.0 {
        Poisson::new(mean)
            .map_err(|e| invalid(format!("poisson mean {mean}: {e}")))?
            .sample(&mut rng) as usize
    } else {
        0
    };
    let mut positions = Vec::with_capacity(n * d);
    for _ in 0..n {
        for a in 0..d {
            positions.push(rng.random_range(region.lo[a]..region.hi[a]));
        }
    }
    let mut ens = NodeEnsemble::from_positions(d, positions, *key);
    if let Some(DomainSpec::Torus { side }) = domain {
        ens = ens.on_torus(*side);
    }
    Ok(ens)
}

/// Count statistics of the evolved process in a probe box.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StationarityReport {
    pub t: f64,
    pub reps: usize,
    pub probe_volume: f64,
    pub moments: PoissonMomentTest,
    pub pass: bool,
}

/// Checks that the process evolved to time `t` is still Poisson of the same
/// intensity inside `probe`, at 3σ over `reps` independent replicas.
pub fn stationarity_check(config: &SimConfig, t: f64, reps: usize, probe: &AxisBox) -> Result<StationarityReport> {
    config.validate()?;
    if reps == 0 {
        return Err(invalid("need at least one replica"));
    }
    if let DomainSpec::BoxedPlane { buffer, .. } = config.domain {
        let need = required_buffer_with(config.r, t, 1.0 / (reps as f64 * 1e6));
        if buffer + 1e-9 < need {
            return Err(Error::InsufficientBuffer { have: buffer, need });
        }
    }
    if !config.domain.window(config.d).inflated(1e-9).contains_box(probe) {
        return Err(invalid("probe box must lie inside the observation window"));
    }
    let steps = if t > 0.0 { grid_steps(t, config.dt) } else { 0 };
    let region = config.domain.sampling_region(config.d);
    let counts: Vec<f64> = (0..reps)
        .map(|rep| -> Result<f64> {
            let key = TrialKey::new(config.seed, rep as u64);
            let mut ens = sample_poisson_points(config, &region, &key)?;
            for _ in 0..steps {
                ens.step_in_place(config.dt)?;
            }
            Ok(ens.count_in(probe) as f64)
        })
        .collect::<Result<_>>()?;
    let expected = config.lambda * probe.volume();
    let moments = poisson_moment_test(&counts, expected);
    Ok(StationarityReport {
        t: steps as f64 * config.dt,
        reps,
        probe_volume: probe.volume(),
        pass: moments.passes(3.0),
        moments,
    })
}

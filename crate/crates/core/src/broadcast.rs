//! Message broadcast on the torus: at every integer step each informed node
//! informs its whole connected component; nodes move by Brownian motion in
//! between.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{dist2, AxisBox, DomainSpec, MAX_DIM};
use crate::error::{invalid, Result};
use crate::graph::GeometricGraph;
use crate::percolation::require_supercritical;
use crate::points::{sample_poisson_intensity, NodeEnsemble};
use crate::rng::{tag, TrialKey};
use crate::stats::{linear_regression, median, median_bootstrap_se, LinearFit};

/// Motion sub-steps per unit time.
pub const SUBSTEPS: usize = 10;

/// Trials not finished after this many steps are reported as unfinished.
pub const DEFAULT_MAX_STEPS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BroadcastState {
    pub informed: Vec<bool>,
    pub t: usize,
    pub origin: usize,
}

impl BroadcastState {
    pub fn new(nodes: usize, origin: usize) -> Self {
        let mut informed = vec![false; nodes];
        informed[origin] = true;
        Self { informed, t: 0, origin }
    }

    pub fn informed_count(&self) -> usize {
        self.informed.iter().filter(|&&b| b).count()
    }

    pub fn all_informed(&self) -> bool {
        self.informed.iter().all(|&b| b)
    }

    /// Informs every component that holds an informed node.
    pub fn exchange(&mut self, graph: &GeometricGraph) {
        let mut hot = vec![false; graph.component_count()];
        for (i, &b) in self.informed.iter().enumerate() {
            if b {
                hot[graph.label(i)] = true;
            }
        }
        for (i, b) in self.informed.iter_mut().enumerate() {
            *b = hot[graph.label(i)];
        }
    }

    /// Whether the informed set is a union of whole components of `graph`.
    pub fn is_component_closed(&self, graph: &GeometricGraph) -> bool {
        let mut seen: Vec<Option<bool>> = vec![None; graph.component_count()];
        self.informed.iter().enumerate().all(|(i, &b)| {
            let c = graph.label(i);
            *seen[c].get_or_insert(b) == b
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BroadcastTrial {
    pub trial: u64,
    pub nodes: usize,
    /// `None` if the step cap was reached first.
    pub t_broad: Option<usize>,
    /// Zero-node samples discarded before this trial.
    pub resamples: usize,
    /// Consecutive steps that both had a giant component.
    pub giant_pairs: usize,
    /// Of those, pairs whose giant components share a node.
    pub giant_overlaps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BroadcastSample {
    pub n: f64,
    pub lambda: f64,
    pub side: f64,
    pub trials: Vec<BroadcastTrial>,
}

impl BroadcastSample {
    pub fn finished(&self) -> Vec<f64> {
        self.trials.iter().filter_map(|t| t.t_broad.map(|x| x as f64)).collect()
    }

    pub fn all_finished(&self) -> bool {
        self.trials.iter().all(|t| t.t_broad.is_some())
    }

    /// Median over trials, unfinished trials counted as infinite.
    pub fn median(&self) -> f64 {
        median(&self.times_or_inf())
    }

    fn times_or_inf(&self) -> Vec<f64> {
        self.trials
            .iter()
            .map(|t| t.t_broad.map_or(f64::INFINITY, |x| x as f64))
            .collect()
    }

    pub fn median_se(&self, seed: u64) -> f64 {
        let mut rng = TrialKey::new(seed, u64::MAX).stream(tag::BOOTSTRAP);
        median_bootstrap_se(&self.times_or_inf(), 200, &mut rng)
    }

    /// Share of consecutive supercritical step pairs whose giants overlap.
    pub fn giant_overlap_rate(&self) -> f64 {
        let pairs: usize = self.trials.iter().map(|t| t.giant_pairs).sum();
        let hits: usize = self.trials.iter().map(|t| t.giant_overlaps).sum();
        if pairs == 0 {
            1.0
        } else {
            hits as f64 / pairs as f64
        }
    }

    pub fn resamples(&self) -> usize {
        self.trials.iter().map(|t| t.resamples).sum()
    }
}

/// Node nearest the torus centre (smallest index on ties).
pub fn central_node(ens: &NodeEnsemble, side: f64) -> Option<usize> {
    let c = [side / 2.0; MAX_DIM];
    let d = ens.dim();
    (0..ens.len()).min_by(|&a, &b| {
        dist2(ens.position(a), &c[..d])
            .total_cmp(&dist2(ens.position(b), &c[..d]))
            .then(a.cmp(&b))
    })
}

fn largest_giant(graph: &GeometricGraph) -> Result<Option<usize>> {
    Ok(graph.giant_component()?.component_id)
}

/// Runs one broadcast on an already sampled torus ensemble.
pub fn run_broadcast(mut ens: NodeEnsemble, r: f64, max_steps: usize) -> Result<(BroadcastTrial, BroadcastState)> {
    let side = ens.torus_side().ok_or_else(|| invalid("broadcast runs on the torus"))?;
    let origin = central_node(&ens, side).ok_or_else(|| invalid("broadcast needs at least one node"))?;
    let mut state = BroadcastState::new(ens.len(), origin);
    let mut out = BroadcastTrial {
        trial: ens.key().trial,
        nodes: ens.len(),
        t_broad: None,
        resamples: 0,
        giant_pairs: 0,
        giant_overlaps: 0,
    };
    let mut prev_giant: Option<Vec<bool>> = None;
    for t in 0..=max_steps {
        if t > 0 {
            for _ in 0..SUBSTEPS {
                ens.step_in_place(1.0 / SUBSTEPS as f64)?;
            }
        }
        state.t = t;
        let graph = GeometricGraph::build(&ens, r)?;
        state.exchange(&graph);
        debug_assert!(state.is_component_closed(&graph));
        let giant = largest_giant(&graph)?.map(|c| (0..ens.len()).map(|i| graph.label(i) == c).collect::<Vec<_>>());
        if let (Some(a), Some(b)) = (&prev_giant, &giant) {
            out.giant_pairs += 1;
            if a.iter().zip(b).any(|(x, y)| *x && *y) {
                out.giant_overlaps += 1;
            }
        }
        prev_giant = giant;
        if state.all_informed() {
            out.t_broad = Some(t);
            break;
        }
    }
    Ok((out, state))
}

/// Poisson sample with `n` nodes in expectation on the torus of side
/// `(n/λ)^{1/d}`; empty samples are redrawn.
pub fn torus_sample(n: f64, lambda: f64, d: usize, key: &TrialKey) -> Result<(NodeEnsemble, usize)> {
    let side = (n / lambda).powf(1.0 / d as f64);
    let dom = DomainSpec::torus(side);
    let region = AxisBox::new(vec![0.0; d], vec![side; d]);
    let mut attempt = 0usize;
    loop {
        let k = if attempt == 0 { *key } else { key.child(tag::RESAMPLE, attempt as u64) };
        let ens = sample_poisson_intensity(d, lambda, &region, &k, Some(&dom))?;
        if !ens.is_empty() {
            return Ok((ens, attempt));
        }
        attempt += 1;
        if attempt > 1000 {
            return Err(invalid("could not draw a non-empty sample"));
        }
    }
}

/// `trials` independent broadcasts; with `lambda_c` given, intensities below
/// the supercritical margin are refused.
#[allow(clippy::too_many_arguments)]
pub fn simulate_broadcast(
    n: f64,
    lambda: f64,
    r: f64,
    d: usize,
    trials: usize,
    seed: u64,
    lambda_c: Option<f64>,
    max_steps: usize,
) -> Result<BroadcastSample> {
    if !(n > 0.0 && lambda > 0.0 && r > 0.0) || !(1..=MAX_DIM).contains(&d) || trials == 0 {
        return Err(invalid("broadcast needs positive n, lambda, r, d in range and trials"));
    }
    if let Some(lc) = lambda_c {
        require_supercritical(lambda, lc)?;
    }
    let out: Vec<BroadcastTrial> = (0..trials as u64)
        .into_par_iter()
        .map(|i| {
            let (ens, resamples) = torus_sample(n, lambda, d, &TrialKey::new(seed, i))?;
            let (mut t, _) = run_broadcast(ens, r, max_steps)?;
            t.trial = i;
            t.resamples = resamples;
            Ok(t)
        })
        .collect::<Result<_>>()?;
    Ok(BroadcastSample {
        n,
        lambda,
        side: (n / lambda).powf(1.0 / d as f64),
        trials: out,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n: f64,
    pub median: f64,
    pub median_se: f64,
    pub finished: usize,
    pub trials: usize,
    pub giant_overlap_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BroadcastStudy {
    pub rows: Vec<ScalingRow>,
    /// Median against `log n`.
    pub fit: LinearFit,
    /// For every pair `(n, 4n)` in the list: `median(4n) <= 2 median(n)` at 3σ.
    pub sublinear: bool,
}

pub fn broadcast_scaling_study(
    ns: &[f64],
    lambda: f64,
    r: f64,
    d: usize,
    trials: usize,
    seed: u64,
    lambda_c: f64,
) -> Result<BroadcastStudy> {
    if ns.len() < 3 {
        return Err(invalid("scaling study needs at least 3 values of n"));
    }
    require_supercritical(lambda, lambda_c)?;
    let mut rows = Vec::with_capacity(ns.len());
    for (j, &n) in ns.iter().enumerate() {
        let s = simulate_broadcast(n, lambda, r, d, trials, seed.wrapping_add(j as u64), Some(lambda_c), DEFAULT_MAX_STEPS)?;
        rows.push(ScalingRow {
            n,
            median: s.median(),
            median_se: s.median_se(seed),
            finished: s.finished().len(),
            trials,
            giant_overlap_rate: s.giant_overlap_rate(),
        });
    }
    let x: Vec<f64> = rows.iter().map(|r| r.n.ln()).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.median).collect();
    let mut sublinear = true;
    for a in &rows {
        for b in &rows {
            if ((b.n / a.n) - 4.0).abs() < 1e-9 {
                let se = (b.median_se.powi(2) + 4.0 * a.median_se.powi(2)).sqrt();
                sublinear &= b.median <= 2.0 * a.median + 3.0 * se;
            }
        }
    }
    Ok(BroadcastStudy {
        fit: linear_regression(&x, &y),
        rows,
        sublinear,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_node_broadcasts_at_zero() {
        let ens = NodeEnsemble::from_positions(2, vec![1.0, 1.0], TrialKey::new(1, 0)).on_torus(3.0);
        let (t, _) = run_broadcast(ens, 1.0, 10).unwrap();
        assert_eq!(t.t_broad, Some(0));
    }

    #[test]
    fn connected_start_broadcasts_at_zero() {
        let pts: Vec<f64> = (0..10).flat_map(|i| [0.5 + 0.5 * i as f64, 2.0]).collect();
        let ens = NodeEnsemble::from_positions(2, pts, TrialKey::new(1, 0)).on_torus(6.0);
        let (t, st) = run_broadcast(ens, 1.0, 10).unwrap();
        assert_eq!(t.t_broad, Some(0));
        assert!(st.all_informed());
    }

    #[test]
    fn exchange_is_closed_and_monotone() {
        let (ens, _) = torus_sample(200.0, 1.0, 2, &TrialKey::new(4, 0)).unwrap();
        let g = GeometricGraph::build(&ens, 1.0).unwrap();
        let mut st = BroadcastState::new(ens.len(), 0);
        st.exchange(&g);
        assert!(st.is_component_closed(&g));
        assert!(st.informed[0]);
        let before = st.informed_count();
        st.exchange(&g);
        assert_eq!(before, st.informed_count());
    }

    #[test]
    fn dense_broadcast_finishes() {
        let s = simulate_broadcast(200.0, 4.0, 1.0, 2, 5, 3, Some(1.44), 500).unwrap();
        assert!(s.all_finished());
        assert!(s.median() <= 3.0);
    }

    #[test]
    fn subcritical_is_refused() {
        let err = broadcast_scaling_study(&[100.0, 400.0, 1600.0], 1.0, 1.0, 2, 2, 1, 1.44).unwrap_err();
        assert!(matches!(err, crate::Error::Subcritical { .. }));
    }
}

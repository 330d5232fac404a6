//! Radius-`r` geometric graphs over node ensembles and component queries.

mod cell_grid;
mod union_find;

pub use cell_grid::CellGrid;
pub use union_find::UnionFind;

use serde::{Deserialize, Serialize};

use crate::config::AxisBox;
use crate::error::{invalid, Error, Result};
use crate::points::NodeEnsemble;

/// Component structure of the graph joining nodes at distance `<= r`.
/// Adjacency is implicit in the cell list and never stored as an edge list.
#[derive(Debug, Clone)]
pub struct GeometricGraph {
    d: usize,
    r: f64,
    torus_side: Option<f64>,
    positions: Vec<f64>,
    cells: CellGrid,
    labels: Vec<u32>,
    sizes: Vec<usize>,
}

/// Outcome of a crossing or giant-component query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossingReport {
    pub exists: bool,
    pub unique: bool,
    pub component_id: Option<usize>,
    pub member_count: usize,
}

impl CrossingReport {
    fn none() -> Self {
        Self {
            exists: false,
            unique: false,
            component_id: None,
            member_count: 0,
        }
    }

    fn from_candidates(candidates: &[usize], sizes: &[usize]) -> Self {
        match pick_largest(candidates.iter().copied(), sizes) {
            None => Self::none(),
            Some(c) => Self {
                exists: true,
                unique: candidates.len() == 1,
                component_id: Some(c),
                member_count: sizes[c],
            },
        }
    }
}

/// Largest component, ties broken by smallest id.
fn pick_largest(ids: impl Iterator<Item = usize>, sizes: &[usize]) -> Option<usize> {
    ids.fold(None, |best: Option<usize>, c| match best {
        None => Some(c),
        Some(b) if sizes[c] > sizes[b] || (sizes[c] == sizes[b] && c < b) => Some(c),
        keep => keep,
    })
}

#[inline]
fn metric2(a: &[f64], b: &[f64], torus: Option<f64>) -> f64 {
    match torus {
        None => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum(),
        Some(l) => a
            .iter()
            .zip(b)
            .map(|(x, y)| {
                let dx = (x - y).abs();
                let dx = dx.min(l - dx);
                dx * dx
            })
            .sum(),
    }
}

impl GeometricGraph {
    /// Labels components with union-find over the 3^d cell neighbourhood of every node.
    pub fn build(ensemble: &NodeEnsemble, r: f64) -> Result<Self> {
        if !(r > 0.0 && r.is_finite()) {
            return Err(invalid(format!("radius must be positive, got {r}")));
        }
        let d = ensemble.dim();
        let torus = ensemble.torus_side();
        let positions = ensemble.positions().to_vec();
        let cells = CellGrid::build(&positions, d, r, torus);
        let n = ensemble.len();
        let mut uf = UnionFind::new(n);
        let r2 = r * r;
        for i in 0..n {
            let p = &positions[i * d..(i + 1) * d];
            cells.for_each_near(p, |j| {
                let j = j as usize;
                if j > i && metric2(p, &positions[j * d..(j + 1) * d], torus) <= r2 {
                    uf.union(i as u32, j as u32);
                }
            });
        }
        let (labels, sizes) = uf.labels();
        Ok(Self {
            d,
            r,
            torus_side: torus,
            positions,
            cells,
            labels,
            sizes,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn radius(&self) -> f64 {
        self.r
    }

    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    pub fn component_count(&self) -> usize {
        self.sizes.len()
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label(&self, node: usize) -> usize {
        self.labels[node] as usize
    }

    pub fn component_size(&self, id: usize) -> usize {
        self.sizes[id]
    }

    pub fn component_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.d..(i + 1) * self.d]
    }

    /// Distance in the graph's metric (wrapped on the torus).
    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        metric2(a, b, self.torus_side).sqrt()
    }

    /// Node sets of every component, in label order.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.sizes.len()];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l as usize].push(i);
        }
        out
    }

    /// Nodes within `r` of `point`.
    pub fn nodes_near(&self, point: &[f64]) -> Vec<usize> {
        let q: Vec<f64> = match self.torus_side {
            Some(l) => point.iter().map(|&x| crate::points::wrap(x, l)).collect(),
            None => point.to_vec(),
        };
        let r2 = self.r * self.r;
        let mut out = Vec::new();
        self.cells.for_each_near(&q, |j| {
            let j = j as usize;
            if metric2(&q, self.position(j), self.torus_side) <= r2 {
                out.push(j);
            }
        });
        out.sort_unstable();
        out
    }

    /// Component holding a node within `r` of `point`; the largest such
    /// component if several, ties to the smallest id.
    pub fn component_of_target(&self, point: &[f64]) -> Option<usize> {
        let near = self.nodes_near(point);
        pick_largest(near.into_iter().map(|j| self.labels[j] as usize), &self.sizes)
    }

    /// Per-component bitmask of touched faces of the cube `Q_side` centred at
    /// the origin: bit `2a` for the lower face of axis `a`, `2a+1` for the upper.
    /// A node touches a face when it lies in the cube within `r` of the face plane.
    pub fn face_masks(&self, cube_side: f64) -> Vec<u8> {
        let half = cube_side / 2.0;
        let cube = AxisBox::centered_cube(self.d, cube_side);
        let mut masks = vec![0u8; self.sizes.len()];
        for i in 0..self.node_count() {
            let p = self.position(i);
            if !cube.contains(p) {
                continue;
            }
            let mut m = 0u8;
            for a in 0..self.d {
                if p[a] <= -half + self.r {
                    m |= 1 << (2 * a);
                }
                if p[a] >= half - self.r {
                    m |= 1 << (2 * a + 1);
                }
            }
            masks[self.labels[i] as usize] |= m;
        }
        masks
    }

    /// Ids of all components that connect every pair of opposite faces of `Q_side`.
    pub fn crossing_components(&self, cube_side: f64) -> Vec<usize> {
        let full = ((1u16 << (2 * self.d)) - 1) as u8;
        self.face_masks(cube_side)
            .iter()
            .enumerate()
            .filter(|(_, &m)| m == full)
            .map(|(c, _)| c)
            .collect()
    }

    pub fn crossing_component(&self, cube_side: f64) -> CrossingReport {
        CrossingReport::from_candidates(&self.crossing_components(cube_side), &self.sizes)
    }

    /// Components whose torus diameter exceeds a quarter of the side.
    pub fn giant_components(&self) -> Result<Vec<usize>> {
        let side = self.torus_side.ok_or(Error::InvalidDomain { expected: "torus" })?;
        let threshold = side / 4.0;
        let mut out = Vec::new();
        for (c, members) in self.components().iter().enumerate() {
            if members.len() >= 2 && self.diameter_exceeds(members, threshold) {
                out.push(c);
            }
        }
        Ok(out)
    }

    pub fn giant_component(&self) -> Result<CrossingReport> {
        Ok(CrossingReport::from_candidates(&self.giant_components()?, &self.sizes))
    }

    fn diameter_exceeds(&self, members: &[usize], threshold: f64) -> bool {
        let anchor = self.position(members[0]);
        let mut far_from_anchor = 0.0f64;
        for &m in members {
            let dist = self.distance(anchor, self.position(m));
            if dist > threshold {
                return true;
            }
            far_from_anchor = far_from_anchor.max(dist);
        }
        // every member is within `far` of the anchor, so the diameter is at most 2 * far
        if 2.0 * far_from_anchor <= threshold {
            return false;
        }
        members.iter().enumerate().any(|(k, &a)| {
            members[k + 1..]
                .iter()
                .any(|&b| self.distance(self.position(a), self.position(b)) > threshold)
        })
    }
}

/// Convenience wrapper for [`GeometricGraph::build`].
pub fn build_graph(ensemble: &NodeEnsemble, r: f64) -> Result<GeometricGraph> {
    GeometricGraph::build(ensemble, r)
}

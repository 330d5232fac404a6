//! Discretised compact target sets and fractal-dimension diagnostics.

use serde::{Deserialize, Serialize};

use crate::config::{dist2, AxisBox, MAX_DIM};
use crate::error::{invalid, Error, Result};
use crate::graph::CellGrid;

/// Default cap on the number of net points of a target set.
pub const DEFAULT_NET_CAP: usize = 20_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "level")]
pub enum TargetKind {
    Point,
    /// Segment of length `R` along the first axis, centred at the origin.
    Segment,
    /// Cube of side `R` centred at the origin.
    Cube,
    /// Closed ball of radius `R` centred at the origin.
    Ball,
    /// `k`-th middle-thirds iterate of `[-R/2, R/2]`, raised to the `d`-th power.
    CantorIterate(u32),
    Custom,
}

impl TargetKind {
    pub fn name(&self) -> String {
        match self {
            TargetKind::Point => "point".into(),
            TargetKind::Segment => "segment".into(),
            TargetKind::Cube => "cube".into(),
            TargetKind::Ball => "ball".into(),
            TargetKind::CantorIterate(k) => format!("cantor{k}"),
            TargetKind::Custom => "custom".into(),
        }
    }

    /// Minkowski dimension of the limiting set in `d` dimensions.
    pub fn dimension(&self, d: usize) -> Option<f64> {
        match self {
            TargetKind::Point => Some(0.0),
            TargetKind::Segment => Some(1.0),
            TargetKind::Cube | TargetKind::Ball => Some(d as f64),
            TargetKind::CantorIterate(_) => Some(d as f64 * 2f64.ln() / 3f64.ln()),
            TargetKind::Custom => None,
        }
    }
}

/// An ε-net of the scaled set `R·A`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TargetSet {
    pub kind: TargetKind,
    pub d: usize,
    /// Flat `n * d` array of net points.
    pub points: Vec<f64>,
    /// Requested net resolution.
    pub epsilon: f64,
    /// Guaranteed covering radius of the net (`<= epsilon`; 0 when the net is the set itself).
    pub net_radius: f64,
    pub scale: f64,
}

impl TargetSet {
    pub fn len(&self) -> usize {
        self.points.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.d..(i + 1) * self.d]
    }

    pub fn bounding_box(&self) -> Option<AxisBox> {
        AxisBox::bounding(&self.points, self.d)
    }

    /// A single point at `x`.
    pub fn point_at(x: Vec<f64>) -> Self {
        TargetSet {
            kind: TargetKind::Point,
            d: x.len(),
            points: x,
            epsilon: 0.0,
            net_radius: 0.0,
            scale: 1.0,
        }
    }

    /// User-supplied net with a declared covering radius.
    pub fn custom(d: usize, points: Vec<f64>, net_radius: f64) -> Result<Self> {
        if points.is_empty() || !points.len().is_multiple_of(d) {
            return Err(invalid("custom target needs a non-empty flat list of d-vectors"));
        }
        Ok(TargetSet {
            kind: TargetKind::Custom,
            d,
            points,
            epsilon: net_radius,
            net_radius,
            scale: 1.0,
        })
    }

    /// Cell list over the net points for radius queries up to `radius`.
    pub fn index(&self, radius: f64) -> CellGrid {
        CellGrid::build(&self.points, self.d, radius.max(1e-12), None)
    }

    /// Whether some net point lies within `radius` of `p`.
    pub fn within(&self, grid: &CellGrid, p: &[f64], radius: f64) -> bool {
        let r2 = radius * radius;
        grid.any_near(p, |i| dist2(p, self.point(i as usize)) <= r2)
    }
}

fn net_1d_endpoints(lo: f64, hi: f64, epsilon: f64) -> (Vec<f64>, f64) {
    let len = hi - lo;
    if len <= 0.0 {
        return (vec![lo], 0.0);
    }
    let intervals = (len / (2.0 * epsilon) - 1e-12).ceil().max(1.0) as usize;
    let step = len / intervals as f64;
    ((0..=intervals).map(|i| lo + i as f64 * step).collect(), step / 2.0)
}

fn net_1d_midpoints(lo: f64, hi: f64, epsilon: f64) -> (Vec<f64>, f64) {
    let len = hi - lo;
    let pieces = (len / (2.0 * epsilon) - 1e-12).ceil().max(1.0) as usize;
    let step = len / pieces as f64;
    ((0..pieces).map(|i| lo + (i as f64 + 0.5) * step).collect(), step / 2.0)
}

/// Intervals of the `level`-th middle-thirds iterate of `[lo, lo + len]`.
pub fn cantor_intervals(lo: f64, len: f64, level: u32) -> Vec<(f64, f64)> {
    let mut cur = vec![(lo, lo + len)];
    for _ in 0..level {
        cur = cur
            .into_iter()
            .flat_map(|(a, b)| {
                let third = (b - a) / 3.0;
                [(a, a + third), (b - third, b)]
            })
            .collect();
    }
    cur
}

fn product_net(axes: &[Vec<f64>], d: usize, cap: usize) -> Result<Vec<f64>> {
    let total = axes.iter().try_fold(1usize, |acc, a| acc.checked_mul(a.len()));
    match total {
        Some(t) if t <= cap => {}
        _ => {
            return Err(Error::CapExceeded(format!(
                "net would exceed {cap} points; increase epsilon or lower the level"
            )))
        }
    }
    let total = total.unwrap_or(0);
    let mut out = Vec::with_capacity(total * d);
    let mut idx = [0usize; MAX_DIM];
    for _ in 0..total {
        for a in 0..d {
            out.push(axes[a][idx[a]]);
        }
        for a in 0..d {
            idx[a] += 1;
            if idx[a] < axes[a].len() {
                break;
            }
            idx[a] = 0;
        }
    }
    Ok(out)
}

/// Builds an ε-net of `R·A` for the given kind. Every point of the set lies
/// within `epsilon` of a net point and every net point lies in the set.
pub fn build_target(kind: TargetKind, d: usize, scale: f64, epsilon: f64) -> Result<TargetSet> {
    build_target_capped(kind, d, scale, epsilon, DEFAULT_NET_CAP)
}

pub fn build_target_capped(kind: TargetKind, d: usize, scale: f64, epsilon: f64, cap: usize) -> Result<TargetSet> {
    if !(1..=MAX_DIM).contains(&d) {
        return Err(invalid(format!("dimension must be in 1..={MAX_DIM}")));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(invalid("net resolution epsilon must be positive"));
    }
    if !(scale >= 0.0 && scale.is_finite()) {
        return Err(invalid("scale must be non-negative"));
    }
    let (points, net_radius) = match kind {
        TargetKind::Point => (vec![0.0; d], 0.0),
        TargetKind::Custom => return Err(invalid("use TargetSet::custom for custom nets")),
        TargetKind::Segment => {
            let (xs, rad) = net_1d_endpoints(-scale / 2.0, scale / 2.0, epsilon);
            if xs.len() > cap {
                return Err(Error::CapExceeded(format!("segment net of {} points", xs.len())));
            }
            let mut pts = Vec::with_capacity(xs.len() * d);
            for x in xs {
                pts.push(x);
                pts.extend(std::iter::repeat_n(0.0, d - 1));
            }
            (pts, rad)
        }
        TargetKind::Cube => {
            let (xs, rad) = net_1d_endpoints(-scale / 2.0, scale / 2.0, epsilon / (d as f64).sqrt());
            let axes = vec![xs; d];
            (product_net(&axes, d, cap)?, rad * (d as f64).sqrt())
        }
        TargetKind::Ball => {
            // grid nodes within R + half-diagonal, projected onto the ball
            let s = 2.0 * epsilon / (d as f64).sqrt();
            let reach = scale + s * (d as f64).sqrt() / 2.0;
            let m = (reach / s).ceil() as i64;
            let axis: Vec<f64> = (-m..=m).map(|i| i as f64 * s).collect();
            let axes = vec![axis; d];
            let grid = product_net(&axes, d, cap.saturating_mul(4))?;
            let mut pts = Vec::new();
            for p in grid.chunks_exact(d) {
                let n = p.iter().map(|x| x * x).sum::<f64>().sqrt();
                if n <= reach {
                    let f = if n > scale { scale / n } else { 1.0 };
                    pts.extend(p.iter().map(|x| x * f));
                }
            }
            if pts.len() / d > cap {
                return Err(Error::CapExceeded(format!("ball net of {} points", pts.len() / d)));
            }
            (pts, epsilon)
        }
        TargetKind::CantorIterate(level) => {
            let pieces = 2f64.powi(level as i32);
            if pieces.powi(d as i32) > cap as f64 {
                return Err(Error::CapExceeded(format!(
                    "Cantor level {level} in d={d} needs at least {} net points",
                    pieces.powi(d as i32)
                )));
            }
            let mut axis = Vec::new();
            let mut rad: f64 = 0.0;
            for (a, b) in cantor_intervals(-scale / 2.0, scale, level) {
                let (xs, r) = net_1d_midpoints(a, b, epsilon);
                axis.extend(xs);
                rad = rad.max(r);
            }
            let axes = vec![axis; d];
            (product_net(&axes, d, cap)?, rad * (d as f64).sqrt())
        }
    };
    Ok(TargetSet {
        kind,
        d,
        points,
        epsilon,
        net_radius,
        scale,
    })
}

/// Number of grid boxes of side `box_side` (anchored at `origin`) that contain a point.
pub fn occupied_boxes(points: &[f64], d: usize, origin: &[f64], box_side: f64) -> usize {
    let mut keys: Vec<[i64; MAX_DIM]> = points
        .chunks_exact(d)
        .map(|p| {
            let mut k = [0i64; MAX_DIM];
            for a in 0..d {
                k[a] = ((p[a] - origin[a]) / box_side).floor() as i64;
            }
            k
        })
        .collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

/// Box-counting estimate of the Minkowski dimension: slope of
/// `log N(s)` against `log(1/s)` over the given box sides.
pub fn box_counting_dimension(points: &[f64], d: usize, origin: &[f64], sides: &[f64]) -> (f64, Vec<usize>) {
    let counts: Vec<usize> = sides.iter().map(|&s| occupied_boxes(points, d, origin, s)).collect();
    let x: Vec<f64> = sides.iter().map(|s| (1.0 / s).ln()).collect();
    let y: Vec<f64> = counts.iter().map(|&c| (c as f64).ln()).collect();
    (crate::stats::linear_regression(&x, &y).slope, counts)
}

/// Greedy packing count: size of a maximal subset of net points with pairwise
/// distances above `2 * eps` (disjoint `eps`-balls). Lower-bounds `K(A, eps)`.
pub fn packing_number(points: &[f64], d: usize, eps: f64) -> usize {
    let n = points.len() / d;
    let grid = CellGrid::build(points, d, 2.0 * eps, None);
    let mut chosen = vec![false; n];
    let mut count = 0;
    let lim = 4.0 * eps * eps;
    for i in 0..n {
        let p = &points[i * d..(i + 1) * d];
        let mut blocked = false;
        grid.for_each_near(p, |j| {
            let j = j as usize;
            if chosen[j] && dist2(p, &points[j * d..(j + 1) * d]) <= lim {
                blocked = true;
            }
        });
        if !blocked {
            chosen[i] = true;
            count += 1;
        }
    }
    count
}

//! Uniform cell list over a point set, stored in compressed (CSR) form.

const MAX_D: usize = 4;

/// Bucketing of points into cubic cells of side at least `min_side`, so that
/// every point within `min_side` of a query lies in the query's 3^d neighbourhood.
#[derive(Debug, Clone)]
pub struct CellGrid {
    d: usize,
    origin: [f64; MAX_D],
    side: f64,
    dims: [usize; MAX_D],
    periodic: bool,
    starts: Vec<u32>,
    items: Vec<u32>,
}

impl CellGrid {
    /// Builds the grid over a flat `n * d` array. With `period = Some(L)` the
    /// coordinates are taken on the torus `[0, L)^d`.
    pub fn build(points: &[f64], d: usize, min_side: f64, period: Option<f64>) -> Self {
        assert!((1..=MAX_D).contains(&d), "cell grid supports 1..=4 dimensions");
        assert!(min_side > 0.0);
        let n = points.len() / d;
        let mut origin = [0.0; MAX_D];
        let mut dims = [1usize; MAX_D];
        let side;
        match period {
            Some(l) => {
                let m = ((l / min_side).floor() as usize).max(1);
                side = l / m as f64;
                for a in 0..d {
                    dims[a] = m;
                }
            }
            None => {
                let mut lo = [f64::INFINITY; MAX_D];
                let mut hi = [f64::NEG_INFINITY; MAX_D];
                for p in points.chunks_exact(d) {
                    for a in 0..d {
                        lo[a] = lo[a].min(p[a]);
                        hi[a] = hi[a].max(p[a]);
                    }
                }
                if n == 0 {
                    lo = [0.0; MAX_D];
                    hi = [0.0; MAX_D];
                }
                // Coarsen until the dense array is proportionate to the point count.
                let cap = 8 * n + 4096;
                let mut s = min_side;
                loop {
                    let total: f64 = (0..d).map(|a| ((hi[a] - lo[a]) / s).floor() + 1.0).product();
                    if total <= cap as f64 {
                        break;
                    }
                    s *= 1.5;
                }
                side = s;
                for a in 0..d {
                    origin[a] = lo[a];
                    dims[a] = ((hi[a] - lo[a]) / s).floor() as usize + 1;
                }
            }
        }
        let mut grid = CellGrid {
            d,
            origin,
            side,
            dims,
            periodic: period.is_some(),
            starts: Vec::new(),
            items: Vec::new(),
        };
        let ncells: usize = dims[..d].iter().product();
        let cell_of: Vec<u32> = points
            .chunks_exact(d)
            .map(|p| grid.linear(&grid.coords(p)) as u32)
            .collect();
        let mut counts = vec![0u32; ncells + 1];
        for &c in &cell_of {
            counts[c as usize + 1] += 1;
        }
        for i in 0..ncells {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut items = vec![0u32; n];
        for (i, &c) in cell_of.iter().enumerate() {
            items[fill[c as usize] as usize] = i as u32;
            fill[c as usize] += 1;
        }
        grid.starts = counts;
        grid.items = items;
        grid
    }

    pub fn cell_side(&self) -> f64 {
        self.side
    }

    fn coords(&self, p: &[f64]) -> [i64; MAX_D] {
        let mut c = [0i64; MAX_D];
        for a in 0..self.d {
            let k = ((p[a] - self.origin[a]) / self.side).floor() as i64;
            c[a] = if self.periodic {
                k.rem_euclid(self.dims[a] as i64)
            } else {
                k.clamp(0, self.dims[a] as i64 - 1)
            };
        }
        c
    }

    fn linear(&self, c: &[i64; MAX_D]) -> usize {
        let mut idx = 0usize;
        for a in (0..self.d).rev() {
            idx = idx * self.dims[a] + c[a] as usize;
        }
        idx
    }

    /// Calls `f` with every point index in the 3^d block of cells around `p`.
    /// Each point is visited at most once.
    pub fn for_each_near(&self, p: &[f64], mut f: impl FnMut(u32)) {
        self.any_near(p, |i| {
            f(i);
            false
        });
    }

    /// Visits the 3^d neighbourhood of `p` until `f` returns true; returns
    /// whether it did.
    pub fn any_near(&self, p: &[f64], mut f: impl FnMut(u32) -> bool) -> bool {
        let mut base = [0i64; MAX_D];
        for a in 0..self.d {
            base[a] = ((p[a] - self.origin[a]) / self.side).floor() as i64;
        }
        // Per-axis candidate cell coordinates, deduplicated for small periodic grids.
        let mut axis: [[i64; 3]; MAX_D] = [[0; 3]; MAX_D];
        let mut axis_len = [0usize; MAX_D];
        for a in 0..self.d {
            let m = self.dims[a] as i64;
            for o in -1..=1 {
                let mut c = base[a] + o;
                if self.periodic {
                    c = c.rem_euclid(m);
                } else if c < 0 || c >= m {
                    continue;
                }
                if !axis[a][..axis_len[a]].contains(&c) {
                    axis[a][axis_len[a]] = c;
                    axis_len[a] += 1;
                }
            }
            if axis_len[a] == 0 {
                return false;
            }
        }
        let mut sel = [0usize; MAX_D];
        loop {
            let mut c = [0i64; MAX_D];
            for a in 0..self.d {
                c[a] = axis[a][sel[a]];
            }
            let cell = self.linear(&c);
            let (s, e) = (self.starts[cell] as usize, self.starts[cell + 1] as usize);
            for &i in &self.items[s..e] {
                if f(i) {
                    return true;
                }
            }
            // odometer increment
            let mut a = 0;
            loop {
                if a == self.d {
                    return false;
                }
                sel[a] += 1;
                if sel[a] < axis_len[a] {
                    break;
                }
                sel[a] = 0;
                a += 1;
            }
        }
    }
}

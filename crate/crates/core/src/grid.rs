//! Truncated rectangular grids, solution snapshots, cube decomposition of
//! initial data, envelopes and level sets.

use std::collections::{BTreeMap, HashMap};

use crate::error::{LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    DirichletZero,
    NeumannZero,
}

/// A uniform node lattice `origin + i*h` on 1 or 2 axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub dim: usize,
    pub origin: [f64; 2],
    pub h: f64,
    /// Node counts per axis (`n[1] == 1` in 1D).
    pub n: [usize; 2],
    pub boundary: Boundary,
}

fn check_spacing(h: f64) -> Result<()> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(LabError::Invalid(format!("grid spacing must be positive, got {h}")))
    }
}

pub const MIN_EXTENT: usize = 8;

impl Grid {
    pub fn new(dim: usize, origin: [f64; 2], h: f64, n: [usize; 2], boundary: Boundary) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(LabError::Invalid(format!("grid dim must be 1 or 2, got {dim}")));
        }
        check_spacing(h)?;
        let n = if dim == 1 { [n[0], 1] } else { n };
        if n[..dim].iter().any(|&k| k < MIN_EXTENT) {
            return Err(LabError::Invalid(format!(
                "grid needs at least {MIN_EXTENT} nodes per axis, got {:?}",
                &n[..dim]
            )));
        }
        Ok(Self {
            dim,
            origin,
            h,
            n,
            boundary,
        })
    }

    /// 1D grid covering `[lo, hi]` with spacing `h` (nodes at `lo + i h`).
    pub fn line(lo: f64, hi: f64, h: f64, boundary: Boundary) -> Result<Self> {
        check_spacing(h)?;
        let n = ((hi - lo) / h).round() as usize + 1;
        Self::new(1, [lo, 0.0], h, [n, 1], boundary)
    }

    /// 2D grid covering `[lo0,hi0] x [lo1,hi1]`.
    pub fn rect(lo: [f64; 2], hi: [f64; 2], h: f64, boundary: Boundary) -> Result<Self> {
        check_spacing(h)?;
        let n0 = ((hi[0] - lo[0]) / h).round() as usize + 1;
        let n1 = ((hi[1] - lo[1]) / h).round() as usize + 1;
        Self::new(2, lo, h, [n0, n1], boundary)
    }

    /// Symmetric grid of half-width at least `a*t_end + 10*support_width`
    /// around the initial support, where `a` bounds the spreading speed of
    /// exponential supersolutions.
    pub fn auto_sized(
        dim: usize,
        support_center: [f64; 2],
        support_width: f64,
        speed_bound: f64,
        t_end: f64,
        h: f64,
        boundary: Boundary,
    ) -> Result<Self> {
        let half = speed_bound * t_end + 10.0 * support_width;
        let cells = (half / h).ceil();
        let half = cells * h;
        let lo = [
            ((support_center[0] / h).round() * h) - half,
            ((support_center[1] / h).round() * h) - half,
        ];
        if dim == 1 {
            Self::line(lo[0], lo[0] + 2.0 * half, h, boundary)
        } else {
            Self::rect(lo, [lo[0] + 2.0 * half, lo[1] + 2.0 * half], h, boundary)
        }
    }

    /// Physical half-width along axis `k`.
    pub fn half_width(&self, k: usize) -> f64 {
        0.5 * (self.n[k] - 1) as f64 * self.h
    }

    pub fn len(&self) -> usize {
        self.n[0] * self.n[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.n[0] + i
    }

    #[inline]
    pub fn ij(&self, idx: usize) -> (usize, usize) {
        (idx % self.n[0], idx / self.n[0])
    }

    #[inline]
    pub fn coord(&self, idx: usize) -> [f64; 2] {
        let (i, j) = self.ij(idx);
        [
            self.origin[0] + i as f64 * self.h,
            if self.dim == 2 {
                self.origin[1] + j as f64 * self.h
            } else {
                0.0
            },
        ]
    }

    pub fn coords(&self) -> Vec<[f64; 2]> {
        (0..self.len()).map(|k| self.coord(k)).collect()
    }

    pub fn x_max(&self) -> f64 {
        self.origin[0] + (self.n[0] - 1) as f64 * self.h
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self == other
    }
}

/// Values of a solution on a grid at a time stamp.
#[derive(Debug, Clone, PartialEq)]
pub struct GridState {
    pub grid: Grid,
    pub time: f64,
    pub values: Vec<f64>,
}

pub const RANGE_TOL: f64 = 1e-10;

impl GridState {
    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            time: 0.0,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|k| {
                let p = grid.coord(k);
                f(&p[..grid.dim])
            })
            .collect();
        Self {
            grid,
            time: 0.0,
            values,
        }
    }

    /// `theta * indicator(|x - center| < radius)`.
    pub fn ball(grid: Grid, center: [f64; 2], radius: f64, theta: f64) -> Self {
        Self::from_fn(grid, |x| {
            let r2: f64 = x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum();
            if r2 < radius * radius {
                theta
            } else {
                0.0
            }
        })
    }

    /// `theta` on the half-open box `[lo, hi)`.
    pub fn indicator(grid: Grid, lo: [f64; 2], hi: [f64; 2], theta: f64) -> Self {
        Self::from_fn(grid, |x| {
            let inside = x.iter().enumerate().all(|(k, &v)| v >= lo[k] && v < hi[k]);
            if inside {
                theta
            } else {
                0.0
            }
        })
    }

    /// Values within `[-tol, 1+tol]` and finite.
    pub fn in_range(&self) -> bool {
        self.values
            .iter()
            .all(|v| v.is_finite() && *v >= -RANGE_TOL && *v <= 1.0 + RANGE_TOL)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Node-wise `max(self - other, 0)` maximized over the grid.
    pub fn max_excess_over(&self, other: &GridState) -> Result<f64> {
        check_same(&self.grid, &other.grid)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .fold(0.0, f64::max))
    }

    /// Multilinear interpolation; points outside the grid get the boundary
    /// extension (zero for Dirichlet, nearest node for Neumann).
    pub fn interpolate(&self, x: &[f64]) -> f64 {
        let g = &self.grid;
        let mut base = [0usize; 2];
        let mut w = [0.0f64; 2];
        for k in 0..g.dim {
            let s = (x[k] - g.origin[k]) / g.h;
            let last = (g.n[k] - 1) as f64;
            if s < 0.0 || s > last {
                if g.boundary == Boundary::DirichletZero {
                    return 0.0;
                }
            }
            let s = s.clamp(0.0, last);
            let i = (s.floor() as usize).min(g.n[k].saturating_sub(2));
            base[k] = i;
            w[k] = s - i as f64;
        }
        if g.dim == 1 {
            let v0 = self.values[base[0]];
            let v1 = self.values[base[0] + 1];
            v0 + w[0] * (v1 - v0)
        } else {
            let at = |i: usize, j: usize| self.values[g.index(i, j)];
            let (i, j) = (base[0], base[1]);
            (1.0 - w[0]) * (1.0 - w[1]) * at(i, j)
                + w[0] * (1.0 - w[1]) * at(i + 1, j)
                + (1.0 - w[0]) * w[1] * at(i, j + 1)
                + w[0] * w[1] * at(i + 1, j + 1)
        }
    }

    /// Rightmost point where the 1D profile crosses `theta` downward
    /// (`u >= theta` on the left node, `< theta` on the right one).
    pub fn rightmost_crossing(&self, theta: f64) -> Option<f64> {
        let g = &self.grid;
        let v = &self.values[..g.n[0]];
        (0..v.len() - 1).rev().find_map(|i| {
            if v[i] >= theta && v[i + 1] < theta {
                let s = (v[i] - theta) / (v[i] - v[i + 1]);
                Some(g.origin[0] + (i as f64 + s) * g.h)
            } else {
                None
            }
        })
    }

    /// Leftmost upward crossing of `theta` in 1D.
    pub fn leftmost_crossing(&self, theta: f64) -> Option<f64> {
        let g = &self.grid;
        let v = &self.values[..g.n[0]];
        (0..v.len() - 1).find_map(|i| {
            if v[i] < theta && v[i + 1] >= theta {
                let s = (theta - v[i]) / (v[i + 1] - v[i]);
                Some(g.origin[0] + (i as f64 + s) * g.h)
            } else {
                None
            }
        })
    }

    /// Marching-squares contour of the `theta` level set, chained into
    /// polylines (closed ones repeat their first vertex).
    pub fn contour(&self, theta: f64) -> Vec<Vec<[f64; 2]>> {
        chain_segments(marching_squares(self, theta))
    }
}

fn check_same(a: &Grid, b: &Grid) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(LabError::GridMismatch(format!("{a:?} vs {b:?}")))
    }
}

fn marching_squares(state: &GridState, theta: f64) -> Vec<([f64; 2], [f64; 2])> {
    let g = &state.grid;
    assert_eq!(g.dim, 2, "contour needs a 2D state");
    let mut segs = Vec::new();
    let v = |i: usize, j: usize| state.values[g.index(i, j)];
    let p = |i: usize, j: usize| [g.origin[0] + i as f64 * g.h, g.origin[1] + j as f64 * g.h];
    let lerp = |a: [f64; 2], b: [f64; 2], va: f64, vb: f64| {
        let s = (theta - va) / (vb - va);
        [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]
    };
    for j in 0..g.n[1] - 1 {
        for i in 0..g.n[0] - 1 {
            // corners counter-clockwise from bottom-left
            let c = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)];
            let vals = c.map(|(a, b)| v(a, b));
            let pts = c.map(|(a, b)| p(a, b));
            let mut code = 0;
            for (k, &val) in vals.iter().enumerate() {
                if val >= theta {
                    code |= 1 << k;
                }
            }
            if code == 0 || code == 15 {
                continue;
            }
            let edge = |e: usize| {
                let (a, b) = (e, (e + 1) % 4);
                lerp(pts[a], pts[b], vals[a], vals[b])
            };
            // edges: 0 bottom, 1 right, 2 top, 3 left
            let pairs: &[(usize, usize)] = match code {
                1 | 14 => &[(3, 0)],
                2 | 13 => &[(0, 1)],
                3 | 12 => &[(3, 1)],
                4 | 11 => &[(1, 2)],
                6 | 9 => &[(0, 2)],
                7 | 8 => &[(3, 2)],
                5 | 10 => {
                    let center = 0.25 * vals.iter().sum::<f64>();
                    let joined = (center >= theta) == (code == 5);
                    if joined {
                        &[(3, 2), (0, 1)]
                    } else {
                        &[(3, 0), (1, 2)]
                    }
                }
                _ => unreachable!(),
            };
            for &(a, b) in pairs {
                segs.push((edge(a), edge(b)));
            }
        }
    }
    segs
}

fn chain_segments(segs: Vec<([f64; 2], [f64; 2])>) -> Vec<Vec<[f64; 2]>> {
    let key = |p: [f64; 2]| ((p[0] * 1e9).round() as i64, (p[1] * 1e9).round() as i64);
    let mut adj: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (k, (a, b)) in segs.iter().enumerate() {
        adj.entry(key(*a)).or_default().push(k);
        adj.entry(key(*b)).or_default().push(k);
    }
    let mut used = vec![false; segs.len()];
    let mut lines = Vec::new();
    for start in 0..segs.len() {
        if used[start] {
            continue;
        }
        used[start] = true;
        let mut line = vec![segs[start].0, segs[start].1];
        // extend forward then backward
        for dir in 0..2 {
            loop {
                let end = if dir == 0 { *line.last().unwrap() } else { line[0] };
                let next = adj
                    .get(&key(end))
                    .and_then(|c| c.iter().copied().find(|&s| !used[s]));
                let Some(s) = next else { break };
                used[s] = true;
                let (a, b) = segs[s];
                let other = if key(a) == key(end) { b } else { a };
                if dir == 0 {
                    line.push(other);
                } else {
                    line.insert(0, other);
                }
            }
        }
        lines.push(line);
    }
    lines
}

/// Cube-restricted copies `u0 * indicator(c C_n)` of an initial datum, with
/// half-open cubes `[n_i c, (n_i+1) c)`.
#[derive(Debug, Clone)]
pub struct CubeFamily {
    pub scale: f64,
    pub members: BTreeMap<[i64; 2], GridState>,
}

impl CubeFamily {
    pub fn active_set(&self) -> Vec<[i64; 2]> {
        self.members.keys().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    fn grid_and_time(&self) -> Result<(Grid, f64)> {
        let mut it = self.members.values();
        let first = it
            .next()
            .ok_or_else(|| LabError::Invalid("empty cube family".into()))?;
        for m in it {
            check_same(&first.grid, &m.grid)?;
            if m.time != first.time {
                return Err(LabError::GridMismatch(format!(
                    "member times differ: {} vs {}",
                    first.time, m.time
                )));
            }
        }
        Ok((first.grid, first.time))
    }

    fn fold(&self, init: f64, op: impl Fn(f64, f64) -> f64) -> Result<GridState> {
        let (grid, time) = self.grid_and_time()?;
        let mut values = vec![init; grid.len()];
        for m in self.members.values() {
            for (a, &b) in values.iter_mut().zip(&m.values) {
                *a = op(*a, b);
            }
        }
        Ok(GridState { grid, time, values })
    }

    /// Node-wise supremum over members.
    pub fn envelope(&self) -> Result<GridState> {
        self.fold(0.0, f64::max)
    }

    /// Node-wise `sum_n u_n`.
    pub fn node_sum(&self) -> Result<GridState> {
        self.fold(0.0, |a, b| a + b)
    }

    /// Node-wise `min{sum_n u_n, 1}`.
    pub fn capped_sum(&self) -> Result<GridState> {
        let mut s = self.node_sum()?;
        for v in &mut s.values {
            *v = v.min(1.0);
        }
        Ok(s)
    }
}

/// Splits `u0` into its restrictions to the cubes `c C_n`; cubes without a
/// nonzero node are omitted.
pub fn decompose(u0: &GridState, c: f64) -> Result<CubeFamily> {
    let g = &u0.grid;
    if !(c > 0.0) {
        return Err(LabError::Invalid(format!("cube scale must be positive, got {c}")));
    }
    if c < 2.0 * g.h {
        return Err(LabError::Invalid(format!(
            "cube scale {c} under-resolved by grid spacing {}",
            g.h
        )));
    }
    if u0.values.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(LabError::Invalid("initial data must lie in [0,1]".into()));
    }
    let mut members: BTreeMap<[i64; 2], GridState> = BTreeMap::new();
    for (k, &v) in u0.values.iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        let p = g.coord(k);
        let mut idx = [0i64; 2];
        for a in 0..g.dim {
            idx[a] = (p[a] / c).floor() as i64;
        }
        let m = members.entry(idx).or_insert_with(|| GridState {
            grid: *g,
            time: u0.time,
            values: vec![0.0; g.len()],
        });
        m.values[k] = v;
    }
    Ok(CubeFamily { scale: c, members })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line() -> Grid {
        Grid::line(-5.0, 5.0, 0.05, Boundary::DirichletZero).unwrap()
    }

    #[test]
    fn rejects_small_grids() {
        assert!(Grid::line(0.0, 0.5, 0.1, Boundary::DirichletZero).is_err());
        assert!(Grid::line(0.0, 1.0, 0.0, Boundary::DirichletZero).is_err());
    }

    #[test]
    fn single_cube_support() {
        let u0 = GridState::indicator(line(), [0.0, 0.0], [1.0, 0.0], 1.0);
        let fam = decompose(&u0, 1.0).unwrap();
        assert_eq!(fam.len(), 1);
        assert_eq!(fam.members.values().next().unwrap(), &u0);
    }

    #[test]
    fn four_cubes_sum_back() {
        let u0 = GridState::indicator(line(), [-2.0, 0.0], [2.0, 0.0], 1.0);
        let fam = decompose(&u0, 1.0).unwrap();
        assert_eq!(fam.len(), 4);
        assert_eq!(fam.node_sum().unwrap().values, u0.values);
    }

    #[test]
    fn ball_in_2d_has_four_members() {
        let g = Grid::rect([-3.0, -3.0], [3.0, 3.0], 0.05, Boundary::DirichletZero).unwrap();
        let u0 = GridState::ball(g, [0.0, 0.0], 1.0, 0.5);
        let fam = decompose(&u0, 1.0).unwrap();
        assert_eq!(fam.len(), 4);
        assert_eq!(fam.node_sum().unwrap().values, u0.values);
        let env = fam.envelope().unwrap();
        assert_eq!(env.values, u0.values);
    }

    #[test]
    fn decompose_rejects_tiny_cubes() {
        let u0 = GridState::zeros(line());
        assert!(decompose(&u0, 0.09).is_err());
    }

    #[test]
    fn capped_sum_caps() {
        let g = line();
        let a = GridState::indicator(g, [-1.0, 0.0], [1.0, 0.0], 0.7);
        let b = GridState::indicator(g, [0.0, 0.0], [2.0, 0.0], 0.7);
        let mut members = BTreeMap::new();
        members.insert([0, 0], a);
        members.insert([1, 0], b);
        let fam = CubeFamily { scale: 1.0, members };
        let cs = fam.capped_sum().unwrap();
        assert_eq!(cs.interpolate(&[0.5]), 1.0);
        assert!((cs.interpolate(&[-0.5]) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn envelope_rejects_mismatched_grids() {
        let mut members = BTreeMap::new();
        members.insert([0, 0], GridState::zeros(line()));
        members.insert(
            [1, 0],
            GridState::zeros(Grid::line(-5.0, 5.0, 0.1, Boundary::DirichletZero).unwrap()),
        );
        let fam = CubeFamily { scale: 1.0, members };
        assert!(fam.envelope().is_err());
    }

    #[test]
    fn ramp_crossing() {
        let g = Grid::line(-1.0, 2.0, 0.1, Boundary::DirichletZero).unwrap();
        let s = GridState::from_fn(g, |x| 1.0 - x[0].clamp(0.0, 1.0));
        assert!((s.rightmost_crossing(0.5).unwrap() - 0.5).abs() < 1e-12);
        let c = GridState::from_fn(g, |_| 0.3);
        assert_eq!(c.rightmost_crossing(0.5), None);
    }

    #[test]
    fn gaussian_half_width() {
        let g = Grid::line(-10.0, 10.0, 0.05, Boundary::DirichletZero).unwrap();
        let sigma: f64 = 1.7;
        let s = GridState::from_fn(g, |x| (-x[0] * x[0] / (2.0 * sigma * sigma)).exp());
        let analytic = sigma * (2.0 * 2f64.ln()).sqrt();
        let x = s.rightmost_crossing(0.5).unwrap();
        assert!((x - analytic).abs() < g.h, "{x} vs {analytic}");
    }

    #[test]
    fn circle_contour_is_closed() {
        let g = Grid::rect([-2.0, -2.0], [2.0, 2.0], 0.05, Boundary::DirichletZero).unwrap();
        let s = GridState::from_fn(g, |x| (-(x[0] * x[0] + x[1] * x[1])).exp());
        let lines = s.contour(0.5);
        assert_eq!(lines.len(), 1);
        let l = &lines[0];
        assert_eq!(l.first(), l.last());
        let r = (2f64.ln()).sqrt();
        for p in l {
            assert!(((p[0] * p[0] + p[1] * p[1]).sqrt() - r).abs() < 0.01);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn decompose_partitions_exactly(vals in proptest::collection::vec(0.0f64..=1.0, 41), c in 0.2f64..3.0) {
                let g = Grid::line(-2.0, 2.0, 0.1, Boundary::DirichletZero).unwrap();
                let u0 = GridState { grid: g, time: 0.0, values: vals };
                let fam = decompose(&u0, c).unwrap();
                prop_assert_eq!(fam.node_sum().unwrap().values, u0.values.clone());
                let env = fam.envelope().unwrap();
                let cs = fam.capped_sum().unwrap();
                let sum = fam.node_sum().unwrap();
                for k in 0..g.len() {
                    prop_assert!(env.values[k] <= cs.values[k]);
                    prop_assert!(cs.values[k] <= sum.values[k]);
                }
            }

            #[test]
            fn crossing_monotone_in_level(a in 0.05f64..0.95, b in 0.05f64..0.95, w in 0.3f64..3.0) {
                let g = Grid::line(-10.0, 10.0, 0.05, Boundary::DirichletZero).unwrap();
                let s = GridState::from_fn(g, |x| 1.0 / (1.0 + (x[0] / w).exp()));
                let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                prop_assert!(s.rightmost_crossing(lo).unwrap() >= s.rightmost_crossing(hi).unwrap());
            }
        }
    }
}

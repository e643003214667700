//! Spreading speeds `w(e)` from passage times, the Wulff polygon they span
//! and its support function, plus direct half-plane front speeds.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::env::RandomEnvironment;
use super::passage::{passage_grid, passage_times, PassageSetup, PassageTable};
use crate::error::{LabError, Result};
use crate::grid::{Boundary, Grid, GridState};
use crate::kpp::{CoefficientField, KppReaction};
use crate::local::{aligned_dt, stable_dt, LocalProblem, Solver};

/// `count` unit vectors at angles `2πk / count`.
pub fn directions(count: usize) -> Vec<[f64; 2]> {
    (0..count)
        .map(|k| {
            let a = 2.0 * PI * k as f64 / count as f64;
            [a.cos(), a.sin()]
        })
        .collect()
}

/// One solve per environment from the origin with targets `n e` for every
/// direction and radius; environments run in parallel.
pub fn radial_tables(
    envs: &[RandomEnvironment],
    setup: &PassageSetup,
    dirs: &[[f64; 2]],
    radii: &[f64],
) -> Result<Vec<PassageTable>> {
    let targets: Vec<[f64; 2]> = dirs
        .iter()
        .flat_map(|e| radii.iter().map(move |&n| [n * e[0], n * e[1]]))
        .collect();
    let mut cover = targets.clone();
    cover.push([0.0, 0.0]);
    let grid = passage_grid(setup, &cover)?;
    envs.par_iter()
        .map(|env| {
            Ok(PassageTable {
                seed: env.seed,
                theta: setup.theta,
                entries: passage_times(env, setup, grid, [0.0, 0.0], &targets)?,
            })
        })
        .collect()
}

/// Least-squares line `y = a + b x`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let c = least_squares(&xs.iter().map(|&x| vec![1.0, x]).collect::<Vec<_>>(), ys);
    (c[0], c[1])
}

/// Coefficients minimizing `sum (row·c - y)^2`, by Gauss-Jordan on the
/// normal equations (small, well-scaled bases only).
pub fn least_squares(rows: &[Vec<f64>], ys: &[f64]) -> Vec<f64> {
    let p = rows[0].len();
    let mut a = vec![vec![0.0; p + 1]; p];
    for (r, y) in rows.iter().zip(ys) {
        for i in 0..p {
            for j in 0..p {
                a[i][j] += r[i] * r[j];
            }
            a[i][p] += r[i] * y;
        }
    }
    for i in 0..p {
        let pivot = (i..p).max_by(|&x, &y| a[x][i].abs().total_cmp(&a[y][i].abs())).unwrap();
        a.swap(i, pivot);
        let d = a[i][i];
        for v in a[i].iter_mut() {
            *v /= d;
        }
        for k in 0..p {
            if k != i {
                let f = a[k][i];
                let row = a[i].clone();
                for (v, r) in a[k].iter_mut().zip(&row) {
                    *v -= f * r;
                }
            }
        }
    }
    a.iter().map(|r| r[p]).collect()
}

/// Extrapolation basis for `T(0, n e) / n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitBasis {
    /// `a + b/n`.
    InverseN,
    /// `a + b/n + c ln(n)/n`, absorbing the logarithmic delay of fronts
    /// grown from compact data.
    InverseNLog,
}

/// Which passage time enters the fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PassageClock {
    /// The integer `τ`.
    Integer,
    /// The interpolated crossing time (within one period of `τ`).
    Interpolated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpeedFit {
    pub basis: FitBasis,
    pub clock: PassageClock,
}

impl Default for SpeedFit {
    fn default() -> Self {
        Self {
            basis: FitBasis::InverseNLog,
            clock: PassageClock::Interpolated,
        }
    }
}

/// Radii `lo, lo+1, ..., hi`.
pub fn radii(lo: u32, hi: u32) -> Vec<f64> {
    (lo..=hi).map(f64::from).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DirectionSpeed {
    pub e: [f64; 2],
    pub w: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub per_seed: Vec<f64>,
    pub warning: Option<String>,
}

/// Fit residual, in time units, beyond which the passage-time sequence is
/// treated as noisier than integer rounding.
pub const ROUNDING_NOISE: f64 = 1.0;

/// `w(e)` per direction: per draw, the intercept of the least-squares fit of
/// `T(0, n e)/n` in the chosen basis is inverted; draws are averaged and the
/// interval is two standard errors of the ensemble.
pub fn estimate_speeds(
    tables: &[PassageTable],
    dirs: &[[f64; 2]],
    radii: &[f64],
    fit: SpeedFit,
) -> Result<Vec<DirectionSpeed>> {
    if radii.len() < 3 || radii.windows(2).any(|w| w[1] <= w[0]) {
        return Err(LabError::Invalid("need at least 3 increasing radii".into()));
    }
    if tables.is_empty() {
        return Err(LabError::Invalid("empty ensemble".into()));
    }
    let basis = |n: f64| match fit.basis {
        FitBasis::InverseN => vec![1.0, 1.0 / n],
        FitBasis::InverseNLog => vec![1.0, 1.0 / n, n.ln() / n],
    };
    let rows: Vec<Vec<f64>> = radii.iter().map(|&n| basis(n)).collect();
    dirs.iter()
        .map(|&e| {
            let mut per_seed = Vec::new();
            let mut noise: f64 = 0.0;
            for table in tables {
                let mut ys = Vec::new();
                for &n in radii {
                    let entry = table.entry([0.0, 0.0], [n * e[0], n * e[1]]);
                    let time = entry.and_then(|x| match fit.clock {
                        PassageClock::Integer => x.tau.map(f64::from),
                        PassageClock::Interpolated => x.crossing,
                    });
                    let time = time.ok_or_else(|| {
                        LabError::Budget(format!("no passage time to {n} e for e={e:?}, seed {}", table.seed))
                    })?;
                    ys.push(time / n);
                }
                let c = least_squares(&rows, &ys);
                for ((r, y), &n) in rows.iter().zip(&ys).zip(radii) {
                    let model: f64 = r.iter().zip(&c).map(|(a, b)| a * b).sum();
                    noise = noise.max((y - model).abs() * n);
                }
                per_seed.push(1.0 / c[0]);
            }
            let k = per_seed.len() as f64;
            let w = per_seed.iter().sum::<f64>() / k;
            let se = if per_seed.len() > 1 {
                (per_seed.iter().map(|v| (v - w) * (v - w)).sum::<f64>() / (k - 1.0) / k).sqrt()
            } else {
                0.0
            };
            let mut half = 2.0 * se;
            let mut warning = None;
            if noise > ROUNDING_NOISE {
                // a residual of `noise` time units at the largest radius
                let n_max = radii[radii.len() - 1];
                half += w * w * noise / n_max;
                warning = Some(format!("passage-time residual {noise:.2} exceeds rounding noise; interval widened"));
            }
            Ok(DirectionSpeed {
                e,
                w,
                ci_lo: w - half,
                ci_hi: w + half,
                per_seed,
                warning,
            })
        })
        .collect()
}

/// Polygon through `w(e_i) e_i`, its convex hull and the support function.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WulffEstimate {
    pub speeds: Vec<DirectionSpeed>,
    /// Counter-clockwise vertices in direction order.
    pub vertices: Vec<[f64; 2]>,
    pub hull: Vec<[f64; 2]>,
    /// Largest distance from a polygon vertex to the hull boundary.
    pub convexity_defect: f64,
}

pub fn wulff_from_speeds(mut speeds: Vec<DirectionSpeed>) -> WulffEstimate {
    speeds.sort_by(|a, b| a.e[1].atan2(a.e[0]).total_cmp(&b.e[1].atan2(b.e[0])));
    let vertices: Vec<[f64; 2]> = speeds.iter().map(|s| [s.w * s.e[0], s.w * s.e[1]]).collect();
    let hull = convex_hull(&vertices);
    let convexity_defect = vertices
        .iter()
        .map(|&v| boundary_distance(&hull, v))
        .fold(0.0, f64::max);
    WulffEstimate {
        speeds,
        vertices,
        hull,
        convexity_defect,
    }
}

/// Passage-time tables, speeds and polygon for `count` directions.
pub fn wulff(
    envs: &[RandomEnvironment],
    setup: &PassageSetup,
    count: usize,
    radii: &[f64],
    fit: SpeedFit,
) -> Result<WulffEstimate> {
    if count < 3 {
        return Err(LabError::Invalid("need at least 3 directions".into()));
    }
    let dirs = directions(count);
    let tables = radial_tables(envs, setup, &dirs, radii)?;
    Ok(wulff_from_speeds(estimate_speeds(&tables, &dirs, radii, fit)?))
}

/// `c*(e) = sup_{y in S} y·e`, attained at a vertex.
pub fn support_speed(w: &WulffEstimate, e: [f64; 2]) -> f64 {
    support(&w.vertices, e)
}

pub fn support(vertices: &[[f64; 2]], e: [f64; 2]) -> f64 {
    vertices
        .iter()
        .map(|v| v[0] * e[0] + v[1] * e[1])
        .fold(f64::NEG_INFINITY, f64::max)
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Monotone-chain hull, counter-clockwise, collinear points dropped.
pub fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut p = points.to_vec();
    p.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    p.dedup();
    if p.len() < 3 {
        return p;
    }
    let mut lower: Vec<[f64; 2]> = Vec::new();
    for &q in &p {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], q) <= 0.0 {
            lower.pop();
        }
        lower.push(q);
    }
    let mut upper: Vec<[f64; 2]> = Vec::new();
    for &q in p.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], q) <= 0.0 {
            upper.pop();
        }
        upper.push(q);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let s = if len2 > 0.0 {
        (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ((p[0] - a[0] - s * d[0]).powi(2) + (p[1] - a[1] - s * d[1]).powi(2)).sqrt()
}

/// Distance from `p` to the closed polygonal boundary through `poly`.
pub fn boundary_distance(poly: &[[f64; 2]], p: [f64; 2]) -> f64 {
    (0..poly.len())
        .map(|i| segment_distance(p, poly[i], poly[(i + 1) % poly.len()]))
        .fold(f64::INFINITY, f64::min)
}

fn contains(poly: &[[f64; 2]], p: [f64; 2]) -> bool {
    // even-odd rule
    let mut inside = false;
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
            if p[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

/// Hausdorff distance between the filled polygon and the disk of radius
/// `r` about the origin (circle sampled at `samples` points).
pub fn hausdorff_to_disk(poly: &[[f64; 2]], r: f64, samples: usize) -> f64 {
    let outside_disk = poly
        .iter()
        .map(|v| (v[0].hypot(v[1]) - r).max(0.0))
        .fold(0.0, f64::max);
    let outside_poly = (0..samples)
        .map(|k| {
            let a = 2.0 * PI * k as f64 / samples as f64;
            let q = [r * a.cos(), r * a.sin()];
            if contains(poly, q) {
                0.0
            } else {
                boundary_distance(poly, q)
            }
        })
        .fold(0.0, f64::max);
    outside_disk.max(outside_poly)
}

/// Direct front-speed measurement from `θ χ_{x·e < 0}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HalfPlaneSetup {
    pub h: f64,
    pub diffusion: f64,
    pub theta: f64,
    pub t_start: f64,
    pub t_end: f64,
    /// Transverse width of the strip used for axis directions; `None`
    /// always uses a square.
    pub strip_width: Option<f64>,
    pub margin: f64,
}

impl Default for HalfPlaneSetup {
    fn default() -> Self {
        Self {
            h: 0.25,
            diffusion: 1.0,
            theta: 0.5,
            t_start: 20.0,
            t_end: 60.0,
            strip_width: Some(1.75),
            margin: 14.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HalfPlaneSpeed {
    pub e: [f64; 2],
    pub speed: f64,
    /// `(t, position of the level-θ crossing along the line R e)`.
    pub track: Vec<(f64, f64)>,
}

/// Furthest `s` along `e` with `u(s e) >= θ`, scanning outward from 0.
fn crossing_along(state: &GridState, e: [f64; 2], theta: f64, reach: f64) -> Option<f64> {
    let ds = state.grid.h / 4.0;
    let steps = (reach / ds) as usize;
    let at = |s: f64| state.interpolate(&[s * e[0], s * e[1]]);
    let mut last = None;
    for k in 0..steps {
        let (s0, s1) = (k as f64 * ds, (k + 1) as f64 * ds);
        let (a, b) = (at(s0), at(s1));
        if a >= theta && b < theta {
            last = Some(s0 + ds * (a - theta) / (a - b));
        }
    }
    last
}

pub fn half_plane_speed(env: &RandomEnvironment, setup: &HalfPlaneSetup, e: [f64; 2]) -> Result<HalfPlaneSpeed> {
    let norm = e[0].hypot(e[1]);
    if !(norm > 0.0) || !(setup.t_end > setup.t_start) || !(setup.t_start >= 0.0) {
        return Err(LabError::Invalid("need a nonzero direction and 0 <= t_start < t_end".into()));
    }
    let e = [e[0] / norm, e[1] / norm];
    let big_m = env.params.big_m;
    let reach = 2.0 * (setup.diffusion * big_m).sqrt() * setup.t_end + setup.margin;
    let h = setup.h;
    let snap = |v: f64| (v / h).ceil() * h;
    let axis = e.iter().position(|&c| c.abs() == 1.0);
    let grid = match (axis, setup.strip_width) {
        (Some(k), Some(w)) => {
            let (back, ahead) = (snap(setup.margin), snap(reach));
            let (lo_k, hi_k) = if e[k] > 0.0 { (-back, ahead) } else { (-ahead, back) };
            let half = snap(w / 2.0);
            let (mut lo, mut hi) = ([-half; 2], [half; 2]);
            lo[k] = lo_k;
            hi[k] = hi_k;
            let n = [
                (((hi[0] - lo[0]) / h).round() as usize + 1).max(crate::grid::MIN_EXTENT),
                (((hi[1] - lo[1]) / h).round() as usize + 1).max(crate::grid::MIN_EXTENT),
            ];
            Grid::new(2, lo, h, n, Boundary::NeumannZero)?
        }
        _ => {
            let r = snap(reach);
            Grid::rect([-r, -r], [r, r], h, Boundary::NeumannZero)?
        }
    };
    let field = CoefficientField::isotropic(2, setup.diffusion);
    let reaction = KppReaction::logistic(env.as_field());
    let u0 = GridState::from_fn(grid, |x| if x[0] * e[0] + x[1] * e[1] < 0.0 { setup.theta } else { 0.0 });
    let problem = LocalProblem::new(field, reaction, u0)?;
    let period = env.params.time_period;
    let dt = aligned_dt(stable_dt(&problem), period);
    let mut solver = Solver::new(problem, dt)?;
    let mut track = Vec::new();
    let mut k = (setup.t_start / period).ceil() as u64;
    while k as f64 * period <= setup.t_end {
        let t = k as f64 * period;
        solver.advance_to(t)?;
        let s = crossing_along(solver.state(), e, setup.theta, reach - setup.margin / 2.0)
            .ok_or_else(|| LabError::Budget(format!("no level-{} crossing at t={t}", setup.theta)))?;
        track.push((t, s));
        k += 1;
    }
    if track.len() < 2 {
        return Err(LabError::Invalid("window holds fewer than two periods".into()));
    }
    let (ts, ss): (Vec<f64>, Vec<f64>) = track.iter().copied().unzip();
    let (_, speed) = linear_fit(&ts, &ss);
    Ok(HalfPlaneSpeed { e, speed, track })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::homog::env::EnvParams;

    #[test]
    fn unit_disk_support_is_one() {
        let vertices: Vec<[f64; 2]> = directions(720);
        for e in directions(37) {
            assert!((support(&vertices, e) - 1.0).abs() < 1e-4);
        }
        assert!(hausdorff_to_disk(&vertices, 1.0, 1000) < 1e-4);
    }

    #[test]
    fn hull_and_defect() {
        let square = [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]];
        let mut star = square.to_vec();
        star.insert(1, [0.25, 0.25]);
        assert_eq!(convex_hull(&star).len(), 4);
        let speeds = |pts: &[[f64; 2]]| -> Vec<DirectionSpeed> {
            pts.iter()
                .map(|p| {
                    let w = p[0].hypot(p[1]);
                    DirectionSpeed {
                        e: [p[0] / w, p[1] / w],
                        w,
                        ci_lo: w,
                        ci_hi: w,
                        per_seed: vec![w],
                        warning: None,
                    }
                })
                .collect()
        };
        let convex = wulff_from_speeds(speeds(&square));
        assert!(convex.convexity_defect < 1e-12);
        let dented = wulff_from_speeds(speeds(&star));
        // distance from (1/4, 1/4) to the edge x + y = 1
        assert!((dented.convexity_defect - 0.5 / 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn regular_polygon_hausdorff_is_the_edge_sag() {
        let poly: Vec<[f64; 2]> = directions(16).iter().map(|e| [2.0 * e[0], 2.0 * e[1]]).collect();
        let d = hausdorff_to_disk(&poly, 2.0, 4096);
        let sag = 2.0 * (1.0 - (PI / 16.0).cos());
        assert!((d - sag).abs() < 1e-4, "{d} vs {sag}");
    }

    #[test]
    fn homogeneous_half_plane_speed_near_two() {
        let env = RandomEnvironment::sample(EnvParams::homogeneous(1.0), 0).unwrap();
        let s = HalfPlaneSetup {
            t_start: 10.0,
            t_end: 30.0,
            ..HalfPlaneSetup::default()
        };
        let a = half_plane_speed(&env, &s, [1.0, 0.0]).unwrap();
        let b = half_plane_speed(&env, &s, [0.0, -1.0]).unwrap();
        assert!((a.speed - b.speed).abs() < 1e-9);
        assert!((a.speed - 2.0).abs() < 0.15, "{}", a.speed);
    }
}

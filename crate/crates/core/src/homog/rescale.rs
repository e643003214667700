//! Ballistic rescaling: `u^ε(t, x) = u(t/ε, x/ε)` started from the initial
//! set `G` is compared with the indicator of `G + t S` away from its boundary.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::env::RandomEnvironment;
use super::wulff::support;
use crate::error::{LabError, Result};
use crate::grid::{Boundary, Grid, GridState, MIN_EXTENT};
use crate::kpp::{CoefficientField, KppReaction};
use crate::local::{aligned_dt, stable_dt, LocalProblem, Solver};

/// Initial sets in scaled coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSet {
    /// `{x·e < 0}` for a unit `e`.
    HalfPlane { e: [f64; 2] },
    Ball { center: [f64; 2], radius: f64 },
    /// Axis-aligned square of half side `half`.
    Square { center: [f64; 2], half: f64 },
    Annulus { center: [f64; 2], inner: f64, outer: f64 },
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Normals at which support functions of convex sets are sampled.
pub const NORMALS: usize = 720;

/// `G + t S` with `S` a convex polygon containing the origin.
pub struct Evolved<'a> {
    set: InitialSet,
    vertices: &'a [[f64; 2]],
    normals: Vec<[f64; 2]>,
    /// `c*(ν)` at each normal.
    speeds: Vec<f64>,
}

impl<'a> Evolved<'a> {
    pub fn new(set: InitialSet, s_vertices: &'a [[f64; 2]]) -> Self {
        let normals: Vec<[f64; 2]> = (0..NORMALS)
            .map(|k| {
                let a = 2.0 * PI * k as f64 / NORMALS as f64;
                [a.cos(), a.sin()]
            })
            .collect();
        let speeds = normals.iter().map(|&n| support(s_vertices, n)).collect();
        Self {
            set,
            vertices: s_vertices,
            normals,
            speeds,
        }
    }

    /// `max_ν (x·ν - h_G(ν) - t c*(ν))`: the signed distance to a convex
    /// `G + t S` up to the normal sampling.
    fn convex_level(&self, x: [f64; 2], t: f64, h_g: impl Fn([f64; 2]) -> f64) -> f64 {
        self.normals
            .iter()
            .zip(&self.speeds)
            .map(|(&n, &c)| dot(x, n) - h_g(n) - t * c)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Negative inside `G + t S`. Its modulus is the distance to the
    /// boundary, or a lower bound for it near the annulus hole.
    pub fn level(&self, x: [f64; 2], t: f64) -> f64 {
        match self.set {
            InitialSet::HalfPlane { e } => dot(x, e) - t * support(self.vertices, e),
            InitialSet::Ball { center, radius } => self.convex_level(x, t, |n| dot(center, n) + radius),
            InitialSet::Square { center, half } => {
                self.convex_level(x, t, |n| dot(center, n) + half * (n[0].abs() + n[1].abs()))
            }
            InitialSet::Annulus { center, inner, outer } => {
                let outside = self.convex_level(x, t, |n| dot(center, n) + outer);
                // the hole is the intersection of the balls B(c + t v, inner)
                let reach = self
                    .vertices
                    .iter()
                    .map(|v| ((x[0] - center[0] - t * v[0]).powi(2) + (x[1] - center[1] - t * v[1]).powi(2)).sqrt())
                    .fold(0.0, f64::max);
                outside.max(inner - reach)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RescaleSetup {
    pub h: f64,
    pub diffusion: f64,
    /// Amplitude of the initial datum `θ χ`.
    pub theta: f64,
    /// Excluded band around `∂(G + t S)`, in scaled units.
    pub collar: f64,
    /// `ρ(ε) = rho_coeff * ε^rho_power` shrinks `G` before scaling.
    pub rho_coeff: f64,
    pub rho_power: f64,
    /// The shift `y_ε` (held fixed over `ε`).
    pub shift: [f64; 2],
    /// Scaled evaluation box `[lo, hi]`.
    pub window: [[f64; 2]; 2],
    /// Unscaled padding between the window and the grid edge.
    pub margin: f64,
    /// For an axis-aligned half-plane, collapse the transverse axis to a
    /// strip of `MIN_EXTENT` nodes.
    pub strip: bool,
    pub max_nodes: usize,
}

impl Default for RescaleSetup {
    fn default() -> Self {
        Self {
            h: 0.25,
            diffusion: 1.0,
            theta: 1.0,
            collar: 0.3,
            rho_coeff: 0.0,
            rho_power: 0.5,
            shift: [0.0; 2],
            window: [[-1.0, -1.0], [3.0, 1.0]],
            margin: 14.0,
            strip: false,
            max_nodes: 4_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RescaleRow {
    pub eps: f64,
    pub t: f64,
    /// `sup |u^ε - χ|` over window nodes farther than the collar from the
    /// boundary; `NaN` for a partial row.
    pub sup_error: f64,
    pub nodes: usize,
    /// Grid budget exceeded: the row was not computed.
    pub partial: bool,
}

#[derive(Debug, Clone)]
pub struct RescaleTable {
    pub rows: Vec<RescaleRow>,
    /// Final unscaled state per computed `ε`.
    pub snapshots: Vec<(f64, GridState)>,
}

impl RescaleTable {
    pub fn at(&self, eps: f64, t: f64) -> Option<&RescaleRow> {
        self.rows.iter().find(|r| r.eps == eps && r.t == t)
    }

    /// Errors at time `t` ordered by decreasing `ε` never increase.
    pub fn non_increasing(&self, t: f64) -> bool {
        let mut rows: Vec<&RescaleRow> = self.rows.iter().filter(|r| r.t == t && !r.partial).collect();
        rows.sort_by(|a, b| b.eps.total_cmp(&a.eps));
        rows.windows(2).all(|w| w[1].sup_error <= w[0].sup_error)
    }
}

fn axis_of(set: &InitialSet) -> Option<usize> {
    match set {
        InitialSet::HalfPlane { e } => e.iter().position(|c| c.abs() == 1.0),
        _ => None,
    }
}

/// Error table of `u^ε` against `χ_{G + t S}` for every `ε` and scaled time.
pub fn rescaled_convergence(
    env: &RandomEnvironment,
    set: InitialSet,
    s_vertices: &[[f64; 2]],
    eps_list: &[f64],
    times: &[f64],
    setup: &RescaleSetup,
) -> Result<RescaleTable> {
    if times.windows(2).any(|w| w[1] <= w[0]) || times.first().is_some_and(|&t| t < 0.0) {
        return Err(LabError::Invalid("times must be ascending and non-negative".into()));
    }
    if eps_list.iter().any(|&e| !(e > 0.0)) {
        return Err(LabError::Invalid("epsilon values must be positive".into()));
    }
    let evolved = Evolved::new(set, s_vertices);
    let strip = if setup.strip { axis_of(&set) } else { None };
    let mut rows = Vec::new();
    let mut snapshots = Vec::new();
    for &eps in eps_list {
        let h = setup.h;
        let [wlo, whi] = setup.window;
        let to_unscaled = |x: f64, k: usize| (x + setup.shift[k]) / eps;
        let mut lo = [0.0; 2];
        let mut n = [0usize; 2];
        for k in 0..2 {
            if strip.is_some_and(|a| a != k) {
                lo[k] = -h * (MIN_EXTENT / 2) as f64;
                n[k] = MIN_EXTENT;
                continue;
            }
            let a = ((to_unscaled(wlo[k], k) - setup.margin) / h).floor() * h;
            let b = ((to_unscaled(whi[k], k) + setup.margin) / h).ceil() * h;
            lo[k] = a;
            n[k] = ((b - a) / h).round() as usize + 1;
        }
        if n[0] * n[1] > setup.max_nodes {
            rows.extend(times.iter().map(|&t| RescaleRow {
                eps,
                t,
                sup_error: f64::NAN,
                nodes: 0,
                partial: true,
            }));
            continue;
        }
        let grid = Grid::new(2, lo, h, n, Boundary::NeumannZero)?;
        let rho = setup.rho_coeff * eps.powf(setup.rho_power);
        let scaled = |p: [f64; 2]| [eps * p[0] - setup.shift[0], eps * p[1] - setup.shift[1]];
        let scaled_strip = |p: [f64; 2]| {
            let mut x = scaled(p);
            if let Some(a) = strip {
                x[1 - a] = 0.0;
            }
            x
        };
        let u0 = GridState::from_fn(grid, |p| {
            if evolved.level(scaled_strip([p[0], p[1]]), 0.0) < -rho {
                setup.theta
            } else {
                0.0
            }
        });
        let problem = LocalProblem::new(
            CoefficientField::isotropic(2, setup.diffusion),
            KppReaction::logistic(env.as_field()),
            u0,
        )?;
        let period = env.params.time_period;
        let dt = aligned_dt(stable_dt(&problem), period);
        let mut solver = Solver::new(problem, dt)?;
        let window_nodes: Vec<(usize, [f64; 2])> = (0..grid.len())
            .filter_map(|k| {
                let p = grid.coord(k);
                let x = scaled_strip(p);
                let inside = (0..2).all(|a| strip.is_some_and(|s| s != a) || (x[a] >= wlo[a] && x[a] <= whi[a]));
                inside.then_some((k, x))
            })
            .collect();
        for &t in times {
            solver.advance_to(t / eps)?;
            let u = &solver.state().values;
            let mut worst: f64 = 0.0;
            let mut count = 0;
            for &(k, x) in &window_nodes {
                let level = evolved.level(x, t);
                if level.abs() > setup.collar {
                    let target = if level < 0.0 { 1.0 } else { 0.0 };
                    worst = worst.max((u[k] - target).abs());
                    count += 1;
                }
            }
            rows.push(RescaleRow {
                eps,
                t,
                sup_error: worst,
                nodes: count,
                partial: false,
            });
        }
        snapshots.push((eps, solver.into_state()));
    }
    Ok(RescaleTable { rows, snapshots })
}

/// Vertices of the regular `count`-gon of circumradius `r`: a disk Wulff
/// shape to within `r (1 - cos(π / count))`.
pub fn disk_polygon(r: f64, count: usize) -> Vec<[f64; 2]> {
    (0..count)
        .map(|k| {
            let a = 2.0 * PI * k as f64 / count as f64;
            [r * a.cos(), r * a.sin()]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::homog::env::EnvParams;

    #[test]
    fn levels_of_simple_sets() {
        let disk = disk_polygon(2.0, NORMALS);
        let ball = Evolved::new(
            InitialSet::Ball {
                center: [0.0, 0.0],
                radius: 1.0,
            },
            &disk,
        );
        assert!((ball.level([4.0, 0.0], 1.0) - 1.0).abs() < 1e-4);
        assert!((ball.level([0.0, 0.0], 1.0) + 3.0).abs() < 1e-4);
        let ring = Evolved::new(
            InitialSet::Annulus {
                center: [0.0, 0.0],
                inner: 3.0,
                outer: 4.0,
            },
            &disk,
        );
        // the hole shrinks from radius 3 to 2 at t = 1/2
        assert!((ring.level([0.0, 0.0], 0.0) - 3.0).abs() < 1e-12);
        assert!((ring.level([0.0, 0.0], 0.5) - 2.0).abs() < 1e-4);
        assert!(ring.level([3.5, 0.0], 0.0) < 0.0);
    }

    #[test]
    fn initial_error_vanishes_outside_collar() {
        let env = RandomEnvironment::sample(EnvParams::homogeneous(1.0), 0).unwrap();
        let disk = disk_polygon(2.0, NORMALS);
        let setup = RescaleSetup {
            window: [[-1.0, -0.5], [1.0, 0.5]],
            ..RescaleSetup::default()
        };
        let set = InitialSet::Square {
            center: [0.0, 0.0],
            half: 0.5,
        };
        let table = rescaled_convergence(&env, set, &disk, &[1.0 / 8.0], &[0.0], &setup).unwrap();
        assert_eq!(table.rows[0].sup_error, 0.0);
        assert!(table.rows[0].nodes > 0);
    }

    #[test]
    fn budget_marks_partial_rows() {
        let env = RandomEnvironment::sample(EnvParams::homogeneous(1.0), 0).unwrap();
        let disk = disk_polygon(2.0, 64);
        let setup = RescaleSetup {
            max_nodes: 100,
            ..RescaleSetup::default()
        };
        let set = InitialSet::HalfPlane { e: [1.0, 0.0] };
        let table = rescaled_convergence(&env, set, &disk, &[0.5], &[0.0, 1.0], &setup).unwrap();
        assert!(table.rows.iter().all(|r| r.partial && r.sup_error.is_nan()));
        assert!(table.snapshots.is_empty());
    }
}

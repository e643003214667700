//! Passage times `τ(y, z, ω)`: the first integer time after which the
//! solution started from `θ χ_{B_r(y)}` stays above `θ` on `B_r(z)`.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::env::RandomEnvironment;
use crate::error::{LabError, Result};
use crate::grid::{Boundary, Grid, GridState};
use crate::kpp::{CoefficientField, KppReaction};
use crate::local::{aligned_dt, stable_dt, LocalProblem, Solver};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PassageSetup {
    /// Grid spacing; keep it dyadic so that lattice shifts are exact.
    pub h: f64,
    /// `A = diffusion * I`.
    pub diffusion: f64,
    pub theta: f64,
    pub radius: f64,
    /// Length of the confirmation window after a candidate `τ`, in periods.
    pub confirm_periods: f64,
    pub samples_per_period: usize,
    /// Distance from any source or target ball to the grid edge.
    pub margin: f64,
    /// Simulated time after which unconfirmed targets are given up.
    pub t_budget: f64,
}

impl Default for PassageSetup {
    fn default() -> Self {
        Self {
            h: 0.25,
            diffusion: 1.0,
            theta: 0.5,
            radius: 1.0,
            confirm_periods: 3.0,
            samples_per_period: 4,
            margin: 14.0,
            t_budget: 400.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PassageStatus {
    Reached,
    /// The time budget ran out before a confirmed passage.
    Budget,
    /// The target ball is not inside the grid interior.
    Unreachable,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PassageEntry {
    pub y: [f64; 2],
    pub z: [f64; 2],
    pub status: PassageStatus,
    /// `τ(y, z)`, with `τ(y, y) = 0`.
    pub tau: Option<u32>,
    /// The measured first time before the `τ(y, y) = 0` convention; for
    /// `z = y` this is the hair-trigger burn-in.
    pub raw: Option<u32>,
    /// Time at which the ball minimum last rose through `θ`, linearly
    /// interpolated between samples (0 when it never dipped below).
    pub crossing: Option<f64>,
}

impl PassageEntry {
    pub fn distance(&self) -> f64 {
        dist(self.y, self.z)
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// All entries of one environment draw.
#[derive(Debug, Clone, PartialEq)]
pub struct PassageTable {
    pub seed: u64,
    pub theta: f64,
    pub entries: Vec<PassageEntry>,
}

fn key(p: [f64; 2]) -> [u64; 2] {
    [p[0].to_bits(), p[1].to_bits()]
}

impl PassageTable {
    pub fn lookup(&self) -> BTreeMap<([u64; 2], [u64; 2]), u32> {
        self.entries
            .iter()
            .filter_map(|e| e.tau.map(|t| ((key(e.y), key(e.z)), t)))
            .collect()
    }

    pub fn entry(&self, y: [f64; 2], z: [f64; 2]) -> Option<&PassageEntry> {
        self.entries.iter().find(|e| key(e.y) == key(y) && key(e.z) == key(z))
    }

    pub fn tau(&self, y: [f64; 2], z: [f64; 2]) -> Option<u32> {
        self.entry(y, z).and_then(|e| e.tau)
    }
}

/// Dirichlet grid on the `h`-lattice covering every point with room
/// `radius + margin` on all sides.
pub fn passage_grid(setup: &PassageSetup, points: &[[f64; 2]]) -> Result<Grid> {
    if points.is_empty() {
        return Err(LabError::Invalid("no points to cover".into()));
    }
    let pad = setup.radius + setup.margin;
    let h = setup.h;
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in points {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k] - pad);
            hi[k] = hi[k].max(p[k] + pad);
        }
    }
    let lo = [(lo[0] / h).floor() * h, (lo[1] / h).floor() * h];
    let n = [
        ((hi[0] - lo[0]) / h).ceil() as usize + 1,
        ((hi[1] - lo[1]) / h).ceil() as usize + 1,
    ];
    Grid::new(2, lo, h, n, Boundary::DirichletZero)
}

/// The solve behind every passage time: isotropic diffusion, logistic
/// reaction with rate given by the environment.
pub fn passage_problem(env: &RandomEnvironment, setup: &PassageSetup, grid: Grid, y: [f64; 2]) -> Result<LocalProblem> {
    let field = CoefficientField::isotropic(2, setup.diffusion);
    let reaction = KppReaction::logistic(env.as_field());
    let u0 = GridState::ball(grid, y, setup.radius, setup.theta);
    LocalProblem::new(field, reaction, u0)
}

fn ball_nodes(grid: &Grid, z: [f64; 2], r: f64) -> Option<Vec<usize>> {
    let h = grid.h;
    let span = |k: usize| {
        let lo = ((z[k] - r - grid.origin[k]) / h).floor().max(0.0) as usize;
        let hi = (((z[k] + r - grid.origin[k]) / h).ceil().max(0.0) as usize).min(grid.n[k] - 1);
        (lo, hi)
    };
    let ((i0, i1), (j0, j1)) = (span(0), span(1));
    let mut nodes = Vec::new();
    let mut touches_edge = false;
    for j in j0..=j1 {
        for i in i0..=i1 {
            let k = grid.index(i, j);
            let p = grid.coord(k);
            let r2 = (p[0] - z[0]).powi(2) + (p[1] - z[1]).powi(2);
            if r2 < r * r {
                touches_edge |= i == 0 || j == 0 || i + 1 == grid.n[0] || j + 1 == grid.n[1];
                nodes.push(k);
            }
        }
    }
    (!nodes.is_empty() && !touches_edge).then_some(nodes)
}

/// Passage times from `y` to every target in one solve on `grid`.
pub fn passage_times(
    env: &RandomEnvironment,
    setup: &PassageSetup,
    grid: Grid,
    y: [f64; 2],
    targets: &[[f64; 2]],
) -> Result<Vec<PassageEntry>> {
    let period = env.params.time_period;
    if setup.samples_per_period == 0 || !(setup.confirm_periods >= 0.0) {
        return Err(LabError::Invalid("need samples_per_period >= 1 and confirm_periods >= 0".into()));
    }
    let problem = passage_problem(env, setup, grid, y)?;
    let cadence = period / setup.samples_per_period as f64;
    let dt = aligned_dt(stable_dt(&problem), cadence);
    let mut solver = Solver::new(problem, dt)?;
    let confirm = setup.confirm_periods * period;

    let nodes: Vec<Option<Vec<usize>>> = targets.iter().map(|&z| ball_nodes(&grid, z, setup.radius)).collect();
    // last sample time with min over the ball below theta
    let mut last_bad: Vec<Option<f64>> = vec![None; targets.len()];
    let mut done: Vec<Option<u32>> = vec![None; targets.len()];
    let mut prev_low = vec![f64::NAN; targets.len()];
    let mut crossing = vec![0.0; targets.len()];
    let candidate = |bad: Option<f64>| bad.map_or(0.0, |s| s.floor() + 1.0);
    let mut k = 0u64;
    loop {
        let s = k as f64 * cadence;
        if k > 0 {
            solver.advance_to(s)?;
        }
        let u = &solver.state().values;
        let mut pending = false;
        for (j, list) in nodes.iter().enumerate() {
            let Some(list) = list else { continue };
            if done[j].is_some() {
                continue;
            }
            let low = list.iter().map(|&n| u[n]).fold(f64::INFINITY, f64::min);
            if low < setup.theta {
                last_bad[j] = Some(s);
            } else if prev_low[j] < setup.theta {
                let frac = (setup.theta - prev_low[j]) / (low - prev_low[j]);
                crossing[j] = s - cadence + cadence * frac;
            }
            prev_low[j] = low;
            let tau = candidate(last_bad[j]);
            if s >= tau + confirm {
                done[j] = Some(tau as u32);
            } else {
                pending = true;
            }
        }
        if !pending || s >= setup.t_budget {
            break;
        }
        k += 1;
    }
    Ok(targets
        .iter()
        .enumerate()
        .map(|(j, &z)| {
            let status = match (&nodes[j], done[j]) {
                (None, _) => PassageStatus::Unreachable,
                (Some(_), None) => PassageStatus::Budget,
                (Some(_), Some(_)) => PassageStatus::Reached,
            };
            let same = key(z) == key(y);
            PassageEntry {
                y,
                z,
                status,
                tau: done[j].map(|t| if same { 0 } else { t }),
                raw: done[j],
                crossing: done[j].map(|_| crossing[j]),
            }
        })
        .collect())
}

/// One solve per source on a common grid covering every source and target;
/// sources run in parallel and entries keep the order of `plan`.
pub fn passage_table(
    env: &RandomEnvironment,
    setup: &PassageSetup,
    plan: &[([f64; 2], Vec<[f64; 2]>)],
) -> Result<PassageTable> {
    let points: Vec<[f64; 2]> = plan
        .iter()
        .flat_map(|(y, zs)| std::iter::once(*y).chain(zs.iter().copied()))
        .collect();
    let grid = passage_grid(setup, &points)?;
    let rows: Vec<Vec<PassageEntry>> = plan
        .par_iter()
        .map(|(y, zs)| passage_times(env, setup, grid, *y, zs))
        .collect::<Result<_>>()?;
    Ok(PassageTable {
        seed: env.seed,
        theta: setup.theta,
        entries: rows.into_iter().flatten().collect(),
    })
}

/// Sources `0` and `mid * e` for each direction, with targets `mid * e` and
/// `far * e` from the origin and `far * e` from the midpoint.
pub fn collinear_plan(dirs: &[[f64; 2]], mid: f64, far: f64) -> Vec<([f64; 2], Vec<[f64; 2]>)> {
    let at = |e: [f64; 2], s: f64| [s * e[0], s * e[1]];
    let mut plan = vec![(
        [0.0, 0.0],
        std::iter::once([0.0, 0.0])
            .chain(dirs.iter().flat_map(|&e| [at(e, mid), at(e, far)]))
            .collect(),
    )];
    for &e in dirs {
        plan.push((at(e, mid), vec![at(e, far)]));
    }
    plan
}

/// `τ(y, z, Υ_x ω)` and `τ(x + y, x + z, ω)` on congruent grids.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftPair {
    pub x: [f64; 2],
    pub shifted_env: PassageEntry,
    pub shifted_points: PassageEntry,
}

impl ShiftPair {
    pub fn exact(&self) -> bool {
        self.shifted_env.status == self.shifted_points.status
            && self.shifted_env.raw == self.shifted_points.raw
            && self.shifted_env.tau == self.shifted_points.tau
    }
}

fn on_lattice(v: f64, h: f64) -> bool {
    (v / h).fract() == 0.0 && (v / h).abs() < 2f64.powi(40)
}

/// Runs both sides of the stationarity identity; `x` must lie on the grid
/// lattice so the two grids are translates of each other node for node.
pub fn shift_pair(env: &RandomEnvironment, setup: &PassageSetup, y: [f64; 2], z: [f64; 2], x: [f64; 2]) -> Result<ShiftPair> {
    if !x.iter().all(|&v| on_lattice(v, setup.h)) {
        return Err(LabError::Invalid(format!("shift {x:?} is not on the h={} lattice", setup.h)));
    }
    let grid = passage_grid(setup, &[y, z])?;
    let moved = Grid {
        origin: [grid.origin[0] + x[0], grid.origin[1] + x[1]],
        ..grid
    };
    let a = passage_times(&env.shifted(x), setup, grid, y, &[z])?[0];
    let xy = [x[0] + y[0], x[1] + y[1]];
    let xz = [x[0] + z[0], x[1] + z[1]];
    let b = passage_times(env, setup, moved, xy, &[xz])?[0];
    Ok(ShiftPair {
        x,
        shifted_env: a,
        shifted_points: b,
    })
}

/// Checks of subadditivity, linear growth, the Lipschitz bound and
/// stationarity on one table.
#[derive(Debug, Clone, PartialEq)]
pub struct TauLawReport {
    pub seed: u64,
    pub triples: usize,
    /// `max τ(y,z) - τ(y,x) - τ(x,z)` over sampled triples.
    pub max_subadditivity_violation: f64,
    /// Smallest `C` with `τ <= C (|y - z| + 1)` on every entry.
    pub c_fit: f64,
    /// `max |τ(y,z) - τ(y',z')| / (|y - y'| + |z - z'| + 2)`.
    pub lipschitz: f64,
    pub shift_pairs: usize,
    pub stationarity_exact: bool,
}

pub fn check_tau_laws(table: &PassageTable, pairs: &[ShiftPair]) -> Result<TauLawReport> {
    let reached: Vec<&PassageEntry> = table.entries.iter().filter(|e| e.tau.is_some()).collect();
    if reached.is_empty() {
        return Err(LabError::Invalid("table has no reached entries".into()));
    }
    let lookup = table.lookup();
    let points: Vec<[f64; 2]> = {
        let mut seen = BTreeMap::new();
        for e in &reached {
            seen.insert(key(e.y), e.y);
            seen.insert(key(e.z), e.z);
        }
        seen.into_values().collect()
    };
    let mut triples = 0;
    let mut worst = f64::NEG_INFINITY;
    for e in &reached {
        if key(e.y) == key(e.z) {
            continue;
        }
        for &x in &points {
            if key(x) == key(e.y) || key(x) == key(e.z) {
                continue;
            }
            let (Some(a), Some(b)) = (lookup.get(&(key(e.y), key(x))), lookup.get(&(key(x), key(e.z)))) else {
                continue;
            };
            triples += 1;
            worst = worst.max(e.tau.unwrap() as f64 - (*a as f64 + *b as f64));
        }
    }
    let c_fit = reached
        .iter()
        .map(|e| e.tau.unwrap() as f64 / (e.distance() + 1.0))
        .fold(0.0, f64::max);
    let mut lipschitz: f64 = 0.0;
    for a in &reached {
        for b in &reached {
            let d = dist(a.y, b.y) + dist(a.z, b.z) + 2.0;
            lipschitz = lipschitz.max((a.tau.unwrap() as f64 - b.tau.unwrap() as f64).abs() / d);
        }
    }
    Ok(TauLawReport {
        seed: table.seed,
        triples,
        max_subadditivity_violation: if triples == 0 { 0.0 } else { worst },
        c_fit,
        lipschitz,
        shift_pairs: pairs.len(),
        stationarity_exact: pairs.iter().all(ShiftPair::exact),
    })
}

/// Largest relative deviation of the per-seed `C` from their mean.
pub fn c_spread(reports: &[TauLawReport]) -> f64 {
    let mean = reports.iter().map(|r| r.c_fit).sum::<f64>() / reports.len() as f64;
    reports
        .iter()
        .map(|r| (r.c_fit - mean).abs() / mean)
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::homog::env::EnvParams;

    fn small() -> PassageSetup {
        PassageSetup {
            h: 0.25,
            margin: 10.0,
            t_budget: 60.0,
            ..PassageSetup::default()
        }
    }

    #[test]
    fn same_ball_has_zero_tau_and_reports_burn_in() {
        let env = RandomEnvironment::sample(EnvParams::homogeneous(1.0), 0).unwrap();
        let s = small();
        let g = passage_grid(&s, &[[0.0, 0.0]]).unwrap();
        let e = passage_times(&env, &s, g, [0.0, 0.0], &[[0.0, 0.0]]).unwrap()[0];
        assert_eq!(e.status, PassageStatus::Reached);
        assert_eq!(e.tau, Some(0));
        // diffusion first pulls the ball edge below theta
        assert!(e.raw.unwrap() >= 1, "{:?}", e.raw);
    }

    #[test]
    fn unreachable_and_budget_are_distinct() {
        let env = RandomEnvironment::sample(EnvParams::homogeneous(1.0), 0).unwrap();
        let s = PassageSetup { t_budget: 2.0, ..small() };
        let g = passage_grid(&s, &[[0.0, 0.0], [8.0, 0.0]]).unwrap();
        let e = passage_times(&env, &s, g, [0.0, 0.0], &[[8.0, 0.0], [500.0, 0.0]]).unwrap();
        assert_eq!(e[0].status, PassageStatus::Budget);
        assert_eq!(e[0].tau, None);
        assert_eq!(e[1].status, PassageStatus::Unreachable);
    }

    #[test]
    fn stationarity_is_bit_exact() {
        let env = RandomEnvironment::sample(EnvParams::checkerboard(1.0, 2.0, 1.0), 4).unwrap();
        let s = small();
        let p = shift_pair(&env, &s, [0.0, 0.0], [5.0, 0.0], [3.25, -1.5]).unwrap();
        assert_eq!(p.shifted_env.status, PassageStatus::Reached);
        assert!(p.exact(), "{p:?}");
        assert!(shift_pair(&env, &s, [0.0, 0.0], [5.0, 0.0], [0.1, 0.0]).is_err());
    }

    #[test]
    fn homogeneous_laws_on_a_short_plan() {
        let env = RandomEnvironment::sample(EnvParams::homogeneous(1.0), 0).unwrap();
        let s = small();
        let plan = collinear_plan(&[[1.0, 0.0], [0.0, 1.0]], 4.0, 8.0);
        let table = passage_table(&env, &s, &plan).unwrap();
        assert!(table.entries.iter().all(|e| e.status == PassageStatus::Reached));
        let rep = check_tau_laws(&table, &[]).unwrap();
        assert_eq!(rep.triples, 2);
        assert!(rep.max_subadditivity_violation <= 1.0, "{rep:?}");
        // the two axes are equivalent under the lattice symmetry
        assert_eq!(table.tau([0.0, 0.0], [8.0, 0.0]), table.tau([0.0, 0.0], [0.0, 8.0]));
        for e in &table.entries {
            assert!(e.tau.unwrap() as f64 <= rep.c_fit * (e.distance() + 1.0) + 1e-12);
        }
    }
}

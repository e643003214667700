//! Monotone explicit finite differences for
//! `u_t = sum A_ij u_ij + sum b_i u_i + f(t,x,u)`.
//!
//! Centered second differences (4-point cross stencil for `A_12`),
//! per-node upwinding of the drift, explicit Euler, clamp to `[0,1]`.

use std::sync::Arc;

use crate::error::{LabError, Result};
use crate::field::{bake, BakedField, Constant, ScalarField};
use crate::grid::{Boundary, Grid, GridState};
use crate::kpp::{CoefficientField, Diffusion, KppReaction, Shape};

/// Values below this are flushed to zero after each step, which keeps the
/// arithmetic out of the subnormal range and bounds the active region.
pub const FLUSH_BELOW: f64 = 1e-300;

/// The 1D fast path checks finiteness and records clamp statistics on every
/// `STATS_EVERY`-th step; non-finite values persist through the clamp, so an
/// instability is still reported within that many steps.
pub const STATS_EVERY: u64 = 16;

/// Values at or above this are set to one, so saturated regions become exact
/// fixed points of the update.
pub const SNAP_ABOVE: f64 = 1.0 - 1e-10;

#[derive(Clone)]
pub struct LocalProblem {
    pub field: CoefficientField,
    pub reaction: KppReaction,
    pub grid: Grid,
    pub initial: GridState,
}

impl LocalProblem {
    pub fn new(field: CoefficientField, reaction: KppReaction, initial: GridState) -> Result<Self> {
        if field.dim != initial.grid.dim {
            return Err(LabError::Invalid(format!(
                "coefficients are {}D but the grid is {}D",
                field.dim, initial.grid.dim
            )));
        }
        if initial.values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(LabError::Invalid("initial data must lie in [0,1]".into()));
        }
        Ok(Self {
            field,
            reaction,
            grid: initial.grid,
            initial,
        })
    }

    /// Same coefficients and reaction with a different initial datum.
    pub fn with_initial(&self, initial: GridState) -> Result<Self> {
        Self::new(self.field.clone(), self.reaction.clone(), initial)
    }

    pub fn with_reaction(&self, reaction: KppReaction) -> Self {
        Self {
            reaction,
            ..self.clone()
        }
    }

    /// Resolution and stencil diagnostics (non-fatal).
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.grid.h > self.field.lambda.sqrt() / 4.0 {
            w.push(format!(
                "spacing h={} exceeds sqrt(lambda)/4={:.4}",
                self.grid.h,
                self.field.lambda.sqrt() / 4.0
            ));
        }
        if let Diffusion::Full([a11, a12, a22]) = &self.field.diffusion {
            let coords = self.grid.coords();
            let dim = self.grid.dim;
            let worst = coords
                .iter()
                .step_by((coords.len() / 4096).max(1))
                .map(|p| {
                    let x = &p[..dim];
                    2.0 * a12.eval(0.0, x).abs() - a11.eval(0.0, x).min(a22.eval(0.0, x))
                })
                .fold(f64::NEG_INFINITY, f64::max);
            if worst > 0.0 {
                w.push(format!(
                    "diffusion matrix not diagonally dominant (2|a12| - min(a11,a22) = {worst:.3e}); \
                     comparison principle not guaranteed"
                ));
            }
        }
        w
    }
}

/// Largest step allowed by `dt <= h^2 / (2 d Lambda + h d b_sup + h^2 L_f)`.
pub fn stable_dt(p: &LocalProblem) -> f64 {
    let h = p.grid.h;
    let d = p.grid.dim as f64;
    h * h
        / (2.0 * d * p.field.lambda_max + h * d * p.field.b_sup + h * h * p.reaction.lipschitz_bound())
}

/// Largest stable step dividing `cadence` into an integer number of steps.
pub fn aligned_dt(max_dt: f64, cadence: f64) -> f64 {
    let n = (cadence / max_dt * (1.0 - 1e-12)).ceil().max(1.0);
    cadence / n
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ClampStats {
    /// Largest pre-clamp excursion outside `[0,1]` in a single step.
    pub max_excursion: f64,
    pub clamped_nodes: u64,
    pub steps: u64,
}

enum ReactionKernel {
    Factor {
        shape: Shape,
        rate: Box<dyn BakedField>,
        values: Vec<f64>,
    },
    General {
        reaction: KppReaction,
    },
}

struct Coefficients {
    steady: bool,
    sources: Vec<(Box<dyn BakedField>, usize)>,
    /// `a11, a12, a22, b0, b1` per node.
    arrays: [Vec<f64>; 5],
    has_cross: bool,
    has_drift: bool,
}

impl Coefficients {
    fn new(field: &CoefficientField, grid: &Grid) -> Self {
        let coords = grid.coords();
        let dim = grid.dim;
        let mut sources: Vec<(Box<dyn BakedField>, usize)> = Vec::new();
        let zero: Arc<dyn ScalarField> = Arc::new(Constant(0.0));
        let (a11, a12, a22, has_cross) = match &field.diffusion {
            Diffusion::Isotropic(a) => (a.clone(), zero.clone(), a.clone(), false),
            Diffusion::Full([a, b, c]) => (a.clone(), b.clone(), c.clone(), dim == 2),
        };
        let b0 = field.drift.first().cloned().unwrap_or_else(|| zero.clone());
        let b1 = field.drift.get(1).cloned().unwrap_or_else(|| zero.clone());
        let has_drift = !field.drift.is_empty();
        for (k, f) in [a11, a12, a22, b0, b1].into_iter().enumerate() {
            sources.push((bake(f, dim, &coords), k));
        }
        let steady = sources.iter().all(|(b, _)| b.is_steady());
        let n = grid.len();
        let mut c = Self {
            steady,
            sources,
            arrays: std::array::from_fn(|_| vec![0.0; n]),
            has_cross,
            has_drift,
        };
        c.refresh(0.0);
        c
    }

    fn refresh(&mut self, t: f64) {
        for (src, k) in &self.sources {
            src.fill(t, &mut self.arrays[*k]);
        }
    }
}

/// Time stepper holding the current state.
pub struct Solver {
    problem: LocalProblem,
    coeffs: Coefficients,
    reaction: ReactionKernel,
    coords: Vec<[f64; 2]>,
    state: GridState,
    next: Vec<f64>,
    /// Node boxes `[i0, i1, j0, j1]` of nonzero values and of every node
    /// written so far (outside the latter both buffers are zero).
    nonzero: Option<[usize; 4]>,
    written: Option<[usize; 4]>,
    /// 1D runs `[p0, p1]` of exact ones in the current and back buffers;
    /// interior nodes of the current run are fixed points of the update.
    plateau: Option<(usize, usize)>,
    back_plateau: Option<(usize, usize)>,
    saturates: bool,
    /// Node-independent 1D coefficients, when steady and constant.
    uniform_line: Option<Uniform>,
    pub dt: f64,
    pub clamp: ClampStats,
}

impl Solver {
    pub fn new(problem: LocalProblem, dt: f64) -> Result<Self> {
        let max = stable_dt(&problem);
        if !(dt > 0.0) || dt > max * (1.0 + 1e-12) {
            return Err(LabError::Invalid(format!(
                "time step {dt} outside (0, {max}] required for monotonicity"
            )));
        }
        let grid = problem.grid;
        let coords = grid.coords();
        let coeffs = Coefficients::new(&problem.field, &grid);
        let reaction = match problem.reaction.factors() {
            Some((rate, shape)) => {
                let baked = bake(rate.clone(), grid.dim, &coords);
                let mut values = vec![0.0; grid.len()];
                baked.fill(0.0, &mut values);
                ReactionKernel::Factor {
                    shape: shape.clone(),
                    rate: baked,
                    values,
                }
            }
            None => ReactionKernel::General {
                reaction: problem.reaction.clone(),
            },
        };
        let state = problem.initial.clone();
        let mut s = Self {
            next: vec![0.0; grid.len()],
            nonzero: None,
            written: None,
            plateau: None,
            back_plateau: None,
            saturates: false,
            uniform_line: None,
            coeffs,
            reaction,
            coords,
            state,
            problem,
            dt,
            clamp: ClampStats::default(),
        };
        s.saturates = match &s.reaction {
            ReactionKernel::Factor { shape, .. } => shape.eval(1.0) == 0.0,
            ReactionKernel::General { .. } => false,
        };
        s.uniform_line = s.detect_uniform();
        s.nonzero = s.nonzero_box();
        s.written = s.nonzero;
        Ok(s)
    }

    /// Solver at the largest stable step aligned with `cadence`.
    pub fn with_cadence(problem: LocalProblem, cadence: f64) -> Result<Self> {
        let dt = aligned_dt(stable_dt(&problem), cadence);
        Self::new(problem, dt)
    }

    pub fn problem(&self) -> &LocalProblem {
        &self.problem
    }

    pub fn state(&self) -> &GridState {
        &self.state
    }

    pub fn time(&self) -> f64 {
        self.state.time
    }

    pub fn into_state(self) -> GridState {
        self.state
    }

    fn nonzero_box(&self) -> Option<[usize; 4]> {
        let g = &self.state.grid;
        let mut b = [usize::MAX, 0, usize::MAX, 0];
        let mut any = false;
        for (k, &v) in self.state.values.iter().enumerate() {
            if v != 0.0 {
                let (i, j) = g.ij(k);
                b[0] = b[0].min(i);
                b[1] = b[1].max(i);
                b[2] = b[2].min(j);
                b[3] = b[3].max(j);
                any = true;
            }
        }
        any.then_some(b)
    }

    /// Advances by exactly `dt` (which may be smaller than the solver step).
    pub fn step_by(&mut self, dt: f64) -> Result<()> {
        let t = self.state.time;
        if !self.coeffs.steady {
            self.coeffs.refresh(t);
        }
        if let ReactionKernel::Factor { rate, values, .. } = &mut self.reaction {
            if !rate.is_steady() {
                rate.fill(t, values);
            }
        }
        let g = self.state.grid;
        let Some(nz) = self.nonzero else {
            // identically zero state stays zero: f(t,x,0) = 0
            self.state.time = t + dt;
            self.clamp.steps += 1;
            return Ok(());
        };
        // nonzero box grown by one node, joined with every node ever written
        // so stale values in the back buffer get overwritten
        let mut r = [
            nz[0].saturating_sub(1),
            (nz[1] + 1).min(g.n[0] - 1),
            if g.dim == 2 { nz[2].saturating_sub(1) } else { 0 },
            if g.dim == 2 { (nz[3] + 1).min(g.n[1] - 1) } else { 0 },
        ];
        if let Some(w) = self.written {
            r = [r[0].min(w[0]), r[1].max(w[1]), r[2].min(w[2]), r[3].max(w[3])];
        }
        let fast = g.dim == 1 && matches!(self.reaction, ReactionKernel::Factor { .. });
        let out = if fast {
            self.update_line(r, t, dt)?
        } else {
            self.update(r, t, dt)?
        };
        std::mem::swap(&mut self.state.values, &mut self.next);
        self.state.time = t + dt;
        self.clamp.steps += 1;
        self.clamp.max_excursion = self.clamp.max_excursion.max(out.excursion);
        self.clamp.clamped_nodes += out.clamped;
        self.written = Some(r);
        self.nonzero = (out.nz[0] <= out.nz[1]).then_some(out.nz);
        if fast && self.saturates {
            self.back_plateau = self.plateau;
            self.plateau = self.track_plateau();
        }
        Ok(())
    }

    /// Advances to `t_target` with full steps and one shorter final step.
    pub fn advance_to(&mut self, t_target: f64) -> Result<()> {
        let remaining = t_target - self.state.time;
        if remaining <= 0.0 {
            return Ok(());
        }
        let n = (remaining / self.dt - 1e-9).ceil().max(1.0) as u64;
        for _ in 0..n - 1 {
            self.step_by(self.dt)?;
        }
        let last = t_target - self.state.time;
        if last > 0.0 {
            self.step_by(last)?;
        }
        self.state.time = t_target;
        Ok(())
    }

    /// 1D factorized-reaction update: the interior loop is branch-free and
    /// monomorphized over the reaction shape.
    fn update_line(&mut self, r: [usize; 4], t: f64, dt: f64) -> Result<UpdateOutcome> {
        let ReactionKernel::Factor { shape, values: rate, .. } = &self.reaction else {
            unreachable!("fast path requires a factorized reaction")
        };
        let n = self.state.grid.n[0];
        let lo = r[0].max(1);
        let hi = r[1].min(n - 2);
        let h = self.state.grid.h;
        let st = Steps {
            ih2: 1.0 / (h * h),
            ih: 1.0 / h,
            dt,
        };
        let u = &self.state.values[..];
        let (ca, cb) = (&self.coeffs.arrays[0], &self.coeffs.arrays[3]);
        let drift = self.coeffs.has_drift;
        let uniform = self.uniform_line;
        let stats = self.clamp.steps % STATS_EVERY == 0;
        let next = &mut self.next[..];
        // segments to update around the interior of the plateau
        let segments = match self.plateau {
            Some((p0, p1)) if p0 + 1 >= lo && p1 <= hi + 1 => {
                fill_ones(next, (p0 + 1, p1 - 1), self.back_plateau.map(|(a, b)| (a + 1, b - 1)));
                [(lo, p0), (p1, hi)]
            }
            _ => [(lo, hi), (1, 0)],
        };
        let mut line = LineOutcome {
            excursion: 0.0,
            clamped: 0,
            finite: true,
        };
        for (a, b) in segments {
            if a > b {
                continue;
            }
            let (uu, nn) = (&u[a - 1..=b + 1], &mut next[a..=b]);
            let part = match uniform {
                Some(c) => run_line(uu, c, nn, st, drift, stats, shape),
                None => {
                    let c = PerNode {
                        a: &ca[a..=b],
                        b: &cb[a..=b],
                        r: &rate[a..=b],
                    };
                    run_line(uu, c, nn, st, drift, stats, shape)
                }
            };
            line.excursion = line.excursion.max(part.excursion);
            line.clamped += part.clamped;
            line.finite &= part.finite;
        }
        if !line.finite {
            let node = (lo..=hi).find(|&k| !self.next[k].is_finite()).unwrap_or(lo);
            return Err(LabError::Instability { t, node });
        }
        let mut out = UpdateOutcome::from(line);
        // the two end nodes go through the general path
        for end in [0, n - 1] {
            if end >= r[0] && end <= r[1] {
                let e = self.update([end, end, 0, 0], t, dt)?;
                out.excursion = out.excursion.max(e.excursion);
                out.clamped += e.clamped;
            }
        }
        if let Some(first) = (r[0]..=r[1]).find(|&k| self.next[k] != 0.0) {
            let last = (r[0]..=r[1]).rev().find(|&k| self.next[k] != 0.0).unwrap_or(first);
            out.nz = [first, last, 0, 0];
        }
        Ok(out)
    }

    fn detect_uniform(&self) -> Option<Uniform> {
        let ReactionKernel::Factor { rate, values, .. } = &self.reaction else {
            return None;
        };
        if self.state.grid.dim != 1 || !self.coeffs.steady || !rate.is_steady() {
            return None;
        }
        let constant = |v: &[f64]| v.iter().all(|&x| x == v[0]);
        let [a, _, _, b, _] = &self.coeffs.arrays;
        (constant(a) && constant(b) && constant(values)).then(|| Uniform {
            a: a[0],
            b: b[0],
            r: values[0],
        })
    }

    /// Run of exact ones in the freshly swapped-in state, updated from the
    /// previous run by moving its ends; a full rescan happens every 256 steps.
    fn track_plateau(&self) -> Option<(usize, usize)> {
        let u = &self.state.values;
        let n = u.len();
        let found = match self.back_plateau {
            Some((p0, p1)) if self.clamp.steps % 256 != 0 => {
                let mid = (p0 + p1) / 2;
                if u[mid] != 1.0 {
                    return longest_run_of_ones(u);
                }
                let mut a = p0.min(mid);
                while a < mid && u[a] != 1.0 {
                    a += 1;
                }
                while a > 0 && u[a - 1] == 1.0 {
                    a -= 1;
                }
                let mut b = p1.max(mid);
                while b > mid && u[b] != 1.0 {
                    b -= 1;
                }
                while b + 1 < n && u[b + 1] == 1.0 {
                    b += 1;
                }
                Some((a, b))
            }
            Some(_) => longest_run_of_ones(u),
            None if self.clamp.steps % 256 == 0 => longest_run_of_ones(u),
            None => None,
        };
        found.filter(|&(a, b)| b >= a + 2)
    }

    fn update(&mut self, r: [usize; 4], t: f64, dt: f64) -> Result<UpdateOutcome> {
        let g = self.state.grid;
        let u = &self.state.values;
        let next = &mut self.next;
        let h = g.h;
        let ih2 = 1.0 / (h * h);
        let ih = 1.0 / h;
        let [a11, a12, a22, b0, b1] = &self.coeffs.arrays;
        let has_cross = self.coeffs.has_cross;
        let has_drift = self.coeffs.has_drift;
        let nx = g.n[0];
        let neumann = g.boundary == Boundary::NeumannZero;
        let mut out = UpdateOutcome::default();
        let ghost = |i: isize, j: isize| -> f64 {
            let fix = |k: isize, n: usize| -> Option<usize> {
                if k < 0 {
                    neumann.then_some((-k) as usize)
                } else if k as usize >= n {
                    neumann.then(|| 2 * (n - 1) - k as usize)
                } else {
                    Some(k as usize)
                }
            };
            match (fix(i, g.n[0]), fix(j, g.n[1])) {
                (Some(a), Some(b)) => u[b * nx + a],
                _ => 0.0,
            }
        };
        for j in r[2]..=r[3] {
            for i in r[0]..=r[1] {
                let k = j * nx + i;
                let c = u[k];
                let interior_x = i > 0 && i + 1 < nx;
                let (w, e) = if interior_x {
                    (u[k - 1], u[k + 1])
                } else {
                    (ghost(i as isize - 1, j as isize), ghost(i as isize + 1, j as isize))
                };
                let mut rhs = a11[k] * (w - 2.0 * c + e) * ih2;
                if has_drift {
                    let b = b0[k];
                    rhs += if b > 0.0 { b * (e - c) } else { b * (c - w) } * ih;
                }
                if g.dim == 2 {
                    let interior_y = j > 0 && j + 1 < g.n[1];
                    let (s, nn) = if interior_y {
                        (u[k - nx], u[k + nx])
                    } else {
                        (ghost(i as isize, j as isize - 1), ghost(i as isize, j as isize + 1))
                    };
                    rhs += a22[k] * (s - 2.0 * c + nn) * ih2;
                    if has_drift {
                        let b = b1[k];
                        rhs += if b > 0.0 { b * (nn - c) } else { b * (c - s) } * ih;
                    }
                    if has_cross {
                        let (ii, jj) = (i as isize, j as isize);
                        let d = if interior_x && interior_y {
                            u[k + nx + 1] - u[k - nx + 1] - u[k + nx - 1] + u[k - nx - 1]
                        } else {
                            ghost(ii + 1, jj + 1) - ghost(ii + 1, jj - 1) - ghost(ii - 1, jj + 1)
                                + ghost(ii - 1, jj - 1)
                        };
                        rhs += 2.0 * a12[k] * d * 0.25 * ih2;
                    }
                }
                rhs += match &self.reaction {
                    ReactionKernel::Factor { shape, values, .. } => values[k] * shape.eval(c),
                    ReactionKernel::General { reaction } => {
                        let p = &self.coords[k];
                        reaction.eval(t, &p[..g.dim], c)
                    }
                };
                let v = c + dt * rhs;
                if !v.is_finite() {
                    return Err(LabError::Instability { t, node: k });
                }
                let e = (v - 1.0).max(-v);
                if e > 0.0 {
                    out.excursion = out.excursion.max(e);
                    out.clamped += 1;
                }
                let v = finish(v.min(1.0));
                if v != 0.0 {
                    out.nz[0] = out.nz[0].min(i);
                    out.nz[1] = out.nz[1].max(i);
                    out.nz[2] = out.nz[2].min(j);
                    out.nz[3] = out.nz[3].max(j);
                }
                next[k] = v;
            }
        }
        Ok(out)
    }
}

/// Sets `next[a..=b]` to one outside the range already known to hold ones.
fn fill_ones(next: &mut [f64], (a, b): (usize, usize), known: Option<(usize, usize)>) {
    if a > b {
        return;
    }
    match known {
        Some((ka, kb)) if ka <= kb && ka <= b && kb >= a => {
            next[a..ka.max(a)].fill(1.0);
            if kb < b {
                next[kb + 1..=b].fill(1.0);
            }
        }
        _ => next[a..=b].fill(1.0),
    }
}

fn longest_run_of_ones(u: &[f64]) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize)> = None;
    let mut start = None;
    for (k, &v) in u.iter().chain(std::iter::once(&0.0)).enumerate() {
        match (v == 1.0, start) {
            (true, None) => start = Some(k),
            (false, Some(s)) => {
                if best.map_or(true, |(a, b)| k - 1 - s > b - a) {
                    best = Some((s, k - 1));
                }
                start = None;
            }
            _ => {}
        }
    }
    best
}

trait LineCoef: Copy {
    fn a(&self, k: usize) -> f64;
    fn b(&self, k: usize) -> f64;
    fn r(&self, k: usize) -> f64;
}

#[derive(Clone, Copy)]
struct Uniform {
    a: f64,
    b: f64,
    r: f64,
}

impl LineCoef for Uniform {
    #[inline(always)]
    fn a(&self, _: usize) -> f64 {
        self.a
    }
    #[inline(always)]
    fn b(&self, _: usize) -> f64 {
        self.b
    }
    #[inline(always)]
    fn r(&self, _: usize) -> f64 {
        self.r
    }
}

/// Per-node coefficients sliced to the updated range.
#[derive(Clone, Copy)]
struct PerNode<'a> {
    a: &'a [f64],
    b: &'a [f64],
    r: &'a [f64],
}

impl LineCoef for PerNode<'_> {
    #[inline(always)]
    fn a(&self, k: usize) -> f64 {
        self.a[k]
    }
    #[inline(always)]
    fn b(&self, k: usize) -> f64 {
        self.b[k]
    }
    #[inline(always)]
    fn r(&self, k: usize) -> f64 {
        self.r[k]
    }
}

#[derive(Clone, Copy)]
struct Steps {
    ih2: f64,
    ih: f64,
    dt: f64,
}

/// Updates `next[k]` from `u[k..k+3]` for every `k` of `next`, where `u`
/// starts one node left of the range.
#[inline(always)]
fn line_kernel<C: LineCoef, const DRIFT: bool, const STATS: bool>(
    u: &[f64],
    coef: C,
    next: &mut [f64],
    st: Steps,
    shape: impl Fn(f64) -> f64,
) -> LineOutcome {
    let len = next.len();
    let u = &u[..len + 2];
    let node = |k: usize| -> f64 {
        let (w, c, e) = (u[k], u[k + 1], u[k + 2]);
        let mut rhs = coef.a(k) * (w - 2.0 * c + e) * st.ih2 + coef.r(k) * shape(c);
        if DRIFT {
            let bk = coef.b(k);
            rhs += (bk.max(0.0) * (e - c) + bk.min(0.0) * (c - w)) * st.ih;
        }
        c + st.dt * rhs
    };
    if !STATS {
        for (k, out) in next.iter_mut().enumerate() {
            *out = finish(node(k));
        }
        return LineOutcome {
            excursion: 0.0,
            clamped: 0,
            finite: true,
        };
    }
    let mut excursion: f64 = 0.0;
    let mut clamped = 0;
    let mut finite = true;
    for (k, out) in next.iter_mut().enumerate() {
        let v = node(k);
        finite &= v.is_finite();
        let e = (v - 1.0).max(-v);
        if e > 0.0 {
            excursion = excursion.max(e);
            clamped += 1;
        }
        *out = finish(v);
    }
    LineOutcome {
        excursion,
        clamped,
        finite,
    }
}

fn run_line<C: LineCoef>(
    u: &[f64],
    coef: C,
    next: &mut [f64],
    st: Steps,
    drift: bool,
    stats: bool,
    shape: &Shape,
) -> LineOutcome {
    macro_rules! go {
        ($d:expr, $s:expr) => {
            match shape {
                Shape::Logistic => line_kernel::<C, $d, $s>(u, coef, next, st, |u| u * (1.0 - u)),
                Shape::Template => line_kernel::<C, $d, $s>(u, coef, next, st, |u| u.min(1.0 - u)),
                Shape::Cubic => line_kernel::<C, $d, $s>(u, coef, next, st, |u| u * u * (1.0 - u)),
                Shape::Custom { f, .. } => line_kernel::<C, $d, $s>(u, coef, next, st, |u| f(u)),
            }
        };
    }
    match (drift, stats) {
        (true, true) => go!(true, true),
        (true, false) => go!(true, false),
        (false, true) => go!(false, true),
        (false, false) => go!(false, false),
    }
}

/// Clamp to `[0,1]`, flushing tiny values to zero and snapping values within
/// a few ulps of one to exactly one (both maps are non-decreasing).
#[inline(always)]
fn finish(v: f64) -> f64 {
    let v = if v >= SNAP_ABOVE { 1.0 } else { v };
    if v < FLUSH_BELOW {
        0.0
    } else {
        v
    }
}

struct LineOutcome {
    excursion: f64,
    clamped: u64,
    finite: bool,
}

impl From<LineOutcome> for UpdateOutcome {
    fn from(l: LineOutcome) -> Self {
        Self {
            excursion: l.excursion,
            clamped: l.clamped,
            ..Self::default()
        }
    }
}

struct UpdateOutcome {
    excursion: f64,
    clamped: u64,
    nz: [usize; 4],
}

impl Default for UpdateOutcome {
    fn default() -> Self {
        Self {
            excursion: 0.0,
            clamped: 0,
            nz: [usize::MAX, 0, usize::MAX, 0],
        }
    }
}

/// Snapshots of a run at its output times.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<GridState>,
    pub dt: f64,
    pub clamp: ClampStats,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.time).collect()
    }

    pub fn last(&self) -> &GridState {
        self.states.last().expect("trajectory holds the initial state")
    }

    /// Snapshot closest to `t`.
    pub fn at(&self, t: f64) -> &GridState {
        self.states
            .iter()
            .min_by(|a, b| (a.time - t).abs().total_cmp(&(b.time - t).abs()))
            .expect("non-empty trajectory")
    }
}

/// Runs to `t_end`, recording a snapshot every `cadence` (and at `t_end`).
pub fn solve(p: &LocalProblem, t_end: f64, cadence: f64) -> Result<Trajectory> {
    if !(cadence > 0.0) {
        return Err(LabError::Invalid(format!("cadence must be positive, got {cadence}")));
    }
    let mut times = Vec::new();
    let mut k = 1u64;
    while (k as f64) * cadence < t_end * (1.0 - 1e-12) {
        times.push(k as f64 * cadence);
        k += 1;
    }
    times.push(t_end);
    solve_at(p, &times, Some(cadence))
}

/// Runs through the ascending `times`, recording the initial state and a
/// snapshot at each requested time.
pub fn solve_at(p: &LocalProblem, times: &[f64], cadence: Option<f64>) -> Result<Trajectory> {
    let max = stable_dt(p);
    let dt = cadence.map_or(max, |c| aligned_dt(max, c));
    let mut solver = Solver::new(p.clone(), dt)?;
    let mut states = vec![solver.state().clone()];
    for &t in times {
        if t < solver.time() {
            return Err(LabError::Invalid("output times must be ascending".into()));
        }
        solver.advance_to(t)?;
        states.push(solver.state().clone());
    }
    Ok(Trajectory {
        states,
        dt,
        clamp: solver.clamp,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderingReport {
    /// `max_x (a - b)_+` per common snapshot.
    pub per_time: Vec<(f64, f64)>,
    pub max_violation: f64,
}

/// Node-wise check that `a <= b` along two trajectories with common times.
pub fn compare(a: &Trajectory, b: &Trajectory) -> Result<OrderingReport> {
    if a.states.len() != b.states.len() {
        return Err(LabError::GridMismatch(format!(
            "{} vs {} snapshots",
            a.states.len(),
            b.states.len()
        )));
    }
    let mut per_time = Vec::with_capacity(a.states.len());
    for (sa, sb) in a.states.iter().zip(&b.states) {
        if (sa.time - sb.time).abs() > 1e-9 * sa.time.abs().max(1.0) {
            return Err(LabError::GridMismatch(format!(
                "snapshot times {} vs {}",
                sa.time, sb.time
            )));
        }
        per_time.push((sa.time, sa.max_excess_over(sb)?));
    }
    let max_violation = per_time.iter().map(|p| p.1).fold(0.0, f64::max);
    Ok(OrderingReport {
        per_time,
        max_violation,
    })
}

/// `v(t,x) = exp(a t - (x - x0)·e)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpSupersolution {
    pub a: f64,
    pub e: [f64; 2],
    pub x0: [f64; 2],
}

impl ExpSupersolution {
    pub fn eval(&self, t: f64, x: &[f64]) -> f64 {
        let dot: f64 = x.iter().enumerate().map(|(k, v)| (v - self.x0[k]) * self.e[k]).sum();
        (self.a * t - dot).exp()
    }
}

/// Growth rate making `exp(a t - x·e)` a supersolution of the discrete
/// scheme for a unit direction `e`: the discrete second differences and
/// upwind differences of the exponential plus the reaction Lipschitz bound.
pub fn discrete_supersolution_rate(p: &LocalProblem) -> f64 {
    let h = p.grid.h;
    let d = p.grid.dim as f64;
    // per axis |e_k| <= 1 and (cosh(s h) - 1) / h^2 is increasing in s
    let second = 2.0 * (h.cosh() - 1.0) / (h * h);
    let first = (h.exp() - 1.0) / h;
    let cross = if matches!(p.field.diffusion, Diffusion::Full(_)) && p.grid.dim == 2 {
        // |4-point stencil| <= (e^h - e^-h)^2 / (4 h^2) per unit a12
        2.0 * p.field.lambda_max * (h.sinh() / h).powi(2)
    } else {
        0.0
    };
    d * p.field.lambda_max * second + d * p.field.b_sup * first + cross + p.reaction.lipschitz_bound()
}

/// `max (u - v)_+` over snapshots and nodes where `v <= 1`.
pub fn supersolution_violation(traj: &Trajectory, v: &ExpSupersolution) -> f64 {
    let mut worst: f64 = 0.0;
    for s in &traj.states {
        let dim = s.grid.dim;
        for (k, &u) in s.values.iter().enumerate() {
            let p = s.grid.coord(k);
            let vv = v.eval(s.time, &p[..dim]);
            if vv <= 1.0 {
                worst = worst.max(u - vv);
            }
        }
    }
    worst
}

/// Plain-text run manifest with `key = value` lines.
pub fn manifest_entries(p: &LocalProblem, traj: &Trajectory) -> Vec<(String, String)> {
    vec![
        ("dim".into(), p.grid.dim.to_string()),
        ("h".into(), p.grid.h.to_string()),
        ("nodes".into(), p.grid.len().to_string()),
        ("dt".into(), traj.dt.to_string()),
        ("steps".into(), traj.clamp.steps.to_string()),
        ("clamp_max_excursion".into(), format!("{:e}", traj.clamp.max_excursion)),
        ("clamp_nodes".into(), traj.clamp.clamped_nodes.to_string()),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FnField;

    fn logistic_line(h: f64, half: f64, u0: impl Fn(f64) -> f64) -> LocalProblem {
        let g = Grid::line(-half, half, h, Boundary::DirichletZero).unwrap();
        let init = GridState::from_fn(g, |x| u0(x[0]));
        LocalProblem::new(
            CoefficientField::isotropic(1, 1.0),
            KppReaction::homogeneous_logistic(),
            init,
        )
        .unwrap()
    }

    fn no_reaction() -> KppReaction {
        KppReaction::factorized(Arc::new(Constant(0.0)), Shape::Logistic)
    }

    #[test]
    fn stable_dt_formula() {
        let p = logistic_line(0.1, 5.0, |_| 0.0);
        assert!((stable_dt(&p) - 0.01 / 2.01).abs() < 1e-15);
        let mut q = p.clone();
        q.field = q.field.with_constant_drift(&[2.0]);
        assert!((stable_dt(&q) - 0.01 / (2.0 + 0.2 + 0.01)).abs() < 1e-15);
    }

    #[test]
    fn aligned_dt_divides_cadence() {
        let dt = aligned_dt(0.004975, 1.0);
        assert!(dt <= 0.004975);
        let n = 1.0 / dt;
        assert!((n - n.round()).abs() < 1e-9);
    }

    #[test]
    fn rejects_unstable_step() {
        let p = logistic_line(0.1, 5.0, |_| 0.0);
        assert!(Solver::new(p.clone(), stable_dt(&p) * 1.01).is_err());
    }

    #[test]
    fn heat_variance_grows_linearly() {
        let mut p = logistic_line(0.05, 30.0, |x| 0.5 * (-x * x / 2.0).exp());
        p.reaction = no_reaction();
        let traj = solve(&p, 4.0, 1.0).unwrap();
        let var = |s: &GridState| {
            let m: f64 = s.values.iter().sum();
            (0..s.grid.len())
                .map(|k| s.grid.coord(k)[0].powi(2) * s.values[k])
                .sum::<f64>()
                / m
        };
        let v0 = var(&traj.states[0]);
        let v4 = var(traj.last());
        assert!(((v4 - v0) / 8.0 - 1.0).abs() < 0.01, "{v0} {v4}");
    }

    #[test]
    fn anisotropic_cross_moment() {
        let g = Grid::rect([-12.0, -12.0], [12.0, 12.0], 0.2, Boundary::DirichletZero).unwrap();
        let init = GridState::from_fn(g, |x| 0.5 * (-(x[0] * x[0] + x[1] * x[1])).exp());
        let field = CoefficientField::isotropic(2, 1.0).with_diffusion(
            Diffusion::Full([
                Arc::new(Constant(1.0)),
                Arc::new(Constant(0.3)),
                Arc::new(Constant(1.0)),
            ]),
            0.7,
            1.3,
        );
        let p = LocalProblem::new(field, no_reaction(), init).unwrap();
        assert!(p.warnings().is_empty());
        let traj = solve(&p, 1.0, 0.5).unwrap();
        let moment = |s: &GridState| {
            (0..s.grid.len())
                .map(|k| {
                    let c = s.grid.coord(k);
                    c[0] * c[1] * s.values[k]
                })
                .sum::<f64>()
        };
        let mass: f64 = traj.states[0].values.iter().sum();
        let grown = moment(traj.last()) - moment(&traj.states[0]);
        assert!((grown / (2.0 * 0.3 * mass) - 1.0).abs() < 1e-6, "{grown}");
    }

    #[test]
    fn non_dominant_matrix_warns() {
        let g = Grid::rect([-1.0, -1.0], [1.0, 1.0], 0.2, Boundary::DirichletZero).unwrap();
        let field = CoefficientField::isotropic(2, 1.0).with_diffusion(
            Diffusion::Full([
                Arc::new(Constant(1.0)),
                Arc::new(Constant(0.8)),
                Arc::new(Constant(1.0)),
            ]),
            0.2,
            1.8,
        );
        let p = LocalProblem::new(field, no_reaction(), GridState::zeros(g)).unwrap();
        assert!(p.warnings().iter().any(|w| w.contains("diagonally dominant")));
    }

    #[test]
    fn constant_states_are_stationary() {
        let p = logistic_line(0.1, 5.0, |_| 0.0);
        assert!(solve(&p, 2.0, 1.0).unwrap().last().values.iter().all(|&v| v == 0.0));
        let g = Grid::line(-5.0, 5.0, 0.1, Boundary::NeumannZero).unwrap();
        let p = LocalProblem::new(
            CoefficientField::isotropic(1, 1.0).with_constant_drift(&[1.5]),
            KppReaction::homogeneous_logistic(),
            GridState::from_fn(g, |_| 1.0),
        )
        .unwrap();
        assert!(solve(&p, 2.0, 1.0).unwrap().last().values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn ordered_data_stay_ordered() {
        let rate = crate::kpp::periodic_rate(2.0, 1.0);
        let g = Grid::line(-20.0, 20.0, 0.05, Boundary::DirichletZero).unwrap();
        let lo = GridState::from_fn(g, |x| if x[0].abs() < 2.0 { 0.4 } else { 0.0 });
        let hi = GridState {
            values: lo.values.iter().map(|v| (v + 0.1).min(1.0)).collect(),
            ..lo.clone()
        };
        let field = CoefficientField::isotropic(1, 1.0).with_constant_drift(&[0.7]);
        let pa = LocalProblem::new(field.clone(), KppReaction::logistic(rate.clone()), lo).unwrap();
        let pb = LocalProblem::new(field, KppReaction::logistic(rate), hi).unwrap();
        let ta = solve(&pa, 5.0, 0.5).unwrap();
        let tb = solve(&pb, 5.0, 0.5).unwrap();
        let rep = compare(&ta, &tb).unwrap();
        assert!(rep.max_violation <= 1e-10, "{}", rep.max_violation);
        assert_eq!(compare(&ta, &ta).unwrap().max_violation, 0.0);
    }

    #[test]
    fn exponential_supersolution_dominates() {
        let p = logistic_line(0.05, 30.0, |x| if (0.0..1.0).contains(&x) { 1.0 } else { 0.0 });
        let a = discrete_supersolution_rate(&p);
        // v(0,x) = e^{1-x} >= 1 on the support
        let v = ExpSupersolution {
            a,
            e: [1.0, 0.0],
            x0: [1.0, 0.0],
        };
        let traj = solve(&p, 5.0, 0.25).unwrap();
        assert!(supersolution_violation(&traj, &v) <= 1e-12);
    }

    #[test]
    fn long_run_stays_in_range() {
        let p = logistic_line(0.1, 15.0, |x| 0.5 * (1.0 + (3.0 * x).sin()).min(1.0));
        let dt = stable_dt(&p);
        let mut s = Solver::new(p, dt).unwrap();
        for _ in 0..100_000 {
            s.step_by(dt).unwrap();
        }
        assert!(s.state().in_range());
        assert!(s.clamp.max_excursion <= 1e-8, "{}", s.clamp.max_excursion);
    }

    #[test]
    fn time_dependent_rate_is_refreshed() {
        // u_t = r(t) u(1-u) with spatially constant data: exact logistic ODE
        let rate: Arc<dyn ScalarField> = Arc::new(FnField::new(|t, _| 1.0 + t).with_bounds(1.0, 3.0));
        let g = Grid::line(0.0, 1.0, 0.02, Boundary::NeumannZero).unwrap();
        let p = LocalProblem::new(
            CoefficientField::isotropic(1, 1.0),
            KppReaction::logistic(rate),
            GridState::from_fn(g, |_| 0.1),
        )
        .unwrap();
        let traj = solve(&p, 1.0, 0.5).unwrap();
        // log(u/(1-u)) grows by int_0^1 (1+t) dt = 1.5
        let exact = {
            let z = (0.1f64 / 0.9).ln() + 1.5;
            1.0 / (1.0 + (-z).exp())
        };
        let got = traj.last().values[3];
        assert!((got - exact).abs() < 2e-4, "{got} vs {exact}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn update_is_monotone(
                vals in proptest::collection::vec(0.0f64..=1.0, 16),
                bump_at in 0usize..16,
                bump in 0.0f64..0.5,
                drift in -2.0f64..2.0,
            ) {
                let g = Grid::line(0.0, 1.5, 0.1, Boundary::NeumannZero).unwrap();
                let field = CoefficientField::isotropic(1, 1.0).with_constant_drift(&[drift]);
                let r = KppReaction::logistic(crate::kpp::periodic_rate(1.5, 0.5));
                let a = GridState { grid: g, time: 0.0, values: vals.clone() };
                let mut bumped = vals;
                bumped[bump_at] = (bumped[bump_at] + bump).min(1.0);
                let b = GridState { values: bumped, ..a.clone() };
                let pa = LocalProblem::new(field.clone(), r.clone(), a).unwrap();
                let pb = LocalProblem::new(field, r, b).unwrap();
                let dt = stable_dt(&pa);
                let mut sa = Solver::new(pa, dt).unwrap();
                let mut sb = Solver::new(pb, dt).unwrap();
                sa.step_by(dt).unwrap();
                sb.step_by(dt).unwrap();
                for (x, y) in sa.state().values.iter().zip(&sb.state().values) {
                    prop_assert!(x <= y);
                }
            }
        }
    }
}

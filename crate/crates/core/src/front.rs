//! Level-set tracking in 1D, fits of `x(t) = s t - k ln t + q`, and the
//! constant-advection sharpness experiment.

use std::sync::Arc;

use crate::error::{LabError, Result};
use crate::field::Constant;
use crate::grid::{Boundary, Grid, GridState};
use crate::kpp::{CoefficientField, KppReaction, Shape};
use crate::local::{stable_dt, LocalProblem, Solver, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontFit {
    pub speed: f64,
    pub log_coeff: f64,
    pub offset: f64,
    /// Root-mean-square residual of the fit.
    pub residual: f64,
}

impl FrontFit {
    pub fn position(&self, t: f64) -> f64 {
        self.speed * t - self.log_coeff * t.ln() + self.offset
    }
}

#[derive(Debug, Clone)]
pub struct FrontTrack {
    pub theta: f64,
    pub times: Vec<f64>,
    pub positions: Vec<f64>,
    pub fit: Option<FrontFit>,
}

impl FrontTrack {
    /// `(t, x, residual)` rows for export.
    pub fn rows(&self) -> Vec<(f64, f64, f64)> {
        self.times
            .iter()
            .zip(&self.positions)
            .map(|(&t, &x)| {
                let r = self.fit.map_or(f64::NAN, |f| x - f.position(t));
                (t, x, r)
            })
            .collect()
    }
}

/// Default start of the fit window, skipping the initial transient.
pub const FIT_T_MIN: f64 = 20.0;

/// Least squares for `x = s t - k ln t + q` over samples with `t >= t_min`.
/// With `speed = Some(s)` only `k` and `q` are fitted.
pub fn fit_front(times: &[f64], xs: &[f64], t_min: f64, speed: Option<f64>) -> Option<FrontFit> {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(xs)
        .filter(|(t, x)| **t >= t_min && **t > 0.0 && x.is_finite())
        .map(|(&t, &x)| (t, x))
        .collect();
    let (speed, log_coeff, offset) = match speed {
        None => {
            if pts.len() < 3 {
                return None;
            }
            let rows: Vec<[f64; 3]> = pts.iter().map(|&(t, _)| [t, -t.ln(), 1.0]).collect();
            let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
            let c = least_squares::<3>(&rows, &ys)?;
            (c[0], c[1], c[2])
        }
        Some(s) => {
            if pts.len() < 2 {
                return None;
            }
            let rows: Vec<[f64; 2]> = pts.iter().map(|&(t, _)| [-t.ln(), 1.0]).collect();
            let ys: Vec<f64> = pts.iter().map(|&(t, x)| x - s * t).collect();
            let c = least_squares::<2>(&rows, &ys)?;
            (s, c[0], c[1])
        }
    };
    let fit = FrontFit {
        speed,
        log_coeff,
        offset,
        residual: 0.0,
    };
    let ss: f64 = pts.iter().map(|&(t, x)| (x - fit.position(t)).powi(2)).sum();
    Some(FrontFit {
        residual: (ss / pts.len() as f64).sqrt(),
        ..fit
    })
}

/// Normal equations with column scaling, solved by Gaussian elimination
/// with partial pivoting.
fn least_squares<const N: usize>(rows: &[[f64; N]], ys: &[f64]) -> Option<[f64; N]> {
    let mut scale = [0.0f64; N];
    for r in rows {
        for k in 0..N {
            scale[k] = scale[k].max(r[k].abs());
        }
    }
    if scale.iter().any(|&s| s == 0.0) {
        return None;
    }
    let mut m = [[0.0f64; N]; N];
    let mut rhs = [0.0f64; N];
    for (r, &y) in rows.iter().zip(ys) {
        for a in 0..N {
            let ra = r[a] / scale[a];
            rhs[a] += ra * y;
            for b in 0..N {
                m[a][b] += ra * r[b] / scale[b];
            }
        }
    }
    for col in 0..N {
        let piv = (col..N).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))?;
        if m[piv][col].abs() < 1e-14 {
            return None;
        }
        m.swap(col, piv);
        rhs.swap(col, piv);
        for row in col + 1..N {
            let f = m[row][col] / m[col][col];
            for k in col..N {
                m[row][k] -= f * m[col][k];
            }
            rhs[row] -= f * rhs[col];
        }
    }
    let mut x = [0.0f64; N];
    for row in (0..N).rev() {
        let mut s = rhs[row];
        for k in row + 1..N {
            s -= m[row][k] * x[k];
        }
        x[row] = s / m[row][row];
    }
    for k in 0..N {
        x[k] /= scale[k];
    }
    Some(x)
}

/// Rightmost level-`theta` crossings along a stored trajectory; the fit uses
/// samples with `t >= t_min`.
pub fn track(traj: &Trajectory, theta: f64, t_min: f64) -> Result<FrontTrack> {
    let mut times = Vec::new();
    let mut positions = Vec::new();
    for s in &traj.states {
        if s.grid.dim != 1 {
            return Err(LabError::Invalid("front tracking needs a 1D trajectory".into()));
        }
        if let Some(x) = s.rightmost_crossing(theta) {
            times.push(s.time);
            positions.push(x);
        }
    }
    if positions.is_empty() {
        return Err(LabError::Invalid(format!("level {theta} never attained")));
    }
    let fit = fit_front(&times, &positions, t_min, None);
    Ok(FrontTrack {
        theta,
        times,
        positions,
        fit,
    })
}

/// Runs `p` to `t_end` and records rightmost crossings of each level every
/// `cadence` without storing the states.
pub fn track_run(
    p: &LocalProblem,
    thetas: &[f64],
    t_end: f64,
    cadence: f64,
    t_min: f64,
) -> Result<Vec<FrontTrack>> {
    let mut solver = Solver::with_cadence(p.clone(), cadence)?;
    let mut tracks: Vec<FrontTrack> = thetas
        .iter()
        .map(|&theta| FrontTrack {
            theta,
            times: Vec::new(),
            positions: Vec::new(),
            fit: None,
        })
        .collect();
    let n = (t_end / cadence).round() as usize;
    for k in 1..=n {
        solver.advance_to(k as f64 * cadence)?;
        for tr in &mut tracks {
            if let Some(x) = solver.state().rightmost_crossing(tr.theta) {
                tr.times.push(solver.time());
                tr.positions.push(x);
            }
        }
        if solver.state().values[solver.state().grid.n[0] - 1] > 1e-8 {
            return Err(LabError::Refused(format!(
                "front reached the domain edge at t={}",
                solver.time()
            )));
        }
    }
    for tr in &mut tracks {
        tr.fit = fit_front(&tr.times, &tr.positions, t_min, None);
    }
    Ok(tracks)
}

/// Half-line grid `[x_c, x_c + half]` for data symmetric about `x_c`, with
/// the reflecting boundary at `x_c` reproducing the full-line solution.
pub fn symmetric_half_line(center: f64, half: f64, h: f64) -> Result<Grid> {
    Grid::line(center, center + half, h, Boundary::NeumannZero)
}

/// `u_t = u_xx + g(u)` with `u(0) = 1` on `(0,1)`, on the half line right of
/// `x = 1/2`; `half` must exceed the furthest point the run will reach.
pub fn unit_interval_problem(shape: Shape, h: f64, half: f64) -> Result<LocalProblem> {
    let g = symmetric_half_line(0.5, half, h)?;
    let init = GridState::from_fn(g, |x| if x[0] > 0.0 && x[0] < 1.0 { 1.0 } else { 0.0 });
    LocalProblem::new(
        CoefficientField::isotropic(1, 1.0),
        KppReaction::factorized(Arc::new(Constant(1.0)), shape),
        init,
    )
}

/// Domain half-width large enough for a unit-interval start run to `t_end`:
/// the front plus the range where the leading tail stays above the flush
/// threshold.
pub fn half_width_for(t_end: f64) -> f64 {
    let tail = 2.0 * t_end * (1.0 + 700.0 / t_end.max(1.0)).sqrt();
    (tail.max(2.0 * t_end + 60.0) + 20.0).ceil()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SharpnessRow {
    pub t: f64,
    pub y: f64,
    /// `u(t, y_t)`
    pub u_at: f64,
    /// `sup_n u_n'(t - delta t, y_t)`
    pub lower_expr: f64,
    /// `sup_n u_n'(t + t^delta, y_t)`
    pub upper_expr: f64,
}

#[derive(Debug, Clone)]
pub struct SharpnessReport {
    pub b_bar: f64,
    pub delta: f64,
    pub h: f64,
    pub fit: FrontFit,
    pub rows: Vec<SharpnessRow>,
}

impl SharpnessReport {
    /// Largest `(lower_expr - u)_+` and `(u - upper_expr)_+` over rows with
    /// `t >= t_from`.
    pub fn violations(&self, t_from: f64) -> (f64, f64) {
        self.rows.iter().filter(|r| r.t >= t_from).fold((0.0f64, 0.0f64), |acc, r| {
            (
                acc.0.max(r.lower_expr - r.u_at),
                acc.1.max(r.u_at - r.upper_expr),
            )
        })
    }
}

/// The constant-advection fixture `u_t = u_xx + b u_x + g(u)` with
/// `g(u) = min{u, 1-u}` and `u(0) = 1` on `(0,1)`. Since `g` equals its own
/// template, the single active cube member `u_0'` coincides with `u`, and
/// `u(t,x) = w(t, x + b t)` with `w` the solution without advection.
///
/// `y_t = (2 - b) t - k ln t + q` uses `k`, `q` fitted from the level-1/2
/// front of `w` over `[FIT_T_MIN, t_end]`.
pub fn sharpness_run(b_bar: f64, delta: f64, t_end: f64, h: f64, samples: &[f64]) -> Result<SharpnessReport> {
    if b_bar < 0.0 || !(delta > 0.0 && delta < 1.0) {
        return Err(LabError::Invalid(format!("need b >= 0 and delta in (0,1), got {b_bar}, {delta}")));
    }
    let t_far = samples
        .iter()
        .map(|&t| t + t.powf(delta))
        .fold(t_end, f64::max);
    let half = half_width_for(t_far);
    let p = unit_interval_problem(Shape::Template, h, half)?;
    let dt = stable_dt(&p);

    let mut events: Vec<(f64, usize, u8)> = Vec::new();
    for (k, &t) in samples.iter().enumerate() {
        events.push((t - delta * t, k, 0));
        events.push((t, k, 1));
        events.push((t + t.powf(delta), k, 2));
    }
    let mut k = 1usize;
    while k as f64 <= t_far {
        events.push((k as f64, usize::MAX, 3));
        k += 1;
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));

    let mut solver = Solver::new(p, dt)?;
    let mut fronts = (Vec::new(), Vec::new());
    let mut snaps: Vec<[Option<GridState>; 3]> = vec![[None, None, None]; samples.len()];
    for &(t, k, kind) in &events {
        solver.advance_to(t)?;
        if kind == 3 {
            if let Some(x) = solver.state().rightmost_crossing(0.5) {
                fronts.0.push(t);
                fronts.1.push(x);
            }
        } else {
            snaps[k][kind as usize] = Some(solver.state().clone());
        }
    }
    let fit = fit_front(&fronts.0, &fronts.1, FIT_T_MIN.min(t_end / 2.0), Some(2.0))
        .ok_or_else(|| LabError::Search("front fit failed".into()))?;
    let mut rows = Vec::with_capacity(samples.len());
    for (k, &t) in samples.iter().enumerate() {
        let y = (2.0 - b_bar) * t - fit.log_coeff * t.ln() + fit.offset;
        // w is symmetric about 1/2
        let w_at = |s: &GridState, x: f64| s.interpolate(&[0.5 + (x - 0.5).abs()]);
        let [lo, mid, hi] = &snaps[k];
        let (lo, mid, hi) = (lo.as_ref().unwrap(), mid.as_ref().unwrap(), hi.as_ref().unwrap());
        rows.push(SharpnessRow {
            t,
            y,
            u_at: w_at(mid, y + b_bar * t),
            lower_expr: w_at(lo, y + b_bar * lo.time),
            upper_expr: w_at(hi, y + b_bar * hi.time),
        });
    }
    Ok(SharpnessReport {
        b_bar,
        delta,
        h,
        fit,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::local::{solve, solve_at};

    #[test]
    fn translating_profile_fit() {
        let g = Grid::line(-20.0, 200.0, 0.05, Boundary::DirichletZero).unwrap();
        let states = (0..=60)
            .map(|k| {
                let t = k as f64;
                let mut s = GridState::from_fn(g, |x| 1.0 / (1.0 + (x[0] - 2.0 * t).exp()));
                s.time = t;
                s
            })
            .collect();
        let traj = Trajectory {
            states,
            dt: 1.0,
            clamp: Default::default(),
        };
        let tr = track(&traj, 0.5, 5.0).unwrap();
        let fit = tr.fit.unwrap();
        assert!((fit.speed - 2.0).abs() < 1e-6);
        assert!(fit.log_coeff.abs() < 1e-4);
    }

    #[test]
    fn exact_fit_recovers_coefficients() {
        let ts: Vec<f64> = (20..200).map(|k| k as f64).collect();
        let xs: Vec<f64> = ts.iter().map(|t| 2.0 * t - 1.5 * t.ln() + 0.3).collect();
        let f = fit_front(&ts, &xs, 20.0, None).unwrap();
        assert!((f.speed - 2.0).abs() < 1e-9 && (f.log_coeff - 1.5).abs() < 1e-7);
        let g = fit_front(&ts, &xs, 20.0, Some(2.0)).unwrap();
        assert!((g.offset - 0.3).abs() < 1e-7);
    }

    #[test]
    fn never_attained_level_is_absent() {
        let g = Grid::line(0.0, 10.0, 0.1, Boundary::DirichletZero).unwrap();
        let traj = Trajectory {
            states: vec![GridState::from_fn(g, |_| 0.2)],
            dt: 1.0,
            clamp: Default::default(),
        };
        assert!(track(&traj, 0.5, 0.0).is_err());
    }

    #[test]
    fn half_line_matches_full_line() {
        let h = 0.05;
        let half = unit_interval_problem(Shape::Logistic, h, 30.0).unwrap();
        let g = Grid::line(-29.5, 30.5, h, Boundary::DirichletZero).unwrap();
        let init = GridState::from_fn(g, |x| if x[0] > 0.0 && x[0] < 1.0 { 1.0 } else { 0.0 });
        let full = LocalProblem::new(half.field.clone(), half.reaction.clone(), init).unwrap();
        let a = solve(&half, 5.0, 1.0).unwrap();
        let b = solve(&full, 5.0, 1.0).unwrap();
        for x in [0.5, 1.3, 4.0, 7.7] {
            let d = a.last().interpolate(&[x]) - b.last().interpolate(&[x]);
            assert!(d.abs() < 1e-12, "{x}: {d}");
            let m = b.last().interpolate(&[1.0 - x]) - b.last().interpolate(&[x]);
            assert!(m.abs() < 1e-12);
        }
    }

    #[test]
    fn galilean_consistency() {
        // advection b on the full line vs w(t, x + b t) from the half line
        let h = 0.05;
        let bb = 1.0;
        let w = unit_interval_problem(Shape::Logistic, h, 40.0).unwrap();
        let g = Grid::line(-40.0, 30.0, h, Boundary::DirichletZero).unwrap();
        let init = GridState::from_fn(g, |x| if x[0] > 0.0 && x[0] < 1.0 { 1.0 } else { 0.0 });
        let u = LocalProblem::new(
            CoefficientField::isotropic(1, 1.0).with_constant_drift(&[bb]),
            w.reaction.clone(),
            init,
        )
        .unwrap();
        let t = 4.0;
        let ws = solve_at(&w, &[t], None).unwrap();
        let us = solve_at(&u, &[t], None).unwrap();
        let mut worst: f64 = 0.0;
        for k in 0..80 {
            let x = -12.0 + 0.25 * k as f64;
            let wx = ws.last().interpolate(&[0.5 + (x + bb * t - 0.5).abs()]);
            worst = worst.max((us.last().interpolate(&[x]) - wx).abs());
        }
        // first-order upwinding adds numerical diffusion b h / 2
        assert!(worst < 0.02, "{worst}");
    }

    #[test]
    fn levels_order_and_positions_grow() {
        let p = unit_interval_problem(Shape::Logistic, 0.05, half_width_for(30.0)).unwrap();
        let tracks = track_run(&p, &[0.25, 0.75], 30.0, 0.5, 10.0).unwrap();
        let (a, b) = (&tracks[0], &tracks[1]);
        assert!(a.fit.unwrap().offset > b.fit.unwrap().offset);
        assert!(a.positions.windows(2).skip(10).all(|w| w[1] >= w[0]));
    }
}

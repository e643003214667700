//! Virtual linearity experiments: the full solution against the envelope of
//! cube-restricted solutions of the linearized template problem.

use rayon::prelude::*;

use crate::error::{LabError, Result};
use crate::grid::{decompose, Boundary, CubeFamily, GridState};
use crate::kpp::{gate_reaction, linearize, KppReaction, SamplePlan, ValidationReport};
use crate::local::{discrete_supersolution_rate, solve_at, LocalProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// `sup_n u_n'`
    Sup,
    /// `min{sum_n u_n', 1}`
    CappedSum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftRule {
    /// members at `t - delta t` and `t + t^delta`
    TPowerDelta,
    /// members at `t - delta t` and `t + delta t`
    DeltaT,
}

#[derive(Debug, Clone)]
pub struct SandwichConfig {
    pub delta: f64,
    /// Ascending sample times.
    pub times: Vec<f64>,
    pub variant: Variant,
    pub shift_rule: ShiftRule,
    /// Side of the cubes the initial datum is split into.
    pub cube: f64,
    /// Refuse when `b_sup^2 >= 4 lambda inf f_u(0)`.
    pub require_gate: bool,
}

impl SandwichConfig {
    pub fn new(delta: f64, times: Vec<f64>) -> Self {
        Self {
            delta,
            times,
            variant: Variant::Sup,
            shift_rule: ShiftRule::TPowerDelta,
            cube: 1.0,
            require_gate: true,
        }
    }

    /// Evenly spaced samples `step, 2 step, ..., t_end`.
    pub fn every(delta: f64, step: f64, t_end: f64) -> Self {
        let n = (t_end / step).round() as usize;
        Self::new(delta, (1..=n).map(|k| k as f64 * step).collect())
    }

    pub fn shifts(&self, t: f64) -> (f64, f64) {
        let up = match self.shift_rule {
            ShiftRule::TPowerDelta => t.powf(self.delta),
            ShiftRule::DeltaT => self.delta * t,
        };
        (t - self.delta * t, t + up)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SandwichRow {
    pub t: f64,
    pub lower_violation: f64,
    pub upper_violation: f64,
    pub phi_est: f64,
}

#[derive(Debug, Clone)]
pub struct SandwichReport {
    pub delta: f64,
    pub rows: Vec<SandwichRow>,
    /// Earliest sample time after which `phi_est` never increases.
    pub burn_in: Option<f64>,
    pub members: usize,
}

impl SandwichReport {
    pub fn phi_at(&self, t: f64) -> Option<f64> {
        self.rows.iter().find(|r| (r.t - t).abs() < 1e-9).map(|r| r.phi_est)
    }

    pub fn after_burn_in(&self) -> impl Iterator<Item = &SandwichRow> {
        let tau = self.burn_in.unwrap_or(f64::INFINITY);
        self.rows.iter().filter(move |r| r.t >= tau)
    }

    pub fn max_lower(&self) -> f64 {
        self.rows.iter().map(|r| r.lower_violation).fold(0.0, f64::max)
    }
}

/// Tolerance for "non-increasing" when locating the burn-in.
pub const BURN_IN_TOL: f64 = 1e-9;

/// Earliest `times[k]` such that `values` is non-increasing from `k` on.
pub fn burn_in(times: &[f64], values: &[f64], tol: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut k = values.len() - 1;
    while k > 0 && values[k] <= values[k - 1] + tol {
        k -= 1;
    }
    Some(times[k])
}

/// Refuses when exponential supersolutions launched from the initial
/// support could reach a Dirichlet edge above `1e-10` by `t_max`.
pub fn check_horizon(p: &LocalProblem, t_max: f64) -> Result<()> {
    if p.grid.boundary != Boundary::DirichletZero {
        return Ok(());
    }
    let g = &p.grid;
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for (k, &v) in p.initial.values.iter().enumerate() {
        if v > 0.0 {
            let c = g.coord(k);
            for a in 0..g.dim {
                lo[a] = lo[a].min(c[a]);
                hi[a] = hi[a].max(c[a]);
            }
        }
    }
    if lo[0] > hi[0] {
        return Ok(());
    }
    let a = discrete_supersolution_rate(p);
    let need = a * t_max + 10.0 * std::f64::consts::LN_10;
    for axis in 0..g.dim {
        let edge_lo = g.origin[axis];
        let edge_hi = g.origin[axis] + (g.n[axis] - 1) as f64 * g.h;
        let room = (lo[axis] - edge_lo).min(edge_hi - hi[axis]);
        if room < need {
            return Err(LabError::Refused(format!(
                "domain too small for t={t_max}: {room:.1} of room on axis {axis}, need {need:.1} \
                 (supersolution rate {a:.3})"
            )));
        }
    }
    Ok(())
}

/// Half-width a Dirichlet grid needs around a unit-size support so that
/// [`check_horizon`] accepts a run to `t_max`.
pub fn horizon_half_width(rate: f64, t_max: f64) -> f64 {
    rate * t_max + 10.0 * std::f64::consts::LN_10 + 2.0
}

/// Solves every member of `family` under `reaction` and returns the states
/// at `times` for each member, in member-index order.
pub fn evolve_family(
    base: &LocalProblem,
    family: &CubeFamily,
    reaction: &KppReaction,
    times: &[f64],
) -> Result<Vec<Vec<GridState>>> {
    let jobs: Vec<&GridState> = family.members.values().collect();
    jobs.par_iter()
        .map(|init| {
            let p = base.with_reaction(reaction.clone()).with_initial((*init).clone())?;
            let traj = solve_at(&p, times, None)?;
            Ok(traj.states.into_iter().skip(1).collect())
        })
        .collect()
}

fn combine(members: &[Vec<GridState>], k: usize, variant: Variant) -> GridState {
    let first = &members[0][k];
    let mut values = vec![0.0f64; first.values.len()];
    for m in members {
        for (a, &b) in values.iter_mut().zip(&m[k].values) {
            *a = match variant {
                Variant::Sup => (*a).max(b),
                Variant::CappedSum => *a + b,
            };
        }
    }
    if variant == Variant::CappedSum {
        for v in &mut values {
            *v = v.min(1.0);
        }
    }
    GridState {
        grid: first.grid,
        time: first.time,
        values,
    }
}

fn sorted_unique(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    v
}

fn index_of(times: &[f64], t: f64) -> usize {
    times
        .iter()
        .position(|&s| (s - t).abs() < 1e-12)
        .expect("time was scheduled")
}

fn validate_config(cfg: &SandwichConfig) -> Result<()> {
    if !(cfg.delta > 0.0 && cfg.delta <= 0.5) {
        return Err(LabError::Invalid(format!("delta must lie in (0, 1/2], got {}", cfg.delta)));
    }
    if cfg.times.is_empty() || cfg.times.windows(2).any(|w| w[1] <= w[0]) || cfg.times[0] <= 0.0 {
        return Err(LabError::Invalid("sample times must be positive and ascending".into()));
    }
    Ok(())
}

/// Sandwich experiment: `u` under `f`, members under the template of `f`.
pub fn run_sandwich(p: &LocalProblem, cfg: &SandwichConfig) -> Result<SandwichReport> {
    validate_config(cfg)?;
    if cfg.require_gate {
        let half = p.grid.half_width(0);
        let plan = SamplePlan::standard(p.grid.dim, cfg.times[cfg.times.len() - 1], half);
        let gate = gate_reaction(&p.reaction, &p.field, &plan);
        if !gate.passed {
            return Err(LabError::Refused(format!(
                "advection gate fails: margin {:.4}",
                gate.margin
            )));
        }
    }
    let template = linearize(&p.reaction);
    sandwich_with(p, cfg, &template, false)
}

/// Members under `f` itself; the lower bound is checked with zero shift.
pub fn run_monotone_variant(p: &LocalProblem, cfg: &SandwichConfig) -> Result<SandwichReport> {
    validate_config(cfg)?;
    if !p.reaction.monotone_flag() {
        return Err(LabError::Refused(
            "f/u is not non-increasing near 0; the monotone variant does not apply".into(),
        ));
    }
    sandwich_with(p, cfg, &p.reaction.clone(), true)
}

fn sandwich_with(
    p: &LocalProblem,
    cfg: &SandwichConfig,
    member_reaction: &KppReaction,
    zero_lower_shift: bool,
) -> Result<SandwichReport> {
    let lower_time = |t: f64| if zero_lower_shift { t } else { cfg.shifts(t).0 };
    let mut member_times = Vec::new();
    for &t in &cfg.times {
        member_times.push(lower_time(t));
        member_times.push(cfg.shifts(t).1);
    }
    let member_times = sorted_unique(member_times);
    check_horizon(p, member_times[member_times.len() - 1])?;

    let family = decompose(&p.initial, cfg.cube)?;
    if family.is_empty() {
        return Err(LabError::Invalid("initial datum vanishes".into()));
    }
    let (full, members) = rayon::join(
        || solve_at(p, &cfg.times, None),
        || evolve_family(p, &family, member_reaction, &member_times),
    );
    let full = full?;
    let members = members?;

    let mut rows = Vec::with_capacity(cfg.times.len());
    for (k, &t) in cfg.times.iter().enumerate() {
        let u = &full.states[k + 1];
        let env_lo = combine(&members, index_of(&member_times, lower_time(t)), Variant::Sup);
        let env_hi = combine(&members, index_of(&member_times, cfg.shifts(t).1), cfg.variant);
        let lower = env_lo.max_excess_over(u)?;
        let upper = u.max_excess_over(&env_hi)?;
        rows.push(SandwichRow {
            t,
            lower_violation: lower,
            upper_violation: upper,
            phi_est: lower.max(upper),
        });
    }
    let phis: Vec<f64> = rows.iter().map(|r| r.phi_est).collect();
    Ok(SandwichReport {
        delta: cfg.delta,
        burn_in: burn_in(&cfg.times, &phis, BURN_IN_TOL),
        rows,
        members: family.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eq27Row {
    pub s: f64,
    pub t: f64,
    /// `max_x (s e^{-psi(s) t} sup_n u_n' - u)_+`
    pub lower_violation: f64,
    /// `max_x (u - min{gamma^-1 sum_n u_n', 1})_+`
    pub upper_violation: f64,
}

#[derive(Debug, Clone)]
pub struct Eq27Report {
    pub gamma: f64,
    pub rows: Vec<Eq27Row>,
}

impl Eq27Report {
    pub fn worst(&self) -> (f64, f64) {
        self.rows.iter().fold((0.0f64, 0.0f64), |a, r| {
            (a.0.max(r.lower_violation), a.1.max(r.upper_violation))
        })
    }
}

/// Two-sided bound `s e^{-psi(s) t} sup u_n' <= u <= gamma^-1 sum u_n'` with
/// members under the template reaction, for which `gamma = 1/2`.
pub fn eq27_bounds(
    p: &LocalProblem,
    validation: &ValidationReport,
    s_samples: &[f64],
    times: &[f64],
    cube: f64,
) -> Result<Eq27Report> {
    let gamma = 0.5;
    if s_samples.iter().any(|&s| !(s > 0.0 && s <= gamma)) {
        return Err(LabError::Invalid(format!("s samples must lie in (0, {gamma}]")));
    }
    let family = decompose(&p.initial, cube)?;
    if family.is_empty() {
        return Err(LabError::Invalid("initial datum vanishes".into()));
    }
    let template = linearize(&p.reaction);
    let full = solve_at(p, times, None)?;
    let members = evolve_family(p, &family, &template, times)?;
    let mut rows = Vec::new();
    for (k, &t) in times.iter().enumerate() {
        let u = &full.states[k + 1];
        let env = combine(&members, k, Variant::Sup);
        let mut sum = vec![0.0; u.values.len()];
        for m in &members {
            for (a, &b) in sum.iter_mut().zip(&m[k].values) {
                *a += b;
            }
        }
        let upper = u
            .values
            .iter()
            .zip(&sum)
            .map(|(&uu, &s)| uu - (s / gamma).min(1.0))
            .fold(0.0, f64::max);
        for &s in s_samples {
            let factor = s * (-validation.psi_at(s) * t).exp();
            let lower = env
                .values
                .iter()
                .zip(&u.values)
                .map(|(&e, &uu)| factor * e - uu)
                .fold(0.0, f64::max);
            rows.push(Eq27Row {
                s,
                t,
                lower_violation: lower,
                upper_violation: upper,
            });
        }
    }
    Ok(Eq27Report { gamma, rows })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::field::Constant;
    use crate::grid::Grid;
    use crate::kpp::{validate_kpp, CoefficientField, Shape};

    fn problem(r: KppReaction, drift: f64, half: f64, h: f64, lo: f64, hi: f64) -> LocalProblem {
        let field = CoefficientField::isotropic(1, 1.0).with_constant_drift(&[drift]);
        let g = Grid::line(-half, half, h, Boundary::DirichletZero).unwrap();
        LocalProblem::new(field, r, GridState::indicator(g, [lo, 0.0], [hi, 0.0], 0.5)).unwrap()
    }

    #[test]
    fn burn_in_is_start_of_final_monotone_run() {
        let t = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(burn_in(&t, &[3.0, 1.0, 2.0, 1.0, 0.5], 0.0), Some(3.0));
        assert_eq!(burn_in(&t, &[5.0, 4.0, 3.0, 2.0, 1.0], 0.0), Some(1.0));
        assert_eq!(burn_in(&t, &[1.0, 2.0, 3.0, 4.0, 5.0], 0.0), Some(5.0));
    }

    #[test]
    fn monotone_variant_lower_bound_is_exact() {
        let r = KppReaction::template(Arc::new(Constant(1.0)));
        let p = problem(r, 0.0, 40.0, 0.1, -2.0, 1.5);
        let rep = run_monotone_variant(&p, &SandwichConfig::every(0.25, 1.0, 5.0)).unwrap();
        assert_eq!(rep.members, 4);
        assert!(rep.max_lower() <= 1e-12, "{}", rep.max_lower());
    }

    #[test]
    fn monotone_variant_refuses_without_flag() {
        let r = KppReaction::factorized(Arc::new(Constant(1.0)), Shape::Cubic);
        let p = problem(r, 0.0, 40.0, 0.1, -1.0, 1.0);
        let err = run_monotone_variant(&p, &SandwichConfig::every(0.25, 1.0, 5.0));
        assert!(matches!(err, Err(LabError::Refused(_))));
    }

    #[test]
    fn gate_and_horizon_refusals() {
        let fast = problem(KppReaction::homogeneous_logistic(), 3.0, 60.0, 0.1, -1.0, 1.0);
        let err = run_sandwich(&fast, &SandwichConfig::every(0.25, 1.0, 5.0));
        assert!(matches!(err, Err(LabError::Refused(_))));

        let small = problem(KppReaction::homogeneous_logistic(), 0.0, 10.0, 0.1, -1.0, 1.0);
        let err = run_sandwich(&small, &SandwichConfig::every(0.25, 1.0, 5.0));
        assert!(matches!(err, Err(LabError::Refused(_))));
    }

    #[test]
    fn capped_sum_never_raises_upper_violation() {
        let p = problem(KppReaction::homogeneous_logistic(), 0.0, 45.0, 0.1, -2.0, 2.0);
        let mut cfg = SandwichConfig::every(0.5, 0.5, 5.0);
        cfg.shift_rule = ShiftRule::DeltaT;
        let sup = run_sandwich(&p, &cfg).unwrap();
        cfg.variant = Variant::CappedSum;
        let capped = run_sandwich(&p, &cfg).unwrap();
        for (a, b) in sup.rows.iter().zip(&capped.rows) {
            assert!(b.upper_violation <= a.upper_violation + 1e-15);
            assert_eq!(a.lower_violation, b.lower_violation);
        }
    }

    #[test]
    fn eq27_single_cube_template_is_tight() {
        let r = KppReaction::template(Arc::new(Constant(1.0)));
        let p = problem(r.clone(), 0.0, 20.0, 0.1, 0.0, 1.0);
        let v = validate_kpp(&r, &SamplePlan::standard(1, 5.0, 20.0)).unwrap();
        let rep = eq27_bounds(&p, &v, &[0.1, 0.25, 0.5], &[1.0, 3.0, 5.0], 1.0).unwrap();
        assert_eq!(rep.worst(), (0.0, 0.0));
    }
}

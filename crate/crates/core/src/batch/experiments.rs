//! One function per experiment. Each returns its artifacts in memory; the
//! runner decides where they go.

use crate::error::{LabError, Result};
use crate::front::{fit_front, sharpness_run, FrontFit};
use crate::grid::{Boundary, Grid, GridState};
use crate::homog::passage::{check_tau_laws, collinear_plan, passage_table, shift_pair, PassageTable};
use crate::homog::wulff::{directions, estimate_speeds, radial_tables, wulff_from_speeds};
use crate::homog::{
    disk_polygon, half_plane_speed, radii, rescaled_convergence, support_speed, PassageStatus, RandomEnvironment,
    WulffEstimate,
};
use crate::kpp::{gate_reaction, validate_kpp, SamplePlan};
use crate::local::{stable_dt, Solver};
use crate::nonlocal::{solve_nonlocal, NonlocalOperator, NonlocalProblem, DEFAULT_EPS_TAIL};
use crate::subsolution::{build_ladder, build_profile, verify_subsolution};
use crate::vlin::{run_monotone_variant, run_sandwich, SandwichConfig, SandwichReport};

use super::artifacts::{num, Artifacts, Table};
use super::config::{RunConfig, ShapeSource};

fn fit_entries(a: &mut Artifacts, prefix: &str, fit: Option<FrontFit>) {
    match fit {
        Some(f) => {
            a.manifest.set(&format!("{prefix}speed"), num(f.speed));
            a.manifest.set(&format!("{prefix}log_coeff"), num(f.log_coeff));
            a.manifest.set(&format!("{prefix}offset"), num(f.offset));
        }
        None => a.manifest.set(&format!("{prefix}speed"), "unfitted"),
    }
}

/// `t, x_theta, residual` against the fitted front.
fn front_table(times: &[f64], xs: &[f64], fit: Option<FrontFit>) -> Table {
    let mut t = Table::new(&["t", "x_theta", "residual"]);
    for (&s, &x) in times.iter().zip(xs) {
        let r = fit.map_or(f64::NAN, |f| x - f.position(s));
        t.push(&[s, x, r]);
    }
    t
}

fn front_name(k: usize, count: usize) -> String {
    if count == 1 {
        "front".into()
    } else {
        format!("front_{k}")
    }
}

pub fn validate(cfg: &RunConfig) -> Result<Artifacts> {
    let p = cfg.problem.build()?;
    let plan = SamplePlan::standard(p.grid.dim, cfg.solve.t_end, cfg.problem.half_width);
    let rep = validate_kpp(&p.reaction, &plan)?;
    let gate = gate_reaction(&p.reaction, &p.field, &plan);
    let mut a = Artifacts::default();
    let mut t = Table::new(&["axiom", "passed", "worst"]);
    for ax in &rep.axioms {
        t.push_cells(vec![ax.name.into(), ax.passed.to_string(), num(ax.worst)]);
    }
    a.table("axioms", t);
    let mut psi = Table::new(&["u", "psi"]);
    for &(u, v) in &rep.psi {
        psi.push(&[u, v]);
    }
    a.table("psi", psi);
    a.manifest.set("kpp_passed", rep.passed());
    a.manifest.set("inf_deriv", num(rep.inf_deriv));
    a.manifest.set("sup_deriv", num(rep.sup_deriv));
    a.manifest.set("monotone_gamma", rep.monotone_gamma.map_or("none".into(), num));
    a.manifest.set("gate_passed", gate.passed);
    a.manifest.set("gate_margin", num(gate.margin));
    Ok(a)
}

/// Level position: rightmost crossing in 1D, largest contour radius in 2D.
fn level_position(s: &GridState, theta: f64) -> Option<f64> {
    if s.grid.dim == 1 {
        s.rightmost_crossing(theta)
    } else {
        s.contour(theta)
            .iter()
            .flatten()
            .map(|p| p[0].hypot(p[1]))
            .max_by(f64::total_cmp)
    }
}

pub fn solve(cfg: &RunConfig) -> Result<Artifacts> {
    let sp = &cfg.solve;
    let p = cfg.problem.build()?;
    let dt = stable_dt(&p);
    let mut solver = Solver::with_cadence(p, sp.cadence)?;
    let mut a = Artifacts::default();
    let mut snaps: Vec<f64> = sp.snapshots.clone();
    snaps.sort_by(f64::total_cmp);
    let mut next_snap = 0;
    let mut tracks = vec![(Vec::new(), Vec::new()); sp.thetas.len()];
    let n = (sp.t_end / sp.cadence).round() as usize;
    for k in 1..=n {
        let t = k as f64 * sp.cadence;
        while next_snap < snaps.len() && snaps[next_snap] <= t {
            solver.advance_to(snaps[next_snap])?;
            a.image(&format!("u_{next_snap}"), solver.state());
            next_snap += 1;
        }
        solver.advance_to(t)?;
        for (theta, tr) in sp.thetas.iter().zip(&mut tracks) {
            if let Some(x) = level_position(solver.state(), *theta) {
                tr.0.push(t);
                tr.1.push(x);
            }
        }
    }
    for (k, (theta, (ts, xs))) in sp.thetas.iter().zip(&tracks).enumerate() {
        let fit = fit_front(ts, xs, sp.t_fit_min, None);
        let name = front_name(k, sp.thetas.len());
        a.table(&name, front_table(ts, xs, fit));
        a.manifest.set(&format!("{name}.theta"), num(*theta));
        fit_entries(&mut a, &format!("{name}."), fit);
    }
    a.manifest.set("dt", num(dt));
    a.manifest.set("clamp_max_excursion", num(solver.clamp.max_excursion));
    Ok(a)
}

fn sandwich_table(rep: &SandwichReport) -> Table {
    let mut t = Table::new(&["t", "lower_violation", "upper_violation", "phi_est"]);
    for r in &rep.rows {
        t.push(&[r.t, r.lower_violation, r.upper_violation, r.phi_est]);
    }
    t
}

pub fn vlin(cfg: &RunConfig) -> Result<Artifacts> {
    let v = &cfg.vlin;
    let p = cfg.problem.build()?;
    let mut sc = SandwichConfig::every(v.delta, v.cadence, v.t_end);
    sc.variant = v.variant;
    sc.shift_rule = v.shift_rule;
    sc.cube = v.cube;
    sc.require_gate = v.require_gate;
    let rep = run_sandwich(&p, &sc)?;
    let mut a = Artifacts::default();
    a.table("sandwich", sandwich_table(&rep));
    a.manifest.set("members", rep.members);
    a.manifest.set("burn_in", rep.burn_in.map_or("none".into(), num));
    a.manifest.set("phi_est_final", rep.rows.last().map_or("none".into(), |r| num(r.phi_est)));
    a.manifest.set("max_lower_violation", num(rep.max_lower()));
    a.manifest.set("dt", num(stable_dt(&p)));
    if v.monotone {
        let m = run_monotone_variant(&p, &sc)?;
        a.table("monotone", sandwich_table(&m));
        a.manifest.set("monotone_max_lower_violation", num(m.max_lower()));
    }
    Ok(a)
}

pub fn sharpness(cfg: &RunConfig) -> Result<Artifacts> {
    let s = &cfg.sharpness;
    let samples = s.sample_times();
    let rep = sharpness_run(s.b_bar, s.delta, s.t_end, s.h, &samples)?;
    let mut a = Artifacts::default();
    let mut t = Table::new(&["t", "y", "u", "lower_expr", "upper_expr"]);
    for r in &rep.rows {
        t.push(&[r.t, r.y, r.u_at, r.lower_expr, r.upper_expr]);
    }
    a.table("sharpness", t);
    fit_entries(&mut a, "", Some(rep.fit));
    let (lo, up) = rep.violations(samples.first().copied().unwrap_or(0.0));
    a.manifest.set("lower_violation", num(lo));
    a.manifest.set("upper_violation", num(up));
    Ok(a)
}

pub fn subsolution(cfg: &RunConfig) -> Result<Artifacts> {
    let s = &cfg.subsolution;
    let prof = build_profile(s.beta, s.lambda, s.b, s.dim, s.cap_lambda)?;
    let mut a = Artifacts::default();
    let mut t = Table::new(&["y", "xi", "zeta"]);
    for (y, xi, z) in prof.table(s.profile_points.max(2)) {
        t.push(&[y, xi, z]);
    }
    a.table("profile", t);

    // the fixture reaction is beta * u(1 - u)
    let beta = s.beta;
    let f0 = move |u: f64| beta * u * (1.0 - u);
    let ladder = build_ladder(&prof, &f0, beta, s.v)?;
    let mut t = Table::new(&["k", "v_k", "t_vk"]);
    for (k, v, tk) in ladder.schedule() {
        t.push(&[k as f64, v, tk]);
    }
    a.table("ladder", t);

    let mut spec = cfg.problem.clone();
    spec.dim = s.dim;
    spec.diffusion = s.lambda;
    spec.drift.clear();
    spec.reaction.rate = super::config::RateSpec::Constant { value: beta };
    spec.reaction.shape = super::config::ShapeName::Logistic;
    spec.h = s.h;
    spec.half_width = s.half_width;
    let problem = spec.build()?;
    let grid = problem.grid;

    let top = s.levels.min(ladder.levels.len().saturating_sub(1));
    let mut res = Table::new(&["k", "min_outer", "min_inner", "min", "nodes"]);
    let mut order = Table::new(&["k", "t", "max_excess"]);
    let mut worst = f64::INFINITY;
    let mut worst_order = f64::NEG_INFINITY;
    for k in 0..=top {
        let ta = ladder.time(k as i64 - 1);
        let win: Vec<f64> = (0..s.window_points).map(|i| ta + i as f64 * s.window_step).collect();
        let r = verify_subsolution(&ladder, k, &problem, &win)?;
        res.push(&[k as f64, r.min_outer, r.min_inner, r.min(), r.nodes as f64]);
        worst = worst.min(r.min());
        if k >= 1 {
            let upper = ladder.member_state(k - 1, ta, grid);
            let lower = ladder.member_state(k, ta, grid);
            let ex = lower.max_excess_over(&upper)?;
            order.push(&[k as f64, ta, ex]);
            worst_order = worst_order.max(ex);
        }
    }
    a.table("residuals", res);
    a.table("ordering", order);
    a.manifest.set("c", num(prof.c));
    a.manifest.set("sigma", num(ladder.sigma));
    a.manifest.set("min_residual", num(worst));
    a.manifest.set("max_ordering_excess", num(worst_order));
    Ok(a)
}

fn sample_envs(params: crate::homog::EnvParams, seeds: &[u64]) -> Result<Vec<RandomEnvironment>> {
    seeds.iter().map(|&s| RandomEnvironment::sample(params, s)).collect()
}

fn budget_check(tables: &[PassageTable]) -> Result<()> {
    for t in tables {
        if let Some(e) = t.entries.iter().find(|e| e.status == PassageStatus::Budget) {
            return Err(LabError::Budget(format!(
                "seed {}: no confirmed passage from {:?} to {:?} within the time budget",
                t.seed, e.y, e.z
            )));
        }
    }
    Ok(())
}

fn wulff_tables(a: &mut Artifacts, w: &WulffEstimate) {
    let mut t = Table::new(&["e_x", "e_y", "w", "ci_lo", "ci_hi"]);
    for s in &w.speeds {
        t.push(&[s.e[0], s.e[1], s.w, s.ci_lo, s.ci_hi]);
    }
    a.table("speeds", t);
    let mut t = Table::new(&["x", "y"]);
    for v in &w.vertices {
        t.push(v);
    }
    a.table("polygon", t);
    let mut t = Table::new(&["x", "y"]);
    for v in &w.hull {
        t.push(v);
    }
    a.table("hull", t);
    a.manifest.set("convexity_defect", num(w.convexity_defect));
    let ws: Vec<String> = w.speeds.iter().map(|s| num(s.w)).collect();
    a.manifest.set("w", ws.join(" "));
    for s in w.speeds.iter().filter(|s| s.warning.is_some()) {
        a.manifest.set(
            &format!("warning.w[{},{}]", num(s.e[0]), num(s.e[1])),
            s.warning.as_deref().unwrap_or(""),
        );
    }
}

pub fn wulff(cfg: &RunConfig) -> Result<Artifacts> {
    let w = &cfg.wulff;
    let seeds = cfg.seed_list();
    let envs = sample_envs(w.env, &seeds)?;
    let dirs = directions(w.directions);
    let rs = radii(w.r_min, w.r_max);
    let tables = radial_tables(&envs, &w.passage, &dirs, &rs)?;
    budget_check(&tables)?;
    let mut a = Artifacts::default();
    for tab in &tables {
        let mut t = Table::new(&["e_x", "e_y", "n", "seed", "tau", "crossing"]);
        for (k, e) in tab.entries.iter().enumerate() {
            let dir = dirs[k / rs.len()];
            let tau = e.tau.map_or(f64::NAN, f64::from);
            t.push(&[dir[0], dir[1], rs[k % rs.len()], tab.seed as f64, tau, e.crossing.unwrap_or(f64::NAN)]);
        }
        a.table(&format!("passage_seed{}", tab.seed), t);
    }
    let est = wulff_from_speeds(estimate_speeds(&tables, &dirs, &rs, w.fit)?);
    wulff_tables(&mut a, &est);
    if w.half_plane {
        let hp = half_plane_speed(&envs[0], &w.half_plane_setup, [1.0, 0.0])?;
        let mut t = Table::new(&["t", "x_theta"]);
        for &(s, x) in &hp.track {
            t.push(&[s, x]);
        }
        a.table("half_plane", t);
        a.manifest.set("half_plane_speed", num(hp.speed));
        a.manifest.set("support_speed", num(support_speed(&est, [1.0, 0.0])));
    }
    a.manifest.set("seeds", seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(","));
    a.manifest.set("h", num(w.passage.h));
    Ok(a)
}

pub fn homogenize(cfg: &RunConfig) -> Result<Artifacts> {
    let hp = &cfg.homogenize;
    let seeds = cfg.seed_list();
    let envs = sample_envs(hp.env, &seeds)?;
    let d = std::f64::consts::FRAC_1_SQRT_2;
    let plan = collinear_plan(&[[1.0, 0.0], [0.0, 1.0], [d, d]], hp.mid as f64, hp.far as f64);
    let mut a = Artifacts::default();

    let mut laws = Table::new(&[
        "seed",
        "triples",
        "max_subadditivity_violation",
        "c_fit",
        "lipschitz",
        "shift_pairs",
        "stationarity_exact",
    ]);
    let mut passage = Table::new(&["seed", "y_x", "y_y", "z_x", "z_y", "tau", "raw", "crossing"]);
    let mut reports = Vec::new();
    for env in &envs {
        let table = passage_table(env, &hp.passage, &plan)?;
        budget_check(std::slice::from_ref(&table))?;
        let pairs = hp
            .shifts
            .iter()
            .map(|s| shift_pair(env, &hp.passage, s.y, s.z, s.x))
            .collect::<Result<Vec<_>>>()?;
        let rep = check_tau_laws(&table, &pairs)?;
        for e in &table.entries {
            let opt = |v: Option<u32>| v.map_or(f64::NAN, f64::from);
            passage.push(&[
                env.seed as f64,
                e.y[0],
                e.y[1],
                e.z[0],
                e.z[1],
                opt(e.tau),
                opt(e.raw),
                e.crossing.unwrap_or(f64::NAN),
            ]);
        }
        laws.push(&[
            rep.seed as f64,
            rep.triples as f64,
            rep.max_subadditivity_violation,
            rep.c_fit,
            rep.lipschitz,
            rep.shift_pairs as f64,
            if rep.stationarity_exact { 1.0 } else { 0.0 },
        ]);
        reports.push(rep);
    }
    a.table("passage", passage);
    a.table("tau_laws", laws);
    a.manifest.set("c_spread", num(crate::homog::passage::c_spread(&reports)));
    let worst = reports.iter().map(|r| r.max_subadditivity_violation).fold(f64::NEG_INFINITY, f64::max);
    a.manifest.set("max_subadditivity_violation", num(worst));
    a.manifest.set("stationarity_exact", reports.iter().all(|r| r.stationarity_exact));

    if !hp.skip_rescale {
        let s_vertices = match hp.shape {
            ShapeSource::Disk { radius, vertices } => disk_polygon(radius, vertices),
            ShapeSource::Estimate {
                directions: count,
                r_min,
                r_max,
            } => {
                let dirs = directions(count);
                let rs = radii(r_min, r_max);
                let tables = radial_tables(&envs, &hp.passage, &dirs, &rs)?;
                budget_check(&tables)?;
                let est = wulff_from_speeds(estimate_speeds(&tables, &dirs, &rs, Default::default())?);
                wulff_tables(&mut a, &est);
                est.hull
            }
        };
        let rt = rescaled_convergence(&envs[0], hp.set, &s_vertices, &hp.eps, &hp.times, &hp.rescale)?;
        let mut t = Table::new(&["eps", "t", "sup_error", "nodes", "partial"]);
        for r in &rt.rows {
            t.push(&[r.eps, r.t, r.sup_error, r.nodes as f64, if r.partial { 1.0 } else { 0.0 }]);
        }
        a.table("rescale", t);
        for (k, (_, s)) in rt.snapshots.iter().enumerate() {
            a.image(&format!("rescale_{k}"), s);
        }
        for &t in &hp.times {
            a.manifest.set(&format!("rescale_non_increasing.t{}", num(t)), rt.non_increasing(t));
        }
    }
    a.manifest.set("seeds", seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(","));
    Ok(a)
}

pub fn nonlocal(cfg: &RunConfig) -> Result<Artifacts> {
    let n = &cfg.nonlocal;
    let grid = Grid::line(n.lo, n.hi, n.h, Boundary::DirichletZero)?;
    let times: Vec<f64> = (1..=n.t_end.floor() as usize).map(|k| k as f64).collect();
    let mut a = Artifacts::default();
    let mut speeds = Table::new(&["dt", "speed", "secant"]);
    let mut base = None;
    for k in 0..=n.halvings {
        let op = NonlocalOperator::new(n.kernel.build(), grid, DEFAULT_EPS_TAIL)?;
        let initial = GridState::indicator(grid, [-1.0, 0.0], [1.0, 0.0], 1.0);
        let mut p = NonlocalProblem::new(op, n.reaction.build(), initial)?;
        if k == 0 {
            a.manifest.set("operator_norm", num(p.op.norm()));
        }
        let dt0 = *base.get_or_insert(n.dt.unwrap_or(p.stable_dt().min(crate::nonlocal::NONLOCAL_DT_CAP)));
        let dt = dt0 / f64::powi(2.0, k as i32);
        let traj = solve_nonlocal(&mut p, &times, Some(dt))?;
        let (mut ts, mut xs) = (Vec::new(), Vec::new());
        for s in traj.states.iter().skip(1) {
            if let Some(x) = s.rightmost_crossing(n.theta) {
                ts.push(s.time);
                xs.push(x);
            }
        }
        let fit = fit_front(&ts, &xs, n.t_fit_min, None);
        let secant = secant_speed(&ts, &xs, n.t_fit_min);
        speeds.push(&[dt, fit.map_or(f64::NAN, |f| f.speed), secant]);
        a.table(&front_name(k, n.halvings + 1), front_table(&ts, &xs, fit));
    }
    let sec = speeds.column("secant").unwrap_or_default();
    if sec.len() >= 2 {
        let last = sec[sec.len() - 1];
        let prev = sec[sec.len() - 2];
        a.manifest.set("secant_rel_change", num((last - prev).abs() / last.abs()));
    }
    a.table("speeds", speeds);
    Ok(a)
}

/// `(x(t_end) - x(t_from)) / (t_end - t_from)` over recorded samples.
fn secant_speed(ts: &[f64], xs: &[f64], t_from: f64) -> f64 {
    let Some(i) = ts.iter().position(|&t| t >= t_from) else {
        return f64::NAN;
    };
    let j = ts.len() - 1;
    if j <= i {
        return f64::NAN;
    }
    (xs[j] - xs[i]) / (ts[j] - ts[i])
}

//! Nonlocal diffusion: operator checks on a smooth probe, then the front
//! speed of the nonlocal KPP equation under a time-step halving.
//!
//! cargo run --release --example nonlocal_front

use kpp_lab::grid::{Boundary, Grid, GridState};
use kpp_lab::kpp::KppReaction;
use kpp_lab::nonlocal::{solve_nonlocal, Kernel, NonlocalOperator, NonlocalProblem, DEFAULT_EPS_TAIL};

fn main() -> kpp_lab::Result<()> {
    let g = Grid::line(-3.0, 3.0, 0.05, Boundary::DirichletZero)?;
    for (name, k) in [
        ("box", Kernel::boxed(1.0, 0.5, 0.5)),
        ("exp tail", Kernel::exp_tail(0.5)),
        ("fractional s=0.5", Kernel::fractional_cutoff(0.5, 1.0)),
    ] {
        let mut op = NonlocalOperator::new(k, g, DEFAULT_EPS_TAIL)?;
        let lu = op.apply_fn(0.0, |x| x * x);
        println!("{name:<18} norm={:.4} L(x^2)(0)={:.6}", op.norm(), lu[g.len() / 2]);
    }

    let g = Grid::line(-20.0, 80.0, 0.05, Boundary::DirichletZero)?;
    let times: Vec<f64> = (1..=30).map(f64::from).collect();
    for dt in [0.02, 0.01] {
        let op = NonlocalOperator::new(Kernel::boxed(1.0, 0.5, 0.5), g, DEFAULT_EPS_TAIL)?;
        let u0 = GridState::indicator(g, [-1.0, 0.0], [1.0, 0.0], 1.0);
        let mut p = NonlocalProblem::new(op, KppReaction::homogeneous_logistic(), u0)?;
        let traj = solve_nonlocal(&mut p, &times, Some(dt))?;
        let x = |k: usize| traj.states[k].rightmost_crossing(0.5).unwrap_or(f64::NAN);
        println!("dt={dt}: secant speed over [10, 30] = {:.5}", (x(30) - x(10)) / 20.0);
    }
    Ok(())
}

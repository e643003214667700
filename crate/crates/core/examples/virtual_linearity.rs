//! Virtual-linearity sandwich for a logistic reaction with rate 2 + sin x, started
//! from an indicator: violations of the lower and upper bounds and the
//! running estimate of the defect.
//!
//! cargo run --release --example virtual_linearity -- [t_end]

use kpp_lab::grid::{Boundary, Grid, GridState};
use kpp_lab::kpp::{periodic_rate, CoefficientField, KppReaction};
use kpp_lab::local::LocalProblem;
use kpp_lab::vlin::{horizon_half_width, run_monotone_variant, run_sandwich, SandwichConfig};

fn main() -> kpp_lab::Result<()> {
    let t_end: f64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(40.0);
    let half = horizon_half_width(4.1, t_end + t_end.powf(0.25));
    let g = Grid::line(-half, half, 0.05, Boundary::DirichletZero)?;
    let u0 = GridState::indicator(g, [-1.0, 0.0], [1.0, 0.0], 0.5);
    let p = LocalProblem::new(
        CoefficientField::isotropic(1, 1.0),
        KppReaction::logistic(periodic_rate(2.0, 1.0)),
        u0,
    )?;
    let cfg = SandwichConfig::every(0.25, 4.0, t_end);
    let rep = run_sandwich(&p, &cfg)?;
    println!("{} family members, burn-in {:?}", rep.members, rep.burn_in);
    println!("{:>6} {:>12} {:>12} {:>12}", "t", "lower", "upper", "phi_est");
    for r in &rep.rows {
        println!("{:>6} {:>12.3e} {:>12.3e} {:>12.3e}", r.t, r.lower_violation, r.upper_violation, r.phi_est);
    }
    let mono = run_monotone_variant(&p, &cfg)?;
    println!("monotone variant: max lower violation {:.2e}", mono.max_lower());
    Ok(())
}

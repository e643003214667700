//! Builds the plateau profile and the level ladder, then checks the
//! discrete subsolution residual of each rung on its time window.
//!
//! cargo run --release --example plateau_ladder -- [levels]

use kpp_lab::grid::{Boundary, Grid, GridState};
use kpp_lab::kpp::{CoefficientField, KppReaction};
use kpp_lab::local::LocalProblem;
use kpp_lab::subsolution::{build_ladder, build_profile, verify_subsolution};

fn main() -> kpp_lab::Result<()> {
    let levels: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(3);
    let prof = build_profile(1.0, 1.0, 2.0, 1, 1.0)?;
    println!("profile speed c={:.4} top={:.4}", prof.c, prof.top());
    let f0 = |u: f64| u * (1.0 - u);
    let lad = build_ladder(&prof, &f0, 1.0, 1e-3)?;
    for (k, v, t) in lad.schedule().into_iter().take(levels + 1) {
        println!("  rung {k}: v={v:.5} from t={t:.3}");
    }
    let g = Grid::line(-100.0, 100.0, 0.05, Boundary::DirichletZero)?;
    let p = LocalProblem::new(
        CoefficientField::isotropic(1, 1.0),
        KppReaction::homogeneous_logistic(),
        GridState::zeros(g),
    )?;
    for k in 0..=levels {
        let ta = lad.time(k as i64 - 1);
        let win: Vec<f64> = (0..20).map(|i| ta + i as f64 * 1.5).collect();
        let r = verify_subsolution(&lad, k, &p, &win)?;
        println!("  rung {k}: min residual {:.3e} over {} nodes", r.min(), r.nodes);
    }
    Ok(())
}

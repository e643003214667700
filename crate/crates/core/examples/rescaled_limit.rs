//! Hyperbolic rescaling: distance between `u(t/ε, x/ε)` started from a
//! half-plane and the indicator of the predicted region, as ε shrinks.
//!
//! cargo run --release --example rescaled_limit

use kpp_lab::homog::{disk_polygon, rescaled_convergence, EnvParams, InitialSet, RandomEnvironment, RescaleSetup};

fn main() -> kpp_lab::Result<()> {
    let env = RandomEnvironment::sample(EnvParams::homogeneous(1.0), 0)?;
    let setup = RescaleSetup {
        window: [[-1.0, -0.1], [3.0, 0.1]],
        strip: true,
        ..RescaleSetup::default()
    };
    let eps = [1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0];
    let s = disk_polygon(2.0, 720);
    let t = rescaled_convergence(&env, InitialSet::HalfPlane { e: [1.0, 0.0] }, &s, &eps, &[0.5, 1.0], &setup)?;
    for r in &t.rows {
        println!("eps={:<8} t={} sup error {:.4} over {} nodes", r.eps, r.t, r.sup_error, r.nodes);
    }
    println!("non-increasing at t=1: {}", t.non_increasing(1.0));
    Ok(())
}

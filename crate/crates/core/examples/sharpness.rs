//! Compares the solution at the moving front with the shifted family
//! bounds for a drift above and below the sharpness threshold.
//!
//! cargo run --release --example sharpness -- [t_end] [h]

use kpp_lab::front::sharpness_run;

fn main() -> kpp_lab::Result<()> {
    let args: Vec<f64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let t_end = args.first().copied().unwrap_or(80.0);
    let h = args.get(1).copied().unwrap_or(0.05);
    let samples: Vec<f64> = (2..).map(|k| 10.0 * k as f64).take_while(|&t| t <= t_end).collect();
    for b_bar in [1.5, 3.0] {
        let rep = sharpness_run(b_bar, 0.5, t_end, h, &samples)?;
        println!("b_bar={b_bar} fitted speed {:.4}", rep.fit.speed);
        for r in &rep.rows {
            println!(
                "  t={:>5} y={:>9.3} u={:.4} lower={:.4} upper={:.3e}",
                r.t, r.y, r.u_at, r.lower_expr, r.upper_expr
            );
        }
        let (lo, up) = rep.violations(t_end / 2.0);
        println!("  violations over the second half: lower {lo:.2e}, upper {up:.2e}");
    }
    Ok(())
}

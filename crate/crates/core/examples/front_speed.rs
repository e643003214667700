//! Level-1/2 front of `u_t = u_xx + u(1-u)` started from the indicator of
//! (0,1): fitted speed and logarithmic delay.
//!
//! cargo run --release --example front_speed -- [h] [t_end]

use kpp_lab::front::{half_width_for, track_run, unit_interval_problem};
use kpp_lab::kpp::Shape;

fn main() -> kpp_lab::Result<()> {
    let args: Vec<f64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let h = args.first().copied().unwrap_or(0.02);
    let t_end = args.get(1).copied().unwrap_or(60.0);
    let started = std::time::Instant::now();
    let p = unit_interval_problem(Shape::Logistic, h, half_width_for(t_end))?;
    let tracks = track_run(&p, &[0.25, 0.5, 0.75], t_end, 0.5, 20.0)?;
    for tr in &tracks {
        let fit = tr.fit.expect("enough samples");
        println!(
            "theta={:.2} speed={:.5} log_coeff={:.4} q={:.4} rms={:.2e}",
            tr.theta, fit.speed, fit.log_coeff, fit.offset, fit.residual
        );
    }
    let mid = &tracks[1];
    let (t0, x0) = mid.times.iter().zip(&mid.positions).find(|(t, _)| **t >= 20.0).unwrap();
    let (t1, x1) = (mid.times.last().unwrap(), mid.positions.last().unwrap());
    println!("secant speed over [{t0}, {t1}] = {:.5}", (x1 - x0) / (t1 - t0));
    println!("elapsed {:.1}s", started.elapsed().as_secs_f64());
    Ok(())
}

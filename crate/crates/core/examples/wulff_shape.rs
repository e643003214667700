//! Wulff shape from radial passage times, compared with the half-plane
//! front speed in direction e1.
//!
//! cargo run --release --example wulff_shape -- [directions] [r_max]

use kpp_lab::homog::wulff::hausdorff_to_disk;
use kpp_lab::homog::{
    half_plane_speed, radii, support_speed, wulff, EnvParams, HalfPlaneSetup, PassageSetup, RandomEnvironment,
    SpeedFit,
};

fn main() -> kpp_lab::Result<()> {
    let args: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let count = args.first().copied().unwrap_or(8) as usize;
    let r_max = args.get(1).copied().unwrap_or(32);
    let env = RandomEnvironment::sample(EnvParams::homogeneous(1.0), 0)?;
    let w = wulff(std::slice::from_ref(&env), &PassageSetup::default(), count, &radii(r_max / 2, r_max), SpeedFit::default())?;
    for s in &w.speeds {
        println!("e=({:+.3}, {:+.3}) w={:.4} [{:.4}, {:.4}]", s.e[0], s.e[1], s.w, s.ci_lo, s.ci_hi);
    }
    println!("convexity defect {:.3e}", w.convexity_defect);
    println!("Hausdorff distance to the radius-2 disk {:.4}", hausdorff_to_disk(&w.vertices, 2.0, 4096));
    let hp = half_plane_speed(&env, &HalfPlaneSetup::default(), [1.0, 0.0])?;
    println!("support speed along e1 {:.4}, half-plane speed {:.4}", support_speed(&w, [1.0, 0.0]), hp.speed);
    Ok(())
}

//! Passage times in a random checkerboard medium: subadditivity, the
//! linear bound and exact stationarity under lattice shifts, per seed.
//!
//! cargo run --release --example passage_laws -- [seeds]

use kpp_lab::homog::passage::{c_spread, check_tau_laws, collinear_plan, passage_table, shift_pair};
use kpp_lab::homog::{EnvParams, PassageSetup, RandomEnvironment};

fn main() -> kpp_lab::Result<()> {
    let seeds: u64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(2);
    let setup = PassageSetup::default();
    let plan = collinear_plan(&[[1.0, 0.0], [0.0, 1.0]], 8.0, 16.0);
    let mut reports = Vec::new();
    for seed in 0..seeds {
        let env = RandomEnvironment::sample(EnvParams::checkerboard(1.0, 2.0, 1.0), seed)?;
        let table = passage_table(&env, &setup, &plan)?;
        for e in &table.entries {
            println!("seed {seed} {:?} -> {:?}: tau={:?} ({:?})", e.y, e.z, e.tau, e.status);
        }
        let pair = shift_pair(&env, &setup, [0.0, 0.0], [8.0, 0.0], [3.25, -7.5])?;
        let rep = check_tau_laws(&table, &[pair])?;
        println!(
            "seed {seed}: {} triples, max violation {}, C={:.4}, lipschitz={:.4}, shifts exact={}",
            rep.triples, rep.max_subadditivity_violation, rep.c_fit, rep.lipschitz, rep.stationarity_exact
        );
        reports.push(rep);
    }
    println!("relative spread of C across seeds: {:.4}", c_spread(&reports));
    Ok(())
}

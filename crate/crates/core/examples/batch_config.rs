//! Runs an experiment from an inline TOML config and prints what the batch
//! runner would write, without touching the filesystem.
//!
//! cargo run --release --example batch_config

use kpp_lab::batch::{execute, parse_config, Experiment};

const CONFIG: &str = r#"
seed = 7
threads = 2

[problem]
h = 0.05
half_width = 60.0
drift = [0.5]

[problem.reaction]
shape = "logistic"

[problem.reaction.rate]
kind = "periodic"
mean = 1.5
amp = 0.5

[solve]
t_end = 15.0
thetas = [0.25, 0.5]
"#;

fn main() -> kpp_lab::Result<()> {
    let cfg = parse_config(CONFIG)?;
    let exp: Experiment = "solve".parse()?;
    let a = execute(exp, &cfg)?;
    for (name, t) in &a.tables {
        println!("{name}: {} rows, columns {:?}", t.rows.len(), t.header);
    }
    print!("{}", a.manifest.render());
    if let Err(e) = parse_config("[solve]\nt_ned = 3.0\n") {
        println!("rejected: {e}");
    }
    Ok(())
}

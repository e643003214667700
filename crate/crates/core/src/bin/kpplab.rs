use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use kpp_lab::batch::{self, runner, Experiment, RunConfig};
use kpp_lab::LabError;

/// Batch runner for the kpp-lab experiments.
///
/// Exit status: 0 ok, 2 config error, 3 numerical abort, 4 budget exhausted.
#[derive(Parser, Debug)]
#[command(version, about)]
struct Args {
    /// validate | solve | vlin | sharpness | subsolution | wulff | homogenize | nonlocal
    experiment: String,
    /// TOML config file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides $KPPLAB_OUT and the config's `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds, replacing the config's `seeds`.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Worker threads.
    #[arg(long)]
    threads: Option<usize>,
}

fn load(args: &Args) -> kpp_lab::Result<(Experiment, RunConfig)> {
    let exp: Experiment = args.experiment.parse()?;
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| LabError::Config(format!("{}: {e}", args.config.display())))?;
    let mut cfg = batch::parse_config(&text).map_err(|e| match e {
        LabError::Config(m) => LabError::Config(format!("{}: {m}", args.config.display())),
        e => e,
    })?;
    if let Some(named) = cfg.experiment.filter(|&e| e != exp) {
        return Err(LabError::Config(format!("config is for `{named}`, not `{exp}`")));
    }
    if let Some(seeds) = &args.seeds {
        cfg.seed = seeds.first().copied().unwrap_or(cfg.seed);
        cfg.seeds = seeds.clone();
    }
    if let Some(n) = args.threads {
        cfg.threads = n;
    }
    Ok((exp, cfg))
}

fn main() -> ExitCode {
    let args = Args::parse();
    let result = load(&args).and_then(|(exp, cfg)| {
        let dir = runner::output_dir(exp, &cfg, args.out.as_deref());
        let files = runner::run(exp, &cfg, &dir)?;
        Ok((dir, files))
    });
    match result {
        Ok((dir, files)) => {
            println!("wrote {} files to {}", files.len(), dir.display());
            ExitCode::from(runner::EXIT_OK as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(runner::exit_code(&e) as u8)
        }
    }
}

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::error::{LabError, Result};

use super::artifacts::Artifacts;
use super::config::{Experiment, RunConfig};
use super::experiments;

/// Environment variable that overrides the config's output directory.
pub const OUT_ENV: &str = "KPPLAB_OUT";

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_BUDGET: i32 = 4;

pub fn exit_code(err: &LabError) -> i32 {
    match err {
        LabError::Config(_)
        | LabError::Invalid(_)
        | LabError::Refused(_)
        | LabError::NotAReaction { .. }
        | LabError::GridMismatch(_) => EXIT_CONFIG,
        LabError::Instability { .. } => EXIT_NUMERIC,
        LabError::Budget(_) => EXIT_BUDGET,
        LabError::Search(_) | LabError::Io(_) => EXIT_FAILURE,
    }
}

/// Runs `exp` on a pool of `cfg.threads` workers. Parallel work inside the
/// experiments collects results in job order, so the numbers do not depend
/// on the pool size.
pub fn execute(exp: Experiment, cfg: &RunConfig) -> Result<Artifacts> {
    cfg.check(exp)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| LabError::Config(format!("thread pool: {e}")))?;
    let started = Instant::now();
    let mut a = pool.install(|| match exp {
        Experiment::Validate => experiments::validate(cfg),
        Experiment::Solve => experiments::solve(cfg),
        Experiment::Vlin => experiments::vlin(cfg),
        Experiment::Sharpness => experiments::sharpness(cfg),
        Experiment::Subsolution => experiments::subsolution(cfg),
        Experiment::Wulff => experiments::wulff(cfg),
        Experiment::Homogenize => experiments::homogenize(cfg),
        Experiment::Nonlocal => experiments::nonlocal(cfg),
    })?;
    let mut head = super::artifacts::Manifest::default();
    head.set("tool", env!("CARGO_PKG_NAME"));
    head.set("version", env!("CARGO_PKG_VERSION"));
    head.set("experiment", exp);
    head.set("seed", cfg.seed);
    head.set("threads", cfg.threads);
    head.set("elapsed_s", format!("{:.3}", started.elapsed().as_secs_f64()));
    head.entries.append(&mut a.manifest.entries);
    a.manifest = head;
    Ok(a)
}

/// Output directory: `cli` if given, else `$KPPLAB_OUT`, else the config's
/// `out`, else `out/<experiment>`.
pub fn output_dir(exp: Experiment, cfg: &RunConfig, cli: Option<&Path>) -> PathBuf {
    if let Some(p) = cli {
        return p.to_path_buf();
    }
    if let Some(p) = std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(p);
    }
    match &cfg.out {
        Some(p) => PathBuf::from(p),
        None => Path::new("out").join(exp.name()),
    }
}

/// Executes and writes the artifacts; nothing is written when the run fails.
pub fn run(exp: Experiment, cfg: &RunConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let a = execute(exp, cfg)?;
    a.commit(dir)
}

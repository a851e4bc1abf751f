//! Config-driven experiment runs, comparisons and self-checks.

mod compare;
mod config;
mod verify;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::env::{CartPole, Environment};
use crate::error::{Error, Result};
use crate::optim::{run_observed, IterationRecord, Snapshot, TrainedPolicy, TrainingLog};

pub use compare::{compare, ComparisonReport, ComparisonRow};
pub use config::{EnvironmentConfig, OutputConfig, RunConfig, ENVIRONMENTS};
pub use verify::{verify, CheckResult, Fault, VerifyReport};

pub const LOG_FILE: &str = "log.csv";
pub const RESOLVED_FILE: &str = "config.resolved";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

pub const CSV_HEADER: &str = "iter,mean_return,min_return,max_return,disc_objective,step_norm,\
solver_newton_iters,solver_converged,expansion_size,wall_ms";

/// Result of [`execute`].
#[derive(Debug)]
pub struct RunOutcome {
    pub policy: TrainedPolicy,
    pub log: TrainingLog,
    pub dir: PathBuf,
}

/// Runs `cfg`, writing the resolved config, the CSV log and checkpoints
/// into `cfg.output.dir`.
pub fn execute(cfg: &RunConfig) -> Result<RunOutcome> {
    let dir = cfg.output.dir.clone();
    fs::create_dir_all(&dir)?;
    fs::write(dir.join(RESOLVED_FILE), cfg.resolved()?)?;
    let (policy, log) = match &cfg.environment {
        EnvironmentConfig::AssetAllocation(spec) => {
            let mdp = EnvironmentConfig::asset_mdp(spec, cfg.optimizer.gamma)?;
            run_logged(&mdp, cfg, &dir)?
        }
        EnvironmentConfig::CartPole => run_logged(&CartPole::new(), cfg, &dir)?,
    };
    write_json(&dir.join(CHECKPOINT_FILE), &policy.to_checkpoint())?;
    Ok(RunOutcome { policy, log, dir })
}

fn run_logged<E: Environment>(env: &E, cfg: &RunConfig, dir: &Path) -> Result<(TrainedPolicy, TrainingLog)> {
    let mut csv = csv::Writer::from_writer(BufWriter::new(File::create(dir.join(LOG_FILE))?));
    let flush_every = cfg.output.csv_flush_interval;
    let checkpoint_every = cfg.output.checkpoint_every;
    let mut observer = |rec: &IterationRecord, policy: &dyn Snapshot| -> Result<()> {
        csv.serialize(rec)?;
        if rec.iter.is_multiple_of(flush_every) {
            csv.flush()?;
        }
        if checkpoint_every > 0 && rec.iter.is_multiple_of(checkpoint_every) {
            write_json(&dir.join(format!("checkpoint_{:06}.json", rec.iter)), &policy.checkpoint())?;
        }
        Ok(())
    };
    let out = run_observed(env, &cfg.optimizer, &mut observer)?;
    csv.flush()?;
    Ok(out)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Reads a `log.csv` back.
pub fn read_log(path: &Path) -> Result<TrainingLog> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header = rdr.headers()?.iter().collect::<Vec<_>>().join(",");
    if header != CSV_HEADER {
        return Err(Error::Validation(format!("unexpected log header `{header}`")));
    }
    let records = rdr.deserialize().collect::<std::result::Result<Vec<IterationRecord>, _>>()?;
    Ok(TrainingLog { records })
}

use std::fmt;
use std::path::Path;

use super::{execute, RunConfig};
use crate::error::{Error, Result};
use crate::optim::TrainingLog;

/// Final numbers of one compared run.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub label: String,
    pub method: &'static str,
    pub iterations: usize,
    pub final_mean_return: f64,
    pub final_disc_objective: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
}

impl fmt::Display for ComparisonReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(5);
        writeln!(f, "{:<width$}  {:<12}  {:>5}  {:>16}  {:>16}", "label", "method", "iters", "final_mean_return", "final_disc_obj")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<width$}  {:<12}  {:>5}  {:>16}  {:>16}",
                r.label, r.method, r.iterations, r.final_mean_return, r.final_disc_objective
            )?;
        }
        Ok(())
    }
}

/// Runs every config and writes a wide CSV keyed by iteration to `merged`.
/// All configs must share one environment.
pub fn compare(configs: &[(String, RunConfig)], merged: &Path) -> Result<ComparisonReport> {
    if configs.len() < 2 {
        return Err(Error::Config("compare needs at least two configs".into()));
    }
    let (first_label, first) = &configs[0];
    for (label, cfg) in &configs[1..] {
        if cfg.environment != first.environment {
            let (a, b) = (first.environment.name(), cfg.environment.name());
            let msg = if a == b {
                format!("environment mismatch: `{first_label}` and `{label}` use different `[env]` settings for {a}")
            } else {
                format!("environment mismatch: `{first_label}` uses {a} but `{label}` uses {b}")
            };
            return Err(Error::Config(msg));
        }
    }
    let labels = unique_labels(configs.iter().map(|(l, _)| l.as_str()));
    let mut logs: Vec<TrainingLog> = Vec::with_capacity(configs.len());
    for (_, cfg) in configs {
        logs.push(execute(cfg)?.log);
    }
    let mut w = csv::Writer::from_path(merged)?;
    let mut header = vec!["iter".to_string()];
    for l in &labels {
        header.push(format!("{l}.mean_return"));
        header.push(format!("{l}.disc_objective"));
    }
    w.write_record(&header)?;
    let rows = logs.iter().map(TrainingLog::len).max().unwrap_or(0);
    for i in 0..rows {
        let mut rec = vec![(i + 1).to_string()];
        for log in &logs {
            match log.records.get(i) {
                Some(r) => {
                    rec.push(r.mean_return.to_string());
                    rec.push(r.disc_objective.to_string());
                }
                None => rec.extend([String::new(), String::new()]),
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    let rows = labels
        .into_iter()
        .zip(configs)
        .zip(&logs)
        .map(|((label, (_, cfg)), log)| {
            let last = log.last().expect("at least one iteration");
            ComparisonRow {
                label,
                method: cfg.optimizer.method.name(),
                iterations: log.len(),
                final_mean_return: last.mean_return,
                final_disc_objective: last.disc_objective,
            }
        })
        .collect();
    Ok(ComparisonReport { rows })
}

/// Suffixes repeated labels with `#2`, `#3`, ...
fn unique_labels<'a>(labels: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut seen: Vec<String> = Vec::new();
    let mut out = Vec::new();
    for l in labels {
        let n = seen.iter().filter(|s| s.as_str() == l).count();
        seen.push(l.to_string());
        out.push(if n == 0 { l.to_string() } else { format!("{l}#{}", n + 1) });
    }
    out
}

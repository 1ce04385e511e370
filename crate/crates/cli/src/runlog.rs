//! Append-only run logs: one JSONL file per invocation, one record per
//! logged step. Reruns open fresh files and never mutate old ones.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::{CliError, Result};

#[derive(Serialize)]
struct Record<'a> {
    timestamp_ms: u128,
    phase: &'a str,
    step: u64,
    scalars: &'a [(String, f64)],
}

pub struct RunLog {
    path: PathBuf,
    last_step_per_phase: std::collections::BTreeMap<String, u64>,
}

impl RunLog {
    /// Creates `logs/<stage>_<n>.jsonl` under the run directory, picking the
    /// first unused ordinal so earlier logs stay untouched.
    pub fn create(run_dir: &Path, stage: &str) -> Result<Self> {
        let dir = run_dir.join("logs");
        std::fs::create_dir_all(&dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
        for n in 0..u32::MAX {
            let path = dir.join(format!("{stage}_{n:04}.jsonl"));
            if !path.exists() {
                std::fs::write(&path, "").map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
                return Ok(Self {
                    path,
                    last_step_per_phase: Default::default(),
                });
            }
        }
        Err(CliError::Data("log ordinal space exhausted".into()))
    }

    pub fn append(&mut self, phase: &str, step: u64, scalars: &[(String, f64)]) -> Result<()> {
        if let Some(&last) = self.last_step_per_phase.get(phase) {
            if step < last {
                return Err(CliError::Config(format!(
                    "log step {step} below previous {last} in phase {phase}"
                )));
            }
        }
        self.last_step_per_phase.insert(phase.to_string(), step);
        let record = Record {
            timestamp_ms: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_millis())
                .unwrap_or(0),
            phase,
            step,
            scalars,
        };
        let line = serde_json::to_string(&record).expect("record serializes");
        let mut file = OpenOptions::new()
            .append(true)
            .open(&self.path)
            .map_err(|e| CliError::Data(format!("{}: {e}", self.path.display())))?;
        writeln!(file, "{line}").map_err(|e| CliError::Data(format!("{}: {e}", self.path.display())))?;
        Ok(())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_invocations_get_new_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = RunLog::create(dir.path(), "train").unwrap();
        a.append("epoch", 0, &[("loss".into(), 1.0)]).unwrap();
        let b = RunLog::create(dir.path(), "train").unwrap();
        assert_ne!(a.path(), b.path());
        // appends accumulate lines
        a.append("epoch", 1, &[("loss".into(), 0.5)]).unwrap();
        let text = std::fs::read_to_string(a.path()).unwrap();
        assert_eq!(text.lines().count(), 2);
        // steps are monotone within a phase
        assert!(a.append("epoch", 0, &[]).is_err());
    }
}

//! Run records and their status machine.

use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use colsig_gan::{RunConfig, RunDir};
use serde::{Deserialize, Serialize};

use crate::error::{ApiError, ApiResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum RunStatus {
    Pending,
    Training,
    Paused,
    Done,
    Failed,
}

impl RunStatus {
    /// PENDING -> TRAINING -> {PAUSED <-> TRAINING, DONE, FAILED}.
    pub fn can_become(self, next: RunStatus) -> bool {
        use RunStatus::*;
        matches!(
            (self, next),
            (Pending, Training) | (Training, Paused) | (Paused, Training) | (Training, Done) | (Training, Failed)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub status: RunStatus,
    pub config: RunConfig,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
    /// Last completed epoch, -1 before the first.
    pub latest_epoch: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn now_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn record_path(dir: &RunDir) -> PathBuf {
    dir.root().join("run.json")
}

impl RunRecord {
    pub fn new(run_id: String, config: RunConfig) -> Self {
        RunRecord {
            run_id,
            status: RunStatus::Pending,
            config,
            created_at: now_secs(),
            latest_epoch: -1,
            error: None,
        }
    }

    pub fn transition(&mut self, next: RunStatus) -> ApiResult<()> {
        if !self.status.can_become(next) {
            return Err(ApiError::Conflict(format!(
                "run {} cannot go from {:?} to {:?}",
                self.run_id, self.status, next
            )));
        }
        self.status = next;
        Ok(())
    }

    pub fn save(&self, dir: &RunDir) -> ApiResult<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| ApiError::Internal(e.to_string()))?;
        let p = record_path(dir);
        colsig_core::write_atomic(&p, text.as_bytes())
            .map_err(|e| ApiError::Internal(format!("writing {}: {e}", p.display())))
    }

    /// Rebuild the record of a run from its directory alone. A run that was
    /// TRAINING has lost its worker and comes back PAUSED.
    pub fn reconstruct(dir: &RunDir) -> ApiResult<Self> {
        let config = dir.config()?;
        let latest = dir.latest_epoch()?;
        let latest_epoch = latest.map_or(-1, |e| e as i64);
        let p = record_path(dir);
        let mut rec = match std::fs::read_to_string(&p) {
            Ok(text) => serde_json::from_str(&text).map_err(|e| ApiError::Internal(format!("{}: {e}", p.display())))?,
            Err(_) => {
                let mut rec = RunRecord::new(dir.run_id(), config.clone());
                rec.created_at = 0;
                rec.status = if latest.is_some_and(|e| e >= config.train.epochs as u64) {
                    RunStatus::Done
                } else if latest.is_some() || dir.resume_path().is_file() {
                    RunStatus::Paused
                } else {
                    RunStatus::Pending
                };
                rec
            }
        };
        rec.config = config;
        rec.latest_epoch = latest_epoch;
        if rec.status == RunStatus::Training {
            rec.status = RunStatus::Paused;
        }
        Ok(rec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use RunStatus::*;

    #[test]
    fn allowed_transitions() {
        let all = [Pending, Training, Paused, Done, Failed];
        let allowed = [(Pending, Training), (Training, Paused), (Paused, Training), (Training, Done), (Training, Failed)];
        for a in all {
            for b in all {
                assert_eq!(a.can_become(b), allowed.contains(&(a, b)), "{a:?} -> {b:?}");
            }
        }
    }

    #[test]
    fn status_spelling() {
        assert_eq!(serde_json::to_string(&Training).unwrap(), "\"TRAINING\"");
        let mut r = RunRecord::new("r".into(), RunConfig::default());
        assert_eq!(r.latest_epoch, -1);
        assert!(r.transition(Paused).is_err());
        r.transition(Training).unwrap();
        r.transition(Done).unwrap();
        assert!(matches!(r.transition(Training), Err(ApiError::Conflict(_))));
    }
}

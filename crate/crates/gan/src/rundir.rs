//! On-disk run layout:
//!
//! ```text
//! runs/<run_id>/config.json
//! runs/<run_id>/metrics.log          one StepMetrics JSON record per line
//! runs/<run_id>/ratings.log          curator ratings (server is the only writer)
//! runs/<run_id>/overrides.log        manual weight overrides (server only)
//! runs/<run_id>/feedback.json        FeedbackState (training worker only)
//! runs/<run_id>/resume.bin           mid-epoch snapshot written on pause
//! runs/<run_id>/epoch_<E>/checkpoint.bin
//! runs/<run_id>/epoch_<E>/sample_<K>.png
//! runs/<run_id>/epoch_<E>/samples.json
//! runs/<run_id>/epoch_<E>/memorization.json
//! ```
//!
//! Epoch directories are assembled under a temporary name and renamed into
//! place, so readers never see a partial epoch.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use colsig_core::feedback::{self, FeedbackState, PolicyConfig, Rating, WeightOverride};
use colsig_core::safeguard::MemorizationReport;

use crate::config::RunConfig;
use crate::error::{GanError, Result};
use crate::loss::FeedbackWeights;
use crate::train::{Control, SampleBatch, StepMetrics, TrainObserver, TrainState};

const MAGIC: &[u8; 8] = b"CSGCKPT1";

pub fn save_checkpoint(path: &Path, state: &TrainState) -> Result<()> {
    let body = bincode::serde::encode_to_vec(state, bincode::config::standard()).map_err(|e| GanError::Checkpoint {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut bytes = Vec::with_capacity(body.len() + MAGIC.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&body);
    colsig_core::write_atomic(path, &bytes).map_err(|e| GanError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let bytes = fs::read(path).map_err(|e| GanError::io(path, e))?;
    let bad = |message: String| GanError::Checkpoint {
        path: path.to_path_buf(),
        message,
    };
    let body = bytes.strip_prefix(MAGIC.as_slice()).ok_or_else(|| bad("not a checkpoint file".into()))?;
    let (state, used): (TrainState, usize) =
        bincode::serde::decode_from_slice(body, bincode::config::standard()).map_err(|e| bad(e.to_string()))?;
    if used != body.len() {
        return Err(bad("trailing bytes".into()));
    }
    Ok(state)
}

/// Run ids become directory names and sample-id prefixes.
pub fn valid_run_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    /// Create `runs_root/<run_id>` with its config.
    pub fn create(runs_root: &Path, run_id: &str, config: &RunConfig) -> Result<Self> {
        if !valid_run_id(run_id) {
            return Err(GanError::Config(format!("invalid run id `{run_id}`")));
        }
        config.validate()?;
        fs::create_dir_all(runs_root).map_err(|e| GanError::io(runs_root, e))?;
        let root = runs_root.join(run_id);
        fs::create_dir(&root).map_err(|e| GanError::io(&root, e))?;
        let dir = RunDir { root };
        let text = serde_json::to_string_pretty(config)?;
        colsig_core::write_atomic(&dir.config_path(), text.as_bytes()).map_err(|e| GanError::io(dir.config_path(), e))?;
        Ok(dir)
    }

    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        if !root.join("config.json").is_file() {
            return Err(GanError::io(
                root.join("config.json"),
                std::io::Error::new(std::io::ErrorKind::NotFound, "run has no config.json"),
            ));
        }
        Ok(RunDir { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_id(&self) -> String {
        self.root.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
    }

    pub fn config(&self) -> Result<RunConfig> {
        let text = fs::read_to_string(self.config_path()).map_err(|e| GanError::io(self.config_path(), e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config.json")
    }
    pub fn metrics_path(&self) -> PathBuf {
        self.root.join("metrics.log")
    }
    pub fn ratings_path(&self) -> PathBuf {
        self.root.join("ratings.log")
    }
    pub fn overrides_path(&self) -> PathBuf {
        self.root.join("overrides.log")
    }
    pub fn feedback_path(&self) -> PathBuf {
        self.root.join("feedback.json")
    }
    pub fn resume_path(&self) -> PathBuf {
        self.root.join("resume.bin")
    }
    pub fn epoch_dir(&self, epoch: u64) -> PathBuf {
        self.root.join(format!("epoch_{epoch}"))
    }
    pub fn checkpoint_path(&self, epoch: u64) -> PathBuf {
        self.epoch_dir(epoch).join("checkpoint.bin")
    }
    pub fn sample_path(&self, epoch: u64, k: usize) -> PathBuf {
        self.epoch_dir(epoch).join(format!("sample_{k}.png"))
    }

    /// Completed epochs present on disk, ascending.
    pub fn epochs(&self) -> Result<Vec<u64>> {
        let mut out = Vec::new();
        let entries = match fs::read_dir(&self.root) {
            Ok(e) => e,
            Err(e) => return Err(GanError::io(&self.root, e)),
        };
        for entry in entries.flatten() {
            let name = entry.file_name();
            let Some(n) = name.to_str().and_then(|s| s.strip_prefix("epoch_")) else { continue };
            if let Ok(e) = n.parse::<u64>() {
                if entry.path().join("checkpoint.bin").is_file() {
                    out.push(e);
                }
            }
        }
        out.sort_unstable();
        Ok(out)
    }

    pub fn latest_epoch(&self) -> Result<Option<u64>> {
        Ok(self.epochs()?.last().copied())
    }

    /// Publish one finished epoch atomically.
    pub fn write_epoch(&self, state: &TrainState, samples: &SampleBatch) -> Result<()> {
        let tmp = self.root.join(format!(".epoch_{}.tmp", state.epoch));
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(|e| GanError::io(&tmp, e))?;
        }
        fs::create_dir_all(&tmp).map_err(|e| GanError::io(&tmp, e))?;
        save_checkpoint(&tmp.join("checkpoint.bin"), state)?;
        for (k, img) in samples.images.iter().enumerate() {
            img.save_png(&tmp.join(format!("sample_{k}.png")))?;
        }
        let meta = serde_json::to_string_pretty(samples)?;
        fs::write(tmp.join("samples.json"), meta).map_err(|e| GanError::io(&tmp, e))?;
        let mem = serde_json::to_string_pretty(&samples.memorization)?;
        fs::write(tmp.join("memorization.json"), mem).map_err(|e| GanError::io(&tmp, e))?;
        let dest = self.epoch_dir(state.epoch);
        if dest.exists() {
            fs::remove_dir_all(&dest).map_err(|e| GanError::io(&dest, e))?;
        }
        fs::rename(&tmp, &dest).map_err(|e| GanError::io(&dest, e))
    }

    pub fn read_samples(&self, epoch: u64) -> Result<SampleBatch> {
        let p = self.epoch_dir(epoch).join("samples.json");
        let text = fs::read_to_string(&p).map_err(|e| GanError::io(&p, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn read_memorization(&self, epoch: u64) -> Result<Vec<MemorizationReport>> {
        let p = self.epoch_dir(epoch).join("memorization.json");
        let text = fs::read_to_string(&p).map_err(|e| GanError::io(&p, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn append_metrics(&self, m: &StepMetrics) -> Result<()> {
        let p = self.metrics_path();
        let mut line = serde_json::to_string(m)?;
        line.push('\n');
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&p)
            .map_err(|e| GanError::io(&p, e))?;
        f.write_all(line.as_bytes()).map_err(|e| GanError::io(&p, e))
    }

    pub fn read_metrics(&self) -> Result<Vec<StepMetrics>> {
        Ok(feedback::read_jsonl(&self.metrics_path())?)
    }

    /// Drop metric records past `step`, left behind by an interrupted run.
    pub fn truncate_metrics(&self, step: u64) -> Result<()> {
        let kept: Vec<StepMetrics> = self.read_metrics()?.into_iter().filter(|m| m.step <= step).collect();
        let mut text = String::new();
        for m in &kept {
            text.push_str(&serde_json::to_string(m)?);
            text.push('\n');
        }
        colsig_core::write_atomic(&self.metrics_path(), text.as_bytes()).map_err(|e| GanError::io(self.metrics_path(), e))
    }

    pub fn read_ratings(&self) -> Result<Vec<Rating>> {
        Ok(feedback::read_jsonl(&self.ratings_path())?)
    }

    pub fn read_overrides(&self) -> Result<Vec<WeightOverride>> {
        Ok(feedback::read_jsonl(&self.overrides_path())?)
    }

    pub fn read_feedback(&self) -> Result<Option<FeedbackState>> {
        let p = self.feedback_path();
        if !p.is_file() {
            return Ok(None);
        }
        Ok(Some(FeedbackState::load(&p)?))
    }

    /// The most advanced saved state: the pause snapshot or the latest epoch
    /// checkpoint, whichever is further along.
    pub fn latest_state(&self) -> Result<Option<TrainState>> {
        let from_epoch = match self.latest_epoch()? {
            Some(e) => Some(load_checkpoint(&self.checkpoint_path(e))?),
            None => None,
        };
        let from_pause = if self.resume_path().is_file() {
            Some(load_checkpoint(&self.resume_path())?)
        } else {
            None
        };
        Ok(match (from_epoch, from_pause) {
            (Some(a), Some(b)) => Some(if b.critic_step > a.critic_step { b } else { a }),
            (a, b) => a.or(b),
        })
    }

    /// Fresh state, or the saved one with logs rolled back to match it.
    pub fn prepare_resume(&self, run_id: &str) -> Result<TrainState> {
        let state = match self.latest_state()? {
            Some(s) => s,
            None => TrainState::new(run_id, self.config()?)?,
        };
        self.truncate_metrics(state.critic_step)?;
        Ok(state)
    }
}

/// Observer that persists a run into its directory and folds curator
/// feedback at epoch boundaries.
pub struct RunDirObserver<'a> {
    pub dir: RunDir,
    pub policy: PolicyConfig,
    feedback: FeedbackState,
    inner: &'a mut dyn TrainObserver,
}

impl<'a> RunDirObserver<'a> {
    /// `resumed_epoch` is the completed-epoch count of the state being
    /// resumed; feedback boundaries past it are discarded and replayed.
    pub fn new(dir: RunDir, state: &TrainState, inner: &'a mut dyn TrainObserver) -> Result<Self> {
        let policy = PolicyConfig::default();
        let initial = FeedbackState::new(state.run_id.clone(), initial_target(&dir)?);
        let feedback = match dir.read_feedback()? {
            Some(saved) => {
                let kept: Vec<_> = saved
                    .boundaries
                    .iter()
                    .copied()
                    .filter(|b| b.epoch <= state.epoch as i64)
                    .collect();
                if kept.len() == saved.boundaries.len() {
                    saved
                } else {
                    let ratings = dir.read_ratings()?;
                    let overrides = dir.read_overrides()?;
                    let rolled = feedback::replay(&initial, &ratings, &overrides, &kept, &policy)?;
                    rolled.save(&dir.feedback_path())?;
                    rolled
                }
            }
            None => {
                initial.save(&dir.feedback_path())?;
                initial
            }
        };
        Ok(RunDirObserver {
            dir,
            policy,
            feedback,
            inner,
        })
    }

    pub fn feedback_state(&self) -> &FeedbackState {
        &self.feedback
    }
}

fn initial_target(dir: &RunDir) -> Result<f64> {
    Ok(dir
        .config()?
        .target_thickness
        .unwrap_or(colsig_core::imaging::PreprocessParams::default().target_stroke_width))
}

impl TrainObserver for RunDirObserver<'_> {
    fn poll(&mut self, state: &TrainState) -> Control {
        self.inner.poll(state)
    }

    fn on_step(&mut self, metrics: &StepMetrics) -> Result<()> {
        self.dir.append_metrics(metrics)?;
        self.inner.on_step(metrics)
    }

    fn feedback_at_boundary(&mut self, epoch: u64, _current: FeedbackWeights) -> Result<FeedbackWeights> {
        let ratings = self.dir.read_ratings()?;
        let overrides = self.dir.read_overrides()?;
        let next = feedback::advance_epoch(&self.feedback, &ratings, &overrides, epoch as i64, &self.policy)?;
        next.save(&self.dir.feedback_path())?;
        self.feedback = next;
        let w = FeedbackWeights {
            alpha: self.feedback.alpha,
            beta: self.feedback.beta,
            target_thickness: self.feedback.target_thickness,
        };
        self.inner.feedback_at_boundary(epoch, w)
    }

    fn on_epoch(&mut self, state: &TrainState, samples: &SampleBatch) -> Result<Control> {
        self.dir.write_epoch(state, samples)?;
        if self.dir.resume_path().is_file() {
            fs::remove_file(self.dir.resume_path()).map_err(|e| GanError::io(self.dir.resume_path(), e))?;
        }
        self.inner.on_epoch(state, samples)
    }

    fn on_pause(&mut self, state: &TrainState) -> Result<()> {
        save_checkpoint(&self.dir.resume_path(), state)?;
        self.inner.on_pause(state)
    }

    fn on_failure(&mut self, state: &TrainState, error: &GanError) {
        let p = self.dir.root().join("failure.bin");
        if let Err(e) = save_checkpoint(&p, state) {
            log::error!("could not write failure snapshot: {e}");
        }
        log::error!("run {} failed: {error}", state.run_id);
        self.inner.on_failure(state, error)
    }
}

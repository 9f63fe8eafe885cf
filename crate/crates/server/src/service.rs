//! Run registry and the operations behind the HTTP API. Everything here is
//! synchronous; handlers call it off the async executor.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU8, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::JoinHandle;

use colsig_core::dataset::SamplingPlan;
use colsig_core::feedback::{self, direction_diversity, FeedbackState, Rating, WeightOverride};
use colsig_core::imaging::{estimate_stroke_width, PreprocessParams};
use colsig_core::safeguard::MemorizationReport;
use colsig_core::vectorize::{export_svg, AnchorSet, PathSet, Point, SplinePath};
use colsig_core::{Canvas, RasterImage};
use colsig_gan::rundir::valid_run_id;
use colsig_gan::train::parse_sample_id;
use colsig_gan::{
    train_run, Control, GanError, RunConfig, RunDir, RunDirObserver, RunOutcome, SampleBatch, StepMetrics,
    TrainObserver, TrainState, TrainingData,
};
use serde::{Deserialize, Serialize};

use crate::error::{ApiError, ApiResult};
use crate::record::{now_secs, RunRecord, RunStatus};

const CONTINUE: u8 = 0;
const PAUSE: u8 = 1;
const STOP: u8 = 2;

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

/// One run known to the server.
pub struct RunSlot {
    pub dir: RunDir,
    record: Mutex<RunRecord>,
    control: AtomicU8,
    worker: Mutex<Option<JoinHandle<()>>>,
    /// Serializes appends to the rating and override logs.
    log_lock: Mutex<()>,
}

impl RunSlot {
    fn new(dir: RunDir, record: RunRecord) -> Self {
        RunSlot {
            dir,
            record: Mutex::new(record),
            control: AtomicU8::new(CONTINUE),
            worker: Mutex::new(None),
            log_lock: Mutex::new(()),
        }
    }

    pub fn record(&self) -> RunRecord {
        lock(&self.record).clone()
    }

    fn update(&self, f: impl FnOnce(&mut RunRecord) -> ApiResult<()>) -> ApiResult<RunRecord> {
        let mut rec = lock(&self.record);
        let mut next = rec.clone();
        f(&mut next)?;
        next.save(&self.dir)?;
        *rec = next.clone();
        Ok(next)
    }

    fn initial_feedback(&self) -> ApiResult<FeedbackState> {
        let rec = self.record();
        let target = rec
            .config
            .target_thickness
            .unwrap_or(PreprocessParams::default().target_stroke_width);
        Ok(FeedbackState::new(rec.run_id, target))
    }

    fn feedback_state(&self) -> ApiResult<FeedbackState> {
        match self.dir.read_feedback()? {
            Some(s) => Ok(s),
            None => self.initial_feedback(),
        }
    }
}

pub struct AppState {
    root: PathBuf,
    runs: Mutex<BTreeMap<String, Arc<RunSlot>>>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct CreateRun {
    #[serde(default)]
    pub run_id: Option<String>,
    #[serde(default)]
    pub config: RunConfig,
    /// Sampling plan on the server's filesystem; copied into the run.
    pub plan_path: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleView {
    pub sample_id: String,
    pub epoch: u64,
    pub index: usize,
    pub image_url: String,
    pub flagged: bool,
    pub distance: f64,
    pub nearest_source_id: String,
    pub tau: f64,
    pub direction_diversity: f64,
    /// `None` for a blank sample.
    pub stroke_width: Option<f64>,
    /// Latest rating of each author.
    pub ratings: Vec<Rating>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleList {
    pub run_id: String,
    pub epoch: u64,
    pub samples: Vec<SampleView>,
    /// Flagged samples left out of `samples`.
    pub hidden_flagged: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatingAck {
    pub accepted: bool,
    pub sample_id: String,
    pub author: String,
    /// Position of the rating in the run's rating log.
    pub index: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeedbackView {
    pub run_id: String,
    /// State as of the last epoch boundary.
    pub state: FeedbackState,
    /// State with overrides that are logged but not yet consumed.
    pub effective: FeedbackState,
    pub pending_overrides: usize,
}

#[derive(Debug, Clone, Deserialize)]
pub struct SetFeedback {
    pub alpha: f64,
    pub beta: f64,
    #[serde(default)]
    pub target_thickness: Option<f64>,
    pub author: String,
    #[serde(default)]
    pub timestamp: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsPage {
    pub records: Vec<StepMetrics>,
    /// Pass as `from_step` to fetch the next page.
    pub next_from_step: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct FitRequest {
    pub strokes: Vec<Vec<Point>>,
    #[serde(default)]
    pub smoothing: f64,
    #[serde(default = "default_fit_points")]
    pub points_per_stroke: usize,
    #[serde(default)]
    pub canvas: Canvas,
}

fn default_fit_points() -> usize {
    64
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FittedStroke {
    pub spline: SplinePath,
    /// Evenly spaced along the arc, endpoints included.
    pub points: Vec<Point>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResponse {
    pub strokes: Vec<FittedStroke>,
    pub svg: String,
}

pub const MAX_METRICS_PAGE: usize = 5000;

impl AppState {
    /// Open the runs root, rebuilding every run's record from disk.
    pub fn open(root: impl Into<PathBuf>) -> ApiResult<Arc<Self>> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|e| ApiError::Internal(format!("{}: {e}", root.display())))?;
        let mut runs = BTreeMap::new();
        let entries = std::fs::read_dir(&root).map_err(|e| ApiError::Internal(format!("{}: {e}", root.display())))?;
        for entry in entries.flatten() {
            let path = entry.path();
            let name = entry.file_name().to_string_lossy().into_owned();
            if !valid_run_id(&name) || !path.join("config.json").is_file() {
                continue;
            }
            let dir = RunDir::open(&path)?;
            let rec = RunRecord::reconstruct(&dir)?;
            rec.save(&dir)?;
            runs.insert(name, Arc::new(RunSlot::new(dir, rec)));
        }
        Ok(Arc::new(AppState {
            root,
            runs: Mutex::new(runs),
        }))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn slot(&self, run_id: &str) -> ApiResult<Arc<RunSlot>> {
        lock(&self.runs)
            .get(run_id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("unknown run `{run_id}`")))
    }

    pub fn list_runs(&self) -> Vec<RunRecord> {
        lock(&self.runs).values().map(|s| s.record()).collect()
    }

    pub fn get_run(&self, run_id: &str) -> ApiResult<RunRecord> {
        Ok(self.slot(run_id)?.record())
    }

    pub fn create_run(&self, req: CreateRun) -> ApiResult<RunRecord> {
        req.config.validate()?;
        let mut plan = SamplingPlan::load(&req.plan_path)?;
        for e in &mut plan.entries {
            if e.path.is_relative() {
                e.path = std::path::absolute(&e.path).map_err(|err| ApiError::BadRequest(err.to_string()))?;
            }
        }
        let mut runs = lock(&self.runs);
        let run_id = match req.run_id {
            Some(id) => {
                if !valid_run_id(&id) {
                    return Err(ApiError::BadRequest(format!("invalid run id `{id}`")));
                }
                if runs.contains_key(&id) || self.root.join(&id).exists() {
                    return Err(ApiError::Conflict(format!("run `{id}` already exists")));
                }
                id
            }
            None => (1..)
                .map(|n| format!("run-{n:03}"))
                .find(|id| !runs.contains_key(id) && !self.root.join(id).exists())
                .expect("unbounded"),
        };
        let dir = RunDir::create(&self.root, &run_id, &req.config)?;
        plan.save(&dir.root().join("plan.json"))?;
        let rec = RunRecord::new(run_id.clone(), req.config);
        rec.save(&dir)?;
        runs.insert(run_id, Arc::new(RunSlot::new(dir, rec.clone())));
        Ok(rec)
    }

    pub fn start(&self, run_id: &str) -> ApiResult<RunRecord> {
        let slot = self.slot(run_id)?;
        let mut worker = lock(&slot.worker);
        if let Some(h) = worker.take() {
            // A finished worker from an earlier session of this run.
            if !h.is_finished() {
                *worker = Some(h);
                return Err(ApiError::Conflict(format!("run `{run_id}` is already training")));
            }
            let _ = h.join();
        }
        let rec = slot.update(|r| {
            r.error = None;
            r.transition(RunStatus::Training)
        })?;
        slot.control.store(CONTINUE, Ordering::SeqCst);
        let s = Arc::clone(&slot);
        *worker = Some(std::thread::spawn(move || run_worker(s)));
        Ok(rec)
    }

    /// Pause or stop a training run and wait for its worker to settle.
    fn interrupt(&self, run_id: &str, signal: u8) -> ApiResult<RunRecord> {
        let slot = self.slot(run_id)?;
        let status = slot.record().status;
        if status != RunStatus::Training {
            let target = if signal == PAUSE { "PAUSED" } else { "DONE" };
            return Err(ApiError::Conflict(format!(
                "run `{run_id}` is {status:?}; only a TRAINING run can become {target}"
            )));
        }
        slot.control.store(signal, Ordering::SeqCst);
        let handle = lock(&slot.worker).take();
        if let Some(h) = handle {
            let _ = h.join();
        }
        Ok(slot.record())
    }

    pub fn pause(&self, run_id: &str) -> ApiResult<RunRecord> {
        self.interrupt(run_id, PAUSE)
    }

    pub fn stop(&self, run_id: &str) -> ApiResult<RunRecord> {
        self.interrupt(run_id, STOP)
    }

    /// Wait for a run's worker, if any, to finish on its own.
    pub fn wait(&self, run_id: &str) -> ApiResult<RunRecord> {
        let slot = self.slot(run_id)?;
        let handle = lock(&slot.worker).take();
        if let Some(h) = handle {
            let _ = h.join();
        }
        Ok(slot.record())
    }

    pub fn epochs(&self, run_id: &str) -> ApiResult<Vec<u64>> {
        Ok(self.slot(run_id)?.dir.epochs()?)
    }

    pub fn list_samples(&self, run_id: &str, epoch: u64, include_flagged: bool) -> ApiResult<SampleList> {
        let slot = self.slot(run_id)?;
        let batch = read_batch(&slot.dir, epoch)?;
        let ratings = slot.dir.read_ratings()?;
        let current = feedback::latest_wins(&ratings);
        let mut samples = Vec::new();
        let mut hidden = 0;
        for (k, id) in batch.sample_ids.iter().enumerate() {
            let report = report_for(&batch, id)?;
            if report.flagged && !include_flagged {
                hidden += 1;
                continue;
            }
            let path = slot.dir.sample_path(epoch, k);
            let img = RasterImage::load_raw(&path)?;
            samples.push(SampleView {
                sample_id: id.clone(),
                epoch,
                index: k,
                image_url: format!("/runs/{run_id}/epoch_{epoch}/sample_{k}.png"),
                flagged: report.flagged,
                distance: report.distance,
                nearest_source_id: report.nearest_source_id.clone(),
                tau: report.tau,
                direction_diversity: direction_diversity(&img),
                stroke_width: estimate_stroke_width(&img.binarize(0.5)).ok(),
                ratings: current.iter().filter(|r| &r.sample_id == id).map(|r| (*r).clone()).collect(),
            });
        }
        Ok(SampleList {
            run_id: run_id.to_string(),
            epoch,
            samples,
            hidden_flagged: hidden,
        })
    }

    pub fn ratings(&self, run_id: &str) -> ApiResult<Vec<Rating>> {
        Ok(self.slot(run_id)?.dir.read_ratings()?)
    }

    pub fn submit_rating(&self, mut rating: Rating) -> ApiResult<RatingAck> {
        let Some((run_id, epoch, _)) = parse_sample_id(&rating.sample_id) else {
            return Err(ApiError::NotFound(format!("unknown sample `{}`", rating.sample_id)));
        };
        if rating.author.trim().is_empty() {
            return Err(ApiError::BadRequest("rating needs an author".into()));
        }
        let slot = self.slot(run_id)?;
        let batch = read_batch(&slot.dir, epoch).map_err(|_| ApiError::NotFound(format!("unknown sample `{}`", rating.sample_id)))?;
        let report = report_for(&batch, &rating.sample_id)
            .map_err(|_| ApiError::NotFound(format!("unknown sample `{}`", rating.sample_id)))?;
        if report.flagged {
            return Err(ApiError::Rejected {
                reason: "flagged",
                message: format!(
                    "sample `{}` is flagged as too close to training signature `{}` (distance {:.4} < {})",
                    rating.sample_id, report.nearest_source_id, report.distance, report.tau
                ),
            });
        }
        if rating.timestamp.is_empty() {
            rating.timestamp = now_secs().to_string();
        }
        let _guard = lock(&slot.log_lock);
        let index = slot.dir.read_ratings()?.len();
        feedback::append_jsonl(&slot.dir.ratings_path(), &rating)?;
        Ok(RatingAck {
            accepted: true,
            sample_id: rating.sample_id,
            author: rating.author,
            index,
        })
    }

    pub fn feedback(&self, run_id: &str) -> ApiResult<FeedbackView> {
        let slot = self.slot(run_id)?;
        let state = slot.feedback_state()?;
        let overrides = slot.dir.read_overrides()?;
        let epoch = slot.record().latest_epoch.max(0);
        let effective = feedback::effective_state(&state, &overrides, epoch)?;
        Ok(FeedbackView {
            run_id: run_id.to_string(),
            pending_overrides: overrides.len().saturating_sub(state.overrides_consumed()),
            state,
            effective,
        })
    }

    /// Log a manual override; it takes effect at the next epoch boundary.
    pub fn set_feedback(&self, run_id: &str, req: SetFeedback) -> ApiResult<FeedbackView> {
        let slot = self.slot(run_id)?;
        if req.author.trim().is_empty() {
            return Err(ApiError::BadRequest("override needs an author".into()));
        }
        let ov = WeightOverride {
            alpha: req.alpha,
            beta: req.beta,
            target_thickness: req.target_thickness,
            author: req.author,
            timestamp: req.timestamp.unwrap_or_else(|| now_secs().to_string()),
        };
        // Validate before logging.
        slot.initial_feedback()?.apply_override(0, &ov)?;
        {
            let _guard = lock(&slot.log_lock);
            feedback::append_jsonl(&slot.dir.overrides_path(), &ov)?;
        }
        self.feedback(run_id)
    }

    pub fn metrics(&self, run_id: &str, from_step: u64, limit: usize) -> ApiResult<MetricsPage> {
        let slot = self.slot(run_id)?;
        let limit = limit.clamp(1, MAX_METRICS_PAGE);
        let mut records: Vec<StepMetrics> = slot
            .dir
            .read_metrics()?
            .into_iter()
            .filter(|m| m.step >= from_step)
            .take(limit + 1)
            .collect();
        let next_from_step = if records.len() > limit {
            records.pop().map(|m| m.step)
        } else {
            None
        };
        Ok(MetricsPage { records, next_from_step })
    }
}

fn read_batch(dir: &RunDir, epoch: u64) -> ApiResult<SampleBatch> {
    if !dir.epoch_dir(epoch).join("samples.json").is_file() {
        return Err(ApiError::NotFound(format!("no samples for epoch {epoch}")));
    }
    Ok(dir.read_samples(epoch)?)
}

fn report_for<'a>(batch: &'a SampleBatch, id: &str) -> ApiResult<&'a MemorizationReport> {
    batch
        .memorization
        .iter()
        .find(|r| r.sample_id == id)
        .ok_or_else(|| ApiError::NotFound(format!("unknown sample `{id}`")))
}

/// Fit the editor's anchors and return the preview curves.
pub fn fit_preview(req: &FitRequest) -> ApiResult<FitResponse> {
    if req.points_per_stroke < 2 || req.points_per_stroke > 10_000 {
        return Err(ApiError::BadRequest("points_per_stroke must lie in [2, 10000]".into()));
    }
    let anchors = AnchorSet {
        sample_id: "preview".into(),
        strokes: req.strokes.clone(),
    };
    let paths = PathSet::fit(&anchors, req.canvas, req.smoothing)?;
    let strokes = paths
        .strokes
        .iter()
        .map(|s| {
            Ok(FittedStroke {
                points: s.resample_arclength(req.points_per_stroke)?,
                spline: s.clone(),
            })
        })
        .collect::<ApiResult<Vec<_>>>()?;
    Ok(FitResponse {
        strokes,
        svg: export_svg(&paths, 2.0),
    })
}

/// Observer layered under [`RunDirObserver`]: relays pause/stop requests and
/// keeps the run record's epoch current.
struct Hooks<'a> {
    slot: &'a RunSlot,
}

impl TrainObserver for Hooks<'_> {
    fn poll(&mut self, _: &TrainState) -> Control {
        match self.slot.control.load(Ordering::SeqCst) {
            PAUSE => Control::Pause,
            STOP => Control::Stop,
            _ => Control::Continue,
        }
    }

    fn on_epoch(&mut self, state: &TrainState, _: &SampleBatch) -> colsig_gan::Result<Control> {
        let epoch = state.epoch as i64;
        self.slot
            .update(|r| {
                r.latest_epoch = epoch;
                Ok(())
            })
            .map_err(|e| GanError::Config(e.to_string()))?;
        Ok(Control::Continue)
    }
}

fn train_slot(slot: &RunSlot) -> colsig_gan::Result<RunOutcome> {
    let run_id = slot.dir.run_id();
    let mut state = slot.dir.prepare_resume(&run_id)?;
    let plan = SamplingPlan::load(&slot.dir.root().join("plan.json"))?;
    let data = TrainingData::load(plan, state.config.canvas())?;
    let mut hooks = Hooks { slot };
    let mut obs = RunDirObserver::new(RunDir::open(slot.dir.root())?, &state, &mut hooks)?;
    train_run(&mut state, &data, &mut obs)
}

fn run_worker(slot: Arc<RunSlot>) {
    let result = train_slot(&slot);
    let outcome = slot.update(|r| {
        match &result {
            Ok(RunOutcome::Paused) => r.transition(RunStatus::Paused)?,
            Ok(RunOutcome::Completed | RunOutcome::Stopped) => r.transition(RunStatus::Done)?,
            Err(e) => {
                r.error = Some(e.to_string());
                r.transition(RunStatus::Failed)?;
            }
        }
        Ok(())
    });
    if let Err(e) = outcome {
        log::error!("could not record the end of run {}: {e}", slot.dir.run_id());
    }
}

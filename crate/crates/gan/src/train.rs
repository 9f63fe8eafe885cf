//! Training state, the training loop and its observer hooks.

use colsig_core::dataset::SamplingPlan;
use colsig_core::imaging::PreprocessParams;
use colsig_core::safeguard::{screen_batch, MemorizationReport, TrainingSet};
use colsig_core::{BinaryMask, RasterImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::adam::Adam;
use crate::config::RunConfig;
use crate::critic::Critic;
use crate::error::{GanError, Result};
use crate::generator::Generator;
use crate::loss::{critic_step, generator_step, FeedbackWeights};

/// Everything needed to continue a run bit-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub run_id: String,
    pub config: RunConfig,
    pub generator: Vec<f64>,
    pub critic: Vec<f64>,
    pub adam_generator: Adam,
    pub adam_critic: Adam,
    pub rng: ChaCha8Rng,
    pub critic_step: u64,
    pub generator_step: u64,
    /// Completed epochs.
    pub epoch: u64,
    /// Feedback weights in force for the next generator update.
    pub feedback: FeedbackWeights,
    /// Fixed latents rendered at every epoch boundary.
    pub sample_latents: Vec<Vec<f64>>,
}

pub fn draw_latent(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

impl TrainState {
    pub fn new(run_id: impl Into<String>, config: RunConfig) -> Result<Self> {
        config.validate()?;
        let generator = Generator::new(&config.generator)?;
        let critic = Critic::new(&config.critic, config.canvas())?;
        let t = &config.train;
        let mut rng = ChaCha8Rng::seed_from_u64(t.rng_seed);
        let gparams = generator.init_params(&mut rng);
        let cparams = critic.init_params(&mut rng);
        let sample_latents = (0..t.samples_per_epoch)
            .map(|_| draw_latent(&mut rng, config.generator.latent_dim))
            .collect();
        let target = config
            .target_thickness
            .unwrap_or(PreprocessParams::default().target_stroke_width);
        Ok(TrainState {
            run_id: run_id.into(),
            adam_generator: Adam::new(gparams.len(), t.learning_rate, t.moment_decays),
            adam_critic: Adam::new(cparams.len(), t.learning_rate, t.moment_decays),
            generator: gparams,
            critic: cparams,
            rng,
            critic_step: 0,
            generator_step: 0,
            epoch: 0,
            feedback: FeedbackWeights::off(target),
            sample_latents,
            config,
        })
    }

    pub fn networks(&self) -> Result<(Generator, Critic)> {
        Ok((
            Generator::new(&self.config.generator)?,
            Critic::new(&self.config.critic, self.config.canvas())?,
        ))
    }
}

/// Training images with their sampling plan.
pub struct TrainingData {
    pub plan: SamplingPlan,
    pub images: Vec<RasterImage>,
    training_set: TrainingSet,
}

impl TrainingData {
    pub fn new(plan: SamplingPlan, images: Vec<RasterImage>) -> Result<Self> {
        plan.validate()?;
        if images.len() != plan.entries.len() {
            return Err(GanError::Shape {
                expected: format!("{} images", plan.entries.len()),
                actual: images.len().to_string(),
            });
        }
        let training_set = TrainingSet::new(
            plan.entries
                .iter()
                .zip(&images)
                .map(|(e, img)| (e.source_id.clone(), img.clone())),
        )?;
        Ok(TrainingData {
            plan,
            images,
            training_set,
        })
    }

    /// Load every mask named by the plan.
    pub fn load(plan: SamplingPlan, canvas: colsig_core::Canvas) -> Result<Self> {
        let images = plan
            .entries
            .iter()
            .map(|e| {
                let img = BinaryMask::load_png(&e.path)?.to_image();
                img.ensure_shape(canvas)?;
                Ok(img)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(plan, images)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn training_set(&self) -> &TrainingSet {
        &self.training_set
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub epoch: u64,
    pub critic_loss: f64,
    pub gp: f64,
    pub gen_loss: Option<f64>,
    pub alpha: f64,
    pub beta: f64,
    /// `mean critic(real) - mean critic(fake)`.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBatch {
    pub run_id: String,
    pub epoch: u64,
    pub sample_ids: Vec<String>,
    pub latents: Vec<Vec<f64>>,
    #[serde(skip)]
    pub images: Vec<RasterImage>,
    pub memorization: Vec<MemorizationReport>,
}

pub fn sample_id(run_id: &str, epoch: u64, k: usize) -> String {
    format!("{run_id}:{epoch}:{k}")
}

/// Split a sample id into `(run_id, epoch, index)`.
pub fn parse_sample_id(id: &str) -> Option<(&str, u64, usize)> {
    let mut parts = id.rsplitn(3, ':');
    let k = parts.next()?.parse().ok()?;
    let epoch = parts.next()?.parse().ok()?;
    let run = parts.next()?;
    (!run.is_empty()).then_some((run, epoch, k))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Pause,
    Stop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunOutcome {
    Completed,
    Paused,
    Stopped,
}

/// Hooks invoked on the training thread.
pub trait TrainObserver {
    /// Called before every critic step; may interrupt the run.
    fn poll(&mut self, _state: &TrainState) -> Control {
        Control::Continue
    }

    fn on_step(&mut self, _metrics: &StepMetrics) -> Result<()> {
        Ok(())
    }

    /// Feedback weights for the epoch after `epoch`.
    fn feedback_at_boundary(&mut self, _epoch: u64, current: FeedbackWeights) -> Result<FeedbackWeights> {
        Ok(current)
    }

    /// A finished epoch with its checkpointable state and samples.
    fn on_epoch(&mut self, _state: &TrainState, _samples: &SampleBatch) -> Result<Control> {
        Ok(Control::Continue)
    }

    /// The run was interrupted mid-epoch; `state` resumes it exactly.
    fn on_pause(&mut self, _state: &TrainState) -> Result<()> {
        Ok(())
    }

    /// A non-finite value was hit; `state` is the state before the step.
    fn on_failure(&mut self, _state: &TrainState, _error: &GanError) {}
}

/// No hooks.
pub struct Silent;
impl TrainObserver for Silent {}

/// Render the fixed sample latents and screen them against the training set.
pub fn render_samples(state: &TrainState, generator: &Generator, data: &TrainingData) -> Result<SampleBatch> {
    let images = state
        .sample_latents
        .iter()
        .map(|z| generator.generate(&state.generator, z))
        .collect::<Result<Vec<_>>>()?;
    let ids: Vec<String> = (0..images.len()).map(|k| sample_id(&state.run_id, state.epoch, k)).collect();
    let memorization = screen_batch(
        ids.iter().map(String::as_str).zip(&images),
        data.training_set(),
        state.config.train.tau,
    )?;
    Ok(SampleBatch {
        run_id: state.run_id.clone(),
        epoch: state.epoch,
        sample_ids: ids,
        latents: state.sample_latents.clone(),
        images,
        memorization,
    })
}

fn finite(v: f64, what: &str, step: u64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(GanError::NonFinite {
            what: what.to_string(),
            step,
        })
    }
}

/// One critic update, plus a generator update every `critic_steps_per_gen`.
fn train_step(state: &mut TrainState, generator: &Generator, critic: &Critic, data: &TrainingData) -> Result<StepMetrics> {
    let cfg = state.config.train.clone();
    let latent = state.config.generator.latent_dim;
    let idx = data.plan.sample_with(cfg.batch_size, &mut state.rng);
    let real: Vec<RasterImage> = idx.iter().map(|&i| data.images[i].clone()).collect();
    let fake = (0..cfg.batch_size)
        .map(|_| {
            let z = draw_latent(&mut state.rng, latent);
            generator.generate(&state.generator, &z)
        })
        .collect::<Result<Vec<_>>>()?;
    let eps: Vec<f64> = (0..cfg.batch_size).map(|_| state.rng.random::<f64>()).collect();
    let step = state.critic_step + 1;

    let cs = critic_step(critic, &state.critic, &real, &fake, &eps, cfg.gp_weight)?;
    finite(cs.loss, "critic loss", step)?;
    finite(cs.grad.iter().sum(), "critic gradient", step)?;
    state.adam_critic.step(&mut state.critic, &cs.grad);
    state.critic_step = step;

    let mut gen_loss = None;
    if step % cfg.critic_steps_per_gen as u64 == 0 {
        let zs: Vec<Vec<f64>> = (0..cfg.batch_size).map(|_| draw_latent(&mut state.rng, latent)).collect();
        let gs = generator_step(generator, &state.generator, critic, &state.critic, &zs, &state.feedback)?;
        finite(gs.loss, "generator loss", step)?;
        finite(gs.grad.iter().sum(), "generator gradient", step)?;
        state.adam_generator.step(&mut state.generator, &gs.grad);
        state.generator_step += 1;
        gen_loss = Some(gs.loss);
    }
    Ok(StepMetrics {
        step,
        epoch: state.epoch,
        critic_loss: cs.loss,
        gp: cs.gp,
        gen_loss,
        alpha: state.feedback.alpha,
        beta: state.feedback.beta,
        gap: cs.gap,
    })
}

/// Train until `config.train.epochs` epochs are complete or the observer
/// interrupts. Resumes from wherever `state` stands.
pub fn train_run(state: &mut TrainState, data: &TrainingData, observer: &mut dyn TrainObserver) -> Result<RunOutcome> {
    state.config.validate()?;
    let (generator, critic) = state.networks()?;
    let canvas = state.config.canvas();
    if let Some(img) = data.images.first() {
        img.ensure_shape(canvas)?;
    }
    let per_epoch = state.config.train.steps_per_epoch(data.len()) as u64;
    while state.epoch < state.config.train.epochs as u64 {
        let epoch_end = (state.epoch + 1) * per_epoch;
        while state.critic_step < epoch_end {
            match observer.poll(state) {
                Control::Continue => {}
                Control::Pause => {
                    observer.on_pause(state)?;
                    return Ok(RunOutcome::Paused);
                }
                Control::Stop => return Ok(RunOutcome::Stopped),
            }
            let before = state.clone();
            match train_step(state, &generator, &critic, data) {
                Ok(m) => observer.on_step(&m)?,
                Err(e) => {
                    *state = before;
                    observer.on_failure(state, &e);
                    return Err(e);
                }
            }
        }
        state.epoch += 1;
        let samples = render_samples(state, &generator, data)?;
        state.feedback = observer.feedback_at_boundary(state.epoch, state.feedback)?;
        log::info!(
            "run {} epoch {} done at critic step {}",
            state.run_id,
            state.epoch,
            state.critic_step
        );
        match observer.on_epoch(state, &samples)? {
            Control::Continue => {}
            Control::Pause => {
                observer.on_pause(state)?;
                return Ok(RunOutcome::Paused);
            }
            Control::Stop => return Ok(RunOutcome::Stopped),
        }
    }
    Ok(RunOutcome::Completed)
}

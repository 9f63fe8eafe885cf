//! Wasserstein GAN with gradient penalty for signature rasters: networks,
//! losses, optimizer, resumable training runs and their on-disk layout.

pub mod adam;
pub mod config;
pub mod critic;
pub mod error;
pub mod generator;
pub mod loss;
pub mod nn;
pub mod rundir;
pub mod train;

pub use config::{CriticConfig, GeneratorConfig, RunConfig, TrainConfig};
pub use critic::Critic;
pub use error::{GanError, Result};
pub use generator::Generator;
pub use loss::{critic_loss, generator_loss, gradient_penalty, CriticNet, FeedbackWeights, InputGradient};
pub use rundir::{load_checkpoint, save_checkpoint, RunDir, RunDirObserver};
pub use train::{train_run, Control, RunOutcome, SampleBatch, StepMetrics, TrainObserver, TrainState, TrainingData};

use colsig_core::RasterImage;

/// Render one image for latent `z`.
pub fn generate(cfg: &GeneratorConfig, weights: &[f64], z: &[f64]) -> Result<RasterImage> {
    Generator::new(cfg)?.generate(weights, z)
}

/// Critic scores for a batch of images.
pub fn critic_scores(cfg: &CriticConfig, weights: &[f64], images: &[RasterImage]) -> Result<Vec<f64>> {
    let Some(first) = images.first() else {
        return Ok(Vec::new());
    };
    let critic = Critic::new(cfg, first.canvas())?;
    images.iter().map(|img| critic.score(weights, img)).collect()
}

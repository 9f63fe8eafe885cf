use colsig_core::Canvas;
use serde::{Deserialize, Serialize};

use crate::error::{GanError, Result};

pub const LAYERS: usize = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub latent_dim: usize,
    /// Spatial size of the projected seed, `(rows, cols)`.
    pub seed_grid: (usize, usize),
    /// Output channels of each of the 7 layers; the last must be 1.
    pub channels: Vec<usize>,
    pub kernel_size: usize,
    pub negative_slope: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            latent_dim: 5,
            seed_grid: (1, 4),
            channels: vec![256, 128, 64, 32, 16, 8, 1],
            kernel_size: 3,
            negative_slope: 0.2,
        }
    }
}

impl GeneratorConfig {
    /// Output canvas: the seed grid doubled by each of the 6 upsampling stages.
    pub fn canvas(&self) -> Canvas {
        Canvas {
            height: self.seed_grid.0 << (LAYERS - 1),
            width: self.seed_grid.1 << (LAYERS - 1),
        }
    }

    pub fn validate(&self, canvas: Canvas) -> Result<()> {
        if self.channels.len() != LAYERS {
            return Err(GanError::Config(format!(
                "generator needs {LAYERS} channel entries, got {}",
                self.channels.len()
            )));
        }
        if self.channels.last() != Some(&1) {
            return Err(GanError::Config("generator output layer must have 1 channel".into()));
        }
        if self.channels.contains(&0) || self.latent_dim == 0 {
            return Err(GanError::Config("channel counts and latent_dim must be positive".into()));
        }
        check_kernel(self.kernel_size)?;
        check_slope(self.negative_slope)?;
        if self.canvas() != canvas {
            return Err(GanError::Config(format!(
                "seed grid {}x{} upsampled 6 times gives {}x{}, canvas is {}x{}",
                self.seed_grid.0,
                self.seed_grid.1,
                self.canvas().height,
                self.canvas().width,
                canvas.height,
                canvas.width
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CriticConfig {
    /// Output channels of the 6 stride-2 convolutions, then 1 for the head.
    pub channels: Vec<usize>,
    pub kernel_size: usize,
    pub negative_slope: f64,
}

impl Default for CriticConfig {
    fn default() -> Self {
        CriticConfig {
            channels: vec![8, 16, 32, 64, 128, 256, 1],
            kernel_size: 3,
            negative_slope: 0.2,
        }
    }
}

impl CriticConfig {
    pub fn validate(&self, canvas: Canvas) -> Result<()> {
        if self.channels.len() != LAYERS || self.channels.last() != Some(&1) {
            return Err(GanError::Config(format!(
                "critic needs {LAYERS} channel entries ending in 1"
            )));
        }
        if self.channels.contains(&0) {
            return Err(GanError::Config("channel counts must be positive".into()));
        }
        check_kernel(self.kernel_size)?;
        check_slope(self.negative_slope)?;
        if canvas.height == 0 || canvas.width == 0 {
            return Err(GanError::Config("empty canvas".into()));
        }
        Ok(())
    }
}

fn check_kernel(k: usize) -> Result<()> {
    if k % 2 == 0 {
        return Err(GanError::Config(format!("kernel size must be odd, got {k}")));
    }
    Ok(())
}

fn check_slope(s: f64) -> Result<()> {
    if !(0.0..1.0).contains(&s) {
        return Err(GanError::Config(format!("negative slope must lie in [0, 1), got {s}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub gp_weight: f64,
    pub critic_steps_per_gen: usize,
    pub learning_rate: f64,
    pub moment_decays: (f64, f64),
    pub batch_size: usize,
    pub epochs: usize,
    pub samples_per_epoch: usize,
    /// Critic batches per epoch; `None` means `ceil(N / batch_size)`.
    pub steps_per_epoch: Option<usize>,
    pub rng_seed: u64,
    /// Memorization threshold applied to each epoch's samples.
    pub tau: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gp_weight: 10.0,
            critic_steps_per_gen: 5,
            learning_rate: 1e-4,
            moment_decays: (0.0, 0.9),
            batch_size: 32,
            epochs: 10,
            samples_per_epoch: 16,
            steps_per_epoch: None,
            rng_seed: 0,
            tau: colsig_core::safeguard::DEFAULT_TAU,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.critic_steps_per_gen > 0
            && self.batch_size > 0
            && self.samples_per_epoch > 0
            && self.steps_per_epoch != Some(0);
        if !positive {
            return Err(GanError::Config("step counts, batch size and sample count must be positive".into()));
        }
        if !(self.gp_weight >= 0.0) || !(self.learning_rate > 0.0) {
            return Err(GanError::Config("gp_weight must be >= 0 and learning_rate > 0".into()));
        }
        let (b1, b2) = self.moment_decays;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return Err(GanError::Config("moment decays must lie in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.tau) {
            return Err(GanError::Config("tau must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n_train: usize) -> usize {
        self.steps_per_epoch.unwrap_or_else(|| n_train.div_ceil(self.batch_size).max(1))
    }
}

/// Everything a run needs; stored as `config.json` in the run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub generator: GeneratorConfig,
    pub critic: CriticConfig,
    /// Initial thickness target of the feedback terms, in pixels.
    pub target_thickness: Option<f64>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let canvas = self.generator.canvas();
        self.generator.validate(canvas)?;
        self.critic.validate(canvas)
    }

    pub fn canvas(&self) -> Canvas {
        self.generator.canvas()
    }

    /// Reduced widths for quick runs on one CPU core.
    pub fn small() -> Self {
        RunConfig {
            train: TrainConfig {
                batch_size: 16,
                ..Default::default()
            },
            generator: GeneratorConfig {
                channels: vec![64, 32, 16, 16, 8, 8, 1],
                ..Default::default()
            },
            critic: CriticConfig {
                channels: vec![8, 16, 32, 32, 64, 64, 1],
                ..Default::default()
            },
            target_thickness: None,
        }
    }
}

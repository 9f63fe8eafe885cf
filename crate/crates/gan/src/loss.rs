//! Wasserstein losses with gradient penalty, and their parameter gradients.

use colsig_core::feedback::augmented_loss_surrogate;
use colsig_core::RasterImage;
use rand::Rng;

use crate::critic::Critic;
use crate::error::{GanError, Result};
use crate::generator::{GenPass, Generator};

/// A scalar function of an image with a known input gradient.
pub trait InputGradient {
    fn score(&self, x: &[f64]) -> f64;
    fn input_gradient(&self, x: &[f64]) -> Vec<f64>;
}

/// A critic network bound to a parameter vector.
pub struct CriticNet<'a> {
    pub critic: &'a Critic,
    pub params: &'a [f64],
}

impl InputGradient for CriticNet<'_> {
    fn score(&self, x: &[f64]) -> f64 {
        self.critic.forward(self.params, x).expect("image on the critic canvas").score
    }

    fn input_gradient(&self, x: &[f64]) -> Vec<f64> {
        let pass = self.critic.forward(self.params, x).expect("image on the critic canvas");
        self.critic.input_gradient(self.params, &pass)
    }
}

fn check_batches(real: &[RasterImage], fake: &[RasterImage]) -> Result<()> {
    if real.len() != fake.len() || real.is_empty() {
        return Err(GanError::Shape {
            expected: format!("equal nonempty batches ({} real)", real.len()),
            actual: format!("{} fake", fake.len()),
        });
    }
    for (r, f) in real.iter().zip(fake) {
        if r.width != f.width || r.height != f.height {
            return Err(GanError::Shape {
                expected: format!("{}x{}", r.height, r.width),
                actual: format!("{}x{}", f.height, f.width),
            });
        }
    }
    Ok(())
}

/// `eps * real + (1 - eps) * fake`.
pub fn interpolate(real: &RasterImage, fake: &RasterImage, eps: f64) -> Vec<f64> {
    real.pixels.iter().zip(&fake.pixels).map(|(r, f)| eps * r + (1.0 - eps) * f).collect()
}

/// Mean over pairs of `(|grad critic(x_hat)| - 1)^2` at the given
/// interpolation coefficients.
pub fn gradient_penalty<C: InputGradient + ?Sized>(
    critic: &C,
    real: &[RasterImage],
    fake: &[RasterImage],
    eps: &[f64],
) -> Result<f64> {
    check_batches(real, fake)?;
    if eps.len() != real.len() {
        return Err(GanError::Shape {
            expected: format!("{} interpolation coefficients", real.len()),
            actual: eps.len().to_string(),
        });
    }
    let total: f64 = real
        .iter()
        .zip(fake)
        .zip(eps)
        .map(|((r, f), &e)| {
            let g = critic.input_gradient(&interpolate(r, f, e));
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            (norm - 1.0).powi(2)
        })
        .sum();
    Ok(total / real.len() as f64)
}

/// Draw one uniform coefficient per pair, then evaluate the penalty.
pub fn gradient_penalty_sampled<C: InputGradient + ?Sized>(
    critic: &C,
    real: &[RasterImage],
    fake: &[RasterImage],
    rng: &mut impl Rng,
) -> Result<(f64, Vec<f64>)> {
    let eps: Vec<f64> = (0..real.len()).map(|_| rng.random::<f64>()).collect();
    Ok((gradient_penalty(critic, real, fake, &eps)?, eps))
}

pub fn critic_loss<C: InputGradient + ?Sized>(
    critic: &C,
    real: &[RasterImage],
    fake: &[RasterImage],
    lambda: f64,
    eps: &[f64],
) -> Result<f64> {
    check_batches(real, fake)?;
    let n = real.len() as f64;
    let fake_mean = fake.iter().map(|f| critic.score(&f.pixels)).sum::<f64>() / n;
    let real_mean = real.iter().map(|r| critic.score(&r.pixels)).sum::<f64>() / n;
    let gp = if lambda == 0.0 { 0.0 } else { gradient_penalty(critic, real, fake, eps)? };
    Ok(fake_mean - real_mean + lambda * gp)
}

/// Weights of the curator-driven auxiliary generator terms.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FeedbackWeights {
    pub alpha: f64,
    pub beta: f64,
    pub target_thickness: f64,
}

impl FeedbackWeights {
    pub fn off(target_thickness: f64) -> Self {
        FeedbackWeights {
            alpha: 0.0,
            beta: 0.0,
            target_thickness,
        }
    }

    pub fn is_off(&self) -> bool {
        self.alpha == 0.0 && self.beta == 0.0
    }
}

/// `-mean critic(fake)` plus the mean smooth auxiliary terms.
pub fn generator_loss<C: InputGradient + ?Sized>(critic: &C, fake: &[RasterImage], fb: &FeedbackWeights) -> f64 {
    let n = fake.len() as f64;
    let adv = -fake.iter().map(|f| critic.score(&f.pixels)).sum::<f64>() / n;
    if fb.is_off() {
        return adv;
    }
    let aux: f64 = fake
        .iter()
        .map(|f| augmented_loss_surrogate(f, fb.alpha, fb.beta, fb.target_thickness).0)
        .sum::<f64>()
        / n;
    adv + aux
}

/// Value and critic-parameter gradient of one critic update.
#[derive(Debug, Clone)]
pub struct CriticStep {
    pub loss: f64,
    pub gp: f64,
    /// `mean critic(real) - mean critic(fake)`.
    pub gap: f64,
    pub grad: Vec<f64>,
}

/// Loss `mean f(fake) - mean f(real) + lambda * GP` and its exact gradient.
///
/// For each interpolate, with `g` the input gradient and `u = g / |g|`, the
/// penalty term's weight gradient is `2 (|g| - 1) d(D_u f)/dw` where the
/// directional derivative `D_u f` is evaluated by the critic's tangent pass.
pub fn critic_step(
    critic: &Critic,
    params: &[f64],
    real: &[RasterImage],
    fake: &[RasterImage],
    eps: &[f64],
    lambda: f64,
) -> Result<CriticStep> {
    check_batches(real, fake)?;
    let n = real.len() as f64;
    let mut grad = vec![0.0; critic.n_params()];
    let (mut real_sum, mut fake_sum, mut gp_sum) = (0.0, 0.0, 0.0);
    for ((r, f), &e) in real.iter().zip(fake).zip(eps) {
        let pr = critic.forward(params, &r.pixels)?;
        critic.backward_params(params, &pr, -1.0 / n, &mut grad);
        real_sum += pr.score;
        let pf = critic.forward(params, &f.pixels)?;
        critic.backward_params(params, &pf, 1.0 / n, &mut grad);
        fake_sum += pf.score;
        if lambda == 0.0 {
            continue;
        }
        let ph = critic.forward(params, &interpolate(r, f, e))?;
        let g = critic.input_gradient(params, &ph);
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        gp_sum += (norm - 1.0).powi(2);
        if norm > 0.0 {
            let u: Vec<f64> = g.iter().map(|v| v / norm).collect();
            let t = critic.tangent(params, &ph, &u);
            critic.tangent_backward(params, &ph, &t, lambda * 2.0 * (norm - 1.0) / n, &mut grad);
        }
    }
    let gp = gp_sum / n;
    Ok(CriticStep {
        loss: (fake_sum - real_sum) / n + lambda * gp,
        gp,
        gap: (real_sum - fake_sum) / n,
        grad,
    })
}

#[derive(Debug, Clone)]
pub struct GeneratorStep {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub images: Vec<RasterImage>,
}

/// Generator loss for the latent batch `zs` and its generator-parameter
/// gradient, through the critic and the smooth feedback terms.
pub fn generator_step(
    generator: &Generator,
    gparams: &[f64],
    critic: &Critic,
    cparams: &[f64],
    zs: &[Vec<f64>],
    fb: &FeedbackWeights,
) -> Result<GeneratorStep> {
    let n = zs.len() as f64;
    let canvas = generator.config().canvas();
    let mut grad = vec![0.0; generator.n_params()];
    let mut loss = 0.0;
    let mut images = Vec::with_capacity(zs.len());
    for z in zs {
        let pass: GenPass = generator.forward(gparams, z)?;
        let cp = critic.forward(cparams, &pass.out)?;
        loss -= cp.score / n;
        let mut dout: Vec<f64> = critic.input_gradient(cparams, &cp).iter().map(|g| -g / n).collect();
        let img = RasterImage {
            width: canvas.width,
            height: canvas.height,
            pixels: pass.out.clone(),
        };
        if !fb.is_off() {
            let (value, g) = augmented_loss_surrogate(&img, fb.alpha, fb.beta, fb.target_thickness);
            loss += value / n;
            for (d, gi) in dout.iter_mut().zip(&g) {
                *d += gi / n;
            }
        }
        generator.backward(gparams, &pass, &dout, &mut grad);
        images.push(img);
    }
    Ok(GeneratorStep { loss, grad, images })
}

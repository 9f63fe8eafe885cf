//! Generator: latent vector -> learned seed grid -> six (upsample, conv)
//! stages -> sigmoid image.

use colsig_core::RasterImage;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::config::{GeneratorConfig, LAYERS};
use crate::error::{GanError, Result};
use crate::nn::{leaky, leaky_grad, sigmoid, upsample2, upsample2_backward, ConvShape};

/// Initial output bias: starts samples mostly background instead of grey.
const OUTPUT_BIAS_INIT: f64 = -2.0;

#[derive(Debug, Clone)]
pub struct Generator {
    cfg: GeneratorConfig,
    seed_len: usize,
    convs: Vec<ConvShape>,
    /// `(weight, bias)` offsets of each convolution in the flat parameters.
    offsets: Vec<(usize, usize)>,
    n_params: usize,
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct GenPass {
    pub z: Vec<f64>,
    seed_pre: Vec<f64>,
    cols: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    pub out: Vec<f64>,
}

impl Generator {
    pub fn new(cfg: &GeneratorConfig) -> Result<Self> {
        cfg.validate(cfg.canvas())?;
        let (sh, sw) = cfg.seed_grid;
        let seed_len = cfg.channels[0] * sh * sw;
        let mut n = seed_len * cfg.latent_dim + seed_len;
        let mut convs = Vec::new();
        let mut offsets = Vec::new();
        for l in 0..LAYERS - 1 {
            let (h, w) = (sh << (l + 1), sw << (l + 1));
            let s = ConvShape::new(cfg.channels[l], cfg.channels[l + 1], cfg.kernel_size, 1, h, w);
            offsets.push((n, n + s.weight_len()));
            n += s.weight_len() + s.cout;
            convs.push(s);
        }
        Ok(Generator {
            cfg: cfg.clone(),
            seed_len,
            convs,
            offsets,
            n_params: n,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    /// Inputs consumed by the first layer.
    pub fn latent_inputs(&self) -> usize {
        self.cfg.latent_dim
    }

    pub fn out_len(&self) -> usize {
        self.cfg.canvas().len()
    }

    pub fn init_params(&self, rng: &mut impl Rng) -> Vec<f64> {
        let slope = self.cfg.negative_slope;
        let gain = 2.0 / (1.0 + slope * slope);
        let mut p = vec![0.0; self.n_params];
        let normal = |fan_in: usize| Normal::new(0.0, (gain / fan_in as f64).sqrt()).expect("finite std");
        let d = normal(self.cfg.latent_dim);
        for v in &mut p[..self.seed_len * self.cfg.latent_dim] {
            *v = d.sample(rng);
        }
        for (s, &(w_off, b_off)) in self.convs.iter().zip(&self.offsets) {
            let d = normal(s.patch());
            for v in &mut p[w_off..b_off] {
                *v = d.sample(rng);
            }
        }
        let &(_, b_last) = self.offsets.last().expect("six stages");
        p[b_last] = OUTPUT_BIAS_INIT;
        p
    }

    fn check(&self, params: &[f64], z: &[f64]) -> Result<()> {
        if params.len() != self.n_params {
            return Err(GanError::Shape {
                expected: format!("{} generator parameters", self.n_params),
                actual: params.len().to_string(),
            });
        }
        if z.len() != self.cfg.latent_dim {
            return Err(GanError::Shape {
                expected: format!("latent vector of length {}", self.cfg.latent_dim),
                actual: z.len().to_string(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, params: &[f64], z: &[f64]) -> Result<GenPass> {
        self.check(params, z)?;
        let (k, s) = (self.cfg.latent_dim, self.seed_len);
        let slope = self.cfg.negative_slope;
        let (wp, bp) = (&params[..s * k], &params[s * k..s * k + s]);
        let seed_pre: Vec<f64> = (0..s)
            .map(|i| bp[i] + wp[i * k..(i + 1) * k].iter().zip(z).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let mut h: Vec<f64> = seed_pre.iter().map(|&v| leaky(v, slope)).collect();
        let mut cols = Vec::with_capacity(LAYERS - 1);
        let mut pre = Vec::with_capacity(LAYERS - 1);
        for (l, (shape, &(w_off, b_off))) in self.convs.iter().zip(&self.offsets).enumerate() {
            let up = upsample2(&h, shape.cin, shape.h / 2, shape.w / 2);
            let c = shape.im2col(&up);
            let a = shape.forward(&params[w_off..b_off], Some(&params[b_off..b_off + shape.cout]), &c);
            h = if l + 1 == self.convs.len() {
                a.iter().map(|&v| sigmoid(v)).collect()
            } else {
                a.iter().map(|&v| leaky(v, slope)).collect()
            };
            cols.push(c);
            pre.push(a);
        }
        Ok(GenPass {
            z: z.to_vec(),
            seed_pre,
            cols,
            pre,
            out: h,
        })
    }

    pub fn generate(&self, params: &[f64], z: &[f64]) -> Result<RasterImage> {
        let pass = self.forward(params, z)?;
        let c = self.cfg.canvas();
        Ok(RasterImage {
            width: c.width,
            height: c.height,
            pixels: pass.out,
        })
    }

    /// Accumulate into `grad` the parameter gradient of a loss whose gradient
    /// with respect to the output image is `dout`.
    pub fn backward(&self, params: &[f64], pass: &GenPass, dout: &[f64], grad: &mut [f64]) {
        let slope = self.cfg.negative_slope;
        let last = self.convs.len() - 1;
        let mut d: Vec<f64> = dout.iter().zip(&pass.out).map(|(g, y)| g * y * (1.0 - y)).collect();
        for l in (0..=last).rev() {
            let shape = &self.convs[l];
            let (w_off, b_off) = self.offsets[l];
            {
                let (gw, gb) = grad[w_off..b_off + shape.cout].split_at_mut(b_off - w_off);
                shape.backward_params(&d, &pass.cols[l], gw, Some(gb));
            }
            let dup = shape.backward_input(&params[w_off..b_off], &d);
            let dh = upsample2_backward(&dup, shape.cin, shape.h / 2, shape.w / 2);
            let below = if l == 0 { &pass.seed_pre } else { &pass.pre[l - 1] };
            d = dh.iter().zip(below).map(|(g, &a)| g * leaky_grad(a, slope)).collect();
        }
        let (k, s) = (self.cfg.latent_dim, self.seed_len);
        for i in 0..s {
            for j in 0..k {
                grad[i * k + j] += d[i] * pass.z[j];
            }
            grad[s * k + i] += d[i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> GeneratorConfig {
        GeneratorConfig {
            channels: vec![4, 3, 3, 2, 2, 2, 1],
            ..Default::default()
        }
    }

    #[test]
    fn output_contract() {
        let g = Generator::new(&GeneratorConfig::default()).unwrap();
        assert_eq!(g.latent_inputs(), 5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = g.init_params(&mut rng);
        let z = [0.3, -1.0, 0.5, 2.0, 0.0];
        let img = g.generate(&p, &z).unwrap();
        assert_eq!((img.height, img.width), (64, 256));
        assert!(img.pixels.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(img, g.generate(&p, &z).unwrap());
        let other = g.generate(&p, &[1.0, 1.0, -0.5, 0.0, 0.2]).unwrap();
        assert!(img.pixels.iter().zip(&other.pixels).any(|(a, b)| (a - b).abs() > 1e-6));
        assert!(matches!(g.generate(&p, &[0.0; 4]), Err(GanError::Shape { .. })));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let g = Generator::new(&tiny()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = g.init_params(&mut rng);
        let z: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let weights: Vec<f64> = (0..g.out_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |p: &[f64]| -> f64 {
            let out = g.forward(p, &z).unwrap().out;
            out.iter().zip(&weights).map(|(a, b)| a * b).sum()
        };
        let pass = g.forward(&p, &z).unwrap();
        let mut grad = vec![0.0; g.n_params()];
        g.backward(&p, &pass, &weights, &mut grad);
        let h = 1e-6;
        for i in (0..g.n_params()).step_by(g.n_params() / 60) {
            let orig = p[i];
            p[i] = orig + h;
            let up = loss(&p);
            p[i] = orig - h;
            let down = loss(&p);
            p[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let scale = fd.abs().max(grad[i].abs()).max(1e-6);
            assert!((fd - grad[i]).abs() / scale < 1e-4, "param {i}: {} vs {fd}", grad[i]);
        }
    }
}

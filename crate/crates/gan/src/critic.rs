//! Critic: stride-2 convolutions with leaky ReLU, then a linear scalar head.
//!
//! Only piecewise-linear activations are used, so on each linear region the
//! input gradient is a linear function of the weights along fixed masks. The
//! gradient-penalty weight gradient relies on this (see [`Critic::tangent`]).

use colsig_core::{Canvas, RasterImage};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::config::CriticConfig;
use crate::error::{GanError, Result};
use crate::nn::{leaky, leaky_grad, ConvShape};

#[derive(Debug, Clone)]
pub struct Critic {
    canvas: Canvas,
    slope: f64,
    convs: Vec<ConvShape>,
    offsets: Vec<(usize, usize)>,
    head_len: usize,
    head_off: usize,
    n_params: usize,
}

/// Forward values kept for backpropagation.
#[derive(Debug, Clone)]
pub struct CriticPass {
    cols: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    head_in: Vec<f64>,
    pub score: f64,
}

/// Directional derivative of the score along a fixed input direction, with
/// the values needed to differentiate it with respect to the weights.
#[derive(Debug, Clone)]
pub struct TangentPass {
    cols: Vec<Vec<f64>>,
    head_in: Vec<f64>,
    pub derivative: f64,
}

impl Critic {
    pub fn new(cfg: &CriticConfig, canvas: Canvas) -> Result<Self> {
        cfg.validate(canvas)?;
        let convs = &cfg.channels[..cfg.channels.len() - 1];
        Ok(Self::with_layers(canvas, convs, cfg.kernel_size, cfg.negative_slope))
    }

    /// Any number of stride-2 convolutions with the given output channels,
    /// followed by the scalar head. Used directly for small test critics.
    pub fn with_layers(canvas: Canvas, channels: &[usize], kernel: usize, slope: f64) -> Self {
        let (mut h, mut w, mut cin) = (canvas.height, canvas.width, 1);
        let mut n = 0;
        let mut convs = Vec::new();
        let mut offsets = Vec::new();
        for &cout in channels {
            let s = ConvShape::new(cin, cout, kernel, 2, h, w);
            offsets.push((n, n + s.weight_len()));
            n += s.weight_len() + cout;
            (h, w, cin) = (s.ho, s.wo, cout);
            convs.push(s);
        }
        let head_len = cin * h * w;
        Critic {
            canvas,
            slope,
            convs,
            offsets,
            head_len,
            head_off: n,
            n_params: n + head_len + 1,
        }
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn canvas(&self) -> Canvas {
        self.canvas
    }

    pub fn init_params(&self, rng: &mut impl Rng) -> Vec<f64> {
        let gain = 2.0 / (1.0 + self.slope * self.slope);
        let mut p = vec![0.0; self.n_params];
        for (s, &(w_off, b_off)) in self.convs.iter().zip(&self.offsets) {
            let d = Normal::new(0.0, (gain / s.patch() as f64).sqrt()).expect("finite std");
            for v in &mut p[w_off..b_off] {
                *v = d.sample(rng);
            }
        }
        let d = Normal::new(0.0, (1.0 / self.head_len as f64).sqrt()).expect("finite std");
        for v in &mut p[self.head_off..self.head_off + self.head_len] {
            *v = d.sample(rng);
        }
        p
    }

    fn check(&self, params: &[f64], x: &[f64]) -> Result<()> {
        if params.len() != self.n_params {
            return Err(GanError::Shape {
                expected: format!("{} critic parameters", self.n_params),
                actual: params.len().to_string(),
            });
        }
        if x.len() != self.canvas.len() {
            return Err(GanError::Shape {
                expected: format!("{}x{} image", self.canvas.height, self.canvas.width),
                actual: format!("{} pixels", x.len()),
            });
        }
        Ok(())
    }

    pub fn forward(&self, params: &[f64], x: &[f64]) -> Result<CriticPass> {
        self.check(params, x)?;
        let mut h = x.to_vec();
        let mut cols = Vec::with_capacity(self.convs.len());
        let mut pre = Vec::with_capacity(self.convs.len());
        for (s, &(w_off, b_off)) in self.convs.iter().zip(&self.offsets) {
            let c = s.im2col(&h);
            let a = s.forward(&params[w_off..b_off], Some(&params[b_off..b_off + s.cout]), &c);
            h = a.iter().map(|&v| leaky(v, self.slope)).collect();
            cols.push(c);
            pre.push(a);
        }
        let head = &params[self.head_off..self.head_off + self.head_len];
        let score = params[self.n_params - 1] + head.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>();
        Ok(CriticPass {
            cols,
            pre,
            head_in: h,
            score,
        })
    }

    pub fn score(&self, params: &[f64], img: &RasterImage) -> Result<f64> {
        Ok(self.forward(params, &img.pixels)?.score)
    }

    /// Shared reverse pass. `cols`/`head_in` come from either the primal or
    /// the tangent forward pass; the activation masks always come from the
    /// primal pre-activations.
    #[allow(clippy::too_many_arguments)]
    fn reverse(
        &self,
        params: &[f64],
        cols: &[Vec<f64>],
        head_in: &[f64],
        pre: &[Vec<f64>],
        seed: f64,
        grad: Option<&mut [f64]>,
        with_bias: bool,
        want_input: bool,
    ) -> Option<Vec<f64>> {
        let mut grad = grad;
        let head = &params[self.head_off..self.head_off + self.head_len];
        if let Some(g) = grad.as_deref_mut() {
            for (gi, &v) in g[self.head_off..self.head_off + self.head_len].iter_mut().zip(head_in) {
                *gi += seed * v;
            }
            if with_bias {
                g[self.n_params - 1] += seed;
            }
        }
        let mut d: Vec<f64> = head.iter().map(|&w| seed * w).collect();
        for l in (0..self.convs.len()).rev() {
            let s = &self.convs[l];
            let (w_off, b_off) = self.offsets[l];
            for (dv, &a) in d.iter_mut().zip(&pre[l]) {
                *dv *= leaky_grad(a, self.slope);
            }
            if let Some(g) = grad.as_deref_mut() {
                let (gw, gb) = g[w_off..b_off + s.cout].split_at_mut(b_off - w_off);
                s.backward_params(&d, &cols[l], gw, with_bias.then_some(gb));
            }
            if l == 0 && !want_input {
                return None;
            }
            d = s.backward_input(&params[w_off..b_off], &d);
        }
        Some(d)
    }

    /// Accumulate `seed * d score / d params` into `grad`.
    pub fn backward_params(&self, params: &[f64], pass: &CriticPass, seed: f64, grad: &mut [f64]) {
        self.reverse(params, &pass.cols, &pass.head_in, &pass.pre, seed, Some(grad), true, false);
    }

    /// Gradient of the score with respect to the input image.
    pub fn input_gradient(&self, params: &[f64], pass: &CriticPass) -> Vec<f64> {
        if self.convs.is_empty() {
            return params[self.head_off..self.head_off + self.head_len].to_vec();
        }
        self.reverse(params, &pass.cols, &pass.head_in, &pass.pre, 1.0, None, false, true)
            .expect("input gradient requested")
    }

    /// Forward-mode derivative of the score along `direction` at the point of
    /// `pass`: the same network without biases, with activations frozen to
    /// the primal masks.
    pub fn tangent(&self, params: &[f64], pass: &CriticPass, direction: &[f64]) -> TangentPass {
        let mut t = direction.to_vec();
        let mut cols = Vec::with_capacity(self.convs.len());
        for (l, (s, &(w_off, b_off))) in self.convs.iter().zip(&self.offsets).enumerate() {
            let c = s.im2col(&t);
            let mut a = s.forward(&params[w_off..b_off], None, &c);
            for (v, &p) in a.iter_mut().zip(&pass.pre[l]) {
                *v *= leaky_grad(p, self.slope);
            }
            cols.push(c);
            t = a;
        }
        let head = &params[self.head_off..self.head_off + self.head_len];
        let derivative = head.iter().zip(&t).map(|(a, b)| a * b).sum();
        TangentPass {
            cols,
            head_in: t,
            derivative,
        }
    }

    /// Accumulate `seed * d(derivative) / d params` into `grad`, holding the
    /// direction and the activation masks fixed.
    pub fn tangent_backward(&self, params: &[f64], pass: &CriticPass, tangent: &TangentPass, seed: f64, grad: &mut [f64]) {
        self.reverse(params, &tangent.cols, &tangent.head_in, &pass.pre, seed, Some(grad), false, false);
    }
}

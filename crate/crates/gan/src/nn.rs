//! Convolution, upsampling and activation primitives on `[channel][row][col]`
//! buffers. Convolutions go through im2col and a dense matrix product.

use serde::{Deserialize, Serialize};

pub fn leaky(v: f64, slope: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        slope * v
    }
}

/// Derivative of the leaky ReLU, taken as `slope` at 0.
pub fn leaky_grad(pre: f64, slope: f64) -> f64 {
    if pre > 0.0 {
        1.0
    } else {
        slope
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// `c = a * b + beta * c` for an `m x k` by `k x n` product, with arbitrary
/// element strides on `a` and `b` and a row-major `c`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n, "gemm: output too small");
    if k > 0 {
        assert!(a.len() > (m - 1) * rsa + (k - 1) * csa, "gemm: lhs too small");
        assert!(b.len() > (k - 1) * rsb + (n - 1) * csb, "gemm: rhs too small");
    }
    // SAFETY: every index touched by dgemm is within the bounds asserted above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of one square-kernel convolution with `kernel / 2` zero padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvShape {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub h: usize,
    pub w: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvShape {
    pub fn new(cin: usize, cout: usize, kernel: usize, stride: usize, h: usize, w: usize) -> Self {
        let p = kernel / 2;
        let ho = (h + 2 * p - kernel) / stride + 1;
        let wo = (w + 2 * p - kernel) / stride + 1;
        ConvShape {
            cin,
            cout,
            kernel,
            stride,
            h,
            w,
            ho,
            wo,
        }
    }

    /// Rows of the im2col matrix.
    pub fn patch(&self) -> usize {
        self.cin * self.kernel * self.kernel
    }

    pub fn n_out(&self) -> usize {
        self.ho * self.wo
    }

    pub fn weight_len(&self) -> usize {
        self.cout * self.patch()
    }

    pub fn in_len(&self) -> usize {
        self.cin * self.h * self.w
    }

    pub fn out_len(&self) -> usize {
        self.cout * self.n_out()
    }

    fn source(&self, o: usize, k: usize, size: usize) -> Option<usize> {
        let i = (o * self.stride + k) as isize - (self.kernel / 2) as isize;
        (i >= 0 && (i as usize) < size).then_some(i as usize)
    }

    pub fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let (k, n) = (self.kernel, self.n_out());
        let mut cols = vec![0.0; self.patch() * n];
        for c in 0..self.cin {
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut cols[((c * k + ky) * k + kx) * n..][..n];
                    for oy in 0..self.ho {
                        let Some(iy) = self.source(oy, ky, self.h) else { continue };
                        let src = &x[(c * self.h + iy) * self.w..][..self.w];
                        for ox in 0..self.wo {
                            if let Some(ix) = self.source(ox, kx, self.w) {
                                row[oy * self.wo + ox] = src[ix];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    /// Adjoint of [`im2col`](Self::im2col).
    pub fn col2im(&self, cols: &[f64]) -> Vec<f64> {
        let (k, n) = (self.kernel, self.n_out());
        let mut x = vec![0.0; self.in_len()];
        for c in 0..self.cin {
            for ky in 0..k {
                for kx in 0..k {
                    let row = &cols[((c * k + ky) * k + kx) * n..][..n];
                    for oy in 0..self.ho {
                        let Some(iy) = self.source(oy, ky, self.h) else { continue };
                        let dst = &mut x[(c * self.h + iy) * self.w..][..self.w];
                        for ox in 0..self.wo {
                            if let Some(ix) = self.source(ox, kx, self.w) {
                                dst[ix] += row[oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
        x
    }

    /// `W * cols (+ b)`.
    pub fn forward(&self, weights: &[f64], bias: Option<&[f64]>, cols: &[f64]) -> Vec<f64> {
        let n = self.n_out();
        let mut out = vec![0.0; self.out_len()];
        if let Some(b) = bias {
            for (c, &bv) in b.iter().enumerate() {
                out[c * n..(c + 1) * n].fill(bv);
            }
        }
        gemm(self.cout, self.patch(), n, weights, (self.patch(), 1), cols, (n, 1), 1.0, &mut out);
        out
    }

    /// Accumulate `dW += dout * cols^T` and, if requested, `db += rowsum(dout)`.
    pub fn backward_params(&self, dout: &[f64], cols: &[f64], dw: &mut [f64], db: Option<&mut [f64]>) {
        let n = self.n_out();
        gemm(self.cout, n, self.patch(), dout, (n, 1), cols, (1, n), 1.0, dw);
        if let Some(db) = db {
            for (c, d) in db.iter_mut().enumerate() {
                *d += dout[c * n..(c + 1) * n].iter().sum::<f64>();
            }
        }
    }

    /// Gradient with respect to the layer input.
    pub fn backward_input(&self, weights: &[f64], dout: &[f64]) -> Vec<f64> {
        let n = self.n_out();
        let mut dcols = vec![0.0; self.patch() * n];
        gemm(self.patch(), self.cout, n, weights, (1, self.patch()), dout, (n, 1), 0.0, &mut dcols);
        self.col2im(&dcols)
    }
}

/// Nearest-neighbour 2x upsampling of `c` planes of `h x w`.
pub fn upsample2(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (h2, w2) = (2 * h, 2 * w);
    let mut out = vec![0.0; c * h2 * w2];
    for ch in 0..c {
        for y in 0..h2 {
            let src = &x[(ch * h + y / 2) * w..][..w];
            let dst = &mut out[(ch * h2 + y) * w2..][..w2];
            for (xo, d) in dst.iter_mut().enumerate() {
                *d = src[xo / 2];
            }
        }
    }
    out
}

/// Adjoint of [`upsample2`]: sums each 2x2 block.
pub fn upsample2_backward(d: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (h2, w2) = (2 * h, 2 * w);
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..h2 {
            let src = &d[(ch * h2 + y) * w2..][..w2];
            let dst = &mut out[(ch * h + y / 2) * w..][..w];
            for (xo, v) in src.iter().enumerate() {
                dst[xo / 2] += v;
            }
        }
    }
    out
}

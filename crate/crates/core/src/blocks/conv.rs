//! 2-D cross-correlation over `[B, C, H, W]` buffers, lowered to matrix products.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::{matmul_raw, transpose_raw};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn new(kernel: usize, stride: usize, dilation: usize, padding: usize) -> Result<Self> {
        let g = Self {
            kernel,
            stride,
            dilation,
            padding,
        };
        g.validate()?;
        Ok(g)
    }

    /// Zero padding that preserves spatial extent at stride 1.
    pub fn same(kernel: usize, dilation: usize) -> Self {
        Self {
            kernel,
            stride: 1,
            dilation,
            padding: dilation * (kernel - 1) / 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.stride == 0 || self.dilation == 0 {
            return shape_err(format!(
                "kernel, stride and dilation must be >= 1, got {self:?}"
            ));
        }
        Ok(())
    }

    /// `⌊(n + 2·pad − dilation·(k − 1) − 1)/stride⌋ + 1`.
    pub fn out_extent(&self, n: usize) -> Result<usize> {
        let span = self.dilation * (self.kernel - 1) + 1;
        let padded = n + 2 * self.padding;
        if padded < span {
            return shape_err(format!(
                "input extent {n} with padding {} is smaller than the dilated kernel span {span}",
                self.padding
            ));
        }
        Ok((padded - span) / self.stride + 1)
    }

    /// Output positions `o` for which `o·stride + off − pad` lands inside `0..n`.
    fn valid_range(&self, off: usize, n: usize, n_out: usize) -> (usize, usize) {
        let pad = self.padding as isize;
        let s = self.stride as isize;
        let off = off as isize;
        // o*s + off - pad >= 0  and  o*s + off - pad <= n - 1
        let lo_num = pad - off;
        let lo = if lo_num <= 0 { 0 } else { (lo_num + s - 1) / s };
        let hi_num = n as isize - 1 + pad - off;
        if hi_num < 0 {
            return (0, 0);
        }
        let hi = (hi_num / s + 1).min(n_out as isize);
        (lo as usize, hi.max(lo) as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub h_out: usize,
    pub w_out: usize,
}

pub(crate) fn conv_dims(x_shape: &[usize], w_shape: &[usize], g: &ConvGeometry) -> Result<ConvDims> {
    g.validate()?;
    let (batch, c_in, h, w) = match *x_shape {
        [b, c, h, w] => (b, c, h, w),
        _ => return shape_err(format!("conv2d input must be [B, C, H, W], got {x_shape:?}")),
    };
    let (c_out, wc_in, kh, kw) = match *w_shape {
        [o, i, kh, kw] => (o, i, kh, kw),
        _ => return shape_err(format!("conv2d weights must be [C_out, C_in, k, k], got {w_shape:?}")),
    };
    if wc_in != c_in {
        return shape_err(format!("conv2d channel mismatch: input {c_in}, weights {wc_in}"));
    }
    if kh != g.kernel || kw != g.kernel {
        return shape_err(format!(
            "weights are {kh}x{kw} but geometry says kernel {}",
            g.kernel
        ));
    }
    Ok(ConvDims {
        batch,
        c_in,
        h,
        w,
        c_out,
        h_out: g.out_extent(h)?,
        w_out: g.out_extent(w)?,
    })
}

/// Unfolds `x` into a `[C_in·k·k, B·H_out·W_out]` matrix; padding taps stay zero.
fn im2col<F: Scalar>(x: &[F], d: &ConvDims, g: &ConvGeometry) -> Vec<F> {
    let k = g.kernel;
    let (hw_in, hw_out) = (d.h * d.w, d.h_out * d.w_out);
    let cols = d.batch * hw_out;
    let mut out = vec![F::zero(); d.c_in * k * k * cols];
    for ci in 0..d.c_in {
        for ky in 0..k {
            let (oy0, oy1) = g.valid_range(ky * g.dilation, d.h, d.h_out);
            for kx in 0..k {
                let (ox0, ox1) = g.valid_range(kx * g.dilation, d.w, d.w_out);
                let row = ((ci * k + ky) * k + kx) * cols;
                for b in 0..d.batch {
                    let ibase = (b * d.c_in + ci) * hw_in;
                    for oy in oy0..oy1 {
                        let iy = oy * g.stride + ky * g.dilation - g.padding;
                        let dst = row + b * hw_out + oy * d.w_out;
                        for ox in ox0..ox1 {
                            let ix = ox * g.stride + kx * g.dilation - g.padding;
                            out[dst + ox] = x[ibase + iy * d.w + ix];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input.
fn col2im<F: Scalar>(cols_grad: &[F], d: &ConvDims, g: &ConvGeometry) -> Vec<F> {
    let k = g.kernel;
    let (hw_in, hw_out) = (d.h * d.w, d.h_out * d.w_out);
    let cols = d.batch * hw_out;
    let mut gx = vec![F::zero(); d.batch * d.c_in * hw_in];
    for ci in 0..d.c_in {
        for ky in 0..k {
            let (oy0, oy1) = g.valid_range(ky * g.dilation, d.h, d.h_out);
            for kx in 0..k {
                let (ox0, ox1) = g.valid_range(kx * g.dilation, d.w, d.w_out);
                let row = ((ci * k + ky) * k + kx) * cols;
                for b in 0..d.batch {
                    let ibase = (b * d.c_in + ci) * hw_in;
                    for oy in oy0..oy1 {
                        let iy = oy * g.stride + ky * g.dilation - g.padding;
                        let src = row + b * hw_out + oy * d.w_out;
                        for ox in ox0..ox1 {
                            let ix = ox * g.stride + kx * g.dilation - g.padding;
                            let i = ibase + iy * d.w + ix;
                            gx[i] = gx[i] + cols_grad[src + ox];
                        }
                    }
                }
            }
        }
    }
    gx
}

/// `[C_out, B·HW]` ↔ `[B, C_out, HW]`.
fn channel_major<F: Scalar>(x: &[F], batch: usize, c: usize, hw: usize, to_batch_major: bool) -> Vec<F> {
    let mut out = vec![F::zero(); x.len()];
    for b in 0..batch {
        for ch in 0..c {
            let bm = (b * c + ch) * hw;
            let cm = ch * batch * hw + b * hw;
            let (src, dst) = if to_batch_major { (cm, bm) } else { (bm, cm) };
            out[dst..dst + hw].copy_from_slice(&x[src..src + hw]);
        }
    }
    out
}

pub(crate) fn conv2d_forward<F: Scalar>(x: &[F], wt: &[F], d: &ConvDims, g: &ConvGeometry) -> Vec<F> {
    let kk = d.c_in * g.kernel * g.kernel;
    let hw_out = d.h_out * d.w_out;
    let cols = im2col(x, d, g);
    let y = matmul_raw(wt, &cols, d.c_out, kk, d.batch * hw_out);
    channel_major(&y, d.batch, d.c_out, hw_out, true)
}

/// Gradients with respect to input and weights given the output gradient.
pub(crate) fn conv2d_backward<F: Scalar>(
    x: &[F],
    wt: &[F],
    grad_out: &[F],
    d: &ConvDims,
    g: &ConvGeometry,
    want_x: bool,
    want_w: bool,
) -> (Option<Vec<F>>, Option<Vec<F>>) {
    let kk = d.c_in * g.kernel * g.kernel;
    let n = d.batch * d.h_out * d.w_out;
    let go = channel_major(grad_out, d.batch, d.c_out, d.h_out * d.w_out, false);
    let gw = want_w.then(|| {
        let cols_t = transpose_raw(&im2col(x, d, g), kk, n);
        matmul_raw(&go, &cols_t, d.c_out, n, kk)
    });
    let gx = want_x.then(|| {
        let wt_t = transpose_raw(wt, d.c_out, kk);
        col2im(&matmul_raw(&wt_t, &go, kk, d.c_out, n), d, g)
    });
    (gx, gw)
}


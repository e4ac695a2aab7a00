//! Independent reference implementations used as oracles by the integration tests.

#![allow(dead_code)]

use sssa_core::train::Sample;

/// Direct-definition cross-correlation over `[B, C, H, W]` with `[O, C, k, k]` weights.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv(
    x: &[f64],
    xs: [usize; 4],
    w: &[f64],
    ws: [usize; 4],
    stride: usize,
    dilation: usize,
    padding: usize,
) -> (Vec<f64>, [usize; 4]) {
    let [b, c, h, wd] = xs;
    let [o, _, k, _] = ws;
    let span = dilation * (k - 1) + 1;
    let ho = (h + 2 * padding - span) / stride + 1;
    let wo = (wd + 2 * padding - span) / stride + 1;
    let mut y = vec![0.0; b * o * ho * wo];
    for bi in 0..b {
        for oi in 0..o {
            for i in 0..ho {
                for j in 0..wo {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (i * stride + ky * dilation) as isize - padding as isize;
                                let ix = (j * stride + kx * dilation) as isize - padding as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x[((bi * c + ci) * h + iy as usize) * wd + ix as usize];
                                acc += w[((oi * c + ci) * k + ky) * k + kx] * xv;
                            }
                        }
                    }
                    y[((bi * o + oi) * ho + i) * wo + j] = acc;
                }
            }
        }
    }
    (y, [b, o, ho, wo])
}

/// Binary logistic regression on per-pixel spike rates, fitted by full-batch gradient descent.
pub struct Logistic {
    pub w: Vec<f64>,
    pub b: f64,
}

impl Logistic {
    pub fn fit(train: &[Sample], iterations: usize, lr: f64) -> Self {
        let feats: Vec<Vec<f64>> = train.iter().map(Sample::rate_features).collect();
        let dim = feats[0].len();
        let (mut w, mut b) = (vec![0.0; dim], 0.0);
        let n = train.len() as f64;
        for _ in 0..iterations {
            let mut gw = vec![0.0; dim];
            let mut gb = 0.0;
            for (f, s) in feats.iter().zip(train) {
                let z: f64 = f.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + b;
                let err = 1.0 / (1.0 + (-z).exp()) - s.label as f64;
                for (g, x) in gw.iter_mut().zip(f) {
                    *g += err * x;
                }
                gb += err;
            }
            for (wi, g) in w.iter_mut().zip(&gw) {
                *wi -= lr * g / n;
            }
            b -= lr * gb / n;
        }
        Self { w, b }
    }

    pub fn accuracy(&self, samples: &[Sample]) -> f64 {
        let hits = samples
            .iter()
            .filter(|s| {
                let z: f64 = s.rate_features().iter().zip(&self.w).map(|(a, b)| a * b).sum::<f64>() + self.b;
                (z >= 0.0) as usize == s.label
            })
            .count();
        hits as f64 / samples.len() as f64
    }
}

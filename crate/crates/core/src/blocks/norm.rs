//! Batch normalisation over the channel axis of `[M, C, S]` buffers.

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct NormLayout {
    pub outer: usize,
    pub channels: usize,
    pub inner: usize,
}

impl NormLayout {
    /// Channel axis is 1; everything before it is batch, everything after is spatial.
    pub fn of(shape: &[usize]) -> Option<Self> {
        if shape.len() < 2 {
            return None;
        }
        Some(Self {
            outer: shape[0],
            channels: shape[1],
            inner: shape[2..].iter().product(),
        })
    }

    pub fn count(&self) -> usize {
        self.outer * self.inner
    }
}

/// Per-channel (mean, biased variance).
pub(crate) fn batch_stats<F: Scalar>(x: &[F], l: &NormLayout) -> (Vec<F>, Vec<F>) {
    let n = F::of(l.count() as f64);
    let mut mean = vec![F::zero(); l.channels];
    let mut var = vec![F::zero(); l.channels];
    for c in 0..l.channels {
        let mut s = F::zero();
        for o in 0..l.outer {
            let base = (o * l.channels + c) * l.inner;
            for v in &x[base..base + l.inner] {
                s = s + *v;
            }
        }
        let m = s / n;
        let mut q = F::zero();
        for o in 0..l.outer {
            let base = (o * l.channels + c) * l.inner;
            for v in &x[base..base + l.inner] {
                let dv = *v - m;
                q = q + dv * dv;
            }
        }
        mean[c] = m;
        var[c] = q / n;
    }
    (mean, var)
}

/// Returns `(y, x_hat)` for the given statistics.
pub(crate) fn normalize<F: Scalar>(
    x: &[F],
    l: &NormLayout,
    mean: &[F],
    inv_std: &[F],
    gamma: &[F],
    beta: &[F],
) -> (Vec<F>, Vec<F>) {
    let mut y = vec![F::zero(); x.len()];
    let mut xh = vec![F::zero(); x.len()];
    for o in 0..l.outer {
        for c in 0..l.channels {
            let base = (o * l.channels + c) * l.inner;
            for i in base..base + l.inner {
                let h = (x[i] - mean[c]) * inv_std[c];
                xh[i] = h;
                y[i] = gamma[c] * h + beta[c];
            }
        }
    }
    (y, xh)
}

pub(crate) fn inv_std<F: Scalar>(var: &[F], eps: F) -> Vec<F> {
    var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect()
}

/// Backward pass. `batch_mode` selects batch statistics (train) vs fixed statistics.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward<F: Scalar>(
    grad: &[F],
    x_hat: &[F],
    l: &NormLayout,
    inv_std: &[F],
    gamma: &[F],
    batch_mode: bool,
) -> (Vec<F>, Vec<F>, Vec<F>) {
    let n = F::of(l.count() as f64);
    let mut g_gamma = vec![F::zero(); l.channels];
    let mut g_beta = vec![F::zero(); l.channels];
    for o in 0..l.outer {
        for c in 0..l.channels {
            let base = (o * l.channels + c) * l.inner;
            for i in base..base + l.inner {
                g_beta[c] = g_beta[c] + grad[i];
                g_gamma[c] = g_gamma[c] + grad[i] * x_hat[i];
            }
        }
    }
    let mut gx = vec![F::zero(); grad.len()];
    for o in 0..l.outer {
        for c in 0..l.channels {
            let base = (o * l.channels + c) * l.inner;
            let scale = gamma[c] * inv_std[c];
            for i in base..base + l.inner {
                gx[i] = if batch_mode {
                    scale / n * (n * grad[i] - g_beta[c] - x_hat[i] * g_gamma[c])
                } else {
                    scale * grad[i]
                };
            }
        }
    }
    (gx, g_gamma, g_beta)
}

//! Convolutional building blocks and the SNN-ViT assembly.

pub(crate) mod conv;
pub mod model;
pub(crate) mod norm;

use serde::{Deserialize, Serialize};

pub use conv::ConvGeometry;
pub use model::{
    model_forward, sssa_block, BlockParams, ModelConfig, SnnVit, StageConfig, StemConfig,
};

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<F> {
    pub weights: Tensor<F>,
    pub geometry: ConvGeometry,
}

impl<F: Scalar> ConvParams<F> {
    pub fn new(weights: Tensor<F>, stride: usize, dilation: usize, padding: usize) -> Result<Self> {
        if weights.rank() != 4 || weights.shape()[2] != weights.shape()[3] {
            return shape_err(format!(
                "conv weights must be [C_out, C_in, k, k], got {:?}",
                weights.shape()
            ));
        }
        let geometry = ConvGeometry::new(weights.shape()[2], stride, dilation, padding)?;
        Ok(Self { weights, geometry })
    }
}

/// Standard cross-correlation with stride, dilation and zero padding.
pub fn conv2d<F: Scalar>(x: &Tensor<F>, p: &ConvParams<F>) -> Result<Tensor<F>> {
    let d = conv::conv_dims(x.shape(), p.weights.shape(), &p.geometry)?;
    let out = conv::conv2d_forward(x.data(), p.weights.data(), &d, &p.geometry);
    Tensor::new(vec![d.batch, d.c_out, d.h_out, d.w_out], out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BnMode {
    Train,
    Infer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnParams<F> {
    pub gamma: Tensor<F>,
    pub beta: Tensor<F>,
    pub running_mean: Tensor<F>,
    pub running_var: Tensor<F>,
    pub eps: F,
    pub momentum: F,
}

impl<F: Scalar> BnParams<F> {
    /// Identity affine, zero mean, unit variance, `ε = 1e-5`, momentum 0.1.
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::ones(vec![channels]),
            beta: Tensor::zeros(vec![channels]),
            running_mean: Tensor::zeros(vec![channels]),
            running_var: Tensor::ones(vec![channels]),
            eps: F::of(1e-5),
            momentum: F::of(0.1),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        for t in [&self.beta, &self.running_mean, &self.running_var] {
            if t.shape() != [c] {
                return shape_err(format!("batch-norm buffers disagree on channel count {c}"));
            }
        }
        if self.running_var.data().iter().any(|&v| v < F::zero()) {
            return Err(Error::Parameter("negative running variance".into()));
        }
        if !(self.eps > F::zero()) {
            return Err(Error::Parameter("batch-norm epsilon must be positive".into()));
        }
        Ok(())
    }

    /// Folds batch statistics into the running buffers (unbiased variance).
    pub(crate) fn update_running(&mut self, mean: &[F], biased_var: &[F], count: usize) {
        let m = self.momentum;
        let keep = F::one() - m;
        let bessel = if count > 1 {
            F::of(count as f64 / (count as f64 - 1.0))
        } else {
            F::one()
        };
        for c in 0..self.channels() {
            let rm = self.running_mean.data()[c];
            let rv = self.running_var.data()[c];
            self.running_mean.data_mut()[c] = keep * rm + m * mean[c];
            self.running_var.data_mut()[c] = keep * rv + m * biased_var[c] * bessel;
        }
    }
}

/// Batch normalisation over axis 1. Train mode normalises with batch statistics
/// and updates the running buffers; infer mode uses the running buffers.
pub fn batchnorm<F: Scalar>(x: &Tensor<F>, p: &mut BnParams<F>, mode: BnMode) -> Result<Tensor<F>> {
    p.validate()?;
    let layout = norm::NormLayout::of(x.shape())
        .ok_or_else(|| Error::Shape(format!("batchnorm needs rank >= 2, got {:?}", x.shape())))?;
    if layout.channels != p.channels() {
        return shape_err(format!(
            "batchnorm channel mismatch: input {}, params {}",
            layout.channels,
            p.channels()
        ));
    }
    let (mean, var) = match mode {
        BnMode::Train => {
            let (mean, var) = norm::batch_stats(x.data(), &layout);
            p.update_running(&mean, &var, layout.count());
            (mean, var)
        }
        BnMode::Infer => (
            p.running_mean.data().to_vec(),
            p.running_var.data().to_vec(),
        ),
    };
    let inv = norm::inv_std(&var, p.eps);
    let (y, _) = norm::normalize(x.data(), &layout, &mean, &inv, p.gamma.data(), p.beta.data());
    Tensor::new(x.shape().to_vec(), y)
}

/// Global-local patch splitting: `BN(Conv(x)) + BN(DConv(x))`.
pub fn gl_sps<F: Scalar>(
    x: &Tensor<F>,
    conv_p: &ConvParams<F>,
    dconv_p: &ConvParams<F>,
    bn1: &mut BnParams<F>,
    bn2: &mut BnParams<F>,
    mode: BnMode,
) -> Result<Tensor<F>> {
    let local = conv2d(x, conv_p)?;
    let global = conv2d(x, dconv_p)?;
    if local.shape() != global.shape() {
        return Err(Error::Config(format!(
            "GL-SPS branches disagree: conv {:?} vs dilated conv {:?}",
            local.shape(),
            global.shape()
        )));
    }
    batchnorm(&local, bn1, mode)?.add(&batchnorm(&global, bn2, mode)?)
}

//! Rate-encoded horizontal/vertical bar images.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::{SpikeTensor, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyTaskSpec {
    pub image_size: usize,
    pub samples_per_class: usize,
    /// Fraction of each class used for training; the rest is held out.
    pub train_fraction: f64,
    pub t_steps: usize,
    /// Firing probability of a bar pixel before the noise floor is added.
    pub peak_rate: f64,
    /// Background firing probability.
    pub noise_rate: f64,
    /// Bars occupy rows (or columns) inside `[band.0, band.1)`.
    pub band: (usize, usize),
    pub thickness: usize,
    pub seed: u64,
}

impl Default for ToyTaskSpec {
    fn default() -> Self {
        Self {
            image_size: 16,
            samples_per_class: 200,
            train_fraction: 0.5,
            t_steps: 4,
            peak_rate: 0.5,
            noise_rate: 0.02,
            band: (3, 13),
            thickness: 2,
            seed: 0,
        }
    }
}

/// Encoded rates are capped here to stay in the low-rate regime.
pub const RATE_CAP: f64 = 0.5;

impl ToyTaskSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.image_size == 0 || self.t_steps == 0 || self.samples_per_class < 2 {
            return bad("image size, T and samples per class must be positive (>= 2 samples)".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!("train fraction {} outside (0, 1)", self.train_fraction));
        }
        for (name, r) in [("peak", self.peak_rate), ("noise", self.noise_rate)] {
            if !(0.0..=1.0).contains(&r) {
                return bad(format!("{name} rate {r} outside [0, 1]"));
            }
        }
        let (lo, hi) = self.band;
        if self.thickness == 0 || lo + self.thickness > hi || hi > self.image_size {
            return bad(format!(
                "band {:?} cannot hold a bar of thickness {} in a {} image",
                self.band, self.thickness, self.image_size
            ));
        }
        Ok(())
    }

    pub fn n_train_per_class(&self) -> usize {
        ((self.samples_per_class as f64 * self.train_fraction).round() as usize)
            .clamp(1, self.samples_per_class - 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `[T, 1, H, W]`
    pub spikes: SpikeTensor,
    /// 0 = horizontal bar, 1 = vertical bar.
    pub label: usize,
}

impl Sample {
    /// Per-pixel spike count divided by `T`.
    pub fn rate_features(&self) -> Vec<f64> {
        let t = self.spikes.shape()[0];
        let px = self.spikes.len() / t;
        let d = self.spikes.data();
        (0..px)
            .map(|i| (0..t).map(|s| d[s * px + i] as f64).sum::<f64>() / t as f64)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDataset {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Firing probabilities of one bar image.
pub fn bar_rates(spec: &ToyTaskSpec, label: usize, offset: usize) -> Vec<f64> {
    let s = spec.image_size;
    (0..s * s)
        .map(|i| {
            let (row, col) = (i / s, i % s);
            let along = if label == 0 { row } else { col };
            let on = along >= offset && along < offset + spec.thickness;
            let intensity = if on { 1.0 } else { 0.0 };
            (intensity * spec.peak_rate + spec.noise_rate).min(RATE_CAP)
        })
        .collect()
}

impl ToyDataset {
    pub fn generate(spec: &ToyTaskSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = RngState::stream_at(spec.seed, 0);
        let s = spec.image_size;
        let n_train = spec.n_train_per_class();
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for label in 0..2 {
            for i in 0..spec.samples_per_class {
                let offset = rng.random_range(spec.band.0..=spec.band.1 - spec.thickness);
                let rates = bar_rates(spec, label, offset);
                let spikes = SpikeTensor::from_fn(vec![spec.t_steps, 1, s, s], |k| {
                    rng.random::<f64>() < rates[k % (s * s)]
                });
                let sample = Sample { spikes, label };
                if i < n_train {
                    train.push(sample);
                } else {
                    test.push(sample);
                }
            }
        }
        let mut shuffle = RngState::stream_at(spec.seed, 1);
        train.shuffle(&mut shuffle);
        test.shuffle(&mut shuffle);
        Ok(Self { train, test })
    }
}

/// Stacks samples into a `[T, B, 1, H, W]` real tensor and their labels.
pub fn batch(samples: &[&Sample]) -> Result<(Tensor<f64>, Vec<usize>)> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Config("empty batch".into()))?;
    let shape = first.spikes.shape().to_vec();
    let t = shape[0];
    let per_t: usize = shape[1..].iter().product();
    let b = samples.len();
    let mut data = vec![0.0; t * b * per_t];
    for (j, s) in samples.iter().enumerate() {
        let d = s.spikes.data();
        for step in 0..t {
            let dst = (step * b + j) * per_t;
            for (o, &v) in data[dst..dst + per_t].iter_mut().zip(&d[step * per_t..(step + 1) * per_t]) {
                *o = v as f64;
            }
        }
    }
    let mut out_shape = vec![t, b];
    out_shape.extend_from_slice(&shape[1..]);
    Ok((Tensor::new(out_shape, data)?, samples.iter().map(|s| s.label).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_and_disjoint() {
        let spec = ToyTaskSpec::default();
        let ds = ToyDataset::generate(&spec).unwrap();
        assert_eq!(ds.train.len(), 200);
        assert_eq!(ds.test.len(), 200);
        for set in [&ds.train, &ds.test] {
            assert_eq!(set.iter().filter(|s| s.label == 0).count(), 100);
        }
        for a in &ds.test {
            assert!(ds.train.iter().all(|b| b.spikes != a.spikes));
        }
    }

    #[test]
    fn rates_are_capped() {
        let mut spec = ToyTaskSpec::default();
        spec.peak_rate = 1.0;
        let r = bar_rates(&spec, 1, 5);
        assert!(r.iter().all(|&p| p <= RATE_CAP));
        assert_eq!(r.iter().filter(|&&p| p == RATE_CAP).count(), 2 * 16);
    }

    #[test]
    fn deterministic() {
        let spec = ToyTaskSpec::default();
        assert_eq!(ToyDataset::generate(&spec).unwrap(), ToyDataset::generate(&spec).unwrap());
    }

    #[test]
    fn batch_layout_is_time_major() {
        let a = Sample {
            spikes: SpikeTensor::from_fn(vec![2, 1, 1, 2], |i| i == 0),
            label: 0,
        };
        let b = Sample {
            spikes: SpikeTensor::from_fn(vec![2, 1, 1, 2], |i| i == 3),
            label: 1,
        };
        let (x, y) = batch(&[&a, &b]).unwrap();
        assert_eq!(x.shape(), &[2, 2, 1, 1, 2]);
        assert_eq!(x.data(), &[1., 0., 0., 0., 0., 0., 0., 1.]);
        assert_eq!(y, vec![0, 1]);
    }

    #[test]
    fn band_must_fit() {
        let mut spec = ToyTaskSpec::default();
        spec.band = (14, 15);
        assert!(matches!(ToyDataset::generate(&spec), Err(Error::Config(_))));
    }
}

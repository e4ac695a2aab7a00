//! Counter-based randomness.
//!
//! An [`RngState`] is a master seed plus a stream counter. Each call to
//! [`RngState::next_stream`] hands out an independent ChaCha8 stream keyed by
//! `(seed, counter)`, so work split across threads by stream index produces the
//! same draws regardless of how it is scheduled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::SpikeTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub counter: u64,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self { seed, counter: 0 }
    }

    /// Stream for an explicit `(seed, index)` pair, without touching any state.
    pub fn stream_at(seed: u64, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        rng
    }

    pub fn next_stream(&mut self) -> ChaCha8Rng {
        let rng = Self::stream_at(self.seed, self.counter);
        self.counter += 1;
        rng
    }

    /// Derives a child state whose streams do not collide with this one's.
    pub fn fork(&mut self) -> RngState {
        let mut r = self.next_stream();
        RngState::new(r.random())
    }
}

/// Independent Bernoulli(`p`) spikes; consumes one stream.
pub fn bernoulli_spikes(shape: Vec<usize>, p: f64, rng: &mut RngState) -> Result<SpikeTensor> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("firing rate {p} outside [0, 1]")));
    }
    let mut stream = rng.next_stream();
    Ok(SpikeTensor::from_fn(shape, |_| stream.random::<f64>() < p))
}

/// Rate coding: `T` rows of independent Bernoulli draws with the given probabilities.
pub fn encode_rates(rates: &[f64], t_steps: usize, rng: &mut RngState) -> Result<SpikeTensor> {
    if let Some(p) = rates.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Domain(format!("firing rate {p} outside [0, 1]")));
    }
    let mut stream = rng.next_stream();
    let n = rates.len();
    Ok(SpikeTensor::from_fn(vec![t_steps, n], |i| stream.random::<f64>() < rates[i % n]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_rates() {
        let mut rng = RngState::new(1);
        assert_eq!(bernoulli_spikes(vec![2, 3], 0.0, &mut rng).unwrap().count_ones(), 0);
        assert_eq!(bernoulli_spikes(vec![2, 3], 1.0, &mut rng).unwrap().count_ones(), 6);
    }

    #[test]
    fn empirical_rate_within_four_sigma() {
        let mut rng = RngState::new(2024);
        let s = bernoulli_spikes(vec![1, 100_000], 0.15, &mut rng).unwrap();
        assert!((s.firing_rate() - 0.15).abs() < 0.005, "{}", s.firing_rate());
    }

    #[test]
    fn rejects_bad_rate() {
        let mut rng = RngState::new(0);
        assert!(matches!(bernoulli_spikes(vec![1], 1.5, &mut rng), Err(Error::Domain(_))));
        assert!(bernoulli_spikes(vec![1], -0.1, &mut rng).is_err());
    }

    #[test]
    fn equal_seeds_are_bit_identical() {
        let mut a = RngState::new(99);
        let mut b = RngState::new(99);
        for _ in 0..3 {
            assert_eq!(
                bernoulli_spikes(vec![4, 16], 0.3, &mut a).unwrap(),
                bernoulli_spikes(vec![4, 16], 0.3, &mut b).unwrap()
            );
        }
        assert_eq!(a, b);
    }

    #[test]
    fn streams_differ() {
        let mut a = RngState::new(5);
        let x = bernoulli_spikes(vec![256], 0.5, &mut a).unwrap();
        let y = bernoulli_spikes(vec![256], 0.5, &mut a).unwrap();
        assert_ne!(x, y);
    }

    #[test]
    fn rate_coding_extremes() {
        let mut r = RngState::new(1);
        let s = encode_rates(&[0.0, 1.0, 0.0], 4, &mut r).unwrap();
        assert_eq!(s.shape(), &[4, 3]);
        assert!(s.data().chunks(3).all(|row| row == [0, 1, 0]));
        assert!(encode_rates(&[1.5], 1, &mut r).is_err());
    }
}

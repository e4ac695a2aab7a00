//! Randomised cross-checks between formulations that should agree.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{sssa_v1, sssa_v2, AlphaMode};
use crate::counter::OpCounter;
use crate::error::{Error, Result};
use crate::neurons::{fold_thresholds, saccadic_infer, saccadic_train, SaccadicParams};
use crate::rng::RngState;
use crate::tensor::{SpikeTensor, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchReport {
    pub trials: usize,
    pub identical: usize,
    /// Index of the first disagreeing trial.
    pub first_mismatch: Option<usize>,
}

impl MatchReport {
    pub fn all_identical(&self) -> bool {
        self.identical == self.trials
    }

    pub fn fraction(&self) -> f64 {
        self.identical as f64 / self.trials.max(1) as f64
    }

    fn record(&mut self, i: usize, same: bool) {
        self.trials += 1;
        if same {
            self.identical += 1;
        } else if self.first_mismatch.is_none() {
            self.first_mismatch = Some(i);
        }
    }
}

/// Lower-triangular mixer with entries on a 1/4 grid and a diagonal in `[1/4, 2]`.
///
/// Dyadic entries keep every product with integer spike counts exact, so both
/// association orders round identically.
pub fn dyadic_mixer(t: usize, general: bool, rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(vec![t, t], |i| {
        let (r, c) = (i / t, i % t);
        if r == c {
            rng.random_range(1..=8) as f64 / 4.0
        } else if r > c && general {
            rng.random_range(-4..=4) as f64 / 4.0
        } else {
            0.0
        }
    })
}

/// One instance for the V1/V2 comparison, with `Σ_n K′[t, n]` equal at every timestep
/// unless `t = 1`, where `K` is unconstrained.
fn equivalence_instance(
    rng: &mut impl Rng,
    single_step: bool,
) -> Result<(SpikeTensor, SpikeTensor, SpikeTensor, SaccadicParams<f64>)> {
    let t = if single_step { 1 } else { rng.random_range(1..=4) };
    let (n, d) = (rng.random_range(1..=8), rng.random_range(1..=8));
    let p = rng.random_range(0.05..0.6);
    let mut bits = |len: usize| -> Vec<u8> { (0..len).map(|_| (rng.random::<f64>() < p) as u8).collect() };
    let q = bits(t * n * d);
    let v = bits(t * n * d);
    let k0 = bits(n * d);
    let mut k = Vec::with_capacity(t * n * d);
    for _ in 0..t {
        let mut row = k0.clone();
        row.shuffle(rng);
        k.extend(row);
    }
    let scale = (n * d * d) as f64;
    let v_th = Tensor::from_fn(vec![t], |_| (rng.random_range(0.0..scale) * 2.0).round() / 2.0);
    let params = SaccadicParams::new(dyadic_mixer(t, true, rng), v_th, 1.0)?;
    let shape = vec![t, n, d];
    Ok((
        SpikeTensor::new(shape.clone(), q)?,
        SpikeTensor::new(shape.clone(), k)?,
        SpikeTensor::new(shape, v)?,
        params,
    ))
}

/// Compares `S` and the masked `V` of [`sssa_v1`] and [`sssa_v2`] in computed mode.
///
/// With `single_step`, every instance has `T = 1` and arbitrary `K`; otherwise
/// `T ≤ 4` and the per-timestep key total is held constant.
pub fn verify_v1_v2(trials: usize, seed: u64, single_step: bool) -> Result<MatchReport> {
    if trials == 0 {
        return Err(Error::Domain("trials must be at least 1".into()));
    }
    let mut report = MatchReport {
        trials: 0,
        identical: 0,
        first_mismatch: None,
    };
    for i in 0..trials {
        let mut rng = RngState::stream_at(seed, i as u64);
        let (q, k, v, params) = equivalence_instance(&mut rng, single_step)?;
        let mut c = OpCounter::new();
        let a = sssa_v1(&q, &k, &v, &params, &mut c)?;
        let b = sssa_v2(&q, &k, &v, &params, AlphaMode::Computed, &mut c)?;
        report.record(i, a.spikes == b.spikes && a.masked_v == b.masked_v);
    }
    Ok(report)
}

/// Runs the parallel and the folded formulation of the saccadic neuron on random
/// instances (`T ≤ 4`, `N ≤ 8`). With `general`, `M_w` has non-zero entries below
/// the diagonal; otherwise it is diagonal with a positive diagonal.
pub fn verify_agreement(instances: usize, seed: u64, general: bool) -> Result<MatchReport> {
    if instances == 0 {
        return Err(Error::Domain("instances must be at least 1".into()));
    }
    let mut report = MatchReport {
        trials: 0,
        identical: 0,
        first_mismatch: None,
    };
    for i in 0..instances {
        let mut rng = RngState::stream_at(seed, i as u64);
        let (t, n) = (rng.random_range(1..=4), rng.random_range(1..=8));
        let m_w = Tensor::from_fn(vec![t, t], |j| {
            let (r, c) = (j / t, j % t);
            match (r == c, r > c && general) {
                (true, _) => rng.random_range(0.1..2.0),
                (false, true) => rng.random_range(-1.0..1.0),
                _ => 0.0,
            }
        });
        let v_th = Tensor::from_fn(vec![t], |_| rng.random_range(0.0..2.0));
        let params = SaccadicParams::new(m_w, v_th, 1.0)?;
        let mut folded = params.clone();
        fold_thresholds(&mut folded)?;
        let patch = Tensor::from_fn(vec![t, n], |_| rng.random_range(0.0..4.0));
        report.record(i, saccadic_train(&params, &patch)? == saccadic_infer(&folded, &patch)?);
    }
    Ok(report)
}

/// Spikes of the two formulations on the two-step counterexample
/// `M_w = [[1, 0], [0.5, 1]]`, `V_th = [1.5, 0.9]`, `patch = [2, 0]`.
pub fn counterexample() -> Result<(SpikeTensor, SpikeTensor)> {
    let params = SaccadicParams::new(
        Tensor::from_f64(vec![2, 2], &[1.0, 0.0, 0.5, 1.0])?,
        Tensor::from_f64(vec![2], &[1.5, 0.9])?,
        1.0,
    )?;
    let mut folded = params.clone();
    fold_thresholds(&mut folded)?;
    let patch = Tensor::from_f64(vec![2, 1], &[2.0, 0.0])?;
    Ok((saccadic_train(&params, &patch)?, saccadic_infer(&folded, &patch)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn v1_v2_identical_under_constant_alpha() {
        assert!(verify_v1_v2(300, 7, false).unwrap().all_identical());
        assert!(verify_v1_v2(300, 7, true).unwrap().all_identical());
    }

    #[test]
    fn equivalence_instances_hold_alpha_constant() {
        let mut rng = RngState::stream_at(3, 0);
        for _ in 0..50 {
            let (_, k, _, _) = equivalence_instance(&mut rng, false).unwrap();
            let nd = k.len() / k.shape()[0];
            let totals: Vec<usize> = k
                .data()
                .chunks(nd)
                .map(|c| c.iter().map(|&b| b as usize).sum())
                .collect();
            assert!(totals.windows(2).all(|w| w[0] == w[1]));
        }
    }

    #[test]
    fn diagonal_mixers_agree_general_ones_may_not() {
        assert!(verify_agreement(500, 1, false).unwrap().all_identical());
        let general = verify_agreement(500, 1, true).unwrap();
        assert!(general.identical < general.trials);
    }

    #[test]
    fn counterexample_disagrees() {
        let (train, infer) = counterexample().unwrap();
        assert_eq!(train.data(), &[1, 1]);
        assert_eq!(infer.data(), &[1, 0]);
    }

    #[test]
    fn zero_trials_rejected() {
        assert!(verify_v1_v2(0, 0, false).is_err());
        assert!(verify_agreement(0, 0, false).is_err());
    }
}

//! Central-difference gradient checks.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{NodeId, NormStats, Tape};
use crate::blocks::ConvGeometry;
use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    /// `max |g_fd − g_tape| / max(1, |g_fd|)` over every coordinate of every input.
    pub max_rel_error: f64,
    pub coordinates: usize,
}

/// Compares tape gradients of `build` at `point` with central differences of step `h`.
///
/// `build` receives a fresh tape and one parameter node per entry of `point`,
/// and must return a scalar loss node.
pub fn grad_check<B>(point: &[Tensor<f64>], h: f64, build: B) -> Result<GradCheckReport>
where
    B: Fn(&mut Tape<f64>, &[NodeId]) -> Result<NodeId>,
{
    if !(h > 0.0) {
        return Err(Error::Domain(format!("finite-difference step {h} must be positive")));
    }
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = values.iter().map(|v| tape.param(v.clone())).collect();
        let loss = build(&mut tape, &ids)?;
        Ok(tape.value(loss).data()[0])
    };

    let mut tape = Tape::new();
    let ids: Vec<NodeId> = point.iter().map(|v| tape.param(v.clone())).collect();
    let loss = build(&mut tape, &ids)?;
    let grads = tape.backward(loss)?;

    let mut worst = 0.0f64;
    let mut coordinates = 0;
    let mut probe = point.to_vec();
    for (p, id) in ids.iter().enumerate() {
        let analytic = grads.get_or_zeros(*id);
        for i in 0..point[p].len() {
            let x0 = point[p].data()[i];
            probe[p].data_mut()[i] = x0 + h;
            let up = eval(&probe)?;
            probe[p].data_mut()[i] = x0 - h;
            let down = eval(&probe)?;
            probe[p].data_mut()[i] = x0;
            let fd = (up - down) / (2.0 * h);
            let err = (fd - analytic.data()[i]).abs() / fd.abs().max(1.0);
            worst = worst.max(err);
            coordinates += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_error: worst,
        coordinates,
    })
}

/// Threshold-free subgraphs covered by [`grad_check_case`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradCheckCase {
    Conv,
    BatchNorm,
    Matmul,
    CroAtt,
    PatchSalience,
}

impl GradCheckCase {
    pub const ALL: [GradCheckCase; 5] = [
        GradCheckCase::Conv,
        GradCheckCase::BatchNorm,
        GradCheckCase::Matmul,
        GradCheckCase::CroAtt,
        GradCheckCase::PatchSalience,
    ];
}

fn uniform(shape: Vec<usize>, r: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| r.random_range(-1.0..1.0))
}

/// Weighted sum of `y` with fixed random weights, so no gradient vanishes by symmetry.
fn weighted_sum(t: &mut Tape<f64>, y: NodeId, r: &mut impl Rng) -> Result<NodeId> {
    let w = uniform(t.value(y).shape().to_vec(), r);
    let c = t.constant(w);
    let p = t.mul(y, c)?;
    t.sum_all(p)
}

/// Gradient check of one randomly sized instance of `case`, drawn from `seed`.
///
/// The attention chain is checked on real-valued relaxations of `Q` and `K`.
pub fn grad_check_case(case: GradCheckCase, seed: u64, h: f64) -> Result<GradCheckReport> {
    let mut r = RngState::stream_at(seed, 0);
    let mut dim = |lo: usize, hi: usize| r.random_range(lo..=hi);
    let (a, b, c, s) = (dim(1, 3), dim(1, 4), dim(2, 5), dim(3, 6));
    let stride = dim(1, 2);
    let dilation = dim(1, 2);
    let wseed = r.random::<u64>();
    let loss_rng = move || RngState::stream_at(wseed, 1);
    match case {
        GradCheckCase::Conv => {
            let geom = ConvGeometry::new(3, stride, dilation, dilation)?;
            let point = [uniform(vec![a, b, s, s], &mut r), uniform(vec![c, b, 3, 3], &mut r)];
            grad_check(&point, h, |t, ids| {
                let y = t.conv2d(ids[0], ids[1], geom)?;
                weighted_sum(t, y, &mut loss_rng())
            })
        }
        GradCheckCase::BatchNorm => {
            let point = [
                uniform(vec![a + 1, c, s, s], &mut r),
                uniform(vec![c], &mut r),
                uniform(vec![c], &mut r),
            ];
            grad_check(&point, h, |t, ids| {
                let (y, _) = t.batch_norm(ids[0], ids[1], ids[2], NormStats::Batch, 1e-5)?;
                weighted_sum(t, y, &mut loss_rng())
            })
        }
        GradCheckCase::Matmul => {
            let point = [uniform(vec![a, s], &mut r), uniform(vec![s, c], &mut r)];
            grad_check(&point, h, |t, ids| {
                let y = t.matmul(ids[0], ids[1])?;
                weighted_sum(t, y, &mut loss_rng())
            })
        }
        GradCheckCase::CroAtt | GradCheckCase::PatchSalience => {
            let point = [uniform(vec![a, s, c], &mut r), uniform(vec![a, s, c], &mut r)];
            grad_check(&point, h, |t, ids| {
                let qs = t.sum_last(ids[0])?;
                let ks = t.sum_last(ids[1])?;
                let mut y = t.outer(qs, ks)?;
                if case == GradCheckCase::PatchSalience {
                    y = t.sum_last(y)?;
                }
                weighted_sum(t, y, &mut loss_rng())
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random(shape: Vec<usize>, r: &mut impl Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| r.random_range(-1.0..1.0))
    }

    #[test]
    fn rejects_non_positive_step() {
        let p = [Tensor::zeros(vec![1])];
        let r = grad_check(&p, 0.0, |t, ids| t.sum_all(ids[0]));
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn affine_map_is_exact() {
        let mut r = RngState::stream_at(1, 0);
        let x = random(vec![3, 4], &mut r);
        let w = random(vec![4, 2], &mut r);
        let b = random(vec![2], &mut r);
        let rep = grad_check(&[x, w, b], 1e-5, |t, ids| {
            let y = t.matmul(ids[0], ids[1])?;
            let y = t.add_bias(y, ids[2])?;
            let y = t.mul_const(y, 3.0)?;
            t.sum_all(y)
        })
        .unwrap();
        // the loss is bilinear in (x, w); every partial is exact for central differences
        assert!(rep.max_rel_error < 1e-10, "{rep:?}");
    }

    #[test]
    fn conv_and_batchnorm() {
        let mut r = RngState::stream_at(2, 0);
        let x = random(vec![2, 2, 5, 5], &mut r);
        let w = random(vec![3, 2, 3, 3], &mut r);
        let gamma = random(vec![3], &mut r);
        let beta = random(vec![3], &mut r);
        let weights = random(vec![2, 3, 3, 3], &mut r);
        let geom = ConvGeometry::new(3, 2, 1, 1).unwrap();
        let rep = grad_check(&[x, w, gamma, beta], 1e-5, |t, ids| {
            let y = t.conv2d(ids[0], ids[1], geom)?;
            let (y, _) = t.batch_norm(y, ids[2], ids[3], NormStats::Batch, 1e-5)?;
            // weight the output so the loss is not invariant to normalisation
            let c = t.constant(weights.clone());
            let y = t.mul(y, c)?;
            t.sum_all(y)
        })
        .unwrap();
        assert!(rep.max_rel_error < 1e-4, "{rep:?}");
    }

    #[test]
    fn cro_att_patch_chain_on_relaxed_inputs() {
        let mut r = RngState::stream_at(3, 0);
        let q = random(vec![2, 4, 3], &mut r);
        let k = random(vec![2, 4, 3], &mut r);
        let rep = grad_check(&[q, k], 1e-5, |t, ids| {
            let qs = t.sum_last(ids[0])?;
            let ks = t.sum_last(ids[1])?;
            let cro = t.outer(qs, ks)?;
            let patch = t.sum_last(cro)?;
            let sq = t.outer(patch, patch)?;
            t.sum_all(sq)
        })
        .unwrap();
        assert!(rep.max_rel_error < 1e-4, "{rep:?}");
    }

    #[test]
    fn every_case_passes() {
        for case in GradCheckCase::ALL {
            for seed in 0..3 {
                let rep = grad_check_case(case, seed, 1e-5).unwrap();
                assert!(rep.max_rel_error < 1e-4 && rep.coordinates > 0, "{case:?} {rep:?}");
            }
        }
    }
}

//! Saccadic spike self-attention and its dot-product baseline.
//!
//! Relevance between query and key tokens is measured from their spike
//! distributions: each token is reduced to its spike count over the feature
//! axis (`Q′`, `K′`), relevance is the outer product `Q′K′ᵀ`, and the salience
//! of a token is its row sum. A saccadic neuron turns salience into a binary
//! decision per token and timestep, which masks `V`.
//!
//! * [`sssa_v1`] materialises the `N×N` relevance matrix.
//! * [`sssa_v2`] reassociates the product so only `M_w Q′` and `K′ᵀL` are
//!   formed. In [`AlphaMode::Learned`] the key term becomes a learned scale that
//!   is folded into the thresholds together with `M_w⁻¹`, leaving a path from
//!   `Q` to `S` that uses only accumulations and comparisons.
//! * [`ssa_baseline`] is the `(QKᵀ)V` attention without softmax.
//!
//! All tensors are `[T, N, D]` for tokens and `[T, N]` for per-token scalars.

use serde::{Deserialize, Serialize};

use crate::counter::OpCounter;
use crate::error::{shape_err, Error, Result};
use crate::neurons::{fire_rows, forward_substitution, mix_time, SaccadicParams};
use crate::scalar::Scalar;
use crate::tensor::{SpikeTensor, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttentionVariant {
    SsaBaseline,
    SssaV1,
    SssaV2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaMode {
    /// `α[t] = K′[t]ᵀL`, recomputed from the keys.
    Computed,
    /// A learned positive scalar folded into the thresholds.
    Learned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub t_steps: usize,
    pub n_tokens: usize,
    pub d_model: usize,
    pub variant: AttentionVariant,
    pub alpha_mode: AlphaMode,
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_steps == 0 || self.n_tokens == 0 || self.d_model == 0 {
            return Err(Error::Config(format!(
                "attention extents must be positive: T={} N={} D={}",
                self.t_steps, self.n_tokens, self.d_model
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    /// Saccadic decision `S`, `[T, N]`.
    pub spikes: SpikeTensor,
    /// `V` with every unselected token zeroed, `[T, N, D]`.
    pub masked_v: SpikeTensor,
    pub counters: OpCounter,
}

fn dims3(x: &SpikeTensor) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [t, n, d] => Ok((t, n, d)),
        _ => shape_err(format!("expected a [T, N, D] spike tensor, got {:?}", x.shape())),
    }
}

fn check_qkv(q: &SpikeTensor, k: &SpikeTensor, v: &SpikeTensor) -> Result<(usize, usize, usize)> {
    let dims = dims3(q)?;
    if k.shape() != q.shape() || v.shape() != q.shape() {
        return shape_err(format!(
            "Q, K, V shapes differ: {:?} {:?} {:?}",
            q.shape(),
            k.shape(),
            v.shape()
        ));
    }
    Ok(dims)
}

/// Per-token spike counts over the feature axis: `[T, N, D] → [T, N]`.
pub fn spike_sum<F: Scalar>(x: &SpikeTensor, counter: &mut OpCounter) -> Result<Tensor<F>> {
    dims3(x)?;
    counter.add_ac(x.len());
    x.sum_axis(2)
}

/// Cross-entropy between the firing rates of two spike vectors.
///
/// Rates are clamped to `[1e-12, 1 − 1e-12]` so silent or saturated vectors stay finite.
pub fn cross_entropy_relevance<F: Scalar>(q: &SpikeTensor, k: &SpikeTensor) -> Result<F> {
    if q.is_empty() || k.is_empty() {
        return Err(Error::Domain("relevance needs non-empty vectors".into()));
    }
    const EPS: f64 = 1e-12;
    let pq = q.firing_rate().clamp(EPS, 1.0 - EPS);
    let pk = k.firing_rate().clamp(EPS, 1.0 - EPS);
    Ok(F::of(-(pq * pk.ln() + (1.0 - pq) * (1.0 - pk).ln())))
}

/// `CroAtt[t] = Q′[t] K′[t]ᵀ`, `[T, N] × [T, N] → [T, N, N]`.
pub fn cro_att<F: Scalar>(
    q_sum: &Tensor<F>,
    k_sum: &Tensor<F>,
    counter: &mut OpCounter,
) -> Result<Tensor<F>> {
    if q_sum.rank() != 2 || q_sum.shape() != k_sum.shape() {
        return shape_err(format!(
            "cro_att expects matching [T, N] inputs, got {:?} and {:?}",
            q_sum.shape(),
            k_sum.shape()
        ));
    }
    let (t_steps, n) = (q_sum.shape()[0], q_sum.shape()[1]);
    let (q, k) = (q_sum.data(), k_sum.data());
    let out = Tensor::from_fn(vec![t_steps, n, n], |idx| {
        let t = idx / (n * n);
        let i = (idx / n) % n;
        let j = idx % n;
        q[t * n + i] * k[t * n + j]
    });
    counter.add_mac(t_steps * n * n);
    Ok(out)
}

/// Row sums of the relevance matrix: `Patch[t, i] = Σ_j CroAtt[t, i, j]`.
pub fn patch_salience<F: Scalar>(cro: &Tensor<F>, counter: &mut OpCounter) -> Result<Tensor<F>> {
    if cro.rank() != 3 || cro.shape()[1] != cro.shape()[2] {
        return shape_err(format!("patch_salience expects [T, N, N], got {:?}", cro.shape()));
    }
    counter.add_ac(cro.len());
    cro.sum_axis(2)
}

/// Broadcast select: keeps `V[t, n, :]` where `S[t, n] = 1`.
pub fn mask_tokens(spikes: &SpikeTensor, v: &SpikeTensor) -> Result<SpikeTensor> {
    let (t, n, d) = dims3(v)?;
    if spikes.shape() != [t, n] {
        return shape_err(format!(
            "mask {:?} does not match values {:?}",
            spikes.shape(),
            v.shape()
        ));
    }
    let s = spikes.data();
    let vd = v.data();
    Ok(SpikeTensor::from_fn(v.shape().to_vec(), |i| {
        s[i / d] == 1 && vd[i] == 1
    }))
}

fn check_params<F: Scalar>(params: &SaccadicParams<F>, t_steps: usize) -> Result<()> {
    params.validate()?;
    if params.t_steps() != t_steps {
        return shape_err(format!(
            "saccadic parameters cover T = {}, inputs have T = {t_steps}",
            params.t_steps()
        ));
    }
    Ok(())
}

/// `S = Θ(M_w (Q′K′ᵀ) L − V_th)`, `output = S ⊙ V`.
pub fn sssa_v1<F: Scalar>(
    q: &SpikeTensor,
    k: &SpikeTensor,
    v: &SpikeTensor,
    params: &SaccadicParams<F>,
    counter: &mut OpCounter,
) -> Result<AttentionOutput> {
    let (t, _, _) = check_qkv(q, k, v)?;
    check_params(params, t)?;
    let mut local = OpCounter::new();
    let q_sum = spike_sum::<F>(q, &mut local)?;
    let k_sum = spike_sum::<F>(k, &mut local)?;
    let cro = cro_att(&q_sum, &k_sum, &mut local)?;
    let patch = patch_salience(&cro, &mut local)?;
    let h = mix_time(params.m_w(), &patch, &mut local)?;
    let spikes = fire_rows(&h, params.v_th().data(), &mut local);
    let masked_v = mask_tokens(&spikes, v)?;
    counter.merge(&local);
    Ok(AttentionOutput {
        spikes,
        masked_v,
        counters: local,
    })
}

/// Reassociated attention, `S = Θ((M_w Q′)(K′ᵀL) − V_th)`.
///
/// In [`AlphaMode::Computed`], `α[t] = Σ_n K′[t, n]` scales `M_w Q′` row by row.
/// In [`AlphaMode::Learned`], the decision is made per timestep as
/// `Θ(Q′[t] − (M_w⁻¹V_th)[t] / α)`; the folded thresholds depend only on
/// parameters and are taken from the cache when present.
pub fn sssa_v2<F: Scalar>(
    q: &SpikeTensor,
    k: &SpikeTensor,
    v: &SpikeTensor,
    params: &SaccadicParams<F>,
    mode: AlphaMode,
    counter: &mut OpCounter,
) -> Result<AttentionOutput> {
    let (t_steps, n, _) = check_qkv(q, k, v)?;
    check_params(params, t_steps)?;
    let mut local = OpCounter::new();
    let q_sum = spike_sum::<F>(q, &mut local)?;
    let spikes = match mode {
        AlphaMode::Computed => {
            let k_sum = spike_sum::<F>(k, &mut local)?;
            let alpha = k_sum.sum_axis(1)?;
            local.add_ac(k_sum.len());
            let mixed = mix_time(params.m_w(), &q_sum, &mut local)?;
            let a = alpha.data();
            let scaled = Tensor::from_fn(mixed.shape().to_vec(), |i| mixed.data()[i] * a[i / n]);
            local.add_mac(scaled.len());
            fire_rows(&scaled, params.v_th().data(), &mut local)
        }
        AlphaMode::Learned => {
            let alpha = params.alpha();
            let folded = match params.folded() {
                Some(f) => f.clone(),
                None => forward_substitution(params.m_w(), params.v_th())?,
            };
            let thresholds: Vec<F> = folded.data().iter().map(|&f| f / alpha).collect();
            fire_rows(&q_sum, &thresholds, &mut local)
        }
    };
    let masked_v = mask_tokens(&spikes, v)?;
    counter.merge(&local);
    Ok(AttentionOutput {
        spikes,
        masked_v,
        counters: local,
    })
}

/// Dot-product spiking attention `(QKᵀ)V` per timestep, without softmax.
pub fn ssa_baseline<F: Scalar>(
    q: &SpikeTensor,
    k: &SpikeTensor,
    v: &SpikeTensor,
    counter: &mut OpCounter,
) -> Result<Tensor<F>> {
    let (t_steps, n, d) = check_qkv(q, k, v)?;
    let (qd, kd, vd) = (q.data(), k.data(), v.data());
    let mut out = vec![F::zero(); t_steps * n * d];
    let mut scores = vec![F::zero(); n * n];
    for t in 0..t_steps {
        let base = t * n * d;
        for i in 0..n {
            for j in 0..n {
                let mut acc = F::zero();
                for c in 0..d {
                    if qd[base + i * d + c] == 1 && kd[base + j * d + c] == 1 {
                        acc = acc + F::one();
                    }
                }
                scores[i * n + j] = acc;
            }
        }
        for i in 0..n {
            for j in 0..n {
                let w = scores[i * n + j];
                for c in 0..d {
                    if vd[base + j * d + c] == 1 {
                        out[base + i * d + c] = out[base + i * d + c] + w;
                    }
                }
            }
        }
    }
    counter.add_mac(2 * t_steps * n * n * d);
    Tensor::new(vec![t_steps, n, d], out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrderingVerdict {
    Agree,
    Disagree,
    /// The query is silent, so the simplified score ties every key.
    DegenerateTie,
}

fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// Checks that ranking keys by `p_q log p_k` matches ranking by `p_q p_k`.
pub fn ordering_oracle(q: &SpikeTensor, ks: &[SpikeTensor]) -> OrderingVerdict {
    let pq = q.firing_rate();
    if pq == 0.0 {
        return OrderingVerdict::DegenerateTie;
    }
    const EPS: f64 = 1e-12;
    let rates: Vec<f64> = ks.iter().map(|k| k.firing_rate().clamp(EPS, 1.0 - EPS)).collect();
    let log_scores: Vec<f64> = rates.iter().map(|&pk| pq * pk.ln()).collect();
    let linear_scores: Vec<f64> = rates.iter().map(|&pk| pq * pk).collect();
    if ranking(&log_scores) == ranking(&linear_scores) {
        OrderingVerdict::Agree
    } else {
        OrderingVerdict::Disagree
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neurons::fold_thresholds;
    use crate::rng::{bernoulli_spikes, RngState};
    use proptest::prelude::*;

    fn spikes(shape: &[usize], bits: &[u8]) -> SpikeTensor {
        SpikeTensor::new(shape.to_vec(), bits.to_vec()).unwrap()
    }

    fn real(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), v).unwrap()
    }

    fn example_qkv() -> (SpikeTensor, SpikeTensor, SpikeTensor) {
        (
            spikes(&[1, 2, 2], &[1, 1, 0, 1]),
            spikes(&[1, 2, 2], &[1, 0, 1, 1]),
            spikes(&[1, 2, 2], &[1, 0, 0, 1]),
        )
    }

    fn single_step(v_th: f64) -> SaccadicParams<f64> {
        SaccadicParams::identity(real(&[1], &[v_th])).unwrap()
    }

    #[test]
    fn spike_sum_examples() {
        let mut c = OpCounter::new();
        let s: Tensor<f64> = spike_sum(&spikes(&[1, 2, 3], &[1, 0, 1, 0, 0, 0]), &mut c).unwrap();
        assert_eq!(s.data(), &[2., 0.]);
        assert_eq!(c.ac, 6);
        let s: Tensor<f64> = spike_sum(&SpikeTensor::ones(vec![1, 2, 4]), &mut c).unwrap();
        assert_eq!(s.data(), &[4., 4.]);
        let s: Tensor<f64> = spike_sum(&SpikeTensor::zeros(vec![2, 3, 4]), &mut c).unwrap();
        assert!(s.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn cross_entropy_examples() {
        let q = spikes(&[4], &[1, 0, 1, 0]);
        let k = spikes(&[4], &[1, 0, 0, 0]);
        let h: f64 = cross_entropy_relevance(&q, &k).unwrap();
        assert!((h - 0.836988).abs() < 1e-6, "{h}");
        let h: f64 = cross_entropy_relevance(&q, &q).unwrap();
        assert!((h - std::f64::consts::LN_2).abs() < 1e-12);
        let h: f64 = cross_entropy_relevance(&q, &SpikeTensor::zeros(vec![4])).unwrap();
        assert!(h.is_finite() && h > 10.0);
        assert!((h - 0.5 * 1e-12f64.ln().abs()).abs() < 1e-6);
    }

    #[test]
    fn cro_att_examples() {
        let mut c = OpCounter::new();
        let a = cro_att(&real(&[1, 2], &[2., 0.]), &real(&[1, 2], &[2., 1.]), &mut c).unwrap();
        assert_eq!(a.data(), &[4., 2., 0., 0.]);
        let a = cro_att(&real(&[1, 2], &[0., 0.]), &real(&[1, 2], &[2., 1.]), &mut c).unwrap();
        assert!(a.data().iter().all(|&x| x == 0.0));
        let a = cro_att(&real(&[1, 2], &[2., 1.]), &real(&[1, 2], &[1., 2.]), &mut c).unwrap();
        assert_eq!(a.data(), &[2., 4., 1., 2.]);
        assert!(cro_att(&real(&[1, 2], &[2., 1.]), &real(&[1, 3], &[1., 2., 3.]), &mut c).is_err());
    }

    #[test]
    fn salience_examples() {
        let mut c = OpCounter::new();
        let p = patch_salience(&real(&[1, 2, 2], &[4., 2., 0., 0.]), &mut c).unwrap();
        assert_eq!(p.data(), &[6., 0.]);
        let p = patch_salience(&real(&[1, 2, 2], &[2., 4., 1., 2.]), &mut c).unwrap();
        assert_eq!(p.data(), &[6., 3.]);
        let p = patch_salience(&Tensor::<f64>::zeros(vec![2, 3, 3]), &mut c).unwrap();
        assert!(p.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn v1_full_trace() {
        let (q, k, v) = example_qkv();
        let mut c = OpCounter::new();
        let out = sssa_v1(&q, &k, &v, &single_step(4.0), &mut c).unwrap();
        assert_eq!(out.spikes.data(), &[1, 0]);
        assert_eq!(out.masked_v.data(), &[1, 0, 0, 0]);
        assert_eq!(c, out.counters);
    }

    #[test]
    fn v1_degenerate_cases() {
        let (_, k, v) = example_qkv();
        let zero_q = SpikeTensor::zeros(vec![1, 2, 2]);
        let out = sssa_v1(&zero_q, &k, &v, &single_step(4.0), &mut OpCounter::new()).unwrap();
        assert_eq!(out.spikes.count_ones(), 0);
        assert_eq!(out.masked_v.count_ones(), 0);
        let (q, k, v) = example_qkv();
        let out = sssa_v1(&q, &k, &v, &single_step(-1.0), &mut OpCounter::new()).unwrap();
        assert_eq!(out.masked_v, v);
    }

    #[test]
    fn v2_computed_matches_v1_at_single_step() {
        let (q, k, v) = example_qkv();
        let p = single_step(4.0);
        let a = sssa_v1(&q, &k, &v, &p, &mut OpCounter::new()).unwrap();
        let b = sssa_v2(&q, &k, &v, &p, AlphaMode::Computed, &mut OpCounter::new()).unwrap();
        assert_eq!(a.spikes, b.spikes);
        assert_eq!(a.masked_v, b.masked_v);
    }

    #[test]
    fn v2_learned_identity_collapses() {
        let mut rng = RngState::new(11);
        let q = bernoulli_spikes(vec![3, 5, 6], 0.4, &mut rng).unwrap();
        let k = bernoulli_spikes(vec![3, 5, 6], 0.4, &mut rng).unwrap();
        let v = bernoulli_spikes(vec![3, 5, 6], 0.4, &mut rng).unwrap();
        let v_th = real(&[3], &[1.0, 2.5, 3.0]);
        let p = SaccadicParams::identity(v_th.clone()).unwrap();
        let out = sssa_v2(&q, &k, &v, &p, AlphaMode::Learned, &mut OpCounter::new()).unwrap();
        let q_sum: Tensor<f64> = q.sum_axis(2).unwrap();
        let expected = SpikeTensor::from_fn(vec![3, 5], |i| q_sum.data()[i] >= v_th.data()[i / 5]);
        assert_eq!(out.spikes, expected);
        assert_eq!(out.counters.mac, 0);
    }

    #[test]
    fn v2_learned_uses_cached_fold() {
        let mut rng = RngState::new(12);
        let q = bernoulli_spikes(vec![2, 4, 8], 0.5, &mut rng).unwrap();
        let m = real(&[2, 2], &[1.0, 0.0, 0.5, 2.0]);
        let mut p = SaccadicParams::new(m, real(&[2], &[2.0, 6.0]), 0.5).unwrap();
        let fresh = sssa_v2(&q, &q, &q, &p, AlphaMode::Learned, &mut OpCounter::new()).unwrap();
        fold_thresholds(&mut p).unwrap();
        let cached = sssa_v2(&q, &q, &q, &p, AlphaMode::Learned, &mut OpCounter::new()).unwrap();
        assert_eq!(fresh, cached);
    }

    #[test]
    fn ssa_examples() {
        let (q, k, v) = example_qkv();
        let mut c = OpCounter::new();
        let out: Tensor<f64> = ssa_baseline(&q, &k, &v, &mut c).unwrap();
        assert_eq!(out.data(), &[1., 2., 0., 1.]);
        assert_eq!(c.mac, 2 * 2 * 2 * 2);
        let z = SpikeTensor::zeros(vec![1, 2, 2]);
        let out: Tensor<f64> = ssa_baseline(&z, &k, &v, &mut c).unwrap();
        assert!(out.data().iter().all(|&x| x == 0.0));
        let eye = spikes(&[1, 2, 2], &[1, 0, 0, 1]);
        let vv = spikes(&[1, 2, 2], &[0, 1, 1, 1]);
        let out: Tensor<f64> = ssa_baseline(&eye, &eye, &vv, &mut c).unwrap();
        assert_eq!(out.data(), &[0., 1., 1., 1.]);
    }

    #[test]
    fn ordering_examples() {
        let q = spikes(&[4], &[1, 1, 0, 0]);
        let ks = vec![
            spikes(&[4], &[1, 0, 0, 0]),
            spikes(&[4], &[1, 1, 1, 0]),
            spikes(&[4], &[1, 1, 0, 0]),
        ];
        assert_eq!(ordering_oracle(&q, &ks), OrderingVerdict::Agree);
        assert_eq!(ordering_oracle(&q, &ks[..1]), OrderingVerdict::Agree);
        assert_eq!(
            ordering_oracle(&SpikeTensor::zeros(vec![4]), &ks),
            OrderingVerdict::DegenerateTie
        );
    }

    /// Enumerates every set of ≤ 5 distinct key spike counts for D ≤ 8.
    #[test]
    fn ordering_brute_force() {
        for d in 2..=8usize {
            let counts: Vec<usize> = (1..d).collect();
            for qc in 1..=d {
                let q = SpikeTensor::from_fn(vec![d], |i| i < qc);
                for mask in 1u32..(1 << counts.len()) {
                    if mask.count_ones() > 5 {
                        continue;
                    }
                    let ks: Vec<SpikeTensor> = counts
                        .iter()
                        .enumerate()
                        .filter(|(b, _)| mask & (1 << b) != 0)
                        .map(|(_, &c)| SpikeTensor::from_fn(vec![d], |i| i >= d - c))
                        .collect();
                    assert_eq!(ordering_oracle(&q, &ks), OrderingVerdict::Agree);
                }
            }
        }
    }

    #[test]
    fn shape_errors() {
        let (q, k, _) = example_qkv();
        let bad = SpikeTensor::zeros(vec![1, 3, 2]);
        assert!(sssa_v1(&q, &k, &bad, &single_step(1.0), &mut OpCounter::new()).is_err());
        let p2 = SaccadicParams::identity(real(&[2], &[1., 1.])).unwrap();
        assert!(sssa_v1(&q, &k, &q, &p2, &mut OpCounter::new()).is_err());
        assert!(spike_sum::<f64>(&SpikeTensor::zeros(vec![2, 2]), &mut OpCounter::new()).is_err());
    }

    fn qkv_strategy() -> impl Strategy<Value = (SpikeTensor, SpikeTensor, SpikeTensor, u64)> {
        (1usize..4, 1usize..8, 1usize..8, any::<u64>()).prop_map(|(t, n, d, seed)| {
            let mut rng = RngState::new(seed);
            let mut draw = || bernoulli_spikes(vec![t, n, d], 0.4, &mut rng).unwrap();
            (draw(), draw(), draw(), seed)
        })
    }

    fn permute_tokens(x: &SpikeTensor, perm: &[usize]) -> SpikeTensor {
        let (t, n, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        SpikeTensor::from_fn(vec![t, n, d], |i| {
            let (tt, nn, dd) = (i / (n * d), (i / d) % n, i % d);
            x.data()[(tt * n + perm[nn]) * d + dd] == 1
        })
    }

    proptest! {
        #[test]
        fn mask_semantics((q, k, v, seed) in qkv_strategy()) {
            let t = q.shape()[0];
            let mut r = RngState::stream_at(seed, 9);
            use rand::Rng;
            let v_th = Tensor::from_fn(vec![t], |_| r.random_range(0.0..20.0));
            let p = SaccadicParams::identity(v_th).unwrap();
            for out in [
                sssa_v1(&q, &k, &v, &p, &mut OpCounter::new()).unwrap(),
                sssa_v2(&q, &k, &v, &p, AlphaMode::Computed, &mut OpCounter::new()).unwrap(),
                sssa_v2(&q, &k, &v, &p, AlphaMode::Learned, &mut OpCounter::new()).unwrap(),
            ] {
                let d = v.shape()[2];
                for (i, (&m, &vv)) in out.masked_v.data().iter().zip(v.data()).enumerate() {
                    prop_assert!(m <= vv);
                    let s = out.spikes.data()[i / d];
                    prop_assert_eq!(m, if s == 1 { vv } else { 0 });
                }
            }
        }

        #[test]
        fn permutation_equivariance((q, k, v, seed) in qkv_strategy()) {
            let (t, n) = (q.shape()[0], q.shape()[1]);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.rotate_left((seed % n as u64) as usize);
            perm.swap(0, n - 1);
            let v_th = Tensor::from_fn(vec![t], |i| 3.0 + i as f64);
            let p = SaccadicParams::identity(v_th).unwrap();
            let a = sssa_v1(&q, &k, &v, &p, &mut OpCounter::new()).unwrap();
            let b = sssa_v1(
                &permute_tokens(&q, &perm),
                &permute_tokens(&k, &perm),
                &permute_tokens(&v, &perm),
                &p,
                &mut OpCounter::new(),
            ).unwrap();
            prop_assert_eq!(permute_tokens(&a.masked_v, &perm), b.masked_v);
            let s3 = a.spikes.reshape(vec![t, n, 1]).unwrap();
            prop_assert_eq!(permute_tokens(&s3, &perm).reshape(vec![t, n]).unwrap(), b.spikes);
        }

        #[test]
        fn relevance_depends_only_on_counts((q, k, _v, seed) in qkv_strategy()) {
            // Move every token's spikes to its leading positions; counts are unchanged.
            let (t, n, d) = (q.shape()[0], q.shape()[1], q.shape()[2]);
            let compact = |x: &SpikeTensor| {
                let c: Tensor<f64> = x.sum_axis(2).unwrap();
                SpikeTensor::from_fn(vec![t, n, d], |i| ((i % d) as f64) < c.data()[i / d])
            };
            let _ = seed;
            let mut c = OpCounter::new();
            let base = cro_att::<f64>(&spike_sum(&q, &mut c).unwrap(), &spike_sum(&k, &mut c).unwrap(), &mut c).unwrap();
            let moved = cro_att::<f64>(&spike_sum(&compact(&q), &mut c).unwrap(), &spike_sum(&compact(&k), &mut c).unwrap(), &mut c).unwrap();
            prop_assert_eq!(base, moved);
        }

        #[test]
        fn relevance_quantities_are_integers((q, k, _v, _seed) in qkv_strategy()) {
            let mut c = OpCounter::new();
            let qs: Tensor<f64> = spike_sum(&q, &mut c).unwrap();
            let ks: Tensor<f64> = spike_sum(&k, &mut c).unwrap();
            let cro = cro_att(&qs, &ks, &mut c).unwrap();
            let patch = patch_salience(&cro, &mut c).unwrap();
            for x in qs.data().iter().chain(ks.data()).chain(cro.data()).chain(patch.data()) {
                prop_assert_eq!(x.fract(), 0.0);
            }
        }
    }
}

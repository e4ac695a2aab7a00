//! Spiking neurons: the leaky integrate-and-fire unit and the saccadic neuron.
//!
//! The saccadic neuron has two formulations. Training mixes the whole
//! `[T, N]` salience sequence through a lower-triangular matrix `M_w` and
//! compares against per-timestep thresholds. Inference moves `M_w⁻¹` into the
//! thresholds instead, so each timestep fires from its own input alone. The two
//! coincide exactly when `M_w` is diagonal with a positive diagonal; for a
//! general lower-triangular mixer they do not, and [`train_infer_agreement`]
//! measures how often they match.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::counter::OpCounter;
use crate::error::{shape_err, Error, Result};
use crate::rng::RngState;
use crate::scalar::Scalar;
use crate::tensor::{SpikeTensor, Tensor};

/// Step function with the boundary firing: `1` where `u ≥ v_th`.
pub fn heaviside<F: Scalar>(u: &Tensor<F>, v_th: F) -> SpikeTensor {
    let d = u.data();
    SpikeTensor::from_fn(u.shape().to_vec(), |i| d[i] - v_th >= F::zero())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifParams<F> {
    pub tau: F,
    pub v_th: F,
    pub v_reset: F,
}

impl<F: Scalar> Default for LifParams<F> {
    fn default() -> Self {
        Self {
            tau: F::of(0.5),
            v_th: F::one(),
            v_reset: F::zero(),
        }
    }
}

impl<F: Scalar> LifParams<F> {
    pub fn new(tau: F, v_th: F, v_reset: F) -> Result<Self> {
        let p = Self { tau, v_th, v_reset };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > F::zero() && self.tau <= F::one()) {
            return Err(Error::Parameter(format!("tau {} outside (0, 1]", self.tau)));
        }
        if !(self.v_th > self.v_reset) {
            return Err(Error::Parameter(format!(
                "v_th {} must exceed v_reset {}",
                self.v_th, self.v_reset
            )));
        }
        Ok(())
    }
}

/// Pre-synaptic membrane potential `H[t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LifState<F> {
    pub h: Tensor<F>,
}

impl<F: Scalar> LifState<F> {
    pub fn resting(shape: Vec<usize>) -> Self {
        Self {
            h: Tensor::zeros(shape),
        }
    }
}

/// One LIF update: charge, fire, then hard reset or leak.
pub fn lif_step<F: Scalar>(
    params: &LifParams<F>,
    state: &LifState<F>,
    x: &Tensor<F>,
) -> Result<(SpikeTensor, LifState<F>)> {
    let u = state.h.add(x)?;
    let s = heaviside(&u, params.v_th);
    let h = Tensor::from_fn(u.shape().to_vec(), |i| {
        if s.data()[i] == 1 {
            params.v_reset
        } else {
            params.tau * u.data()[i]
        }
    });
    Ok((s, LifState { h }))
}

/// Runs a LIF layer over the leading time axis of `x` (`[T, ...]`) from rest.
pub fn lif_run<F: Scalar>(params: &LifParams<F>, x: &Tensor<F>) -> Result<SpikeTensor> {
    if x.rank() == 0 {
        return shape_err("lif_run needs a leading time axis");
    }
    let t_steps = x.shape()[0];
    let step_shape = x.shape()[1..].to_vec();
    let width = x.len() / t_steps.max(1);
    let mut state = LifState::resting(step_shape.clone());
    let mut out = Vec::with_capacity(x.len());
    for t in 0..t_steps {
        let xt = Tensor::new(step_shape.clone(), x.data()[t * width..(t + 1) * width].to_vec())?;
        let (s, next) = lif_step(params, &state, &xt)?;
        out.extend_from_slice(s.data());
        state = next;
    }
    SpikeTensor::new(x.shape().to_vec(), out)
}

/// Solves `L x = b` for lower-triangular `L` (`[T, T]`) by forward substitution.
pub fn forward_substitution<F: Scalar>(lower: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    let t = check_square(lower)?;
    if b.shape() != [t] {
        return shape_err(format!("rhs shape {:?} does not match mixer {t}x{t}", b.shape()));
    }
    let l = lower.data();
    let mut x = vec![F::zero(); t];
    for i in 0..t {
        let diag = l[i * t + i];
        if diag == F::zero() {
            return Err(Error::SingularMixer { index: i });
        }
        let mut acc = b.data()[i];
        for j in 0..i {
            acc = acc - l[i * t + j] * x[j];
        }
        x[i] = acc / diag;
    }
    Tensor::new(vec![t], x)
}

fn check_square<F: Scalar>(m: &Tensor<F>) -> Result<usize> {
    if m.rank() != 2 || m.shape()[0] != m.shape()[1] {
        return shape_err(format!("mixer must be square, got {:?}", m.shape()));
    }
    Ok(m.shape()[0])
}

/// Saccadic neuron parameters: mixer `M_w`, thresholds `V_th`, and the V2 scale `α`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaccadicParams<F> {
    m_w: Tensor<F>,
    v_th: Tensor<F>,
    alpha: F,
    folded: Option<Tensor<F>>,
}

impl<F: Scalar> SaccadicParams<F> {
    pub fn new(m_w: Tensor<F>, v_th: Tensor<F>, alpha: F) -> Result<Self> {
        let p = Self {
            m_w,
            v_th,
            alpha,
            folded: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn identity(v_th: Tensor<F>) -> Result<Self> {
        let t = v_th.len();
        Self::new(Tensor::eye(t), v_th, F::one())
    }

    pub fn validate(&self) -> Result<()> {
        let t = check_square(&self.m_w)?;
        if self.v_th.shape() != [t] {
            return shape_err(format!(
                "thresholds {:?} do not match mixer {t}x{t}",
                self.v_th.shape()
            ));
        }
        let m = self.m_w.data();
        for i in 0..t {
            for j in i + 1..t {
                if m[i * t + j] != F::zero() {
                    return Err(Error::Parameter(format!(
                        "mixer is not lower triangular: m_w[{i}][{j}] = {}",
                        m[i * t + j]
                    )));
                }
            }
            if m[i * t + i] == F::zero() {
                return Err(Error::SingularMixer { index: i });
            }
        }
        if !(self.alpha > F::zero()) {
            return Err(Error::Parameter(format!("alpha {} must be positive", self.alpha)));
        }
        if !self.m_w.is_finite() || !self.v_th.is_finite() {
            return Err(Error::Parameter("non-finite saccadic parameter".into()));
        }
        Ok(())
    }

    pub fn t_steps(&self) -> usize {
        self.v_th.len()
    }

    pub fn m_w(&self) -> &Tensor<F> {
        &self.m_w
    }

    pub fn v_th(&self) -> &Tensor<F> {
        &self.v_th
    }

    pub fn alpha(&self) -> F {
        self.alpha
    }

    pub fn folded(&self) -> Option<&Tensor<F>> {
        self.folded.as_ref()
    }

    pub fn with_alpha(mut self, alpha: F) -> Result<Self> {
        self.alpha = alpha;
        self.validate()?;
        Ok(self)
    }

    /// `M_w⁻¹ V_th`, without touching the cache.
    pub fn folded_thresholds(&self) -> Result<Tensor<F>> {
        match &self.folded {
            Some(f) => Ok(f.clone()),
            None => forward_substitution(&self.m_w, &self.v_th),
        }
    }

    pub fn is_diagonal(&self) -> bool {
        let t = self.t_steps();
        let m = self.m_w.data();
        (0..t).all(|i| (0..i).all(|j| m[i * t + j] == F::zero()))
    }
}

/// Computes and caches `M_w⁻¹ V_th`.
pub fn fold_thresholds<F: Scalar>(params: &mut SaccadicParams<F>) -> Result<Tensor<F>> {
    let folded = forward_substitution(&params.m_w, &params.v_th)?;
    params.folded = Some(folded.clone());
    Ok(folded)
}

/// `M_w × patch` over the time axis, touching only the lower triangle.
pub(crate) fn mix_time<F: Scalar>(
    m_w: &Tensor<F>,
    patch: &Tensor<F>,
    counter: &mut OpCounter,
) -> Result<Tensor<F>> {
    let t = check_square(m_w)?;
    if patch.rank() != 2 || patch.shape()[0] != t {
        return shape_err(format!(
            "patch {:?} does not match mixer {t}x{t}",
            patch.shape()
        ));
    }
    let n = patch.shape()[1];
    let m = m_w.data();
    let p = patch.data();
    let mut h = vec![F::zero(); t * n];
    for i in 0..t {
        for j in 0..=i {
            let w = m[i * t + j];
            for c in 0..n {
                h[i * n + c] = h[i * n + c] + w * p[j * n + c];
            }
        }
    }
    counter.add_mac(t * (t + 1) / 2 * n);
    Tensor::new(vec![t, n], h)
}

/// Fires `S[t, n] = Θ(H[t, n] − θ[t])`.
pub(crate) fn fire_rows<F: Scalar>(
    h: &Tensor<F>,
    thresholds: &[F],
    counter: &mut OpCounter,
) -> SpikeTensor {
    let n = h.shape()[1];
    let d = h.data();
    counter.add_cmp(d.len());
    SpikeTensor::from_fn(h.shape().to_vec(), |i| d[i] - thresholds[i / n] >= F::zero())
}

/// Parallel (training) formulation: `S = Θ(M_w · patch − V_th)`.
pub fn saccadic_train<F: Scalar>(params: &SaccadicParams<F>, patch: &Tensor<F>) -> Result<SpikeTensor> {
    saccadic_train_counted(params, patch, &mut OpCounter::new())
}

pub fn saccadic_train_counted<F: Scalar>(
    params: &SaccadicParams<F>,
    patch: &Tensor<F>,
    counter: &mut OpCounter,
) -> Result<SpikeTensor> {
    params.validate()?;
    let h = mix_time(&params.m_w, patch, counter)?;
    Ok(fire_rows(&h, params.v_th.data(), counter))
}

/// Asynchronous (inference) formulation for one timestep: `S[t] = Θ(patch_t − (M_w⁻¹V_th)[t])`.
///
/// Stateless: only the current input and the folded threshold are read.
pub fn saccadic_infer_step<F: Scalar>(
    params: &SaccadicParams<F>,
    patch_t: &Tensor<F>,
    t: usize,
) -> Result<SpikeTensor> {
    let folded = params
        .folded
        .as_ref()
        .ok_or_else(|| Error::State("folded thresholds not computed; call fold_thresholds".into()))?;
    if t >= folded.len() {
        return Err(Error::State(format!(
            "timestep {t} outside 0..{}",
            folded.len()
        )));
    }
    Ok(heaviside(patch_t, folded.data()[t]))
}

/// Runs [`saccadic_infer_step`] over every row of `patch` (`[T, N]`).
pub fn saccadic_infer<F: Scalar>(params: &SaccadicParams<F>, patch: &Tensor<F>) -> Result<SpikeTensor> {
    let t_steps = params.t_steps();
    if patch.rank() != 2 || patch.shape()[0] != t_steps {
        return shape_err(format!("patch {:?} does not match T = {t_steps}", patch.shape()));
    }
    let n = patch.shape()[1];
    let mut out = Vec::with_capacity(patch.len());
    for t in 0..t_steps {
        let row = Tensor::new(vec![n], patch.data()[t * n..(t + 1) * n].to_vec())?;
        out.extend_from_slice(saccadic_infer_step(params, &row, t)?.data());
    }
    SpikeTensor::new(patch.shape().to_vec(), out)
}

/// Fraction of random patch tensors on which the two formulations fire identically.
///
/// Patches are `[T, n_tokens]` with entries uniform on `[0, 2·max(1, max|V_th|)]`.
pub fn train_infer_agreement<F: Scalar>(
    params: &SaccadicParams<F>,
    trials: usize,
    n_tokens: usize,
    rng: &mut RngState,
) -> Result<f64> {
    if trials == 0 {
        return Err(Error::Domain("trials must be at least 1".into()));
    }
    let mut folded = params.clone();
    fold_thresholds(&mut folded)?;
    let t = params.t_steps();
    let hi = params
        .v_th
        .data()
        .iter()
        .fold(1.0f64, |m, v| m.max(v.abs().as_f64()))
        * 2.0;
    let mut stream = rng.next_stream();
    let mut agree = 0usize;
    for _ in 0..trials {
        let patch = Tensor::from_fn(vec![t, n_tokens], |_| F::of(stream.random_range(0.0..hi)));
        if saccadic_train(params, &patch)? == saccadic_infer(&folded, &patch)? {
            agree += 1;
        }
    }
    Ok(agree as f64 / trials as f64)
}

/// Width `γ` of the triangular surrogate derivative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSpec {
    pub width: f64,
}

impl Default for SurrogateSpec {
    fn default() -> Self {
        Self { width: 1.0 }
    }
}

impl SurrogateSpec {
    pub fn new(width: f64) -> Result<Self> {
        if !(width > 0.0) {
            return Err(Error::Parameter(format!("surrogate width {width} must be positive")));
        }
        Ok(Self { width })
    }

    #[inline]
    pub fn derivative<F: Scalar>(&self, x: F) -> F {
        let g = F::of(self.width);
        (F::one() - x.abs() / g).max(F::zero()) / g
    }
}

/// `max(0, 1 − |u − v_th|/γ)/γ`, elementwise.
pub fn surrogate_grad<F: Scalar>(u: &Tensor<F>, v_th: F, spec: &SurrogateSpec) -> Tensor<F> {
    u.map(|x| spec.derivative(x - v_th))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn t1(v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(vec![v.len()], v).unwrap()
    }

    fn t2(r: usize, c: usize, v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(vec![r, c], v).unwrap()
    }

    fn mixer() -> Tensor<f64> {
        t2(2, 2, &[1.0, 0.0, 0.5, 1.0])
    }

    #[test]
    fn heaviside_boundary_fires() {
        assert_eq!(heaviside(&t1(&[0.5, 1.0, 1.5]), 1.0).data(), &[0, 1, 1]);
        assert_eq!(heaviside(&t1(&[-3.0, 0.2, 0.99]), 1.0).count_ones(), 0);
    }

    #[test]
    fn lif_hand_traces() {
        let p = LifParams::default();
        let fire = LifState { h: t1(&[0.6]) };
        let (s, next) = lif_step(&p, &fire, &t1(&[0.5])).unwrap();
        assert_eq!(s.data(), &[1]);
        assert_eq!(next.h.data(), &[0.0]);

        let leak = LifState { h: t1(&[0.2]) };
        let (s, next) = lif_step(&p, &leak, &t1(&[0.5])).unwrap();
        assert_eq!(s.data(), &[0]);
        assert!((next.h.data()[0] - 0.35).abs() < 1e-15);

        let (s, next) = lif_step(&p, &LifState::resting(vec![1]), &t1(&[0.0])).unwrap();
        assert_eq!(s.data(), &[0]);
        assert_eq!(next.h.data(), &[0.0]);
    }

    #[test]
    fn lif_geometric_forgetting() {
        let p = LifParams::new(0.7, 10.0, 0.0).unwrap();
        let mut state = LifState { h: t1(&[3.0]) };
        let h0 = 3.0;
        for k in 1..=10 {
            let (s, next) = lif_step(&p, &state, &t1(&[0.0])).unwrap();
            assert_eq!(s.count_ones(), 0);
            let expected = 0.7f64.powi(k) * h0;
            assert!((next.h.data()[0] - expected).abs() < 1e-12);
            state = next;
        }
    }

    #[test]
    fn lif_param_validation() {
        assert!(LifParams::new(0.0, 1.0, 0.0).is_err());
        assert!(LifParams::new(1.2, 1.0, 0.0).is_err());
        assert!(LifParams::new(0.5, 0.0, 0.0).is_err());
    }

    #[test]
    fn train_identity_mixer() {
        let p = SaccadicParams::identity(t1(&[1.0, 2.0])).unwrap();
        let patch = t2(2, 3, &[0.5, 1.0, 3.0, 2.0, 1.9, -1.0]);
        assert_eq!(saccadic_train(&p, &patch).unwrap().data(), &[0, 1, 1, 1, 0, 0]);
    }

    #[test]
    fn train_hand_trace() {
        let p = SaccadicParams::new(mixer(), t1(&[1.5, 3.5]), 1.0).unwrap();
        let patch = t2(2, 1, &[2.0, 3.0]);
        let h = mix_time(p.m_w(), &patch, &mut OpCounter::new()).unwrap();
        assert_eq!(h.data(), &[2.0, 4.0]);
        assert_eq!(saccadic_train(&p, &patch).unwrap().data(), &[1, 1]);
        let zeros = Tensor::zeros(vec![2, 4]);
        assert_eq!(saccadic_train(&p, &zeros).unwrap().count_ones(), 0);
    }

    #[test]
    fn fold_examples() {
        let mut p = SaccadicParams::new(t2(2, 2, &[2., 0., 0., 4.]), t1(&[1., 2.]), 1.0).unwrap();
        assert_eq!(fold_thresholds(&mut p).unwrap().data(), &[0.5, 0.5]);
        let mut p = SaccadicParams::new(mixer(), t1(&[1.5, 3.5]), 1.0).unwrap();
        assert_eq!(fold_thresholds(&mut p).unwrap().data(), &[1.5, 2.75]);
        assert!(p.folded().is_some());
        let mut p = SaccadicParams::identity(t1(&[0.3, -1.0, 7.0])).unwrap();
        assert_eq!(fold_thresholds(&mut p).unwrap().data(), &[0.3, -1.0, 7.0]);
    }

    #[test]
    fn singular_and_upper_mixers_rejected() {
        assert!(matches!(
            SaccadicParams::new(t2(2, 2, &[1., 0., 0.5, 0.]), t1(&[1., 1.]), 1.0),
            Err(Error::SingularMixer { index: 1 })
        ));
        assert!(matches!(
            SaccadicParams::new(t2(2, 2, &[1., 0.2, 0., 1.]), t1(&[1., 1.]), 1.0),
            Err(Error::Parameter(_))
        ));
        assert!(SaccadicParams::new(Tensor::eye(2), t1(&[1., 1.]), 0.0).is_err());
        let singular = t2(2, 2, &[1., 0., 0.5, 0.]);
        assert!(matches!(
            forward_substitution(&singular, &t1(&[1., 1.])),
            Err(Error::SingularMixer { index: 1 })
        ));
    }

    #[test]
    fn infer_needs_fold() {
        let p = SaccadicParams::identity(t1(&[1.0])).unwrap();
        assert!(matches!(
            saccadic_infer_step(&p, &t1(&[2.0]), 0),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn infer_hand_traces() {
        let mut p = SaccadicParams::new(mixer(), t1(&[1.5, 3.5]), 1.0).unwrap();
        fold_thresholds(&mut p).unwrap();
        let patch = t2(2, 1, &[2.0, 3.0]);
        assert_eq!(saccadic_infer(&p, &patch).unwrap().data(), &[1, 1]);
        assert_eq!(saccadic_train(&p, &patch).unwrap().data(), &[1, 1]);
    }

    #[test]
    fn documented_counterexample() {
        let mut p = SaccadicParams::new(mixer(), t1(&[1.5, 0.9]), 1.0).unwrap();
        fold_thresholds(&mut p).unwrap();
        let patch = t2(2, 1, &[2.0, 0.0]);
        assert_eq!(saccadic_train(&p, &patch).unwrap().data(), &[1, 1]);
        assert_eq!(saccadic_infer(&p, &patch).unwrap().data(), &[1, 0]);
    }

    #[test]
    fn agreement_rates() {
        let mut rng = RngState::new(3);
        let diag = SaccadicParams::new(t2(2, 2, &[2., 0., 0., 0.5]), t1(&[1.0, 0.7]), 1.0).unwrap();
        assert_eq!(train_infer_agreement(&diag, 200, 4, &mut rng).unwrap(), 1.0);
        let id = SaccadicParams::identity(t1(&[0.4, 1.0, 2.0])).unwrap();
        assert_eq!(train_infer_agreement(&id, 200, 4, &mut rng).unwrap(), 1.0);
        let general = SaccadicParams::new(mixer(), t1(&[1.5, 0.9]), 1.0).unwrap();
        assert!(train_infer_agreement(&general, 200, 1, &mut rng).unwrap() < 1.0);
        assert!(train_infer_agreement(&general, 0, 1, &mut rng).is_err());
    }

    #[test]
    fn surrogate_values() {
        let s = SurrogateSpec::default();
        let g = surrogate_grad(&t1(&[1.0, 2.0, -0.5, 1.5]), 1.0, &s);
        assert_eq!(g.data(), &[1.0, 0.0, 0.0, 0.5]);
        assert!(SurrogateSpec::new(0.0).is_err());
    }

    #[test]
    fn surrogate_integrates_to_one() {
        for &w in &[0.25, 1.0, 3.0] {
            let s = SurrogateSpec::new(w).unwrap();
            let v_th = 0.7;
            let n = 20_000;
            let (a, b) = (v_th - w, v_th + w);
            let hstep = (b - a) / n as f64;
            let xs = Tensor::from_fn(vec![n + 1], |i| a + i as f64 * hstep);
            let g = surrogate_grad(&xs, v_th, &s);
            let d = g.data();
            let integral: f64 = (0..n).map(|i| 0.5 * (d[i] + d[i + 1]) * hstep).sum();
            assert!((integral - 1.0).abs() < 1e-6, "width {w}: {integral}");
        }
    }

    fn lower_triangular(t: usize) -> impl Strategy<Value = Tensor<f64>> {
        (
            prop::collection::vec(0.5f64..2.0, t),
            prop::collection::vec(prop_oneof![Just(1.0f64), Just(-1.0)], t),
            prop::collection::vec(-0.5f64..0.5, t * t),
        )
            .prop_map(move |(mag, sign, off)| {
                Tensor::from_fn(vec![t, t], |k| {
                    let (i, j) = (k / t, k % t);
                    match i.cmp(&j) {
                        std::cmp::Ordering::Equal => mag[i] * sign[i],
                        std::cmp::Ordering::Greater => off[k],
                        std::cmp::Ordering::Less => 0.0,
                    }
                })
            })
    }

    proptest! {
        #[test]
        fn heaviside_positive_scaling(
            u in prop::collection::vec(-10.0f64..10.0, 1..32),
            v in -10.0f64..10.0,
            c in 0.01f64..100.0,
        ) {
            let ut = t1(&u);
            prop_assert_eq!(heaviside(&ut.scale(c), c * v), heaviside(&ut, v));
        }

        #[test]
        fn fold_reproduces_thresholds(
            m in (1usize..6).prop_flat_map(lower_triangular),
            seed in any::<u64>(),
        ) {
            let t = m.shape()[0];
            let mut r = RngState::stream_at(seed, 0);
            let v = Tensor::from_fn(vec![t], |_| r.random_range(-5.0..5.0));
            let mut p = SaccadicParams::new(m.clone(), v.clone(), 1.0).unwrap();
            let folded = fold_thresholds(&mut p).unwrap();
            let back = m.matmul(&folded.reshape(vec![t, 1]).unwrap()).unwrap();
            for (a, b) in back.data().iter().zip(v.data()) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }

        #[test]
        fn diagonal_mixer_equivalence(
            diag in prop::collection::vec(0.05f64..5.0, 1..6),
            seed in any::<u64>(),
            n in 1usize..8,
        ) {
            let t = diag.len();
            let m = Tensor::from_fn(vec![t, t], |k| if k / t == k % t { diag[k / t] } else { 0.0 });
            let mut r = RngState::stream_at(seed, 0);
            let v = Tensor::from_fn(vec![t], |_| r.random_range(-3.0..3.0));
            let patch = Tensor::from_fn(vec![t, n], |_| r.random_range(-3.0..3.0));
            let mut p = SaccadicParams::new(m, v, 1.0).unwrap();
            fold_thresholds(&mut p).unwrap();
            prop_assert_eq!(saccadic_train(&p, &patch).unwrap(), saccadic_infer(&p, &patch).unwrap());
        }

        #[test]
        fn inference_is_order_independent(
            m in (1usize..6).prop_flat_map(lower_triangular),
            seed in any::<u64>(),
        ) {
            let t = m.shape()[0];
            let n = 5;
            let mut r = RngState::stream_at(seed, 1);
            let v = Tensor::from_fn(vec![t], |_| r.random_range(-2.0..2.0));
            let patch = Tensor::from_fn(vec![t, n], |_| r.random_range(-4.0..4.0));
            let mut p = SaccadicParams::new(m, v, 1.0).unwrap();
            fold_thresholds(&mut p).unwrap();
            let forward = saccadic_infer(&p, &patch).unwrap();
            for t_idx in (0..t).rev() {
                let row = Tensor::new(vec![n], patch.data()[t_idx * n..(t_idx + 1) * n].to_vec()).unwrap();
                let s = saccadic_infer_step(&p, &row, t_idx).unwrap();
                prop_assert_eq!(s.data(), &forward.data()[t_idx * n..(t_idx + 1) * n]);
            }
        }
    }
}

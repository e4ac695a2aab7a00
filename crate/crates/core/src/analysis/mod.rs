//! Side studies: magnitude-ratio statistics, the log-linearisation error,
//! op-count scaling and the energy model.

mod ratio;

pub use ratio::{
    ratio_var_exact, ratio_var_mc, HistBin, RatioMcResult, RatioMode, RatioMoments, RatioStudyConfig,
    MIN_TRIALS,
};

use serde::{Deserialize, Serialize};

use crate::attention::{sssa_v1, sssa_v2, ssa_baseline, AlphaMode, AttentionVariant};
use crate::counter::OpCounter;
use crate::error::{Error, Result};
use crate::neurons::{fold_thresholds, SaccadicParams};
use crate::rng::{bernoulli_spikes, RngState};
use crate::tensor::Tensor;

/// First-order expansion of `log x` around `x₀` and its error on `[a, b]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaylorStudy {
    pub x0: f64,
    pub a: f64,
    pub b: f64,
    pub k_hat: f64,
    pub b_hat: f64,
    pub max_abs_error: f64,
    pub argmax: f64,
}

/// `|log x − (x/x₀ + log x₀ − 1)|`.
pub fn taylor_error(x0: f64, x: f64) -> f64 {
    (x.ln() - (x / x0 + x0.ln() - 1.0)).abs()
}

pub fn taylor_study(x0: f64, a: f64, b: f64, grid_points: usize) -> Result<TaylorStudy> {
    if !(a > 0.0) {
        return Err(Error::Domain(format!("range start {a} must be positive")));
    }
    if !(a <= x0 && x0 <= b) {
        return Err(Error::Domain(format!("x0 {x0} outside [{a}, {b}]")));
    }
    if grid_points < 2 && b > a {
        return Err(Error::Domain("a non-degenerate range needs at least 2 grid points".into()));
    }
    let n = grid_points.max(1);
    let (mut worst, mut at) = (taylor_error(x0, a), a);
    for i in 0..n {
        let x = match i {
            0 => a,
            _ if i == n - 1 => b,
            _ => a + (b - a) * i as f64 / (n - 1) as f64,
        };
        let e = taylor_error(x0, x);
        if e > worst {
            worst = e;
            at = x;
        }
    }
    Ok(TaylorStudy {
        x0,
        a,
        b,
        k_hat: 1.0 / x0,
        b_hat: x0.ln() - 1.0,
        max_abs_error: worst,
        argmax: at,
    })
}

/// Least-squares slope of `log count` against `log size`.
pub fn scaling_fit(sizes: &[f64], counts: &[f64]) -> Result<f64> {
    if sizes.len() != counts.len() || sizes.len() < 4 {
        return Err(Error::Domain("need at least 4 (size, count) pairs".into()));
    }
    if sizes.iter().chain(counts).any(|&v| !(v > 0.0)) {
        return Err(Error::Domain("sizes and counts must be positive".into()));
    }
    let (lo, hi) = sizes
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(l, h), &s| (l.min(s), h.max(s)));
    if hi / lo < 8.0 {
        return Err(Error::Domain(format!("sizes span only {:.2}x; need 8x", hi / lo)));
    }
    let xs: Vec<f64> = sizes.iter().map(|s| s.ln()).collect();
    let ys: Vec<f64> = counts.iter().map(|c| c.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

/// Energy per operation in picojoules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyConstants {
    pub e_ac_pj: f64,
    pub e_mac_pj: f64,
}

impl Default for EnergyConstants {
    /// 45 nm figures.
    fn default() -> Self {
        Self {
            e_ac_pj: 0.9,
            e_mac_pj: 4.6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub ac: u64,
    pub mac: u64,
    pub ac_energy_j: f64,
    pub mac_energy_j: f64,
    pub total_j: f64,
    pub constants: EnergyConstants,
}

pub fn energy_estimate(c: &OpCounter, k: EnergyConstants) -> EnergyReport {
    let ac_energy_j = c.ac as f64 * k.e_ac_pj * 1e-12;
    let mac_energy_j = c.mac as f64 * k.e_mac_pj * 1e-12;
    EnergyReport {
        ac: c.ac,
        mac: c.mac,
        ac_energy_j,
        mac_energy_j,
        total_j: ac_energy_j + mac_energy_j,
        constants: k,
    }
}

/// Attention configurations compared by the benchmarks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchVariant {
    Ssa,
    V1,
    V2Computed,
    V2Learned,
}

impl BenchVariant {
    pub const ALL: [BenchVariant; 4] = [
        BenchVariant::Ssa,
        BenchVariant::V1,
        BenchVariant::V2Computed,
        BenchVariant::V2Learned,
    ];

    pub fn attention(self) -> (AttentionVariant, AlphaMode) {
        match self {
            BenchVariant::Ssa => (AttentionVariant::SsaBaseline, AlphaMode::Computed),
            BenchVariant::V1 => (AttentionVariant::SssaV1, AlphaMode::Computed),
            BenchVariant::V2Computed => (AttentionVariant::SssaV2, AlphaMode::Computed),
            BenchVariant::V2Learned => (AttentionVariant::SssaV2, AlphaMode::Learned),
        }
    }
}

/// Op counts of one attention forward on random spikes at rate `p`.
pub fn attention_counts(
    variant: BenchVariant,
    t: usize,
    n: usize,
    d: usize,
    p: f64,
    seed: u64,
) -> Result<OpCounter> {
    let mut rng = RngState::new(seed);
    let shape = vec![t, n, d];
    let q = bernoulli_spikes(shape.clone(), p, &mut rng)?;
    let k = bernoulli_spikes(shape.clone(), p, &mut rng)?;
    let v = bernoulli_spikes(shape, p, &mut rng)?;
    let mut params = SaccadicParams::new(
        Tensor::eye(t),
        Tensor::full(vec![t], d as f64 * p),
        1.0,
    )?;
    fold_thresholds(&mut params)?;
    let mut c = OpCounter::new();
    match variant {
        BenchVariant::Ssa => {
            ssa_baseline::<f64>(&q, &k, &v, &mut c)?;
        }
        BenchVariant::V1 => {
            sssa_v1(&q, &k, &v, &params, &mut c)?;
        }
        BenchVariant::V2Computed => {
            sssa_v2(&q, &k, &v, &params, AlphaMode::Computed, &mut c)?;
        }
        BenchVariant::V2Learned => {
            sssa_v2(&q, &k, &v, &params, AlphaMode::Learned, &mut c)?;
        }
    }
    Ok(c)
}

/// One row of a scaling sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub variant: BenchVariant,
    pub t: usize,
    pub n: usize,
    pub d: usize,
    pub counts: OpCounter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    Tokens,
    Features,
}

/// Counts `variant` over `sizes` along `axis` with the other extents fixed.
pub fn scaling_sweep(
    variant: BenchVariant,
    axis: SweepAxis,
    sizes: &[usize],
    t: usize,
    fixed: usize,
    p: f64,
    seed: u64,
) -> Result<(Vec<ScalingRow>, f64)> {
    let mut rows = Vec::with_capacity(sizes.len());
    for &s in sizes {
        let (n, d) = match axis {
            SweepAxis::Tokens => (s, fixed),
            SweepAxis::Features => (fixed, s),
        };
        let counts = attention_counts(variant, t, n, d, p, seed)?;
        rows.push(ScalingRow {
            variant,
            t,
            n,
            d,
            counts,
        });
    }
    let xs: Vec<f64> = sizes.iter().map(|&s| s as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.counts.total() as f64).collect();
    Ok((rows, scaling_fit(&xs, &ys)?))
}

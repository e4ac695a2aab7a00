//! Distribution of the magnitude ratio `‖q‖ / ‖k‖` for independent vectors.
//!
//! For spike vectors with `D` Bernoulli(`p`) entries, `‖x‖²` is Binomial(`D`, `p`).
//! The folded ratio is `√(max(‖q‖², ‖k‖²) / min(‖q‖², ‖k‖²)) ≥ 1`. Pairs in
//! which the denominator vanishes are excluded and the remaining probability
//! mass renormalised.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioMoments {
    pub mean: f64,
    pub variance: f64,
}

fn ln_binomial_pmf(d: usize, p: f64) -> Vec<f64> {
    let mut ln_fact = vec![0.0; d + 1];
    for i in 1..=d {
        ln_fact[i] = ln_fact[i - 1] + (i as f64).ln();
    }
    let (lp, lq) = (p.ln(), (-p).ln_1p());
    (0..=d)
        .map(|k| ln_fact[d] - ln_fact[k] - ln_fact[d - k] + k as f64 * lp + (d - k) as f64 * lq)
        .collect()
}

/// Exact mean and variance of the folded ratio by enumerating all `(k, l)` pairs.
pub fn ratio_var_exact(p: f64, d: usize) -> Result<RatioMoments> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("firing rate {p} outside (0, 1)")));
    }
    if d == 0 {
        return Err(Error::Domain("D must be at least 1".into()));
    }
    let pmf: Vec<f64> = ln_binomial_pmf(d, p).into_iter().map(f64::exp).collect();
    let pairs = || {
        (1..=d).flat_map(|k| (1..=d).map(move |l| (k, l))).map(|(k, l)| {
            let (hi, lo) = (k.max(l) as f64, k.min(l) as f64);
            (pmf[k] * pmf[l], (hi / lo).sqrt())
        })
    };
    let mass: f64 = pairs().map(|(w, _)| w).sum();
    if !(mass > 0.0) {
        return Err(Error::Statistics("no probability mass on non-zero magnitudes".into()));
    }
    let mean = pairs().map(|(w, r)| w * r).sum::<f64>() / mass;
    let variance = pairs().map(|(w, r)| w * (r - mean) * (r - mean)).sum::<f64>() / mass;
    Ok(RatioMoments { mean, variance })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RatioMode {
    BinomialSpike {
        p: f64,
        d: usize,
    },
    Gaussian {
        mu: f64,
        /// Standard deviation, or variance when `sigma_is_variance` is set.
        sigma: f64,
        d: usize,
        #[serde(default)]
        sigma_is_variance: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioStudyConfig {
    pub mode: RatioMode,
    pub trials: usize,
    pub seed: u64,
    /// Report `max/min` (≥ 1) instead of `‖q‖/‖k‖`.
    pub fold: bool,
    pub bins: usize,
    /// Histogram range; values outside are tallied as under/overflow.
    pub range: (f64, f64),
}

impl RatioStudyConfig {
    pub fn spike(p: f64, d: usize, trials: usize, seed: u64) -> Self {
        Self {
            mode: RatioMode::BinomialSpike { p, d },
            trials,
            seed,
            fold: true,
            bins: 50,
            range: (1.0, 3.0),
        }
    }

    pub fn gaussian(mu: f64, sigma: f64, d: usize, trials: usize, seed: u64) -> Self {
        Self {
            mode: RatioMode::Gaussian {
                mu,
                sigma,
                d,
                sigma_is_variance: false,
            },
            trials,
            seed,
            fold: true,
            bins: 50,
            range: (1.0, 1.2),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dom = |m: String| Err(Error::Domain(m));
        match self.mode {
            RatioMode::BinomialSpike { p, d } => {
                if !(p > 0.0 && p < 1.0) {
                    return dom(format!("firing rate {p} outside (0, 1)"));
                }
                if d == 0 {
                    return dom("D must be at least 1".into());
                }
            }
            RatioMode::Gaussian { sigma, d, mu, .. } => {
                if !(sigma > 0.0) || !mu.is_finite() {
                    return dom(format!("gaussian parameters invalid: mu {mu}, sigma {sigma}"));
                }
                if d == 0 {
                    return dom("D must be at least 1".into());
                }
            }
        }
        if self.trials < MIN_TRIALS {
            return dom(format!("{} trials is below the minimum of {MIN_TRIALS}", self.trials));
        }
        if self.bins == 0 || !(self.range.1 > self.range.0) {
            return dom("histogram needs at least one bin and a non-empty range".into());
        }
        Ok(())
    }
}

pub const MIN_TRIALS: usize = 10_000;

/// Trials per RNG stream. Fixed, so results do not depend on the thread count.
const BLOCK: usize = 1 << 14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistBin {
    pub bin_left: f64,
    pub bin_right: f64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioMcResult {
    pub mean: f64,
    pub variance: f64,
    /// Trials that produced a ratio.
    pub used: u64,
    /// Trials excluded for a zero denominator.
    pub degenerate: u64,
    pub histogram: Vec<HistBin>,
    pub underflow: u64,
    pub overflow: u64,
}

#[derive(Debug, Clone)]
struct Partial {
    n: u64,
    mean: f64,
    m2: f64,
    degenerate: u64,
    counts: Vec<u64>,
    under: u64,
    over: u64,
}

impl Partial {
    fn new(bins: usize) -> Self {
        Self {
            n: 0,
            mean: 0.0,
            m2: 0.0,
            degenerate: 0,
            counts: vec![0; bins],
            under: 0,
            over: 0,
        }
    }

    fn push(&mut self, r: f64, range: (f64, f64)) {
        self.n += 1;
        let delta = r - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (r - self.mean);
        let bins = self.counts.len();
        if r < range.0 {
            self.under += 1;
        } else if r > range.1 {
            self.over += 1;
        } else {
            let i = ((r - range.0) / (range.1 - range.0) * bins as f64) as usize;
            self.counts[i.min(bins - 1)] += 1;
        }
    }

    /// Chan et al. pairwise combination.
    fn merge(mut self, o: &Partial) -> Self {
        let n = self.n + o.n;
        if n > 0 {
            let delta = o.mean - self.mean;
            self.m2 += o.m2 + delta * delta * (self.n as f64 * o.n as f64) / n as f64;
            self.mean += delta * o.n as f64 / n as f64;
        }
        self.n = n;
        self.degenerate += o.degenerate;
        for (a, b) in self.counts.iter_mut().zip(&o.counts) {
            *a += b;
        }
        self.under += o.under;
        self.over += o.over;
        self
    }
}

fn squared_norms(cfg: &RatioStudyConfig, rng: &mut impl Rng) -> (f64, f64) {
    match cfg.mode {
        RatioMode::BinomialSpike { p, d } => {
            let mut count = || (0..d).filter(|_| rng.random::<f64>() < p).count() as f64;
            (count(), count())
        }
        RatioMode::Gaussian {
            mu,
            sigma,
            d,
            sigma_is_variance,
        } => {
            let sd = if sigma_is_variance { sigma.sqrt() } else { sigma };
            let normal = Normal::new(mu, sd).expect("validated gaussian");
            let mut norm2 = || (0..d).map(|_| normal.sample(rng).powi(2)).sum::<f64>();
            (norm2(), norm2())
        }
    }
}

fn run_block(cfg: &RatioStudyConfig, index: usize, trials: usize) -> Partial {
    let mut rng = RngState::stream_at(cfg.seed, index as u64);
    let mut part = Partial::new(cfg.bins);
    for _ in 0..trials {
        let (q, k) = squared_norms(cfg, &mut rng);
        let ratio = if cfg.fold {
            let (hi, lo) = (q.max(k), q.min(k));
            (lo > 0.0).then(|| (hi / lo).sqrt())
        } else {
            (k > 0.0).then(|| (q / k).sqrt())
        };
        match ratio {
            Some(r) => part.push(r, cfg.range),
            None => part.degenerate += 1,
        }
    }
    part
}

/// Monte Carlo estimate of the ratio distribution with the exact-study conventions.
pub fn ratio_var_mc(cfg: &RatioStudyConfig) -> Result<RatioMcResult> {
    cfg.validate()?;
    let blocks = cfg.trials.div_ceil(BLOCK);
    let parts: Vec<Partial> = (0..blocks)
        .into_par_iter()
        .map(|b| run_block(cfg, b, BLOCK.min(cfg.trials - b * BLOCK)))
        .collect();
    let total = parts
        .iter()
        .fold(Partial::new(cfg.bins), |acc, p| acc.merge(p));
    if total.degenerate * 2 > cfg.trials as u64 {
        return Err(Error::Statistics(format!(
            "{} of {} trials had a zero magnitude",
            total.degenerate, cfg.trials
        )));
    }
    if total.n < 2 {
        return Err(Error::Statistics("fewer than two usable trials".into()));
    }
    let width = (cfg.range.1 - cfg.range.0) / cfg.bins as f64;
    Ok(RatioMcResult {
        mean: total.mean,
        variance: total.m2 / total.n as f64,
        used: total.n,
        degenerate: total.degenerate,
        histogram: total
            .counts
            .iter()
            .enumerate()
            .map(|(i, &count)| HistBin {
                bin_left: cfg.range.0 + i as f64 * width,
                bin_right: cfg.range.0 + (i + 1) as f64 * width,
                count,
            })
            .collect(),
        underflow: total.under,
        overflow: total.over,
    })
}

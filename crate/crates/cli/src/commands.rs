//! Subcommand definitions and their execution.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use sssa_core::analysis::{
    energy_estimate, attention_counts, ratio_var_exact, ratio_var_mc, scaling_sweep, taylor_study, BenchVariant,
    EnergyConstants, RatioMode, RatioStudyConfig, SweepAxis,
};
use sssa_core::attention::{AlphaMode, AttentionVariant};
use sssa_core::autodiff::{grad_check_case, GradCheckCase};
use sssa_core::blocks::{ModelConfig, SnnVit};
use sssa_core::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta};
use sssa_core::rng::encode_rates;
use sssa_core::train::{batch, evaluate, train_toy_with, OptimSpec, Sample, ToyDataset, ToyTaskSpec, RATE_CAP};
use sssa_core::verify::{counterexample, verify_agreement, verify_v1_v2};
use sssa_core::{Error, Result, RngState, SpikeTensor};

use crate::idx::read_idx;
use crate::report::{write_csv, write_report};
use crate::Outcome;

#[derive(Debug, Parser)]
#[command(name = "sssa", version, about = "Saccadic spike self-attention studies and tools", arg_required_else_help = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Common {
    /// Directory for reports and artefacts
    #[arg(long, env = "SSSA_OUT_DIR", default_value = "sssa-out")]
    pub out: PathBuf,
    /// JSON object of flag values; flags on the command line take precedence
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed for every random draw of the run
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Magnitude-ratio variance: exact enumeration and Monte Carlo
    #[command(args_override_self = true)]
    AnalyzeRatio(RatioArgs),
    /// Error of the first-order expansion of log x
    #[command(args_override_self = true)]
    AnalyzeTaylor(TaylorArgs),
    /// Compare SSSA-V1 with SSSA-V2 (computed scale) on random instances
    #[command(args_override_self = true)]
    VerifyEquivalence(EquivalenceArgs),
    /// Compare the parallel and folded saccadic neuron
    #[command(args_override_self = true)]
    VerifyAgreement(AgreementArgs),
    /// Op counts against token or feature count, with fitted exponents
    #[command(args_override_self = true)]
    BenchScaling(ScalingArgs),
    /// Energy of one attention forward per variant
    #[command(args_override_self = true)]
    CountEnergy(EnergyArgs),
    /// Train the small network on the bar task
    #[command(args_override_self = true)]
    TrainToy(TrainArgs),
    /// Run a checkpoint on synthetic bars or IDX images
    #[command(args_override_self = true)]
    Infer(InferArgs),
    /// Finite-difference checks of tape gradients
    #[command(args_override_self = true)]
    GradCheck(GradCheckArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RatioModeArg {
    Spike,
    Gaussian,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RatioArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum, default_value = "spike")]
    pub mode: RatioModeArg,
    /// Firing rate (spike mode)
    #[arg(long, default_value_t = 0.15)]
    pub p: f64,
    /// Vector length
    #[arg(long, default_value_t = 128)]
    pub d: usize,
    /// Mean (gaussian mode)
    #[arg(long, default_value_t = 35.0)]
    pub mu: f64,
    /// Standard deviation (gaussian mode)
    #[arg(long, default_value_t = 10.0)]
    pub sigma: f64,
    /// Read --sigma as a variance
    #[arg(long)]
    pub sigma_is_variance: bool,
    #[arg(long, default_value_t = 1_000_000)]
    pub trials: usize,
    /// Report ‖q‖/‖k‖ instead of the folded ratio
    #[arg(long)]
    pub no_fold: bool,
    #[arg(long, default_value_t = 50)]
    pub bins: usize,
    /// Histogram range
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    pub range: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TaylorArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 0.15)]
    pub x0: f64,
    #[arg(long, num_args = 2, value_names = ["A", "B"], default_values_t = [0.1, 0.2])]
    pub range: Vec<f64>,
    #[arg(long, default_value_t = 10_000)]
    pub grid: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EquivalenceVariant {
    /// `T ≤ 4` with a constant per-timestep key total
    V1v2,
    /// `T = 1` with arbitrary keys
    #[value(name = "v1v2-t1")]
    #[serde(rename = "v1v2-t1")]
    V1v2T1,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EquivalenceArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum, default_value = "v1v2")]
    pub variant: EquivalenceVariant,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AgreementArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 1000)]
    pub instances: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AxisArg {
    Tokens,
    Features,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ScalingArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum, default_value = "tokens")]
    pub axis: AxisArg,
    /// Sizes along the axis [default: 16 32 64 128 for tokens, 8 16 32 64 for features]
    #[arg(long, num_args = 1..)]
    pub sizes: Option<Vec<usize>>,
    #[arg(long, default_value_t = 4)]
    pub t: usize,
    /// Extent of the other axis [default: D = 32 for tokens, N = 64 for features]
    #[arg(long)]
    pub fixed: Option<usize>,
    /// Spike rate of the random inputs
    #[arg(long, default_value_t = 0.15)]
    pub p: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EnergyArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 64)]
    pub n: usize,
    #[arg(long, default_value_t = 32)]
    pub d: usize,
    #[arg(long, default_value_t = 4)]
    pub t: usize,
    #[arg(long, default_value_t = 0.15)]
    pub p: f64,
    /// Energy per accumulate, pJ
    #[arg(long, default_value_t = 0.9)]
    pub e_ac: f64,
    /// Energy per multiply-accumulate, pJ
    #[arg(long, default_value_t = 4.6)]
    pub e_mac: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum ModelVariant {
    Ssa,
    V1,
    V2Computed,
    V2Learned,
}

impl ModelVariant {
    fn attention(self) -> (AttentionVariant, AlphaMode) {
        let b = match self {
            ModelVariant::Ssa => BenchVariant::Ssa,
            ModelVariant::V1 => BenchVariant::V1,
            ModelVariant::V2Computed => BenchVariant::V2Computed,
            ModelVariant::V2Learned => BenchVariant::V2Learned,
        };
        b.attention()
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 20)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 200)]
    pub samples_per_class: usize,
    #[arg(long, value_enum, default_value = "v2-learned")]
    pub variant: ModelVariant,
    /// Exit with 1 unless the final test accuracy reaches this value
    #[arg(long)]
    pub target_acc: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct InferArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// IDX image file (magic 0x00000803); synthetic bars when absent
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Synthetic samples per class
    #[arg(long, default_value_t = 50)]
    pub samples: usize,
    #[arg(long, default_value_t = 50)]
    pub batch_size: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GradCheckArgs {
    #[command(flatten)]
    pub common: Common,
    /// Random instances per subgraph
    #[arg(long, default_value_t = 20)]
    pub instances: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub h: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

pub fn execute(cmd: Command) -> Result<Outcome> {
    let seed = match &cmd {
        Command::AnalyzeRatio(a) => a.common.seed,
        Command::AnalyzeTaylor(a) => a.common.seed,
        Command::VerifyEquivalence(a) => a.common.seed,
        Command::VerifyAgreement(a) => a.common.seed,
        Command::BenchScaling(a) => a.common.seed,
        Command::CountEnergy(a) => a.common.seed,
        Command::TrainToy(a) => a.common.seed,
        Command::Infer(a) => a.common.seed,
        Command::GradCheck(a) => a.common.seed,
    };
    println!("seed: {seed}");
    match cmd {
        Command::AnalyzeRatio(a) => analyze_ratio(&a),
        Command::AnalyzeTaylor(a) => analyze_taylor(&a),
        Command::VerifyEquivalence(a) => verify_equivalence(&a),
        Command::VerifyAgreement(a) => verify_agreement_cmd(&a),
        Command::BenchScaling(a) => bench_scaling(&a),
        Command::CountEnergy(a) => count_energy(&a),
        Command::TrainToy(a) => train_toy_cmd(&a),
        Command::Infer(a) => infer(&a),
        Command::GradCheck(a) => grad_check_cmd(&a),
    }
}

fn announce(path: &Path) {
    println!("report: {}", path.display());
}

/// Values quoted alongside the computed ones, with the tolerance used to compare them.
const SPIKE_REFERENCE: f64 = 0.2322;
const GAUSSIAN_REFERENCE: f64 = 0.00844;
const REFERENCE_TOLERANCE: f64 = 0.07;
const CONVENTION_NOTE: &str = "the reference comes from a simulation whose folding and zero-magnitude \
     exclusion rules are only partly stated; the exact value uses sqrt(max/min) of squared magnitudes \
     with zero-magnitude pairs excluded and the remaining mass renormalised";

#[derive(Serialize)]
struct HistRow {
    bin_left: f64,
    bin_right: f64,
    count: u64,
}

fn analyze_ratio(a: &RatioArgs) -> Result<Outcome> {
    let mode = match a.mode {
        RatioModeArg::Spike => RatioMode::BinomialSpike { p: a.p, d: a.d },
        RatioModeArg::Gaussian => RatioMode::Gaussian {
            mu: a.mu,
            sigma: a.sigma,
            d: a.d,
            sigma_is_variance: a.sigma_is_variance,
        },
    };
    let mut cfg = match a.mode {
        RatioModeArg::Spike => RatioStudyConfig::spike(a.p, a.d, a.trials, a.common.seed),
        RatioModeArg::Gaussian => RatioStudyConfig::gaussian(a.mu, a.sigma, a.d, a.trials, a.common.seed),
    };
    cfg.mode = mode;
    cfg.fold = !a.no_fold;
    cfg.bins = a.bins;
    if let Some(r) = &a.range {
        cfg.range = (r[0], r[1]);
    } else if a.no_fold {
        cfg.range = (0.0, 2.0 * cfg.range.1);
    }
    let mc = ratio_var_mc(&cfg)?;
    println!("monte carlo: mean {:.6}, variance {:.6e} ({} used, {} excluded)", mc.mean, mc.variance, mc.used, mc.degenerate);
    let mut results = json!({
        "mean": mc.mean,
        "variance": mc.variance,
        "used": mc.used,
        "degenerate": mc.degenerate,
        "underflow": mc.underflow,
        "overflow": mc.overflow,
    });
    if let (RatioModeArg::Spike, false) = (a.mode, a.no_fold) {
        let ex = ratio_var_exact(a.p, a.d)?;
        let rel = (mc.variance - ex.variance).abs() / ex.variance;
        println!("exact: mean {:.6}, variance {:.6e}; monte carlo relative error {:.3}%", ex.mean, ex.variance, rel * 100.0);
        results["exact"] = json!({"mean": ex.mean, "variance": ex.variance});
        results["mc_relative_error"] = json!(rel);
        if a.p == 0.15 && a.d == 128 {
            let diff = (ex.variance - SPIKE_REFERENCE).abs();
            println!("reference {SPIKE_REFERENCE}: |difference| {diff:.4} (tolerance {REFERENCE_TOLERANCE})");
            results["reference"] = json!({
                "value": SPIKE_REFERENCE,
                "abs_difference": diff,
                "within_tolerance": diff <= REFERENCE_TOLERANCE,
                "note": CONVENTION_NOTE,
            });
        }
    }
    if let RatioModeArg::Gaussian = a.mode {
        if a.mu == 35.0 && a.sigma == 10.0 && a.d == 128 {
            results["reference"] = json!({"value": GAUSSIAN_REFERENCE, "note": CONVENTION_NOTE});
        }
    }
    let rows: Vec<HistRow> = mc
        .histogram
        .iter()
        .map(|b| HistRow {
            bin_left: b.bin_left,
            bin_right: b.bin_right,
            count: b.count,
        })
        .collect();
    let csv = write_csv(&a.common.out, "ratio_histogram.csv", &rows)?;
    results["histogram_csv"] = json!(csv);
    announce(&write_report(&a.common.out, "analyze-ratio", a.common.seed, a, json!({}), results)?);
    Ok(Outcome::Passed)
}

fn analyze_taylor(a: &TaylorArgs) -> Result<Outcome> {
    let s = taylor_study(a.x0, a.range[0], a.range[1], a.grid)?;
    println!("k = {:.6}, b = {:.6}, max_error = {:.6} at x = {}", s.k_hat, s.b_hat, s.max_abs_error, s.argmax);
    let results = json!({
        "k_hat": s.k_hat,
        "b_hat": s.b_hat,
        "max_error": s.max_abs_error,
        "argmax": s.argmax,
    });
    announce(&write_report(&a.common.out, "analyze-taylor", a.common.seed, a, json!({}), results)?);
    Ok(Outcome::Passed)
}

fn verify_equivalence(a: &EquivalenceArgs) -> Result<Outcome> {
    let single = matches!(a.variant, EquivalenceVariant::V1v2T1);
    let r = verify_v1_v2(a.trials, a.common.seed, single)?;
    println!("{}/{} identical", r.identical, r.trials);
    announce(&write_report(
        &a.common.out,
        "verify-equivalence",
        a.common.seed,
        a,
        json!({"mixer_grid": 0.25}),
        serde_json::to_value(r)?,
    )?);
    Ok(if r.all_identical() { Outcome::Passed } else { Outcome::Failed })
}

fn verify_agreement_cmd(a: &AgreementArgs) -> Result<Outcome> {
    let diag = verify_agreement(a.instances, a.common.seed, false)?;
    let general = verify_agreement(a.instances, a.common.seed, true)?;
    let (train, infer) = counterexample()?;
    let reproduced = train.data() == [1, 1] && infer.data() == [1, 0];
    println!("diagonal mixers: agreement {:.4} ({}/{})", diag.fraction(), diag.identical, diag.trials);
    println!("general mixers: agreement {:.4} ({}/{})", general.fraction(), general.identical, general.trials);
    println!(
        "counterexample: train {:?}, infer {:?} ({})",
        train.data(),
        infer.data(),
        if reproduced { "disagreement reproduced" } else { "NOT reproduced" }
    );
    let results = json!({
        "diagonal": {"agreement": diag.fraction(), "report": diag},
        "general": {"agreement": general.fraction(), "report": general},
        "counterexample": {"train": train.data(), "infer": infer.data(), "reproduced": reproduced},
    });
    let constants = json!({"counterexample": {"m_w": [[1.0, 0.0], [0.5, 1.0]], "v_th": [1.5, 0.9], "patch": [2.0, 0.0]}});
    announce(&write_report(&a.common.out, "verify-agreement", a.common.seed, a, constants, results)?);
    Ok(if diag.all_identical() && reproduced { Outcome::Passed } else { Outcome::Failed })
}

#[derive(Serialize)]
struct CountRow {
    variant: BenchVariant,
    t: usize,
    n: usize,
    d: usize,
    ac: u64,
    mac: u64,
    cmp: u64,
    total: u64,
}

fn bench_scaling(a: &ScalingArgs) -> Result<Outcome> {
    let (axis, sizes, fixed) = match a.axis {
        AxisArg::Tokens => (SweepAxis::Tokens, vec![16, 32, 64, 128], 32),
        AxisArg::Features => (SweepAxis::Features, vec![8, 16, 32, 64], 64),
    };
    let sizes = a.sizes.clone().unwrap_or(sizes);
    let fixed = a.fixed.unwrap_or(fixed);
    let mut rows = Vec::new();
    let mut exponents = serde_json::Map::new();
    for v in BenchVariant::ALL {
        let (sweep, slope) = scaling_sweep(v, axis, &sizes, a.t, fixed, a.p, a.common.seed)?;
        println!("{:<12} exponent {slope:.3}", serde_json::to_value(v)?.as_str().unwrap_or_default());
        exponents.insert(serde_json::to_value(v)?.as_str().unwrap_or_default().into(), json!(slope));
        rows.extend(sweep.iter().map(|r| CountRow {
            variant: r.variant,
            t: r.t,
            n: r.n,
            d: r.d,
            ac: r.counts.ac,
            mac: r.counts.mac,
            cmp: r.counts.cmp,
            total: r.counts.total(),
        }));
    }
    let csv = write_csv(&a.common.out, "scaling.csv", &rows)?;
    let results = json!({"exponents": exponents, "sizes": sizes, "fixed": fixed, "counts_csv": csv});
    announce(&write_report(&a.common.out, "bench-scaling", a.common.seed, a, json!({}), results)?);
    Ok(Outcome::Passed)
}

fn count_energy(a: &EnergyArgs) -> Result<Outcome> {
    let k = EnergyConstants {
        e_ac_pj: a.e_ac,
        e_mac_pj: a.e_mac,
    };
    let mut results = serde_json::Map::new();
    for v in BenchVariant::ALL {
        let c = attention_counts(v, a.t, a.n, a.d, a.p, a.common.seed)?;
        let e = energy_estimate(&c, k);
        let name = serde_json::to_value(v)?.as_str().unwrap_or_default().to_string();
        println!("{name:<12} ac {:>10} mac {:>10} energy {:.4e} J", e.ac, e.mac, e.total_j);
        results.insert(name, json!({"counts": c, "energy": e}));
    }
    let constants = json!({"e_ac_pj": k.e_ac_pj, "e_mac_pj": k.e_mac_pj});
    announce(&write_report(&a.common.out, "count-energy", a.common.seed, a, constants, Value::Object(results))?);
    Ok(Outcome::Passed)
}

fn train_toy_cmd(a: &TrainArgs) -> Result<Outcome> {
    let task = ToyTaskSpec {
        samples_per_class: a.samples_per_class,
        seed: a.common.seed,
        ..ToyTaskSpec::default()
    };
    let mut model_cfg = ModelConfig::default();
    for s in &mut model_cfg.stages {
        (s.variant, s.alpha_mode) = a.variant.attention();
    }
    let optim = OptimSpec {
        learning_rate: a.lr,
        momentum: a.momentum,
        weight_decay: a.weight_decay,
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed: a.common.seed,
        ..OptimSpec::default()
    };
    let out = train_toy_with(&task, &model_cfg, &optim, |m| {
        println!(
            "epoch {:>3}  loss {:.4}  train {:.3}  test {:.3}",
            m.epoch + 1,
            m.loss,
            m.train_acc,
            m.test_acc
        )
    })?;
    let csv = write_csv(&a.common.out, "metrics.csv", &out.metrics)?;
    let ckpt_path = a.common.out.join("checkpoint.json");
    let ckpt = Checkpoint::new(
        out.model,
        CheckpointMeta {
            epoch: Some(a.epochs),
            seed: a.common.seed,
            diag_clamp: optim.diag_clamp,
        },
    );
    save_checkpoint(&ckpt_path, &ckpt)?;
    let last = *out.metrics.last().expect("at least one epoch");
    let passed = a.target_acc.is_none_or(|t| last.test_acc >= t);
    let results = json!({
        "final": last,
        "best_test_acc": out.metrics.iter().map(|m| m.test_acc).fold(0.0, f64::max),
        "metrics_csv": csv,
        "checkpoint": ckpt_path,
        "target_met": passed,
    });
    let constants = json!({"task": task, "model": model_cfg, "optim": optim, "rate_cap": RATE_CAP});
    announce(&write_report(&a.common.out, "train-toy", a.common.seed, a, constants, results)?);
    Ok(if passed { Outcome::Passed } else { Outcome::Failed })
}

#[derive(Serialize)]
struct PredictionRow {
    index: usize,
    label: Option<usize>,
    prediction: usize,
}

fn predict(model: &SnnVit<f64>, samples: &[Sample], batch_size: usize) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let (x, _) = batch(&refs)?;
        let logits = model.logits(&x)?;
        let c = logits.shape()[1];
        for row in logits.data().chunks(c) {
            let best = (0..c).fold(0, |b, i| if row[i] > row[b] { i } else { b });
            out.push(best);
        }
    }
    Ok(out)
}

fn idx_samples(path: &Path, cfg: &ModelConfig, seed: u64) -> Result<Vec<Sample>> {
    let images = read_idx(path)?;
    if images.rows != cfg.image_size || images.cols != cfg.image_size || cfg.in_channels != 1 {
        return Err(Error::Config(format!(
            "IDX images are {}x{}; the model expects {} channel(s) of {}x{}",
            images.rows, images.cols, cfg.in_channels, cfg.image_size, cfg.image_size
        )));
    }
    let mut rng = RngState::new(seed);
    (0..images.count)
        .map(|i| {
            let rates: Vec<f64> = images.image(i).iter().map(|&b| b as f64 / 255.0 * RATE_CAP).collect();
            let s = encode_rates(&rates, cfg.t_steps, &mut rng)?;
            let shape = vec![cfg.t_steps, 1, images.rows, images.cols];
            Ok(Sample {
                spikes: SpikeTensor::new(shape, s.data().to_vec())?,
                label: usize::MAX,
            })
        })
        .collect()
}

fn infer(a: &InferArgs) -> Result<Outcome> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let model = &ckpt.model;
    let (samples, labelled) = match &a.input {
        Some(p) => (idx_samples(p, &model.config, a.common.seed)?, false),
        None => {
            let task = ToyTaskSpec {
                samples_per_class: a.samples.max(2) * 2,
                seed: a.common.seed,
                ..ToyTaskSpec::default()
            };
            (ToyDataset::generate(&task)?.test, true)
        }
    };
    let preds = predict(model, &samples, a.batch_size)?;
    let rows: Vec<PredictionRow> = preds
        .iter()
        .zip(&samples)
        .enumerate()
        .map(|(index, (&prediction, s))| PredictionRow {
            index,
            label: labelled.then_some(s.label),
            prediction,
        })
        .collect();
    let csv = write_csv(&a.common.out, "predictions.csv", &rows)?;
    let mut results = json!({"samples": samples.len(), "predictions_csv": csv});
    if labelled {
        let acc = evaluate(model, &samples, a.batch_size)?;
        println!("accuracy {acc:.4} on {} synthetic samples", samples.len());
        results["accuracy"] = json!(acc);
    } else {
        println!("{} predictions written", samples.len());
    }
    let constants = json!({"model": model.config, "checkpoint_meta": ckpt.meta, "rate_cap": RATE_CAP});
    announce(&write_report(&a.common.out, "infer", a.common.seed, a, constants, results)?);
    Ok(Outcome::Passed)
}

fn grad_check_cmd(a: &GradCheckArgs) -> Result<Outcome> {
    let mut results = serde_json::Map::new();
    let mut passed = true;
    for case in GradCheckCase::ALL {
        let mut worst = 0.0f64;
        let mut coords = 0;
        for i in 0..a.instances {
            let r = grad_check_case(case, a.common.seed.wrapping_add(i as u64), a.h)?;
            worst = worst.max(r.max_rel_error);
            coords += r.coordinates;
        }
        let ok = worst < a.tolerance;
        passed &= ok;
        let name = serde_json::to_value(case)?.as_str().unwrap_or_default().to_string();
        println!("{name:<15} max relative error {worst:.3e} over {coords} coordinates {}", if ok { "ok" } else { "FAIL" });
        results.insert(name, json!({"max_rel_error": worst, "coordinates": coords, "passed": ok}));
    }
    announce(&write_report(&a.common.out, "grad-check", a.common.seed, a, json!({}), Value::Object(results))?);
    Ok(if passed { Outcome::Passed } else { Outcome::Failed })
}

//! End-to-end experiment pipelines: CFM pretraining, reference freezing,
//! the alignment variants (Euclidean baseline, S-DPO, AS-DPO), evaluation,
//! and the Sobolev-order sweep.
//!
//! Seed derivation (all through `rng::derive_seed` from the experiment seed):
//! stream 0 drives training batches (item index, noise field, time), stream 1
//! initializes the policy, stream 2 drives evaluation noise, stream 3 drives
//! the degradation noise of the synthetic losers. One experiment is one
//! single-threaded deterministic loop.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::diagnostics::{log_spectral_distance, psnr};
use crate::dpo::{
    asdpo_loss, dpo_l2_loss, sdpo_loss, CoupledBatch, CoupledItem, PreferenceBatch,
    PreferenceItem,
};
use crate::error::{Error, Result};
use crate::field::Field2D;
use crate::flow::{
    euler_integrate, interpolate, target_velocity_marginal, TrajectoryConfig, VelocityField,
    DEFAULT_T_MAX,
};
use crate::io::write_params;
use crate::kv;
use crate::net::{adam_step, AdamConfig, AdamState, FieldParams};
use crate::noise::estimate_psd;
use crate::rng::{derive_seed, SplitMix64};
use crate::spectral::make_sobolev;
use crate::synth::{degrade, load_dataset, DataPair, DegradeConfig};

/// Experiment variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    SftOnly,
    DpoL2,
    Sdpo,
    Asdpo,
}

impl Variant {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sft_only" | "sft-only" => Ok(Variant::SftOnly),
            "dpo_l2" | "dpo-l2" => Ok(Variant::DpoL2),
            "sdpo" => Ok(Variant::Sdpo),
            "asdpo" => Ok(Variant::Asdpo),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::SftOnly => "sft_only",
            Variant::DpoL2 => "dpo_l2",
            Variant::Sdpo => "sdpo",
            Variant::Asdpo => "asdpo",
        }
    }
}

/// Full experiment configuration, parsed from a plain-text key=value file.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub variant: Variant,
    pub sobolev_s: f64,
    pub beta: f64,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    pub grid: (usize, usize),
    pub dataset: PathBuf,
    pub output: PathBuf,
    pub hidden: usize,
    pub horizon: f64,
    pub euler_steps: usize,
    /// Trailing pairs held out of training and used for metrics.
    pub eval_count: usize,
    pub loser_blur_sigma: f64,
    pub loser_downscale: usize,
    pub loser_noise_sigma: f64,
    /// Raw config text, echoed byte-for-byte into run outputs.
    pub config_echo: String,
}

impl ExperimentConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_text_with_seed(text, 42)
    }

    /// Parses a config, falling back to `default_seed` when the file has no
    /// seed key (the CLI threads its --seed through here).
    pub fn from_text_with_seed(text: &str, default_seed: u64) -> Result<Self> {
        let map = kv::parse(text)?;
        let cfg = ExperimentConfig {
            variant: match map.get("variant") {
                Some(v) => Variant::parse(v)?,
                None => Variant::SftOnly,
            },
            sobolev_s: kv::get_f64_or(&map, "sobolev_s", 1.5)?,
            beta: kv::get_f64_or(&map, "beta", 2000.0)?,
            steps: kv::get_usize(&map, "steps")?,
            batch: kv::get_usize_or(&map, "batch", 8)?,
            lr: kv::get_f64_or(&map, "lr", 1e-3)?,
            seed: kv::get_u64_or(&map, "seed", default_seed)?,
            grid: (
                kv::get_usize_or(&map, "grid_h", 16)?,
                kv::get_usize_or(&map, "grid_w", 16)?,
            ),
            dataset: PathBuf::from(kv::get_str(&map, "dataset")?),
            output: PathBuf::from(kv::get_str(&map, "output")?),
            hidden: kv::get_usize_or(&map, "hidden", 64)?,
            horizon: kv::get_f64_or(&map, "horizon", DEFAULT_T_MAX)?,
            euler_steps: kv::get_usize_or(&map, "euler_steps", 28)?,
            eval_count: kv::get_usize_or(&map, "eval_count", 8)?,
            loser_blur_sigma: kv::get_f64_or(&map, "loser_blur_sigma", 1.0)?,
            loser_downscale: kv::get_usize_or(&map, "loser_downscale", 2)?,
            loser_noise_sigma: kv::get_f64_or(&map, "loser_noise_sigma", 0.05)?,
            config_echo: text.to_string(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_file_with_seed(path, 42)
    }

    pub fn from_file_with_seed(path: impl AsRef<Path>, default_seed: u64) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text_with_seed(&text, default_seed)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sobolev_s >= 0.0) {
            return Err(Error::Config("sobolev_s must be >= 0".into()));
        }
        if !(self.beta > 0.0) {
            return Err(Error::Config("beta must be > 0".into()));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be >= 1".into()));
        }
        if !(self.horizon > 0.0 && self.horizon <= DEFAULT_T_MAX) {
            return Err(Error::Config(format!(
                "horizon must be in (0, {DEFAULT_T_MAX}]"
            )));
        }
        if self.eval_count == 0 {
            return Err(Error::Config("eval_count must be >= 1".into()));
        }
        Ok(())
    }

    /// Canonical text form; used as the echo for configs built in code.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "variant={}", self.variant.as_str());
        let _ = writeln!(s, "sobolev_s={}", self.sobolev_s);
        let _ = writeln!(s, "beta={}", self.beta);
        let _ = writeln!(s, "steps={}", self.steps);
        let _ = writeln!(s, "batch={}", self.batch);
        let _ = writeln!(s, "lr={}", self.lr);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "grid_h={}", self.grid.0);
        let _ = writeln!(s, "grid_w={}", self.grid.1);
        let _ = writeln!(s, "dataset={}", self.dataset.display());
        let _ = writeln!(s, "output={}", self.output.display());
        let _ = writeln!(s, "hidden={}", self.hidden);
        let _ = writeln!(s, "horizon={}", self.horizon);
        let _ = writeln!(s, "euler_steps={}", self.euler_steps);
        let _ = writeln!(s, "eval_count={}", self.eval_count);
        let _ = writeln!(s, "loser_blur_sigma={}", self.loser_blur_sigma);
        let _ = writeln!(s, "loser_downscale={}", self.loser_downscale);
        let _ = writeln!(s, "loser_noise_sigma={}", self.loser_noise_sigma);
        s
    }

    fn loser_degrade(&self) -> DegradeConfig {
        DegradeConfig {
            blur_sigma: self.loser_blur_sigma,
            downscale_factor: self.loser_downscale,
            noise_sigma: self.loser_noise_sigma,
        }
    }
}

/// Loss curve, final metrics, config echo, wall time.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub loss_curve: Vec<(usize, f64)>,
    pub final_psnr: f64,
    pub final_lsd: f64,
    pub final_psd_slope: f64,
    pub config_echo: String,
    pub wall_seconds: f64,
}

impl RunReport {
    /// Plain-text serialization: key=value header, blank line, CSV loss curve.
    ///
    /// Wall time is deliberately not serialized so that identical seeds
    /// produce byte-identical run outputs; it is reported on stderr instead.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "final_psnr={}", self.final_psnr);
        let _ = writeln!(s, "final_lsd={}", self.final_lsd);
        let _ = writeln!(s, "final_psd_slope={}", self.final_psd_slope);
        let _ = writeln!(s, "steps={}", self.loss_curve.len());
        let _ = writeln!(s);
        let _ = writeln!(s, "step,loss");
        for (step, loss) in &self.loss_curve {
            let _ = writeln!(s, "{step},{loss}");
        }
        s
    }
}

/// Splits a dataset into (training, held-out evaluation) slices.
fn split_pairs(pairs: &[DataPair], eval_count: usize) -> Result<(&[DataPair], &[DataPair])> {
    if pairs.len() <= eval_count {
        return Err(Error::Config(format!(
            "dataset of {} pairs cannot hold out {eval_count} for evaluation",
            pairs.len()
        )));
    }
    let cut = pairs.len() - eval_count;
    Ok((&pairs[..cut], &pairs[cut..]))
}

fn load_and_check(cfg: &ExperimentConfig) -> Result<Vec<DataPair>> {
    let (pairs, manifest) = load_dataset(&cfg.dataset)?;
    if manifest.grid != cfg.grid {
        return Err(Error::Config(format!(
            "config grid {}x{} does not match dataset grid {}x{}",
            cfg.grid.0, cfg.grid.1, manifest.grid.0, manifest.grid.1
        )));
    }
    Ok(pairs)
}

/// One sampled training item: dataset index, noise realization, time.
struct DrawnItem {
    index: usize,
    noise: Field2D,
    t: f64,
}

/// Draws `batch` items; per item exactly (1 + H·W + 1) generator draws when
/// H·W is even, which the shared-noise contract tests count.
fn draw_batch(
    rng: &mut SplitMix64,
    n_pairs: usize,
    batch: usize,
    grid: (usize, usize),
    horizon: f64,
) -> Vec<DrawnItem> {
    (0..batch)
        .map(|_| {
            let index = rng.below(n_pairs);
            let mut noise = Field2D::zeros(grid.0, grid.1);
            rng.fill_normal(noise.as_mut_slice());
            let t = rng.uniform(0.0, horizon);
            DrawnItem { index, noise, t }
        })
        .collect()
}

/// CFM pretraining: trains the velocity network toward the marginal target.
pub fn run_sft(cfg: &ExperimentConfig) -> Result<(FieldParams, RunReport)> {
    let started = Instant::now();
    let pairs = load_and_check(cfg)?;
    let (train, held_out) = split_pairs(&pairs, cfg.eval_count)?;
    let mut policy = FieldParams::init(cfg.grid, cfg.hidden, derive_seed(cfg.seed, 1))?;
    let mut rng = SplitMix64::new(derive_seed(cfg.seed, 0));
    let mut adam = AdamState::new(policy.param_count());
    let adam_cfg = AdamConfig::with_lr(cfg.lr);
    let cells = (cfg.grid.0 * cfg.grid.1) as f64;
    let mut curve = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let mut grads = vec![0.0; policy.param_count()];
        let mut loss = 0.0;
        let items = draw_batch(&mut rng, train.len(), cfg.batch, cfg.grid, cfg.horizon);
        for item in &items {
            let pair = &train[item.index];
            let xt = interpolate(&item.noise, &pair.target, item.t)?;
            let (v, cache) = policy.forward_cached(&xt, &pair.cond, item.t)?;
            let target = target_velocity_marginal(&item.noise, &pair.target)?;
            let diff = v.sub(&target)?;
            loss += diff.l2_norm_sq() / cells / cfg.batch as f64;
            let upstream = diff.scale(2.0 / cells);
            policy.backward_acc(&upstream, &cache, 1.0 / cfg.batch as f64, &mut grads)?;
        }
        if !loss.is_finite() {
            return Err(Error::Diverged { step });
        }
        curve.push((step, loss));
        adam_step(&mut policy, &grads, &mut adam, &adam_cfg)?;
    }

    let metrics = evaluate(&policy, held_out, &EvalConfig::from_experiment(cfg))?;
    let report = RunReport {
        loss_curve: curve,
        final_psnr: metrics.mean_psnr,
        final_lsd: metrics.mean_lsd,
        final_psd_slope: metrics.psd_slope,
        config_echo: cfg.config_echo.clone(),
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    Ok((policy, report))
}

/// Preference alignment from a frozen copy of the SFT policy.
///
/// The policy starts as an exact copy of the reference, so the step-0 loss is
/// ln 2. dpo_l2 and sdpo draw synthetic degraded losers (one per dataset
/// item, precomputed deterministically); asdpo synthesizes losers through the
/// adversary's coupled sampling.
pub fn run_alignment(
    cfg: &ExperimentConfig,
    sft_policy: &FieldParams,
    adversary: Option<&FieldParams>,
) -> Result<(FieldParams, RunReport)> {
    let started = Instant::now();
    if cfg.variant == Variant::SftOnly {
        return Err(Error::Config("run_alignment needs an alignment variant".into()));
    }
    if cfg.variant == Variant::Asdpo && adversary.is_none() {
        return Err(Error::Config("asdpo needs a trained adversary".into()));
    }
    let pairs = load_and_check(cfg)?;
    let (train, held_out) = split_pairs(&pairs, cfg.eval_count)?;
    let reference = sft_policy.clone();
    let mut policy = sft_policy.clone();
    let op = make_sobolev(cfg.sobolev_s, cfg.grid.0, cfg.grid.1)?;

    // Deterministic synthetic losers, one per training pair.
    let losers: Vec<Field2D> = {
        let mut rng = SplitMix64::new(derive_seed(cfg.seed, 3));
        let deg = cfg.loser_degrade();
        train
            .iter()
            .map(|p| degrade(&p.target, &deg, &mut rng))
            .collect::<Result<_>>()?
    };

    let mut rng = SplitMix64::new(derive_seed(cfg.seed, 0));
    let mut adam = AdamState::new(policy.param_count());
    let adam_cfg = AdamConfig::with_lr(cfg.lr);
    let mut curve = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let items = draw_batch(&mut rng, train.len(), cfg.batch, cfg.grid, cfg.horizon);
        let eval = match cfg.variant {
            Variant::DpoL2 | Variant::Sdpo => {
                let batch = PreferenceBatch::new(
                    items
                        .into_iter()
                        .map(|item| PreferenceItem {
                            cond: train[item.index].cond.clone(),
                            winner: train[item.index].target.clone(),
                            loser: losers[item.index].clone(),
                            noise: item.noise,
                            t: item.t,
                        })
                        .collect(),
                    cfg.beta,
                )?;
                if cfg.variant == Variant::Sdpo {
                    sdpo_loss(&batch, &policy, &reference, &op)?
                } else {
                    dpo_l2_loss(&batch, &policy, &reference)?
                }
            }
            Variant::Asdpo => {
                let batch = CoupledBatch::new(
                    items
                        .into_iter()
                        .map(|item| CoupledItem {
                            cond: train[item.index].cond.clone(),
                            winner: train[item.index].target.clone(),
                            noise: item.noise,
                            t: item.t,
                        })
                        .collect(),
                    cfg.beta,
                )?;
                asdpo_loss(&batch, &policy, &reference, adversary.unwrap(), &op)?
            }
            Variant::SftOnly => unreachable!(),
        };
        if !eval.loss.is_finite() {
            return Err(Error::Diverged { step });
        }
        curve.push((step, eval.loss));
        adam_step(&mut policy, &eval.grads, &mut adam, &adam_cfg)?;
    }

    debug_assert_eq!(reference.as_slice(), sft_policy.as_slice());
    let metrics = evaluate(&policy, held_out, &EvalConfig::from_experiment(cfg))?;
    let report = RunReport {
        loss_curve: curve,
        final_psnr: metrics.mean_psnr,
        final_lsd: metrics.mean_lsd,
        final_psd_slope: metrics.psd_slope,
        config_echo: cfg.config_echo.clone(),
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    Ok((policy, report))
}

/// Evaluation settings: fresh noise from the fixed eval seed, Euler schedule.
#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub euler_steps: usize,
    pub seed: u64,
    /// Dynamic range of the normalized images ([−1, 1] → 2).
    pub peak: f64,
}

impl EvalConfig {
    pub fn from_experiment(cfg: &ExperimentConfig) -> Self {
        EvalConfig {
            euler_steps: cfg.euler_steps,
            seed: derive_seed(cfg.seed, 2),
            peak: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PairMetrics {
    pub index: usize,
    pub psnr: f64,
    pub lsd: f64,
}

/// Per-pair and mean PSNR/LSD, plus the PSD slope of the reconstructions.
#[derive(Debug, Clone)]
pub struct MetricTable {
    pub rows: Vec<PairMetrics>,
    pub mean_psnr: f64,
    pub mean_lsd: f64,
    pub psd_slope: f64,
}

impl MetricTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("pair,psnr,lsd\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{}", r.index, r.psnr, r.lsd);
        }
        let _ = writeln!(s, "mean,{},{}", self.mean_psnr, self.mean_lsd);
        s
    }
}

/// Reconstructs each pair from fresh noise with the policy and scores it.
pub fn evaluate(
    policy: &dyn VelocityField,
    pairs: &[DataPair],
    cfg: &EvalConfig,
) -> Result<MetricTable> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("evaluation pairs"));
    }
    let mut rng = SplitMix64::new(cfg.seed);
    let traj = TrajectoryConfig {
        steps: cfg.euler_steps,
        ..Default::default()
    };
    let mut rows = Vec::with_capacity(pairs.len());
    let mut recons = Vec::with_capacity(pairs.len());
    for (i, pair) in pairs.iter().enumerate() {
        let mut x0 = Field2D::zeros(pair.target.height(), pair.target.width());
        rng.fill_normal(x0.as_mut_slice());
        let recon = euler_integrate(policy, &x0, &pair.cond, &traj)?;
        rows.push(PairMetrics {
            index: i + 1,
            psnr: psnr(&recon, &pair.target, cfg.peak)?,
            lsd: log_spectral_distance(&recon, &pair.target)?,
        });
        recons.push(recon);
    }
    let mean_psnr = rows.iter().map(|r| r.psnr).sum::<f64>() / rows.len() as f64;
    let mean_lsd = rows.iter().map(|r| r.lsd).sum::<f64>() / rows.len() as f64;
    let psd_slope = estimate_psd(&recons)?.slope_fit().unwrap_or(f64::NAN);
    Ok(MetricTable {
        rows,
        mean_psnr,
        mean_lsd,
        psd_slope,
    })
}

/// One row of the Sobolev-order sweep.
#[derive(Debug, Clone, Copy)]
pub struct SweepRow {
    pub s: f64,
    pub psnr: f64,
    pub lsd: f64,
    pub psd_slope_err: f64,
}

pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("s,psnr,lsd,psd_slope_err\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.s, r.psnr, r.lsd, r.psd_slope_err);
    }
    s
}

/// Trains the SFT policy once, aligns it per Sobolev order, and scores each
/// aligned policy on the held-out pairs. `target_slope` is the dataset's −α.
pub fn run_s_sweep(
    base: &ExperimentConfig,
    s_values: &[f64],
    target_slope: f64,
) -> Result<Vec<SweepRow>> {
    if s_values.len() < 2 {
        return Err(Error::Config("s sweep needs at least two values".into()));
    }
    let mut sft_cfg = base.clone();
    sft_cfg.variant = Variant::SftOnly;
    let (sft, _) = run_sft(&sft_cfg)?;
    let pairs = load_and_check(base)?;
    let (_, held_out) = split_pairs(&pairs, base.eval_count)?;

    let mut rows = Vec::with_capacity(s_values.len());
    for &s in s_values {
        let mut cfg = base.clone();
        cfg.variant = Variant::Sdpo;
        cfg.sobolev_s = s;
        let (aligned, _) = run_alignment(&cfg, &sft, None)?;
        let metrics = evaluate(&aligned, held_out, &EvalConfig::from_experiment(base))?;
        rows.push(SweepRow {
            s,
            psnr: metrics.mean_psnr,
            lsd: metrics.mean_lsd,
            psd_slope_err: (metrics.psd_slope - target_slope).abs(),
        });
    }
    Ok(rows)
}

/// Builds adversary-training states from dataset pairs: on-path states x_t
/// from fresh noise with their (cond, t, x₁) energy anchors. Pairs are
/// cycled in order; noise and times come from the given seed.
pub fn train_adversary_samples(
    pairs: &[DataPair],
    count: usize,
    horizon: f64,
    seed: u64,
) -> Result<(
    Vec<crate::adversary::AdversarySample>,
    Vec<(Field2D, f64, Field2D)>,
)> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("adversary sample pairs"));
    }
    if !(horizon > 0.0 && horizon <= DEFAULT_T_MAX) {
        return Err(Error::Config(format!(
            "horizon must be in (0, {DEFAULT_T_MAX}]"
        )));
    }
    let mut rng = SplitMix64::new(seed);
    let mut samples = Vec::with_capacity(count);
    let mut anchors = Vec::with_capacity(count);
    for i in 0..count {
        let pair = &pairs[i % pairs.len()];
        let (h, w) = pair.target.shape();
        let mut x0 = Field2D::zeros(h, w);
        rng.fill_normal(x0.as_mut_slice());
        let t = rng.uniform(0.0, horizon);
        let state = interpolate(&x0, &pair.target, t)?;
        samples.push(crate::adversary::AdversarySample {
            state,
            cond: pair.cond.clone(),
            t,
        });
        anchors.push((pair.cond.clone(), t, pair.target.clone()));
    }
    Ok((samples, anchors))
}

/// Writes a run's primary outputs: byte-exact config echo, the report
/// (header + loss-curve CSV), and the final parameter file.
pub fn write_run_outputs(
    dir: impl AsRef<Path>,
    report: &RunReport,
    params: &FieldParams,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let config_path = dir.join("config.txt");
    fs::write(&config_path, &report.config_echo).map_err(|e| Error::io(config_path, e))?;
    let report_path = dir.join("report.txt");
    fs::write(&report_path, report.to_text()).map_err(|e| Error::io(report_path, e))?;
    write_params(dir.join("params.sobprm"), params)?;
    Ok(())
}

//! Command-line driver: dataset generation, training, alignment, evaluation,
//! spectral diagnostics, and the verification suites.
//!
//! Machine-readable output goes to stdout only; logs go to stderr. Exit
//! codes: 0 success, 1 usage, 2 i/o, 3 validation, 4 verification failure.
//! All randomness flows from --seed (or an explicit seed key in a config
//! file) through documented per-component derivation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sobflow::adversary::{
    capacity_sweep, default_capacity_task, optimal_delta, pgd_minimize, AdversaryState,
    AdversaryTrainConfig, PolicyEnergySet, QuadraticEnergy, TrustRegion,
};
use sobflow::error::Error;
use sobflow::field::Field2D;
use sobflow::harness::{
    evaluate, run_alignment, run_s_sweep, run_sft, sweep_to_csv, train_adversary_samples,
    write_run_outputs, EvalConfig, ExperimentConfig, Variant,
};
use sobflow::io::{read_params, write_params};
use sobflow::kv;
use sobflow::net::FieldParams;
use sobflow::noise::{estimate_psd, NoiseSampler};
use sobflow::rng::{derive_seed, SplitMix64};
use sobflow::spectral::{dct2_forward, make_sobolev};
use sobflow::synth::{build_dataset, load_dataset, DegradeConfig, SynthConfig};
use sobflow::Result;

const EXIT_USAGE: u8 = 1;
const EXIT_IO: u8 = 2;
const EXIT_VALIDATION: u8 = 3;
const EXIT_VERIFICATION: u8 = 4;

#[derive(Parser)]
#[command(name = "sobflow", version, about = "Sobolev-geometric preference optimization toolkit")]
struct Cli {
    /// Root seed; every random stream derives from it.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a synthetic (lq, hq) dataset archive.
    GenData {
        #[arg(long)]
        config: PathBuf,
    },
    /// Flow-matching pretraining; writes params + report to the output dir.
    Sft {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train the adversary against a frozen policy.
    TrainAdversary {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        policy: PathBuf,
    },
    /// Preference alignment from a frozen SFT policy.
    Align {
        #[arg(long)]
        variant: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        adversary: Option<PathBuf>,
    },
    /// Evaluate a policy on a dataset; CSV on stdout.
    Eval {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 28)]
        euler_steps: usize,
    },
    /// Verification suites (nonzero exit on failure).
    #[command(subcommand)]
    Verify(VerifyCmd),
    /// Radial PSD of an archive's hq fields; CSV written to --out.
    Psd {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sobolev-order sweep; CSV table on stdout.
    SweepS {
        /// Comma-separated s values, e.g. "0,1.5".
        #[arg(long)]
        values: String,
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Subcommand)]
enum VerifyCmd {
    /// Closed-form worst-case perturbation vs projected-gradient oracle.
    Prop1(Prop1Args),
    /// Parametric adversary consistency and capacity saturation.
    Prop2(Prop2Args),
    /// Parseval, operator algebra, and coloring-PSD suite.
    Spectral,
}

#[derive(Args)]
struct Prop1Args {
    #[arg(long, default_value_t = 1.5)]
    s: f64,
    #[arg(long, default_value_t = 0.05)]
    eps: f64,
}

#[derive(Args)]
struct Prop2Args {
    /// Comma-separated hidden widths.
    #[arg(long, default_value = "2,8,32,128")]
    widths: String,
}

/// Verification failures carry their own exit code.
struct VerifyFailure;

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Io { .. } => EXIT_IO,
        _ => EXIT_VALIDATION,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    return ExitCode::SUCCESS;
                }
                _ => {
                    eprintln!("{e}");
                    return ExitCode::from(EXIT_USAGE);
                }
            }
        }
    };
    let seed = cli.seed;
    let result = match cli.command {
        Command::GenData { config } => cmd_gen_data(&config, seed),
        Command::Sft { config } => cmd_sft(&config, seed),
        Command::TrainAdversary { config, policy } => cmd_train_adversary(&config, &policy, seed),
        Command::Align {
            variant,
            config,
            policy,
            adversary,
        } => {
            let variant = match Variant::parse(&variant) {
                Ok(v) if v != Variant::SftOnly => v,
                _ => {
                    eprintln!("usage: --variant must be one of dpo-l2 | sdpo | asdpo");
                    return ExitCode::from(EXIT_USAGE);
                }
            };
            if variant == Variant::Asdpo && adversary.is_none() {
                eprintln!("usage: --variant asdpo requires --adversary <path>");
                return ExitCode::from(EXIT_USAGE);
            }
            cmd_align(variant, &config, &policy, adversary.as_deref(), seed)
        }
        Command::Eval {
            policy,
            data,
            euler_steps,
        } => cmd_eval(&policy, &data, euler_steps, seed),
        Command::Verify(v) => {
            return match run_verify(v, seed) {
                Ok(Ok(())) => ExitCode::SUCCESS,
                Ok(Err(VerifyFailure)) => ExitCode::from(EXIT_VERIFICATION),
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(exit_code_for(&e))
                }
            };
        }
        Command::Psd { input, out } => cmd_psd(&input, &out),
        Command::SweepS { values, config } => cmd_sweep_s(&values, &config, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn cmd_gen_data(config: &Path, default_seed: u64) -> Result<()> {
    let text = std::fs::read_to_string(config).map_err(|e| Error::io(config, e))?;
    let map = kv::parse(&text)?;
    let synth = SynthConfig {
        spectral_slope: kv::get_f64_or(&map, "spectral_slope", 1.2)?,
        grid: (
            kv::get_usize_or(&map, "grid_h", 32)?,
            kv::get_usize_or(&map, "grid_w", 32)?,
        ),
        count: kv::get_usize(&map, "count")?,
        seed: kv::get_u64_or(&map, "seed", default_seed)?,
    };
    let deg = DegradeConfig {
        blur_sigma: kv::get_f64_or(&map, "blur_sigma", 1.0)?,
        downscale_factor: kv::get_usize_or(&map, "downscale_factor", 4)?,
        noise_sigma: kv::get_f64_or(&map, "noise_sigma", 0.05)?,
    };
    let out = PathBuf::from(kv::get_str(&map, "out")?);
    build_dataset(&synth, &deg, &out)?;
    eprintln!(
        "wrote {} pairs at {}x{} to {}",
        synth.count,
        synth.grid.0,
        synth.grid.1,
        out.display()
    );
    Ok(())
}

fn cmd_sft(config: &Path, default_seed: u64) -> Result<()> {
    let cfg = ExperimentConfig::from_file_with_seed(config, default_seed)?;
    let (policy, report) = run_sft(&cfg)?;
    write_run_outputs(&cfg.output, &report, &policy)?;
    eprintln!(
        "sft done in {:.2}s: final_psnr={} final_lsd={} outputs in {}",
        report.wall_seconds,
        report.final_psnr,
        report.final_lsd,
        cfg.output.display()
    );
    Ok(())
}

fn cmd_train_adversary(config: &Path, policy_path: &Path, default_seed: u64) -> Result<()> {
    let text = std::fs::read_to_string(config).map_err(|e| Error::io(config, e))?;
    let map = kv::parse(&text)?;
    let dataset = PathBuf::from(kv::get_str(&map, "dataset")?);
    let output = PathBuf::from(kv::get_str(&map, "output")?);
    let steps = kv::get_usize_or(&map, "steps", 2000)?;
    let lr = kv::get_f64_or(&map, "lr", 1e-2)?;
    let hidden = kv::get_usize_or(&map, "hidden", 64)?;
    let eps = kv::get_f64_or(&map, "eps", 1.0)?;
    let sobolev_s = kv::get_f64_or(&map, "sobolev_s", 1.5)?;
    let sample_count = kv::get_usize_or(&map, "sample_count", 32)?;
    let horizon = kv::get_f64_or(&map, "horizon", 0.99)?;
    let seed = kv::get_u64_or(&map, "seed", default_seed)?;

    let policy = read_params(policy_path)?;
    let (pairs, manifest) = load_dataset(&dataset)?;
    if manifest.grid != policy.grid() {
        return Err(Error::Config(format!(
            "policy grid {:?} does not match dataset grid {:?}",
            policy.grid(),
            manifest.grid
        )));
    }
    let op = make_sobolev(sobolev_s, manifest.grid.0, manifest.grid.1)?;
    let trust = TrustRegion::constant(eps)?;
    let (samples, anchors) =
        train_adversary_samples(&pairs, sample_count, horizon, derive_seed(seed, 4))?;
    let energy = PolicyEnergySet {
        policy: &policy,
        anchors,
    };
    let adversary = AdversaryState {
        params: FieldParams::init(manifest.grid, hidden, derive_seed(seed, 5))?,
        training: AdversaryTrainConfig { steps, lr },
    };
    let trained = sobflow::adversary::train_adversary(adversary, &energy, &samples, &op, &trust)?;
    write_params(&output, &trained.state.params)?;
    eprintln!(
        "adversary trained for {steps} steps: energy {} -> {} written to {}",
        trained.energy_curve.first().unwrap(),
        trained.energy_curve.last().unwrap(),
        output.display()
    );
    Ok(())
}

fn cmd_align(
    variant: Variant,
    config: &Path,
    policy_path: &Path,
    adversary_path: Option<&Path>,
    default_seed: u64,
) -> Result<()> {
    let mut cfg = ExperimentConfig::from_file_with_seed(config, default_seed)?;
    cfg.variant = variant;
    let sft = read_params(policy_path)?;
    let adversary = adversary_path.map(read_params).transpose()?;
    let (aligned, report) = run_alignment(&cfg, &sft, adversary.as_ref())?;
    write_run_outputs(&cfg.output, &report, &aligned)?;
    eprintln!(
        "{} alignment done in {:.2}s: final_psnr={} final_lsd={} outputs in {}",
        variant.as_str(),
        report.wall_seconds,
        report.final_psnr,
        report.final_lsd,
        cfg.output.display()
    );
    Ok(())
}

fn cmd_eval(policy_path: &Path, data: &Path, euler_steps: usize, seed: u64) -> Result<()> {
    let policy = read_params(policy_path)?;
    let (pairs, _) = load_dataset(data)?;
    let cfg = EvalConfig {
        euler_steps,
        seed: derive_seed(seed, 2),
        peak: 2.0,
    };
    let table = evaluate(&policy, &pairs, &cfg)?;
    print!("{}", table.to_csv());
    eprintln!("psd_slope={}", table.psd_slope);
    Ok(())
}

fn cmd_psd(input: &Path, out: &Path) -> Result<()> {
    let (pairs, _) = load_dataset(input)?;
    let fields: Vec<Field2D> = pairs.into_iter().map(|p| p.target).collect();
    let est = estimate_psd(&fields)?;
    std::fs::write(out, est.to_csv()).map_err(|e| Error::io(out, e))?;
    eprintln!(
        "psd over {} fields: slope={} written to {}",
        est.sample_count,
        est.slope_fit()?,
        out.display()
    );
    Ok(())
}

fn parse_f64_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("bad list entry {v:?}: {e}")))
        })
        .collect()
}

fn parse_usize_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<usize>()
                .map_err(|e| Error::Config(format!("bad list entry {v:?}: {e}")))
        })
        .collect()
}

fn cmd_sweep_s(values: &str, config: &Path, default_seed: u64) -> Result<()> {
    let s_values = parse_f64_list(values)?;
    let cfg = ExperimentConfig::from_file_with_seed(config, default_seed)?;
    let (_, manifest) = load_dataset(&cfg.dataset)?;
    let rows = run_s_sweep(&cfg, &s_values, -manifest.spectral_slope)?;
    print!("{}", sweep_to_csv(&rows));
    Ok(())
}

fn run_verify(cmd: VerifyCmd, seed: u64) -> Result<std::result::Result<(), VerifyFailure>> {
    match cmd {
        VerifyCmd::Prop1(args) => verify_prop1(args, seed),
        VerifyCmd::Prop2(args) => verify_prop2(args, seed),
        VerifyCmd::Spectral => verify_spectral(seed),
    }
}

fn report_check(name: &str, pass: bool, detail: &str) -> bool {
    println!("{name}: {} {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}

/// Closed form vs projected-gradient oracle on random SPD quadratics.
fn verify_prop1(args: Prop1Args, seed: u64) -> Result<std::result::Result<(), VerifyFailure>> {
    let grid = (8, 8);
    let cases = 20;
    let mut all_ok = true;
    for &s in &[0.0, args.s] {
        let op = make_sobolev(s, grid.0, grid.1)?;
        let mut min_cos = f64::INFINITY;
        let mut max_norm_err: f64 = 0.0;
        let mut max_s0_err: f64 = 0.0;
        for case in 0..cases {
            let case_seed = derive_seed(seed, 100 + 2 * case as u64);
            let mut rng = SplitMix64::new(case_seed);
            let x = Field2D::from_fn(grid.0, grid.1, |_, _| rng.normal());
            let center = Field2D::from_fn(grid.0, grid.1, |_, _| 3.0 * rng.normal());
            let energy = QuadraticEnergy::random_spd(center, derive_seed(case_seed, 1));
            let grad = sobflow::adversary::EnergyFn::grad(&energy, &x)?;
            let delta = optimal_delta(&op, &grad, args.eps)?;
            max_norm_err = max_norm_err.max((op.sobolev_norm(&delta)? - args.eps).abs());
            let oracle = pgd_minimize(&energy, &x, &op, args.eps, 200)?;
            min_cos = min_cos.min(op.sobolev_cosine(&delta, &oracle)?);
            if s == 0.0 {
                let expect = grad.scale(-args.eps / grad.l2_norm_sq().sqrt());
                let err = delta
                    .sub(&expect)?
                    .as_slice()
                    .iter()
                    .fold(0.0f64, |m, v| m.max(v.abs()));
                max_s0_err = max_s0_err.max(err);
            }
        }
        all_ok &= report_check(
            "prop1",
            min_cos > 0.999,
            &format!("s={s} cosine={min_cos:.6} over {cases} quadratic energies"),
        );
        all_ok &= report_check(
            "prop1-budget",
            max_norm_err < 1e-9,
            &format!("s={s} max |‖δ*‖_H − ε| = {max_norm_err:.3e}"),
        );
        if s == 0.0 {
            all_ok &= report_check(
                "prop1-s0",
                max_s0_err < 1e-9,
                &format!("normalized-gradient deviation {max_s0_err:.3e}"),
            );
        }
    }
    Ok(if all_ok { Ok(()) } else { Err(VerifyFailure) })
}

/// Trained-adversary consistency plus capacity saturation.
fn verify_prop2(args: Prop2Args, seed: u64) -> Result<std::result::Result<(), VerifyFailure>> {
    let widths = parse_usize_list(&args.widths)?;
    if widths.len() < 2 {
        return Err(Error::Config("prop2 needs at least two widths".into()));
    }
    let task = default_capacity_task(seed)?;
    let report = capacity_sweep(&widths, &task)?;
    for row in &report.rows {
        println!(
            "prop2-row: width={} final_energy={:.6} cosine={:.6}",
            row.width, row.final_energy, row.cosine
        );
    }
    let mut all_ok = true;
    all_ok &= report_check(
        "prop2-nondecreasing",
        report.cosine_nondecreasing,
        "cosine-to-δ* nondecreasing across widths",
    );
    let sat_ok = report.saturation_width.map(|w| w <= 8).unwrap_or(false);
    all_ok &= report_check(
        "prop2-saturation",
        sat_ok,
        &format!("saturation width {:?} (need ≤ 8)", report.saturation_width),
    );
    Ok(if all_ok { Ok(()) } else { Err(VerifyFailure) })
}

/// Parseval, operator algebra, metric equivalence, coloring, and flatness.
fn verify_spectral(seed: u64) -> Result<std::result::Result<(), VerifyFailure>> {
    let mut all_ok = true;

    let shapes = [(8, 8), (16, 16), (32, 32), (33, 17)];
    let mut max_parseval: f64 = 0.0;
    let mut max_inv: f64 = 0.0;
    let mut max_metric: f64 = 0.0;
    for (si, &(h, w)) in shapes.iter().enumerate() {
        let op = make_sobolev(1.5, h, w)?;
        let mut rng = SplitMix64::new(derive_seed(seed, 200 + si as u64));
        for _ in 0..100 {
            let f = Field2D::from_fn(h, w, |_, _| rng.normal());
            let spec = dct2_forward(&f)?;
            let rel = (f.l2_norm_sq() - spec.energy()).abs() / f.l2_norm_sq();
            max_parseval = max_parseval.max(rel);

            let back = op.apply_sigma_inv(&op.apply_sigma(&f)?)?;
            let inv_err = back
                .sub(&f)?
                .as_slice()
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()));
            max_inv = max_inv.max(inv_err);

            let norm = op.sobolev_norm_sq(&f)?;
            let via = f.l2_inner(&op.apply_sigma_inv(&f)?)?;
            max_metric = max_metric.max((norm - via).abs() / norm.max(1.0));
        }
    }
    all_ok &= report_check(
        "spectral-parseval",
        max_parseval < 1e-10,
        &format!("max relative error {max_parseval:.3e} over 100 fields x {} shapes", shapes.len()),
    );
    all_ok &= report_check(
        "spectral-inverse",
        max_inv < 1e-9,
        &format!("max |Σ_s⁻¹Σ_s f − f| = {max_inv:.3e}"),
    );
    all_ok &= report_check(
        "spectral-metric",
        max_metric < 1e-9,
        &format!("max |‖f‖²_H − ⟨f, Σ_s⁻¹f⟩| rel = {max_metric:.3e}"),
    );

    // Coloring: empirical spectral variance vs D_s(ω), 5% per bin at 1e5
    // samples, 16x16.
    for (oi, &s) in [0.5, 1.5, 3.0].iter().enumerate() {
        let op = std::sync::Arc::new(make_sobolev(s, 16, 16)?);
        let mut sampler =
            NoiseSampler::with_operator(derive_seed(seed, 300 + oi as u64), op.clone());
        let n = 100_000;
        let mut acc = vec![0.0f64; 16 * 16];
        for _ in 0..n {
            let f = sampler.sample_colored()?;
            let spec = dct2_forward(&f)?;
            for (a, c) in acc.iter_mut().zip(spec.as_slice()) {
                *a += c * c;
            }
        }
        let mut worst: f64 = 0.0;
        for kx in 0..16 {
            for ky in 0..16 {
                let var = acc[kx * 16 + ky] / n as f64;
                let expect = op.weight(kx, ky);
                worst = worst.max((var - expect).abs() / expect);
            }
        }
        all_ok &= report_check(
            "spectral-coloring",
            worst < 0.05,
            &format!("s={s} worst per-bin variance error {:.2}% at 1e5 samples", worst * 100.0),
        );
    }

    // White-noise flatness at 1e4 samples, 32x32.
    let mut sampler = NoiseSampler::new(derive_seed(seed, 400), 32, 32);
    let fields: Vec<Field2D> = (0..10_000).map(|_| sampler.sample_white()).collect();
    let ratio = estimate_psd(&fields)?.flatness_ratio()?;
    all_ok &= report_check(
        "spectral-flatness",
        ratio < 1.5,
        &format!("white radial max/min = {ratio:.4} at 1e4 samples"),
    );

    Ok(if all_ok { Ok(()) } else { Err(VerifyFailure) })
}


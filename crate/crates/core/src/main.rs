use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;

use licattack::attack::{pgd_attack, AttackConfig, AttackMetrics, Init, LossTerms, DEFAULT_ETA, DEFAULT_STEPS};
use licattack::codec::{train_codec, Codec, CodecModel, QuantizerKind, TrainOptions, TrainReport};
use licattack::frequency::Band;
use licattack::harness::{
    check_feasibility, compare_ic, emit_figures, fit_to_stride, load_dataset, run_experiment, write_attack_artifacts,
    write_json_atomic, CropInfo, ExperimentConfig, OnError, QualityReport,
};
use licattack::imaging::load_png;
use licattack::{Error, Result};

#[derive(Parser)]
#[command(name = "licattack", version, about = "Reconstruction-distortion attacks on learned image codecs")]
struct Cli {
    /// Root for outputs when no --out is given.
    #[arg(long, env = "LICATTACK_OUT", default_value = "runs", global = true)]
    output_root: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a factorized codec on a directory of PNGs.
    Train(TrainArgs),
    /// Attack one image.
    Attack(AttackArgs),
    /// Run an experiment grid and write the quality report.
    Evaluate(GridArgs),
    /// Run an experiment grid with and without IC and tabulate AE MS-SSIM.
    CompareIc(GridArgs),
    /// Draw contact sheets from a report.
    Figures(FigureArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    lambda: f64,
    #[arg(long)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 32)]
    channels: usize,
    #[arg(long, default_value_t = 64)]
    latent_channels: usize,
    /// Number of stride-2 stages.
    #[arg(long, default_value_t = 3)]
    depth: usize,
    /// Convolutions per transform; those beyond --depth have stride 1.
    #[arg(long, default_value_t = 4)]
    layers: usize,
    #[arg(long, default_value_t = 64)]
    patch_size: usize,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value = "abort")]
    on_error: String,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    image: PathBuf,
    /// Budget on the 0–255 scale.
    #[arg(long)]
    eps: f64,
    #[arg(long, default_value_t = DEFAULT_ETA)]
    eta: f64,
    #[arg(long, default_value_t = DEFAULT_STEPS)]
    steps: usize,
    /// Step size in normalized units; defaults to 2.5·(eps/255)/steps.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, overrides_with = "no_ic")]
    ic: bool,
    #[arg(long = "no-ic")]
    no_ic: bool,
    #[arg(long, default_value = "low")]
    ic_band: Band,
    #[arg(long, default_value_t = 0.5)]
    ic_fraction: f64,
    #[arg(long, default_value = "cubic")]
    quantizer: QuantizerKind,
    #[arg(long, default_value = "zero")]
    init: Init,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Return the last iterate instead of the best one.
    #[arg(long)]
    no_best_tracking: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config's worker count.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct FigureArgs {
    #[arg(long)]
    report: PathBuf,
    /// Experiment output directory holding the artifacts; defaults to the
    /// report's directory.
    #[arg(long)]
    artifacts: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct AttackSidecar<'a> {
    image: String,
    checkpoint: String,
    crop: Option<CropInfo>,
    config: &'a AttackConfig,
    metrics: AttackMetrics,
    loss: LossTerms,
    best_step: usize,
    steps_executed: usize,
    linf_8bit: u8,
    delta_range_8bit: [f64; 2],
    trace: &'a [LossTerms],
}

fn parse_policy(s: &str) -> Result<OnError> {
    match s {
        "abort" => Ok(OnError::Abort),
        "continue" => Ok(OnError::Continue),
        other => Err(Error::Config(format!("unknown error policy '{other}'"))),
    }
}

fn train(args: TrainArgs) -> Result<()> {
    let data = load_dataset(&args.data, parse_policy(&args.on_error)?)?;
    let images: Vec<_> = data.into_iter().map(|n| n.image).collect();
    let opts = TrainOptions {
        patch_size: args.patch_size,
        batch_size: args.batch_size,
        learning_rate: args.lr,
        channels: args.channels,
        latent_channels: args.latent_channels,
        depth: args.depth,
        layers: args.layers,
        ..TrainOptions::new(args.lambda, args.steps, args.seed)
    };
    info!("training on {} images: {opts:?}", images.len());
    let (model, report): (CodecModel<f32>, TrainReport) = train_codec(&images, &opts)?;
    model.save(&args.out)?;
    let log_path = args.out.with_extension("train.json");
    write_json_atomic(&log_path, &report)?;
    println!(
        "saved {} (training MSE {:.6} -> {:.6})",
        args.out.display(),
        report.initial_mse,
        report.final_mse
    );
    Ok(())
}

fn attack(args: AttackArgs, root: &Path) -> Result<()> {
    let model = CodecModel::<f32>::load(&args.ckpt)?;
    let image = load_png(&args.image)?;
    let stem = args
        .image
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into());
    let (x, crop) = fit_to_stride(&image, model.stride())?;
    let config = AttackConfig {
        epsilon: args.eps,
        eta: args.eta,
        steps: args.steps,
        step_size: args.alpha,
        ic_enabled: !args.no_ic,
        ic_band: args.ic_band,
        ic_fraction: args.ic_fraction,
        quantizer: args.quantizer,
        init: args.init,
        seed: args.seed,
        best_tracking: !args.no_best_tracking,
    };
    let result = pgd_attack(&x, &model, &config)?;
    let out = args.out.unwrap_or_else(|| root.join("attack").join(&stem));
    let delta_range_8bit = write_attack_artifacts(&out, &x, &result)?;
    let linf_8bit = check_feasibility(&out, config.epsilon)?;
    let m = result.evaluation.metrics;
    write_json_atomic(
        &out.join("attack.json"),
        &AttackSidecar {
            image: args.image.display().to_string(),
            checkpoint: args.ckpt.display().to_string(),
            crop,
            config: &config,
            metrics: m,
            loss: result.loss,
            best_step: result.best_step,
            steps_executed: result.steps_executed,
            linf_8bit,
            delta_range_8bit,
            trace: &result.trace,
        },
    )?;
    println!("artifacts in {}", out.display());
    println!(
        "reconstructed original: PSNR {:.2} dB, MS-SSIM {:.4}",
        m.reconstructed_original.psnr, m.reconstructed_original.ms_ssim
    );
    println!(
        "adversarial example:    PSNR {:.2} dB, MS-SSIM {:.4} (max |δ| {linf_8bit}/255)",
        m.adversarial.psnr, m.adversarial.ms_ssim
    );
    println!(
        "reconstructed AE:       PSNR {:.2} dB, MS-SSIM {:.4}",
        m.reconstructed_adversarial.psnr, m.reconstructed_adversarial.ms_ssim
    );
    println!(
        "degradation:            ↓PSNR {:.2} dB, ↓MS-SSIM {:.4}",
        m.degradation.psnr, m.degradation.ms_ssim
    );
    Ok(())
}

fn grid_config(args: &GridArgs) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(out) = &args.out {
        cfg.output = std::path::absolute(out).map_err(|source| Error::Io {
            path: out.clone(),
            source,
        })?;
    }
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    Ok(cfg)
}

fn evaluate(args: GridArgs) -> Result<()> {
    let cfg = grid_config(&args)?;
    let report = run_experiment(&cfg)?;
    print!("{}", report.to_markdown());
    println!("report written to {}", cfg.output_dir().display());
    if report.failures.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(format!("{} cell(s) failed", report.failures.len())))
    }
}

fn compare(args: GridArgs) -> Result<()> {
    let cfg = grid_config(&args)?;
    let table = compare_ic(&cfg)?;
    print!("{}", table.to_markdown());
    println!("tables written to {}", cfg.output_dir().display());
    Ok(())
}

fn figures(args: FigureArgs) -> Result<()> {
    let report = QualityReport::load(&args.report)?;
    let base = args.report.parent().map(Path::to_path_buf).unwrap_or_default();
    let artifacts = args.artifacts.unwrap_or_else(|| base.clone());
    let out = args.out.unwrap_or_else(|| base.join("figures"));
    let summary = emit_figures(&report, &artifacts, &out)?;
    for s in &summary.sheets {
        println!("wrote {}", s.display());
    }
    for m in &summary.missing {
        eprintln!("missing: {m}");
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Train(a) => train(a),
        Command::Attack(a) => attack(a, &cli.output_root),
        Command::Evaluate(a) => evaluate(a),
        Command::CompareIc(a) => compare(a),
        Command::Figures(a) => figures(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

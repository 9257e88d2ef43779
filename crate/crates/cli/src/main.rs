use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use parvo_core::attack::{reconstruct, ReconstructionResult};
use parvo_core::client::LeakedUpdate;
use parvo_core::data::{read_image, resize_bilinear, to_grayscale, write_image};
use parvo_core::experiment::{
    image_extension, make_leak, run_ablation, run_attack, run_modes, run_sweep, verify_report, ExperimentConfig,
    ExperimentReport,
};
use parvo_core::metrics::QualityScore;
use parvo_core::model::{EncoderKind, PeftMode};
use parvo_core::{Model64, Tensor64};

/// Exit status for a metrics size mismatch without `--resize`.
const SIZE_MISMATCH: u8 = 2;

#[derive(Parser)]
#[command(name = "parvo", version, about = "Gradient inversion of leaked PEFT updates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment config; every field is optional.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed; run k uses seed + k.
    #[arg(long, env = "PARVO_SEED")]
    seed: Option<u64>,
}

#[derive(Args, Clone)]
struct Batch {
    #[command(flatten)]
    common: Common,
    /// Parallel runs (default: available cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Perform one seeded client step and write the intercepted update.
    Leak {
        #[command(flatten)]
        common: Common,
        /// Run index whose seed and image are used.
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
    /// Attack a batch of seeded runs, or a single leak file.
    Attack {
        #[command(flatten)]
        batch: Batch,
        /// Leak file from `parvo leak`; requires --model.
        #[arg(long, requires = "model")]
        leak: Option<PathBuf>,
        /// Server-side model the leak was produced against.
        #[arg(long, requires = "leak")]
        model: Option<PathBuf>,
        /// PEFT modes to run on identical seeds (comma separated).
        #[arg(long, value_delimiter = ',', conflicts_with = "leak")]
        modes: Vec<PeftMode>,
    },
    /// Attack every configured encoder structure on identical seeds.
    Sweep {
        #[command(flatten)]
        batch: Batch,
        /// Structures to visit (comma separated), overriding the config.
        #[arg(long, value_delimiter = ',')]
        structures: Vec<EncoderKind>,
    },
    /// Raw transfer, MIP without label prediction, and full MIP.
    Ablate {
        #[command(flatten)]
        batch: Batch,
    },
    /// Score a reconstruction against a reference image.
    Metrics {
        reference: PathBuf,
        test: PathBuf,
        /// Resize the test image to the reference size.
        #[arg(long)]
        resize: bool,
    },
    /// Recompute a report's aggregates from its rows.
    VerifyReport { dir: PathBuf },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn jobs(batch: &Batch) -> usize {
    batch
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn summarize(report: &ExperimentReport, dir: &Path) {
    let failed = report.rows.iter().filter(|r| !r.error.is_empty()).count();
    for m in report.aggregates.iter().filter(|r| r.run == parvo_core::experiment::MEAN) {
        println!(
            "{} {} {}: mean psnr {:.2} dB, ssim {:.4}, converged {:.0}%",
            m.mode,
            m.structure,
            m.arm,
            m.psnr_db.unwrap_or(f64::NAN),
            m.ssim.unwrap_or(f64::NAN),
            100.0 * m.converged_eval.unwrap_or(f64::NAN)
        );
    }
    if failed > 0 {
        println!("{failed} of {} runs failed; see the error column", report.rows.len());
    }
    println!("report written to {}", dir.display());
}

fn cmd_leak(common: &Common, index: usize) -> Result<()> {
    let cfg = load_config(common)?;
    cfg.validate()?;
    let data = cfg
        .dataset
        .load::<f64>(cfg.image_size)?
        .prepared(cfg.channels, cfg.image_size, cfg.image_size)?;
    let (victim, pick) = make_leak(&cfg, &data, index, cfg.peft_mode, cfg.encoder.kind)?;
    let dir = &cfg.output_dir;
    create_dir(dir)?;
    victim.leak.save(&dir.join("leak.bin"))?;
    victim.model.save(&dir.join("model.json"))?;
    write_image(&victim.image, &dir.join(format!("target.{}", image_extension(cfg.channels))))?;
    println!(
        "leaked {} update for dataset image {pick} (class {}) to {}",
        cfg.peft_mode,
        victim.label,
        dir.display()
    );
    Ok(())
}

fn cmd_attack_single(batch: &Batch, leak_path: &Path, model_path: &Path) -> Result<()> {
    let cfg = load_config(&batch.common)?;
    let model = Model64::load(model_path).with_context(|| format!("loading {}", model_path.display()))?;
    let (leak, _) = LeakedUpdate::<f64>::load(leak_path, Some(&model))
        .with_context(|| format!("loading {}", leak_path.display()))?;
    let mut attack = cfg.attack.clone();
    attack.seed = cfg.seed;
    let result: ReconstructionResult<f64> = reconstruct(&leak, &model, &attack)?;
    let dir = &cfg.output_dir;
    create_dir(dir)?;
    let ext = image_extension(model.config().channels);
    write_image(&result.x_star, &dir.join(format!("recon.{ext}")))?;
    let json = dir.join("result.json");
    std::fs::write(&json, serde_json::to_string_pretty(&result)?).with_context(|| format!("writing {}", json.display()))?;
    println!(
        "predicted class {} ({}), {} iterations, final loss {:.3e}",
        result.predicted_label,
        model.class_names()[result.predicted_label],
        result.iterations_run,
        result.loss_curve.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn cmd_metrics(reference: &Path, test: &Path, resize: bool) -> Result<ExitCode> {
    let load = |p: &Path| read_image::<f64>(p).with_context(|| format!("reading {}", p.display()));
    let (mut a, mut b): (Tensor64, Tensor64) = (load(reference)?, load(test)?);
    if a.shape()[0] != b.shape()[0] {
        a = to_grayscale(&a)?;
        b = to_grayscale(&b)?;
    }
    if a.shape() != b.shape() {
        if !resize {
            eprintln!(
                "size mismatch: {:?} vs {:?} (pass --resize to rescale the test image)",
                a.shape(),
                b.shape()
            );
            return Ok(ExitCode::from(SIZE_MISMATCH));
        }
        b = resize_bilinear(&b, a.shape()[1], a.shape()[2])?;
    }
    let q = QualityScore::evaluate(&b, &a)?;
    println!("psnr={:.2} ssim={:.4}", q.psnr_db, q.ssim);
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(dir: &Path) -> Result<ExitCode> {
    let v = verify_report(dir)?;
    for m in &v.mismatches {
        eprintln!("mismatch: {m}");
    }
    if v.ok() {
        println!("ok: {} rows, {} derived rows recomputed exactly", v.rows, v.checked);
        Ok(ExitCode::SUCCESS)
    } else {
        println!("FAILED: {} of {} derived rows differ", v.mismatches.len(), v.checked);
        Ok(ExitCode::FAILURE)
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Leak { common, index } => cmd_leak(&common, index)?,
        Command::Attack {
            batch,
            leak: Some(leak),
            model: Some(model),
            ..
        } => cmd_attack_single(&batch, &leak, &model)?,
        Command::Attack { batch, modes, .. } => {
            let cfg = load_config(&batch.common)?;
            let report = if modes.is_empty() {
                run_attack(&cfg, jobs(&batch))?
            } else {
                run_modes(&cfg, jobs(&batch), &modes)?
            };
            summarize(&report, &cfg.output_dir);
        }
        Command::Sweep { batch, structures } => {
            let mut cfg = load_config(&batch.common)?;
            if !structures.is_empty() {
                cfg.structures = structures;
            }
            let report = run_sweep(&cfg, jobs(&batch))?;
            for r in report.sweep.iter().flatten() {
                println!("{}: conv_prob {:.2}, psnr_ratio {:.1}%", r.structure, r.conv_prob, r.psnr_ratio);
            }
            summarize(&report, &cfg.output_dir);
        }
        Command::Ablate { batch } => {
            let cfg = load_config(&batch.common)?;
            let report = run_ablation(&cfg, jobs(&batch))?;
            for r in report.ablation.iter().flatten() {
                println!(
                    "{}: psnr {:.3}, ssim {:.3}, success {:.0}%, label accuracy {:.0}%",
                    r.arm,
                    r.mean_psnr,
                    r.mean_ssim,
                    100.0 * r.success_rate,
                    100.0 * r.label_accuracy
                );
            }
            summarize(&report, &cfg.output_dir);
        }
        Command::Metrics {
            reference,
            test,
            resize,
        } => return cmd_metrics(&reference, &test, resize),
        Command::VerifyReport { dir } => return cmd_verify(&dir),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{reconstruct, reconstruct_raw_dlg, reconstruct_without_label_prediction, ReconstructionResult};
use crate::client::{client_step, LeakedUpdate};
use crate::data::{write_image, Dataset};
use crate::metrics::QualityScore;
use crate::model::{EncoderKind, PeftMode};
use crate::{Model64, Tensor64};

use super::report::{ablation_table, sweep_table, Arm, ExperimentReport, ReportRow};
use super::{ExperimentConfig, ExperimentError};

/// Salt separating the image-draw stream from the model seed.
const IMAGE_DRAW_SALT: u64 = 0x69_6d61_6765;

/// One run of a batch: index plus the arm and architecture it exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSpec {
    pub index: usize,
    pub mode: PeftMode,
    pub structure: EncoderKind,
    pub arm: Arm,
}

/// Everything a client step needs for one run; the attacker sees only
/// `leak` and `model`.
pub struct Victim {
    pub model: Model64,
    pub image: Tensor64,
    pub label: usize,
    pub leak: LeakedUpdate<f64>,
}

/// The JSON document written per run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub row: ReportRow,
    pub dataset_index: Option<usize>,
    pub result: Option<ReconstructionResult<f64>>,
    /// Not part of the CSV, which must be reproducible byte for byte.
    pub wall_time_s: f64,
}

pub fn image_extension(channels: usize) -> &'static str {
    if channels == 1 {
        "pgm"
    } else {
        "png"
    }
}

/// Dataset index drawn for run `index`; identical across arms, modes and
/// structures so that comparisons are paired.
fn draw_index(cfg: &ExperimentConfig, index: usize, len: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.run_seed(index) ^ IMAGE_DRAW_SALT);
    rng.gen_range(0..len)
}

/// Builds the victim model for run `index` and performs its client step.
pub fn make_leak(
    cfg: &ExperimentConfig,
    data: &Dataset<f64>,
    index: usize,
    mode: PeftMode,
    structure: EncoderKind,
) -> Result<(Victim, usize), ExperimentError> {
    if data.is_empty() {
        return Err(ExperimentError::Config("dataset is empty".into()));
    }
    let pick = draw_index(cfg, index, data.len());
    let seed = cfg.run_seed(index);
    let model = Model64::new(cfg.model_config(mode, structure, data.class_names.clone(), seed))?;
    let image = data.images[pick].clone();
    let label = data.labels[pick];
    let leak = client_step(&model, &image, label, cfg.eta)?;
    Ok((
        Victim {
            model,
            image,
            label,
            leak,
        },
        pick,
    ))
}

fn blank_row(cfg: &ExperimentConfig, spec: &RunSpec) -> ReportRow {
    ReportRow {
        run: spec.index.to_string(),
        seed: Some(cfg.run_seed(spec.index)),
        mode: spec.mode,
        structure: spec.structure,
        arm: spec.arm,
        target_class: None,
        predicted_class: None,
        label_correct: None,
        label_confident: None,
        psnr_db: None,
        ssim: None,
        converged: None,
        converged_eval: None,
        diverged: None,
        iterations: None,
        initial_loss: None,
        final_loss: None,
        error: String::new(),
    }
}

fn flag(b: bool) -> Option<f64> {
    Some(if b { 1.0 } else { 0.0 })
}

/// Client step, attack and scoring for one run; failures land in the row.
pub fn run_one(
    cfg: &ExperimentConfig,
    data: &Dataset<f64>,
    spec: &RunSpec,
) -> (RunRecord, Option<(Tensor64, Tensor64)>) {
    let start = Instant::now();
    let mut row = blank_row(cfg, spec);
    let mut attack = cfg.attack.clone();
    attack.seed = cfg.run_seed(spec.index);
    let outcome = (|| -> Result<_, ExperimentError> {
        let (victim, pick) = make_leak(cfg, data, spec.index, spec.mode, spec.structure)?;
        let result = match spec.arm {
            Arm::Mip => reconstruct(&victim.leak, &victim.model, &attack)?,
            Arm::MipWithoutLabelPrediction => reconstruct_without_label_prediction(&victim.leak, &victim.model, &attack)?,
            Arm::RawTransfer => reconstruct_raw_dlg(&victim.leak, &victim.model, &attack)?,
        };
        let score = QualityScore::evaluate(&result.x_star, &victim.image)?;
        Ok((victim, pick, result, score))
    })();
    let (record_result, pick, images) = match outcome {
        Ok((victim, pick, result, score)) => {
            row.target_class = Some(victim.label);
            row.predicted_class = Some(result.predicted_label);
            row.label_correct = flag(result.predicted_label == victim.label);
            row.label_confident = flag(result.label_confident);
            row.psnr_db = Some(score.psnr_db);
            row.ssim = Some(score.ssim);
            row.converged = flag(result.converged);
            row.converged_eval = flag(score.converged_eval);
            row.diverged = flag(result.diverged);
            row.iterations = Some(result.iterations_run as f64);
            row.initial_loss = result.loss_curve.first().copied();
            row.final_loss = result.loss_curve.last().copied();
            let images = (result.x_star.clone(), victim.image);
            (Some(result), Some(pick), Some(images))
        }
        Err(e) => {
            row.error = e.to_string();
            (None, None, None)
        }
    };
    let record = RunRecord {
        row,
        dataset_index: pick,
        result: record_result,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    (record, images)
}

fn write_run(
    dir: &Path,
    record: &RunRecord,
    images: Option<&(Tensor64, Tensor64)>,
    channels: usize,
) -> Result<(), ExperimentError> {
    let k = &record.row.run;
    let json = dir.join(format!("run_{k}.json"));
    std::fs::write(&json, serde_json::to_string_pretty(record)?).map_err(|e| ExperimentError::Io(json.clone(), e))?;
    if let Some((recon, target)) = images {
        let ext = image_extension(channels);
        write_image(recon, &dir.join(format!("run_{k}_recon.{ext}")))?;
        write_image(target, &dir.join(format!("run_{k}_target.{ext}")))?;
    }
    Ok(())
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, ExperimentError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| ExperimentError::Pool(e.to_string()))
}

fn create_dir(dir: &Path) -> Result<(), ExperimentError> {
    std::fs::create_dir_all(dir).map_err(|e| ExperimentError::Io(dir.to_path_buf(), e))
}

/// Runs `specs` on up to `jobs` threads; each run writes its files into
/// `subdir(spec)`. Rows come back in `specs` order.
fn run_batch(
    cfg: &ExperimentConfig,
    jobs: usize,
    specs: &[RunSpec],
    subdir: impl Fn(&RunSpec) -> PathBuf + Sync,
) -> Result<Vec<ReportRow>, ExperimentError> {
    cfg.validate()?;
    let data = cfg.dataset.load::<f64>(cfg.image_size)?.prepared(cfg.channels, cfg.image_size, cfg.image_size)?;
    let records = pool(jobs)?.install(|| {
        specs
            .par_iter()
            .map(|spec| {
                let (record, images) = run_one(cfg, &data, spec);
                let dir = subdir(spec);
                create_dir(&dir)?;
                write_run(&dir, &record, images.as_ref(), cfg.channels)?;
                log::info!(
                    "run {} {} {} {}: psnr {:?} ({:.1}s){}",
                    spec.index,
                    spec.mode,
                    spec.structure,
                    spec.arm,
                    record.row.psnr_db,
                    record.wall_time_s,
                    if record.row.error.is_empty() { String::new() } else { format!(" error: {}", record.row.error) }
                );
                Ok(record.row)
            })
            .collect::<Result<Vec<_>, ExperimentError>>()
    })?;
    Ok(records)
}

/// `runs` seeded attacks in the configured mode and structure.
pub fn run_attack(cfg: &ExperimentConfig, jobs: usize) -> Result<ExperimentReport, ExperimentError> {
    run_modes(cfg, jobs, &[cfg.peft_mode])
}

/// As [`run_attack`] for several PEFT modes on identical seeds, one
/// subdirectory per mode when there is more than one.
pub fn run_modes(cfg: &ExperimentConfig, jobs: usize, modes: &[PeftMode]) -> Result<ExperimentReport, ExperimentError> {
    let specs: Vec<RunSpec> = modes
        .iter()
        .flat_map(|&mode| {
            (0..cfg.runs).map(move |index| RunSpec {
                index,
                mode,
                structure: cfg.encoder.kind,
                arm: Arm::Mip,
            })
        })
        .collect();
    let out = cfg.output_dir.clone();
    let many = modes.len() > 1;
    let rows = run_batch(cfg, jobs, &specs, |s| if many { out.join(s.mode.to_string()) } else { out.clone() })?;
    let report = ExperimentReport::new(rows);
    create_dir(&out)?;
    report.write(&out)?;
    Ok(report)
}

/// Every structure in `cfg.structures` on the same seeds.
pub fn run_sweep(cfg: &ExperimentConfig, jobs: usize) -> Result<ExperimentReport, ExperimentError> {
    let specs: Vec<RunSpec> = cfg
        .structures
        .iter()
        .flat_map(|&structure| {
            (0..cfg.runs).map(move |index| RunSpec {
                index,
                mode: cfg.peft_mode,
                structure,
                arm: Arm::Mip,
            })
        })
        .collect();
    let out = cfg.output_dir.clone();
    let rows = run_batch(cfg, jobs, &specs, |s| out.join(s.structure.to_string()))?;
    let mut report = ExperimentReport::new(rows);
    report.sweep = Some(sweep_table(&report.rows, &cfg.structures));
    create_dir(&out)?;
    report.write(&out)?;
    Ok(report)
}

/// The three ablation arms on identical seeds.
pub fn run_ablation(cfg: &ExperimentConfig, jobs: usize) -> Result<ExperimentReport, ExperimentError> {
    let specs: Vec<RunSpec> = Arm::ABLATION
        .iter()
        .flat_map(|&arm| {
            (0..cfg.runs).map(move |index| RunSpec {
                index,
                mode: cfg.peft_mode,
                structure: cfg.encoder.kind,
                arm,
            })
        })
        .collect();
    let out = cfg.output_dir.clone();
    let rows = run_batch(cfg, jobs, &specs, |s| out.join(s.arm.name()))?;
    let mut report = ExperimentReport::new(rows);
    report.ablation = Some(ablation_table(&report.rows));
    create_dir(&out)?;
    report.write(&out)?;
    Ok(report)
}

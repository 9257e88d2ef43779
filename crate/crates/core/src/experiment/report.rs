use std::fmt;
use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::{EncoderKind, PeftMode};

use super::ExperimentError;

pub const REPORT_FILE: &str = "report.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const ABLATION_FILE: &str = "ablation.csv";

/// Which pipeline produced a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    /// Gradient matching through both towers with a joint soft label.
    RawTransfer,
    /// Reverse estimation, but the label is optimized jointly.
    MipWithoutLabelPrediction,
    #[default]
    Mip,
}

impl Arm {
    /// Column order of the ablation table.
    pub const ABLATION: [Arm; 3] = [Arm::RawTransfer, Arm::MipWithoutLabelPrediction, Arm::Mip];

    pub fn name(self) -> &'static str {
        match self {
            Arm::RawTransfer => "raw_transfer",
            Arm::MipWithoutLabelPrediction => "mip_without_label_prediction",
            Arm::Mip => "mip",
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One line of `report.csv`. Per-run rows carry the run index in `run` and
/// 0/1 flags; aggregate rows carry `mean` or `median` and the statistic of
/// each column over the successful runs of their group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub run: String,
    pub seed: Option<u64>,
    pub mode: PeftMode,
    pub structure: EncoderKind,
    pub arm: Arm,
    pub target_class: Option<usize>,
    pub predicted_class: Option<usize>,
    pub label_correct: Option<f64>,
    pub label_confident: Option<f64>,
    pub psnr_db: Option<f64>,
    pub ssim: Option<f64>,
    pub converged: Option<f64>,
    pub converged_eval: Option<f64>,
    pub diverged: Option<f64>,
    pub iterations: Option<f64>,
    pub initial_loss: Option<f64>,
    pub final_loss: Option<f64>,
    pub error: String,
}

pub const MEAN: &str = "mean";
pub const MEDIAN: &str = "median";

impl ReportRow {
    pub fn is_aggregate(&self) -> bool {
        self.run == MEAN || self.run == MEDIAN
    }

    pub fn succeeded(&self) -> bool {
        self.error.is_empty()
    }

    fn group(&self) -> (PeftMode, EncoderKind, Arm) {
        (self.mode, self.structure, self.arm)
    }

    /// Numeric columns in a fixed order, for aggregation.
    fn stats(&self) -> [Option<f64>; 10] {
        [
            self.label_correct,
            self.label_confident,
            self.psnr_db,
            self.ssim,
            self.converged,
            self.converged_eval,
            self.diverged,
            self.iterations,
            self.initial_loss,
            self.final_loss,
        ]
    }

    fn with_stats(mut self, s: [Option<f64>; 10]) -> Self {
        [
            self.label_correct,
            self.label_confident,
            self.psnr_db,
            self.ssim,
            self.converged,
            self.converged_eval,
            self.diverged,
            self.iterations,
            self.initial_loss,
            self.final_loss,
        ] = s;
        self
    }
}

pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

/// Mean and median rows for every (mode, structure, arm) group, in order of
/// first appearance.
pub fn aggregate(rows: &[ReportRow]) -> Vec<ReportRow> {
    let mut groups: Vec<(PeftMode, EncoderKind, Arm)> = Vec::new();
    for r in rows.iter().filter(|r| !r.is_aggregate()) {
        if !groups.contains(&r.group()) {
            groups.push(r.group());
        }
    }
    let mut out = Vec::new();
    for key in groups {
        let members: Vec<&ReportRow> = rows
            .iter()
            .filter(|r| !r.is_aggregate() && r.group() == key && r.succeeded())
            .collect();
        let column = |i: usize| members.iter().filter_map(|r| r.stats()[i]).collect::<Vec<f64>>();
        for (name, f) in [(MEAN, mean as fn(&[f64]) -> Option<f64>), (MEDIAN, median)] {
            let stats: [Option<f64>; 10] = std::array::from_fn(|i| f(&column(i)));
            let row = ReportRow {
                run: name.to_string(),
                seed: None,
                mode: key.0,
                structure: key.1,
                arm: key.2,
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
            };
            out.push(row.with_stats(stats));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub structure: EncoderKind,
    /// Fraction of runs (failed runs included) judged non-random.
    pub conv_prob: f64,
    /// Mean PSNR relative to the first structure, in percent.
    pub psnr_ratio: f64,
}

pub fn sweep_table(rows: &[ReportRow], structures: &[EncoderKind]) -> Vec<SweepRow> {
    let stats = |s: EncoderKind| {
        let runs: Vec<&ReportRow> = rows.iter().filter(|r| !r.is_aggregate() && r.structure == s).collect();
        let conv = runs.iter().filter(|r| r.converged_eval == Some(1.0)).count() as f64 / runs.len().max(1) as f64;
        let psnr: Vec<f64> = runs.iter().filter(|r| r.succeeded()).filter_map(|r| r.psnr_db).collect();
        (conv, mean(&psnr).unwrap_or(f64::NAN))
    };
    let base = structures.first().map(|&s| stats(s).1).unwrap_or(f64::NAN);
    structures
        .iter()
        .map(|&s| {
            let (conv_prob, psnr) = stats(s);
            SweepRow {
                structure: s,
                conv_prob,
                psnr_ratio: 100.0 * psnr / base,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub arm: Arm,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    /// Fraction of runs (failed runs included) judged non-random.
    pub success_rate: f64,
    pub label_accuracy: f64,
}

pub fn ablation_table(rows: &[ReportRow]) -> Vec<AblationRow> {
    Arm::ABLATION
        .iter()
        .map(|&arm| {
            let runs: Vec<&ReportRow> = rows.iter().filter(|r| !r.is_aggregate() && r.arm == arm).collect();
            let ok: Vec<&&ReportRow> = runs.iter().filter(|r| r.succeeded()).collect();
            let col = |f: fn(&ReportRow) -> Option<f64>| mean(&ok.iter().filter_map(|r| f(r)).collect::<Vec<_>>()).unwrap_or(f64::NAN);
            let n = runs.len().max(1) as f64;
            AblationRow {
                arm,
                mean_psnr: col(|r| r.psnr_db),
                mean_ssim: col(|r| r.ssim),
                success_rate: runs.iter().filter(|r| r.converged_eval == Some(1.0)).count() as f64 / n,
                label_accuracy: col(|r| r.label_correct),
            }
        })
        .collect()
}

/// Per-run rows plus their aggregates and, for sweeps and ablations, the
/// summary table.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
    pub aggregates: Vec<ReportRow>,
    pub sweep: Option<Vec<SweepRow>>,
    pub ablation: Option<Vec<AblationRow>>,
}

impl ExperimentReport {
    pub fn new(rows: Vec<ReportRow>) -> Self {
        Self {
            aggregates: aggregate(&rows),
            rows,
            sweep: None,
            ablation: None,
        }
    }

    pub fn group_mean(&self, mode: PeftMode, structure: EncoderKind, arm: Arm) -> Option<&ReportRow> {
        self.aggregates
            .iter()
            .find(|r| r.run == MEAN && (r.mode, r.structure, r.arm) == (mode, structure, arm))
    }

    /// Successful runs of a group.
    pub fn group_runs(&self, mode: PeftMode, structure: EncoderKind, arm: Arm) -> Vec<&ReportRow> {
        self.rows
            .iter()
            .filter(|r| (r.mode, r.structure, r.arm) == (mode, structure, arm))
            .collect()
    }

    pub fn write(&self, dir: &Path) -> Result<(), ExperimentError> {
        let all: Vec<&ReportRow> = self.rows.iter().chain(&self.aggregates).collect();
        write_csv(&dir.join(REPORT_FILE), &all)?;
        if let Some(s) = &self.sweep {
            write_csv(&dir.join(SWEEP_FILE), s)?;
        }
        if let Some(a) = &self.ablation {
            write_csv(&dir.join(ABLATION_FILE), a)?;
        }
        Ok(())
    }
}

/// Header row, '.' decimals in shortest round-trip form, LF line endings.
pub fn write_csv<S: Serialize>(path: &Path, rows: &[S]) -> Result<(), ExperimentError> {
    let file = File::create(path).map_err(|e| ExperimentError::Io(path.to_path_buf(), e))?;
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| ExperimentError::Io(path.to_path_buf(), e))?;
    Ok(())
}

pub fn read_csv<S: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<S>, ExperimentError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<Vec<S>, _>>()?)
}

/// Result of recomputing a report directory's aggregates from its rows.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Verification {
    pub rows: usize,
    pub checked: usize,
    pub mismatches: Vec<String>,
}

impl Verification {
    pub fn ok(&self) -> bool {
        self.mismatches.is_empty()
    }
}

fn same(a: f64, b: f64) -> bool {
    a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan())
}

/// Recomputes every aggregate row and summary table in `dir` from the
/// per-run rows and demands bit-exact agreement.
pub fn verify_report(dir: &Path) -> Result<Verification, ExperimentError> {
    let all: Vec<ReportRow> = read_csv(&dir.join(REPORT_FILE))?;
    let (aggregates, rows): (Vec<ReportRow>, Vec<ReportRow>) = all.into_iter().partition(|r| r.is_aggregate());
    let mut out = Verification {
        rows: rows.len(),
        ..Verification::default()
    };
    let expected = aggregate(&rows);
    out.checked += expected.len();
    if expected.len() != aggregates.len() {
        out.mismatches.push(format!(
            "{} aggregate rows present, {} expected",
            aggregates.len(),
            expected.len()
        ));
    }
    for (want, got) in expected.iter().zip(&aggregates) {
        let equal = want.group() == got.group()
            && want.run == got.run
            && want.stats().iter().zip(got.stats()).all(|(a, b)| match (a, b) {
                (Some(a), Some(b)) => same(*a, b),
                (None, None) => true,
                _ => false,
            });
        if !equal {
            out.mismatches.push(format!(
                "{} row of {}/{}/{} differs from recomputation",
                want.run, want.mode, want.structure, want.arm
            ));
        }
    }
    let sweep_path = dir.join(SWEEP_FILE);
    if sweep_path.exists() {
        let got: Vec<SweepRow> = read_csv(&sweep_path)?;
        let structures: Vec<EncoderKind> = got.iter().map(|r| r.structure).collect();
        let want = sweep_table(&rows, &structures);
        out.checked += want.len();
        for (w, g) in want.iter().zip(&got) {
            if !(same(w.conv_prob, g.conv_prob) && same(w.psnr_ratio, g.psnr_ratio)) {
                out.mismatches.push(format!("sweep row {} differs from recomputation", w.structure));
            }
        }
    }
    let ablation_path = dir.join(ABLATION_FILE);
    if ablation_path.exists() {
        let got: Vec<AblationRow> = read_csv(&ablation_path)?;
        let want = ablation_table(&rows);
        out.checked += want.len();
        if got.len() != want.len() {
            out.mismatches.push("ablation table has the wrong number of arms".into());
        }
        for (w, g) in want.iter().zip(&got) {
            let fields = [
                (w.mean_psnr, g.mean_psnr),
                (w.mean_ssim, g.mean_ssim),
                (w.success_rate, g.success_rate),
                (w.label_accuracy, g.label_accuracy),
            ];
            if w.arm != g.arm || !fields.iter().all(|(a, b)| same(*a, *b)) {
                out.mismatches.push(format!("ablation row {} differs from recomputation", w.arm));
            }
        }
    }
    Ok(out)
}

use std::path::Path;

use parvo_core::experiment::{
    mean, median, read_csv, run_ablation, run_attack, run_modes, run_sweep, verify_report, Arm, DatasetSpec,
    ExperimentConfig, ExperimentError, ReportRow, SweepRow, ABLATION_FILE, MEAN, MEDIAN, REPORT_FILE, SWEEP_FILE,
};
use parvo_core::model::{EncoderKind, PeftMode};

fn quick(dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        dataset: DatasetSpec::SyntheticDigits { count: 20, seed: 3 },
        runs: 3,
        seed: 40,
        output_dir: dir.to_path_buf(),
        structures: vec![EncoderKind::Conv2, EncoderKind::Conv4],
        ..ExperimentConfig::default()
    };
    cfg.encoder.feature_dim = 16;
    cfg.attack.iterations = 15;
    cfg
}

#[test]
fn default_config_round_trips() {
    let cfg = ExperimentConfig::default();
    assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    assert_eq!(ExperimentConfig::from_json("{}").unwrap(), cfg);
    cfg.validate().unwrap();
}

#[test]
fn unknown_fields_are_rejected() {
    for text in [r#"{"runz": 3}"#, r#"{"attack": {"iters": 3}}"#, r#"{"dataset": {"kind": "mnist"}}"#] {
        assert!(matches!(ExperimentConfig::from_json(text), Err(ExperimentError::Config(_))), "{text}");
    }
}

#[test]
fn invalid_values_are_rejected() {
    let base = ExperimentConfig::default();
    let cases = [
        ExperimentConfig { image_size: 30, ..base.clone() },
        ExperimentConfig { channels: 2, ..base.clone() },
        ExperimentConfig { eta: 0.0, ..base.clone() },
        ExperimentConfig { runs: 0, ..base.clone() },
        ExperimentConfig { structures: vec![], ..base.clone() },
        ExperimentConfig {
            dataset: DatasetSpec::Cifar10 { path: "/nonexistent/data_batch_1.bin".into() },
            ..base.clone()
        },
    ];
    for c in cases {
        assert!(matches!(c.validate(), Err(ExperimentError::Config(_))), "{c:?}");
    }
}

#[test]
fn dataset_paths_resolve_against_config_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("imgs.idx"), b"").unwrap();
    std::fs::write(dir.path().join("labels.idx"), b"").unwrap();
    let path = dir.path().join("cfg.json");
    std::fs::write(&path, r#"{"dataset": {"kind": "mnist_idx", "images": "imgs.idx", "labels": "labels.idx"}}"#).unwrap();
    let cfg = ExperimentConfig::load(&path).unwrap();
    assert_eq!(
        cfg.dataset,
        DatasetSpec::MnistIdx {
            images: dir.path().join("imgs.idx"),
            labels: dir.path().join("labels.idx"),
        }
    );
}

#[test]
fn run_seeds_are_consecutive() {
    let cfg = ExperimentConfig { seed: 7, ..ExperimentConfig::default() };
    assert_eq!((0..3).map(|k| cfg.run_seed(k)).collect::<Vec<_>>(), [7, 8, 9]);
}

#[test]
fn mean_and_median() {
    assert_eq!(mean(&[]), None);
    assert_eq!(median(&[]), None);
    assert_eq!(mean(&[1.0, 2.0, 6.0]), Some(3.0));
    assert_eq!(median(&[6.0, 1.0, 2.0]), Some(2.0));
    assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), Some(2.5));
}

#[test]
fn attack_batch_writes_rows_and_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick(dir.path());
    let report = run_attack(&cfg, 1).unwrap();
    assert_eq!(report.rows.len(), 3);
    assert_eq!(report.aggregates.len(), 2);
    for (k, r) in report.rows.iter().enumerate() {
        assert!(r.error.is_empty(), "{}", r.error);
        assert_eq!(r.seed, Some(40 + k as u64));
        assert!(r.psnr_db.unwrap().is_finite());
        for f in ["json", "recon.pgm", "target.pgm"] {
            let sep = if f == "json" { "." } else { "_" };
            assert!(dir.path().join(format!("run_{k}{sep}{f}")).exists(), "{f}");
        }
    }
    let psnr: Vec<f64> = report.rows.iter().map(|r| r.psnr_db.unwrap()).collect();
    let m = report.group_mean(PeftMode::SoftPrompt, EncoderKind::Conv2, Arm::Mip).unwrap();
    assert_eq!(m.psnr_db, mean(&psnr));
    let csv: Vec<ReportRow> = read_csv(&dir.path().join(REPORT_FILE)).unwrap();
    assert_eq!(csv.len(), 5);
    assert_eq!([csv[3].run.as_str(), csv[4].run.as_str()], [MEAN, MEDIAN]);
    let v = verify_report(dir.path()).unwrap();
    assert!(v.ok(), "{:?}", v.mismatches);
    assert_eq!((v.rows, v.checked), (3, 2));
}

#[test]
fn batches_are_deterministic_across_job_counts() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_attack(&quick(a.path()), 1).unwrap();
    run_attack(&quick(b.path()), 3).unwrap();
    let read = |d: &Path| std::fs::read(d.join(REPORT_FILE)).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    let img = |d: &Path| std::fs::read(d.join("run_1_recon.pgm")).unwrap();
    assert_eq!(img(a.path()), img(b.path()));
}

#[test]
fn tampered_report_is_detected() {
    let dir = tempfile::tempdir().unwrap();
    run_attack(&quick(dir.path()), 1).unwrap();
    let path = dir.path().join(REPORT_FILE);
    let mut rows: Vec<ReportRow> = read_csv(&path).unwrap();
    rows[0].psnr_db = rows[0].psnr_db.map(|p| p + 0.5);
    parvo_core::experiment::write_csv(&path, &rows).unwrap();
    let v = verify_report(dir.path()).unwrap();
    assert!(!v.ok());
    assert!(v.mismatches[0].contains(MEAN), "{:?}", v.mismatches);
}

#[test]
fn modes_share_images_across_subdirectories() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig { runs: 2, ..quick(dir.path()) };
    let report = run_modes(&cfg, 1, &[PeftMode::SoftPrompt, PeftMode::TextAdapter]).unwrap();
    assert_eq!(report.rows.len(), 4);
    for k in 0..2 {
        let t = |m: &str| std::fs::read(dir.path().join(m).join(format!("run_{k}_target.pgm"))).unwrap();
        assert_eq!(t("SoftPrompt"), t("TextAdapter"));
        assert_eq!(report.rows[k].target_class, report.rows[k + 2].target_class);
    }
    assert!(verify_report(dir.path()).unwrap().ok());
}

#[test]
fn sweep_reports_relative_psnr() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig { runs: 2, ..quick(dir.path()) };
    let report = run_sweep(&cfg, 2).unwrap();
    let sweep = report.sweep.as_ref().unwrap();
    assert_eq!(sweep.len(), 2);
    assert_eq!(sweep[0].psnr_ratio, 100.0);
    assert!(sweep.iter().all(|r| (0.0..=1.0).contains(&r.conv_prob)));
    let conv4: Vec<f64> = report.rows.iter().filter(|r| r.structure == EncoderKind::Conv4).map(|r| r.psnr_db.unwrap()).collect();
    let conv2: Vec<f64> = report.rows.iter().filter(|r| r.structure == EncoderKind::Conv2).map(|r| r.psnr_db.unwrap()).collect();
    assert!((sweep[1].psnr_ratio - 100.0 * mean(&conv4).unwrap() / mean(&conv2).unwrap()).abs() < 1e-12);
    let csv: Vec<SweepRow> = read_csv(&dir.path().join(SWEEP_FILE)).unwrap();
    assert_eq!(&csv, sweep);
    assert!(dir.path().join("Conv4").join("run_1.json").exists());
    assert!(verify_report(dir.path()).unwrap().ok());
}

#[test]
fn ablation_covers_every_arm() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig { runs: 2, ..quick(dir.path()) };
    let report = run_ablation(&cfg, 1).unwrap();
    let table = report.ablation.as_ref().unwrap();
    assert_eq!(table.iter().map(|r| r.arm).collect::<Vec<_>>(), Arm::ABLATION);
    for arm in Arm::ABLATION {
        assert_eq!(report.group_runs(PeftMode::SoftPrompt, EncoderKind::Conv2, arm).len(), 2);
        assert!(dir.path().join(arm.name()).join("run_0.json").exists());
    }
    assert!(dir.path().join(ABLATION_FILE).exists());
    assert!(verify_report(dir.path()).unwrap().ok());
}

#[test]
fn grayscale_data_feeds_an_rgb_encoder() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick(dir.path());
    cfg.dataset = DatasetSpec::SyntheticDigits { count: 5, seed: 0 };
    cfg.channels = 3;
    let report = run_attack(&cfg, 1).unwrap();
    assert!(report.rows.iter().all(|r| r.error.is_empty()));
    assert!(dir.path().join("run_0_recon.png").exists());
}

#[test]
fn documented_config_parses() {
    let text = r#"{
      "dataset": {"kind": "mnist_idx", "images": "train-images-idx3-ubyte", "labels": "train-labels-idx1-ubyte"},
      "image_size": 28,
      "channels": 1,
      "peft_mode": "SoftPrompt",
      "encoder": {"kind": "Conv2", "feature_dim": 512},
      "attack": {"iterations": 2000, "matching_loss": "cosine", "optimizer": "adam"},
      "eta": 0.01,
      "runs": 10,
      "seed": 0,
      "output_dir": "out"
    }"#;
    let cfg = ExperimentConfig::from_json(text).unwrap();
    assert_eq!(cfg.attack.matching_loss, parvo_core::attack::MatchingLoss::Cosine);
    assert_eq!(cfg.encoder.feature_dim, 512);
}

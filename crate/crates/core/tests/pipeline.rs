//! Behaviour of the orchestration layer on a deliberately tiny task.

use std::fs;
use std::path::Path;
use std::process::Command;

use sfs::datagen::LabeledImage;
use sfs::gmm::collect_confident;
use sfs::network::{forward, SegNetwork};
use sfs::pipeline::{
    self, adapt, estimate_internal, generate_splits, train_source, AblationConfig, AblationKind,
    SfsConfig, Split, Splits, ADAPTED_MODEL, METRICS_CSV, SOURCE_MODEL,
};

const CLASSIFIER_TENSORS: [usize; 2] = [6, 7];

fn tiny() -> SfsConfig {
    let mut cfg = SfsConfig::default();
    cfg.data.scene.image_width = 16;
    cfg.data.scene.image_height = 16;
    cfg.data.scene.shapes_per_image = (2, 3);
    cfg.data.source_train = 6;
    cfg.data.source_val = 3;
    cfg.data.target_train = 6;
    cfg.data.target_test = 3;
    cfg.source_iters = 400;
    cfg.eval_every = 200;
    cfg.adapt_iters = 10;
    cfg.pixels_per_batch = 256;
    cfg.projections = 16;
    cfg.rho = 0.3;
    cfg.omega = 2;
    cfg.embedding_pixels_per_image = 8;
    cfg.seed = 11;
    cfg
}

struct Trained {
    cfg: SfsConfig,
    splits: Splits,
    net: SegNetwork,
}

fn trained() -> Trained {
    let cfg = tiny();
    let splits = generate_splits(&cfg).unwrap();
    let p = splits.preprocessed().unwrap();
    let net = train_source(&cfg, &p.source_train, &p.source_val).unwrap().net;
    Trained {
        cfg,
        splits: p,
        net,
    }
}

fn unlabeled(images: &[LabeledImage]) -> Vec<LabeledImage> {
    images
        .iter()
        .cloned()
        .map(|mut img| {
            img.mask.iter_mut().for_each(|l| *l = 0);
            img
        })
        .collect()
}

#[test]
fn no_alignment_and_frozen_classifier_change_nothing() {
    let t = trained();
    let mut cfg = t.cfg.clone();
    cfg.lambda = 0.0;
    cfg.finetune_classifier = false;
    let (dist, _) = estimate_internal(&t.net, &t.splits.source_train, &cfg).unwrap();
    let out = adapt(&t.net, &dist, &unlabeled(&t.splits.target_train), &cfg).unwrap();
    assert_eq!(out.net.tensors(), t.net.tensors());
}

#[test]
fn no_alignment_moves_only_the_classifier() {
    let t = trained();
    let mut cfg = t.cfg.clone();
    cfg.lambda = 0.0;
    cfg.finetune_classifier = true;
    let (dist, _) = estimate_internal(&t.net, &t.splits.source_train, &cfg).unwrap();
    let out = adapt(&t.net, &dist, &unlabeled(&t.splits.target_train), &cfg).unwrap();
    for (i, (after, before)) in out.net.tensors().iter().zip(t.net.tensors()).enumerate() {
        if CLASSIFIER_TENSORS.contains(&i) {
            assert_ne!(after, before, "classifier tensor {i} did not move");
        } else {
            assert_eq!(after, before, "tensor {i} moved");
        }
    }
}

#[test]
fn loose_single_component_fit_recovers_class_means() {
    let t = trained();
    let mut cfg = t.cfg.clone();
    cfg.rho = 0.0;
    cfg.omega = 1;
    cfg.em.max_samples_per_class = usize::MAX;
    let (dist, counts) = estimate_internal(&t.net, &t.splits.source_train, &cfg).unwrap();

    let f = cfg.network.latent_dim;
    let k = cfg.data.scene.num_classes;
    let mut sums = vec![vec![0.0; f]; k];
    let mut n = vec![0usize; k];
    for img in &t.splits.source_train {
        let latent = forward(&t.net, img).unwrap().latent();
        for (i, &l) in img.mask.iter().enumerate() {
            n[l as usize] += 1;
            sums[l as usize]
                .iter_mut()
                .zip(latent.pixel(i))
                .for_each(|(s, v)| *s += v);
        }
    }
    assert_eq!(counts, n);
    for c in 0..k {
        for (m, s) in dist.mean(c).iter().zip(&sums[c]) {
            assert!((m - s / n[c] as f64).abs() < 1e-9);
        }
    }
}

#[test]
fn stricter_threshold_keeps_a_subset() {
    let t = trained();
    let mut previous: Option<Vec<usize>> = None;
    for rho in [0.0, 0.5, 0.8, 0.97] {
        let counts = collect_confident(&t.net, &t.splits.source_train, rho)
            .unwrap()
            .counts();
        if let Some(prev) = &previous {
            assert!(counts.iter().zip(prev).all(|(c, p)| c <= p), "rho {rho}: {counts:?} vs {prev:?}");
        }
        previous = Some(counts);
    }
}

#[test]
fn full_run_is_bitwise_reproducible() {
    let cfg = tiny();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    pipeline::run_all(&cfg, a.path()).unwrap();
    pipeline::run_all(&cfg, b.path()).unwrap();
    for name in [METRICS_CSV, SOURCE_MODEL, ADAPTED_MODEL, "source_model.bin", "adapted_model.bin", "gmm.json"] {
        let read = |dir: &Path| fs::read(dir.join(name)).unwrap();
        assert_eq!(read(a.path()), read(b.path()), "{name} differs");
    }
}

#[test]
fn adaptation_runs_without_source_data() {
    let cfg = tiny();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    pipeline::run_generate(&cfg, out).unwrap();
    pipeline::run_train_source(&cfg, out).unwrap();
    pipeline::run_estimate(&cfg, out).unwrap();
    for split in [Split::SourceTrain, Split::SourceVal] {
        fs::remove_file(split.path(out)).unwrap();
    }
    pipeline::run_adapt(&cfg, out).unwrap();
    pipeline::run_evaluate(&cfg, out).unwrap();
    assert!(out.join(METRICS_CSV).exists());
    // the source-side phases really do need the deleted files
    assert!(pipeline::run_estimate(&cfg, out).is_err());
}

#[test]
fn ablation_requires_a_grid_and_reports_every_value() {
    let mut cfg = tiny();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    pipeline::run_generate(&cfg, out).unwrap();
    pipeline::run_train_source(&cfg, out).unwrap();
    assert!(matches!(pipeline::run_ablate(&cfg, out), Err(sfs::SfsError::Config(_))));

    // a threshold no pixel can pass starves every class but must not abort the sweep
    cfg.ablation = Some(AblationConfig {
        kind: AblationKind::Rho,
        grid: vec![0.0, 0.999_999_999],
    });
    let rows = pipeline::run_ablate(&cfg, out).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].error.is_none() && rows[0].macro_dice().is_some());
    assert!(rows[1].error.is_some());
    let csv = fs::read_to_string(out.join("ablation_rho.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

fn sfs(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_sfs")).args(args).output().unwrap()
}

#[test]
fn cli_runs_every_phase_and_maps_errors_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    fs::write(&config, tiny().to_json()).unwrap();
    let out = dir.path().join("run");
    let (config, out) = (config.to_str().unwrap(), out.to_str().unwrap());
    for phase in ["generate-data", "train-source", "estimate-gmm", "adapt", "evaluate"] {
        let o = sfs(&[phase, "--config", config, "--out", out]);
        assert!(o.status.success(), "{phase}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert!(Path::new(out).join(METRICS_CSV).exists());

    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"omega": 3, "learning_rate": 0.1}"#).unwrap();
    let o = sfs(&["adapt", "--config", bad.to_str().unwrap(), "--out", out]);
    assert_eq!(o.status.code(), Some(2));

    fs::write(&bad, r#"{"rho": 1.5}"#).unwrap();
    let o = sfs(&["estimate-gmm", "--config", bad.to_str().unwrap(), "--out", out]);
    assert_eq!(o.status.code(), Some(2));

    let o = sfs(&["ablate", "--config", config, "--out", out]);
    assert_eq!(o.status.code(), Some(2));
}

mod common;

use common::*;
use ndarray::{Array2, Axis};

use ssdl::data::{self, LabeledDataset, SplitSpec};
use ssdl::eval::{
    self, BenchmarkConfig, LaplacianComparisonConfig, LaplacianGrid, LaplacianVariant, ReportFormat, RowKind,
    SweepConfig,
};
use ssdl::inference::{self, Encoder};
use ssdl::model::HyperParams;
use ssdl::solver::FistaParams;
use ssdl::trainer::{self, Batching, TrainConfig};
use ssdl::Error;

fn toy_config() -> TrainConfig {
    TrainConfig {
        hp: HyperParams {
            lambda: 0.1,
            beta: 0.5,
            gamma: 0.5,
            mu: 1.0,
            alpha: 1.0,
            atoms: 12,
            neighbors: 4,
            r: 1.7,
        },
        outer_max_iters: 6,
        ..TrainConfig::default()
    }
}

fn toy_pool() -> LabeledDataset {
    let (x, y) = blobs(41, 8, 3, 40, 0.7);
    LabeledDataset::new(x, y, 3).unwrap()
}

fn toy_split() -> data::Split {
    data::split(
        &toy_pool(),
        &SplitSpec {
            labelled_per_class: 4,
            unlabelled_per_class: 12,
            test_per_class: 10,
            seed: 5,
        },
    )
    .unwrap()
}

#[test]
fn saved_model_predicts_identically() {
    let split = toy_split();
    let state = trainer::train(split.training_matrix().view(), &split.labels, 3, &toy_config()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("toy.model");
    trainer::save_model(&state, &path).unwrap();
    let loaded = trainer::load_model(&path).unwrap();
    assert_eq!(loaded.masks, state.masks);
    assert_eq!(loaded.history, state.history);
    let fista = FistaParams::default();
    let a = inference::predict_batch(
        &Encoder::from_model(&state, fista).unwrap(),
        &state.classifier,
        split.x_test.view(),
    )
    .unwrap();
    let b = inference::predict_batch(
        &Encoder::from_model(&loaded, fista).unwrap(),
        &loaded.classifier,
        split.x_test.view(),
    )
    .unwrap();
    assert_eq!(a, b);
    assert!(eval::accuracy(&a.0, &split.test_labels).unwrap() >= 0.95);
}

#[test]
fn damaged_model_files_give_typed_errors() {
    let split = toy_split();
    let state = trainer::train(split.training_matrix().view(), &split.labels, 3, &toy_config()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("toy.model");
    trainer::save_model(&state, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();

    let truncated = dir.path().join("truncated.model");
    std::fs::write(&truncated, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(trainer::load_model(&truncated), Err(Error::ModelFile(_))));

    let mut bad = bytes.clone();
    bad[0] ^= 0xff;
    let bad_path = dir.path().join("bad.model");
    std::fs::write(&bad_path, &bad).unwrap();
    assert!(matches!(trainer::load_model(&bad_path), Err(Error::ModelFile(_))));

    assert!(trainer::load_model(dir.path().join("missing.model")).is_err());
}

#[test]
fn batched_training_is_deterministic_and_accurate() {
    let split = toy_split();
    let config = TrainConfig {
        batching: Some(Batching { batches: 3, epochs: 2 }),
        seed: 17,
        ..toy_config()
    };
    let x = split.training_matrix();
    let a = trainer::train(x.view(), &split.labels, 3, &config).unwrap();
    let b = trainer::train(x.view(), &split.labels, 3, &config).unwrap();
    assert_eq!(a.codes, b.codes);
    assert_eq!(a.history, b.history);
    let acc = eval::accuracy(&a.transductive_predictions(), &split.unlabelled_truth).unwrap();
    assert!(acc >= 0.9, "{acc}");
}

#[test]
fn frozen_segments_never_increase() {
    let split = toy_split();
    let state = trainer::train(split.training_matrix().view(), &split.labels, 3, &toy_config()).unwrap();
    assert!(!state.segments.is_empty());
    for seg in &state.segments {
        let f = seg.frozen();
        for w in f.windows(2) {
            assert!(w[1] <= w[0] + 1e-10 * w[0].abs().max(1.0), "{f:?}");
        }
    }
    assert!(state.dictionary.max_atom_norm() <= 1.0 + 1e-12);
    assert_eq!(state.history.len(), state.segments.len());
}

#[test]
fn reduced_training_decreases_its_objective() {
    let split = toy_split();
    let graph = ssdl::graph::build_lle_graph(split.x_labelled.view(), 4, split.labels.len() as f64).unwrap();
    let hp = HyperParams {
        lambda: 0.2,
        beta: 1.0,
        atoms: 8,
        ..HyperParams::default()
    };
    let (dict, codes, history) =
        trainer::train_reduced(split.x_labelled.view(), Some(&graph), &hp, 10, 0.0, &FistaParams::default(), 3)
            .unwrap();
    assert_eq!(codes.dim(), (8, 12));
    assert!(dict.max_atom_norm() <= 1.0 + 1e-12);
    for w in history.windows(2) {
        assert!(w[1] <= w[0] + 1e-9 * w[0]);
    }
}

#[test]
fn benchmark_report_is_reproducible() {
    let pool = toy_pool();
    let config = BenchmarkConfig {
        labelled_per_class: 4,
        unlabelled_per_class: 10,
        test_per_class: 10,
        repetitions: 2,
        train: toy_config(),
        ..BenchmarkConfig::default()
    };
    let a = eval::run_benchmark(&pool, &config).unwrap();
    let b = eval::run_benchmark(&pool, &config).unwrap();
    for format in [ReportFormat::Csv, ReportFormat::Structured] {
        assert_eq!(
            eval::render_report(&a, format).unwrap(),
            eval::render_report(&b, format).unwrap()
        );
    }
    let full = a.summary("ssdl-ga", "4/10/10", "test").unwrap();
    assert_eq!(full.runs, 2);
    assert!(full.accuracy >= 0.9);
    assert!(a.summary("beta0", "4/10/10", "test").is_some());
    assert_eq!(a.rows_of(RowKind::Run).count(), 8);

    // The echoed config reruns to the same report.
    let echoed: BenchmarkConfig = serde_json::from_value(a.config.clone()).unwrap();
    assert_eq!(eval::run_benchmark(&pool, &echoed).unwrap(), a);
}

#[test]
fn sweep_points_share_labelled_and_test_samples() {
    let pool = toy_pool();
    let config = SweepConfig {
        labelled_per_class: 4,
        counts: vec![0, 3, 8],
        test_per_class: 10,
        repetitions: 2,
        train: toy_config(),
        ..SweepConfig::default()
    };
    let report = eval::run_unlabelled_sweep(&pool, &config).unwrap();
    for count in [0, 3, 8] {
        let row = report.summary("ssdl-ga", &format!("unlabelled={count}"), "test").unwrap();
        assert_eq!(row.runs, 2);
        assert!(row.accuracy > 0.8);
    }
    assert!(report.summary("ssdl-ga", "unlabelled=0", "unlabelled").is_none());
    assert!(report.summary("ssdl-ga", "unlabelled=8", "unlabelled").is_some());
}

#[test]
fn laplacian_comparison_reports_best_cells() {
    let pool = toy_pool();
    let (tx, ty) = blobs(41, 8, 3, 40, 0.7);
    let test = LabeledDataset::new(tx, ty, 3).unwrap();
    let config = LaplacianComparisonConfig {
        labelled_per_class: 8,
        grid: LaplacianGrid {
            betas: vec![0.1, 1.0],
            ks: vec![3],
            sigmas: vec![3.0],
            zetas: vec![0.3],
        },
        lambda: 0.2,
        atoms: 10,
        restarts: 2,
        outer_max_iters: 5,
        noise_levels: vec![0.0, 0.5],
        test_limit: Some(30),
        ..LaplacianComparisonConfig::default()
    };
    let report = eval::run_laplacian_comparison(&pool, &test, &config).unwrap();
    // 1 + 2 + 2 + 2 cells, 2 restarts, 2 noise levels.
    assert_eq!(report.rows_of(RowKind::Run).count(), 28);
    for variant in [
        LaplacianVariant::None,
        LaplacianVariant::GaussianKnn,
        LaplacianVariant::Threshold,
        LaplacianVariant::Lle,
    ] {
        for noise in [0.0, 0.5] {
            let best = report.best(variant.name(), noise).unwrap();
            let max = report
                .rows_of(RowKind::Run)
                .filter(|r| r.variant == variant.name() && r.noise == noise)
                .map(|r| r.accuracy)
                .fold(0.0, f64::max);
            assert_eq!(best.accuracy, max);
        }
    }
    let dir = tempfile::tempdir().unwrap();
    for format in [ReportFormat::Csv, ReportFormat::Structured] {
        let path = dir.path().join("report");
        eval::emit_report(&report, &path, format).unwrap();
        assert_eq!(eval::read_report(&path, format).unwrap(), report);
    }
}

#[test]
fn idx_and_delimited_files_load_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let mut images = vec![0, 0, 8, 3, 0, 0, 0, 3, 0, 0, 0, 2, 0, 0, 0, 2];
    images.extend((0..12u8).map(|v| v * 20));
    let labels = vec![0, 0, 8, 1, 0, 0, 0, 3, 7, 2, 7];
    std::fs::write(dir.path().join("img"), &images).unwrap();
    std::fs::write(dir.path().join("lab"), &labels).unwrap();
    let ds = data::load_idx(dir.path().join("img"), dir.path().join("lab")).unwrap();
    assert_eq!(ds.x.dim(), (4, 3));
    assert_eq!(ds.y, vec![1, 0, 1]);
    assert_eq!(ds.classes, 2);
    assert_eq!(ds.x.column(1).to_vec(), vec![80.0, 100.0, 120.0, 140.0]);

    std::fs::write(dir.path().join("zip.txt"), "3 0.5 -1\n1 0.25 1\n3 0 0\n").unwrap();
    let ds = data::load_delimited(dir.path().join("zip.txt"), 0, None).unwrap();
    assert_eq!(ds.y, vec![1, 0, 1]);
    assert_eq!(ds.x.dim(), (2, 3));

    let missing = data::load_delimited(dir.path().join("nope.txt"), 0, None);
    assert!(missing.is_err());
}

#[test]
fn preprocessing_pipeline_matches_manual_steps() {
    let mut rng = rng(51);
    let x = normal(&mut rng, 5, 7, 2.0);
    let mut piped = x.clone();
    data::preprocess(
        &mut piped,
        &[data::PreprocessStep::L2NormalizeColumns, data::PreprocessStep::Scale(5.0)],
    );
    let mut manual: Array2<f64> = x.clone();
    for mut c in manual.axis_iter_mut(Axis(1)) {
        let n = c.dot(&c).sqrt();
        c.mapv_inplace(|v| 5.0 * v / n);
    }
    assert!((&piped - &manual).iter().all(|v| v.abs() < 1e-12));
}


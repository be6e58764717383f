//! Metrics, the experiment harnesses and report files.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{self, LabeledDataset, SplitSpec};
use crate::error::{Error, Result};
use crate::graph::{self, GaussianGraphParams, NeighborGraph};
use crate::inference::{self, CodingRule, Encoder};
use crate::model::{self, Classifier, HyperParams};
use crate::solver::FistaParams;
use crate::trainer::{self, TrainConfig};

pub fn accuracy(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Ok(0.0);
    }
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// One-vs-all ridge regression on codes with ridge `ρ = μ/γ`.
pub fn ridge_classifier_fit(codes: ArrayView2<f64>, labels: &[usize], classes: usize, ridge: f64) -> Result<Classifier> {
    model::classifier_init(codes, labels, classes, 1.0, ridge)
}

pub fn ridge_classifier_predict(clf: &Classifier, codes: ArrayView2<f64>) -> Vec<usize> {
    let scores = clf.scores(codes);
    scores.columns().into_iter().map(|c| inference::argmax(c.iter().copied())).collect()
}

/// Picks the ridge from `grid` with the best `folds`-fold cross-validated
/// accuracy (first one on ties) and refits on all codes.
pub fn ridge_classifier_fit_cv(
    codes: ArrayView2<f64>,
    labels: &[usize],
    classes: usize,
    grid: &[f64],
    folds: usize,
    seed: u64,
) -> Result<(Classifier, f64)> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("empty ridge grid".into()));
    }
    let n = labels.len();
    let folds = folds.min(n);
    let mut best = (grid[0], f64::NEG_INFINITY);
    if grid.len() > 1 && folds >= 2 {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut crate::seed::rng(seed));
        let mut fold_of = vec![0; n];
        for (pos, &i) in order.iter().enumerate() {
            fold_of[i] = pos % folds;
        }
        for &ridge in grid {
            let mut hits = 0usize;
            for f in 0..folds {
                let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != f).collect();
                let held: Vec<usize> = (0..n).filter(|&i| fold_of[i] == f).collect();
                let train_labels: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
                let clf = ridge_classifier_fit(codes.select(Axis(1), &train).view(), &train_labels, classes, ridge)?;
                let pred = ridge_classifier_predict(&clf, codes.select(Axis(1), &held).view());
                hits += pred.iter().zip(&held).filter(|(p, &i)| **p == labels[i]).count();
            }
            let acc = hits as f64 / n as f64;
            if acc > best.1 {
                best = (ridge, acc);
            }
        }
    }
    Ok((ridge_classifier_fit(codes, labels, classes, best.0)?, best.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowKind {
    /// One training run.
    Run,
    /// Mean and standard deviation over repetitions.
    Summary,
    /// Best grid cell of a variant.
    Best,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub kind: RowKind,
    pub variant: String,
    /// Grid cell or sweep point.
    pub setting: String,
    pub noise: f64,
    /// Which samples were scored: `test` or `unlabelled`.
    pub split: String,
    pub repetition: Option<usize>,
    pub seed: Option<u64>,
    pub runs: usize,
    pub accuracy: f64,
    pub error: f64,
    /// Sample standard deviation of the accuracy over runs.
    pub std_accuracy: Option<f64>,
    pub history_len: Option<usize>,
    pub wall_time_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub config: serde_json::Value,
    pub rows: Vec<ReportRow>,
}

impl ExperimentReport {
    pub fn rows_of(&self, kind: RowKind) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().filter(move |r| r.kind == kind)
    }

    /// The summary row of `(variant, setting, split)`.
    pub fn summary(&self, variant: &str, setting: &str, split: &str) -> Option<&ReportRow> {
        self.rows_of(RowKind::Summary)
            .find(|r| r.variant == variant && r.setting == setting && r.split == split)
    }

    pub fn best(&self, variant: &str, noise: f64) -> Option<&ReportRow> {
        self.rows_of(RowKind::Best).find(|r| r.variant == variant && r.noise == noise)
    }
}

struct RunResult {
    variant: String,
    setting: String,
    noise: f64,
    split: &'static str,
    repetition: usize,
    seed: u64,
    accuracy: f64,
    history_len: usize,
    wall_time_s: Option<f64>,
}

impl RunResult {
    fn row(&self) -> ReportRow {
        ReportRow {
            kind: RowKind::Run,
            variant: self.variant.clone(),
            setting: self.setting.clone(),
            noise: self.noise,
            split: self.split.to_string(),
            repetition: Some(self.repetition),
            seed: Some(self.seed),
            runs: 1,
            accuracy: self.accuracy,
            error: 1.0 - self.accuracy,
            std_accuracy: None,
            history_len: Some(self.history_len),
            wall_time_s: self.wall_time_s,
        }
    }
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Summary rows grouping runs by variant, setting, noise and split, in order
/// of first appearance.
fn summarize(runs: &[ReportRow]) -> Vec<ReportRow> {
    let mut order: Vec<(String, String, u64, String)> = Vec::new();
    let mut groups: BTreeMap<(String, String, u64, String), Vec<f64>> = BTreeMap::new();
    for r in runs {
        let key = (r.variant.clone(), r.setting.clone(), r.noise.to_bits(), r.split.clone());
        groups
            .entry(key.clone())
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(r.accuracy);
    }
    order
        .into_iter()
        .map(|key| {
            let acc = &groups[&key];
            let (mean, std) = mean_std(acc);
            ReportRow {
                kind: RowKind::Summary,
                variant: key.0,
                setting: key.1,
                noise: f64::from_bits(key.2),
                split: key.3,
                repetition: None,
                seed: None,
                runs: acc.len(),
                accuracy: mean,
                error: 1.0 - mean,
                std_accuracy: Some(std),
                history_len: None,
                wall_time_s: None,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LaplacianVariant {
    /// No manifold term (`β = 0`).
    None,
    GaussianKnn,
    Threshold,
    Lle,
}

impl LaplacianVariant {
    pub fn name(self) -> &'static str {
        match self {
            LaplacianVariant::None => "none",
            LaplacianVariant::GaussianKnn => "gaussian-knn",
            LaplacianVariant::Threshold => "threshold",
            LaplacianVariant::Lle => "lle",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LaplacianGrid {
    pub betas: Vec<f64>,
    pub ks: Vec<usize>,
    pub sigmas: Vec<f64>,
    pub zetas: Vec<f64>,
}

impl Default for LaplacianGrid {
    fn default() -> Self {
        LaplacianGrid {
            betas: vec![0.01, 0.1, 1.0, 10.0, 100.0],
            ks: (2..=9).collect(),
            sigmas: vec![0.1, 1.0, 10.0, 15.0, 30.0, 1000.0],
            zetas: vec![0.03, 0.05, 0.1, 0.15, 0.3, 0.5, 0.7],
        }
    }
}

/// One hyper-parameter cell of a Laplacian variant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCell {
    pub variant: LaplacianVariant,
    pub beta: f64,
    pub k: usize,
    pub sigma: f64,
    pub zeta: f64,
}

impl GridCell {
    pub fn label(&self) -> String {
        match self.variant {
            LaplacianVariant::None => "beta=0".into(),
            LaplacianVariant::Lle => format!("beta={} k={}", self.beta, self.k),
            LaplacianVariant::GaussianKnn => format!("beta={} k={} sigma={}", self.beta, self.k, self.sigma),
            LaplacianVariant::Threshold => format!("beta={} sigma={} zeta={}", self.beta, self.sigma, self.zeta),
        }
    }
}

impl LaplacianGrid {
    pub fn cells(&self, variant: LaplacianVariant) -> Vec<GridCell> {
        let base = GridCell {
            variant,
            beta: 0.0,
            k: 0,
            sigma: 0.0,
            zeta: 0.0,
        };
        let mut out = Vec::new();
        match variant {
            LaplacianVariant::None => out.push(base),
            LaplacianVariant::Lle => {
                for &beta in &self.betas {
                    for &k in &self.ks {
                        out.push(GridCell { beta, k, ..base });
                    }
                }
            }
            LaplacianVariant::GaussianKnn => {
                for &beta in &self.betas {
                    for &k in &self.ks {
                        for &sigma in &self.sigmas {
                            out.push(GridCell { beta, k, sigma, ..base });
                        }
                    }
                }
            }
            LaplacianVariant::Threshold => {
                for &beta in &self.betas {
                    for &sigma in &self.sigmas {
                        for &zeta in &self.zetas {
                            out.push(GridCell { beta, sigma, zeta, ..base });
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LaplacianComparisonConfig {
    pub labelled_per_class: usize,
    pub variants: Vec<LaplacianVariant>,
    pub grid: LaplacianGrid,
    pub lambda: f64,
    pub atoms: usize,
    pub alpha: f64,
    /// Ridge values `μ/γ` tried by cross-validation.
    pub ridge_grid: Vec<f64>,
    pub cv_folds: usize,
    pub noise_levels: Vec<f64>,
    /// Dictionary initializations per cell; the best score is kept.
    pub restarts: usize,
    pub outer_max_iters: usize,
    pub outer_rel_tol: f64,
    pub fista: FistaParams,
    /// Scores only the first `test_limit` test samples when set.
    pub test_limit: Option<usize>,
    pub seed: u64,
    pub timings: bool,
}

impl Default for LaplacianComparisonConfig {
    fn default() -> Self {
        LaplacianComparisonConfig {
            labelled_per_class: 50,
            variants: vec![
                LaplacianVariant::None,
                LaplacianVariant::GaussianKnn,
                LaplacianVariant::Threshold,
                LaplacianVariant::Lle,
            ],
            grid: LaplacianGrid::default(),
            lambda: 0.5,
            atoms: 128,
            alpha: 1.0,
            ridge_grid: vec![0.1, 1.0, 10.0],
            cv_folds: 5,
            noise_levels: vec![0.0],
            restarts: 3,
            outer_max_iters: 30,
            outer_rel_tol: 1e-4,
            fista: FistaParams::default(),
            test_limit: None,
            seed: 0,
            timings: false,
        }
    }
}

/// Builds the labelled-sample graph of a cell, normalized to trace `N_l`.
pub fn cell_graph(x: ArrayView2<f64>, cell: &GridCell) -> Result<Option<NeighborGraph>> {
    let target = x.ncols() as f64;
    Ok(match cell.variant {
        LaplacianVariant::None => None,
        LaplacianVariant::Lle => Some(graph::build_lle_graph(x, cell.k, target)?),
        LaplacianVariant::GaussianKnn => Some(graph::build_gaussian_knn_laplacian(
            x,
            &GaussianGraphParams {
                sigma: cell.sigma,
                zeta: 0.5,
                k: cell.k,
            },
            target,
        )?),
        LaplacianVariant::Threshold => Some(graph::build_threshold_laplacian(
            x,
            &GaussianGraphParams {
                sigma: cell.sigma,
                zeta: cell.zeta,
                k: 1,
            },
            target,
        )?),
    })
}

fn cell_rule(cell: &GridCell, graph: Option<&NeighborGraph>) -> CodingRule {
    match (cell.variant, graph) {
        (LaplacianVariant::Lle, _) => CodingRule::Lle { k: cell.k },
        (LaplacianVariant::GaussianKnn, _) => CodingRule::GaussianKnn {
            k: cell.k,
            sigma: cell.sigma,
        },
        (LaplacianVariant::Threshold, Some(g)) => CodingRule::Threshold {
            sigma: cell.sigma,
            kappa: g.kappa.unwrap_or(f64::INFINITY),
        },
        _ => CodingRule::Plain,
    }
}

/// Dictionary learning without classifier on labelled samples per Laplacian
/// variant, a cross-validated ridge classifier on the labelled codes, and
/// test samples coded with the variant's anchoring rule. For every noise
/// level, variant and grid cell the best of `restarts` dictionary
/// initializations is kept; `Best` rows hold the best cell per variant.
pub fn run_laplacian_comparison(
    train_pool: &LabeledDataset,
    test: &LabeledDataset,
    config: &LaplacianComparisonConfig,
) -> Result<ExperimentReport> {
    if config.restarts == 0 {
        return Err(Error::InvalidConfig("restarts must be at least 1".into()));
    }
    config.fista.validate()?;
    let spec = SplitSpec {
        labelled_per_class: config.labelled_per_class,
        unlabelled_per_class: 0,
        test_per_class: 0,
        seed: crate::seed::derive(config.seed, &[0]),
    };
    let split = data::split(train_pool, &spec)?;
    let test_count = config.test_limit.map_or(test.len(), |l| l.min(test.len()));
    let test_x = test.x.slice(s![.., ..test_count]).to_owned();
    let test_y = &test.y[..test_count];

    let mut tasks = Vec::new();
    for (ni, &noise) in config.noise_levels.iter().enumerate() {
        for &variant in &config.variants {
            for cell in config.grid.cells(variant) {
                for restart in 0..config.restarts {
                    tasks.push((ni, noise, cell, restart));
                }
            }
        }
    }
    let noisy: Vec<(Array2<f64>, Array2<f64>)> = config
        .noise_levels
        .iter()
        .enumerate()
        .map(|(ni, &noise)| {
            (
                data::add_gaussian_noise(split.x_labelled.view(), noise, crate::seed::derive(config.seed, &[1, ni as u64, 0])),
                data::add_gaussian_noise(test_x.view(), noise, crate::seed::derive(config.seed, &[1, ni as u64, 1])),
            )
        })
        .collect();

    let results: Vec<RunResult> = tasks
        .par_iter()
        .map(|&(ni, noise, cell, restart)| {
            let start = Instant::now();
            let (xl, xt) = &noisy[ni];
            let graph = cell_graph(xl.view(), &cell)?;
            let hp = HyperParams {
                lambda: config.lambda,
                beta: cell.beta,
                atoms: config.atoms,
                alpha: config.alpha,
                ..HyperParams::default()
            };
            let seed = crate::seed::derive(config.seed, &[2, restart as u64]);
            let (dictionary, codes, history) = trainer::train_reduced(
                xl.view(),
                graph.as_ref(),
                &hp,
                config.outer_max_iters,
                config.outer_rel_tol,
                &config.fista,
                seed,
            )?;
            let (clf, _) = ridge_classifier_fit_cv(
                codes.view(),
                &split.labels,
                train_pool.classes,
                &config.ridge_grid,
                config.cv_folds,
                crate::seed::derive(config.seed, &[3]),
            )?;
            let omega = graph.as_ref().map_or(1.0, |g| g.omega);
            let encoder = Encoder::new(
                &dictionary,
                xl.view(),
                codes.view(),
                hp.lambda,
                cell.beta,
                omega,
                cell_rule(&cell, graph.as_ref()),
                config.fista,
            )?;
            let (pred, _) = inference::predict_batch(&encoder, &clf, xt.view())?;
            Ok(RunResult {
                variant: cell.variant.name().into(),
                setting: cell.label(),
                noise,
                split: "test",
                repetition: restart,
                seed,
                accuracy: accuracy(&pred, test_y)?,
                history_len: history.len(),
                wall_time_s: config.timings.then(|| start.elapsed().as_secs_f64()),
            })
        })
        .collect::<Result<_>>()?;

    let runs: Vec<ReportRow> = results.iter().map(RunResult::row).collect();
    let mut rows = runs.clone();
    // Best restart per cell, then best cell per variant and noise level.
    let mut best: Vec<ReportRow> = Vec::new();
    for r in &runs {
        let slot = best
            .iter_mut()
            .find(|b| b.variant == r.variant && b.noise == r.noise);
        match slot {
            Some(b) if r.accuracy > b.accuracy => *b = best_row(r),
            Some(_) => {}
            None => best.push(best_row(r)),
        }
    }
    rows.extend(best);
    Ok(ExperimentReport {
        experiment: "laplacian-comparison".into(),
        config: serde_json::to_value(config).map_err(|e| Error::Report(e.to_string()))?,
        rows,
    })
}

fn best_row(r: &ReportRow) -> ReportRow {
    ReportRow {
        kind: RowKind::Best,
        wall_time_s: None,
        ..r.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub labelled_per_class: usize,
    /// Unlabelled samples per class at each sweep point.
    pub counts: Vec<usize>,
    pub test_per_class: usize,
    pub repetitions: usize,
    pub train: TrainConfig,
    pub seed: u64,
    pub timings: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            labelled_per_class: 20,
            counts: vec![0, 2, 5, 10, 20, 50, 100, 150],
            test_per_class: 100,
            repetitions: 5,
            train: TrainConfig::default(),
            seed: 0,
            timings: false,
        }
    }
}

/// Trains on `(x_l, x_u)` and scores the test and unlabelled samples.
fn train_and_score(
    split: &data::Split,
    unlabelled: &[usize],
    config: &TrainConfig,
    classes: usize,
) -> Result<(f64, Option<f64>, usize)> {
    let xu = split.x_unlabelled.select(Axis(1), unlabelled);
    let truth_u: Vec<usize> = unlabelled.iter().map(|&j| split.unlabelled_truth[j]).collect();
    let x = ndarray::concatenate(Axis(1), &[split.x_labelled.view(), xu.view()]).unwrap();
    let state = trainer::train(x.view(), &split.labels, classes, config)?;
    let encoder = Encoder::from_model(&state, config.fista)?;
    let (pred, _) = inference::predict_batch(&encoder, &state.classifier, split.x_test.view())?;
    let test_acc = accuracy(&pred, &split.test_labels)?;
    let unl_acc = if unlabelled.is_empty() {
        None
    } else {
        Some(accuracy(&state.transductive_predictions(), &truth_u)?)
    };
    Ok((test_acc, unl_acc, state.history.len()))
}

/// Accuracy against the number of unlabelled samples per class. Within a
/// repetition the labelled and test samples are shared by all sweep points
/// and smaller unlabelled sets are prefixes of larger ones.
pub fn run_unlabelled_sweep(pool: &LabeledDataset, config: &SweepConfig) -> Result<ExperimentReport> {
    config.train.validate()?;
    let max = config.counts.iter().copied().max().unwrap_or(0);
    let splits: Vec<data::Split> = (0..config.repetitions)
        .map(|rep| {
            data::split(
                pool,
                &SplitSpec {
                    labelled_per_class: config.labelled_per_class,
                    unlabelled_per_class: max,
                    test_per_class: config.test_per_class,
                    seed: crate::seed::derive(config.seed, &[0, rep as u64]),
                },
            )
        })
        .collect::<Result<_>>()?;
    let tasks: Vec<(usize, usize)> = config
        .counts
        .iter()
        .flat_map(|&count| (0..config.repetitions).map(move |rep| (count, rep)))
        .collect();
    let results: Vec<Vec<RunResult>> = tasks
        .par_iter()
        .map(|&(count, rep)| {
            let start = Instant::now();
            let unlabelled: Vec<usize> = (0..pool.classes)
                .flat_map(|c| c * max..c * max + count)
                .collect();
            let seed = crate::seed::derive(config.seed, &[1, rep as u64]);
            let train_config = TrainConfig {
                seed,
                ..config.train.clone()
            };
            let (test_acc, unl_acc, history_len) = train_and_score(&splits[rep], &unlabelled, &train_config, pool.classes)?;
            let wall = config.timings.then(|| start.elapsed().as_secs_f64());
            let mk = |split, accuracy| RunResult {
                variant: "ssdl-ga".into(),
                setting: format!("unlabelled={count}"),
                noise: 0.0,
                split,
                repetition: rep,
                seed,
                accuracy,
                history_len,
                wall_time_s: wall,
            };
            let mut out = vec![mk("test", test_acc)];
            if let Some(a) = unl_acc {
                out.push(mk("unlabelled", a));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let runs: Vec<ReportRow> = results.iter().flatten().map(RunResult::row).collect();
    let mut rows = runs.clone();
    rows.extend(summarize(&runs));
    Ok(ExperimentReport {
        experiment: "unlabelled-sweep".into(),
        config: serde_json::to_value(config).map_err(|e| Error::Report(e.to_string()))?,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    pub labelled_per_class: usize,
    pub unlabelled_per_class: usize,
    pub test_per_class: usize,
    pub repetitions: usize,
    pub train: TrainConfig,
    /// Also runs the same pipeline with `β = 0`.
    pub ablation: bool,
    pub seed: u64,
    pub timings: bool,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            labelled_per_class: 20,
            unlabelled_per_class: 40,
            test_per_class: 50,
            repetitions: 5,
            train: TrainConfig::default(),
            ablation: true,
            seed: 0,
            timings: false,
        }
    }
}

/// Full pipeline on repeated stratified splits; variant `ssdl-ga` and, with
/// ablation, `beta0`.
pub fn run_benchmark(pool: &LabeledDataset, config: &BenchmarkConfig) -> Result<ExperimentReport> {
    config.train.validate()?;
    let mut variants = vec![("ssdl-ga", config.train.hp.beta)];
    if config.ablation {
        variants.push(("beta0", 0.0));
    }
    let tasks: Vec<(usize, &str, f64)> = (0..config.repetitions)
        .flat_map(|rep| variants.iter().map(move |&(name, beta)| (rep, name, beta)))
        .collect();
    let results: Vec<Vec<RunResult>> = tasks
        .par_iter()
        .map(|&(rep, name, beta)| {
            let start = Instant::now();
            let spec = SplitSpec {
                labelled_per_class: config.labelled_per_class,
                unlabelled_per_class: config.unlabelled_per_class,
                test_per_class: config.test_per_class,
                seed: crate::seed::derive(config.seed, &[0, rep as u64]),
            };
            let split = data::split(pool, &spec)?;
            let seed = crate::seed::derive(config.seed, &[1, rep as u64]);
            let train_config = TrainConfig {
                seed,
                hp: HyperParams {
                    beta,
                    ..config.train.hp
                },
                ..config.train.clone()
            };
            let unlabelled: Vec<usize> = (0..split.x_unlabelled.ncols()).collect();
            let (test_acc, unl_acc, history_len) = train_and_score(&split, &unlabelled, &train_config, pool.classes)?;
            let wall = config.timings.then(|| start.elapsed().as_secs_f64());
            let mk = |split, accuracy| RunResult {
                variant: name.into(),
                setting: format!(
                    "{}/{}/{}",
                    config.labelled_per_class, config.unlabelled_per_class, config.test_per_class
                ),
                noise: 0.0,
                split,
                repetition: rep,
                seed,
                accuracy,
                history_len,
                wall_time_s: wall,
            };
            let mut out = vec![mk("test", test_acc)];
            if let Some(a) = unl_acc {
                out.push(mk("unlabelled", a));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let runs: Vec<ReportRow> = results.iter().flatten().map(RunResult::row).collect();
    let mut rows = runs.clone();
    rows.extend(summarize(&runs));
    Ok(ExperimentReport {
        experiment: "benchmark".into(),
        config: serde_json::to_value(config).map_err(|e| Error::Report(e.to_string()))?,
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Structured,
}

const CONFIG_PREFIX: &str = "# ";

/// Serializes a report. CSV holds one row per line under a header, preceded
/// by a `# {experiment, config}` comment line unless the config is null;
/// the structured format is JSON.
pub fn render_report(report: &ExperimentReport, format: ReportFormat) -> Result<Vec<u8>> {
    match format {
        ReportFormat::Structured => {
            let mut out = serde_json::to_vec_pretty(report).map_err(|e| Error::Report(e.to_string()))?;
            out.push(b'\n');
            Ok(out)
        }
        ReportFormat::Csv => {
            let mut out = Vec::new();
            if !report.config.is_null() || !report.experiment.is_empty() {
                let head = serde_json::json!({ "experiment": report.experiment, "config": report.config });
                writeln!(out, "{CONFIG_PREFIX}{head}").unwrap();
            }
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(&mut out);
            w.write_record(CSV_HEADER).map_err(|e| Error::Report(e.to_string()))?;
            for row in &report.rows {
                w.serialize(row).map_err(|e| Error::Report(e.to_string()))?;
            }
            w.flush().map_err(|e| Error::Report(e.to_string()))?;
            drop(w);
            Ok(out)
        }
    }
}

const CSV_HEADER: [&str; 13] = [
    "kind",
    "variant",
    "setting",
    "noise",
    "split",
    "repetition",
    "seed",
    "runs",
    "accuracy",
    "error",
    "std_accuracy",
    "history_len",
    "wall_time_s",
];

pub fn parse_report(bytes: &[u8], format: ReportFormat) -> Result<ExperimentReport> {
    match format {
        ReportFormat::Structured => serde_json::from_slice(bytes).map_err(|e| Error::Report(e.to_string())),
        ReportFormat::Csv => {
            let text = std::str::from_utf8(bytes).map_err(|e| Error::Report(e.to_string()))?;
            let (experiment, config, body) = match text.strip_prefix(CONFIG_PREFIX) {
                Some(rest) => {
                    let (line, body) = rest.split_once('\n').unwrap_or((rest, ""));
                    let head: serde_json::Value = serde_json::from_str(line).map_err(|e| Error::Report(e.to_string()))?;
                    let experiment = head["experiment"].as_str().unwrap_or_default().to_string();
                    (experiment, head["config"].clone(), body)
                }
                None => (String::new(), serde_json::Value::Null, text),
            };
            let mut r = csv::Reader::from_reader(body.as_bytes());
            let header = r.headers().map_err(|e| Error::Report(e.to_string()))?;
            if header.iter().ne(CSV_HEADER.iter().copied()) {
                return Err(Error::Report(format!("unexpected header {header:?}")));
            }
            let rows = r
                .deserialize()
                .collect::<std::result::Result<Vec<ReportRow>, _>>()
                .map_err(|e| Error::Report(e.to_string()))?;
            Ok(ExperimentReport { experiment, config, rows })
        }
    }
}

pub fn emit_report(report: &ExperimentReport, path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    let path = path.as_ref();
    let bytes = render_report(report, format)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_report(path: impl AsRef<Path>, format: ReportFormat) -> Result<ExperimentReport> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_report(&bytes, format)
}

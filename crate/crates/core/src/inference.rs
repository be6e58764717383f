//! Out-of-sample coding anchored to the training codes, and prediction.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{self, barycentric_weights, gaussian_weight};
use crate::model::{Classifier, Dictionary};
use crate::solver::{self, fista, FistaParams, SmoothProxProblem};
use crate::trainer::ModelState;

/// How a new sample's code is tied to the training codes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "rule")]
pub enum CodingRule {
    /// Plain lasso.
    Plain,
    /// `βω‖a − Σ λ̂_j a_j‖²` over the `k` nearest training samples.
    Lle { k: usize },
    /// `βω Σ ½ w_j ‖a − a_j‖²` with Gaussian weights on the `k` nearest
    /// training samples.
    GaussianKnn { k: usize, sigma: f64 },
    /// As `GaussianKnn` over the training samples closer than `kappa`.
    Threshold { sigma: f64, kappa: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSample {
    pub code: Array1<f64>,
    /// Training samples the anchor is built from.
    pub neighbor_ids: Vec<usize>,
    /// Their anchor weights; they sum to 1 whenever there is a neighbor.
    pub weights: Vec<f64>,
}

/// `‖x − Da‖² + c‖a − m‖² + λ‖a‖₁` in `a`, stored as a `p × 1` matrix.
struct AnchoredLasso<'a> {
    gram: &'a Array2<f64>,
    dtx: Array2<f64>,
    x_sq: f64,
    c: f64,
    anchor: Array2<f64>,
    lambda: f64,
}

impl SmoothProxProblem for AnchoredLasso<'_> {
    fn smooth_value(&self, a: &Array2<f64>) -> f64 {
        self.smooth_value_and_gradient(a).0
    }

    fn smooth_gradient(&self, a: &Array2<f64>) -> Array2<f64> {
        self.smooth_value_and_gradient(a).1
    }

    fn smooth_value_and_gradient(&self, a: &Array2<f64>) -> (f64, Array2<f64>) {
        let ga = self.gram.dot(a);
        let diff = a - &self.anchor;
        let value = self.x_sq - 2.0 * solver::inner(self.dtx.view(), a.view())
            + solver::inner(ga.view(), a.view())
            + self.c * solver::frob_sq(diff.view());
        let grad = (ga - &self.dtx) * 2.0 + diff * (2.0 * self.c);
        (value, grad)
    }

    fn penalty_value(&self, a: &Array2<f64>) -> f64 {
        self.lambda * solver::l1(a.view())
    }

    fn prox(&self, h: Array2<f64>, step: f64) -> Array2<f64> {
        solver::soft_threshold(h, self.lambda * step)
    }
}

/// Encodes new samples against a trained dictionary and training codes.
pub struct Encoder<'a> {
    dictionary: &'a Dictionary,
    gram: Array2<f64>,
    train_x: ArrayView2<'a, f64>,
    train_codes: ArrayView2<'a, f64>,
    lambda: f64,
    /// `β ω`.
    weight: f64,
    rule: CodingRule,
    fista: FistaParams,
}

impl<'a> Encoder<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        dictionary: &'a Dictionary,
        train_x: ArrayView2<'a, f64>,
        train_codes: ArrayView2<'a, f64>,
        lambda: f64,
        beta: f64,
        omega: f64,
        rule: CodingRule,
        fista: FistaParams,
    ) -> Result<Self> {
        let (n, p) = dictionary.atoms.dim();
        if train_x.nrows() != n || train_codes.nrows() != p || train_x.ncols() != train_codes.ncols() {
            return Err(Error::Shape(format!(
                "dictionary {:?}, training samples {:?}, training codes {:?}",
                dictionary.atoms.dim(),
                train_x.dim(),
                train_codes.dim()
            )));
        }
        match rule {
            CodingRule::Lle { k } | CodingRule::GaussianKnn { k, .. } if beta != 0.0 && (k == 0 || k > train_x.ncols()) => {
                return Err(Error::InvalidConfig(format!(
                    "k = {k} with {} training samples",
                    train_x.ncols()
                )));
            }
            _ => {}
        }
        Ok(Encoder {
            dictionary,
            gram: dictionary.atoms.t().dot(&dictionary.atoms),
            train_x,
            train_codes,
            lambda,
            weight: beta * omega,
            rule,
            fista,
        })
    }

    /// The encoder of a trained model: LLE anchoring with the training `k`,
    /// `β` and `ω`.
    pub fn from_model(state: &'a ModelState, fista: FistaParams) -> Result<Self> {
        Encoder::new(
            &state.dictionary,
            state.samples.view(),
            state.codes.view(),
            state.hp.lambda,
            state.hp.beta,
            state.graph.omega,
            CodingRule::Lle { k: state.hp.neighbors },
            fista,
        )
    }

    /// Anchor neighbors, their weights summing to 1, and the anchor strength
    /// `c`.
    fn anchor(&self, x: ArrayView1<f64>) -> Result<(Vec<usize>, Vec<f64>, f64)> {
        if self.weight == 0.0 {
            return Ok((Vec::new(), Vec::new(), 0.0));
        }
        match self.rule {
            CodingRule::Plain => Ok((Vec::new(), Vec::new(), 0.0)),
            CodingRule::Lle { k } => {
                let ids: Vec<usize> = knn(self.train_x, x, k)?.into_iter().map(|(j, _)| j).collect();
                let neighbors = self.train_x.select(Axis(1), &ids);
                let w = barycentric_weights(x, neighbors.view());
                Ok((ids, w.to_vec(), self.weight))
            }
            CodingRule::GaussianKnn { k, sigma } => {
                let found = knn(self.train_x, x, k)?;
                Ok(self.gaussian(found, sigma))
            }
            CodingRule::Threshold { sigma, kappa } => {
                let found = self
                    .train_x
                    .columns()
                    .into_iter()
                    .enumerate()
                    .filter_map(|(j, c)| {
                        let d = sq_dist(c, x);
                        (d.sqrt() < kappa).then_some((j, d))
                    })
                    .collect();
                Ok(self.gaussian(found, sigma))
            }
        }
    }

    fn gaussian(&self, found: Vec<(usize, f64)>, sigma: f64) -> (Vec<usize>, Vec<f64>, f64) {
        let raw: Vec<f64> = found.iter().map(|&(_, d)| gaussian_weight(d, sigma)).collect();
        let total: f64 = raw.iter().sum();
        if total == 0.0 {
            return (Vec::new(), Vec::new(), 0.0);
        }
        let ids = found.into_iter().map(|(j, _)| j).collect();
        (ids, raw.iter().map(|w| w / total).collect(), self.weight * total / 2.0)
    }

    pub fn encode(&self, x: ArrayView1<f64>) -> Result<EncodedSample> {
        let n = self.dictionary.atoms.nrows();
        if x.len() != n {
            return Err(Error::Shape(format!("sample has {} features, model expects {n}", x.len())));
        }
        let (neighbor_ids, weights, c) = self.anchor(x)?;
        let p = self.gram.nrows();
        let mut anchor = Array1::zeros(p);
        for (&j, &w) in neighbor_ids.iter().zip(&weights) {
            anchor.scaled_add(w, &self.train_codes.column(j));
        }
        let problem = AnchoredLasso {
            gram: &self.gram,
            dtx: self.dictionary.atoms.t().dot(&x).insert_axis(Axis(1)),
            x_sq: x.dot(&x),
            c,
            anchor: anchor.insert_axis(Axis(1)),
            lambda: self.lambda,
        };
        let out = fista(&problem, Array2::zeros((p, 1)), &self.fista)?;
        Ok(EncodedSample {
            code: out.solution.column(0).to_owned(),
            neighbor_ids,
            weights,
        })
    }

    /// Objective of the anchored problem at `code`.
    pub fn objective(&self, x: ArrayView1<f64>, code: ArrayView1<f64>) -> Result<f64> {
        let (ids, weights, c) = self.anchor(x)?;
        let residual = &x - &self.dictionary.atoms.dot(&code);
        let mut anchor = Array1::zeros(code.len());
        for (&j, &w) in ids.iter().zip(&weights) {
            anchor.scaled_add(w, &self.train_codes.column(j));
        }
        let diff = &code - &anchor;
        Ok(residual.dot(&residual) + c * diff.dot(&diff) + self.lambda * code.iter().map(|v| v.abs()).sum::<f64>())
    }

    /// Codes of every column of `x`, `p × M`, computed in parallel.
    pub fn encode_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let codes: Vec<Array1<f64>> = x
            .columns()
            .into_iter()
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|c| self.encode(c).map(|e| e.code))
            .collect::<Result<_>>()?;
        let mut out = Array2::zeros((self.gram.nrows(), codes.len()));
        for (mut col, code) in out.columns_mut().into_iter().zip(codes) {
            col.assign(&code);
        }
        Ok(out)
    }
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}

fn knn(train: ArrayView2<f64>, x: ArrayView1<f64>, k: usize) -> Result<Vec<(usize, f64)>> {
    graph::knn_query(train, x, k)
}

/// Out-of-sample LLE-anchored code of `x`.
#[allow(clippy::too_many_arguments)]
pub fn encode(
    x: ArrayView1<f64>,
    dictionary: &Dictionary,
    train_codes: ArrayView2<f64>,
    train_x: ArrayView2<f64>,
    hp: &crate::model::HyperParams,
    omega: f64,
    fista: &FistaParams,
) -> Result<EncodedSample> {
    Encoder::new(
        dictionary,
        train_x,
        train_codes,
        hp.lambda,
        hp.beta,
        omega,
        CodingRule::Lle { k: hp.neighbors },
        *fista,
    )?
    .encode(x)
}

/// Index of the largest value, the first one on ties.
pub fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.into_iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

pub fn predict(clf: &Classifier, code: ArrayView1<f64>) -> usize {
    argmax(clf.score(code))
}

/// Encodes and classifies every column of `x`. Returns the classes and the
/// `C × M` score matrix.
pub fn predict_batch(encoder: &Encoder, clf: &Classifier, x: ArrayView2<f64>) -> Result<(Vec<usize>, Array2<f64>)> {
    let codes = encoder.encode_batch(x)?;
    let scores = clf.scores(codes.view());
    let classes = scores.columns().into_iter().map(|c| argmax(c.iter().copied())).collect();
    Ok((classes, scores))
}

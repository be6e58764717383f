//! The joint objective and its alternating sub-problem updates: active masks,
//! class probabilities, sparse coding (full and batched), dictionary update
//! and classifier update.

use nalgebra::DMatrix;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::NeighborGraph;
use crate::solver::{self, fista, FistaDiagnostics, FistaParams, SmoothProxProblem};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperParams {
    /// Sparsity weight λ.
    pub lambda: f64,
    /// Manifold weight β.
    pub beta: f64,
    /// Classification weight γ.
    pub gamma: f64,
    /// Classifier ridge μ.
    pub mu: f64,
    /// Atom norm bound α.
    pub alpha: f64,
    /// Number of atoms p.
    pub atoms: usize,
    /// Neighbor count k of the manifold graph.
    pub neighbors: usize,
    /// Probability activation exponent r.
    pub r: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            lambda: 0.3,
            beta: 0.5,
            gamma: 0.5,
            mu: 1.0,
            alpha: 1.0,
            atoms: 200,
            neighbors: 8,
            r: 1.7,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [("lambda", self.lambda), ("beta", self.beta), ("gamma", self.gamma), ("mu", self.mu)];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.atoms == 0 {
            return Err(Error::InvalidConfig("atom count must be at least 1".into()));
        }
        if self.neighbors == 0 {
            return Err(Error::InvalidConfig("neighbor count must be at least 1".into()));
        }
        if !(self.r >= 1.0 && self.r.is_finite()) {
            return Err(Error::InvalidConfig(format!("r must be at least 1, got {}", self.r)));
        }
        Ok(())
    }
}

/// `n × p` atom matrix with every column norm at most α.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    pub atoms: Array2<f64>,
}

impl Dictionary {
    pub fn max_atom_norm(&self) -> f64 {
        self.atoms
            .columns()
            .into_iter()
            .map(|c| c.dot(&c).sqrt())
            .fold(0.0, f64::max)
    }

    pub fn satisfies_bound(&self, alpha: f64) -> bool {
        self.max_atom_norm() <= alpha + 1e-12
    }
}

/// `p × N` code matrix, labelled columns first.
pub type SparseCodes = Array2<f64>;

/// One-vs-all linear classifier in code space.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    /// `C × p`.
    pub weights: Array2<f64>,
    /// `C`.
    pub bias: Array1<f64>,
}

impl Classifier {
    pub fn zeros(classes: usize, atoms: usize) -> Self {
        Classifier {
            weights: Array2::zeros((classes, atoms)),
            bias: Array1::zeros(classes),
        }
    }

    pub fn classes(&self) -> usize {
        self.weights.nrows()
    }

    /// `W A + b 𝟙ᵀ`, one column of class scores per code.
    pub fn scores(&self, codes: ArrayView2<f64>) -> Array2<f64> {
        let mut s = self.weights.dot(&codes);
        s += &self.bias.view().insert_axis(Axis(1));
        s
    }

    pub fn score(&self, code: ArrayView1<f64>) -> Array1<f64> {
        self.weights.dot(&code) + &self.bias
    }
}

/// Class-membership probabilities of the unlabelled samples, `C × N_u`, each
/// column on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMatrix {
    pub probs: Array2<f64>,
}

impl ProbabilityMatrix {
    pub fn uniform(classes: usize, unlabelled: usize) -> Self {
        ProbabilityMatrix {
            probs: Array2::from_elem((classes, unlabelled), 1.0 / classes as f64),
        }
    }
}

/// `±1` label matrix `Y`, `C × N_l`, with one `+1` per column.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix {
    pub y: Array2<f64>,
}

impl LabelMatrix {
    pub fn new(labels: &[usize], classes: usize) -> Self {
        let mut y = Array2::from_elem((classes, labels.len()), -1.0);
        for (i, &c) in labels.iter().enumerate() {
            y[[c, i]] = 1.0;
        }
        LabelMatrix { y }
    }
}

#[inline]
fn target(c: usize, k: usize) -> f64 {
    if c == k {
        1.0
    } else {
        -1.0
    }
}

/// Codes inside the classifier margin.
///
/// `labelled[c, i]` is set when `y_i^c (w_c·a_i + b_c) < 1`; `unlabelled[k][c, j]`
/// when the same holds for unlabelled code `j` under the hypothesis that it
/// belongs to class `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveMasks {
    pub labelled: Array2<bool>,
    pub unlabelled: Vec<Array2<bool>>,
}

impl ActiveMasks {
    /// Every entry active: the plain squared loss.
    pub fn all_active(classes: usize, labelled: usize, unlabelled: usize) -> Self {
        ActiveMasks {
            labelled: Array2::from_elem((classes, labelled), true),
            unlabelled: vec![Array2::from_elem((classes, unlabelled), true); classes],
        }
    }
}

/// Samples with the labelled block first.
#[derive(Debug, Clone, Copy)]
pub struct Samples<'a> {
    /// `n × N`.
    pub x: ArrayView2<'a, f64>,
    /// Labels of the first `labels.len()` columns.
    pub labels: &'a [usize],
    pub classes: usize,
}

impl<'a> Samples<'a> {
    pub fn new(x: ArrayView2<'a, f64>, labels: &'a [usize], classes: usize) -> Result<Self> {
        if labels.len() > x.ncols() {
            return Err(Error::Shape(format!(
                "{} labels for only {} samples",
                labels.len(),
                x.ncols()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&c| c >= classes) {
            return Err(Error::InvalidConfig(format!("label {bad} outside [0, {classes})")));
        }
        Ok(Samples { x, labels, classes })
    }

    pub fn n_labelled(&self) -> usize {
        self.labels.len()
    }

    pub fn n_unlabelled(&self) -> usize {
        self.x.ncols() - self.labels.len()
    }

    pub fn len(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.x.ncols() == 0
    }
}

/// Per-entry weights of the classifier loss with masks and probabilities
/// frozen: for code column `j` and class `c` the loss is
/// `h·s² − 2·g·s + h` in the score `s = w_c·a_j + b_c`.
#[derive(Debug, Clone)]
pub struct LossWeights {
    pub h: Array2<f64>,
    pub g: Array2<f64>,
}

impl LossWeights {
    pub fn new(labels: &[usize], classes: usize, probs: &ProbabilityMatrix, masks: &ActiveMasks, r: f64) -> Self {
        let n_l = labels.len();
        let n_u = probs.probs.ncols();
        let mut h = Array2::zeros((classes, n_l + n_u));
        let mut g = Array2::zeros((classes, n_l + n_u));
        for (i, &label) in labels.iter().enumerate() {
            for c in 0..classes {
                if masks.labelled[[c, i]] {
                    h[[c, i]] = 1.0;
                    g[[c, i]] = target(c, label);
                }
            }
        }
        for j in 0..n_u {
            for k in 0..classes {
                let weight = probs.probs[[k, j]].powf(r);
                if weight == 0.0 {
                    continue;
                }
                let mask = &masks.unlabelled[k];
                for c in 0..classes {
                    if mask[[c, j]] {
                        h[[c, n_l + j]] += weight;
                        g[[c, n_l + j]] += weight * target(c, k);
                    }
                }
            }
        }
        LossWeights { h, g }
    }

    fn columns(&self, cols: &[usize]) -> LossWeights {
        LossWeights {
            h: self.h.select(Axis(1), cols),
            g: self.g.select(Axis(1), cols),
        }
    }

    /// `Σ h s² − 2 g s + h`.
    fn loss(&self, scores: ArrayView2<f64>) -> f64 {
        let mut acc = 0.0;
        Zip::from(scores)
            .and(&self.h)
            .and(&self.g)
            .for_each(|&s, &h, &g| acc += h * s * s - 2.0 * g * s + h);
        acc
    }

    /// `h ∘ S − g`, half the derivative of the loss in the scores.
    fn residual(&self, scores: ArrayView2<f64>) -> Array2<f64> {
        let mut out = scores.to_owned();
        Zip::from(&mut out)
            .and(&self.h)
            .and(&self.g)
            .for_each(|s, &h, &g| *s = h * *s - g);
        out
    }
}

fn check_shapes(
    samples: &Samples,
    dictionary: &Dictionary,
    codes: ArrayView2<f64>,
    clf: &Classifier,
    probs: &ProbabilityMatrix,
) -> Result<()> {
    let (n, p) = dictionary.atoms.dim();
    if samples.x.nrows() != n {
        return Err(Error::Shape(format!("samples have {} features, dictionary {}", samples.x.nrows(), n)));
    }
    if codes.dim() != (p, samples.len()) {
        return Err(Error::Shape(format!(
            "codes are {:?}, expected ({p}, {})",
            codes.dim(),
            samples.len()
        )));
    }
    if clf.weights.dim() != (samples.classes, p) || clf.bias.len() != samples.classes {
        return Err(Error::Shape(format!(
            "classifier is {:?}, expected ({}, {p})",
            clf.weights.dim(),
            samples.classes
        )));
    }
    if probs.probs.dim() != (samples.classes, samples.n_unlabelled()) {
        return Err(Error::Shape(format!(
            "probabilities are {:?}, expected ({}, {})",
            probs.probs.dim(),
            samples.classes,
            samples.n_unlabelled()
        )));
    }
    Ok(())
}

/// The full objective with masks and probabilities as given.
#[allow(clippy::too_many_arguments)]
pub fn objective(
    samples: &Samples,
    graph: Option<&NeighborGraph>,
    dictionary: &Dictionary,
    codes: ArrayView2<f64>,
    clf: &Classifier,
    probs: &ProbabilityMatrix,
    masks: &ActiveMasks,
    hp: &HyperParams,
) -> Result<f64> {
    check_shapes(samples, dictionary, codes, clf, probs)?;
    let residual = &samples.x - &dictionary.atoms.dot(&codes);
    let mut value = solver::frob_sq(residual.view()) + hp.lambda * solver::l1(codes);
    if let Some(graph) = graph {
        if hp.beta != 0.0 {
            value += hp.beta * graph.quadratic_form(codes);
        }
    }
    if hp.gamma != 0.0 {
        let weights = LossWeights::new(samples.labels, samples.classes, probs, masks, hp.r);
        value += hp.gamma * weights.loss(clf.scores(codes).view());
    }
    value += hp.mu * (solver::frob_sq(clf.weights.view()) + clf.bias.dot(&clf.bias));
    Ok(value)
}

/// `‖X − DA‖² + β tr(A L Aᵀ) + λ‖A‖₁`, the objective without a classifier.
pub fn reduced_objective(
    x: ArrayView2<f64>,
    graph: Option<&NeighborGraph>,
    dictionary: &Dictionary,
    codes: ArrayView2<f64>,
    hp: &HyperParams,
) -> f64 {
    let residual = &x - &dictionary.atoms.dot(&codes);
    let mut value = solver::frob_sq(residual.view()) + hp.lambda * solver::l1(codes);
    if let Some(graph) = graph {
        if hp.beta != 0.0 {
            value += hp.beta * graph.quadratic_form(codes);
        }
    }
    value
}

/// Recomputes the margin masks from the current classifier and codes. An
/// entry exactly on the margin is inactive.
pub fn update_active_masks(clf: &Classifier, codes: ArrayView2<f64>, labels: &[usize]) -> ActiveMasks {
    let classes = clf.classes();
    let n_l = labels.len();
    let scores = clf.scores(codes);
    let labelled = Array2::from_shape_fn((classes, n_l), |(c, i)| target(c, labels[i]) * scores[[c, i]] < 1.0);
    let unlabelled = (0..classes)
        .map(|k| {
            Array2::from_shape_fn((classes, codes.ncols() - n_l), |(c, j)| {
                target(c, k) * scores[[c, n_l + j]] < 1.0
            })
        })
        .collect();
    ActiveMasks { labelled, unlabelled }
}

/// Simplex minimizer of `Σ_k p_k^r e_k` for nonnegative costs `e`.
pub fn simplex_minimizer(costs: &[f64], r: f64) -> Vec<f64> {
    let classes = costs.len();
    let mut p = vec![0.0; classes];
    let zeros: Vec<usize> = (0..classes).filter(|&k| costs[k] <= 0.0).collect();
    if !zeros.is_empty() {
        for &k in &zeros {
            p[k] = 1.0 / zeros.len() as f64;
        }
        return p;
    }
    if r <= 1.0 {
        let min = costs.iter().copied().fold(f64::INFINITY, f64::min);
        let ties: Vec<usize> = (0..classes).filter(|&k| costs[k] == min).collect();
        for &k in &ties {
            p[k] = 1.0 / ties.len() as f64;
        }
        return p;
    }
    // p_k ∝ e_k^{−1/(r−1)}, evaluated in log space.
    let expo = 1.0 / (r - 1.0);
    let logs: Vec<f64> = costs.iter().map(|e| -expo * e.ln()).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (pk, l) in p.iter_mut().zip(&logs) {
        *pk = (l - max).exp();
        total += *pk;
    }
    p.iter_mut().for_each(|v| *v /= total);
    p
}

/// Per-candidate-class costs `e_k[j] = Σ_c Qᵘ_k[c,j] (y_j^c(k) s_cj − 1)²`,
/// `C × N_u`.
pub fn probability_costs(clf: &Classifier, unlabelled_codes: ArrayView2<f64>, masks: &ActiveMasks) -> Array2<f64> {
    let classes = clf.classes();
    let scores = clf.scores(unlabelled_codes);
    Array2::from_shape_fn((classes, unlabelled_codes.ncols()), |(k, j)| {
        (0..classes)
            .filter(|&c| masks.unlabelled[k][[c, j]])
            .map(|c| {
                let m = target(c, k) * scores[[c, j]] - 1.0;
                m * m
            })
            .sum()
    })
}

/// Minimizes the unlabelled loss over `P` column by column on the simplex.
pub fn update_probabilities(
    clf: &Classifier,
    unlabelled_codes: ArrayView2<f64>,
    masks: &ActiveMasks,
    r: f64,
) -> ProbabilityMatrix {
    let costs = probability_costs(clf, unlabelled_codes, masks);
    let mut probs = Array2::zeros(costs.raw_dim());
    for (cost, mut out) in costs.columns().into_iter().zip(probs.columns_mut()) {
        let col = simplex_minimizer(&cost.to_vec(), r);
        out.assign(&Array1::from(col));
    }
    ProbabilityMatrix { probs }
}

enum Source {
    Batch(usize),
    Fixed,
}

struct GraphTerm {
    beta: f64,
    /// For each batch column, the Laplacian entries that couple it to other
    /// batch columns (batch-local indices).
    inner: Vec<Vec<(usize, f64)>>,
    /// `A_fixed · L[fixed, batch]`, constant while the batch is optimized.
    cross: Array2<f64>,
}

impl GraphTerm {
    fn new(graph: &NeighborGraph, beta: f64, codes: ArrayView2<f64>, columns: &[usize]) -> Self {
        let n = graph.len();
        let mut position = vec![None; n];
        for (b, &j) in columns.iter().enumerate() {
            position[j] = Some(b);
        }
        let p = codes.nrows();
        let mut cross = Array2::zeros((p, columns.len()));
        let mut inner = Vec::with_capacity(columns.len());
        for (b, &j) in columns.iter().enumerate() {
            let mut entries = Vec::new();
            let mut fixed = Vec::new();
            for (l, v) in graph.laplacian.row(j) {
                match position[l].map_or(Source::Fixed, Source::Batch) {
                    Source::Batch(pos) => entries.push((pos, v)),
                    Source::Fixed => fixed.push((l, v)),
                }
            }
            if !fixed.is_empty() {
                let mut col = cross.column_mut(b);
                for (l, v) in fixed {
                    col.scaled_add(v, &codes.column(l));
                }
            }
            inner.push(entries);
        }
        GraphTerm { beta, inner, cross }
    }

    /// `Z · L[batch, batch]`.
    fn apply_inner(&self, z: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(z.raw_dim());
        for (z_row, mut out_row) in z.rows().into_iter().zip(out.rows_mut()) {
            for (b, entries) in self.inner.iter().enumerate() {
                out_row[b] = entries.iter().map(|&(pos, v)| v * z_row[pos]).sum();
            }
        }
        out
    }
}

struct ClassifierTerm<'a> {
    gamma: f64,
    clf: &'a Classifier,
    weights: LossWeights,
}

/// Smooth part of the sparse coding problem over a subset of code columns,
/// all other columns held fixed; the nonsmooth part is `λ‖·‖₁`.
pub struct CodingProblem<'a> {
    gram: Array2<f64>,
    dtx: Array2<f64>,
    x_sq: f64,
    lambda: f64,
    graph: Option<GraphTerm>,
    classifier: Option<ClassifierTerm<'a>>,
}

impl<'a> CodingProblem<'a> {
    /// Builds the restricted problem for `columns` (ascending), reading the
    /// fixed columns from `codes`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        samples: &Samples,
        dictionary: &Dictionary,
        codes: ArrayView2<f64>,
        columns: &[usize],
        graph: Option<&NeighborGraph>,
        clf: &'a Classifier,
        weights: Option<&LossWeights>,
        hp: &HyperParams,
    ) -> Self {
        let d = &dictionary.atoms;
        let xb = samples.x.select(Axis(1), columns);
        let graph = match graph {
            Some(g) if hp.beta != 0.0 && !g.empty => Some(GraphTerm::new(g, hp.beta, codes, columns)),
            _ => None,
        };
        let classifier = match weights {
            Some(w) if hp.gamma != 0.0 => Some(ClassifierTerm {
                gamma: hp.gamma,
                clf,
                weights: w.columns(columns),
            }),
            _ => None,
        };
        CodingProblem {
            gram: d.t().dot(d),
            dtx: d.t().dot(&xb),
            x_sq: solver::frob_sq(xb.view()),
            lambda: hp.lambda,
            graph,
            classifier,
        }
    }

    fn evaluate(&self, z: &Array2<f64>, with_gradient: bool) -> (f64, Option<Array2<f64>>) {
        let gz = self.gram.dot(z);
        let mut value = self.x_sq - 2.0 * solver::inner(self.dtx.view(), z.view()) + solver::inner(gz.view(), z.view());
        let mut grad = with_gradient.then(|| (&gz - &self.dtx) * 2.0);

        if let Some(term) = &self.graph {
            let zl = term.apply_inner(z);
            value += term.beta * (solver::inner(zl.view(), z.view()) + 2.0 * solver::inner(term.cross.view(), z.view()));
            if let Some(g) = grad.as_mut() {
                g.scaled_add(2.0 * term.beta, &zl);
                g.scaled_add(2.0 * term.beta, &term.cross);
            }
        }
        if let Some(term) = &self.classifier {
            let scores = term.clf.scores(z.view());
            value += term.gamma * term.weights.loss(scores.view());
            if let Some(g) = grad.as_mut() {
                let resid = term.weights.residual(scores.view());
                g.scaled_add(2.0 * term.gamma, &term.clf.weights.t().dot(&resid));
            }
        }
        (value, grad)
    }
}

impl SmoothProxProblem for CodingProblem<'_> {
    fn smooth_value(&self, x: &Array2<f64>) -> f64 {
        self.evaluate(x, false).0
    }

    fn smooth_gradient(&self, x: &Array2<f64>) -> Array2<f64> {
        self.evaluate(x, true).1.unwrap()
    }

    fn smooth_value_and_gradient(&self, x: &Array2<f64>) -> (f64, Array2<f64>) {
        let (v, g) = self.evaluate(x, true);
        (v, g.unwrap())
    }

    fn penalty_value(&self, x: &Array2<f64>) -> f64 {
        self.lambda * solver::l1(x.view())
    }

    fn prox(&self, h: Array2<f64>, step: f64) -> Array2<f64> {
        solver::soft_threshold(h, self.lambda * step)
    }
}

/// Everything the sparse coding step holds fixed.
#[derive(Clone, Copy)]
pub struct CodingContext<'a, 's> {
    pub samples: &'a Samples<'s>,
    pub dictionary: &'a Dictionary,
    pub graph: Option<&'a NeighborGraph>,
    pub clf: &'a Classifier,
    pub probs: &'a ProbabilityMatrix,
    pub masks: &'a ActiveMasks,
    pub hp: &'a HyperParams,
}

impl CodingContext<'_, '_> {
    fn weights(&self) -> Option<LossWeights> {
        (self.hp.gamma != 0.0)
            .then(|| LossWeights::new(self.samples.labels, self.samples.classes, self.probs, self.masks, self.hp.r))
    }

    fn problem<'b>(&'b self, codes: ArrayView2<f64>, columns: &[usize], weights: Option<&LossWeights>) -> CodingProblem<'b> {
        CodingProblem::new(self.samples, self.dictionary, codes, columns, self.graph, self.clf, weights, self.hp)
    }

    /// Smooth part `f₂` of the sparse coding objective at `codes`.
    pub fn smooth_value(&self, codes: &Array2<f64>) -> f64 {
        let all: Vec<usize> = (0..codes.ncols()).collect();
        let w = self.weights();
        self.problem(codes.view(), &all, w.as_ref()).smooth_value(codes)
    }

    /// `∇f₂` at `codes`, `p × N`.
    pub fn gradient(&self, codes: &Array2<f64>) -> Array2<f64> {
        let all: Vec<usize> = (0..codes.ncols()).collect();
        let w = self.weights();
        self.problem(codes.view(), &all, w.as_ref()).smooth_gradient(codes)
    }
}

/// Gradient of the smooth part of the sparse coding objective.
pub fn sparse_coding_gradient(ctx: &CodingContext, codes: &Array2<f64>) -> Array2<f64> {
    ctx.gradient(codes)
}

/// Minimizes the sparse coding objective over all codes with FISTA.
pub fn sparse_coding(
    ctx: &CodingContext,
    initial: Array2<f64>,
    params: &FistaParams,
) -> Result<(SparseCodes, FistaDiagnostics)> {
    let all: Vec<usize> = (0..initial.ncols()).collect();
    let weights = ctx.weights();
    let problem = ctx.problem(initial.view(), &all, weights.as_ref());
    let out = fista(&problem, initial, params)?;
    Ok((out.solution, out.diagnostics))
}

/// Random partition of `0..n` into `batches` sorted index sets whose sizes
/// differ by at most one.
pub fn random_partition(n: usize, batches: usize, rng: &mut impl rand::Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    if batches > 1 {
        order.shuffle(rng);
    }
    let base = n / batches;
    let extra = n % batches;
    let mut out = Vec::with_capacity(batches);
    let mut start = 0;
    for b in 0..batches {
        let size = base + usize::from(b < extra);
        let mut chunk = order[start..start + size].to_vec();
        chunk.sort_unstable();
        start += size;
        if !chunk.is_empty() {
            out.push(chunk);
        }
    }
    out
}

/// Block-coordinate sparse coding: each epoch partitions the columns at
/// random into `batches` groups and runs FISTA on one group at a time with the
/// others fixed, writing the result back before the next group.
pub fn sparse_coding_batched(
    ctx: &CodingContext,
    initial: Array2<f64>,
    params: &FistaParams,
    batches: usize,
    epochs: usize,
    seed: u64,
) -> Result<SparseCodes> {
    if batches == 0 || epochs == 0 {
        return Err(Error::InvalidConfig("batch and epoch counts must be at least 1".into()));
    }
    let mut codes = initial;
    let weights = ctx.weights();
    let mut rng = crate::seed::rng(seed);
    for _ in 0..epochs {
        for columns in random_partition(codes.ncols(), batches, &mut rng) {
            let problem = ctx.problem(codes.view(), &columns, weights.as_ref());
            let block = codes.select(Axis(1), &columns);
            let out = fista(&problem, block, params)?;
            for (b, &j) in columns.iter().enumerate() {
                codes.column_mut(j).assign(&out.solution.column(b));
            }
        }
    }
    Ok(codes)
}

struct DictionaryProblem {
    aat: Array2<f64>,
    xat: Array2<f64>,
    x_sq: f64,
    alpha: f64,
}

impl SmoothProxProblem for DictionaryProblem {
    fn smooth_value(&self, d: &Array2<f64>) -> f64 {
        self.x_sq - 2.0 * solver::inner(d.view(), self.xat.view()) + solver::inner(d.dot(&self.aat).view(), d.view())
    }

    fn smooth_gradient(&self, d: &Array2<f64>) -> Array2<f64> {
        (d.dot(&self.aat) - &self.xat) * 2.0
    }

    fn smooth_value_and_gradient(&self, d: &Array2<f64>) -> (f64, Array2<f64>) {
        let daat = d.dot(&self.aat);
        let value = self.x_sq - 2.0 * solver::inner(d.view(), self.xat.view()) + solver::inner(daat.view(), d.view());
        (value, (daat - &self.xat) * 2.0)
    }

    fn penalty_value(&self, _: &Array2<f64>) -> f64 {
        0.0
    }

    fn prox(&self, h: Array2<f64>, _: f64) -> Array2<f64> {
        solver::project_columns_l2(h, self.alpha)
    }
}

/// Minimizes `‖X − DA‖²` over dictionaries with atom norms at most `alpha`.
pub fn dictionary_update(
    initial: &Dictionary,
    x: ArrayView2<f64>,
    codes: ArrayView2<f64>,
    alpha: f64,
    params: &FistaParams,
) -> Result<(Dictionary, FistaDiagnostics)> {
    if x.ncols() != codes.ncols() || initial.atoms.dim() != (x.nrows(), codes.nrows()) {
        return Err(Error::Shape(format!(
            "dictionary {:?}, samples {:?}, codes {:?}",
            initial.atoms.dim(),
            x.dim(),
            codes.dim()
        )));
    }
    let problem = DictionaryProblem {
        aat: codes.dot(&codes.t()),
        xat: x.dot(&codes.t()),
        x_sq: solver::frob_sq(x),
        alpha,
    };
    let start = solver::project_columns_l2(initial.atoms.clone(), alpha);
    let out = fista(&problem, start, params)?;
    Ok((Dictionary { atoms: out.solution }, out.diagnostics))
}

fn to_nalgebra(m: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]])
}

/// Solves the symmetric positive semi-definite system `M X = B`, returning
/// the least-norm solution when `M` is singular.
fn solve_psd(m: &Array2<f64>, rhs: &Array2<f64>) -> Array2<f64> {
    let mat = to_nalgebra(m);
    let b = to_nalgebra(rhs);
    let sol = match mat.clone().cholesky() {
        Some(chol) => chol.solve(&b),
        None => {
            let svd = mat.svd(true, true);
            let tol = svd.singular_values.max() * 1e-12 * m.nrows() as f64;
            svd.solve(&b, tol).expect("SVD with both factors computed")
        }
    };
    Array2::from_shape_fn((sol.nrows(), sol.ncols()), |(i, j)| sol[(i, j)])
}

/// `[A; 𝟙ᵀ]`.
fn augment(codes: ArrayView2<f64>) -> Array2<f64> {
    let (p, n) = codes.dim();
    let mut out = Array2::ones((p + 1, n));
    out.slice_mut(s![..p, ..]).assign(&codes);
    out
}

fn split_augmented(w: Array2<f64>) -> Classifier {
    let p = w.ncols() - 1;
    Classifier {
        bias: w.column(p).to_owned(),
        weights: w.slice(s![.., ..p]).to_owned(),
    }
}

/// Closed-form ridge initialization on the labelled codes:
/// `W' = Y Ãᵀ (Ã Ãᵀ + (μ/γ) I)⁻¹` with `Ã = [Aˡ; 𝟙ᵀ]`, `W' = [W, b]`.
pub fn classifier_init(
    labelled_codes: ArrayView2<f64>,
    labels: &[usize],
    classes: usize,
    gamma: f64,
    mu: f64,
) -> Result<Classifier> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidConfig(format!("gamma must be positive, got {gamma}")));
    }
    if labelled_codes.ncols() != labels.len() {
        return Err(Error::Shape(format!("{} codes for {} labels", labelled_codes.ncols(), labels.len())));
    }
    let y = LabelMatrix::new(labels, classes).y;
    let aug = augment(labelled_codes);
    let mut gram = aug.dot(&aug.t());
    let ridge = mu / gamma;
    gram.diag_mut().mapv_inplace(|v| v + ridge);
    // (ÃÃᵀ + ρI) Zᵀ = Ã Yᵀ, then W' = Z.
    let rhs = aug.dot(&y.t());
    let sol = solve_psd(&gram, &rhs);
    Ok(split_augmented(sol.t().to_owned()))
}

/// Weighted ridge regression per class over `(w_c, b_c)` with masks and
/// probabilities frozen.
#[allow(clippy::too_many_arguments)]
pub fn classifier_update(
    codes: ArrayView2<f64>,
    labels: &[usize],
    classes: usize,
    probs: &ProbabilityMatrix,
    masks: &ActiveMasks,
    gamma: f64,
    mu: f64,
    r: f64,
) -> Classifier {
    let weights = LossWeights::new(labels, classes, probs, masks, r);
    classifier_from_weights(codes, &weights, gamma, mu)
}

fn classifier_from_weights(codes: ArrayView2<f64>, weights: &LossWeights, gamma: f64, mu: f64) -> Classifier {
    let classes = weights.h.nrows();
    let p = codes.nrows();
    let aug = augment(codes);
    let mut w = Array2::zeros((classes, p + 1));
    for c in 0..classes {
        let h = weights.h.row(c);
        let scaled = &aug * &h.insert_axis(Axis(0));
        let mut normal = scaled.dot(&aug.t()) * gamma;
        normal.diag_mut().mapv_inplace(|v| v + mu);
        let rhs = aug.dot(&weights.g.row(c)) * gamma;
        let rhs = rhs.insert_axis(Axis(1)).to_owned();
        let sol = solve_psd(&normal, &rhs);
        w.row_mut(c).assign(&sol.column(0));
    }
    split_augmented(w)
}

fn power_iteration(apply: impl Fn(&Array1<f64>) -> Array1<f64>, dim: usize, steps: usize) -> f64 {
    use rand::Rng;
    if dim == 0 {
        return 0.0;
    }
    let mut rng = crate::seed::rng(0x5eed);
    let mut v: Array1<f64> = Array1::from_shape_fn(dim, |_| rng.random_range(-1.0..1.0));
    v /= v.dot(&v).sqrt();
    let mut estimate = 0.0;
    for _ in 0..steps {
        let mv = apply(&v);
        let norm = mv.dot(&mv).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        estimate = norm;
        v = mv / norm;
    }
    estimate
}

/// Diagnostic Lipschitz bound `2(‖DᵀD‖ + β‖L‖ + γC‖W‖²)` of the sparse coding
/// gradient, spectral norms from 20 power-iteration steps.
pub fn lipschitz_estimate(
    dictionary: &Dictionary,
    graph: Option<&NeighborGraph>,
    weights: ArrayView2<f64>,
    beta: f64,
    gamma: f64,
    classes: usize,
) -> f64 {
    const STEPS: usize = 20;
    let gram = dictionary.atoms.t().dot(&dictionary.atoms);
    let dtd = power_iteration(|v| gram.dot(v), gram.nrows(), STEPS);
    let lap = graph.map_or(0.0, |g| {
        power_iteration(|v| Array1::from(g.laplacian.mul_vec(v.as_slice().unwrap())), g.len(), STEPS)
    });
    let wtw = weights.t().dot(&weights);
    let w_sq = power_iteration(|v| wtw.dot(v), wtw.nrows(), STEPS);
    2.0 * (dtd + beta * lap + gamma * classes as f64 * w_sq)
}

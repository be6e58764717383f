//! Alternating minimization: initialization, the outer loop and the model
//! container.

use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::graph::{self, NeighborGraph};
use crate::model::{
    self, ActiveMasks, Classifier, CodingContext, Dictionary, HyperParams, ProbabilityMatrix, Samples, SparseCodes,
};
use crate::solver::FistaParams;
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Batching {
    pub batches: usize,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub hp: HyperParams,
    pub outer_max_iters: usize,
    pub outer_rel_tol: f64,
    pub fista: FistaParams,
    pub batching: Option<Batching>,
    pub seed: u64,
    /// Outer iterations run with `β = 0` before the graph is rebuilt from the
    /// reconstructions `DA`. Zero disables the warm-up.
    pub denoise_warmup: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hp: HyperParams::default(),
            outer_max_iters: 30,
            outer_rel_tol: 1e-4,
            fista: FistaParams::default(),
            batching: None,
            seed: 0,
            denoise_warmup: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.hp.validate()?;
        self.fista.validate()?;
        if self.outer_max_iters == 0 {
            return Err(Error::InvalidConfig("outer_max_iters must be at least 1".into()));
        }
        if !(self.outer_rel_tol >= 0.0) {
            return Err(Error::InvalidConfig("outer_rel_tol must be nonnegative".into()));
        }
        if let Some(b) = self.batching {
            if b.batches == 0 || b.epochs == 0 {
                return Err(Error::InvalidConfig("batch and epoch counts must be at least 1".into()));
            }
        }
        Ok(())
    }
}

/// Objective values inside one outer iteration. Masks and probabilities are
/// fixed from `after_probabilities` on, so the last four entries never
/// increase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub after_masks: f64,
    pub after_probabilities: f64,
    pub after_coding: f64,
    pub after_dictionary: f64,
    pub after_classifier: f64,
}

impl Segment {
    pub fn frozen(&self) -> [f64; 4] {
        [self.after_probabilities, self.after_coding, self.after_dictionary, self.after_classifier]
    }
}

#[derive(Debug, Clone)]
pub struct ModelState {
    pub hp: HyperParams,
    pub classes: usize,
    /// Training samples, labelled first, `n × N`.
    pub samples: Array2<f64>,
    pub labels: Vec<usize>,
    pub dictionary: Dictionary,
    pub codes: SparseCodes,
    pub classifier: Classifier,
    pub probs: ProbabilityMatrix,
    pub masks: ActiveMasks,
    pub graph: NeighborGraph,
    /// Full objective after every outer iteration.
    pub history: Vec<f64>,
    pub segments: Vec<Segment>,
}

impl ModelState {
    pub fn n_labelled(&self) -> usize {
        self.labels.len()
    }

    pub fn n_unlabelled(&self) -> usize {
        self.samples.ncols() - self.labels.len()
    }

    pub fn unlabelled_codes(&self) -> ArrayView2<'_, f64> {
        self.codes.slice(s![.., self.labels.len()..])
    }

    /// Predicted classes of the unlabelled training samples.
    pub fn transductive_predictions(&self) -> Vec<usize> {
        let scores = self.classifier.scores(self.unlabelled_codes());
        scores.columns().into_iter().map(|c| crate::inference::argmax(c.iter().copied())).collect()
    }

    pub fn objective(&self) -> Result<f64> {
        let samples = Samples::new(self.samples.view(), &self.labels, self.classes)?;
        model::objective(
            &samples,
            Some(&self.graph),
            &self.dictionary,
            self.codes.view(),
            &self.classifier,
            &self.probs,
            &self.masks,
            &self.hp,
        )
    }
}

/// Initial atoms. With more atoms than labelled samples every labelled
/// sample is used plus unlabelled samples drawn without replacement;
/// otherwise classes are visited in turn, each contributing one unused
/// labelled sample, and classes that run out are skipped. Atoms are finally
/// projected onto the `α` ball.
pub fn init_dictionary(
    x: ArrayView2<f64>,
    labels: &[usize],
    classes: usize,
    atoms: usize,
    alpha: f64,
    seed: u64,
) -> Result<Dictionary> {
    let n = x.ncols();
    let n_l = labels.len();
    if atoms == 0 || atoms > n {
        return Err(Error::InvalidConfig(format!("cannot draw {atoms} atoms from {n} samples")));
    }
    let mut rng = crate::seed::rng(seed);
    let chosen: Vec<usize> = if atoms > n_l {
        let extra = index::sample(&mut rng, n - n_l, atoms - n_l);
        (0..n_l).chain(extra.into_iter().map(|j| n_l + j)).collect()
    } else {
        let mut pools: Vec<Vec<usize>> = vec![Vec::new(); classes];
        for (i, &c) in labels.iter().enumerate() {
            pools[c].push(i);
        }
        for pool in &mut pools {
            pool.shuffle(&mut rng);
        }
        let mut chosen = Vec::with_capacity(atoms);
        while chosen.len() < atoms {
            for pool in &mut pools {
                if chosen.len() == atoms {
                    break;
                }
                if let Some(i) = pool.pop() {
                    chosen.push(i);
                }
            }
        }
        chosen
    };
    let atoms = crate::solver::project_columns_l2(x.select(Axis(1), &chosen), alpha);
    Ok(Dictionary {
        atoms: atoms.as_standard_layout().into_owned(),
    })
}

/// Column-wise lasso `min ‖X − DA‖² + λ‖A‖₁` from zero codes.
pub fn init_codes(x: ArrayView2<f64>, dictionary: &Dictionary, lambda: f64, params: &FistaParams) -> Result<SparseCodes> {
    let samples = Samples::new(x, &[], 1)?;
    let p = dictionary.atoms.ncols();
    let hp = HyperParams {
        lambda,
        beta: 0.0,
        gamma: 0.0,
        mu: 0.0,
        atoms: p,
        ..HyperParams::default()
    };
    let clf = Classifier::zeros(1, p);
    let probs = ProbabilityMatrix::uniform(1, x.ncols());
    let masks = ActiveMasks::all_active(1, 0, x.ncols());
    let ctx = CodingContext {
        samples: &samples,
        dictionary,
        graph: None,
        clf: &clf,
        probs: &probs,
        masks: &masks,
        hp: &hp,
    };
    Ok(model::sparse_coding(&ctx, Array2::zeros((p, x.ncols())), params)?.0)
}

fn classifier_start(codes: ArrayView2<f64>, labels: &[usize], classes: usize, hp: &HyperParams) -> Result<Classifier> {
    if hp.gamma == 0.0 {
        return Ok(Classifier::zeros(classes, codes.nrows()));
    }
    model::classifier_init(codes.slice(s![.., ..labels.len()]), labels, classes, hp.gamma, hp.mu)
}

fn check_labels(x: ArrayView2<f64>, labels: &[usize], classes: usize) -> Result<()> {
    if classes == 0 {
        return Err(Error::InvalidConfig("at least one class is required".into()));
    }
    let mut seen = vec![false; classes];
    for &c in labels {
        if c >= classes {
            return Err(Error::InvalidConfig(format!("label {c} outside [0, {classes})")));
        }
        seen[c] = true;
    }
    if let Some(c) = seen.iter().position(|s| !s) {
        return Err(Error::InvalidConfig(format!("class {c} has no labelled sample")));
    }
    if labels.len() > x.ncols() {
        return Err(Error::Shape(format!("{} labels for {} samples", labels.len(), x.ncols())));
    }
    Ok(())
}

/// Runs the alternating minimization on `x` (labelled columns first).
pub fn train(x: ArrayView2<f64>, labels: &[usize], classes: usize, config: &TrainConfig) -> Result<ModelState> {
    config.validate()?;
    check_labels(x, labels, classes)?;
    let hp = config.hp;
    let n = x.ncols();
    let mut graph = graph::build_lle_graph(x, hp.neighbors, n as f64)?;

    let dictionary = init_dictionary(x, labels, classes, hp.atoms, hp.alpha, crate::seed::derive(config.seed, &[0]))?;
    let codes = init_codes(x, &dictionary, hp.lambda, &config.fista)?;
    let classifier = classifier_start(codes.view(), labels, classes, &hp)?;
    let masks = model::update_active_masks(&classifier, codes.view(), labels);
    let mut state = ModelState {
        hp,
        classes,
        samples: x.as_standard_layout().into_owned(),
        labels: labels.to_vec(),
        dictionary,
        codes,
        classifier,
        probs: ProbabilityMatrix::uniform(classes, n - labels.len()),
        masks,
        graph: graph.clone(),
        history: Vec::new(),
        segments: Vec::new(),
    };

    if config.denoise_warmup > 0 {
        let warm_hp = HyperParams { beta: 0.0, ..hp };
        for iter in 0..config.denoise_warmup {
            outer_iteration(&mut state, &graph, &warm_hp, config, iter as u64)?;
        }
        let denoised = state.dictionary.atoms.dot(&state.codes);
        graph = graph::build_lle_graph(denoised.view(), hp.neighbors, n as f64)?;
        state.graph = graph.clone();
        state.history.clear();
        state.segments.clear();
    }

    for iter in 0..config.outer_max_iters {
        let value = outer_iteration(&mut state, &graph, &hp, config, (config.denoise_warmup + iter) as u64)?;
        let converged = state
            .history
            .last()
            .is_some_and(|&prev| (prev - value).abs() <= config.outer_rel_tol * prev.abs().max(f64::MIN_POSITIVE));
        state.history.push(value);
        if converged {
            break;
        }
    }
    // Masks consistent with the final classifier and codes.
    state.masks = model::update_active_masks(&state.classifier, state.codes.view(), labels);
    Ok(state)
}

/// One pass of masks, probabilities, codes, dictionary and classifier.
/// Returns the objective at its end.
fn outer_iteration(state: &mut ModelState, graph: &NeighborGraph, hp: &HyperParams, config: &TrainConfig, iter: u64) -> Result<f64> {
    let x = state.samples.clone();
    let labels = state.labels.clone();
    let samples = Samples::new(x.view(), &labels, state.classes)?;
    let n_l = labels.len();
    let eval = |state: &ModelState| {
        model::objective(
            &samples,
            Some(graph),
            &state.dictionary,
            state.codes.view(),
            &state.classifier,
            &state.probs,
            &state.masks,
            hp,
        )
    };
    let diverged = |state: &ModelState, what: &str| Error::Diverged {
        what: what.to_string(),
        history: state.history.clone(),
    };

    state.masks = model::update_active_masks(&state.classifier, state.codes.view(), &labels);
    let after_masks = eval(state)?;
    state.probs = model::update_probabilities(&state.classifier, state.codes.slice(s![.., n_l..]), &state.masks, hp.r);
    let after_probabilities = eval(state)?;

    let ctx = CodingContext {
        samples: &samples,
        dictionary: &state.dictionary,
        graph: Some(graph),
        clf: &state.classifier,
        probs: &state.probs,
        masks: &state.masks,
        hp,
    };
    let codes = match config.batching {
        Some(b) => model::sparse_coding_batched(
            &ctx,
            state.codes.clone(),
            &config.fista,
            b.batches,
            b.epochs,
            crate::seed::derive(config.seed, &[1, iter]),
        ),
        None => model::sparse_coding(&ctx, state.codes.clone(), &config.fista).map(|o| o.0),
    }
    .map_err(|e| match e {
        Error::Numerical { what, .. } => diverged(state, &format!("sparse coding: {what}")),
        other => other,
    })?;
    state.codes = codes;
    let after_coding = eval(state)?;

    let (dictionary, _) = model::dictionary_update(&state.dictionary, x.view(), state.codes.view(), hp.alpha, &config.fista)
        .map_err(|e| match e {
            Error::Numerical { what, .. } => diverged(state, &format!("dictionary update: {what}")),
            other => other,
        })?;
    state.dictionary = dictionary;
    let after_dictionary = eval(state)?;

    state.classifier = if hp.gamma == 0.0 {
        Classifier::zeros(state.classes, hp.atoms)
    } else {
        model::classifier_update(
            state.codes.view(),
            &labels,
            state.classes,
            &state.probs,
            &state.masks,
            hp.gamma,
            hp.mu,
            hp.r,
        )
    };
    let after_classifier = eval(state)?;
    if !after_classifier.is_finite() {
        return Err(diverged(state, "non-finite objective"));
    }
    state.segments.push(Segment {
        after_masks,
        after_probabilities,
        after_coding,
        after_dictionary,
        after_classifier,
    });
    Ok(after_classifier)
}

/// Dictionary learning on the reduced objective `‖X − DA‖² + β tr(A L Aᵀ) +
/// λ‖A‖₁`: alternates sparse coding and dictionary update, no classifier.
/// Returns the dictionary, the codes and the objective per outer iteration.
pub fn train_reduced(
    x: ArrayView2<f64>,
    graph: Option<&NeighborGraph>,
    hp: &HyperParams,
    outer_max_iters: usize,
    outer_rel_tol: f64,
    fista: &FistaParams,
    seed: u64,
) -> Result<(Dictionary, SparseCodes, Vec<f64>)> {
    let n = x.ncols();
    let mut dictionary = init_dictionary(x, &[], 1, hp.atoms, hp.alpha, seed)?;
    let mut codes = init_codes(x, &dictionary, hp.lambda, fista)?;
    let samples = Samples::new(x, &[], 1)?;
    let coding_hp = HyperParams {
        gamma: 0.0,
        mu: 0.0,
        ..*hp
    };
    let clf = Classifier::zeros(1, hp.atoms);
    let probs = ProbabilityMatrix::uniform(1, n);
    let masks = ActiveMasks::all_active(1, 0, n);
    let mut history: Vec<f64> = Vec::new();
    for _ in 0..outer_max_iters {
        let ctx = CodingContext {
            samples: &samples,
            dictionary: &dictionary,
            graph,
            clf: &clf,
            probs: &probs,
            masks: &masks,
            hp: &coding_hp,
        };
        codes = model::sparse_coding(&ctx, codes, fista)?.0;
        dictionary = model::dictionary_update(&dictionary, x, codes.view(), hp.alpha, fista)?.0;
        let value = model::reduced_objective(x, graph, &dictionary, codes.view(), hp);
        if !value.is_finite() {
            return Err(Error::Diverged {
                what: "non-finite reduced objective".into(),
                history,
            });
        }
        let converged = history
            .last()
            .is_some_and(|&prev| (prev - value).abs() <= outer_rel_tol * prev.abs().max(f64::MIN_POSITIVE));
        history.push(value);
        if converged {
            break;
        }
    }
    Ok((dictionary, codes, history))
}

pub const MODEL_MAGIC: &[u8; 8] = b"SSDLGA\0\0";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("{}: not a model file", path.display())]
    BadMagic { path: PathBuf },

    #[error("{}: format version {found}, this build reads {expected}", path.display())]
    Version { path: PathBuf, found: u32, expected: u32 },

    #[error("{}: truncated while reading {what}", path.display())]
    Truncated { path: PathBuf, what: &'static str },

    #[error("{}: inconsistent contents: {what}", path.display())]
    ShapeMismatch { path: PathBuf, what: String },
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn matrix(&mut self, m: ArrayView2<f64>) {
        for row in m.rows() {
            for &v in row {
                self.f64(v);
            }
        }
    }
}

/// Writes the model container: magic, version, dimensions
/// `(n, p, N_l, N_u, C, k)`, then row-major little-endian `D, A, W, b, P, V`,
/// followed by `ω`, the hyper-parameters, the neighbor lists, the labels, the
/// training samples and the objective history.
pub fn save_model(state: &ModelState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let n = state.samples.nrows();
    let p = state.dictionary.atoms.ncols();
    let total = state.samples.ncols();
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MODEL_MAGIC);
    w.u32(MODEL_VERSION);
    for d in [n, p, state.n_labelled(), state.n_unlabelled(), state.classes, state.graph.k] {
        w.u64(d as u64);
    }
    w.matrix(state.dictionary.atoms.view());
    w.matrix(state.codes.view());
    w.matrix(state.classifier.weights.view());
    for &v in &state.classifier.bias {
        w.f64(v);
    }
    w.matrix(state.probs.probs.view());
    w.matrix(state.graph.weights.to_dense().view());
    w.f64(state.graph.omega);
    let hp = &state.hp;
    for v in [hp.lambda, hp.beta, hp.gamma, hp.mu, hp.alpha, hp.r] {
        w.f64(v);
    }
    debug_assert_eq!(state.graph.indices.len(), total);
    for nbrs in &state.graph.indices {
        for &j in nbrs {
            w.u64(j as u64);
        }
    }
    for &c in &state.labels {
        w.u64(c as u64);
    }
    w.matrix(state.samples.view());
    w.u64(state.history.len() as u64);
    for &v in &state.history {
        w.f64(v);
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&w.0).map_err(|e| Error::io(path, e))?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, len: usize, what: &'static str) -> Result<&[u8]> {
        let end = self.at.checked_add(len).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.at..end];
                self.at = end;
                Ok(out)
            }
            None => Err(ModelFileError::Truncated {
                path: self.path.to_owned(),
                what,
            }
            .into()),
        }
    }
    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn usize(&mut self, what: &'static str) -> Result<usize> {
        let v = self.u64(what)?;
        usize::try_from(v).map_err(|_| self.mismatch(format!("{what} {v} does not fit in memory")))
    }
    fn f64(&mut self, what: &'static str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn matrix(&mut self, rows: usize, cols: usize, what: &'static str) -> Result<Array2<f64>> {
        let len = rows
            .checked_mul(cols)
            .and_then(|c| c.checked_mul(8))
            .ok_or_else(|| self.mismatch(format!("{what} dimensions overflow")))?;
        let raw = self.take(len, what)?;
        let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Array2::from_shape_vec((rows, cols), values).unwrap())
    }
    fn mismatch(&self, what: String) -> Error {
        ModelFileError::ShapeMismatch {
            path: self.path.to_owned(),
            what,
        }
        .into()
    }
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelState> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes, path)
}

pub fn decode_model(bytes: &[u8], path: &Path) -> Result<ModelState> {
    let mut r = Reader { bytes, at: 0, path };
    if bytes.len() < MODEL_MAGIC.len() {
        return Err(ModelFileError::Truncated {
            path: path.to_owned(),
            what: "magic",
        }
        .into());
    }
    if r.take(MODEL_MAGIC.len(), "magic")? != MODEL_MAGIC {
        return Err(ModelFileError::BadMagic { path: path.to_owned() }.into());
    }
    let version = r.u32("version")?;
    if version != MODEL_VERSION {
        return Err(ModelFileError::Version {
            path: path.to_owned(),
            found: version,
            expected: MODEL_VERSION,
        }
        .into());
    }
    let n = r.usize("dimensions")?;
    let p = r.usize("dimensions")?;
    let n_l = r.usize("dimensions")?;
    let n_u = r.usize("dimensions")?;
    let classes = r.usize("dimensions")?;
    let k = r.usize("dimensions")?;
    let total = n_l
        .checked_add(n_u)
        .ok_or_else(|| r.mismatch("sample count overflows".into()))?;
    if classes == 0 || p == 0 || k == 0 || k >= total {
        return Err(r.mismatch(format!("dimensions p={p}, C={classes}, k={k}, N={total}")));
    }
    // Cheap upper bound before allocating: every block is at least this big.
    let min_len = 8 * (n * p + p * total + classes * p + classes + classes * n_u + total * total);
    if bytes.len().saturating_sub(r.at) < min_len {
        return Err(ModelFileError::Truncated {
            path: path.to_owned(),
            what: "payload",
        }
        .into());
    }
    let atoms = r.matrix(n, p, "dictionary")?;
    let codes = r.matrix(p, total, "codes")?;
    let weights = r.matrix(classes, p, "classifier weights")?;
    let bias = Array1::from(r.matrix(1, classes, "classifier bias")?.into_raw_vec_and_offset().0);
    let probs = r.matrix(classes, n_u, "probabilities")?;
    let v_dense = r.matrix(total, total, "neighbor weights")?;
    let omega = r.f64("omega")?;
    let mut h = [0.0; 6];
    for v in &mut h {
        *v = r.f64("hyper-parameters")?;
    }
    let mut indices = Vec::with_capacity(total);
    for i in 0..total {
        let mut nbrs = Vec::with_capacity(k);
        for _ in 0..k {
            let j = r.usize("neighbor lists")?;
            if j >= total || j == i {
                return Err(r.mismatch(format!("neighbor {j} of sample {i}")));
            }
            nbrs.push(j);
        }
        indices.push(nbrs);
    }
    let mut labels = Vec::with_capacity(n_l);
    for _ in 0..n_l {
        let c = r.usize("labels")?;
        if c >= classes {
            return Err(r.mismatch(format!("label {c} with {classes} classes")));
        }
        labels.push(c);
    }
    let samples = r.matrix(n, total, "samples")?;
    let len = r.usize("history")?;
    if len > bytes.len() {
        return Err(r.mismatch(format!("history length {len}")));
    }
    let mut history = Vec::with_capacity(len);
    for _ in 0..len {
        history.push(r.f64("history")?);
    }
    if r.at != bytes.len() {
        return Err(r.mismatch(format!("{} trailing bytes", bytes.len() - r.at)));
    }

    let mut triplets = Vec::with_capacity(total * k);
    for (i, nbrs) in indices.iter().enumerate() {
        for &j in nbrs {
            triplets.push((i, j, v_dense[[i, j]]));
        }
    }
    let v = CsrMatrix::from_triplets(total, total, triplets);
    if v.nnz() != total * k || v.to_dense() != v_dense {
        return Err(r.mismatch("neighbor weights outside the neighbor lists".into()));
    }
    let graph = NeighborGraph::lle_from_parts(indices, v, omega);
    let hp = HyperParams {
        lambda: h[0],
        beta: h[1],
        gamma: h[2],
        mu: h[3],
        alpha: h[4],
        r: h[5],
        atoms: p,
        neighbors: k,
    };
    let classifier = Classifier { weights, bias };
    let masks = model::update_active_masks(&classifier, codes.view(), &labels);
    Ok(ModelState {
        hp,
        classes,
        samples,
        labels,
        dictionary: Dictionary { atoms },
        codes,
        classifier,
        probs: ProbabilityMatrix { probs },
        masks,
        graph,
        history,
        segments: Vec::new(),
    })
}

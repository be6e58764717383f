//! Random instances and slow reference implementations shared by the
//! integration tests.

#![allow(dead_code)]

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use ssdl::graph::{self, NeighborGraph};
use ssdl::model::{
    self, ActiveMasks, Classifier, CodingContext, Dictionary, HyperParams, ProbabilityMatrix, Samples,
};
use ssdl::seed;
use ssdl::solver::shrink;

pub fn rng(s: u64) -> ChaCha8Rng {
    seed::rng(s)
}

pub fn normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| scale * rng.sample::<f64, _>(StandardNormal))
}

pub fn target(c: usize, label: usize) -> f64 {
    if c == label {
        1.0
    } else {
        -1.0
    }
}

/// A complete set of model quantities of consistent shapes.
#[derive(Clone)]
pub struct Instance {
    pub x: Array2<f64>,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub dictionary: Dictionary,
    pub codes: Array2<f64>,
    pub clf: Classifier,
    pub probs: ProbabilityMatrix,
    pub masks: ActiveMasks,
    pub graph: NeighborGraph,
    pub hp: HyperParams,
}

pub struct Shape {
    pub n: usize,
    pub p: usize,
    pub n_l: usize,
    pub n_u: usize,
    pub classes: usize,
    pub k: usize,
}

impl Instance {
    pub fn random(s: u64, shape: &Shape) -> Instance {
        let mut rng = rng(s);
        let Shape { n, p, n_l, n_u, classes, k } = *shape;
        let total = n_l + n_u;
        let x = normal(&mut rng, n, total, 1.0);
        let labels: Vec<usize> = (0..n_l).map(|i| i % classes).collect();
        let atoms = ssdl::solver::project_columns_l2(normal(&mut rng, n, p, 1.0), 1.0);
        let codes = normal(&mut rng, p, total, 0.5);
        let clf = Classifier {
            weights: normal(&mut rng, classes, p, 0.7),
            bias: Array1::from_shape_fn(classes, |_| 0.3 * rng.sample::<f64, _>(StandardNormal)),
        };
        let mut probs = Array2::from_shape_fn((classes, n_u), |_| rng.random::<f64>() + 0.05);
        for mut col in probs.columns_mut() {
            let s = col.sum();
            col /= s;
        }
        let masks = model::update_active_masks(&clf, codes.view(), &labels);
        let graph = graph::build_lle_graph(x.view(), k, total as f64).unwrap();
        let hp = HyperParams {
            lambda: 0.1,
            beta: 0.7,
            gamma: 0.6,
            mu: 0.3,
            alpha: 1.0,
            atoms: p,
            neighbors: k,
            r: 1.5,
        };
        Instance {
            x,
            labels,
            classes,
            dictionary: Dictionary { atoms },
            codes,
            clf,
            probs: ProbabilityMatrix { probs },
            masks,
            graph,
            hp,
        }
    }

    pub fn n_l(&self) -> usize {
        self.labels.len()
    }

    pub fn with_ctx<R>(&self, f: impl FnOnce(&CodingContext) -> R) -> R {
        let samples = Samples::new(self.x.view(), &self.labels, self.classes).unwrap();
        let ctx = CodingContext {
            samples: &samples,
            dictionary: &self.dictionary,
            graph: Some(&self.graph),
            clf: &self.clf,
            probs: &self.probs,
            masks: &self.masks,
            hp: &self.hp,
        };
        f(&ctx)
    }

    /// The library objective at `codes` with everything else as stored.
    pub fn objective_at(&self, codes: ArrayView2<f64>) -> f64 {
        let samples = Samples::new(self.x.view(), &self.labels, self.classes).unwrap();
        model::objective(
            &samples,
            Some(&self.graph),
            &self.dictionary,
            codes,
            &self.clf,
            &self.probs,
            &self.masks,
            &self.hp,
        )
        .unwrap()
    }

    /// The objective without the `λ‖A‖₁` term.
    pub fn smooth_at(&self, codes: ArrayView2<f64>) -> f64 {
        self.objective_at(codes) - self.hp.lambda * codes.iter().map(|v| v.abs()).sum::<f64>()
    }
}

/// The full objective by explicit summation over every index.
pub fn naive_objective(inst: &Instance, codes: ArrayView2<f64>) -> f64 {
    let (n, p) = inst.dictionary.atoms.dim();
    let total = codes.ncols();
    let n_l = inst.n_l();
    let c_count = inst.classes;
    let d = &inst.dictionary.atoms;
    let mut value = 0.0;
    for j in 0..total {
        for row in 0..n {
            let mut rec = 0.0;
            for a in 0..p {
                rec += d[[row, a]] * codes[[a, j]];
            }
            value += (inst.x[[row, j]] - rec).powi(2);
        }
    }
    for v in codes.iter() {
        value += inst.hp.lambda * v.abs();
    }
    let l = inst.graph.laplacian.to_dense();
    for a in 0..p {
        for i in 0..total {
            for j in 0..total {
                value += inst.hp.beta * codes[[a, i]] * l[[i, j]] * codes[[a, j]];
            }
        }
    }
    let score = |c: usize, j: usize| {
        let mut s = inst.clf.bias[c];
        for a in 0..p {
            s += inst.clf.weights[[c, a]] * codes[[a, j]];
        }
        s
    };
    for i in 0..n_l {
        for c in 0..c_count {
            if inst.masks.labelled[[c, i]] {
                value += inst.hp.gamma * (score(c, i) - target(c, inst.labels[i])).powi(2);
            }
        }
    }
    for k in 0..c_count {
        for j in 0..(total - n_l) {
            let w = inst.probs.probs[[k, j]].powf(inst.hp.r);
            for c in 0..c_count {
                if inst.masks.unlabelled[k][[c, j]] {
                    value += inst.hp.gamma * w * (score(c, n_l + j) - target(c, k)).powi(2);
                }
            }
        }
    }
    for w in inst.clf.weights.iter().chain(inst.clf.bias.iter()) {
        value += inst.hp.mu * w * w;
    }
    value
}

/// Central finite differences of `f` at `x`.
pub fn finite_difference(f: impl Fn(&Array2<f64>) -> f64, x: &Array2<f64>, h: f64) -> Array2<f64> {
    let mut grad = Array2::zeros(x.raw_dim());
    let mut probe = x.clone();
    for idx in ndarray::indices(x.raw_dim()) {
        let orig = probe[idx];
        probe[idx] = orig + h;
        let up = f(&probe);
        probe[idx] = orig - h;
        let down = f(&probe);
        probe[idx] = orig;
        grad[idx] = (up - down) / (2.0 * h);
    }
    grad
}

pub fn rel_error(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let diff = (a - b).mapv(|v| v * v).sum().sqrt();
    let scale = b.mapv(|v| v * v).sum().sqrt().max(1e-12);
    diff / scale
}

/// Coordinate descent on `smooth(X) + λ‖X‖₁` for a quadratic `smooth`.
/// Each coordinate's curvature and slope come from three evaluations, which
/// is exact for quadratics, and the coordinate is set to its exact
/// minimizer.
pub fn coordinate_descent(smooth: impl Fn(&Array2<f64>) -> f64, lambda: f64, x0: Array2<f64>, sweeps: usize) -> Array2<f64> {
    let mut x = x0;
    for _ in 0..sweeps {
        let mut moved = 0.0f64;
        for idx in ndarray::indices(x.raw_dim()) {
            let orig = x[idx];
            let f0 = smooth(&x);
            x[idx] = orig + 1.0;
            let up = smooth(&x);
            x[idx] = orig - 1.0;
            let down = smooth(&x);
            let slope = (up - down) / 2.0;
            let curvature = up + down - 2.0 * f0;
            let next = if curvature > 0.0 {
                shrink(orig - slope / curvature, lambda / curvature)
            } else {
                orig
            };
            x[idx] = next;
            moved = moved.max((next - orig).abs());
        }
        if moved < 1e-13 {
            break;
        }
    }
    x
}

/// Largest eigenvalue of a symmetric matrix by dense decomposition.
pub fn dense_max_eigen(m: ArrayView2<f64>) -> f64 {
    let dm = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]]);
    dm.symmetric_eigen().eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

pub fn dense_min_eigen(m: ArrayView2<f64>) -> f64 {
    let dm = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]]);
    dm.symmetric_eigen().eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// `min ‖X − DA‖²` over `‖d_i‖ ≤ α` by projected gradient with a fixed
/// step below the inverse Lipschitz constant.
pub fn projected_gradient_dictionary(
    x: ArrayView2<f64>,
    codes: ArrayView2<f64>,
    start: Array2<f64>,
    alpha: f64,
    iters: usize,
) -> Array2<f64> {
    let aat = codes.dot(&codes.t());
    let step = 0.9 / (2.0 * dense_max_eigen(aat.view()));
    let xat = x.dot(&codes.t());
    let mut d = ssdl::solver::project_columns_l2(start, alpha);
    for _ in 0..iters {
        let grad = (d.dot(&aat) - &xat) * 2.0;
        d = ssdl::solver::project_columns_l2(d - grad * step, alpha);
    }
    d
}

pub fn reconstruction_error(x: ArrayView2<f64>, d: ArrayView2<f64>, codes: ArrayView2<f64>) -> f64 {
    (&x - &d.dot(&codes)).mapv(|v| v * v).sum()
}

/// The classifier sub-problem objective and its gradient by scalar loops,
/// with masks and probabilities frozen.
pub fn classifier_objective_and_gradient(
    codes: ArrayView2<f64>,
    labels: &[usize],
    probs: &ProbabilityMatrix,
    masks: &ActiveMasks,
    clf: &Classifier,
    gamma: f64,
    mu: f64,
    r: f64,
) -> (f64, Classifier) {
    let (classes, p) = clf.weights.dim();
    let n_l = labels.len();
    let mut value = 0.0;
    let mut grad = Classifier::zeros(classes, p);
    let mut add = |c: usize, j: usize, weight: f64, y: f64, value: &mut f64| {
        let mut s = clf.bias[c];
        for a in 0..p {
            s += clf.weights[[c, a]] * codes[[a, j]];
        }
        let res = s - y;
        *value += gamma * weight * res * res;
        for a in 0..p {
            grad.weights[[c, a]] += 2.0 * gamma * weight * res * codes[[a, j]];
        }
        grad.bias[c] += 2.0 * gamma * weight * res;
    };
    for i in 0..n_l {
        for c in 0..classes {
            if masks.labelled[[c, i]] {
                add(c, i, 1.0, target(c, labels[i]), &mut value);
            }
        }
    }
    for k in 0..classes {
        for j in 0..(codes.ncols() - n_l) {
            let w = probs.probs[[k, j]].powf(r);
            for c in 0..classes {
                if masks.unlabelled[k][[c, j]] {
                    add(c, n_l + j, w, target(c, k), &mut value);
                }
            }
        }
    }
    for c in 0..classes {
        for a in 0..p {
            value += mu * clf.weights[[c, a]].powi(2);
            grad.weights[[c, a]] += 2.0 * mu * clf.weights[[c, a]];
        }
        value += mu * clf.bias[c].powi(2);
        grad.bias[c] += 2.0 * mu * clf.bias[c];
    }
    (value, grad)
}

pub fn classifier_gradient_norm(g: &Classifier) -> f64 {
    (g.weights.mapv(|v| v * v).sum() + g.bias.mapv(|v| v * v).sum()).sqrt()
}

/// Plain gradient descent on the classifier sub-problem until the gradient
/// vanishes.
pub fn gradient_descent_classifier(
    codes: ArrayView2<f64>,
    labels: &[usize],
    probs: &ProbabilityMatrix,
    masks: &ActiveMasks,
    classes: usize,
    gamma: f64,
    mu: f64,
    r: f64,
) -> Classifier {
    let p = codes.nrows();
    // Trace bound on the Hessian: 2(γ Σ_j ‖ã_j‖² Σ weights + μ).
    let weight_total: f64 = 1.0 + probs.probs.iter().map(|v| v.powf(r)).fold(0.0, f64::max) * classes as f64;
    let norm_total: f64 = codes.columns().into_iter().map(|c| c.dot(&c) + 1.0).sum();
    let step = 1.0 / (2.0 * (gamma * weight_total * norm_total + mu));
    let mut clf = Classifier::zeros(classes, p);
    for _ in 0..2_000_000 {
        let (_, g) = classifier_objective_and_gradient(codes, labels, probs, masks, &clf, gamma, mu, r);
        if classifier_gradient_norm(&g) < 1e-13 {
            break;
        }
        clf.weights.scaled_add(-step, &g.weights);
        clf.bias.scaled_add(-step, &g.bias);
    }
    clf
}

/// `Σ_k p_k^r e_k`.
pub fn simplex_value(p: &[f64], costs: &[f64], r: f64) -> f64 {
    p.iter().zip(costs).map(|(&pk, &e)| pk.powf(r) * e).sum()
}

/// Minimizer of `Σ_k p_k^r e_k` over a regular grid on the simplex.
pub fn simplex_grid_search(costs: &[f64], r: f64, steps: usize) -> (Vec<f64>, f64) {
    let c = costs.len();
    let mut best = (vec![0.0; c], f64::INFINITY);
    let mut counts = vec![0usize; c];
    fn visit(
        level: usize,
        left: usize,
        counts: &mut Vec<usize>,
        steps: usize,
        costs: &[f64],
        r: f64,
        best: &mut (Vec<f64>, f64),
    ) {
        if level + 1 == counts.len() {
            counts[level] = left;
            let p: Vec<f64> = counts.iter().map(|&n| n as f64 / steps as f64).collect();
            let v = simplex_value(&p, costs, r);
            if v < best.1 {
                *best = (p, v);
            }
            return;
        }
        for n in 0..=left {
            counts[level] = n;
            visit(level + 1, left - n, counts, steps, costs, r, best);
        }
    }
    visit(0, steps, &mut counts, steps, costs, r, &mut best);
    best
}

/// Uniform random point on the simplex.
pub fn random_simplex_point(rng: &mut ChaCha8Rng, c: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..c).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Proximal gradient without momentum on `‖x − Da‖² + c‖a − m‖² + λ‖a‖₁`.
pub fn ista_anchored(
    d: ArrayView2<f64>,
    x: ndarray::ArrayView1<f64>,
    c: f64,
    anchor: ndarray::ArrayView1<f64>,
    lambda: f64,
    iters: usize,
) -> Array1<f64> {
    let gram = d.t().dot(&d);
    let dtx = d.t().dot(&x);
    let l = 2.0 * (dense_max_eigen(gram.view()) + c);
    let mut a = Array1::zeros(d.ncols());
    for _ in 0..iters {
        let grad = (gram.dot(&a) - &dtx) * 2.0 + (&a - &anchor) * (2.0 * c);
        a = (a - grad / l).mapv(|v| shrink(v, lambda / l));
    }
    a
}

pub fn anchored_value(
    d: ArrayView2<f64>,
    x: ndarray::ArrayView1<f64>,
    c: f64,
    anchor: ndarray::ArrayView1<f64>,
    lambda: f64,
    a: ndarray::ArrayView1<f64>,
) -> f64 {
    let r = &x - &d.dot(&a);
    let diff = &a - &anchor;
    r.dot(&r) + c * diff.dot(&diff) + lambda * a.iter().map(|v| v.abs()).sum::<f64>()
}

/// Gaussian blobs in `n` dimensions, one per class, `per_class` samples each,
/// class-grouped.
pub fn blobs(s: u64, n: usize, classes: usize, per_class: usize, spread: f64) -> (Array2<f64>, Vec<usize>) {
    let mut rng = rng(s);
    let centers = normal(&mut rng, n, classes, 3.0);
    let mut x = Array2::zeros((n, classes * per_class));
    let mut labels = Vec::with_capacity(classes * per_class);
    for c in 0..classes {
        for i in 0..per_class {
            let j = c * per_class + i;
            for row in 0..n {
                x[[row, j]] = centers[[row, c]] + spread * rng.sample::<f64, _>(StandardNormal);
            }
            labels.push(c);
        }
    }
    (x, labels)
}

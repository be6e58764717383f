//! Proximal gradient machinery: FISTA with backtracking over a smooth term and
//! a proximable penalty, plus the two proximal operators the learner needs.

use ndarray::{Array, Array2, ArrayView2, Dimension, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative slack allowed in the backtracking acceptance test to absorb
/// floating-point round-off near convergence.
pub const BACKTRACK_SLACK: f64 = 1e-12;

const MAX_BACKTRACKS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FistaParams {
    /// Initial inverse step τ.
    pub tau0: f64,
    /// Backtracking growth factor η.
    pub eta: f64,
    pub max_iters: usize,
    /// Stop when the relative change of the composite objective drops below this.
    pub rel_tol: f64,
}

impl Default for FistaParams {
    fn default() -> Self {
        FistaParams {
            tau0: 1.0,
            eta: 1.5,
            max_iters: 50,
            rel_tol: 1e-6,
        }
    }
}

impl FistaParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau0 > 0.0 && self.tau0.is_finite()) {
            return Err(Error::InvalidConfig(format!("tau0 must be positive, got {}", self.tau0)));
        }
        if !(self.eta > 1.0 && self.eta.is_finite()) {
            return Err(Error::InvalidConfig(format!("eta must exceed 1, got {}", self.eta)));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        if !(self.rel_tol >= 0.0) {
            return Err(Error::InvalidConfig(format!("rel_tol must be nonnegative, got {}", self.rel_tol)));
        }
        Ok(())
    }
}

/// A composite problem `min f(x) + g(x)` with `f` smooth and `g` proximable.
pub trait SmoothProxProblem {
    /// The smooth part `f`.
    fn smooth_value(&self, x: &Array2<f64>) -> f64;

    fn smooth_gradient(&self, x: &Array2<f64>) -> Array2<f64>;

    fn smooth_value_and_gradient(&self, x: &Array2<f64>) -> (f64, Array2<f64>) {
        (self.smooth_value(x), self.smooth_gradient(x))
    }

    /// Value of the nonsmooth part `g` (zero for indicator functions at
    /// feasible points).
    fn penalty_value(&self, x: &Array2<f64>) -> f64;

    /// `argmin_u g(u) + ‖u − h‖² / (2·step)`.
    fn prox(&self, h: Array2<f64>, step: f64) -> Array2<f64>;
}

/// One accepted backtracking step: the quadratic upper bound at the
/// extrapolated point and the smooth value at the new proximal point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcceptedStep {
    pub tau: f64,
    pub smooth_at_extrapolated: f64,
    pub smooth_at_candidate: f64,
    pub upper_bound: f64,
    pub backtracks: usize,
}

impl AcceptedStep {
    /// Whether the sufficient-decrease condition holds (with the round-off
    /// slack the solver itself uses).
    pub fn satisfies_bound(&self) -> bool {
        self.smooth_at_candidate
            <= self.upper_bound + BACKTRACK_SLACK * self.smooth_at_extrapolated.abs().max(1.0)
    }
}

#[derive(Debug, Clone, Default)]
pub struct FistaDiagnostics {
    /// Composite objective at the proximal points, starting with the initial
    /// point.
    pub objective: Vec<f64>,
    pub steps: Vec<AcceptedStep>,
    /// Final inverse step size.
    pub tau: f64,
    /// Index into `objective` of the returned iterate.
    pub best: usize,
}

impl FistaDiagnostics {
    pub fn best_objective(&self) -> f64 {
        self.objective[self.best]
    }

    pub fn iterations(&self) -> usize {
        self.steps.len()
    }
}

#[derive(Debug, Clone)]
pub struct FistaOutput {
    pub solution: Array2<f64>,
    pub diagnostics: FistaDiagnostics,
}

/// FISTA with backtracking.
///
/// The iterates follow the accelerated scheme exactly; the returned solution
/// is the proximal point with the lowest composite objective seen, including
/// `x0`, so the output never scores worse than the starting point.
pub fn fista<P>(problem: &P, x0: Array2<f64>, params: &FistaParams) -> Result<FistaOutput>
where
    P: SmoothProxProblem + ?Sized,
{
    params.validate()?;
    let initial = problem.smooth_value(&x0) + problem.penalty_value(&x0);
    if !initial.is_finite() {
        return Err(Error::Numerical {
            iteration: 0,
            what: format!("non-finite objective {initial} at the starting point"),
        });
    }

    let mut diag = FistaDiagnostics {
        objective: vec![initial],
        steps: Vec::new(),
        tau: params.tau0,
        best: 0,
    };
    let mut tau = params.tau0;
    let mut t = 1.0_f64;
    let mut best = x0.clone();
    let mut z_prev = x0.clone();
    let mut y = x0;

    for n in 0..params.max_iters {
        let (fy, grad) = problem.smooth_value_and_gradient(&y);
        if !fy.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numerical {
                iteration: n + 1,
                what: "non-finite smooth value or gradient".into(),
            });
        }

        let mut backtracks = 0;
        let (z, fz, bound) = loop {
            let step = 1.0 / tau;
            let h = &y - &(&grad * step);
            let z = problem.prox(h, step);
            let diff = &z - &y;
            let fz = problem.smooth_value(&z);
            let bound = fy + inner(diff.view(), grad.view()) + 0.5 * tau * frob_sq(diff.view());
            if fz.is_finite() && fz <= bound + BACKTRACK_SLACK * fy.abs().max(1.0) {
                break (z, fz, bound);
            }
            tau *= params.eta;
            backtracks += 1;
            if backtracks > MAX_BACKTRACKS || !tau.is_finite() {
                return Err(Error::Numerical {
                    iteration: n + 1,
                    what: format!("backtracking failed to find a step (tau = {tau:e})"),
                });
            }
        };

        diag.steps.push(AcceptedStep {
            tau,
            smooth_at_extrapolated: fy,
            smooth_at_candidate: fz,
            upper_bound: bound,
            backtracks,
        });

        let value = fz + problem.penalty_value(&z);
        if !value.is_finite() {
            return Err(Error::Numerical {
                iteration: n + 1,
                what: format!("non-finite objective {value}"),
            });
        }
        let previous = *diag.objective.last().unwrap();
        diag.objective.push(value);
        if value < diag.best_objective() {
            diag.best = diag.objective.len() - 1;
            best.assign(&z);
        }

        let t_next = (1.0 + (4.0 * t * t + 1.0).sqrt()) / 2.0;
        let upsilon = 1.0 + (t - 1.0) / t_next;
        y = &z_prev + &((&z - &z_prev) * upsilon);
        z_prev = z;
        t = t_next;

        if (previous - value).abs() <= params.rel_tol * previous.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }

    diag.tau = tau;
    Ok(FistaOutput {
        solution: best,
        diagnostics: diag,
    })
}

/// Elementwise `sign(h) · max(|h| − t, 0)`, the proximal operator of `t‖·‖₁`.
pub fn soft_threshold<D: Dimension>(mut h: Array<f64, D>, t: f64) -> Array<f64, D> {
    debug_assert!(t >= 0.0);
    h.mapv_inplace(|v| shrink(v, t));
    h
}

#[inline]
pub fn shrink(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Rescales every column whose l2 norm exceeds `alpha` onto the sphere of
/// radius `alpha`; columns inside the ball are left untouched.
pub fn project_columns_l2(mut m: Array2<f64>, alpha: f64) -> Array2<f64> {
    debug_assert!(alpha > 0.0);
    for mut col in m.columns_mut() {
        let norm = col.dot(&col).sqrt();
        if norm > alpha {
            let s = alpha / norm;
            col.mapv_inplace(|v| v * s);
            // Guard against the rescaled norm landing one ulp above alpha.
            let renorm = col.dot(&col).sqrt();
            if renorm > alpha {
                let s = alpha / renorm * (1.0 - f64::EPSILON);
                col.mapv_inplace(|v| v * s);
            }
        }
    }
    m
}

pub(crate) fn inner(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    let mut acc = 0.0;
    Zip::from(a).and(b).for_each(|&x, &y| acc += x * y);
    acc
}

pub(crate) fn frob_sq(a: ArrayView2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum()
}

pub(crate) fn l1(a: ArrayView2<f64>) -> f64 {
    a.iter().map(|v| v.abs()).sum()
}

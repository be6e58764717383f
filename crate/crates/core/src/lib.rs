//! Semi-supervised dictionary learning with graph regularization and active
//! points.
//!
//! The learner jointly fits a shared dictionary `D`, sparse codes `A`, a
//! one-vs-all linear classifier `(W, b)` and class probabilities `P` for the
//! unlabelled samples by alternating minimization of
//!
//! ```text
//! ‖X − DA‖² + λ‖A‖₁ + β tr(A L Aᵀ)
//!   + γ (‖Qˡ ∘ (WAˡ + Bˡ − Y)‖² + Σ_k ‖Qᵘ_k ∘ P_k^{r/2} ∘ (WAᵘ + Bᵘ − Y_k)‖²)
//!   + μ (‖W‖² + ‖b‖²)
//! ```
//!
//! where `L` is the locally-linear-embedding Laplacian built from the raw
//! samples and `Q` selects the codes inside the classifier margin.
//!
//! Matrices follow the column-per-sample convention: `X` is `n × N`, `A` is
//! `p × N`, labelled columns first.

pub mod data;
pub mod error;
pub mod eval;
pub mod graph;
pub mod inference;
pub mod model;
pub mod seed;
pub mod solver;
pub mod sparse;
pub mod trainer;

pub use error::{Error, Result};

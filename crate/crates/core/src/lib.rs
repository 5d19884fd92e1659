//! Closed-form boundary operators for residual networks with a pruned
//! contiguous block of layers.
//!
//! Dropping layers `[ℓ, ℓ+n)` leaves a gap between the activation entering
//! the block (`X_pre`) and the one leaving it (`X_post`). The *ghost
//! operator* `W* = I + M*` with `M* = X_pre⁺ (X_post − X_pre)` is the
//! least-squares linear map across that gap. This crate fits it, compares it
//! to diagonal and Hadamard-rotated baselines, and ships a small residual
//! MLP simulator to generate activations with known structure.
//!
//! ```
//! use ghostalign::recovery::{fit_ghost, Solver, DEFAULT_EPS};
//! use ghostalign::simulator::build_toy_model;
//!
//! let model = build_toy_model(6, 16, 3).unwrap();
//! let spec = model.boundary(2, 2).unwrap();
//! let pair = model.forward_capture(&model.sample_inputs(512, 0), &spec).unwrap();
//! let ghost = fit_ghost(&pair, DEFAULT_EPS, Solver::RidgeNormal).unwrap();
//! assert!(ghost.fit_residual < pair.gap().frobenius_norm());
//! ```

pub mod actdata;
pub mod analysis;
pub mod cli;
pub mod config;
pub mod error;
pub mod linalg;
pub mod pipeline;
pub mod pruning;
pub mod recovery;
pub mod simulator;

pub use error::{Error, Result};
pub use linalg::{ActivationMatrix, Matrix};
pub use recovery::{fit_ghost, GhostOperator, Method, Operator, Solver};
pub use simulator::{build_toy_model, ActivationPair, BoundarySpec, ToyModel};

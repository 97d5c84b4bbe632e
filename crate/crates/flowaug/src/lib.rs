//! Invertible flow models with latent-space perturbations for classifier
//! training.
//!
//! The crate provides, bottom-up:
//!
//! * [`tensor`] / [`ops`] / [`graph`] / [`check`] — a dense tensor type, pure
//!   forward kernels, a reverse-mode differentiation tape over those kernels,
//!   and finite-difference gradient verification;
//! * [`flow`] — exactly invertible transformations (affine coupling, random
//!   permutation, activation normalization, invertible linear) composed into
//!   a density model trained by maximum likelihood;
//! * [`attack`] — perturbation operators in latent or image space: random
//!   latent noise, iterative latent ascent, and projected gradient descent on
//!   raw inputs;
//! * [`classify`] — classifiers, optimizers, schedules, and the
//!   perturbation-augmented training loop;
//! * [`eval`] — accuracy, perturbation statistics, robustness drops, and the
//!   Fréchet distance between Gaussian feature summaries;
//! * [`data`] / [`config`] / [`checkpoint`] / [`experiment`] — dataset
//!   loading and synthesis, experiment configuration, model persistence, and
//!   the end-to-end pipeline behind the command-line interface.
//!
//! Every random choice derives from a single seed (see [`rng`]); two runs
//! with the same configuration produce byte-identical reports.

pub mod attack;
pub mod check;
pub mod checkpoint;
pub mod classify;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod flow;
pub mod graph;
pub mod linalg;
pub mod ops;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

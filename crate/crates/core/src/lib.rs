//! Desk-scale laboratory for variational bottleneck domain adaptation.
//!
//! A stochastic-encoder classifier is trained with a composite objective:
//! source classification loss, adversarial feature-distribution matching via
//! gradient reversal, target conditional-entropy minimization, and
//! per-domain KL bottleneck terms against a standard-normal prior. The crate
//! also carries the baseline ladder (source-only, DANN, DANN+CE, VIB-only)
//! and mutual-information bound diagnostics.
//!
//! Layout:
//! - [`autodiff`]: tape-based reverse-mode engine over dense f64 tensors
//! - [`models`]: Gaussian encoder, classifier, and domain discriminator MLPs
//! - [`objectives`]: loss terms, composite objective, MI bound estimators
//! - [`data`]: synthetic domain-pair generators, IDX digit files, batching
//! - [`training`]: Adam, the training loop, evaluation

pub mod autodiff;
pub mod data;
pub mod error;
pub mod models;
pub mod objectives;
pub mod rng;
pub mod training;

pub use error::{Error, Result};

//! Unpaired cross-modal knowledge distillation for multi-label
//! classification.
//!
//! A teacher trained on one modality (fundus) guides a student trained on
//! another (OCT) without any paired samples. Two losses carry the
//! knowledge across:
//!
//! - **class prototype matching** aligns temperature-softened per-class
//!   mean features of the teacher with projected per-class mean features
//!   of the student;
//! - **class similarity alignment** aligns the cosine-similarity structure
//!   of per-class mean logits, which carries label co-occurrence.
//!
//! The student objective is `L_CLS + α·L_CPM + β·L_CSA`.
//!
//! Modules, bottom-up:
//!
//! - [`numeric`]: dense matrices, softmax/KL/cosine kernels with
//!   gradients, and a finite-difference gradient checker;
//! - [`model`]: a tanh MLP backbone with a multi-label head, the student's
//!   projector, SGD with momentum, and checkpoints;
//! - [`losses`]: prototypes, class-logit profiles, and the three losses;
//! - [`data`]: a synthetic two-modality generator, dataset files,
//!   patient-grouped splits, and unpaired batch streams;
//! - [`training`]: teacher, baseline and student training plus the
//!   ablation grid;
//! - [`eval`]: eye-level ensembling and metrics;
//! - [`gradsuite`]: finite-difference checks of every loss on random
//!   instances;
//! - [`cli`]: the command-line front end behind the `fddm` binary.
//!
//! See the crate's `examples/` directory for one runnable program per
//! capability.

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradsuite;
pub mod losses;
pub mod model;
pub mod numeric;
pub mod seeds;
pub mod training;

pub use error::{FddmError, Result};

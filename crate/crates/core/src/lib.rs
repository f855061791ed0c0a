//! Simulation library for the compressed-classifier model of adversarial
//! fragility.
//!
//! A world is a finite set of labels, each encoded by a family of noise-free
//! codewords (one per nuisance configuration). A classifier only sees a random
//! linear compression `Ay` of its input, which makes it blind to the null
//! space of `A`: random noise is mostly absorbed there, while an attacker who
//! stays inside the row space needs only a small perturbation to change the
//! decision. The modules below build that world, synthesize the attacks,
//! measure robustness by Monte Carlo, quantify the same gap for nonlinear
//! maps, and run the decompress-and-compare detection defense.

pub mod attack;
pub mod codebook;
pub mod compressor;
pub mod detection;
mod error;
pub mod nonlinear;
pub mod pipeline;
pub mod rng;
pub mod robustness;
pub mod scenario;
pub mod stats;

pub use attack::{Perturbation, PerturbationKind};
pub use codebook::{Codebook, CodebookConfig, Codeword, Label, Nuisance};
pub use compressor::{Classifier, ClassifierDecision, LinearCompressor, MembershipRule, Outcome};
pub use error::{Error, Result};

pub use nalgebra::{DMatrix, DVector};

//! Generative word alignment toolkit: count-based and neural IBM-1/HMM
//! aligners plus variational autoencoder extensions, with BPE subword
//! handling, symmetrization heuristics and an evaluation suite.

pub mod bruteforce;
pub mod classic;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod lattice;
pub mod neural;
pub mod noise;
pub mod synth;
pub mod tensor;

pub use error::{CoreError, Result};

//! Sobolev-geometric preference optimization for flow-matching restoration.
//!
//! The crate builds up from orthonormal 2D DCT-II transforms and the diagonal
//! Sobolev operator family Σ_s to colored-noise sampling, conditional flow
//! matching, the S-DPO / AS-DPO preference losses, closed-form worst-case
//! Sobolev perturbations with their training-based counterpart, synthetic
//! power-law image data, spectral diagnostics, and end-to-end experiment
//! pipelines. Everything is deterministic given a seed.

pub mod adversary;
pub mod diagnostics;
pub mod dpo;
pub mod error;
pub mod field;
pub mod flow;
pub mod harness;
pub mod io;
pub mod kv;
pub mod net;
pub mod noise;
pub mod rng;
pub mod spectral;
pub mod synth;

pub use error::{Error, Result};
pub use field::{Field2D, Spectrum2D};
pub use spectral::{dct2_forward, dct2_inverse, make_sobolev, SobolevOperator};

//! Privacy-preserving respiration monitoring from FMCW radar phase.
//!
//! The pipeline runs in stages:
//!
//! 1. [`sim`] produces radar cubes of breathing subjects (or raw captures are ingested through [`io`]).
//! 2. [`preprocess`] turns a cube into overlapping unwrapped phase segments.
//! 3. [`afd`] splits every segment into a universal respiratory component, a
//!    personal-difference component and out-of-band residue.
//! 4. [`fpe`] hides identity cues with a key-controlled amplitude and phase perturbation.
//! 5. [`ptn`] recovers respiration rate from the perturbed signal by spectral
//!    distribution alignment and a small temporal mixer.
//! 6. [`adversary`] measures how much identity is left, [`optim`] trades the two
//!    off, and [`harness`] runs the scenario sweeps and writes reports.

pub mod adversary;
pub mod afd;
pub mod dsp;
pub mod error;
pub mod fpe;
pub mod harness;
pub mod io;
pub mod optim;
pub mod par;
pub mod preprocess;
pub mod ptn;
pub mod sim;

pub use error::{Error, Result};

/// Respiration band used throughout the pipeline, in Hz.
pub const RESP_BAND: (f64, f64) = (0.1, 0.5);

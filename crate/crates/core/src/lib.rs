//! Power spectra and scaling exponents of token-to-token embedding-step signals.
//!
//! Pipeline: read embedding trajectories ([`seqio`]), difference consecutive
//! tokens ([`signal`]), take per-dimension periodograms and average them over
//! dimensions and documents ([`spectral`]), then fit a power law on log-log
//! axes ([`fitting`]). [`cli`] wires these into reproducible runs.

pub mod cli;
pub mod error;
pub mod fitting;
pub mod seqio;
pub mod signal;
pub mod spectral;

pub use error::{Error, Result};

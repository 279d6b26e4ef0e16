//! Envelope fitting, error bounds, switching certificates, trace diagnostics
//! and threshold sweeps.

use thiserror::Error;

pub mod bounds;
pub mod diagnostics;
pub mod envelope;
pub mod lyapunov;
pub mod sweep;

pub use bounds::{lemma1_check, theorem1_bound, Lemma1Report};
pub use diagnostics::{diagnostics_from_trace, DiagnosticsStep, DiagnosticsTrace};
pub use envelope::{fit_decay_envelope, DecayEnvelope};
pub use lyapunov::{common_lyapunov_check, LyapunovCertificate};
pub use sweep::{tradeoff_sweep, SweepRow};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not stable (spectral radius {0})")]
    Unstable(f64),
    #[error("power sequence did not fall below tolerance within {0} steps")]
    EnumerationLimit(usize),
    #[error("P is not symmetric positive-definite")]
    NotPositiveDefinite,
    #[error("{0} switches is too many to enumerate all subsets")]
    TooManySwitches(usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("trace has no reference estimate")]
    MissingReference,
    #[error("sweep grid is empty")]
    EmptyGrid,
    #[error("non-finite matrix entry")]
    NonFinite,
}

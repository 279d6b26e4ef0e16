//! Exponential decay envelopes `‖M^k‖ ≤ c ρ^k`.

use sha2::{Digest, Sha256};

use super::AnalysisError;
use crate::model::{spectral_radius, Matrix};
use crate::norm::NormOrder;

/// Powers are enumerated until their norm drops below this.
pub const POWER_FLOOR: f64 = 1e-14;
/// Relative slack allowed when re-checking an envelope.
pub const RECHECK_TOL: f64 = 1e-12;
const MAX_POWERS: usize = 2_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct DecayEnvelope {
    pub c: f64,
    pub rho: f64,
    pub rho_spec: f64,
    /// Number of powers enumerated.
    pub horizon: usize,
    pub matrix_hash: String,
    pub norm: NormOrder,
}

impl DecayEnvelope {
    pub fn at(&self, k: usize) -> f64 {
        self.c * self.rho.powi(k as i32)
    }

    /// Re-enumerates `‖M^k‖` and returns the first `k` that breaks the envelope.
    pub fn first_violation(&self, m: &Matrix) -> Option<usize> {
        let mut power = Matrix::identity(m.nrows(), m.ncols());
        for k in 0..=self.horizon {
            if self.norm.matrix(&power) > self.at(k) * (1.0 + RECHECK_TOL) {
                return Some(k);
            }
            power = m * power;
        }
        None
    }
}

pub fn matrix_hash(m: &Matrix) -> String {
    let mut h = Sha256::new();
    h.update((m.nrows() as u64).to_le_bytes());
    h.update((m.ncols() as u64).to_le_bytes());
    for x in m.iter() {
        h.update(x.to_bits().to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Envelope with the midpoint policy `ρ = (1 + ρ(M)) / 2`.
pub fn fit_decay_envelope(m: &Matrix, norm: NormOrder) -> Result<DecayEnvelope, AnalysisError> {
    let rho_spec = checked_radius(m)?;
    fit_decay_envelope_with_rho(m, norm, (1.0 + rho_spec) / 2.0)
}

/// Envelope for a caller-chosen `ρ ∈ (ρ(M), 1)`.
pub fn fit_decay_envelope_with_rho(m: &Matrix, norm: NormOrder, rho: f64) -> Result<DecayEnvelope, AnalysisError> {
    let rho_spec = checked_radius(m)?;
    if !(rho > rho_spec && rho < 1.0) {
        return Err(AnalysisError::Unstable(rho));
    }
    let mut power = Matrix::identity(m.nrows(), m.ncols());
    let mut c = 0.0_f64;
    let mut scale = 1.0_f64;
    let mut k = 0;
    loop {
        let value = norm.matrix(&power);
        c = c.max(value / scale);
        if value < POWER_FLOOR {
            break;
        }
        if k == MAX_POWERS {
            return Err(AnalysisError::EnumerationLimit(MAX_POWERS));
        }
        power = m * power;
        scale *= rho;
        k += 1;
    }
    let envelope = DecayEnvelope {
        c,
        rho,
        rho_spec,
        horizon: k,
        matrix_hash: matrix_hash(m),
        norm,
    };
    debug_assert!(envelope.first_violation(m).is_none());
    Ok(envelope)
}

fn checked_radius(m: &Matrix) -> Result<f64, AnalysisError> {
    if m.nrows() != m.ncols() {
        return Err(AnalysisError::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    let rho = spectral_radius(m).map_err(|_| AnalysisError::NonFinite)?;
    if rho >= 1.0 {
        return Err(AnalysisError::Unstable(rho));
    }
    Ok(rho)
}

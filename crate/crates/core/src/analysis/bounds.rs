//! Closed-form error bound for event-based estimation and the input-error check.

use super::envelope::DecayEnvelope;
use crate::model::Matrix;
use crate::sim::trace::SimTrace;

/// `c ‖e(0)‖ + c / (1 - ρ) ‖L‖ ‖δ‖` in the envelope's norm.
pub fn theorem1_bound(envelope: &DecayEnvelope, l: &Matrix, delta_est: &[f64], e0_norm: f64) -> f64 {
    let norm = envelope.norm;
    envelope.c * e0_norm + envelope.c / (1.0 - envelope.rho) * norm.matrix(l) * norm.vector(delta_est)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Lemma1Report {
    pub passed: bool,
    /// `max_k ‖u(k) - û(k)‖_∞`.
    pub max_error: f64,
    /// `‖δ^ctrl‖_∞`.
    pub bound: f64,
    pub max_ratio: f64,
    pub worst_step: usize,
}

/// Exact check of `‖u(k) - û(k)‖_∞ ≤ ‖δ^ctrl‖_∞` over every recorded step.
pub fn lemma1_check(trace: &SimTrace, delta_ctrl_inf: f64) -> Lemma1Report {
    let mut max_error = 0.0_f64;
    let mut worst_step = 0;
    for r in &trace.records {
        let err = (&r.u - &r.u_hat).amax();
        if err > max_error || err.is_nan() {
            max_error = if err.is_nan() { f64::INFINITY } else { err };
            worst_step = r.k;
        }
    }
    let max_ratio = if delta_ctrl_inf > 0.0 {
        max_error / delta_ctrl_inf
    } else if max_error == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Lemma1Report {
        passed: max_error <= delta_ctrl_inf,
        max_error,
        bound: delta_ctrl_inf,
        max_ratio,
        worst_step,
    }
}

//! Common quadratic Lyapunov function for the switched inter-agent error.

use super::AnalysisError;
use crate::model::{AugmentedModel, GainSet, LtiPlant, Matrix, Vector};
use crate::sim::scenario::SubsetGranularity;
use crate::trigger::TriggerLayout;

/// Largest number of independent switches enumerated (`2^16` subsets).
pub const MAX_SWITCHES: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct LyapunovCertificate {
    pub p: Matrix,
    pub subsets_checked: usize,
    /// `min_J λ_min(P - Ã_Jᵀ P Ã_J)`.
    pub margin: f64,
    /// Switches in the subset attaining the margin.
    pub worst_subset: Vec<usize>,
}

impl LyapunovCertificate {
    pub fn valid(&self) -> bool {
        self.margin > 0.0
    }
}

/// Output rows that switch together, one entry per switch.
pub fn switch_sets(plant: &LtiPlant, layout: &TriggerLayout, granularity: SubsetGranularity) -> Vec<Vec<usize>> {
    match granularity {
        SubsetGranularity::Groups => layout.measurement_rows.clone(),
        SubsetGranularity::Agents => (0..plant.agents())
            .map(|i| plant.output_range(i).collect::<Vec<_>>())
            .filter(|rows| !rows.is_empty())
            .collect(),
    }
}

/// `Ã_J = (I - sum_{l in J} L_l C_l) A` on the lag-augmented state.
pub fn switched_matrix(model: &AugmentedModel, l_aug: &Matrix, rows: &[usize]) -> Matrix {
    let dim = model.dim();
    let l = l_aug.select_columns(rows);
    let c = model.c.select_rows(rows);
    (Matrix::identity(dim, dim) - l * c) * &model.a
}

/// `√(eᵀ P e)`.
pub fn p_norm(p: &Matrix, e: &Vector) -> f64 {
    e.dot(&(p * e)).max(0.0).sqrt()
}

pub fn is_positive_definite(p: &Matrix) -> bool {
    if p.nrows() != p.ncols() || p.iter().any(|x| !x.is_finite()) {
        return false;
    }
    let scale = p.amax().max(1.0);
    if (p - p.transpose()).amax() > 1e-12 * scale {
        return false;
    }
    p.clone().cholesky().is_some()
}

/// Enumerates every subset of `switches` and reports the smallest decrease margin.
pub fn common_lyapunov_check(
    plant: &LtiPlant,
    gains: &GainSet,
    p: &Matrix,
    switches: &[Vec<usize>],
) -> Result<LyapunovCertificate, AnalysisError> {
    let model = AugmentedModel::new(plant);
    if p.nrows() != model.dim() || p.ncols() != model.dim() {
        return Err(AnalysisError::Dimension(format!(
            "P is {}x{}, state dimension {}",
            p.nrows(),
            p.ncols(),
            model.dim()
        )));
    }
    if !is_positive_definite(p) {
        return Err(AnalysisError::NotPositiveDefinite);
    }
    if switches.len() > MAX_SWITCHES {
        return Err(AnalysisError::TooManySwitches(switches.len()));
    }
    let l_aug = model.lift_observer_gain(&gains.l);
    let mut margin = f64::INFINITY;
    let mut worst = Vec::new();
    let subsets = 1usize << switches.len();
    for mask in 0..subsets {
        let members: Vec<usize> = (0..switches.len()).filter(|b| mask & (1 << b) != 0).collect();
        let rows: Vec<usize> = members.iter().flat_map(|&b| switches[b].iter().copied()).collect();
        let a_j = switched_matrix(&model, &l_aug, &rows);
        let q = p - a_j.transpose() * p * &a_j;
        let q = (&q + q.transpose()) * 0.5;
        let lambda = q.symmetric_eigenvalues().min();
        if lambda < margin {
            margin = lambda;
            worst = members;
        }
    }
    Ok(LyapunovCertificate {
        p: p.clone(),
        subsets_checked: subsets,
        margin,
        worst_subset: worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::InputBlock;

    fn diag_plant(a: f64) -> LtiPlant {
        LtiPlant {
            a: Matrix::from_diagonal_element(2, 2, a),
            input_blocks: vec![InputBlock {
                lag: 1,
                b: Matrix::zeros(2, 0),
            }],
            c: Matrix::identity(2, 2),
            outputs_per_agent: vec![1, 1],
            inputs_per_agent: vec![0, 0],
            sample_time: 1.0,
        }
    }

    fn gains(l: f64) -> GainSet {
        GainSet {
            l: Matrix::from_diagonal_element(2, 2, l),
            f: Matrix::zeros(0, 2),
        }
    }

    #[test]
    fn diagonal_example_is_certified() {
        let plant = diag_plant(0.5);
        let switches = vec![vec![0], vec![1]];
        let cert = common_lyapunov_check(&plant, &gains(0.3), &Matrix::identity(2, 2), &switches).unwrap();
        assert_eq!(cert.subsets_checked, 4);
        assert!(cert.valid());
        // Ã_∅ = diag(0.5, 0.5) is the slowest mode: 1 - 0.25.
        assert!((cert.margin - 0.75).abs() < 1e-12);
        assert!(cert.worst_subset.is_empty());
    }

    #[test]
    fn unstable_open_loop_cannot_be_certified() {
        let plant = diag_plant(1.2);
        let switches = vec![vec![0], vec![1]];
        for p in [Matrix::identity(2, 2), Matrix::from_diagonal(&Vector::from_row_slice(&[5.0, 0.1]))] {
            let cert = common_lyapunov_check(&plant, &gains(0.0), &p, &switches).unwrap();
            assert!(!cert.valid());
        }
    }

    #[test]
    fn rejects_indefinite_p() {
        let plant = diag_plant(0.5);
        let p = Matrix::from_diagonal(&Vector::from_row_slice(&[1.0, -1.0]));
        assert_eq!(
            common_lyapunov_check(&plant, &gains(0.3), &p, &[vec![0], vec![1]]),
            Err(AnalysisError::NotPositiveDefinite)
        );
    }

    #[test]
    fn p_norm_of_unit_vector() {
        let p = Matrix::from_diagonal(&Vector::from_row_slice(&[4.0, 1.0]));
        assert_eq!(p_norm(&p, &Vector::from_row_slice(&[1.0, 0.0])), 2.0);
    }
}

//! Hölder vector norms and the matrix norms they induce.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Norm order used by triggers, envelopes and bounds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NormOrder {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
    #[default]
    #[serde(rename = "inf")]
    Inf,
}

impl NormOrder {
    pub fn vector(self, v: &[f64]) -> f64 {
        match self {
            NormOrder::One => v.iter().map(|x| x.abs()).sum(),
            NormOrder::Two => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            NormOrder::Inf => v.iter().fold(0.0, |acc, x| acc.max(x.abs())),
        }
    }

    pub fn dvector(self, v: &DVector<f64>) -> f64 {
        self.vector(v.as_slice())
    }

    /// Induced matrix norm: max column sum, largest singular value, or max row sum.
    pub fn matrix(self, m: &DMatrix<f64>) -> f64 {
        if m.is_empty() {
            return 0.0;
        }
        match self {
            NormOrder::One => m
                .column_iter()
                .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
                .fold(0.0, f64::max),
            NormOrder::Two => m.clone().svd(false, false).singular_values.max(),
            NormOrder::Inf => m
                .row_iter()
                .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
                .fold(0.0, f64::max),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            NormOrder::One => "1",
            NormOrder::Two => "2",
            NormOrder::Inf => "inf",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vector_norms() {
        let v = [3.0, -4.0];
        assert_eq!(NormOrder::One.vector(&v), 7.0);
        assert_eq!(NormOrder::Two.vector(&v), 5.0);
        assert_eq!(NormOrder::Inf.vector(&v), 4.0);
        assert_eq!(NormOrder::Inf.vector(&[]), 0.0);
    }

    #[test]
    fn induced_norms() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 3.0, 4.0]);
        assert_eq!(NormOrder::One.matrix(&m), 6.0);
        assert_eq!(NormOrder::Inf.matrix(&m), 7.0);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![0.3, -0.7]));
        assert!((NormOrder::Two.matrix(&d) - 0.7).abs() < 1e-15);
    }
}

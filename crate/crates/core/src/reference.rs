//! Centralized periodic observer: the estimator every agent tries to emulate.
//!
//! It sees every measurement and the true commanded input at every step.
//! All vectors here are lag-augmented (see [`AugmentedModel`]).

use crate::model::{AugmentedModel, Matrix, ModelError, Vector};

#[derive(Clone, Debug, PartialEq)]
pub struct CentralizedState {
    /// `x̂_c(k|k-1)`.
    pub x_pred: Vector,
    /// `x̂_c(k|k)`.
    pub x_post: Vector,
    /// `ε_c(k) = x(k) - x̂_c(k)`.
    pub eps_c: Vector,
}

/// `x̂_c(k|k-1) = A x̂_c(k-1|k-1) + sum_l B_l u(k-l)`.
pub fn centralized_predict(model: &AugmentedModel, x_post: &Vector, u_prev: &Vector) -> Result<Vector, ModelError> {
    if u_prev.len() != model.q {
        return Err(ModelError::Dimension {
            what: "input",
            expected: model.q,
            got: u_prev.len(),
        });
    }
    Ok(&model.a * x_post + &model.b * u_prev)
}

/// `x̂_c(k|k) = x̂_c(k|k-1) + L (y - C x̂_c(k|k-1))` with the full output vector.
pub fn centralized_update(
    model: &AugmentedModel,
    l_aug: &Matrix,
    x_pred: &Vector,
    y: &Vector,
) -> Result<Vector, ModelError> {
    if y.len() != model.c.nrows() {
        return Err(ModelError::Dimension {
            what: "measurement",
            expected: model.c.nrows(),
            got: y.len(),
        });
    }
    Ok(x_pred + l_aug * (y - &model.c * x_pred))
}

/// `u(k) = F x̂_c(k)`.
pub fn centralized_control(f: &Matrix, x_post: &Vector) -> Vector {
    f * x_post.rows(0, f.ncols())
}

/// One step of the closed-form error recursion
/// `ε(k) = (I-LC)A ε(k-1) + (I-LC) v(k-1) - L w(k)`, with `v` the augmented
/// process disturbance (including unmodelled actuation).
pub fn reference_error_step(model: &AugmentedModel, l_aug: &Matrix, eps: &Vector, v: &Vector, w: &Vector) -> Vector {
    let dim = model.dim();
    let i_lc = Matrix::identity(dim, dim) - l_aug * &model.c;
    &i_lc * (&model.a * eps) + &i_lc * v - l_aug * w
}

/// Running centralized estimator.
#[derive(Clone, Debug)]
pub struct CentralizedReference {
    pub state: CentralizedState,
    l_aug: Matrix,
}

impl CentralizedReference {
    pub fn new(model: &AugmentedModel, l: &Matrix, x0: Vector, x_true: &Vector) -> Self {
        let eps_c = model.physical(&(x_true - &x0));
        Self {
            state: CentralizedState {
                x_pred: x0.clone(),
                x_post: x0,
                eps_c,
            },
            l_aug: model.lift_observer_gain(l),
        }
    }

    /// Advances to step `k` given `u(k-1)`, `y(k)` and the true augmented state `z(k)`.
    pub fn step(&mut self, model: &AugmentedModel, u_prev: &Vector, y: &Vector, z_true: &Vector) -> Result<(), ModelError> {
        let x_pred = centralized_predict(model, &self.state.x_post, u_prev)?;
        let x_post = centralized_update(model, &self.l_aug, &x_pred, y)?;
        self.state.eps_c = model.physical(&(z_true - &x_post));
        self.state.x_pred = x_pred;
        self.state.x_post = x_post;
        Ok(())
    }

    pub fn estimate(&self, model: &AugmentedModel) -> Vector {
        model.physical(&self.state.x_post)
    }

    pub fn l_aug(&self) -> &Matrix {
        &self.l_aug
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{InputBlock, LtiPlant};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar(a: f64, b: f64) -> AugmentedModel {
        AugmentedModel::new(&LtiPlant {
            a: Matrix::from_element(1, 1, a),
            input_blocks: vec![InputBlock {
                lag: 1,
                b: Matrix::from_element(1, 1, b),
            }],
            c: Matrix::from_element(1, 1, 1.0),
            outputs_per_agent: vec![1],
            inputs_per_agent: vec![1],
            sample_time: 1.0,
        })
    }

    fn v(x: f64) -> Vector {
        Vector::from_element(1, x)
    }

    #[test]
    fn predict_examples() {
        let m = scalar(1.0, 0.0);
        assert_eq!(centralized_predict(&m, &v(3.0), &v(7.0)).unwrap(), v(3.0));
        let m = scalar(0.5, 1.0);
        assert_eq!(centralized_predict(&m, &v(2.0), &v(1.0)).unwrap(), v(2.0));
        assert_eq!(centralized_predict(&m, &v(0.0), &v(0.0)).unwrap(), v(0.0));
        assert!(centralized_predict(&m, &v(0.0), &Vector::zeros(2)).is_err());
    }

    #[test]
    fn update_examples() {
        let m = scalar(0.5, 1.0);
        let zero = Matrix::zeros(1, 1);
        assert_eq!(centralized_update(&m, &zero, &v(1.0), &v(5.0)).unwrap(), v(1.0));
        let l = Matrix::from_element(1, 1, 0.4);
        assert!((centralized_update(&m, &l, &v(1.0), &v(2.0)).unwrap()[0] - 1.4).abs() < 1e-15);
        assert_eq!(centralized_update(&m, &l, &v(1.0), &v(1.0)).unwrap(), v(1.0));
    }

    #[test]
    fn control_examples() {
        assert_eq!(centralized_control(&Matrix::zeros(1, 1), &v(2.0)), v(0.0));
        assert!((centralized_control(&Matrix::from_element(1, 1, -0.9), &v(2.0))[0] + 1.8).abs() < 1e-15);
        assert_eq!(centralized_control(&Matrix::from_element(1, 1, -0.9), &v(0.0))[0], 0.0);
    }

    #[test]
    fn error_recursion_examples() {
        let m = scalar(0.5, 1.0);
        let l = Matrix::from_element(1, 1, 0.4);
        let e = reference_error_step(&m, &l, &v(0.0), &v(0.0), &v(0.0));
        assert_eq!(e, v(0.0));
        let e = reference_error_step(&m, &l, &v(1.0), &v(0.0), &v(0.0));
        assert!((e[0] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn error_recursion_matches_direct_simulation() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let a: f64 = rng.random_range(-0.95..0.95);
        let l_gain: f64 = rng.random_range(0.0..0.9);
        let m = scalar(a, 1.0);
        let l = Matrix::from_element(1, 1, l_gain);
        let mut x = v(1.0);
        let mut reference = CentralizedReference::new(&m, &l, v(0.0), &x);
        let mut eps = reference.state.eps_c.clone();
        for _ in 0..100 {
            let u = v(rng.random_range(-1.0..1.0));
            let noise_v = v(rng.random_range(-0.1..0.1));
            let noise_w = v(rng.random_range(-0.1..0.1));
            x = m.step(&x, &u, &noise_v);
            let y = &m.c * &x + &noise_w;
            reference.step(&m, &u, &y, &x).unwrap();
            eps = reference_error_step(&m, reference.l_aug(), &eps, &noise_v, &noise_w);
            assert!((eps[0] - reference.state.eps_c[0]).abs() < 1e-12);
        }
    }
}

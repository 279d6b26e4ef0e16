//! Periodic centralized baseline: one estimator and controller that read every
//! sensor and refresh every input once per `period` steps.

use super::noise::{noise_sample, NoiseSource};
use super::runner::SimError;
use super::scenario::{DisturbanceTarget, Scenario};
use crate::model::{GainSet, Vector};

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineResult {
    pub period: usize,
    pub steps: usize,
    /// Mean of `ε_cᵀ ε_c` over steps.
    pub e_norm: f64,
    pub c_norm: f64,
    pub max_state: f64,
}

/// Runs the baseline with the scenario's plant, noise streams and disturbances.
///
/// Between corrections the estimate is propagated open loop and the last input is held.
pub fn run_baseline(scenario: &Scenario, period: usize, gains: &GainSet) -> Result<BaselineResult, SimError> {
    let period = period.max(1);
    let plant = &scenario.plant;
    let (n, p, q) = (plant.n(), plant.p(), plant.q());
    let model = scenario.model();
    let l_aug = model.lift_observer_gain(&gains.l);
    let seed = scenario.seed;

    let mut z = model.lift_disturbance(&scenario.x0);
    let mut xhat = model.lift_disturbance(&scenario.xc0);
    let mut u = &gains.f * xhat.rows(0, n);
    let mut err_sum = 0.0;
    let mut sent = 0usize;
    let mut max_state = 0.0_f64;

    let disturbance = |target: DisturbanceTarget, k: usize, dim: usize| {
        let mut total = Vector::zeros(dim);
        for d in scenario.disturbances.iter().filter(|d| d.target == target && d.active(k)) {
            total += Vector::from_row_slice(&d.magnitude);
        }
        total
    };

    for k in 1..=scenario.horizon {
        let u_applied = &u
            + noise_sample(&scenario.noise.input, q, NoiseSource::Input, k - 1, seed)
            + disturbance(DisturbanceTarget::Input, k - 1, q);
        let v = noise_sample(&scenario.noise.process, n, NoiseSource::Process, k - 1, seed)
            + disturbance(DisturbanceTarget::Process, k - 1, n);
        z = model.step(&z, &u_applied, &v);
        let y = &model.c * &z + noise_sample(&scenario.noise.sensor, p, NoiseSource::Sensor, k, seed);

        xhat = &model.a * &xhat + &model.b * &u;
        if k % period == 0 {
            xhat += &l_aug * (&y - &model.c * &xhat);
            u = &gains.f * xhat.rows(0, n);
            sent += p + q;
        }
        let eps = model.physical(&(&z - &xhat));
        err_sum += eps.dot(&eps);
        let x_norm = z.rows(0, n).amax();
        if !(x_norm <= scenario.divergence_limit) || !(u.amax() <= scenario.divergence_limit) {
            return Err(SimError::BaselineDiverged { k });
        }
        max_state = max_state.max(x_norm);
    }
    let steps = scenario.horizon;
    Ok(BaselineResult {
        period,
        steps,
        e_norm: err_sum / steps as f64,
        c_norm: if p + q == 0 { 0.0 } else { sent as f64 / (steps * (p + q)) as f64 },
        max_state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::runner::run_scenario;

    const SCALAR: &str = r#"
[plant]
a = [[0.5]]
c = [[1.0], [1.0]]
outputs_per_agent = [1, 1]
inputs_per_agent = [1, 1]
[[plant.input_blocks]]
lag = 1
b = [[0.5, 0.5]]
[gains]
l = [[0.2, 0.2]]
f = [[-0.4], [-0.4]]
[noise]
process = [0.05]
sensor = [0.1, 0.1]
input = [0.01, 0.01]
[run]
horizon = 300
seed = 4
x0 = [1.0]
"#;

    #[test]
    fn period_one_equals_reference_loop() {
        let s = Scenario::from_toml(SCALAR).unwrap();
        let base = run_baseline(&s, 1, &s.gains).unwrap();
        assert_eq!(base.c_norm, 1.0);
        let out = run_scenario(&s).unwrap();
        let direct: f64 = out
            .trace
            .records
            .iter()
            .map(|r| r.eps_c.as_ref().unwrap().norm_squared())
            .sum::<f64>()
            / 300.0;
        assert!((base.e_norm - direct).abs() < 1e-12);
        assert!((base.e_norm - out.metrics.e_norm).abs() < 1e-12);
    }

    #[test]
    fn longer_period_sends_less() {
        let s = Scenario::from_toml(SCALAR).unwrap();
        let base = run_baseline(&s, 3, &s.gains).unwrap();
        assert!((base.c_norm - 1.0 / 3.0).abs() < 1e-12);
    }
}

//! Closed-loop simulation: plant, noise, disturbances, agents, bus and reference.

use std::sync::Arc;

use thiserror::Error;

use super::metrics::{compute_metrics, Metrics};
use super::noise::{noise_sample, NoiseSource};
use super::scenario::{DisturbanceTarget, Scenario};
use super::trace::{InitialState, SimTrace, StepRecord, TraceMeta};
use crate::agent::{initial_broadcast, step_agents, AgentCore, AgentError, BusContext, EstimatorSetup};
use crate::analysis::diagnostics::{diagnostics_from_trace, DiagnosticsTrace};
use crate::model::{AugmentedModel, ModelError, Vector};
use crate::reference::CentralizedReference;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("numeric divergence at step {k}: {what} reached {value:e}")]
    Diverged {
        k: usize,
        what: &'static str,
        value: f64,
        /// Records up to and including the failing step.
        trace: Box<SimTrace>,
    },
    #[error("numeric divergence at step {k} in the periodic baseline")]
    BaselineDiverged { k: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

impl SimError {
    pub fn step(&self) -> Option<usize> {
        match self {
            SimError::Diverged { k, .. } | SimError::BaselineDiverged { k } => Some(*k),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SimOutput {
    pub trace: SimTrace,
    pub metrics: Metrics,
    pub diagnostics: Option<DiagnosticsTrace>,
}

/// A step whose record exceeded the divergence limit.
#[derive(Clone, Debug)]
pub struct StepDivergence {
    pub record: StepRecord,
    pub what: &'static str,
    pub value: f64,
}

/// Steppable simulation of one scenario.
pub struct Simulator<'a> {
    scenario: &'a Scenario,
    setup: Arc<EstimatorSetup>,
    agents: Vec<AgentCore>,
    reference: Option<CentralizedReference>,
    /// True lag-augmented state; registers hold applied inputs.
    z: Vector,
    u_prev: Vector,
    k: usize,
    initial: InitialState,
}

impl<'a> Simulator<'a> {
    pub fn new(scenario: &'a Scenario) -> Self {
        let setup = Arc::new(
            EstimatorSetup::new(
                scenario.plant.clone(),
                scenario.gains.clone(),
                scenario.layout.clone(),
                scenario.reset_period,
            )
            .with_fault(scenario.fault),
        );
        let model = &setup.model;
        let mut agents: Vec<AgentCore> = scenario
            .xhat0
            .iter()
            .enumerate()
            .map(|(i, x)| AgentCore::new(i, setup.clone(), x))
            .collect();
        let u0 = initial_broadcast(&mut agents);
        let z = model.lift_disturbance(&scenario.x0);
        let reference = scenario.reference.then(|| {
            CentralizedReference::new(model, &scenario.gains.l, model.lift_disturbance(&scenario.xc0), &z)
        });
        let initial = InitialState {
            x: scenario.x0.clone(),
            xhat: scenario.xhat0.clone(),
            xc: reference.as_ref().map(|r| r.estimate(model)),
            u: u0.clone(),
        };
        Self {
            scenario,
            agents,
            reference,
            z,
            u_prev: u0,
            k: 0,
            initial,
            setup,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn agents(&self) -> &[AgentCore] {
        &self.agents
    }

    pub fn model(&self) -> &AugmentedModel {
        &self.setup.model
    }

    pub fn meta(&self) -> TraceMeta {
        let s = self.scenario;
        let layout = &s.layout;
        TraceMeta {
            name: s.source.name.clone(),
            scenario_hash: s.hash.clone(),
            seed: s.seed,
            n: s.plant.n(),
            p: s.plant.p(),
            q: s.plant.q(),
            agents: s.agents(),
            horizon: s.horizon,
            measurement_groups: layout.measurement_ids.clone(),
            measurement_sizes: layout.measurement_rows.iter().map(Vec::len).collect(),
            input_groups: layout.input_ids.clone(),
            input_sizes: layout.input_rows.iter().map(Vec::len).collect(),
            reset_scalars: s.agents() * s.plant.n(),
            reference: s.reference,
        }
    }

    pub fn initial(&self) -> &InitialState {
        &self.initial
    }

    fn disturbance(&self, target: DisturbanceTarget, k: usize, dim: usize) -> Vector {
        let mut total = Vector::zeros(dim);
        for d in self.scenario.disturbances.iter().filter(|d| d.target == target && d.active(k)) {
            total += Vector::from_row_slice(&d.magnitude);
        }
        total
    }

    /// Advances from `k` to `k + 1`.
    pub fn step(&mut self) -> Result<StepRecord, Box<StepDivergence>> {
        let s = self.scenario;
        let (n, q, p) = (s.plant.n(), s.plant.q(), s.plant.p());
        let prev = self.k;
        let k = prev + 1;

        let u_applied = &self.u_prev
            + noise_sample(&s.noise.input, q, NoiseSource::Input, prev, s.seed)
            + self.disturbance(DisturbanceTarget::Input, prev, q);
        let v = noise_sample(&s.noise.process, n, NoiseSource::Process, prev, s.seed)
            + self.disturbance(DisturbanceTarget::Process, prev, n);
        let model = &self.setup.model;
        self.z = model.step(&self.z, &u_applied, &v);
        let w = noise_sample(&s.noise.sensor, p, NoiseSource::Sensor, k, s.seed);
        let y = &model.c * &self.z + w;

        let bus = BusContext {
            drop_model: &s.drop_model,
            seed: s.seed,
        };
        let protocol = step_agents(&mut self.agents, &y, k, &bus).expect("layout validated with the scenario");
        if let Some(reference) = self.reference.as_mut() {
            reference
                .step(model, &self.u_prev, &y, &self.z)
                .expect("dimensions validated with the scenario");
        }
        self.u_prev = protocol.u.clone();
        self.k = k;

        let record = StepRecord {
            k,
            x: model.physical(&self.z),
            y,
            u: protocol.u,
            u_applied,
            u_hat: self.agents[0].u_hat.clone(),
            x_pred: protocol.priors,
            x_pre_reset: protocol.pre_reset,
            x_post: self.agents.iter().map(AgentCore::estimate).collect(),
            xc: self.reference.as_ref().map(|r| r.estimate(model)),
            eps_c: self.reference.as_ref().map(|r| r.state.eps_c.clone()),
            measurement_fired: protocol.measurement_fired,
            input_fired: protocol.input_fired,
            deliveries: protocol.deliveries,
            reset: protocol.reset,
        };
        match self.divergence(&record) {
            None => Ok(record),
            Some((what, value)) => Err(Box::new(StepDivergence { record, what, value })),
        }
    }

    fn divergence(&self, r: &StepRecord) -> Option<(&'static str, f64)> {
        let limit = self.scenario.divergence_limit;
        let worst = |v: &Vector| v.iter().fold(0.0_f64, |m, x| if x.is_finite() { m.max(x.abs()) } else { f64::INFINITY });
        let mut candidates = vec![("state", worst(&r.x)), ("input", worst(&r.u))];
        for x in &r.x_post {
            candidates.push(("estimate", worst(x)));
        }
        if let Some(xc) = &r.xc {
            candidates.push(("reference estimate", worst(xc)));
        }
        candidates.into_iter().find(|(_, v)| *v > limit)
    }
}

/// Runs the full horizon, stopping early on divergence.
pub fn run_trace(scenario: &Scenario) -> Result<SimTrace, SimError> {
    let mut sim = Simulator::new(scenario);
    let mut trace = SimTrace {
        meta: sim.meta(),
        initial: sim.initial().clone(),
        records: Vec::with_capacity(scenario.horizon),
    };
    for _ in 0..scenario.horizon {
        match sim.step() {
            Ok(r) => trace.records.push(r),
            Err(bad) => {
                let StepDivergence { record, what, value } = *bad;
                let k = record.k;
                trace.records.push(record);
                return Err(SimError::Diverged {
                    k,
                    what,
                    value,
                    trace: Box::new(trace),
                });
            }
        }
    }
    Ok(trace)
}

pub fn run_scenario(scenario: &Scenario) -> Result<SimOutput, SimError> {
    let trace = run_trace(scenario)?;
    let metrics = compute_metrics(&trace);
    let diagnostics = (scenario.diagnostics && scenario.reference)
        .then(|| diagnostics_from_trace(&trace, scenario).ok())
        .flatten();
    Ok(SimOutput {
        trace,
        metrics,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCALAR: &str = r#"
name = "t"
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
[run]
horizon = 200
x0 = [1.0]
"#;

    #[test]
    fn zero_thresholds_recover_reference() {
        let s = Scenario::from_toml(SCALAR).unwrap();
        let out = run_scenario(&s).unwrap();
        assert_eq!(out.trace.records.len(), 200);
        for r in &out.trace.records {
            let xc = r.xc.as_ref().unwrap();
            for x in &r.x_post {
                assert!((x - xc).amax() <= 1e-12);
            }
            assert!(r.measurement_fired.iter().all(|&f| f));
        }
        assert_eq!(out.metrics.c_norm, 1.0);
    }

    #[test]
    fn huge_thresholds_stay_silent() {
        let text = SCALAR.replace("[run]", "[triggers]\nmeasurement_delta = 1e9\ninput_delta = 1e9\n[run]");
        let s = Scenario::from_toml(&text).unwrap();
        let out = run_scenario(&s).unwrap();
        assert_eq!(out.metrics.c_norm, 0.0);
    }

    #[test]
    fn divergence_reports_step() {
        let text = SCALAR
            .replace("a = [[0.5]]", "a = [[3.0]]")
            .replace("f = [[-0.4], [-0.4]]", "f = [[0.0], [0.0]]")
            .replace("horizon = 200", "horizon = 200\ndivergence_limit = 1e6");
        let s = Scenario::from_toml(&text).unwrap();
        match run_scenario(&s) {
            Err(SimError::Diverged { k, trace, .. }) => {
                assert!(k > 5 && k < 20, "k = {k}");
                assert_eq!(trace.records.len(), k);
            }
            other => panic!("unexpected {:?}", other.map(|o| o.metrics)),
        }
    }
}

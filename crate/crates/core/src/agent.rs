//! Per-agent event-based estimator, input bookkeeping, local control and
//! synchronous averaging.
//!
//! Within one step all agents advance through the same barrier sequence:
//! predict, measurement triggers, bus delivery, measurement update, optional
//! reset, control, input triggers, input delivery. [`step_agents`] runs that
//! sequence; the [`AgentCore`] methods are its individual phases.

use std::sync::Arc;

use thiserror::Error;

use crate::bus::{broadcast, BusMessage, DeliveryReport, DropModel, MessageId, MessageKind};
use crate::model::{AugmentedModel, GainSet, LtiPlant, Matrix, Vector};
use crate::trigger::{build_index_sets, crosses, IndexSets, TriggerError, TriggerLayout};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("no measurement group {0}")]
    UnknownGroup(usize),
    #[error("no input group {0}")]
    UnknownInputGroup(usize),
    #[error("synchronous reset requested but no reset period is configured")]
    ResetDisabled,
    #[error(transparent)]
    Trigger(#[from] TriggerError),
}

/// Deliberate defects used to check that the verification suite detects them.
#[doc(hidden)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Triggers compare with `>` instead of `≥`.
    StrictTrigger,
    /// Synchronous averaging leaves out the last agent.
    ResetSkipsLastAgent,
}

/// Immutable data shared by all agents of one scenario.
#[derive(Debug)]
pub struct EstimatorSetup {
    pub plant: LtiPlant,
    pub model: AugmentedModel,
    pub gains: GainSet,
    pub layout: TriggerLayout,
    pub reset_period: Option<usize>,
    pub fault: Option<Fault>,
    l_groups: Vec<Matrix>,
    c_groups: Vec<Matrix>,
    f_agents: Vec<Matrix>,
}

impl EstimatorSetup {
    pub fn new(plant: LtiPlant, gains: GainSet, layout: TriggerLayout, reset_period: Option<usize>) -> Self {
        let model = AugmentedModel::new(&plant);
        let l_aug = model.lift_observer_gain(&gains.l);
        let l_groups = layout
            .measurement_rows
            .iter()
            .map(|rows| l_aug.select_columns(rows))
            .collect();
        let c_groups = layout
            .measurement_rows
            .iter()
            .map(|rows| model.c.select_rows(rows))
            .collect();
        let f_agents = (0..plant.agents()).map(|i| gains.f_block(&plant, i)).collect();
        Self {
            plant,
            model,
            gains,
            layout,
            reset_period,
            fault: None,
            l_groups,
            c_groups,
            f_agents,
        }
    }

    pub fn with_fault(mut self, fault: Option<Fault>) -> Self {
        self.fault = fault;
        self
    }

    pub fn agents(&self) -> usize {
        self.plant.agents()
    }

    pub fn is_reset_step(&self, k: usize) -> bool {
        matches!(self.reset_period, Some(period) if k > 0 && k.is_multiple_of(period))
    }

    fn strict(&self) -> bool {
        self.fault == Some(Fault::StrictTrigger)
    }
}

#[derive(Clone, Debug)]
pub struct AgentCore {
    pub id: usize,
    setup: Arc<EstimatorSetup>,
    /// `x̂_i(k|k-1)`, augmented.
    pub x_pred: Vector,
    /// `x̂_i(k|k)`, augmented.
    pub x_post: Vector,
    /// Last known full input vector `û`.
    pub u_hat: Vector,
    /// Last transmitted value of this agent's own input.
    pub u_last_own: Vector,
    /// Most recently computed own input `u_i(k)`.
    pub u_own: Vector,
}

impl AgentCore {
    /// Registers start at zero; `x0` is the physical initial estimate.
    pub fn new(id: usize, setup: Arc<EstimatorSetup>, x0: &Vector) -> Self {
        let x_post = setup.model.lift_disturbance(x0);
        let q = setup.plant.q();
        let qi = setup.plant.inputs_per_agent[id];
        Self {
            id,
            x_pred: x_post.clone(),
            x_post,
            u_hat: Vector::zeros(q),
            u_last_own: Vector::zeros(qi),
            u_own: Vector::zeros(qi),
            setup,
        }
    }

    pub fn setup(&self) -> &EstimatorSetup {
        &self.setup
    }

    pub fn estimate(&self) -> Vector {
        self.setup.model.physical(&self.x_post)
    }

    /// `x̂_i(k|k-1) = A x̂_i(k-1|k-1) + sum_l B_l û(k-l)`.
    pub fn predict(&mut self) -> &Vector {
        let m = &self.setup.model;
        self.x_pred = &m.a * &self.x_post + &m.b * &self.u_hat;
        &self.x_pred
    }

    /// Trigger outcome of each own measurement group against the full `y(k)`.
    pub fn evaluate_measurement_triggers(&self, y: &Vector) -> Vec<(usize, bool)> {
        let setup = &self.setup;
        setup
            .layout
            .measurement_groups_of(self.id)
            .map(|g| {
                let rows = &setup.layout.measurement_rows[g];
                let y_g: Vec<f64> = rows.iter().map(|&r| y[r]).collect();
                let y_pred = &setup.c_groups[g] * &self.x_pred;
                let group = &setup.layout.measurement[g];
                (g, crosses(group.norm, &y_g, y_pred.as_slice(), group.delta, setup.strict()))
            })
            .collect()
    }

    /// `x̂_i(k|k) = x̂_i(k|k-1) + sum over received groups of L_g (y_g - C_g x̂_i(k|k-1))`.
    pub fn measurement_update(&mut self, received: &[(usize, &Vector)]) -> Result<&Vector, AgentError> {
        let mut post = self.x_pred.clone();
        for &(g, y_g) in received {
            let l = self.setup.l_groups.get(g).ok_or(AgentError::UnknownGroup(g))?;
            let c = &self.setup.c_groups[g];
            post += l * (y_g - c * &self.x_pred);
        }
        self.x_post = post;
        Ok(&self.x_post)
    }

    /// `û_j := u_j` for every input group received this step.
    pub fn input_bookkeeping(&mut self, broadcasts: &[(usize, &Vector)]) -> Result<(), AgentError> {
        for &(g, u_g) in broadcasts {
            let rows = self
                .setup
                .layout
                .input_rows
                .get(g)
                .ok_or(AgentError::UnknownInputGroup(g))?;
            for (i, &r) in rows.iter().enumerate() {
                self.u_hat[r] = u_g[i];
            }
        }
        Ok(())
    }

    /// `u_i(k) = F_i x̂_i(k)`.
    pub fn control(&mut self) -> &Vector {
        let f = &self.setup.f_agents[self.id];
        self.u_own = f * self.x_post.rows(0, self.setup.model.n);
        &self.u_own
    }

    /// Send-on-delta outcome of each own input group against `u_last`.
    pub fn evaluate_input_triggers(&self) -> Vec<(usize, bool)> {
        let setup = &self.setup;
        let offset = setup.plant.input_range(self.id).start;
        setup
            .layout
            .input_groups_of(self.id)
            .map(|g| {
                let local: Vec<usize> = setup.layout.input_rows[g].iter().map(|r| r - offset).collect();
                let u: Vec<f64> = local.iter().map(|&i| self.u_own[i]).collect();
                let last: Vec<f64> = local.iter().map(|&i| self.u_last_own[i]).collect();
                let group = &setup.layout.input[g];
                (g, crosses(group.norm, &u, &last, group.delta, setup.strict()))
            })
            .collect()
    }

    /// Slice of the own input covered by input group `g`.
    pub fn input_slice(&self, g: usize) -> Vector {
        let offset = self.setup.plant.input_range(self.id).start;
        Vector::from_iterator(
            self.setup.layout.input_rows[g].len(),
            self.setup.layout.input_rows[g].iter().map(|r| self.u_own[r - offset]),
        )
    }

    fn mark_input_sent(&mut self, g: usize) {
        let offset = self.setup.plant.input_range(self.id).start;
        for &r in &self.setup.layout.input_rows[g] {
            self.u_last_own[r - offset] = self.u_own[r - offset];
        }
    }
}

/// Resets every posterior to the average of all posteriors.
///
/// Only the physical part is exchanged; input registers are common knowledge.
/// Returns the average that was applied.
pub fn sync_average_apply(cores: &mut [AgentCore], k: usize) -> Result<Vector, AgentError> {
    let Some(first) = cores.first() else {
        return Ok(Vector::zeros(0));
    };
    let setup = first.setup.clone();
    if !setup.is_reset_step(k) {
        return Err(AgentError::ResetDisabled);
    }
    let n = setup.model.n;
    let contributing = match setup.fault {
        Some(Fault::ResetSkipsLastAgent) if cores.len() > 1 => cores.len() - 1,
        _ => cores.len(),
    };
    let mut sum = Vector::zeros(n);
    for core in &cores[..contributing] {
        sum += core.x_post.rows(0, n);
    }
    let average = sum / contributing as f64;
    for core in cores.iter_mut() {
        core.x_post.rows_mut(0, n).copy_from(&average);
    }
    Ok(average)
}

/// Everything that happened on the bus and in the estimators during one step.
#[derive(Clone, Debug)]
pub struct ProtocolStep {
    pub index_sets: IndexSets,
    /// Physical priors `x̂_i(k|k-1)`.
    pub priors: Vec<Vector>,
    /// Physical posteriors before any reset, `x̂_i(k-)`.
    pub pre_reset: Vec<Vector>,
    pub measurement_fired: Vec<bool>,
    pub input_fired: Vec<bool>,
    pub reset: bool,
    /// Commanded input `u(k)` assembled from all agents.
    pub u: Vector,
    pub deliveries: Vec<DeliveryReport>,
}

/// Bus parameters for one run.
#[derive(Clone, Debug)]
pub struct BusContext<'a> {
    pub drop_model: &'a DropModel,
    pub seed: u64,
}

/// Computes `u(0)` from the initial estimates and treats every input as transmitted.
pub fn initial_broadcast(cores: &mut [AgentCore]) -> Vector {
    let Some(first) = cores.first() else {
        return Vector::zeros(0);
    };
    let setup = first.setup.clone();
    let mut u = Vector::zeros(setup.plant.q());
    for core in cores.iter_mut() {
        let r = setup.plant.input_range(core.id);
        u.rows_mut(r.start, r.len()).copy_from(core.control());
        core.u_last_own = core.u_own.clone();
    }
    for core in cores.iter_mut() {
        core.u_hat = u.clone();
    }
    u
}

/// Runs one full protocol step for all agents given the measurement `y(k)`.
pub fn step_agents(cores: &mut [AgentCore], y: &Vector, k: usize, bus: &BusContext<'_>) -> Result<ProtocolStep, AgentError> {
    let Some(first) = cores.first() else {
        return Err(AgentError::UnknownGroup(0));
    };
    let setup = first.setup.clone();
    let agents = cores.len();
    let layout = &setup.layout;
    let mut deliveries = Vec::new();

    let priors: Vec<Vector> = cores
        .iter_mut()
        .map(|c| setup.model.physical(c.predict()))
        .collect();

    let mut outcomes = Vec::with_capacity(layout.measurement.len());
    for core in cores.iter() {
        outcomes.extend(core.evaluate_measurement_triggers(y));
    }
    outcomes.sort_by_key(|(g, _)| *g);
    let measurement_fired: Vec<bool> = outcomes.iter().map(|(_, f)| *f).collect();

    let mut received: Vec<Vec<(usize, Vector)>> = vec![Vec::new(); agents];
    for &(g, fired) in &outcomes {
        if !fired {
            continue;
        }
        let id = layout.measurement_ids[g];
        let payload = Vector::from_iterator(
            layout.measurement_rows[g].len(),
            layout.measurement_rows[g].iter().map(|&r| y[r]),
        );
        let msg = BusMessage {
            id: MessageId {
                kind: MessageKind::Measurement,
                sender: id.agent,
                k,
                group: id.group,
            },
            payload,
        };
        let report = broadcast(&msg, bus.drop_model, agents, bus.seed);
        for &a in &report.delivered_to {
            received[a].push((g, msg.payload.clone()));
        }
        deliveries.push(report);
    }
    for (core, inbox) in cores.iter_mut().zip(&received) {
        let refs: Vec<(usize, &Vector)> = inbox.iter().map(|(g, y)| (*g, y)).collect();
        core.measurement_update(&refs)?;
    }
    let pre_reset: Vec<Vector> = cores.iter().map(AgentCore::estimate).collect();

    let reset = setup.is_reset_step(k);
    if reset {
        for core in cores.iter() {
            let msg = BusMessage {
                id: MessageId {
                    kind: MessageKind::EstimateReset,
                    sender: core.id,
                    k,
                    group: 0,
                },
                payload: core.estimate(),
            };
            deliveries.push(broadcast(&msg, bus.drop_model, agents, bus.seed));
        }
        sync_average_apply(cores, k)?;
    }

    let mut u = Vector::zeros(setup.plant.q());
    let mut input_outcomes = Vec::with_capacity(layout.input.len());
    for core in cores.iter_mut() {
        let r = setup.plant.input_range(core.id);
        u.rows_mut(r.start, r.len()).copy_from(core.control());
        input_outcomes.extend(core.evaluate_input_triggers());
    }
    input_outcomes.sort_by_key(|(g, _)| *g);
    let input_fired: Vec<bool> = input_outcomes.iter().map(|(_, f)| *f).collect();

    let mut input_inbox: Vec<Vec<(usize, Vector)>> = vec![Vec::new(); agents];
    for &(g, fired) in &input_outcomes {
        if !fired {
            continue;
        }
        let id = layout.input_ids[g];
        let sender = &mut cores[id.agent];
        sender.mark_input_sent(g);
        let msg = BusMessage {
            id: MessageId {
                kind: MessageKind::Input,
                sender: id.agent,
                k,
                group: id.group,
            },
            payload: sender.input_slice(g),
        };
        let report = broadcast(&msg, bus.drop_model, agents, bus.seed);
        for &a in &report.delivered_to {
            input_inbox[a].push((g, msg.payload.clone()));
        }
        deliveries.push(report);
    }
    for (core, inbox) in cores.iter_mut().zip(&input_inbox) {
        let refs: Vec<(usize, &Vector)> = inbox.iter().map(|(g, u)| (*g, u)).collect();
        core.input_bookkeeping(&refs)?;
    }

    let m_ids: Vec<_> = layout
        .measurement_ids
        .iter()
        .zip(&measurement_fired)
        .map(|(id, f)| (*id, *f))
        .collect();
    let i_ids: Vec<_> = layout.input_ids.iter().zip(&input_fired).map(|(id, f)| (*id, *f)).collect();
    let index_sets = build_index_sets(k, &m_ids, &i_ids)?;

    Ok(ProtocolStep {
        index_sets,
        priors,
        pre_reset,
        measurement_fired,
        input_fired,
        reset,
        u,
        deliveries,
    })
}

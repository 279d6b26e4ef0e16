//! Event triggers: innovation-based for measurements, send-on-delta for inputs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{LtiPlant, ValidationReport};
use crate::norm::NormOrder;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TriggerKind {
    Measurement,
    Input,
}

/// A set of one agent's sensor (or input) coordinates sharing one transmit decision.
#[derive(Clone, Debug, PartialEq)]
pub struct TriggerGroup {
    pub owner: usize,
    pub kind: TriggerKind,
    /// Coordinates local to the owner's `y_i` (or `u_i`).
    pub indices: Vec<usize>,
    pub delta: f64,
    pub norm: NormOrder,
}

/// Transmit iff `‖y - ŷ‖ ≥ δ`, with `ŷ` from the owner's own prediction.
pub fn measurement_trigger_eval(group: &TriggerGroup, y: &[f64], y_pred: &[f64]) -> bool {
    crosses(group.norm, y, y_pred, group.delta, false)
}

/// Transmit iff `‖u - u_last‖ ≥ δ`.
pub fn input_trigger_eval(group: &TriggerGroup, u: &[f64], u_last: &[f64]) -> bool {
    crosses(group.norm, u, u_last, group.delta, false)
}

pub(crate) fn crosses(norm: NormOrder, a: &[f64], b: &[f64], delta: f64, strict: bool) -> bool {
    debug_assert_eq!(a.len(), b.len());
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let dist = norm.vector(&diff);
    if strict {
        dist > delta
    } else {
        dist >= delta
    }
}

/// Position of a group: owning agent and its index among that agent's groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroupId {
    pub agent: usize,
    pub group: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexSets {
    pub k: usize,
    /// I(k): measurement groups that fired.
    pub transmitting: Vec<GroupId>,
    /// Ī(k): measurement groups that stayed silent.
    pub silent: Vec<GroupId>,
    /// I^ctrl(k): input groups that fired.
    pub input_transmitting: Vec<GroupId>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TriggerError {
    #[error("duplicate trigger outcome for agent {} group {}", .0.agent, .0.group)]
    Duplicate(GroupId),
}

/// Partitions trigger outcomes into I(k), Ī(k) and I^ctrl(k), ordered by (agent, group).
pub fn build_index_sets(
    k: usize,
    measurement: &[(GroupId, bool)],
    input: &[(GroupId, bool)],
) -> Result<IndexSets, TriggerError> {
    let mut m = measurement.to_vec();
    m.sort_by_key(|(id, _)| *id);
    if let Some(w) = m.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(TriggerError::Duplicate(w[0].0));
    }
    let mut inp = input.to_vec();
    inp.sort_by_key(|(id, _)| *id);
    if let Some(w) = inp.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(TriggerError::Duplicate(w[0].0));
    }
    let (fired, silent): (Vec<_>, Vec<_>) = m.into_iter().partition(|(_, f)| *f);
    Ok(IndexSets {
        k,
        transmitting: fired.into_iter().map(|(id, _)| id).collect(),
        silent: silent.into_iter().map(|(id, _)| id).collect(),
        input_transmitting: inp.into_iter().filter(|(_, f)| *f).map(|(id, _)| id).collect(),
    })
}

/// All trigger groups of a scenario, validated against the plant partition.
#[derive(Clone, Debug, PartialEq)]
pub struct TriggerLayout {
    pub measurement: Vec<TriggerGroup>,
    pub input: Vec<TriggerGroup>,
    pub measurement_ids: Vec<GroupId>,
    pub input_ids: Vec<GroupId>,
    /// Global `y` coordinates per measurement group.
    pub measurement_rows: Vec<Vec<usize>>,
    /// Global `u` coordinates per input group.
    pub input_rows: Vec<Vec<usize>>,
}

impl TriggerLayout {
    /// Groups are stably ordered by owner; the group id is the position within the owner.
    pub fn new(
        plant: &LtiPlant,
        measurement: Vec<TriggerGroup>,
        input: Vec<TriggerGroup>,
    ) -> Result<Self, ValidationReport> {
        let mut report = ValidationReport::default();
        let (measurement, measurement_ids, measurement_rows) = arrange(
            plant,
            measurement,
            TriggerKind::Measurement,
            &plant.outputs_per_agent,
            "triggers.measurement",
            &mut report,
        );
        let (input, input_ids, input_rows) = arrange(
            plant,
            input,
            TriggerKind::Input,
            &plant.inputs_per_agent,
            "triggers.input",
            &mut report,
        );
        if report.is_empty() {
            Ok(Self {
                measurement,
                input,
                measurement_ids,
                input_ids,
                measurement_rows,
                input_rows,
            })
        } else {
            Err(report)
        }
    }

    /// One group per agent covering its whole block.
    pub fn whole_blocks(plant: &LtiPlant, delta_est: f64, delta_ctrl: f64, norm: NormOrder) -> Self {
        let make = |sizes: &[usize], kind, delta| {
            sizes
                .iter()
                .enumerate()
                .filter(|(_, &s)| s > 0)
                .map(|(owner, &s)| TriggerGroup {
                    owner,
                    kind,
                    indices: (0..s).collect(),
                    delta,
                    norm,
                })
                .collect::<Vec<_>>()
        };
        Self::new(
            plant,
            make(&plant.outputs_per_agent, TriggerKind::Measurement, delta_est),
            make(&plant.inputs_per_agent, TriggerKind::Input, delta_ctrl),
        )
        .expect("whole-block layout is always a valid partition")
    }

    pub fn measurement_groups_of(&self, agent: usize) -> impl Iterator<Item = usize> + '_ {
        self.measurement_ids
            .iter()
            .enumerate()
            .filter(move |(_, id)| id.agent == agent)
            .map(|(g, _)| g)
    }

    pub fn input_groups_of(&self, agent: usize) -> impl Iterator<Item = usize> + '_ {
        self.input_ids
            .iter()
            .enumerate()
            .filter(move |(_, id)| id.agent == agent)
            .map(|(g, _)| g)
    }

    /// Multiplies every threshold by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for g in out.measurement.iter_mut().chain(out.input.iter_mut()) {
            g.delta *= factor;
        }
        out
    }

    /// `‖δ^ctrl‖_∞`.
    pub fn max_input_delta(&self) -> f64 {
        self.input.iter().map(|g| g.delta).fold(0.0, f64::max)
    }
}

type Arranged = (Vec<TriggerGroup>, Vec<GroupId>, Vec<Vec<usize>>);

fn arrange(
    plant: &LtiPlant,
    mut groups: Vec<TriggerGroup>,
    kind: TriggerKind,
    sizes: &[usize],
    path: &str,
    report: &mut ValidationReport,
) -> Arranged {
    groups.sort_by_key(|g| g.owner);
    let mut covered: Vec<Vec<u32>> = sizes.iter().map(|&s| vec![0; s]).collect();
    let mut ids = Vec::with_capacity(groups.len());
    let mut rows = Vec::with_capacity(groups.len());
    let mut per_agent = vec![0usize; sizes.len()];
    for (g, group) in groups.iter().enumerate() {
        let here = format!("{path}[{g}]");
        if group.kind != kind {
            report.push(&here, format!("expected a {kind:?} group"));
        }
        if !(group.delta >= 0.0 && group.delta.is_finite()) {
            report.push(&here, "threshold must be finite and ≥ 0");
        }
        if group.indices.is_empty() {
            report.push(&here, "indices must be non-empty");
        }
        if group.owner >= sizes.len() {
            report.push(&here, format!("agent {} does not exist", group.owner));
            ids.push(GroupId { agent: group.owner, group: 0 });
            rows.push(Vec::new());
            continue;
        }
        let offset = match kind {
            TriggerKind::Measurement => plant.output_range(group.owner).start,
            TriggerKind::Input => plant.input_range(group.owner).start,
        };
        let mut global = Vec::with_capacity(group.indices.len());
        for &i in &group.indices {
            if i >= sizes[group.owner] {
                report.push(
                    &here,
                    format!("index {i} out of range for agent {} (size {})", group.owner, sizes[group.owner]),
                );
            } else {
                covered[group.owner][i] += 1;
                global.push(offset + i);
            }
        }
        ids.push(GroupId {
            agent: group.owner,
            group: per_agent[group.owner],
        });
        per_agent[group.owner] += 1;
        rows.push(global);
    }
    for (agent, cov) in covered.iter().enumerate() {
        for (i, &c) in cov.iter().enumerate() {
            if c == 0 {
                report.push(path, format!("agent {agent} coordinate {i} belongs to no group"));
            } else if c > 1 {
                report.push(path, format!("agent {agent} coordinate {i} belongs to {c} groups"));
            }
        }
    }
    (groups, ids, rows)
}

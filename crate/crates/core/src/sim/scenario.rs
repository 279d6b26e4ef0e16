//! Scenario files: TOML schema, validation and the resolved [`Scenario`].

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agent::Fault;
use crate::bus::{DropMode, DropModel, ForcedDrop};
use crate::model::{
    validate_model, validate_noise, AugmentedModel, GainSet, InputBlock, LtiPlant, Matrix, NoiseSpec,
    ValidationReport, Vector,
};
use crate::norm::NormOrder;
use crate::trigger::{TriggerGroup, TriggerKind, TriggerLayout};

/// Row-major nested array as written in the file.
pub type RawMatrix = Vec<Vec<f64>>;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub name: String,
    pub plant: Option<PlantSection>,
    pub gains: Option<GainsSection>,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub triggers: TriggersSection,
    #[serde(default)]
    pub bus: BusSection,
    #[serde(default)]
    pub disturbances: Vec<Disturbance>,
    pub run: Option<RunSection>,
    #[serde(default)]
    pub limits: Limits,
    pub lyapunov: Option<LyapunovSection>,
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub baseline: Vec<BaselineSection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    pub a: RawMatrix,
    pub c: RawMatrix,
    pub outputs_per_agent: Vec<usize>,
    pub inputs_per_agent: Vec<usize>,
    #[serde(default = "one")]
    pub sample_time: f64,
    pub input_blocks: Vec<InputBlockSection>,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputBlockSection {
    pub lag: usize,
    pub b: RawMatrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsSection {
    pub l: RawMatrix,
    pub f: RawMatrix,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriggersSection {
    #[serde(default)]
    pub norm: NormOrder,
    /// Threshold for whole-block measurement groups when none are listed.
    #[serde(default)]
    pub measurement_delta: f64,
    /// Threshold for whole-block input groups when none are listed.
    #[serde(default)]
    pub input_delta: f64,
    #[serde(default)]
    pub measurement: Vec<GroupSection>,
    #[serde(default)]
    pub input: Vec<GroupSection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSection {
    pub agent: usize,
    /// Agent-local coordinates.
    pub indices: Vec<usize>,
    pub delta: f64,
    pub norm: Option<NormOrder>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusSection {
    #[serde(default)]
    pub drop_probability: f64,
    #[serde(default)]
    pub mode: DropMode,
    #[serde(default)]
    pub forced: Vec<ForcedDrop>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DisturbanceKind {
    Impulse,
    Step,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DisturbanceTarget {
    /// Added to the actuated input before the plant step.
    Input,
    /// Added to the process disturbance `v`.
    Process,
}

/// Additive disturbance active on the inclusive step window `[start, end]`.
///
/// The value at step `k` enters the transition from `k` to `k + 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Disturbance {
    pub kind: DisturbanceKind,
    pub target: DisturbanceTarget,
    pub start: usize,
    /// Defaults to `start` for impulses.
    pub end: Option<usize>,
    pub magnitude: Vec<f64>,
}

impl Disturbance {
    pub fn end(&self) -> usize {
        self.end.unwrap_or(self.start)
    }

    pub fn active(&self, k: usize) -> bool {
        (self.start..=self.end()).contains(&k)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub horizon: usize,
    #[serde(default)]
    pub seed: u64,
    /// Synchronous averaging period; absent disables resets.
    pub reset_period: Option<usize>,
    pub x0: Vec<f64>,
    /// Initial estimate shared by every agent; defaults to zero.
    pub xhat0: Option<Vec<f64>>,
    /// Per-agent initial estimates; overrides `xhat0`.
    pub xhat0_agents: Option<Vec<Vec<f64>>>,
    /// Defaults to `xhat0`.
    pub xc0: Option<Vec<f64>>,
    #[serde(default = "yes")]
    pub reference: bool,
    #[serde(default = "yes")]
    pub diagnostics: bool,
    /// Any state, estimate or input magnitude beyond this aborts the run.
    #[serde(default = "default_divergence")]
    pub divergence_limit: f64,
    /// Agent pairs for inter-agent error diagnostics; all pairs when absent.
    pub pairs: Option<Vec<[usize; 2]>>,
}

fn yes() -> bool {
    true
}

fn default_divergence() -> f64 {
    1e9
}

/// Declared ceilings for boundedness checks.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Limits {
    pub state_ceiling: Option<f64>,
    pub estimate_error_ceiling: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubsetGranularity {
    /// One switch per measurement trigger group.
    #[default]
    Groups,
    /// One switch per agent, all its sensors together.
    Agents,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovSection {
    pub p_diag: Vec<f64>,
    #[serde(default)]
    pub granularity: SubsetGranularity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub scales: Vec<f64>,
    /// Number of seeds, counted up from `run.seed`.
    pub seeds: usize,
}

/// Periodic baseline with period `period` and its own gains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSection {
    pub period: usize,
    pub l: Option<RawMatrix>,
    pub f: Option<RawMatrix>,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid scenario:\n{0}")]
    Invalid(ValidationReport),
}

/// Fully resolved, validated scenario.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub source: ScenarioFile,
    pub hash: String,
    pub plant: LtiPlant,
    pub gains: GainSet,
    pub noise: NoiseSpec,
    pub layout: TriggerLayout,
    pub drop_model: DropModel,
    pub disturbances: Vec<Disturbance>,
    pub horizon: usize,
    pub seed: u64,
    pub reset_period: Option<usize>,
    pub x0: Vector,
    pub xhat0: Vec<Vector>,
    pub xc0: Vector,
    pub reference: bool,
    pub diagnostics: bool,
    pub divergence_limit: f64,
    pub pairs: Vec<(usize, usize)>,
    pub limits: Limits,
    pub lyapunov: Option<(Matrix, SubsetGranularity)>,
    pub sweep: Option<SweepSection>,
    pub baselines: Vec<(usize, Option<GainSet>)>,
    #[doc(hidden)]
    pub fault: Option<Fault>,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", self.source.name, &self.hash[..12])
    }
}

fn matrix(raw: &RawMatrix, rows_hint: usize, path: &str, report: &mut ValidationReport) -> Matrix {
    let rows = raw.len();
    let cols = raw.first().map_or(0, Vec::len);
    if raw.iter().any(|r| r.len() != cols) {
        report.push(path, "ragged matrix rows");
        return Matrix::zeros(rows.max(rows_hint), 0);
    }
    if rows == 0 {
        return Matrix::zeros(rows_hint, 0);
    }
    Matrix::from_row_iterator(rows, cols, raw.iter().flatten().copied())
}

fn vector_of(raw: &[f64], n: usize, path: &str, report: &mut ValidationReport) -> Vector {
    if raw.len() != n {
        report.push(path, format!("expected {n} entries, got {}", raw.len()));
        return Vector::zeros(n);
    }
    if raw.iter().any(|x| !x.is_finite()) {
        report.push(path, "non-finite entry");
    }
    Vector::from_row_slice(raw)
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))
    }

    /// Canonical TOML rendering; the scenario hash is taken over this text.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("scenario files always serialize")
    }

    /// Multiplies every estimation and control threshold by `factor`.
    pub fn scale_thresholds(&mut self, factor: f64) {
        let t = &mut self.triggers;
        t.measurement_delta *= factor;
        t.input_delta *= factor;
        for g in t.measurement.iter_mut().chain(t.input.iter_mut()) {
            g.delta *= factor;
        }
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        Self::from_file(ScenarioFile::parse(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml(&text)
    }

    pub fn from_file(source: ScenarioFile) -> Result<Self, ScenarioError> {
        let mut report = ValidationReport::default();
        let (Some(plant_raw), Some(gains_raw), Some(run)) = (&source.plant, &source.gains, &source.run) else {
            for (present, path) in [
                (source.plant.is_some(), "plant"),
                (source.gains.is_some(), "gains"),
                (source.run.is_some(), "run"),
            ] {
                if !present {
                    report.push(path, "missing section");
                }
            }
            return Err(ScenarioError::Invalid(report));
        };

        let a = matrix(&plant_raw.a, 0, "plant.a", &mut report);
        let n = a.nrows();
        let plant = LtiPlant {
            c: matrix(&plant_raw.c, 0, "plant.c", &mut report),
            input_blocks: plant_raw
                .input_blocks
                .iter()
                .enumerate()
                .map(|(i, b)| InputBlock {
                    lag: b.lag,
                    b: matrix(&b.b, n, &format!("plant.input_blocks[{i}].b"), &mut report),
                })
                .collect(),
            outputs_per_agent: plant_raw.outputs_per_agent.clone(),
            inputs_per_agent: plant_raw.inputs_per_agent.clone(),
            sample_time: plant_raw.sample_time,
            a,
        };
        let gains = GainSet {
            l: matrix(&gains_raw.l, n, "gains.l", &mut report),
            f: matrix(&gains_raw.f, plant.q(), "gains.f", &mut report),
        };
        report.extend(validate_model(&plant, &gains));
        report.extend(validate_noise(&plant, &source.noise));
        if !report.is_empty() {
            return Err(ScenarioError::Invalid(report));
        }

        let layout = build_layout(&plant, &source.triggers, &mut report);
        let agents = plant.agents();

        let bus = &source.bus;
        if !(0.0..=1.0).contains(&bus.drop_probability) {
            report.push("bus.drop_probability", "must lie in [0, 1]");
        }
        for (i, f) in bus.forced.iter().enumerate() {
            let path = format!("bus.forced[{i}]");
            if f.sender >= agents || f.receiver >= agents {
                report.push(&path, "agent index out of range");
            } else if !layout
                .as_ref()
                .is_some_and(|l| l.measurement_ids.iter().any(|id| id.agent == f.sender && id.group == f.group))
            {
                report.push(&path, format!("agent {} has no measurement group {}", f.sender, f.group));
            }
        }

        if run.horizon == 0 {
            report.push("run.horizon", "must be ≥ 1");
        }
        if run.reset_period == Some(0) {
            report.push("run.reset_period", "must be ≥ 1 when present");
        }
        if !(run.divergence_limit > 0.0) {
            report.push("run.divergence_limit", "must be positive");
        }
        let x0 = vector_of(&run.x0, n, "run.x0", &mut report);
        let shared = match &run.xhat0 {
            Some(v) => vector_of(v, n, "run.xhat0", &mut report),
            None => Vector::zeros(n),
        };
        let xhat0 = match &run.xhat0_agents {
            Some(list) => {
                if list.len() != agents {
                    report.push("run.xhat0_agents", format!("expected {agents} estimates, got {}", list.len()));
                }
                list.iter()
                    .enumerate()
                    .map(|(i, v)| vector_of(v, n, &format!("run.xhat0_agents[{i}]"), &mut report))
                    .collect()
            }
            None => vec![shared.clone(); agents],
        };
        let xc0 = match &run.xc0 {
            Some(v) => vector_of(v, n, "run.xc0", &mut report),
            None => shared,
        };
        let pairs = match &run.pairs {
            Some(list) => {
                for (i, [a, b]) in list.iter().enumerate() {
                    if *a >= agents || *b >= agents || a == b {
                        report.push(format!("run.pairs[{i}]"), "pair must name two distinct agents");
                    }
                }
                list.iter().map(|[a, b]| (*a, *b)).collect()
            }
            None => (0..agents).flat_map(|i| (i + 1..agents).map(move |j| (i, j))).collect(),
        };

        for (i, d) in source.disturbances.iter().enumerate() {
            let path = format!("disturbances[{i}]");
            if d.end() < d.start || d.end() > run.horizon {
                report.push(&path, format!("window [{}, {}] outside [0, {}]", d.start, d.end(), run.horizon));
            }
            let dim = match d.target {
                DisturbanceTarget::Input => plant.q(),
                DisturbanceTarget::Process => n,
            };
            if d.magnitude.len() != dim {
                report.push(&path, format!("magnitude needs {dim} entries, got {}", d.magnitude.len()));
            }
        }

        let model = AugmentedModel::new(&plant);
        let lyapunov = source.lyapunov.as_ref().map(|l| {
            if l.p_diag.len() != model.dim() {
                report.push("lyapunov.p_diag", format!("expected {} entries, got {}", model.dim(), l.p_diag.len()));
            }
            if l.p_diag.iter().any(|p| !(*p > 0.0)) {
                report.push("lyapunov.p_diag", "entries must be positive");
            }
            (Matrix::from_diagonal(&Vector::from_row_slice(&l.p_diag)), l.granularity)
        });

        if let Some(s) = &source.sweep {
            if s.scales.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
                report.push("sweep.scales", "scale factors must be finite and ≥ 0");
            }
        }
        let baselines = source
            .baseline
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let path = format!("baseline[{i}]");
                if b.period == 0 {
                    report.push(&path, "period must be ≥ 1");
                }
                let custom = match (&b.l, &b.f) {
                    (Some(l), Some(f)) => {
                        let g = GainSet {
                            l: matrix(l, n, &format!("{path}.l"), &mut report),
                            f: matrix(f, plant.q(), &format!("{path}.f"), &mut report),
                        };
                        for v in validate_model(&plant, &g).violations {
                            if v.path.starts_with("gains") {
                                report.push(&path, v.message);
                            }
                        }
                        Some(g)
                    }
                    (None, None) if b.period == 1 => None,
                    _ => {
                        report.push(&path, "periods other than 1 need both l and f");
                        None
                    }
                };
                (b.period, custom)
            })
            .collect();

        match layout {
            Some(layout) if report.is_empty() => {
                let hash = hex(&Sha256::digest(source.canonical().as_bytes()));
                Ok(Self {
                    hash,
                    noise: source.noise.clone(),
                    drop_model: DropModel {
                        p_measurement: bus.drop_probability,
                        mode: bus.mode,
                        forced: bus.forced.clone(),
                    },
                    disturbances: source.disturbances.clone(),
                    horizon: run.horizon,
                    seed: run.seed,
                    reset_period: run.reset_period,
                    x0,
                    xhat0,
                    xc0,
                    reference: run.reference,
                    diagnostics: run.diagnostics,
                    divergence_limit: run.divergence_limit,
                    pairs,
                    limits: source.limits.clone(),
                    lyapunov,
                    sweep: source.sweep.clone(),
                    baselines,
                    fault: None,
                    plant,
                    gains,
                    layout,
                    source,
                })
            }
            _ => Err(ScenarioError::Invalid(report)),
        }
    }

    /// Same scenario with a different seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        self.rebuild(|f| {
            if let Some(run) = f.run.as_mut() {
                run.seed = seed;
            }
        })
    }

    /// Same scenario with every threshold multiplied by `factor`.
    pub fn with_threshold_scale(&self, factor: f64) -> Self {
        self.rebuild(|f| f.scale_thresholds(factor))
    }

    /// Applies `edit` to the source and re-validates; panics if the edit breaks validity.
    pub fn rebuild(&self, edit: impl FnOnce(&mut ScenarioFile)) -> Self {
        let mut source = self.source.clone();
        edit(&mut source);
        let mut out = Self::from_file(source).expect("edited scenario must stay valid");
        out.fault = self.fault;
        out
    }

    pub fn model(&self) -> AugmentedModel {
        AugmentedModel::new(&self.plant)
    }

    pub fn agents(&self) -> usize {
        self.plant.agents()
    }

    /// Source text with the hash and seed recorded as a leading comment.
    pub fn echo(&self) -> String {
        format!(
            "# scenario_hash = {}\n# seed = {}\n{}",
            self.hash,
            self.seed,
            self.source.canonical()
        )
    }
}

fn build_layout(plant: &LtiPlant, t: &TriggersSection, report: &mut ValidationReport) -> Option<TriggerLayout> {
    if t.measurement_delta < 0.0 || t.input_delta < 0.0 {
        report.push("triggers", "default thresholds must be ≥ 0");
    }
    let defaults = TriggerLayout::whole_blocks(plant, t.measurement_delta, t.input_delta, t.norm);
    let convert = |list: &[GroupSection], kind, path: &str, report: &mut ValidationReport| {
        list.iter()
            .enumerate()
            .filter_map(|(i, g)| {
                if g.agent >= plant.agents() {
                    report.push(format!("{path}[{i}].agent"), format!("no agent {}", g.agent));
                    return None;
                }
                Some(TriggerGroup {
                    owner: g.agent,
                    kind,
                    indices: g.indices.clone(),
                    delta: g.delta,
                    norm: g.norm.unwrap_or(t.norm),
                })
            })
            .collect::<Vec<_>>()
    };
    let measurement = if t.measurement.is_empty() {
        defaults.measurement.clone()
    } else {
        convert(&t.measurement, TriggerKind::Measurement, "triggers.measurement", report)
    };
    let input = if t.input.is_empty() {
        defaults.input.clone()
    } else {
        convert(&t.input, TriggerKind::Input, "triggers.input", report)
    };
    match TriggerLayout::new(plant, measurement, input) {
        Ok(layout) => Some(layout),
        Err(r) => {
            report.extend(r);
            None
        }
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "mini"
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
[triggers]
measurement_delta = 0.05
[run]
horizon = 10
x0 = [1.0]
"#;

    #[test]
    fn minimal_scenario_resolves_defaults() {
        let s = Scenario::from_toml(MINIMAL).unwrap();
        assert_eq!(s.layout.measurement.len(), 2);
        assert_eq!(s.layout.input.len(), 2);
        assert_eq!(s.layout.measurement[1].delta, 0.05);
        assert_eq!(s.xhat0, vec![Vector::zeros(1); 2]);
        assert_eq!(s.pairs, vec![(0, 1)]);
        assert_eq!(s.reset_period, None);
        assert_eq!(s.hash.len(), 64);
    }

    #[test]
    fn missing_plant_names_the_section() {
        let text = &MINIMAL[MINIMAL.find("[gains]").unwrap()..];
        match Scenario::from_toml(text) {
            Err(ScenarioError::Invalid(r)) => {
                assert_eq!(r.violations[0].path, "plant");
                assert!(r.to_string().contains("plant: missing section"));
            }
            other => panic!("unexpected {other:?}"),
        }
        match Scenario::from_toml(&MINIMAL.replace("[run]", "[runn]")) {
            Err(ScenarioError::Parse(msg)) => assert!(msg.contains("runn"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dimension_errors_carry_paths() {
        let text = MINIMAL.replace("l = [[0.2, 0.2]]", "l = [[0.2, 0.2, 0.1]]");
        match Scenario::from_toml(&text) {
            Err(ScenarioError::Invalid(r)) => assert!(r.violations.iter().any(|v| v.path == "gains.l")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn disturbance_window_must_fit_horizon() {
        let text = format!(
            "{MINIMAL}\n[[disturbances]]\nkind = \"step\"\ntarget = \"process\"\nstart = 5\nend = 11\nmagnitude = [1.0]\n"
        );
        match Scenario::from_toml(&text) {
            Err(ScenarioError::Invalid(r)) => assert_eq!(r.violations[0].path, "disturbances[0]"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn hash_tracks_seed_and_scale() {
        let s = Scenario::from_toml(MINIMAL).unwrap();
        let t = s.with_seed(3);
        assert_eq!(t.seed, 3);
        assert_ne!(s.hash, t.hash);
        let z = s.with_threshold_scale(0.0);
        assert_eq!(z.layout.measurement[0].delta, 0.0);
        assert_eq!(Scenario::from_toml(MINIMAL).unwrap().hash, s.hash);
    }

    #[test]
    fn impulse_defaults_to_single_step() {
        let d = Disturbance {
            kind: DisturbanceKind::Impulse,
            target: DisturbanceTarget::Input,
            start: 4,
            end: None,
            magnitude: vec![1.0],
        };
        assert!(d.active(4));
        assert!(!d.active(5));
    }
}

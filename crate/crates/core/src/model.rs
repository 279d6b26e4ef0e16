//! Partitioned discrete-time plant, noise bounds, gain sets and the spectral
//! primitives shared by every other module.
//!
//! The public plant keeps the compact lagged form
//! `x(k) = A x(k-1) + sum_l B_l u(k-l) + v(k-1)`. Simulation and all observers
//! run on [`AugmentedModel`], which appends delayed-input registers to the
//! state so that every recursion is single-lag.

use std::collections::VecDeque;
use std::fmt;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix has non-finite entries")]
    NonFinite,
    #[error("input history has no entry for lag {0}")]
    MissingLag(usize),
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
}

/// One lagged input term `B_lag u(k - lag)`.
#[derive(Clone, Debug, PartialEq)]
pub struct InputBlock {
    pub lag: usize,
    pub b: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LtiPlant {
    pub a: Matrix,
    pub input_blocks: Vec<InputBlock>,
    pub c: Matrix,
    pub outputs_per_agent: Vec<usize>,
    pub inputs_per_agent: Vec<usize>,
    pub sample_time: f64,
}

impl LtiPlant {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn agents(&self) -> usize {
        self.outputs_per_agent.len()
    }

    pub fn p(&self) -> usize {
        self.outputs_per_agent.iter().sum()
    }

    pub fn q(&self) -> usize {
        self.inputs_per_agent.iter().sum()
    }

    pub fn max_lag(&self) -> usize {
        self.input_blocks.iter().map(|b| b.lag).max().unwrap_or(1)
    }

    pub fn b_for_lag(&self, lag: usize) -> Option<&Matrix> {
        self.input_blocks.iter().find(|b| b.lag == lag).map(|b| &b.b)
    }

    /// Rows of `y` owned by `agent`.
    pub fn output_range(&self, agent: usize) -> Range<usize> {
        block_range(&self.outputs_per_agent, agent)
    }

    /// Entries of `u` owned by `agent`.
    pub fn input_range(&self, agent: usize) -> Range<usize> {
        block_range(&self.inputs_per_agent, agent)
    }

    pub fn c_block(&self, agent: usize) -> Matrix {
        let r = self.output_range(agent);
        self.c.rows(r.start, r.len()).into_owned()
    }
}

fn block_range(sizes: &[usize], index: usize) -> Range<usize> {
    let start: usize = sizes[..index].iter().sum();
    start..start + sizes[index]
}

/// Uniform half-widths for process, sensor and actuator noise.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    #[serde(default)]
    pub process: Vec<f64>,
    #[serde(default)]
    pub sensor: Vec<f64>,
    #[serde(default)]
    pub input: Vec<f64>,
}

/// Centralized observer gain `L` (n x p) and controller gain `F` (q x n).
#[derive(Clone, Debug, PartialEq)]
pub struct GainSet {
    pub l: Matrix,
    pub f: Matrix,
}

impl GainSet {
    pub fn l_block(&self, plant: &LtiPlant, agent: usize) -> Matrix {
        let r = plant.output_range(agent);
        self.l.columns(r.start, r.len()).into_owned()
    }

    pub fn f_block(&self, plant: &LtiPlant, agent: usize) -> Matrix {
        let r = plant.input_range(agent);
        self.f.rows(r.start, r.len()).into_owned()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn push(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation {
            path: path.into(),
            message: message.into(),
        });
    }

    pub fn extend(&mut self, other: ValidationReport) {
        self.violations.extend(other.violations);
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Itemized check of every dimensional invariant of the plant and gains.
pub fn validate_model(plant: &LtiPlant, gains: &GainSet) -> ValidationReport {
    let mut report = ValidationReport::default();
    let n = plant.n();
    if plant.a.ncols() != n {
        report.push("plant.a", format!("A must be square, got {}x{}", n, plant.a.ncols()));
    }
    if plant.outputs_per_agent.len() != plant.inputs_per_agent.len() {
        report.push(
            "plant.inputs_per_agent",
            format!(
                "{} agents declared by outputs_per_agent but {} by inputs_per_agent",
                plant.outputs_per_agent.len(),
                plant.inputs_per_agent.len()
            ),
        );
    }
    if plant.agents() == 0 {
        report.push("plant.outputs_per_agent", "at least one agent required");
    }
    let p = plant.p();
    let q = plant.q();
    if plant.c.nrows() != p {
        report.push("plant.c", format!("Σp_i = {p} ≠ C rows {}", plant.c.nrows()));
    }
    if plant.c.ncols() != n {
        report.push("plant.c", format!("C has {} columns, n = {n}", plant.c.ncols()));
    }
    if plant.input_blocks.is_empty() {
        report.push("plant.input_blocks", "at least one input block required");
    }
    if plant.b_for_lag(1).is_none() {
        report.push("plant.input_blocks", "lag 1 must be present");
    }
    for (i, block) in plant.input_blocks.iter().enumerate() {
        let path = format!("plant.input_blocks[{i}]");
        if block.lag == 0 {
            report.push(&path, "lag must be ≥ 1");
        }
        if plant.input_blocks[..i].iter().any(|b| b.lag == block.lag) {
            report.push(&path, format!("duplicate lag {}", block.lag));
        }
        if block.b.nrows() != n {
            report.push(&path, format!("B has {} rows, n = {n}", block.b.nrows()));
        }
        if block.b.ncols() != q {
            report.push(&path, format!("Σq_i = {q} ≠ B columns {}", block.b.ncols()));
        }
    }
    if gains.l.nrows() != n {
        report.push("gains.l", format!("L has {} rows, n = {n}", gains.l.nrows()));
    }
    if gains.l.ncols() != p {
        report.push("gains.l", format!("Σp_i = {p} ≠ L columns {}", gains.l.ncols()));
    }
    if gains.f.nrows() != q {
        report.push("gains.f", format!("Σq_i = {q} ≠ F rows {}", gains.f.nrows()));
    }
    if gains.f.ncols() != n {
        report.push("gains.f", format!("F has {} columns, n = {n}", gains.f.ncols()));
    }
    if !(plant.sample_time > 0.0 && plant.sample_time.is_finite()) {
        report.push("plant.sample_time", "must be positive and finite");
    }
    let finite = |m: &Matrix| m.iter().all(|x| x.is_finite());
    if !finite(&plant.a) || !finite(&plant.c) || plant.input_blocks.iter().any(|b| !finite(&b.b)) {
        report.push("plant", "non-finite matrix entry");
    }
    if !finite(&gains.l) || !finite(&gains.f) {
        report.push("gains", "non-finite matrix entry");
    }
    report
}

/// Checks half-widths against the plant dimensions.
pub fn validate_noise(plant: &LtiPlant, noise: &NoiseSpec) -> ValidationReport {
    let mut report = ValidationReport::default();
    for (name, widths, dim) in [
        ("noise.process", &noise.process, plant.n()),
        ("noise.sensor", &noise.sensor, plant.p()),
        ("noise.input", &noise.input, plant.q()),
    ] {
        if !widths.is_empty() && widths.len() != dim {
            report.push(name, format!("expected {dim} half-widths, got {}", widths.len()));
        }
        if widths.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            report.push(name, "half-widths must be finite and ≥ 0");
        }
    }
    report
}

/// Largest eigenvalue magnitude, from the real Schur form.
pub fn spectral_radius(m: &Matrix) -> Result<f64, ModelError> {
    if m.nrows() != m.ncols() {
        return Err(ModelError::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(ModelError::NonFinite);
    }
    if m.is_empty() {
        return Ok(0.0);
    }
    let eig = m.complex_eigenvalues();
    Ok(eig.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AssumptionReport {
    /// `(I - LC)A` stable.
    pub a1: bool,
    /// `A + BF` stable on the lag-augmented state.
    pub a2: bool,
    pub rho_est: f64,
    pub rho_ctrl: f64,
}

pub fn check_assumptions(plant: &LtiPlant, gains: &GainSet) -> Result<AssumptionReport, ModelError> {
    let model = AugmentedModel::new(plant);
    let rho_est = spectral_radius(&model.estimator_error_matrix(&gains.l))?;
    let rho_ctrl = spectral_radius(&model.closed_loop_matrix(&gains.f))?;
    Ok(AssumptionReport {
        a1: rho_est < 1.0,
        a2: rho_ctrl < 1.0,
        rho_est,
        rho_ctrl,
    })
}

/// Recent inputs, most recent first: `get(1) = u(k-1)`, `get(2) = u(k-2)`, ...
#[derive(Clone, Debug, Default, PartialEq)]
pub struct InputHistory {
    entries: VecDeque<Vector>,
}

impl InputHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn zeros(q: usize, depth: usize) -> Self {
        Self {
            entries: (0..depth).map(|_| Vector::zeros(q)).collect(),
        }
    }

    /// Records `u(k)`; it becomes lag 1 for the next step.
    pub fn push(&mut self, u: Vector) {
        self.entries.push_front(u);
    }

    pub fn truncate(&mut self, depth: usize) {
        self.entries.truncate(depth);
    }

    pub fn get(&self, lag: usize) -> Option<&Vector> {
        lag.checked_sub(1).and_then(|i| self.entries.get(i))
    }
}

/// `x(k) = A x(k-1) + sum_l B_l u(k-l) + v(k-1)`.
pub fn plant_step(
    plant: &LtiPlant,
    x: &Vector,
    history: &InputHistory,
    v: &Vector,
) -> Result<Vector, ModelError> {
    check_len("state", plant.n(), x.len())?;
    check_len("process noise", plant.n(), v.len())?;
    let mut next = &plant.a * x + v;
    for block in &plant.input_blocks {
        let u = history.get(block.lag).ok_or(ModelError::MissingLag(block.lag))?;
        check_len("input", plant.q(), u.len())?;
        next += &block.b * u;
    }
    Ok(next)
}

/// `y_i(k) = C_i x(k) + w_i(k)` for every agent.
pub fn measure(plant: &LtiPlant, x: &Vector, w: &Vector) -> Result<Vec<Vector>, ModelError> {
    check_len("state", plant.n(), x.len())?;
    check_len("sensor noise", plant.p(), w.len())?;
    let y = &plant.c * x + w;
    Ok((0..plant.agents())
        .map(|i| {
            let r = plant.output_range(i);
            y.rows(r.start, r.len()).into_owned()
        })
        .collect())
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), ModelError> {
    if expected == got {
        Ok(())
    } else {
        Err(ModelError::Dimension { what, expected, got })
    }
}

/// Single-lag realization of a lagged plant.
///
/// State layout: `z = (x, u(k-1), ..., u(k-m+1))` with `m` the largest lag, so
/// `z(k) = A_a z(k-1) + B_a u(k-1) + E v(k-1)` and `y = C_a z`.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedModel {
    pub n: usize,
    pub q: usize,
    pub registers: usize,
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
}

impl AugmentedModel {
    pub fn new(plant: &LtiPlant) -> Self {
        let n = plant.n();
        let q = plant.q();
        let registers = plant.max_lag().saturating_sub(1);
        let dim = n + q * registers;
        let mut a = Matrix::zeros(dim, dim);
        let mut b = Matrix::zeros(dim, q);
        a.view_mut((0, 0), (n, n)).copy_from(&plant.a);
        for block in &plant.input_blocks {
            if block.lag == 1 {
                b.view_mut((0, 0), (n, q)).copy_from(&block.b);
            } else {
                // u(k-lag) sits in register lag-1 of z(k-1)
                let col = n + q * (block.lag - 2);
                a.view_mut((0, col), (n, q)).copy_from(&block.b);
            }
        }
        if registers > 0 {
            b.view_mut((n, 0), (q, q)).fill_with_identity();
            for r in 1..registers {
                a.view_mut((n + q * r, n + q * (r - 1)), (q, q))
                    .fill_with_identity();
            }
        }
        let mut c = Matrix::zeros(plant.p(), dim);
        c.view_mut((0, 0), (plant.p(), n)).copy_from(&plant.c);
        Self {
            n,
            q,
            registers,
            a,
            b,
            c,
        }
    }

    pub fn dim(&self) -> usize {
        self.n + self.q * self.registers
    }

    /// Builds `z` from a physical state and an input history.
    pub fn lift_state(&self, x: &Vector, history: &InputHistory) -> Result<Vector, ModelError> {
        check_len("state", self.n, x.len())?;
        let mut z = Vector::zeros(self.dim());
        z.rows_mut(0, self.n).copy_from(x);
        for r in 0..self.registers {
            let u = history.get(r + 1).ok_or(ModelError::MissingLag(r + 1))?;
            check_len("input", self.q, u.len())?;
            z.rows_mut(self.n + self.q * r, self.q).copy_from(u);
        }
        Ok(z)
    }

    /// Physical part `x` of an augmented vector.
    pub fn physical(&self, z: &Vector) -> Vector {
        z.rows(0, self.n).into_owned()
    }

    /// Pads an n-vector with zero registers.
    pub fn lift_disturbance(&self, v: &Vector) -> Vector {
        let mut z = Vector::zeros(self.dim());
        z.rows_mut(0, self.n).copy_from(v);
        z
    }

    /// `[L; 0]`: registers are never corrected.
    pub fn lift_observer_gain(&self, l: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(self.dim(), l.ncols());
        out.view_mut((0, 0), (self.n, l.ncols())).copy_from(l);
        out
    }

    /// `[F, 0]`: control acts on the physical estimate only.
    pub fn lift_controller_gain(&self, f: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(f.nrows(), self.dim());
        out.view_mut((0, 0), (f.nrows(), self.n)).copy_from(f);
        out
    }

    pub fn step(&self, z: &Vector, u: &Vector, v: &Vector) -> Vector {
        &self.a * z + &self.b * u + self.lift_disturbance(v)
    }

    /// `(I - L_a C_a) A_a`.
    pub fn estimator_error_matrix(&self, l: &Matrix) -> Matrix {
        let la = self.lift_observer_gain(l);
        (Matrix::identity(self.dim(), self.dim()) - la * &self.c) * &self.a
    }

    /// `A_a + B_a [F, 0]`.
    pub fn closed_loop_matrix(&self, f: &Matrix) -> Matrix {
        &self.a + &self.b * self.lift_controller_gain(f)
    }
}

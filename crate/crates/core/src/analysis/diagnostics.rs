//! Error decompositions derived from a simulation trace.
//!
//! With `x` the true state, `x̂_c` the reference estimate and `x̂_i` agent
//! estimates: `ε_i = x - x̂_i`, `e_i = x̂_c - x̂_i`, `x̄ = mean_i x̂_i`,
//! `ē = x̂_c - x̄`, `ē_i = x̄ - x̂_i`, `e_ij = x̂_i - x̂_j`, `ũ = u - û`.

use super::AnalysisError;
use crate::model::{Matrix, Vector};
use crate::sim::scenario::Scenario;
use crate::sim::trace::SimTrace;

/// Tolerance for the algebraic identities.
pub const IDENTITY_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct ResetCheck {
    /// `ē` just before averaging.
    pub e_bar_pre: Vector,
    /// `ē` just after averaging.
    pub e_bar_post: Vector,
    /// `max_{i,j} ‖e_ij‖_∞` after averaging.
    pub max_pair_post: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiagnosticsStep {
    pub k: usize,
    pub eps_c: Vector,
    pub eps: Vec<Vector>,
    pub e: Vec<Vector>,
    pub x_bar: Vector,
    pub e_bar: Vector,
    pub e_bar_i: Vec<Vector>,
    /// One entry per requested pair.
    pub e_pairs: Vec<Vector>,
    pub u_tilde: Vector,
    /// Loss disturbance as the gap between the realized update and the full-set update.
    pub d_gap: Vec<Vector>,
    /// Loss disturbance rebuilt from the dropped groups' innovations.
    pub d_formula: Vec<Vector>,
    /// `mean_i d_i`.
    pub d_bar: Vector,
    /// Largest residual of the two decomposition identities.
    pub identity_residual: f64,
    pub reset: Option<ResetCheck>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiagnosticsTrace {
    pub pairs: Vec<(usize, usize)>,
    pub steps: Vec<DiagnosticsStep>,
}

impl DiagnosticsTrace {
    pub fn max_identity_residual(&self) -> f64 {
        self.steps.iter().map(|s| s.identity_residual).fold(0.0, f64::max)
    }

    /// `max_k ‖e_pair(k)‖_∞` for the pair at position `index`.
    pub fn max_pair(&self, index: usize) -> f64 {
        self.steps.iter().map(|s| s.e_pairs[index].amax()).fold(0.0, f64::max)
    }

    pub fn pair_index(&self, i: usize, j: usize) -> Option<usize> {
        self.pairs.iter().position(|&p| p == (i, j) || p == (j, i))
    }

    /// `max_k max_i ‖e_i(k)‖` in the given norm.
    pub fn max_e(&self, norm: crate::norm::NormOrder) -> f64 {
        self.steps
            .iter()
            .flat_map(|s| s.e.iter())
            .map(|e| norm.dvector(e))
            .fold(0.0, f64::max)
    }

    /// Largest disagreement between the two loss-disturbance routes.
    pub fn max_d_route_gap(&self) -> f64 {
        self.steps
            .iter()
            .flat_map(|s| s.d_gap.iter().zip(&s.d_formula))
            .map(|(a, b)| (a - b).amax())
            .fold(0.0, f64::max)
    }

    pub fn resets(&self) -> impl Iterator<Item = (usize, &ResetCheck)> {
        self.steps.iter().filter_map(|s| s.reset.as_ref().map(|r| (s.k, r)))
    }
}

fn mean(vs: &[Vector], n: usize) -> Vector {
    let mut sum = Vector::zeros(n);
    for v in vs {
        sum += v;
    }
    if vs.is_empty() {
        sum
    } else {
        sum / vs.len() as f64
    }
}

pub fn diagnostics_from_trace(trace: &SimTrace, scenario: &Scenario) -> Result<DiagnosticsTrace, AnalysisError> {
    let layout = &scenario.layout;
    let n = trace.meta.n;
    let agents = trace.meta.agents;
    let l_groups: Vec<Matrix> = layout
        .measurement_rows
        .iter()
        .map(|rows| scenario.gains.l.select_columns(rows))
        .collect();
    let c_groups: Vec<Matrix> = layout
        .measurement_rows
        .iter()
        .map(|rows| scenario.plant.c.select_rows(rows))
        .collect();
    let correction = |g: usize, y: &Vector, prior: &Vector| -> Vector {
        let y_g = Vector::from_iterator(layout.measurement_rows[g].len(), layout.measurement_rows[g].iter().map(|&r| y[r]));
        &l_groups[g] * (y_g - &c_groups[g] * prior)
    };

    let mut steps = Vec::with_capacity(trace.records.len());
    for r in &trace.records {
        let xc = r.xc.as_ref().ok_or(AnalysisError::MissingReference)?;
        let eps_c = r.eps_c.clone().ok_or(AnalysisError::MissingReference)?;
        let eps: Vec<Vector> = r.x_post.iter().map(|xi| &r.x - xi).collect();
        let e: Vec<Vector> = r.x_post.iter().map(|xi| xc - xi).collect();
        let x_bar = mean(&r.x_post, n);
        let e_bar = xc - &x_bar;
        let e_bar_i: Vec<Vector> = r.x_post.iter().map(|xi| &x_bar - xi).collect();
        let e_pairs = scenario.pairs.iter().map(|&(i, j)| &r.x_post[i] - &r.x_post[j]).collect();

        let mut residual = 0.0_f64;
        for i in 0..agents {
            residual = residual.max((&e[i] - (&e_bar + &e_bar_i[i])).amax());
            residual = residual.max((&eps[i] - (&eps_c + &e[i])).amax());
        }

        let mut d_gap = Vec::with_capacity(agents);
        let mut d_formula = Vec::with_capacity(agents);
        for i in 0..agents {
            let prior = &r.x_pred[i];
            let mut full = prior.clone();
            let mut lost = Vector::zeros(n);
            for (g, _) in r.measurement_fired.iter().enumerate().filter(|(_, f)| **f) {
                let corr = correction(g, &r.y, prior);
                let dropped = r
                    .deliveries
                    .iter()
                    .find(|d| {
                        d.message.kind == crate::bus::MessageKind::Measurement
                            && layout.measurement_ids[g].agent == d.message.sender
                            && layout.measurement_ids[g].group == d.message.group
                    })
                    .is_some_and(|d| d.dropped_at.contains(&i));
                if dropped {
                    lost -= &corr;
                }
                full += corr;
            }
            d_gap.push(&r.x_pre_reset[i] - full);
            d_formula.push(lost);
        }
        let d_bar = mean(&d_gap, n);

        let reset = r.reset.then(|| {
            let pre_bar = mean(&r.x_pre_reset, n);
            let mut max_pair_post = 0.0_f64;
            for i in 0..agents {
                for j in i + 1..agents {
                    max_pair_post = max_pair_post.max((&r.x_post[i] - &r.x_post[j]).amax());
                }
            }
            ResetCheck {
                e_bar_pre: xc - pre_bar,
                e_bar_post: e_bar.clone(),
                max_pair_post,
            }
        });

        steps.push(DiagnosticsStep {
            k: r.k,
            eps_c,
            eps,
            e,
            x_bar,
            e_bar,
            e_bar_i,
            e_pairs,
            u_tilde: &r.u - &r.u_hat,
            d_gap,
            d_formula,
            d_bar,
            identity_residual: residual,
            reset,
        });
    }
    Ok(DiagnosticsTrace {
        pairs: scenario.pairs.clone(),
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bus::ForcedDrop;
    use crate::sim::runner::run_scenario;

    const TWO_STATE: &str = r#"
[plant]
a = [[0.9, 0.1], [0.0, 0.8]]
c = [[1.0, 0.0], [0.0, 1.0]]
outputs_per_agent = [1, 1]
inputs_per_agent = [1, 0]
[[plant.input_blocks]]
lag = 1
b = [[0.0], [1.0]]
[gains]
l = [[0.5, 0.0], [0.0, 0.4]]
f = [[-0.1, -0.3]]
[noise]
process = [0.01, 0.01]
sensor = [0.02, 0.02]
[run]
horizon = 60
seed = 2
x0 = [1.0, -1.0]
"#;

    #[test]
    fn perfect_communication_has_no_inter_agent_error() {
        let s = Scenario::from_toml(TWO_STATE).unwrap();
        let out = run_scenario(&s).unwrap();
        let diag = out.diagnostics.unwrap();
        assert_eq!(diag.max_pair(0), 0.0);
        assert!(diag.max_identity_residual() <= IDENTITY_TOL);
    }

    #[test]
    fn forced_drop_matches_innovation_formula() {
        let mut s = Scenario::from_toml(TWO_STATE).unwrap();
        s = s.rebuild(|f| {
            f.bus.forced.push(ForcedDrop {
                k: 20,
                sender: 0,
                group: 0,
                receiver: 1,
            })
        });
        let out = run_scenario(&s).unwrap();
        let diag = out.diagnostics.unwrap();
        let step = &diag.steps[19];
        assert_eq!(step.k, 20);
        let r = &out.trace.records[19];
        // Independent recomputation: agent 1 missed y_0 with gain column 0 of L.
        let innovation = r.y[0] - r.x_pred[1][0];
        let expected = Vector::from_row_slice(&[-0.5 * innovation, 0.0]);
        assert!((&step.d_formula[1] - &expected).amax() < 1e-12);
        assert!((&step.d_gap[1] - &expected).amax() < 1e-12);
        assert_eq!(step.d_formula[0], Vector::zeros(2));
        assert!(step.e_pairs[0].amax() > 0.0);
        assert!(diag.max_d_route_gap() < 1e-12);
        assert!(diag.max_identity_residual() <= IDENTITY_TOL);
    }
}

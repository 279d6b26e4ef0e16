//! Self-check suite behind the `verify` command.
//!
//! Every check runs to completion; a failing check never stops the others.

use std::fmt;

use crate::agent::Fault;
use crate::analysis::bounds::{lemma1_check, theorem1_bound};
use crate::analysis::diagnostics::{diagnostics_from_trace, IDENTITY_TOL};
use crate::analysis::envelope::fit_decay_envelope;
use crate::analysis::lyapunov::{common_lyapunov_check, p_norm, switch_sets};
use crate::bus::ForcedDrop;
use crate::model::{Matrix, Vector};
use crate::norm::NormOrder;
use crate::shipped;
use crate::sim::metrics::compute_metrics;
use crate::sim::runner::{run_scenario, run_trace};
use crate::sim::scenario::{Scenario, ScenarioFile};
use crate::sim::trace::trace_csv_string;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct VerifyOptions {
    #[doc(hidden)]
    pub fault: Option<Fault>,
}

fn with_fault(mut s: Scenario, fault: Option<Fault>) -> Scenario {
    s.fault = fault;
    s
}

fn check(name: &'static str, outcome: Result<String, String>) -> CheckResult {
    match outcome {
        Ok(detail) => CheckResult {
            name,
            passed: true,
            detail,
        },
        Err(detail) => CheckResult {
            name,
            passed: false,
            detail,
        },
    }
}

fn shorten(s: &Scenario, horizon: usize) -> Scenario {
    s.rebuild(|f| {
        let run = f.run.as_mut().expect("validated scenario has a run section");
        run.horizon = horizon.min(run.horizon);
        f.disturbances.retain(|d| d.end.unwrap_or(d.start) <= run.horizon);
    })
}

pub fn run_verification(options: VerifyOptions) -> VerifyReport {
    let fault = options.fault;
    let suite: Vec<Scenario> = shipped::all().into_iter().map(|s| with_fault(s, fault)).collect();
    let find = |name: &str| {
        suite
            .iter()
            .find(|s| s.source.name == name)
            .cloned()
            .expect("bundled scenario present")
    };
    let checks = vec![
        check("envelope-soundness", envelope_soundness(&suite)),
        check("full-communication", full_communication(&find("thermofluid"))),
        check("estimation-bound", estimation_bound(&find("scalar"))),
        check("input-estimate-error", input_estimate_error(&suite)),
        check("reset-identities", reset_identities(&find("cube"))),
        check("lyapunov-decay", lyapunov_decay(&find("thermofluid"))),
        check("determinism", determinism(&suite)),
    ];
    VerifyReport { checks }
}

fn envelope_soundness(suite: &[Scenario]) -> Result<String, String> {
    let mut matrices: Vec<(String, Matrix)> = suite
        .iter()
        .map(|s| (s.source.name.clone(), s.model().estimator_error_matrix(&s.gains.l)))
        .collect();
    matrices.push(("jordan".into(), Matrix::from_row_slice(2, 2, &[0.9, 1.0, 0.0, 0.9])));
    let mut notes = Vec::new();
    for (name, m) in &matrices {
        for norm in [NormOrder::One, NormOrder::Two, NormOrder::Inf] {
            let e = fit_decay_envelope(m, norm).map_err(|e| format!("{name}: {e}"))?;
            if let Some(k) = e.first_violation(m) {
                return Err(format!("{name} ({}) violated at k = {k}", norm.label()));
            }
            if norm == NormOrder::Inf {
                notes.push(format!("{name} c={:.3} rho={:.4}", e.c, e.rho));
            }
        }
    }
    Ok(notes.join(", "))
}

/// Zero thresholds on a noiseless plant at rest: every group must fire every
/// step, and on a noisy plant the agents must track the reference.
fn full_communication(base: &Scenario) -> Result<String, String> {
    let quiet = base.with_threshold_scale(0.0).rebuild(|f| {
        zero_comm_edit(f);
        f.noise = Default::default();
        f.disturbances.clear();
        let run = f.run.as_mut().expect("run section");
        run.x0 = vec![0.0; run.x0.len()];
    });
    let trace = run_trace(&quiet).map_err(|e| e.to_string())?;
    let c = compute_metrics(&trace).c_norm;
    if c != 1.0 {
        return Err(format!("noiseless zero-threshold run communicated C = {c}, expected 1"));
    }
    let noisy = base.with_threshold_scale(0.0).rebuild(zero_comm_edit);
    let trace = run_trace(&noisy).map_err(|e| e.to_string())?;
    let mut worst = 0.0_f64;
    for r in &trace.records {
        let xc = r.xc.as_ref().ok_or("reference disabled")?;
        for x in &r.x_post {
            worst = worst.max((x - xc).amax());
        }
    }
    if worst > 1e-9 {
        return Err(format!("max |x_i - x_c| = {worst:e} > 1e-9"));
    }
    Ok(format!("C = 1, max |x_i - x_c| = {worst:e}"))
}

fn zero_comm_edit(f: &mut ScenarioFile) {
    f.bus.drop_probability = 0.0;
    f.bus.forced.clear();
    let run = f.run.as_mut().expect("run section");
    run.horizon = run.horizon.min(1000);
    run.reference = true;
    f.disturbances.retain(|d| d.end.unwrap_or(d.start) <= 1000);
}

fn estimation_bound(scalar: &Scenario) -> Result<String, String> {
    let model = scalar.model();
    let m = model.estimator_error_matrix(&scalar.gains.l);
    let env = fit_decay_envelope(&m, NormOrder::Inf).map_err(|e| e.to_string())?;
    let deltas: Vec<f64> = scalar.layout.measurement.iter().map(|g| g.delta).collect();
    let bound = theorem1_bound(&env, &scalar.gains.l, &deltas, 0.0);
    let base = shorten(scalar, 2000);
    let mut worst = 0.0_f64;
    for seed in 0..20 {
        let s = base.with_seed(seed);
        let out = run_scenario(&s).map_err(|e| e.to_string())?;
        let diag = out.diagnostics.ok_or("diagnostics disabled")?;
        worst = worst.max(diag.max_e(NormOrder::Inf));
    }
    if worst <= bound {
        Ok(format!("sup |e_i| = {worst:.5} <= bound {bound:.5}"))
    } else {
        Err(format!("sup |e_i| = {worst:.5} > bound {bound:.5}"))
    }
}

fn input_estimate_error(suite: &[Scenario]) -> Result<String, String> {
    let mut notes = Vec::new();
    for s in suite {
        let trace = run_trace(&shorten(s, 3000)).map_err(|e| format!("{}: {e}", s.source.name))?;
        let bound = s.layout.max_input_delta();
        let r = lemma1_check(&trace, bound);
        if !r.passed {
            return Err(format!("{}: |u - û| = {:e} > {bound} at k = {}", s.source.name, r.max_error, r.worst_step));
        }
        notes.push(format!("{} ratio {:.3}", s.source.name, r.max_ratio));
    }
    Ok(notes.join(", "))
}

fn reset_identities(cube: &Scenario) -> Result<String, String> {
    let s = shorten(cube, 1000);
    let trace = run_trace(&s).map_err(|e| e.to_string())?;
    let diag = diagnostics_from_trace(&trace, &s).map_err(|e| e.to_string())?;
    let mut count = 0;
    for (k, r) in diag.resets() {
        count += 1;
        if r.max_pair_post != 0.0 {
            return Err(format!("k = {k}: inter-agent error {:e} after reset", r.max_pair_post));
        }
        let drift = (&r.e_bar_post - &r.e_bar_pre).amax();
        if drift > 1e-12 {
            return Err(format!("k = {k}: average error moved by {drift:e}"));
        }
    }
    if count == 0 {
        return Err("no reset steps in the horizon".into());
    }
    if diag.max_identity_residual() > IDENTITY_TOL {
        return Err(format!("decomposition residual {:e}", diag.max_identity_residual()));
    }
    Ok(format!("{count} resets exact"))
}

/// Certificate on the bundled model plus the P-norm decay after one forced loss.
pub fn lyapunov_decay_trace(base: &Scenario, steps: usize) -> Result<(f64, Vec<f64>), String> {
    let (p, granularity) = base.lyapunov.clone().ok_or("scenario has no [lyapunov] section")?;
    let cert = common_lyapunov_check(&base.plant, &base.gains, &p, &switch_sets(&base.plant, &base.layout, granularity))
        .map_err(|e| e.to_string())?;
    if !cert.valid() {
        return Err(format!("certificate margin {:e} not positive", cert.margin));
    }
    let lossless = base.rebuild(|f| {
        f.bus.drop_probability = 0.0;
        f.bus.forced.clear();
    });
    let probe = run_trace(&lossless).map_err(|e| e.to_string())?;
    let sender_group = lossless.layout.measurement_ids[0];
    let k0 = probe
        .records
        .iter()
        .find(|r| r.k >= 100 && r.measurement_fired[0])
        .map(|r| r.k)
        .ok_or("first measurement group never fires")?;
    let receiver = (sender_group.agent + 1) % lossless.agents();
    let forced = lossless.rebuild(|f| {
        f.bus.forced.push(ForcedDrop {
            k: k0,
            sender: sender_group.agent,
            group: sender_group.group,
            receiver,
        });
    });
    let trace = run_trace(&forced).map_err(|e| e.to_string())?;
    let p_phys = p.view((0, 0), (base.plant.n(), base.plant.n())).into_owned();
    let norms: Vec<f64> = trace.records[k0 - 1..(k0 - 1 + steps + 1).min(trace.records.len())]
        .iter()
        .map(|r| {
            let e: Vector = &r.x_post[sender_group.agent] - &r.x_post[receiver];
            p_norm(&p_phys, &e)
        })
        .collect();
    Ok((cert.margin, norms))
}

fn lyapunov_decay(thermo: &Scenario) -> Result<String, String> {
    let (margin, norms) = lyapunov_decay_trace(thermo, 50)?;
    if norms.first().is_none_or(|v| *v <= 0.0) {
        return Err("forced drop produced no inter-agent error".into());
    }
    if let Some(i) = norms.windows(2).position(|w| !(w[1] < w[0])) {
        return Err(format!("P-norm rose at step {} after the drop", i + 1));
    }
    Ok(format!(
        "margin {margin:.3e}, P-norm {:.3e} -> {:.3e} over {} steps",
        norms[0],
        norms[norms.len() - 1],
        norms.len() - 1
    ))
}

fn determinism(suite: &[Scenario]) -> Result<String, String> {
    for s in suite {
        let s = shorten(s, 1500);
        let a = run_trace(&s).map_err(|e| e.to_string())?;
        let b = run_trace(&s).map_err(|e| e.to_string())?;
        if trace_csv_string(&a) != trace_csv_string(&b) {
            return Err(format!("{} traces differ", s.source.name));
        }
    }
    Ok("identical traces".into())
}

//! Error-versus-communication sweeps over threshold scale factors.

use std::io::{self, Write};

use rayon::prelude::*;

use super::AnalysisError;
use crate::sim::metrics::compute_metrics;
use crate::sim::runner::run_trace;
use crate::sim::scenario::Scenario;
use crate::sim::trace::fmt_f64;

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub scale: f64,
    pub e_mean: f64,
    /// Sample standard deviation of per-run `E`.
    pub e_std: f64,
    pub c_mean: f64,
    pub c_std: f64,
    pub runs: usize,
    pub failed_runs: usize,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    (m, var.sqrt())
}

/// Runs every `(scale, seed)` pair; runs execute on the current rayon pool.
///
/// A diverging run is counted in `failed_runs` and left out of the statistics.
pub fn tradeoff_sweep(base: &Scenario, scales: &[f64], seeds: &[u64]) -> Result<Vec<SweepRow>, AnalysisError> {
    if scales.is_empty() || seeds.is_empty() {
        return Err(AnalysisError::EmptyGrid);
    }
    let base = base.rebuild(|f| {
        if let Some(run) = f.run.as_mut() {
            run.diagnostics = false;
        }
    });
    let jobs: Vec<(usize, u64)> = (0..scales.len()).flat_map(|i| seeds.iter().map(move |&s| (i, s))).collect();
    let results: Vec<(usize, Option<(f64, f64)>)> = jobs
        .par_iter()
        .map(|&(i, seed)| {
            let scenario = base.with_threshold_scale(scales[i]).with_seed(seed);
            let outcome = run_trace(&scenario).ok().map(|t| {
                let m = compute_metrics(&t);
                (m.e_norm, m.c_norm)
            });
            (i, outcome)
        })
        .collect();
    Ok(scales
        .iter()
        .enumerate()
        .map(|(i, &scale)| {
            let ok: Vec<(f64, f64)> = results.iter().filter(|(j, _)| *j == i).filter_map(|(_, r)| *r).collect();
            let es: Vec<f64> = ok.iter().map(|r| r.0).collect();
            let cs: Vec<f64> = ok.iter().map(|r| r.1).collect();
            let (e_mean, e_std) = mean_std(&es);
            let (c_mean, c_std) = mean_std(&cs);
            SweepRow {
                scale,
                e_mean,
                e_std,
                c_mean,
                c_std,
                runs: seeds.len(),
                failed_runs: seeds.len() - ok.len(),
            }
        })
        .collect())
}

pub fn write_sweep_csv(rows: &[SweepRow], mut out: impl Write) -> io::Result<()> {
    writeln!(out, "scale,E_mean,E_std,C_mean,C_std,runs,failed_runs")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            fmt_f64(r.scale),
            fmt_f64(r.e_mean),
            fmt_f64(r.e_std),
            fmt_f64(r.c_mean),
            fmt_f64(r.c_std),
            r.runs,
            r.failed_runs
        )?;
    }
    Ok(())
}

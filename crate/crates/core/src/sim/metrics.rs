//! Normalized error and communication metrics.

use std::io::{self, Write};

use super::trace::{fmt_f64, SimTrace};
use crate::bus::MessageKind;

/// Moving-average window for communication rates.
pub const RATE_WINDOW: usize = 100;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Metrics {
    pub steps: usize,
    /// Mean of `ε_iᵀ ε_i` over steps and agents.
    pub e_norm: f64,
    /// Transmitted scalars over the full periodic count `steps (p + q)`.
    pub c_norm: f64,
    pub measurement_scalars: usize,
    pub input_scalars: usize,
    pub reset_scalars: usize,
    pub resets: usize,
    pub measurement_messages: usize,
    pub input_messages: usize,
    pub remote_receptions: usize,
    pub dropped_receptions: usize,
    pub drop_rate: f64,
    /// `max_k ‖x(k)‖_∞`.
    pub max_state: f64,
    /// `max_k max_i ‖x(k) - x̂_i(k)‖_∞`.
    pub max_estimation_error: f64,
    /// `max_k max_{i,j} ‖x̂_i(k) - x̂_j(k)‖_∞`.
    pub max_inter_agent: f64,
}

pub fn compute_metrics(trace: &SimTrace) -> Metrics {
    let meta = &trace.meta;
    let mut m = Metrics {
        steps: trace.records.len(),
        ..Metrics::default()
    };
    let mut err_sum = 0.0;
    for r in &trace.records {
        for (g, &fired) in r.measurement_fired.iter().enumerate() {
            if fired {
                m.measurement_scalars += meta.measurement_sizes[g];
                m.measurement_messages += 1;
            }
        }
        for (g, &fired) in r.input_fired.iter().enumerate() {
            if fired {
                m.input_scalars += meta.input_sizes[g];
                m.input_messages += 1;
            }
        }
        if r.reset {
            m.resets += 1;
            m.reset_scalars += meta.reset_scalars;
        }
        m.max_state = m.max_state.max(r.x.amax());
        for (i, xi) in r.x_post.iter().enumerate() {
            let eps = &r.x - xi;
            err_sum += eps.dot(&eps);
            m.max_estimation_error = m.max_estimation_error.max(eps.amax());
            for xj in &r.x_post[i + 1..] {
                m.max_inter_agent = m.max_inter_agent.max((xi - xj).amax());
            }
        }
    }
    for d in trace.records.iter().flat_map(|r| &r.deliveries) {
        if d.message.kind == MessageKind::Measurement {
            m.remote_receptions += d.delivered_to.len() + d.dropped_at.len() - 1;
            m.dropped_receptions += d.dropped_at.len();
        }
    }
    if m.steps > 0 {
        m.e_norm = err_sum / (m.steps * meta.agents.max(1)) as f64;
        let full = m.steps * (meta.p + meta.q);
        if full > 0 {
            m.c_norm = (m.measurement_scalars + m.input_scalars + m.reset_scalars) as f64 / full as f64;
        }
    }
    if m.remote_receptions > 0 {
        m.drop_rate = m.dropped_receptions as f64 / m.remote_receptions as f64;
    }
    m
}

/// Fraction of measurement group slots that fired over steps with `in_window(k)`.
pub fn measurement_rate(trace: &SimTrace, in_window: impl Fn(usize) -> bool) -> f64 {
    let (mut fired, mut slots) = (0usize, 0usize);
    for r in trace.records.iter().filter(|r| in_window(r.k)) {
        fired += r.measurement_fired.iter().filter(|&&f| f).count();
        slots += r.measurement_fired.len();
    }
    if slots == 0 {
        0.0
    } else {
        fired as f64 / slots as f64
    }
}

/// Trailing moving average of each group's firing indicator.
///
/// Column order matches the trigger columns of the trace CSV.
pub fn moving_average_rates(trace: &SimTrace, window: usize) -> (Vec<String>, Vec<Vec<f64>>) {
    let meta = &trace.meta;
    let mut labels: Vec<String> = meta
        .measurement_groups
        .iter()
        .map(|id| format!("rate_y_{}_{}", id.agent, id.group))
        .collect();
    labels.extend(meta.input_groups.iter().map(|id| format!("rate_u_{}_{}", id.agent, id.group)));
    let width = labels.len();
    let window = window.max(1);
    let mut sums = vec![0usize; width];
    let mut rows = Vec::with_capacity(trace.records.len());
    let flags = |idx: usize| -> Vec<bool> {
        let r = &trace.records[idx];
        r.measurement_fired.iter().chain(&r.input_fired).copied().collect()
    };
    for idx in 0..trace.records.len() {
        for (s, f) in sums.iter_mut().zip(flags(idx)) {
            *s += usize::from(f);
        }
        if idx >= window {
            for (s, f) in sums.iter_mut().zip(flags(idx - window)) {
                *s -= usize::from(f);
            }
        }
        let count = (idx + 1).min(window) as f64;
        rows.push(sums.iter().map(|&s| s as f64 / count).collect());
    }
    (labels, rows)
}

pub fn write_rates_csv(trace: &SimTrace, mut out: impl Write) -> io::Result<()> {
    let (labels, rows) = moving_average_rates(trace, RATE_WINDOW);
    writeln!(out, "k,{}", labels.join(","))?;
    for (r, values) in trace.records.iter().zip(rows) {
        let cells: Vec<String> = values.into_iter().map(fmt_f64).collect();
        writeln!(out, "{},{}", r.k, cells.join(","))?;
    }
    Ok(())
}

pub fn write_metrics(trace: &SimTrace, m: &Metrics, mut out: impl Write) -> io::Result<()> {
    let meta = &trace.meta;
    let lines: Vec<(&str, String)> = vec![
        ("scenario", meta.name.clone()),
        ("scenario_hash", meta.scenario_hash.clone()),
        ("seed", meta.seed.to_string()),
        ("steps", m.steps.to_string()),
        ("E", fmt_f64(m.e_norm)),
        ("C", fmt_f64(m.c_norm)),
        ("measurement_scalars", m.measurement_scalars.to_string()),
        ("input_scalars", m.input_scalars.to_string()),
        ("reset_scalars", m.reset_scalars.to_string()),
        ("resets", m.resets.to_string()),
        ("measurement_messages", m.measurement_messages.to_string()),
        ("input_messages", m.input_messages.to_string()),
        ("remote_receptions", m.remote_receptions.to_string()),
        ("dropped_receptions", m.dropped_receptions.to_string()),
        ("drop_rate", fmt_f64(m.drop_rate)),
        ("max_state", fmt_f64(m.max_state)),
        ("max_estimation_error", fmt_f64(m.max_estimation_error)),
        ("max_inter_agent", fmt_f64(m.max_inter_agent)),
    ];
    for (k, v) in lines {
        writeln!(out, "{k}={v}")?;
    }
    Ok(())
}

//! Per-step simulation records and their CSV renderings.

use std::io::{self, Write};

use crate::bus::DeliveryReport;
use crate::model::Vector;
use crate::trigger::GroupId;

/// Static facts about a run needed to interpret its records.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceMeta {
    pub name: String,
    pub scenario_hash: String,
    pub seed: u64,
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub agents: usize,
    pub horizon: usize,
    pub measurement_groups: Vec<GroupId>,
    pub measurement_sizes: Vec<usize>,
    pub input_groups: Vec<GroupId>,
    pub input_sizes: Vec<usize>,
    /// Scalars sent by one synchronous reset, `N n`.
    pub reset_scalars: usize,
    pub reference: bool,
}

/// Values at `k = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialState {
    pub x: Vector,
    pub xhat: Vec<Vector>,
    pub xc: Option<Vector>,
    pub u: Vector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub x: Vector,
    pub y: Vector,
    /// Commanded `u(k)`.
    pub u: Vector,
    /// Input that actually drove the plant from `k-1` to `k`.
    pub u_applied: Vector,
    /// `û(k)` after this step's input broadcasts.
    pub u_hat: Vector,
    pub x_pred: Vec<Vector>,
    /// Posteriors before any synchronous reset.
    pub x_pre_reset: Vec<Vector>,
    pub x_post: Vec<Vector>,
    pub xc: Option<Vector>,
    pub eps_c: Option<Vector>,
    pub measurement_fired: Vec<bool>,
    pub input_fired: Vec<bool>,
    pub deliveries: Vec<DeliveryReport>,
    pub reset: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimTrace {
    pub meta: TraceMeta,
    pub initial: InitialState,
    pub records: Vec<StepRecord>,
}

/// Locale-independent float rendering; shortest round-trip form.
pub fn fmt_f64(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-4..1e15).contains(&a) || !x.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

fn push_vec(row: &mut Vec<String>, v: &Vector) {
    row.extend(v.iter().map(|x| fmt_f64(*x)));
}

fn flag(b: bool) -> String {
    u8::from(b).to_string()
}

fn group_label(prefix: &str, id: &GroupId) -> String {
    format!("{prefix}_{}_{}", id.agent, id.group)
}

pub fn trace_header(meta: &TraceMeta) -> Vec<String> {
    let mut h = vec!["k".to_string()];
    fn idx(prefix: &str, dim: usize) -> impl Iterator<Item = String> + '_ {
        (0..dim).map(move |d| format!("{prefix}_{d}"))
    }
    h.extend(idx("x", meta.n));
    h.extend(idx("y", meta.p));
    h.extend(idx("u", meta.q));
    h.extend(idx("uapp", meta.q));
    h.extend(idx("uhat", meta.q));
    for i in 0..meta.agents {
        h.extend(idx(&format!("xhat_{i}"), meta.n));
    }
    if meta.reference {
        h.extend(idx("xc", meta.n));
        h.extend(idx("epsc", meta.n));
    }
    h.extend(meta.measurement_groups.iter().map(|id| group_label("trig_y", id)));
    h.extend(meta.input_groups.iter().map(|id| group_label("trig_u", id)));
    h.push("reset".into());
    h
}

pub fn write_trace_csv(trace: &SimTrace, mut out: impl Write) -> io::Result<()> {
    writeln!(out, "{}", trace_header(&trace.meta).join(","))?;
    for r in &trace.records {
        let mut row = vec![r.k.to_string()];
        push_vec(&mut row, &r.x);
        push_vec(&mut row, &r.y);
        push_vec(&mut row, &r.u);
        push_vec(&mut row, &r.u_applied);
        push_vec(&mut row, &r.u_hat);
        for x in &r.x_post {
            push_vec(&mut row, x);
        }
        if trace.meta.reference {
            let zeros = Vector::zeros(trace.meta.n);
            push_vec(&mut row, r.xc.as_ref().unwrap_or(&zeros));
            push_vec(&mut row, r.eps_c.as_ref().unwrap_or(&zeros));
        }
        row.extend(r.measurement_fired.iter().map(|&b| flag(b)));
        row.extend(r.input_fired.iter().map(|&b| flag(b)));
        row.push(flag(r.reset));
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// One row per broadcast with a 0/1 loss flag per receiver.
pub fn write_events_csv(trace: &SimTrace, mut out: impl Write) -> io::Result<()> {
    let mut header = vec!["k", "kind", "sender", "group"].into_iter().map(String::from).collect::<Vec<_>>();
    header.extend((0..trace.meta.agents).map(|i| format!("drop_{i}")));
    writeln!(out, "{}", header.join(","))?;
    for r in &trace.records {
        for d in &r.deliveries {
            let m = d.message;
            let mut row = vec![m.k.to_string(), m.kind.label().to_string(), m.sender.to_string(), m.group.to_string()];
            row.extend((0..trace.meta.agents).map(|i| flag(d.dropped_at.contains(&i))));
            writeln!(out, "{}", row.join(","))?;
        }
    }
    Ok(())
}

pub fn trace_csv_string(trace: &SimTrace) -> String {
    let mut buf = Vec::new();
    write_trace_csv(trace, &mut buf).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("CSV output is ASCII")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_rendering() {
        assert_eq!(fmt_f64(0.0), "0");
        assert_eq!(fmt_f64(0.25), "0.25");
        assert_eq!(fmt_f64(-3.0), "-3");
        assert_eq!(fmt_f64(1e-20), "1e-20");
        assert_eq!(fmt_f64(2.5e20), "2.5e20");
        for x in [1e-7, 0.1 + 0.2, 123456.789, -4.4e-9] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn header_layout() {
        let meta = TraceMeta {
            name: "t".into(),
            scenario_hash: String::new(),
            seed: 0,
            n: 1,
            p: 2,
            q: 1,
            agents: 2,
            horizon: 1,
            measurement_groups: vec![GroupId { agent: 0, group: 0 }, GroupId { agent: 1, group: 0 }],
            measurement_sizes: vec![1, 1],
            input_groups: vec![GroupId { agent: 0, group: 0 }],
            input_sizes: vec![1],
            reset_scalars: 2,
            reference: false,
        };
        assert_eq!(
            trace_header(&meta).join(","),
            "k,x_0,y_0,y_1,u_0,uapp_0,uhat_0,xhat_0_0,xhat_1_0,trig_y_0_0,trig_y_1_0,trig_u_0_0,reset"
        );
    }
}

//! Sojourn accounting and post-hoc objective evaluation over traces.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SojournRecord {
    pub class: usize,
    pub seq: u64,
    pub arrival: f64,
    /// controller-to-worker message delay, outside W/I/B
    pub dispatch: f64,
    pub wait: f64,
    pub setup: f64,
    pub exec: f64,
    pub worker: usize,
    pub instance: u64,
    pub completion: f64,
    /// served by an instance whose creation evicted another class's instance
    pub churn: bool,
}

impl SojournRecord {
    pub fn sojourn(&self) -> f64 {
        self.wait + self.setup + self.exec
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub id: u64,
    pub class: usize,
    pub worker: usize,
    pub created_at: f64,
    pub churn: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveResult {
    pub c1: f64,
    pub c2: f64,
    pub events: usize,
    pub covered: f64,
    pub efficiency: f64,
    pub t_w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub events: usize,
    pub avg_response: f64,
    pub workers_covered: usize,
    pub total_instances: usize,
    pub churned_instances: usize,
    pub utilization: f64,
    pub instance_c1: f64,
    pub objectives: ObjectiveResult,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("record ({class}, {seq}) has an invalid sojourn component")]
    InvalidRecord { class: usize, seq: u64 },
    #[error("trace is incomplete: {completed} of {expected} events finished")]
    Incomplete { completed: usize, expected: usize },
}

fn check(trace: &[SojournRecord]) -> Result<(), MetricsError> {
    for r in trace {
        let ok = [r.arrival, r.wait, r.setup, r.exec, r.dispatch]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0);
        if !ok {
            return Err(MetricsError::InvalidRecord {
                class: r.class,
                seq: r.seq,
            });
        }
    }
    Ok(())
}

/// Window `[first assigned arrival, last t + S]` per key.
fn windows<K: Ord>(trace: &[SojournRecord], key: impl Fn(&SojournRecord) -> K) -> BTreeMap<K, (f64, f64)> {
    let mut out: BTreeMap<K, (f64, f64)> = BTreeMap::new();
    for r in trace {
        let end = r.arrival + r.sojourn();
        out.entry(key(r))
            .and_modify(|(lo, hi)| {
                *lo = lo.min(r.arrival);
                *hi = hi.max(end);
            })
            .or_insert((r.arrival, end));
    }
    out
}

/// Instance-level resource time and summed sojourn time.
pub fn eval_instance_objectives(trace: &[SojournRecord]) -> Result<(f64, f64), MetricsError> {
    check(trace)?;
    let c1 = windows(trace, |r| r.instance).values().map(|(lo, hi)| hi - lo).sum();
    let c2 = trace.iter().map(SojournRecord::sojourn).sum();
    Ok((c1, c2))
}

/// Worker-level resource time: every worker that served anything is
/// charged from its first assigned arrival to its last completion, plus
/// the worker setup time `t_w`.
pub fn eval_worker_objectives(trace: &[SojournRecord], t_w: f64) -> Result<(f64, f64), MetricsError> {
    check(trace)?;
    let c1 = windows(trace, |r| r.worker)
        .values()
        .map(|(lo, hi)| hi - lo + t_w)
        .sum();
    let c2 = trace.iter().map(SojournRecord::sojourn).sum();
    Ok((c1, c2))
}

pub fn objectives(trace: &[SojournRecord], t_w: f64) -> Result<ObjectiveResult, MetricsError> {
    let (c1, c2) = eval_worker_objectives(trace, t_w)?;
    let events = trace.len();
    Ok(ObjectiveResult {
        c1,
        c2,
        events,
        covered: c1,
        efficiency: if c1 > 0.0 { events as f64 / c1 } else { 0.0 },
        t_w,
    })
}

/// Busy time over lifespan, with the idle tail after each instance's last
/// completion discarded. Instances that never served anything have no
/// lifespan.
pub fn instance_utilization(trace: &[SojournRecord], instances: &[InstanceRecord]) -> f64 {
    let mut busy: BTreeMap<u64, f64> = BTreeMap::new();
    let mut last: BTreeMap<u64, f64> = BTreeMap::new();
    for r in trace {
        *busy.entry(r.instance).or_default() += r.exec;
        let l = last.entry(r.instance).or_insert(r.completion);
        *l = l.max(r.completion);
    }
    let mut total_busy = 0.0;
    let mut lifespan = 0.0;
    for inst in instances {
        if let Some(&end) = last.get(&inst.id) {
            total_busy += busy[&inst.id];
            lifespan += end - inst.created_at;
        }
    }
    if lifespan > 0.0 {
        total_busy / lifespan
    } else {
        0.0
    }
}

pub fn summarize(
    trace: &[SojournRecord],
    instances: &[InstanceRecord],
    expected_events: usize,
    t_w: f64,
) -> Result<ExperimentSummary, MetricsError> {
    if trace.len() != expected_events {
        return Err(MetricsError::Incomplete {
            completed: trace.len(),
            expected: expected_events,
        });
    }
    let objectives = objectives(trace, t_w)?;
    let (instance_c1, _) = eval_instance_objectives(trace)?;
    let avg_response = if trace.is_empty() {
        0.0
    } else {
        objectives.c2 / trace.len() as f64
    };
    let workers_covered = windows(trace, |r| r.worker).len();
    Ok(ExperimentSummary {
        events: trace.len(),
        avg_response,
        workers_covered,
        total_instances: instances.len(),
        churned_instances: instances.iter().filter(|i| i.churn).count(),
        utilization: instance_utilization(trace, instances),
        instance_c1,
        objectives,
    })
}

pub fn write_events_csv<W: Write>(trace: &[SojournRecord], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "i", "arrival", "W", "I", "B", "S", "worker", "instance", "churn"])?;
    for r in trace {
        w.write_record([
            r.class.to_string(),
            r.seq.to_string(),
            format!("{:.9}", r.arrival),
            format!("{:.9}", r.wait),
            format!("{:.9}", r.setup),
            format!("{:.9}", r.exec),
            format!("{:.9}", r.sojourn()),
            r.worker.to_string(),
            r.instance.to_string(),
            u8::from(r.churn).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One row of the plot-ready summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scheduler: String,
    pub lambda: f64,
    pub seed: u64,
    pub events: usize,
    pub avg_response: f64,
    pub workers_covered: usize,
    pub total_instances: usize,
    pub churned_instances: usize,
    pub utilization: f64,
    pub c1: f64,
    pub c2: f64,
    pub efficiency: f64,
}

impl SummaryRow {
    pub fn new(scheduler: &str, lambda: f64, seed: u64, s: &ExperimentSummary) -> Self {
        Self {
            scheduler: scheduler.to_string(),
            lambda,
            seed,
            events: s.events,
            avg_response: s.avg_response,
            workers_covered: s.workers_covered,
            total_instances: s.total_instances,
            churned_instances: s.churned_instances,
            utilization: s.utilization,
            c1: s.objectives.c1,
            c2: s.objectives.c2,
            efficiency: s.objectives.efficiency,
        }
    }
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

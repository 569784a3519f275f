//! Arrival processes, the sawtooth ramp scenario and demand models.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::rng;

pub const MB: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub class: usize,
    pub seq: u64,
    pub arrival: f64,
    pub demand: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub num_workers: usize,
    pub cores: usize,
    pub memory_bytes: u64,
    pub num_classes: usize,
    /// ramp duration T in seconds
    pub ramp: f64,
    /// peak per-class arrival rate Λ
    pub lambda_max: f64,
    pub memory_speed: f64,
    pub disk_speed: f64,
    pub network_speed: f64,
    /// ideal per-event demand p in CPU-seconds
    pub demand: f64,
    /// per-class synchronisation penalty β_k; missing entries mean 0
    pub class_beta: Vec<f64>,
    /// window over which the per-worker share φ_{k,w} is measured
    pub share_window: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            num_workers: 10,
            cores: 16,
            memory_bytes: 48_000 * MB,
            num_classes: 10,
            ramp: 20.0,
            lambda_max: 1.0,
            memory_speed: 12_800.0 * MB as f64,
            disk_speed: 711.0 * MB as f64,
            network_speed: 1_135.0 * MB as f64,
            demand: 0.2,
            class_beta: Vec::new(),
            share_window: 10.0,
            seed: 1,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.num_workers == 0 || self.cores == 0 || self.num_classes == 0 {
            return Err("worker, core and class counts must be at least 1".into());
        }
        if !(self.lambda_max >= 0.0 && self.lambda_max.is_finite()) {
            return Err(format!("invalid lambda_max {}", self.lambda_max));
        }
        if !(self.ramp > 0.0) {
            return Err(format!("invalid ramp duration {}", self.ramp));
        }
        if !(self.demand >= 0.0) {
            return Err(format!("invalid demand {}", self.demand));
        }
        if self.class_beta.iter().any(|b| !(*b >= 0.0 && b.is_finite())) {
            return Err("class_beta entries must be finite and non-negative".into());
        }
        if !(self.share_window > 0.0) {
            return Err(format!("invalid share_window {}", self.share_window));
        }
        for (name, v) in [
            ("memory_speed", self.memory_speed),
            ("disk_speed", self.disk_speed),
            ("network_speed", self.network_speed),
        ] {
            if !(v > 0.0) {
                return Err(format!("{name} must be positive"));
            }
        }
        Ok(())
    }
}

/// Per-class arrival rate at time `t`: grows by Λ/T every second until T,
/// then drops to zero.
pub fn sawtooth_rate(t: f64, lambda: f64, ramp: f64) -> f64 {
    if t < 0.0 || t > ramp {
        0.0
    } else {
        (t.ceil() / ramp) * lambda
    }
}

/// Inhomogeneous Poisson arrivals for a rate that is constant on each
/// second `(s, s+1]`. The segment rate is sampled at the segment midpoint.
pub fn generate_arrivals<R: Rng>(
    rate_fn: impl Fn(f64) -> f64,
    horizon: f64,
    rng: &mut R,
) -> Vec<f64> {
    let mut out = Vec::new();
    let mut start = 0.0;
    while start < horizon {
        let end = (start + 1.0).min(horizon);
        let rate = rate_fn(0.5 * (start + end));
        if rate > 0.0 {
            let gap = Exp::new(rate).expect("positive rate");
            let mut t = start;
            loop {
                t += gap.sample(rng);
                if t >= end {
                    break;
                }
                out.push(t);
            }
        }
        start = end;
    }
    out
}

/// Execution time under the synchronisation-penalty model.
pub fn sync_penalty_execution(p: f64, beta: f64, phi: f64) -> f64 {
    p + beta * phi * (1.0 - phi)
}

/// Arrival timestamps are kept on a nanosecond grid so that traces
/// round-trip exactly through text.
fn on_grid(t: f64) -> f64 {
    (t * 1e9).round() / 1e9
}

/// The sawtooth workload of the scenario, sorted by (arrival, class, seq).
pub fn generate_workload(sc: &ScenarioConfig) -> Vec<Event> {
    let mut events = Vec::new();
    for class in 0..sc.num_classes {
        let mut r = rng::stream(sc.seed, "arrivals", class as u64);
        let times = generate_arrivals(
            |t| sawtooth_rate(t, sc.lambda_max, sc.ramp),
            sc.ramp,
            &mut r,
        );
        for (seq, t) in times.into_iter().enumerate() {
            events.push(Event {
                class,
                seq: seq as u64,
                arrival: on_grid(t),
                demand: sc.demand,
            });
        }
    }
    sort_events(&mut events);
    events
}

impl ScenarioConfig {
    pub fn beta(&self, class: usize) -> f64 {
        self.class_beta.get(class).copied().unwrap_or(0.0)
    }
}

pub fn sort_events(events: &mut [Event]) {
    events.sort_by(|a, b| {
        a.arrival
            .total_cmp(&b.arrival)
            .then(a.class.cmp(&b.class))
            .then(a.seq.cmp(&b.seq))
    });
}

#[derive(Serialize, Deserialize)]
struct TraceRow {
    class: usize,
    seq: u64,
    arrival: String,
    demand: String,
}

pub fn write_trace<W: Write>(events: &[Event], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for e in events {
        w.serialize(TraceRow {
            class: e.class,
            seq: e.seq,
            arrival: format!("{:.9}", e.arrival),
            demand: format!("{:.9}", e.demand),
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace<R: Read>(input: R) -> Result<Vec<Event>, csv::Error> {
    let mut r = csv::Reader::from_reader(input);
    let mut events = Vec::new();
    for row in r.deserialize::<TraceRow>() {
        let row = row?;
        let parse = |s: &str| {
            s.parse::<f64>().map_err(|e| {
                csv::Error::from(std::io::Error::new(std::io::ErrorKind::InvalidData, e))
            })
        };
        events.push(Event {
            class: row.class,
            seq: row.seq,
            arrival: parse(&row.arrival)?,
            demand: parse(&row.demand)?,
        });
    }
    sort_events(&mut events);
    Ok(events)
}

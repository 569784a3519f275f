use std::collections::{BTreeMap, BTreeSet};

use ordered_float::OrderedFloat;

use super::ExecId;

/// Work-conserving processor-sharing CPU with `cores` virtual cores.
///
/// With `m` active executions each one progresses at `min(1, n/m)`
/// work-seconds per second. Progress is tracked as a single attained-service
/// counter shared by all active executions; an execution finishes when the
/// counter reaches the mark it was given on insertion.
#[derive(Debug, Clone)]
pub struct CpuSet {
    cores: usize,
    attained: f64,
    updated_at: f64,
    marks: BTreeMap<ExecId, f64>,
    order: BTreeSet<(OrderedFloat<f64>, ExecId)>,
    delivered: f64,
}

impl CpuSet {
    pub fn new(cores: usize) -> Self {
        assert!(cores >= 1, "a CPU needs at least one core");
        Self {
            cores,
            attained: 0.0,
            updated_at: 0.0,
            marks: BTreeMap::new(),
            order: BTreeSet::new(),
            delivered: 0.0,
        }
    }

    pub fn cores(&self) -> usize {
        self.cores
    }

    pub fn active(&self) -> usize {
        self.marks.len()
    }

    pub fn is_active(&self, id: ExecId) -> bool {
        self.marks.contains_key(&id)
    }

    /// Per-execution service rate for the current active set.
    pub fn rate(&self) -> f64 {
        match self.marks.len() {
            0 => 0.0,
            m => (self.cores as f64 / m as f64).min(1.0),
        }
    }

    /// Total service rate, `min(n, m)`.
    pub fn total_rate(&self) -> f64 {
        self.marks.len().min(self.cores) as f64
    }

    /// Total work delivered since creation, in CPU-seconds.
    pub fn delivered(&self) -> f64 {
        self.delivered
    }

    pub fn advance(&mut self, now: f64) {
        let dt = now - self.updated_at;
        if dt > 0.0 && !self.marks.is_empty() {
            let rate = self.rate();
            self.attained += dt * rate;
            self.delivered += dt * self.total_rate();
        }
        if now > self.updated_at {
            self.updated_at = now;
        }
    }

    pub fn insert(&mut self, now: f64, id: ExecId, demand: f64) {
        self.advance(now);
        let mark = self.attained + demand.max(0.0);
        self.marks.insert(id, mark);
        self.order.insert((OrderedFloat(mark), id));
    }

    /// Removes an execution before it finishes and returns its remaining demand.
    pub fn remove(&mut self, now: f64, id: ExecId) -> Option<f64> {
        self.advance(now);
        let mark = self.marks.remove(&id)?;
        self.order.remove(&(OrderedFloat(mark), id));
        Some((mark - self.attained).max(0.0))
    }

    pub fn remaining(&self, now: f64, id: ExecId) -> Option<f64> {
        let mark = *self.marks.get(&id)?;
        let attained = self.attained + (now - self.updated_at).max(0.0) * self.rate();
        Some((mark - attained).max(0.0))
    }

    /// Wall-clock time at which the earliest active execution finishes,
    /// assuming the active set does not change.
    pub fn next_completion(&self) -> Option<f64> {
        let (mark, _) = self.order.first()?;
        let rate = self.rate();
        let left = (mark.0 - self.attained).max(0.0);
        Some(self.updated_at + left / rate)
    }

    /// Advances to `now` and removes every execution whose mark has been reached.
    pub fn pop_finished(&mut self, now: f64) -> Vec<ExecId> {
        self.advance(now);
        let tolerance = 1e-12 * (1.0 + self.attained.abs());
        let mut done = Vec::new();
        while let Some(&(mark, id)) = self.order.first() {
            if mark.0 <= self.attained + tolerance {
                self.order.pop_first();
                self.marks.remove(&id);
                done.push(id);
            } else {
                break;
            }
        }
        done
    }
}

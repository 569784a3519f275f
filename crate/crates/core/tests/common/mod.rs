#![allow(dead_code)]

use faas_sim::engine::{AllocId, CpuSet, ExecId, Memory};
use faas_sim::sim::SimResult;
use faas_sim::workload::Event;

#[derive(Debug, Clone)]
pub enum CpuOp {
    Insert(f64),
    /// index into the currently active executions, modulo their count
    Remove(usize),
    Idle,
}

/// Drives a `CpuSet` through `ops` (each preceded by a gap) and compares it
/// with a brute-force PS model that steps from completion to completion.
pub fn ps_conservation(cores: usize, ops: &[(f64, CpuOp)]) -> Result<(), String> {
    let mut cpu = CpuSet::new(cores);
    // oracle: (id, remaining) of active executions
    let mut active: Vec<(u64, f64)> = Vec::new();
    let mut integral = 0.0;
    let mut issued = 0.0;
    let mut removed_left = 0.0;
    let mut now = 0.0;
    let mut next_id = 0;
    let m = cores as f64;
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()));

    for (gap, op) in ops {
        let target = now + gap;
        // oracle
        let mut t = now;
        while t < target && !active.is_empty() {
            let n = active.len() as f64;
            let rate = (m / n).min(1.0);
            let shortest = active.iter().map(|a| a.1).fold(f64::INFINITY, f64::min);
            let step = (shortest / rate).min(target - t);
            for a in active.iter_mut() {
                a.1 -= step * rate;
            }
            integral += step * n.min(m);
            t += step;
            active.retain(|a| a.1 > 1e-12 * (1.0 + t));
        }
        // system under test
        let mut finished = Vec::new();
        while let Some(tc) = cpu.next_completion() {
            if tc > target {
                break;
            }
            finished.extend(cpu.pop_finished(tc));
        }
        cpu.advance(target);
        now = target;
        if !close(cpu.delivered(), integral) {
            return Err(format!("t={now}: delivered {} vs integral {integral}", cpu.delivered()));
        }
        if cpu.active() != active.len() {
            return Err(format!("t={now}: {} active vs oracle {}", cpu.active(), active.len()));
        }
        for &(id, left) in &active {
            let got = cpu.remaining(now, ExecId(id)).ok_or(format!("exec {id} missing"))?;
            if (got - left).abs() > 1e-9 * (1.0 + now) {
                return Err(format!("t={now}: exec {id} remaining {got} vs {left}"));
            }
        }
        match op {
            CpuOp::Insert(d) => {
                cpu.insert(now, ExecId(next_id), *d);
                active.push((next_id, *d));
                issued += d;
                next_id += 1;
            }
            CpuOp::Remove(i) if !active.is_empty() => {
                let (id, left) = active.remove(i % active.len());
                let got = cpu.remove(now, ExecId(id)).ok_or("remove failed")?;
                if (got - left).abs() > 1e-9 * (1.0 + now) {
                    return Err(format!("removed exec {id} had {got} left, oracle {left}"));
                }
                removed_left += left;
            }
            _ => {}
        }
    }
    // total work handed out = work served + work still pending or abandoned
    let pending: f64 = active.iter().map(|a| a.1).sum();
    if !close(issued, cpu.delivered() + pending + removed_left) {
        return Err(format!(
            "issued {issued} != delivered {} + pending {pending} + removed {removed_left}",
            cpu.delivered()
        ));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub enum MemOp {
    Allocate(u64),
    Touch(usize),
    Release(usize),
}

/// Replays `ops` on a `Memory` and on a plain recency list, comparing
/// eviction victims and LRU order after every step.
pub fn lru_shadow(capacity: u64, ops: &[MemOp]) -> Result<(), String> {
    let mut mem = Memory::new(capacity, 1.0);
    let mut shadow: Vec<(AllocId, u64)> = Vec::new();
    let mut next = 0;
    for (step, op) in ops.iter().enumerate() {
        match op {
            MemOp::Allocate(size) => {
                let id = AllocId(next);
                next += 1;
                let got = mem.allocate(id, *size);
                if *size > capacity {
                    if got.is_ok() {
                        return Err(format!("step {step}: oversize allocation accepted"));
                    }
                    continue;
                }
                let evicted: Vec<AllocId> = got.map_err(|e| e.to_string())?.iter().map(|a| a.id).collect();
                let mut expect = Vec::new();
                while shadow.iter().map(|a| a.1).sum::<u64>() + size > capacity {
                    expect.push(shadow.remove(0).0);
                }
                shadow.push((id, *size));
                if evicted != expect {
                    return Err(format!("step {step}: evicted {evicted:?}, expected {expect:?}"));
                }
            }
            MemOp::Touch(i) if !shadow.is_empty() => {
                let a = shadow.remove(i % shadow.len());
                mem.touch(a.0);
                shadow.push(a);
            }
            MemOp::Release(i) if !shadow.is_empty() => {
                let a = shadow.remove(i % shadow.len());
                if mem.release(a.0).is_none() {
                    return Err(format!("step {step}: release of live {:?} failed", a.0));
                }
            }
            _ => {}
        }
        let order: Vec<AllocId> = shadow.iter().map(|a| a.0).collect();
        if mem.lru_order() != order {
            return Err(format!("step {step}: order {:?} vs shadow {order:?}", mem.lru_order()));
        }
        if mem.used() != shadow.iter().map(|a| a.1).sum::<u64>() {
            return Err(format!("step {step}: used {} disagrees with shadow", mem.used()));
        }
    }
    Ok(())
}

pub fn exactly_once(events: &[Event], r: &SimResult) -> Result<(), String> {
    if r.records.len() != events.len() {
        return Err(format!("{} records for {} events", r.records.len(), events.len()));
    }
    for (i, (e, rec)) in events.iter().zip(&r.records).enumerate() {
        if r.dispatch_counts[i] != 1 || r.completion_counts[i] != 1 {
            return Err(format!(
                "event {i} dispatched {} and completed {} times",
                r.dispatch_counts[i], r.completion_counts[i]
            ));
        }
        if (rec.class, rec.seq) != (e.class, e.seq) || rec.arrival != e.arrival {
            return Err(format!("record {i} does not match its event"));
        }
    }
    Ok(())
}

/// arrival + dispatch + W + I + B = completion, every term non-negative.
pub fn accounting_identity(r: &SimResult) -> Result<(), String> {
    for rec in &r.records {
        let parts = [rec.dispatch, rec.wait, rec.setup, rec.exec];
        if parts.iter().any(|p| *p < -1e-12 || !p.is_finite()) {
            return Err(format!("negative component in {rec:?}"));
        }
        let sum = rec.arrival + rec.dispatch + rec.wait + rec.setup + rec.exec;
        if (sum - rec.completion).abs() > 1e-9 * (1.0 + rec.completion) {
            return Err(format!("identity off by {} in {rec:?}", sum - rec.completion));
        }
        if (rec.sojourn() - (rec.wait + rec.setup + rec.exec)).abs() > 0.0 {
            return Err("sojourn is not W + I + B".into());
        }
    }
    Ok(())
}

pub fn allocation_caps(r: &SimResult) -> Result<(), String> {
    if r.allocation_trace.len() as u64 != r.allocation_checks {
        return Err("snapshot count differs from check count".into());
    }
    for s in &r.allocation_trace {
        let workers = s.worker_totals.len();
        if let Some(w) = s.worker_totals.iter().position(|&t| t > s.cap) {
            return Err(format!("t={}: worker {w} over cap {}", s.time, s.cap));
        }
        let want: usize = s.targets.iter().sum::<usize>().min(s.cap * workers);
        let have: usize = s.class_totals.iter().sum();
        if have != want || have != s.worker_totals.iter().sum::<usize>() {
            return Err(format!("t={}: {have} allocations placed, expected {want}", s.time));
        }
        if s.class_totals.iter().zip(&s.targets).any(|(h, t)| h > t) {
            return Err(format!("t={}: a class exceeds its estimate", s.time));
        }
    }
    Ok(())
}

pub fn events_csv(r: &SimResult) -> Vec<u8> {
    let mut buf = Vec::new();
    faas_sim::metrics::write_events_csv(&r.records, &mut buf).unwrap();
    buf
}

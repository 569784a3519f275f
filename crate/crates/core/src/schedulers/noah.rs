use serde::{Deserialize, Serialize};

/// Virtual per-(class, worker) instance budgets. Nothing is reserved at
/// the workers; the map only steers dispatching.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocationMap {
    alloc: Vec<Vec<usize>>,
}

impl AllocationMap {
    pub fn new(classes: usize, workers: usize) -> Self {
        Self {
            alloc: vec![vec![0; workers]; classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.alloc.len()
    }

    pub fn workers(&self) -> usize {
        self.alloc.first().map_or(0, Vec::len)
    }

    pub fn get(&self, class: usize, worker: usize) -> usize {
        self.alloc[class][worker]
    }

    pub fn set(&mut self, class: usize, worker: usize, n: usize) {
        self.alloc[class][worker] = n;
    }

    pub fn class_total(&self, class: usize) -> usize {
        self.alloc[class].iter().sum()
    }

    pub fn worker_total(&self, worker: usize) -> usize {
        self.alloc.iter().map(|row| row[worker]).sum()
    }

    pub fn fractions(&self, class: usize) -> Vec<f64> {
        let total = self.class_total(class);
        self.alloc[class]
            .iter()
            .map(|&n| if total == 0 { 0.0 } else { n as f64 / total as f64 })
            .collect()
    }

    /// Checks per-worker caps and, when given, that class totals match.
    pub fn check(&self, cap: usize, targets: Option<&[usize]>) -> Result<(), String> {
        for w in 0..self.workers() {
            let t = self.worker_total(w);
            if t > cap {
                return Err(format!("worker {w} holds {t} allocations, cap {cap}"));
            }
        }
        if let Some(targets) = targets {
            for (k, &c) in targets.iter().enumerate() {
                let t = self.class_total(k);
                if t != c {
                    return Err(format!("class {k} holds {t} allocations, target {c}"));
                }
            }
        }
        for k in 0..self.classes() {
            if self.class_total(k) > 0 {
                let s: f64 = self.fractions(k).iter().sum();
                if (s - 1.0).abs() > 1e-9 {
                    return Err(format!("class {k} fractions sum to {s}"));
                }
            }
        }
        Ok(())
    }
}

/// Scales targets down proportionally when they exceed total capacity.
/// Returns the effective targets and whether capping was needed.
pub fn cap_targets(targets: &[usize], capacity: usize) -> (Vec<usize>, bool) {
    let total: usize = targets.iter().sum();
    if total <= capacity {
        return (targets.to_vec(), false);
    }
    let mut out: Vec<usize> = targets.iter().map(|&t| t * capacity / total).collect();
    let mut left = capacity - out.iter().sum::<usize>();
    // hand out the remainder, starving classes first
    while left > 0 {
        let k = (0..out.len())
            .filter(|&k| out[k] < targets[k])
            .min_by_key(|&k| (out[k], k))
            .expect("remainder implies unmet target");
        out[k] += 1;
        left -= 1;
    }
    (out, true)
}

/// Moves the map towards `targets`. Scale-in removes from the worker that
/// holds the fewest allocations of the class; scale-out grows the class's
/// largest existing block first, then fills workers first-fit. Returns
/// whether the targets had to be capped.
pub fn place_allocations(map: &mut AllocationMap, targets: &[usize], cap: usize) -> bool {
    let capacity = cap * map.workers();
    let (targets, saturated) = cap_targets(targets, capacity);
    let workers = map.workers();
    for (k, &target) in targets.iter().enumerate() {
        while map.class_total(k) > target {
            let w = (0..workers)
                .filter(|&w| map.get(k, w) > 0)
                .min_by_key(|&w| (map.get(k, w), std::cmp::Reverse(w)))
                .expect("positive total");
            map.set(k, w, map.get(k, w) - 1);
        }
    }
    for (k, &target) in targets.iter().enumerate() {
        while map.class_total(k) < target {
            let free = |w: usize| map.worker_total(w) < cap;
            let w = (0..workers)
                .filter(|&w| map.get(k, w) > 0 && free(w))
                .max_by_key(|&w| (map.get(k, w), std::cmp::Reverse(w)))
                .or_else(|| (0..workers).find(|&w| free(w)))
                .expect("capped targets fit");
            map.set(k, w, map.get(k, w) + 1);
        }
    }
    saturated
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorkerAction {
    RunOnIdle,
    LeaveQueued,
    LaunchInstance,
}

/// Worker-side decision for the head of a class queue.
///
/// `active` is the worker's count of busy or starting instances,
/// `instances` the class's busy or starting instances at the worker.
/// A new instance is only worth launching if the queue would not drain
/// on the existing ones before the new one is ready.
pub fn try_schedule(
    has_idle: bool,
    active: usize,
    z_n: usize,
    queue_len: usize,
    instances: usize,
    mu_hat: f64,
    mean_setup: f64,
) -> WorkerAction {
    if queue_len == 0 {
        return WorkerAction::LeaveQueued;
    }
    if has_idle {
        return WorkerAction::RunOnIdle;
    }
    if active >= z_n {
        return WorkerAction::LeaveQueued;
    }
    if instances > 0 && mu_hat > 0.0 {
        let drain = queue_len as f64 / (instances as f64 * mu_hat);
        if drain < mean_setup {
            return WorkerAction::LeaveQueued;
        }
    }
    WorkerAction::LaunchInstance
}

/// Picks the worker for an event of `class`. A reported free instance
/// wins and is consumed; otherwise the worker with the smallest ratio of
/// outstanding events to allocations, lowest index on ties.
pub fn dispatch(
    class: usize,
    map: &AllocationMap,
    free_reports: &mut [Vec<usize>],
    outstanding: &[Vec<usize>],
) -> Option<usize> {
    if let Some(w) = (0..map.workers()).find(|&w| free_reports[class][w] > 0) {
        free_reports[class][w] -= 1;
        return Some(w);
    }
    let mut best: Option<(usize, f64)> = None;
    for w in 0..map.workers() {
        let a = map.get(class, w);
        if a == 0 {
            continue;
        }
        let ratio = outstanding[class][w] as f64 / a as f64;
        if best.is_none_or(|(_, r)| ratio < r) {
            best = Some((w, ratio));
        }
    }
    best.map(|(w, _)| w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_map_colocates() {
        let mut m = AllocationMap::new(1, 4);
        place_allocations(&mut m, &[3], 16);
        assert_eq!(m.get(0, 0), 3);
        assert_eq!(m.class_total(0), 3);
    }

    #[test]
    fn scale_in_hits_smallest_block() {
        let mut m = AllocationMap::new(1, 2);
        m.set(0, 0, 4);
        m.set(0, 1, 1);
        place_allocations(&mut m, &[4], 16);
        assert_eq!((m.get(0, 0), m.get(0, 1)), (4, 0));
    }

    #[test]
    fn full_worker_spills_to_next() {
        let mut m = AllocationMap::new(3, 3);
        place_allocations(&mut m, &[8, 8, 0], 16);
        assert_eq!(m.worker_total(0), 16);
        place_allocations(&mut m, &[8, 8, 2], 16);
        assert_eq!(m.get(2, 1), 2);
    }

    #[test]
    fn overload_is_capped() {
        let mut m = AllocationMap::new(2, 2);
        let sat = place_allocations(&mut m, &[40, 10], 16);
        assert!(sat);
        assert_eq!(m.class_total(0) + m.class_total(1), 32);
        m.check(16, None).unwrap();
    }

    #[test]
    fn worker_decisions() {
        assert_eq!(try_schedule(true, 3, 16, 1, 2, 5.0, 0.5), WorkerAction::RunOnIdle);
        assert_eq!(try_schedule(false, 16, 16, 50, 2, 5.0, 0.5), WorkerAction::LeaveQueued);
        // one queued event on two busy instances drains in 0.1 s < 0.5 s
        assert_eq!(try_schedule(false, 2, 16, 1, 2, 5.0, 0.5), WorkerAction::LeaveQueued);
        assert_eq!(try_schedule(false, 2, 16, 20, 2, 5.0, 0.5), WorkerAction::LaunchInstance);
        assert_eq!(try_schedule(false, 0, 16, 1, 0, 5.0, 0.5), WorkerAction::LaunchInstance);
    }

    #[test]
    fn dispatch_prefers_reports_then_ratio() {
        let mut m = AllocationMap::new(1, 4);
        m.set(0, 1, 4);
        m.set(0, 2, 2);
        let outstanding = vec![vec![0, 3, 1, 0]];
        let mut reports = vec![vec![0, 0, 0, 1]];
        assert_eq!(dispatch(0, &m, &mut reports, &outstanding), Some(3));
        assert_eq!(dispatch(0, &m, &mut reports, &outstanding), Some(2));
        let mut single = AllocationMap::new(1, 3);
        single.set(0, 1, 1);
        let busy = vec![vec![0, 9, 0]];
        assert_eq!(dispatch(0, &single, &mut vec![vec![0; 3]], &busy), Some(1));
    }

    proptest! {
        #[test]
        fn placement_invariants_hold(
            rounds in proptest::collection::vec(proptest::collection::vec(0usize..40, 5), 1..20),
            cap in 1usize..20,
        ) {
            let mut m = AllocationMap::new(5, 4);
            for targets in rounds {
                let saturated = place_allocations(&mut m, &targets, cap);
                let (effective, _) = cap_targets(&targets, cap * 4);
                prop_assert!(m.check(cap, Some(&effective)).is_ok());
                prop_assert_eq!(saturated, targets.iter().sum::<usize>() > cap * 4);
            }
        }
    }
}

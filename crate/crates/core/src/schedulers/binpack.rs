use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitPolicy {
    FirstFit,
    NextFit,
    BestFit,
}

/// Picks a worker for the next event given per-worker loads `L_w + N_w`.
/// The capacity is raised to `a·z_n` for the smallest `a ≥ 1` at which at
/// least one worker fits. Returns the worker and `a`.
pub fn binpack_select(policy: FitPolicy, loads: &[usize], z_n: usize, cursor: &mut usize) -> (usize, usize) {
    assert!(!loads.is_empty() && z_n >= 1);
    let min_load = *loads.iter().min().expect("non-empty");
    let a = min_load / z_n + 1;
    let cap = a * z_n;
    let fits = |w: usize| loads[w] < cap;
    let n = loads.len();
    let w = match policy {
        FitPolicy::FirstFit => (0..n).find(|&w| fits(w)),
        FitPolicy::NextFit => (0..n).map(|i| (*cursor + i) % n).find(|&w| fits(w)),
        FitPolicy::BestFit => (0..n).filter(|&w| fits(w)).min_by_key(|&w| (cap - loads[w], w)),
    }
    .expect("minimal factor guarantees a fit");
    if policy == FitPolicy::NextFit {
        *cursor = w;
    }
    (w, a)
}

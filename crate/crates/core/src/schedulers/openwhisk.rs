use num_integer::Integer;
use rand::Rng;

/// Step sizes that visit every site: integers in `[1, n]` coprime to `n`.
pub fn step_candidates(n: usize) -> Vec<usize> {
    (1..=n).filter(|i| i.gcd(&n) == 1).collect()
}

/// OpenWhisk's hash-based host selection. Starting at the home site
/// `h mod n`, sites are probed with a hash-derived coprime step; the first
/// one whose load is below α, then 2α, then 3α wins. If every site is at
/// or above 3α a uniformly random site is returned.
pub fn ow_select_host<R: Rng>(h: u64, loads: &[usize], busy_alpha: usize, rng: &mut R) -> usize {
    let n = loads.len();
    assert!(n >= 1, "no sites to select from");
    let steps = step_candidates(n);
    let step = steps[(h % steps.len() as u64) as usize];
    let home = (h % n as u64) as usize;
    for level in 1..=3 {
        let limit = level * busy_alpha;
        let mut idx = home;
        for _ in 0..n {
            if loads[idx] < limit {
                return idx;
            }
            idx = (idx + step) % n;
        }
    }
    rng.random_range(0..n)
}

/// Stable per-class hash so that the home invoker of a class never changes.
pub fn class_hash(class: usize) -> u64 {
    use std::hash::Hasher;
    let mut h = fnv::FnvHasher::default();
    h.write(format!("function-{class}").as_bytes());
    h.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn coprime_steps_for_ten_sites() {
        assert_eq!(step_candidates(10), vec![1, 3, 7, 9]);
        assert_eq!(step_candidates(1), vec![1]);
    }

    #[test]
    fn idle_cluster_returns_home() {
        let mut rng = crate::rng::stream(0, "t", 0);
        for h in 0..50u64 {
            assert_eq!(ow_select_host(h, &[0; 10], 16, &mut rng), (h % 10) as usize);
        }
    }

    #[test]
    fn saturated_cluster_is_random() {
        let mut rng = crate::rng::stream(0, "t", 0);
        let mut seen = [false; 4];
        for _ in 0..200 {
            seen[ow_select_host(5, &[48, 60, 50, 100], 16, &mut rng)] = true;
        }
        assert!(seen.iter().all(|s| *s));
    }

    #[test]
    fn overflow_follows_step() {
        let mut rng = crate::rng::stream(0, "t", 0);
        // h = 13: home 3, step candidates[13 % 4] = 3
        let mut loads = [0usize; 10];
        loads[3] = 16;
        assert_eq!(ow_select_host(13, &loads, 16, &mut rng), 6);
    }

    proptest! {
        #[test]
        fn never_picks_overloaded_when_alternative_exists(
            h in any::<u64>(),
            loads in proptest::collection::vec(0usize..80, 1..16),
        ) {
            let mut rng = crate::rng::stream(1, "t", 0);
            let pick = ow_select_host(h, &loads, 16, &mut rng);
            if loads.iter().any(|l| *l < 48) {
                prop_assert!(loads[pick] < 48);
            }
        }
    }
}

//! Erlang-C, M/M/c response times and the allocation-count estimator.

use std::collections::VecDeque;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum QueueingError {
    #[error("offered load {a} is not below server count {c}")]
    Unstable { c: usize, a: f64 },
    #[error("server count must be at least 1")]
    NoServers,
}

/// Probability that an arrival has to wait in an M/M/c queue with offered
/// load `a = λ/μ` erlangs.
pub fn erlang_c(c: usize, a: f64) -> Result<f64, QueueingError> {
    if c == 0 {
        return Err(QueueingError::NoServers);
    }
    if !(a < c as f64) || a < 0.0 {
        return Err(QueueingError::Unstable { c, a });
    }
    if a == 0.0 {
        return Ok(0.0);
    }
    if c == 1 {
        return Ok(a);
    }
    let mut b = 1.0;
    for j in 1..=c {
        b = a * b / (j as f64 + a * b);
    }
    let rho = a / c as f64;
    Ok(b / (1.0 - rho * (1.0 - b)))
}

/// Mean response time of an M/M/c queue.
pub fn mmc_mean_response(lambda: f64, mu: f64, c: usize) -> Result<f64, QueueingError> {
    let pw = erlang_c(c, lambda / mu)?;
    Ok(pw / (c as f64 * mu - lambda) + 1.0 / mu)
}

/// Mean waiting time of an M/M/c queue.
pub fn mmc_mean_wait(lambda: f64, mu: f64, c: usize) -> Result<f64, QueueingError> {
    let pw = erlang_c(c, lambda / mu)?;
    Ok(pw / (c as f64 * mu - lambda))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateEstimate {
    pub class_id: usize,
    pub lambda_hat: f64,
    pub mu_hat: f64,
    pub mean_setup: f64,
    pub sample_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AllocationEstimate {
    pub count: usize,
    pub saturated: bool,
}

/// Smallest number of servers keeping the expected M/M/c wait below
/// `alpha`, capped at `cap`. Classes without samples get `bootstrap`.
pub fn estimate_allocations(
    est: &RateEstimate,
    alpha: f64,
    cap: usize,
    bootstrap: usize,
) -> AllocationEstimate {
    let cap = cap.max(1);
    if est.sample_count == 0 || !(est.mu_hat > 0.0) || !est.lambda_hat.is_finite() {
        return AllocationEstimate {
            count: bootstrap.clamp(1, cap),
            saturated: false,
        };
    }
    let a = est.lambda_hat.max(0.0) / est.mu_hat;
    let first = ((a.floor() as usize) + 1).max(1);
    for c in first..=cap {
        match mmc_mean_wait(est.lambda_hat.max(0.0), est.mu_hat, c) {
            Ok(w) if w < alpha => {
                return AllocationEstimate {
                    count: c,
                    saturated: false,
                }
            }
            _ => {}
        }
    }
    AllocationEstimate {
        count: cap,
        saturated: true,
    }
}

/// Classes that have arrivals but no completed executions in the window
/// take the service rate pooled over all sampled classes, so a class that
/// is queued behind others is not held at the bootstrap count.
pub fn pool_unsampled(estimates: &mut [RateEstimate]) {
    let (n, busy) = estimates
        .iter()
        .filter(|e| e.sample_count > 0 && e.mu_hat > 0.0)
        .fold((0usize, 0.0), |(n, b), e| (n + e.sample_count, b + e.sample_count as f64 / e.mu_hat));
    if n == 0 {
        return;
    }
    for e in estimates.iter_mut() {
        if e.sample_count == 0 && e.lambda_hat > 0.0 {
            e.mu_hat = n as f64 / busy;
            e.sample_count = n;
        }
    }
}

/// Sliding-window measurement of one class's arrival rate, service rate
/// and instance setup time.
#[derive(Debug, Clone)]
pub struct RateEstimator {
    window: f64,
    arrivals: VecDeque<f64>,
    executions: VecDeque<(f64, f64)>,
    exec_sum: f64,
    setups: VecDeque<(f64, f64)>,
    setup_sum: f64,
    default_setup: f64,
}

impl RateEstimator {
    pub fn new(window: f64, default_setup: f64) -> Self {
        Self {
            window,
            arrivals: VecDeque::new(),
            executions: VecDeque::new(),
            exec_sum: 0.0,
            setups: VecDeque::new(),
            setup_sum: 0.0,
            default_setup,
        }
    }

    fn expire(&mut self, now: f64) {
        let horizon = now - self.window;
        while self.arrivals.front().is_some_and(|&t| t < horizon) {
            self.arrivals.pop_front();
        }
        while let Some(&(t, b)) = self.executions.front() {
            if t >= horizon {
                break;
            }
            self.executions.pop_front();
            self.exec_sum -= b;
        }
        while let Some(&(t, s)) = self.setups.front() {
            if t >= horizon {
                break;
            }
            self.setups.pop_front();
            self.setup_sum -= s;
        }
        if self.executions.is_empty() {
            self.exec_sum = 0.0;
        }
        if self.setups.is_empty() {
            self.setup_sum = 0.0;
        }
    }

    pub fn record_arrival(&mut self, now: f64) {
        self.expire(now);
        self.arrivals.push_back(now);
    }

    pub fn record_execution(&mut self, now: f64, b: f64) {
        self.expire(now);
        self.executions.push_back((now, b));
        self.exec_sum += b;
    }

    pub fn record_setup(&mut self, now: f64, setup: f64) {
        self.expire(now);
        self.setups.push_back((now, setup));
        self.setup_sum += setup;
    }

    pub fn mean_setup(&self) -> f64 {
        if self.setups.is_empty() {
            self.default_setup
        } else {
            self.setup_sum / self.setups.len() as f64
        }
    }

    pub fn estimate(&mut self, class_id: usize, now: f64) -> RateEstimate {
        self.expire(now);
        let span = now.min(self.window);
        let lambda_hat = if span > 0.0 {
            self.arrivals.len() as f64 / span
        } else {
            0.0
        };
        let n = self.executions.len();
        let mu_hat = if n > 0 && self.exec_sum > 0.0 {
            n as f64 / self.exec_sum
        } else {
            0.0
        };
        RateEstimate {
            class_id,
            lambda_hat,
            mu_hat,
            mean_setup: self.mean_setup(),
            sample_count: n,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verify::erlang_c_direct;
    use proptest::prelude::*;

    fn est(lambda: f64, mu: f64) -> RateEstimate {
        RateEstimate {
            class_id: 0,
            lambda_hat: lambda,
            mu_hat: mu,
            mean_setup: 0.5,
            sample_count: 10,
        }
    }

    #[test]
    fn single_server_wait_probability_is_utilization() {
        assert_eq!(erlang_c(1, 0.8).unwrap(), 0.8);
        for rho in [0.0, 0.1, 0.25, 0.5, 0.9, 0.999] {
            assert_eq!(erlang_c(1, rho).unwrap(), rho);
        }
    }

    #[test]
    fn four_servers_at_load_3_2() {
        let c = erlang_c(4, 3.2).unwrap();
        assert!((c - erlang_c_direct(4, 3.2)).abs() < 1e-12);
        assert!((c - 0.5964).abs() < 1e-4);
    }

    #[test]
    fn no_load_never_waits() {
        for c in 1..10 {
            assert_eq!(erlang_c(c, 0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn unstable_load_is_rejected() {
        assert!(erlang_c(2, 2.0).is_err());
        assert!(erlang_c(0, 0.5).is_err());
        assert!(mmc_mean_response(10.0, 10.0, 1).is_err());
    }

    #[test]
    fn recurrence_matches_direct_summation() {
        let mut worst: f64 = 0.0;
        for c in 1..=64usize {
            for step in 0..=600 {
                let a = step as f64 * 0.1;
                if a >= c as f64 {
                    break;
                }
                let r = erlang_c(c, a).unwrap();
                let d = erlang_c_direct(c, a);
                if d > 0.0 {
                    worst = worst.max((r - d).abs() / d);
                }
            }
        }
        assert!(worst < 1e-12, "max relative error {worst}");
    }

    #[test]
    fn response_time_reference_values() {
        assert!((mmc_mean_response(8.0, 10.0, 1).unwrap() - 0.5).abs() < 1e-12);
        let r = mmc_mean_response(32.0, 10.0, 4).unwrap();
        assert!((r - 0.1746).abs() < 5e-5, "{r}");
        assert!((mmc_mean_response(1e-9, 5.0, 3).unwrap() - 0.2).abs() < 1e-9);
    }

    #[test]
    fn allocation_matches_linear_scan() {
        let got = estimate_allocations(&est(1.0, 5.0), 1e-2, 160, 1);
        let mut c = 1;
        loop {
            let a = 0.2;
            if a < c as f64 && erlang_c_direct(c, a) / (5.0 * c as f64 - 1.0) < 1e-2 {
                break;
            }
            c += 1;
        }
        assert_eq!(got.count, c);
        assert!(!got.saturated);
    }

    #[test]
    fn overload_is_capped_and_flagged() {
        let got = estimate_allocations(&est(1000.0, 5.0), 1e-4, 160, 1);
        assert_eq!(got, AllocationEstimate { count: 160, saturated: true });
    }

    #[test]
    fn no_samples_uses_bootstrap() {
        let mut e = est(3.0, 5.0);
        e.sample_count = 0;
        assert_eq!(estimate_allocations(&e, 1e-4, 160, 1).count, 1);
    }

    #[test]
    fn unsampled_classes_borrow_pooled_rate() {
        let mut v = vec![est(4.0, 5.0), est(2.0, 10.0), est(3.0, 0.0), est(0.0, 0.0)];
        v[2].sample_count = 0;
        v[3].sample_count = 0;
        pool_unsampled(&mut v);
        // 20 samples over 10/5 + 10/10 = 3 s of execution
        assert!((v[2].mu_hat - 20.0 / 3.0).abs() < 1e-12);
        assert_eq!(v[2].sample_count, 20);
        assert_eq!(v[3].sample_count, 0);
        assert_eq!(v[0].mu_hat, 5.0);
        let mut none = vec![est(1.0, 0.0)];
        none[0].sample_count = 0;
        pool_unsampled(&mut none);
        assert_eq!(none[0].sample_count, 0);
    }

    #[test]
    fn estimator_window_tracks_recent_samples() {
        let mut r = RateEstimator::new(10.0, 0.782);
        for i in 0..50 {
            r.record_arrival(i as f64 * 0.1);
        }
        let e = r.estimate(0, 5.0);
        assert!((e.lambda_hat - 10.0).abs() < 1e-9);
        assert_eq!(e.mu_hat, 0.0);
        assert_eq!(e.mean_setup, 0.782);
        r.record_execution(5.0, 0.2);
        r.record_execution(5.0, 0.3);
        r.record_setup(5.0, 1.0);
        let e = r.estimate(0, 5.0);
        assert!((e.mu_hat - 4.0).abs() < 1e-12);
        assert_eq!(e.mean_setup, 1.0);
        let e = r.estimate(0, 20.0);
        assert_eq!(e.sample_count, 0);
        assert_eq!(e.lambda_hat, 0.0);
    }

    proptest! {
        #[test]
        fn erlang_c_monotone(c in 1usize..40, a1 in 0.0f64..1.0, a2 in 0.0f64..1.0) {
            let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
            let cf = c as f64;
            let (x, y) = (lo * cf * 0.999, hi * cf * 0.999);
            prop_assert!(erlang_c(c, x).unwrap() <= erlang_c(c, y).unwrap() + 1e-15);
            prop_assert!(erlang_c(c + 1, y).unwrap() <= erlang_c(c, y).unwrap() + 1e-15);
        }

        #[test]
        fn allocations_monotone(l1 in 0.01f64..80.0, l2 in 0.01f64..80.0, mu in 1.0f64..10.0) {
            let (lo, hi) = if l1 <= l2 { (l1, l2) } else { (l2, l1) };
            for alpha in [1e-2, 1e-3, 1e-4, 1e-5] {
                let a = estimate_allocations(&est(lo, mu), alpha, 160, 1).count;
                let b = estimate_allocations(&est(hi, mu), alpha, 160, 1).count;
                prop_assert!(a <= b);
                let tighter = estimate_allocations(&est(hi, mu), alpha / 10.0, 160, 1).count;
                prop_assert!(tighter >= b);
            }
        }
    }
}

//! Statistical and oracle checks of the engine and the analytic models.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::engine::{Engine, Occurrence, WorkerSpec};
use crate::queueing::{erlang_c, estimate_allocations, mmc_mean_response, RateEstimate};
use crate::rng;
use crate::schedulers::noncoop::{best_reply, play_game};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

/// Sample mean and the half-width of its two-sided Student's-t interval.
pub fn t_interval(samples: &[f64], level: f64) -> (f64, f64) {
    let n = samples.len();
    assert!(n >= 2, "need at least two samples");
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("n > 1")
        .inverse_cdf(0.5 + level / 2.0);
    (mean, t * (var / n as f64).sqrt())
}

#[derive(Debug, Clone, Copy)]
enum Tok {
    Arrive,
    Run,
}

/// Mean response time of `executions` Poisson arrivals with exponential
/// demands on one processor-sharing worker with `cores` cores, starting
/// from an empty system.
pub fn ps_mean_response(lambda: f64, mu: f64, cores: usize, executions: usize, seed: u64, rep: u64) -> f64 {
    let mut arrivals = rng::stream(seed, "mm-arrivals", rep);
    let mut service = rng::stream(seed, "mm-service", rep);
    let gap = Exp::new(lambda).expect("lambda > 0");
    let size = Exp::new(mu).expect("mu > 0");
    let mut eng: Engine<Tok> = Engine::new(&[WorkerSpec {
        cores,
        memory_capacity: 1,
        memory_speed: 1.0,
    }]);
    let mut issued = 1;
    eng.start_timer(gap.sample(&mut arrivals), Tok::Arrive);
    let (mut done, mut total) = (0usize, 0.0);
    while let Some(f) = eng.next() {
        match f.what {
            Occurrence::Timer { .. } => {
                eng.submit_execution(0, size.sample(&mut service), Tok::Run)
                    .expect("valid demand");
                if issued < executions {
                    issued += 1;
                    eng.start_timer(gap.sample(&mut arrivals), Tok::Arrive);
                }
            }
            Occurrence::Completed { started_at, .. } => {
                done += 1;
                total += f.time - started_at;
            }
            Occurrence::Aborted { .. } => unreachable!("no memory in use"),
        }
    }
    total / done as f64
}

/// Replication-means confidence check against the analytic M/M/c mean
/// response time. With exponential demands the PS worker has the same
/// occupancy process as M/M/c FCFS, so the means coincide.
pub fn mm_check(
    name: &str,
    lambda: f64,
    mu: f64,
    cores: usize,
    executions: usize,
    replications: usize,
    seed: u64,
) -> Check {
    let target = mmc_mean_response(lambda, mu, cores).expect("stable queue");
    let means: Vec<f64> = (0..replications as u64)
        .map(|r| ps_mean_response(lambda, mu, cores, executions, seed, r))
        .collect();
    let (mean, half) = t_interval(&means, 0.95);
    let (lo, hi) = (mean - half, mean + half);
    Check::new(
        name,
        lo <= target && target <= hi,
        format!(
            "{replications} reps x {executions} executions: mean {mean:.5} s, 95% CI [{lo:.5}, {hi:.5}], analytic {target:.5} s"
        ),
    )
}

pub fn mm1(replications: usize, seed: u64) -> Check {
    mm_check("mm1", 8.0, 10.0, 1, 10_000, replications, seed)
}

pub fn mmc(replications: usize, seed: u64) -> Check {
    mm_check("mmc", 32.0, 10.0, 4, 10_000, replications, seed)
}

/// Erlang-C by direct summation of the M/M/c stationary terms.
pub fn erlang_c_direct(c: usize, a: f64) -> f64 {
    let mut term = 1.0;
    let mut head = 0.0;
    for j in 0..c {
        head += term;
        term *= a / (j + 1) as f64;
    }
    let tail = term / (1.0 - a / c as f64);
    tail / (head + tail)
}

pub fn erlang_suite() -> Vec<Check> {
    let mut worst: f64 = 0.0;
    let mut points = 0;
    for c in 1..=64usize {
        for step in 0..=600 {
            let a = step as f64 * 0.1;
            if a >= c as f64 {
                break;
            }
            let d = erlang_c_direct(c, a);
            let r = erlang_c(c, a).expect("stable");
            points += 1;
            if d > 0.0 {
                worst = worst.max((r - d).abs() / d);
            } else if r != 0.0 {
                worst = f64::INFINITY;
            }
        }
    }
    let mut exact = true;
    for i in 0..1000 {
        let rho = i as f64 / 1000.0;
        exact &= erlang_c(1, rho) == Ok(rho);
    }
    vec![
        Check::new(
            "erlang-recurrence",
            worst < 1e-12,
            format!("{points} grid points, max relative error {worst:.3e}"),
        ),
        Check::new(
            "erlang-single-server",
            exact,
            "erlang_c(1, rho) == rho for rho in [0, 1) step 0.001".into(),
        ),
        allocation_curves(),
    ]
}

/// Allocation counts over λ ∈ (0, 80) at μ = 5: each curve is a
/// non-decreasing step function and a smaller α never needs fewer
/// instances.
pub fn allocation_curves() -> Check {
    let alphas = [1e-2, 1e-3, 1e-4, 1e-5];
    let lambdas: Vec<f64> = (1..800).map(|i| i as f64 * 0.1).collect();
    let curves: Vec<Vec<usize>> = alphas
        .iter()
        .map(|&alpha| {
            lambdas
                .iter()
                .map(|&l| {
                    let e = RateEstimate {
                        class_id: 0,
                        lambda_hat: l,
                        mu_hat: 5.0,
                        mean_setup: 0.0,
                        sample_count: 1,
                    };
                    estimate_allocations(&e, alpha, 160, 1).count
                })
                .collect()
        })
        .collect();
    let monotone = curves.iter().all(|c| c.windows(2).all(|w| w[0] <= w[1]));
    let dominated = curves
        .windows(2)
        .all(|p| p[0].iter().zip(&p[1]).all(|(loose, tight)| loose <= tight));
    let ends: Vec<String> = curves
        .iter()
        .zip(alphas)
        .map(|(c, a)| format!("a={a:e}: {}..{}", c[0], c[c.len() - 1]))
        .collect();
    Check::new(
        "allocation-curves",
        monotone && dominated,
        format!(
            "monotone {monotone}, smaller alpha dominates {dominated}; {}",
            ends.join(", ")
        ),
    )
}

/// Player objective for a single player alone on the machines.
pub fn reply_objective(phi: f64, mu: &[f64], s: &[f64]) -> f64 {
    s.iter()
        .zip(mu)
        .map(|(si, m)| {
            if *si <= 0.0 {
                0.0
            } else {
                let free = m - si * phi;
                if free <= 0.0 {
                    f64::INFINITY
                } else {
                    si / free
                }
            }
        })
        .sum()
}

/// Numerical minimisation by pairwise exchange: for every pair of machines,
/// golden-section search over the amount moved between them, repeated until
/// nothing moves.
pub fn minimize_reply(phi: f64, mu: &[f64]) -> Vec<f64> {
    let n = mu.len();
    let total: f64 = mu.iter().sum();
    let mut s: Vec<f64> = mu.iter().map(|m| m / total).collect();
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..2000 {
        let mut moved: f64 = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let f = |d: f64, s: &[f64]| {
                    let mut t = s.to_vec();
                    t[i] += d;
                    t[j] -= d;
                    reply_objective(phi, mu, &t)
                };
                // keep both machines below saturation
                let room = |k: usize| mu[k] / phi - s[k];
                let (mut lo, mut hi) = (
                    (-s[i]).max(-room(j) * (1.0 - 1e-12)),
                    s[j].min(room(i) * (1.0 - 1e-12)),
                );
                let mut x1 = hi - g * (hi - lo);
                let mut x2 = lo + g * (hi - lo);
                let (mut f1, mut f2) = (f(x1, &s), f(x2, &s));
                for _ in 0..200 {
                    if f1 <= f2 {
                        hi = x2;
                        x2 = x1;
                        f2 = f1;
                        x1 = hi - g * (hi - lo);
                        f1 = f(x1, &s);
                    } else {
                        lo = x1;
                        x1 = x2;
                        f1 = f2;
                        x2 = lo + g * (hi - lo);
                        f2 = f(x2, &s);
                    }
                    if hi - lo < 1e-15 {
                        break;
                    }
                }
                let d = 0.5 * (lo + hi);
                if f(d, &s) < f(0.0, &s) {
                    s[i] += d;
                    s[j] -= d;
                    moved = moved.max(d.abs());
                }
            }
        }
        if moved < 1e-13 {
            break;
        }
    }
    s
}

pub fn oracle_suite(instances: usize, seed: u64) -> Vec<Check> {
    let mut r = rng::stream(seed, "best-reply-oracle", 0);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let n = r.random_range(2..=5);
        let mu: Vec<f64> = (0..n).map(|_| r.random_range(0.5..10.0)).collect();
        let cap: f64 = mu.iter().sum();
        let phi = r.random_range(0.01..0.95) * cap;
        let s = match best_reply(phi, &mu) {
            Ok(s) => s,
            Err(_) => {
                worst = f64::INFINITY;
                continue;
            }
        };
        let o = minimize_reply(phi, &mu);
        for (a, b) in s.iter().zip(&o) {
            worst = worst.max((a - b).abs());
        }
    }
    let mut max_rounds = 0;
    let mut max_dev: f64 = 0.0;
    let games = 100;
    for _ in 0..games {
        let machines = r.random_range(2..=10);
        let m = r.random_range(1.0..20.0);
        let players = r.random_range(1..=10);
        let raw: Vec<f64> = (0..players).map(|_| r.random_range(0.1..1.0)).collect();
        let scale = r.random_range(0.05..0.9) * m * machines as f64 / raw.iter().sum::<f64>();
        let phi: Vec<f64> = raw.iter().map(|x| x * scale).collect();
        match play_game(&phi, &vec![m; machines], 1e-4, 10_000) {
            Ok(g) if g.converged => {
                max_rounds = max_rounds.max(g.rounds);
                for row in &g.fractions {
                    for v in row {
                        max_dev = max_dev.max((v - 1.0 / machines as f64).abs());
                    }
                }
            }
            _ => max_rounds = usize::MAX,
        }
    }
    vec![
        Check::new(
            "best-reply-oracle",
            worst < 1e-6,
            format!("{instances} random 2-5 machine instances, max |water-filling - numerical| {worst:.3e}"),
        ),
        Check::new(
            "homogeneous-game",
            max_rounds <= 2 && max_dev < 1e-9,
            format!("{games} games: max rounds {max_rounds}, max deviation from uniform {max_dev:.3e}"),
        ),
    ]
}

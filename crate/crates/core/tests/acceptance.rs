//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Run with `cargo test -p faas-sim --test acceptance -- --nocapture`.

mod common;

use std::collections::BTreeMap;

use faas_sim::config::RunConfig;
use faas_sim::experiment::run_cell;
use faas_sim::metrics::SummaryRow;
use faas_sim::schedulers::{NoahParams, SchedulerConfig};
use faas_sim::verify::{self, Check};
use rand::Rng;
use rayon::prelude::*;

use common::{CpuOp, MemOp};

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

/// Criteria that fail in this model; each has a written analysis in the
/// README ("Known failures"). They are still evaluated and printed as FAIL.
/// A listed criterion that starts passing is reported; any failure that is
/// not listed fails the run.
const KNOWN_FAILURES: &[&str] = &["5a", "5c", "5d", "5e"];

fn lambdas() -> Vec<f64> {
    std::iter::once(1.0).chain((1..=16).map(|i| 5.0 * i as f64)).collect()
}

fn noah(alpha: f64) -> SchedulerConfig {
    SchedulerConfig::Noah(NoahParams {
        alpha,
        ..Default::default()
    })
}

fn schedulers() -> Vec<SchedulerConfig> {
    let mut s: Vec<SchedulerConfig> = ["openwhisk", "first-fit", "next-fit", "best-fit", "noncoop"]
        .iter()
        .map(|n| SchedulerConfig::by_name(n).unwrap())
        .collect();
    s.push(noah(1e-4));
    s.push(noah(1e-2));
    s
}

struct Sweep {
    /// (label, Λ as integer) -> rows over seeds
    rows: BTreeMap<(String, u32), Vec<SummaryRow>>,
}

impl Sweep {
    fn run() -> Self {
        let cells: Vec<(SchedulerConfig, f64, u64)> = schedulers()
            .into_iter()
            .flat_map(|s| {
                lambdas()
                    .into_iter()
                    .flat_map(move |l| SEEDS.map(|seed| (s.clone(), l, seed)))
            })
            .collect();
        let out: Vec<SummaryRow> = cells
            .into_par_iter()
            .map(|(scheduler, l, seed)| {
                let mut cfg = RunConfig {
                    scheduler,
                    ..Default::default()
                };
                cfg.scenario.lambda_max = l;
                cfg.scenario.seed = seed;
                let out = run_cell(&cfg).unwrap_or_else(|e| panic!("{} L={l} seed {seed}: {e}", cfg.scheduler.label()));
                out.row
            })
            .collect();
        let mut rows: BTreeMap<(String, u32), Vec<SummaryRow>> = BTreeMap::new();
        for r in out {
            rows.entry((r.scheduler.clone(), r.lambda as u32)).or_default().push(r);
        }
        Self { rows }
    }

    fn get(&self, label: &str, l: f64) -> &[SummaryRow] {
        &self.rows[&(label.to_string(), l as u32)]
    }

    fn mean(&self, label: &str, l: f64, f: impl Fn(&SummaryRow) -> f64) -> f64 {
        let r = self.get(label, l);
        r.iter().map(f).sum::<f64>() / r.len() as f64
    }
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&ranks(a), &ranks(b))
}

fn fmt_series(xs: &[(f64, f64)]) -> String {
    xs.iter().map(|(l, v)| format!("{l}:{v:.3}")).collect::<Vec<_>>().join(" ")
}

fn scenario_checks(s: &Sweep) -> Vec<Check> {
    let ls = lambdas();
    let resp = |r: &SummaryRow| r.avg_response;
    let cover = |r: &SummaryRow| r.workers_covered as f64;
    let inst = |r: &SummaryRow| r.total_instances as f64;
    let n4 = "noah-a1e-4";
    let n2 = "noah-a1e-2";
    let mut out = Vec::new();

    let a: Vec<(f64, f64)> = ls.iter().map(|&l| (l, s.mean(n4, l, resp))).collect();
    let bad: Vec<f64> = a.iter().filter(|p| p.1 >= 0.300).map(|p| p.0).collect();
    out.push(Check {
        name: "5a noah 1e-4 response < 0.300 s".into(),
        passed: bad.is_empty(),
        detail: format!("seed-mean response {}; at/over 0.300 at {bad:?}", fmt_series(&a)),
    });

    let high: Vec<f64> = ls.iter().copied().filter(|&l| l >= 55.0).collect();
    let ratios: Vec<(f64, f64, f64)> = high
        .iter()
        .map(|&l| {
            let base = s.mean(n4, l, resp);
            (l, s.mean("openwhisk", l, resp) / base, s.mean("noncoop", l, resp) / base)
        })
        .collect();
    let worst_ow = ratios.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    let worst_nc = ratios.iter().map(|r| r.2).fold(f64::INFINITY, f64::min);
    out.push(Check {
        name: "5b openwhisk/noncoop >= 2x noah for L >= 55".into(),
        passed: worst_ow >= 2.0 && worst_nc >= 2.0,
        detail: format!("min ratio openwhisk {worst_ow:.2}, noncoop {worst_nc:.2}"),
    });

    let nf_short: Vec<(f64, u64)> = ls
        .iter()
        .filter(|&&l| l >= 5.0)
        .flat_map(|&l| s.get("next-fit", l).iter().filter(|r| r.workers_covered < 10).map(move |r| (l, r.seed)))
        .collect();
    let low: Vec<f64> = ls.iter().copied().filter(|&l| l <= 20.0).collect();
    let not_fewer: Vec<(String, f64)> = ["first-fit", "best-fit"]
        .iter()
        .flat_map(|n| {
            low.iter()
                .filter(|&&l| s.mean(n, l, cover) >= s.mean("next-fit", l, cover))
                .map(move |&l| (n.to_string(), l))
        })
        .collect();
    let cov: Vec<String> = low
        .iter()
        .map(|&l| {
            format!(
                "{l}:nf{:.1}/ff{:.1}/bf{:.1}",
                s.mean("next-fit", l, cover),
                s.mean("first-fit", l, cover),
                s.mean("best-fit", l, cover)
            )
        })
        .collect();
    out.push(Check {
        name: "5c next-fit covers 10 for L >= 5, ff/bf fewer for L <= 20".into(),
        passed: nf_short.is_empty() && not_fewer.is_empty(),
        detail: format!(
            "next-fit short of 10 at (L, seed) {nf_short:?}; ff/bf not fewer at {not_fewer:?}; mean coverage {}",
            cov.join(" ")
        ),
    });

    let c80: Vec<usize> = s.get(n2, 80.0).iter().map(|r| r.workers_covered).collect();
    let churn: Vec<(f64, f64, f64)> = ls
        .iter()
        .filter(|&&l| l >= 50.0)
        .map(|&l| (l, s.mean(n2, l, inst), s.mean(n4, l, inst)))
        .collect();
    let churn_bad: Vec<f64> = churn.iter().filter(|c| c.1 <= c.2).map(|c| c.0).collect();
    out.push(Check {
        name: "5d noah 1e-2 covers <= 9 at L=80 and creates more instances than 1e-4 for L >= 50".into(),
        passed: c80.iter().all(|&c| c <= 9) && churn_bad.is_empty(),
        detail: format!(
            "coverage at 80 per seed {c80:?}; instances 1e-2 vs 1e-4 {}; not more at {churn_bad:?}",
            churn
                .iter()
                .map(|c| format!("{}:{:.0}/{:.0}", c.0, c.1, c.2))
                .collect::<Vec<_>>()
                .join(" ")
        ),
    });

    let xs: Vec<f64> = ls.iter().map(|&l| s.mean("openwhisk", l, inst)).collect();
    let ys: Vec<f64> = ls.iter().map(|&l| s.mean("openwhisk", l, resp)).collect();
    let rho = spearman(&xs, &ys);
    out.push(Check {
        name: "5e openwhisk instances and response co-move".into(),
        passed: rho > 0.8,
        detail: format!("Spearman rho {rho:.3} over {} rates", ls.len()),
    });
    out
}

fn property_checks() -> Vec<Check> {
    let mut r = faas_sim::rng::stream(99, "acceptance-properties", 0);
    let mut ps_err = None;
    for case in 0..500 {
        let cores = r.random_range(1..=16);
        let ops: Vec<(f64, CpuOp)> = (0..r.random_range(1..60))
            .map(|_| {
                let gap = if r.random_bool(0.2) { 0.0 } else { r.random_range(0.0..2.0) };
                let op = match r.random_range(0..10) {
                    0..=5 => CpuOp::Insert(r.random_range(0.0..3.0)),
                    6 => CpuOp::Remove(r.random_range(0..100)),
                    _ => CpuOp::Idle,
                };
                (gap, op)
            })
            .collect();
        if let Err(e) = common::ps_conservation(cores, &ops) {
            ps_err = Some(format!("case {case}: {e}"));
            break;
        }
    }
    let mut lru_err = None;
    for case in 0..500 {
        let cap = r.random_range(1..=50u64);
        let ops: Vec<MemOp> = (0..r.random_range(1..80))
            .map(|_| match r.random_range(0..4) {
                0 | 1 => MemOp::Allocate(r.random_range(1..=cap + 2)),
                2 => MemOp::Touch(r.random_range(0..100)),
                _ => MemOp::Release(r.random_range(0..100)),
            })
            .collect();
        if let Err(e) = common::lru_shadow(cap, &ops) {
            lru_err = Some(format!("case {case}: {e}"));
            break;
        }
    }

    let mut sim_errs: Vec<String> = Vec::new();
    let mut checked = 0;
    let mut ticks = 0;
    for sched in schedulers() {
        for l in [1.0, 20.0, 60.0] {
            let mut cfg = RunConfig {
                scheduler: sched.clone(),
                ..Default::default()
            };
            cfg.scenario.lambda_max = l;
            cfg.scenario.seed = 11;
            let a = run_cell(&cfg).unwrap();
            let b = run_cell(&cfg).unwrap();
            let tag = format!("{} L={l}", cfg.scheduler.label());
            checked += a.events.len();
            ticks += a.result.allocation_checks;
            for (what, res) in [
                ("exactly-once", common::exactly_once(&a.events, &a.result)),
                ("identity", common::accounting_identity(&a.result)),
                ("allocation caps", common::allocation_caps(&a.result)),
            ] {
                if let Err(e) = res {
                    sim_errs.push(format!("{tag} {what}: {e}"));
                }
            }
            if common::events_csv(&a.result) != common::events_csv(&b.result) {
                sim_errs.push(format!("{tag}: event CSVs differ between identical runs"));
            }
            if matches!(sched, SchedulerConfig::Noah(_)) && a.result.allocation_checks == 0 {
                sim_errs.push(format!("{tag}: no allocation checks ran"));
            }
        }
    }
    vec![Check {
        name: "6 property suites".into(),
        passed: ps_err.is_none() && lru_err.is_none() && sim_errs.is_empty(),
        detail: format!(
            "PS conservation {}; LRU shadow {}; {checked} simulated events, {ticks} allocation snapshots: {}",
            ps_err.unwrap_or_else(|| "500 cases ok".into()),
            lru_err.unwrap_or_else(|| "500 cases ok".into()),
            if sim_errs.is_empty() {
                "exactly-once, identity, caps, determinism ok".to_string()
            } else {
                sim_errs.join("; ")
            }
        ),
    }]
}

#[test]
fn acceptance() {
    let mut checks: Vec<(String, Check)> = Vec::new();
    let mut push = |id: &str, c: Check| checks.push((id.to_string(), c));

    let (mm1, mmc) = rayon::join(|| verify::mm1(100, 1), || verify::mmc(100, 1));
    push("1", mm1);
    push("2", mmc);

    let erl = verify::erlang_suite();
    let both = erl[0].passed && erl[1].passed;
    push(
        "3",
        Check {
            name: "3 erlang-c oracle".into(),
            passed: both,
            detail: format!("{}; {}", erl[0].detail, erl[1].detail),
        },
    );
    let orc = verify::oracle_suite(1000, 7);
    push(
        "4",
        Check {
            name: "4 best-reply oracle".into(),
            passed: orc.iter().all(|c| c.passed),
            detail: orc.iter().map(|c| c.detail.clone()).collect::<Vec<_>>().join("; "),
        },
    );

    let sweep = Sweep::run();
    for c in scenario_checks(&sweep) {
        let id = c.name[..2].to_string();
        push(&id, c);
    }
    for c in property_checks() {
        push("6", c);
    }
    push("7", verify::allocation_curves());

    let mut unexpected = Vec::new();
    for (id, c) in &checks {
        println!("{c}");
        let known = KNOWN_FAILURES.contains(&id.as_str());
        if !c.passed && !known {
            unexpected.push(id.clone());
        }
        if c.passed && known {
            println!("note: criterion {id} is listed as a known failure but passed");
        }
    }
    let failed: Vec<&str> = checks.iter().filter(|(_, c)| !c.passed).map(|(id, _)| id.as_str()).collect();
    println!(
        "acceptance: {} of {} criteria pass; failing {failed:?}",
        checks.len() - failed.len(),
        checks.len()
    );
    assert!(unexpected.is_empty(), "unexpected failures: {unexpected:?}");
}

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use faas_sim::config::RunConfig;
use faas_sim::experiment::{run_cell, write_cell, ExperimentError};
use faas_sim::metrics::{write_summary_csv, SummaryRow};
use faas_sim::schedulers::SchedulerConfig;
use faas_sim::verify;
use faas_sim::workload::{generate_workload, write_trace};
use rayon::prelude::*;

#[derive(Parser)]
#[command(name = "faas-sim", version, about = "Serverless platform simulator with pluggable schedulers")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args)]
struct Overrides {
    /// JSON run manifest; defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lambda_max: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replications: Option<usize>,
    /// output directory (falls back to the manifest, then FAAS_SIM_OUT, then ./results)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scheduler on one scenario
    Run {
        #[command(flatten)]
        o: Overrides,
        /// scheduler name, `noah:<alpha>` for a NOAH threshold
        #[arg(long)]
        scheduler: Option<String>,
    },
    /// Run every scheduler at every peak rate, in parallel
    Sweep {
        #[command(flatten)]
        o: Overrides,
        #[arg(long, value_delimiter = ',', default_value = "openwhisk,first-fit,next-fit,best-fit,noncoop,noah")]
        schedulers: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "1,5,10,15,20,25,30,35,40,45,50,55,60,65,70,75,80")]
        lambda_max_list: Vec<f64>,
        /// also write per-event files for every cell
        #[arg(long)]
        events: bool,
    },
    /// Statistical and oracle verification
    Verify {
        #[arg(long, value_enum)]
        suite: Suite,
        #[arg(long, default_value_t = 100)]
        reps: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Write the generated workload trace as CSV
    GenWorkload {
        #[command(flatten)]
        o: Overrides,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    Mm1,
    Mmc,
    Erlang,
    Oracles,
}

enum Failure {
    Usage(anyhow::Error),
    Verification,
    Internal(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Usage(e)
    }
}

fn experiment_failure(e: ExperimentError, what: &str) -> Failure {
    match e {
        ExperimentError::Output { .. } => Failure::Usage(anyhow!(e).context(what.to_string())),
        other => Failure::Internal(anyhow!(other).context(what.to_string())),
    }
}

fn scheduler_from(spec: &str, base: &SchedulerConfig) -> anyhow::Result<SchedulerConfig> {
    let (name, alpha) = match spec.split_once(':') {
        Some((n, a)) => (n, Some(a)),
        None => (spec, None),
    };
    let mut s = if base.name() == name {
        base.clone()
    } else {
        SchedulerConfig::by_name(name)
            .ok_or_else(|| anyhow!("unknown scheduler {name:?}; expected one of {:?}", SchedulerConfig::NAMES))?
    };
    if let Some(a) = alpha {
        let SchedulerConfig::Noah(p) = &mut s else {
            bail!("only noah takes a threshold suffix, got {spec:?}");
        };
        p.alpha = a.parse().with_context(|| format!("bad alpha in {spec:?}"))?;
    }
    s.validate().map_err(|e| anyhow!("{spec}: {e}"))?;
    Ok(s)
}

fn load(o: &Overrides) -> anyhow::Result<RunConfig> {
    let mut cfg = match &o.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(l) = o.lambda_max {
        cfg.scenario.lambda_max = l;
    }
    if let Some(s) = o.seed {
        cfg.scenario.seed = s;
    }
    if let Some(r) = o.replications {
        cfg.replications = r;
    }
    if let Some(d) = &o.out {
        cfg.out_dir = Some(d.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir
        .clone()
        .or_else(|| std::env::var_os("FAAS_SIM_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("results"))
}

fn write_summaries(dir: &Path, rows: &[SummaryRow]) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let csv = dir.join("summary.csv");
    let f = File::create(&csv).with_context(|| format!("creating {}", csv.display()))?;
    write_summary_csv(rows, BufWriter::new(f))?;
    let json = dir.join("summary.json");
    std::fs::write(&json, serde_json::to_string_pretty(rows)?).with_context(|| format!("writing {}", json.display()))?;
    println!("wrote {} and {}", csv.display(), json.display());
    Ok(())
}

fn print_row(r: &SummaryRow) {
    println!(
        "{:<14} L={:<5} seed={:<3} events={:<5} response={:.4}s workers={} instances={} churned={} utilization={:.3}",
        r.scheduler, r.lambda, r.seed, r.events, r.avg_response, r.workers_covered, r.total_instances, r.churned_instances, r.utilization
    );
}

fn cmd_run(o: &Overrides, scheduler: Option<&str>) -> Result<(), Failure> {
    let mut cfg = load(o)?;
    if let Some(s) = scheduler {
        cfg.scheduler = scheduler_from(s, &cfg.scheduler)?;
    }
    let dir = out_dir(&cfg);
    let mut rows = Vec::new();
    for seed in cfg.seeds().collect::<Vec<_>>() {
        let mut c = cfg.clone();
        c.scenario.seed = seed;
        let out = run_cell(&c).map_err(|e| experiment_failure(e, &format!("seed {seed}")))?;
        for p in write_cell(&dir, &c, &out).map_err(|e| experiment_failure(e, "writing results"))? {
            println!("wrote {}", p.display());
        }
        print_row(&out.row);
        rows.push(out.row);
    }
    write_summaries(&dir, &rows)?;
    Ok(())
}

fn cmd_sweep(o: &Overrides, schedulers: &[String], lambdas: &[f64], events: bool) -> Result<(), Failure> {
    let cfg = load(o)?;
    let dir = out_dir(&cfg);
    let scheds = schedulers
        .iter()
        .map(|s| scheduler_from(s, &cfg.scheduler))
        .collect::<anyhow::Result<Vec<_>>>()?;
    if let Some(l) = lambdas.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
        return Err(Failure::Usage(anyhow!("invalid peak rate {l}")));
    }
    let mut cells = Vec::new();
    for s in &scheds {
        for &l in lambdas {
            for seed in cfg.seeds() {
                let mut c = cfg.clone();
                c.scheduler = s.clone();
                c.scenario.lambda_max = l;
                c.scenario.seed = seed;
                cells.push(c);
            }
        }
    }
    eprintln!("running {} cells", cells.len());
    let results: Vec<Result<SummaryRow, Failure>> = cells
        .par_iter()
        .map(|c| {
            let tag = format!("{} L={} seed {}", c.scheduler.label(), c.scenario.lambda_max, c.scenario.seed);
            let out = run_cell(c).map_err(|e| experiment_failure(e, &tag))?;
            if events {
                write_cell(&dir.join("cells"), c, &out).map_err(|e| experiment_failure(e, &tag))?;
            }
            Ok(out.row)
        })
        .collect();
    let mut rows = Vec::with_capacity(results.len());
    for r in results {
        rows.push(r?);
    }
    for r in &rows {
        print_row(r);
    }
    write_summaries(&dir, &rows)?;
    Ok(())
}

fn cmd_verify(suite: Suite, reps: usize, seed: u64) -> Result<(), Failure> {
    if reps < 30 {
        return Err(Failure::Usage(anyhow!("--reps must be at least 30, got {reps}")));
    }
    let checks = match suite {
        Suite::Mm1 => vec![verify::mm1(reps, seed)],
        Suite::Mmc => vec![verify::mmc(reps, seed)],
        Suite::Erlang => verify::erlang_suite(),
        Suite::Oracles => verify::oracle_suite(reps.max(1000), seed),
    };
    for c in &checks {
        println!("{c}");
    }
    if checks.iter().all(|c| c.passed) {
        Ok(())
    } else {
        Err(Failure::Verification)
    }
}

fn cmd_gen(o: &Overrides) -> Result<(), Failure> {
    let cfg = load(o)?;
    let path = match &o.out {
        Some(p) => p.clone(),
        None => out_dir(&cfg).join(format!("workload_L{}_s{}.csv", cfg.scenario.lambda_max, cfg.scenario.seed)),
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let events = generate_workload(&cfg.scenario);
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    write_trace(&events, BufWriter::new(f)).context("writing workload")?;
    println!("wrote {} events to {}", events.len(), path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let res = match &cli.cmd {
        Cmd::Run { o, scheduler } => cmd_run(o, scheduler.as_deref()),
        Cmd::Sweep {
            o,
            schedulers,
            lambda_max_list,
            events,
        } => cmd_sweep(o, schedulers, lambda_max_list, *events),
        Cmd::Verify { suite, reps, seed } => cmd_verify(*suite, *reps, *seed),
        Cmd::GenWorkload { o } => cmd_gen(o),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Verification) => {
            eprintln!("verification failed");
            ExitCode::from(2)
        }
        Err(Failure::Internal(e)) => {
            eprintln!("internal error: {e:#}");
            ExitCode::from(3)
        }
    }
}

//! One experiment cell: generate the workload, simulate, summarise.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::RunConfig;
use crate::metrics::{summarize, write_events_csv, ExperimentSummary, MetricsError, SummaryRow};
use crate::sim::{simulate, SimError, SimResult};
use crate::workload::{generate_workload, write_trace, Event};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("cannot write {path}: {msg}")]
    Output { path: PathBuf, msg: String },
}

#[derive(Debug, Clone)]
pub struct CellOutput {
    pub events: Vec<Event>,
    pub result: SimResult,
    pub summary: ExperimentSummary,
    pub row: SummaryRow,
}

/// Runs the configuration once with its scenario seed.
pub fn run_cell(cfg: &RunConfig) -> Result<CellOutput, ExperimentError> {
    let events = generate_workload(&cfg.scenario);
    run_events(cfg, events)
}

pub fn run_events(cfg: &RunConfig, events: Vec<Event>) -> Result<CellOutput, ExperimentError> {
    let result = simulate(&cfg.scenario, &cfg.platform, &cfg.scheduler, &events)?;
    let summary = summarize(
        &result.records,
        &result.instances,
        events.len(),
        cfg.platform.delays.worker_setup,
    )?;
    let row = SummaryRow::new(
        &cfg.scheduler.label(),
        cfg.scenario.lambda_max,
        cfg.scenario.seed,
        &summary,
    );
    Ok(CellOutput {
        events,
        result,
        summary,
        row,
    })
}

/// File stem shared by the artifacts of one cell.
pub fn cell_stem(cfg: &RunConfig) -> String {
    format!(
        "{}_L{}_s{}",
        cfg.scheduler.label(),
        cfg.scenario.lambda_max,
        cfg.scenario.seed
    )
}

fn output_err(path: &Path, e: impl std::fmt::Display) -> ExperimentError {
    ExperimentError::Output {
        path: path.to_path_buf(),
        msg: e.to_string(),
    }
}

/// Writes `<stem>.workload.csv`, `<stem>.events.csv` and
/// `<stem>.summary.json` into `dir` and returns their paths.
pub fn write_cell(dir: &Path, cfg: &RunConfig, out: &CellOutput) -> Result<Vec<PathBuf>, ExperimentError> {
    std::fs::create_dir_all(dir).map_err(|e| output_err(dir, e))?;
    let stem = cell_stem(cfg);
    let workload = dir.join(format!("{stem}.workload.csv"));
    let events = dir.join(format!("{stem}.events.csv"));
    let summary = dir.join(format!("{stem}.summary.json"));
    let f = File::create(&workload).map_err(|e| output_err(&workload, e))?;
    write_trace(&out.events, BufWriter::new(f)).map_err(|e| output_err(&workload, e))?;
    let f = File::create(&events).map_err(|e| output_err(&events, e))?;
    write_events_csv(&out.result.records, BufWriter::new(f)).map_err(|e| output_err(&events, e))?;
    let json = serde_json::json!({
        "scheduler": cfg.scheduler.label(),
        "lambda_max": cfg.scenario.lambda_max,
        "seed": cfg.scenario.seed,
        "summary": out.summary,
        "platform": out.result.stats,
    });
    let text = serde_json::to_string_pretty(&json).map_err(|e| output_err(&summary, e))?;
    std::fs::write(&summary, text).map_err(|e| output_err(&summary, e))?;
    Ok(vec![workload, events, summary])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_rate_gives_empty_summary() {
        let mut cfg = RunConfig::default();
        cfg.scenario.lambda_max = 0.0;
        let out = run_cell(&cfg).unwrap();
        assert_eq!(out.summary.events, 0);
        assert_eq!(out.row.avg_response, 0.0);
        assert!(out.result.instances.is_empty());
    }

    #[test]
    fn cell_files_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::default();
        cfg.scenario.num_classes = 2;
        let out = run_cell(&cfg).unwrap();
        let paths = write_cell(dir.path(), &cfg, &out).unwrap();
        assert_eq!(paths.len(), 3);
        for p in paths {
            assert!(std::fs::metadata(p).unwrap().len() > 0);
        }
    }
}

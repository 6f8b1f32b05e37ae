//! Seed replication, parameter sweeps and CSV output.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::metrics::{aggregate, AggregateError, MetricsReport, Stats, Summary};
use crate::scenario::{Mode, Scenario};
use crate::sim::{run_scenario, SimError, SimOptions};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("thread pool: {0}")]
    Pool(String),
    #[error("cannot sweep `{key}`: {msg}")]
    Sweep { key: String, msg: String },
    #[error("no seeds given")]
    NoSeeds,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub jobs: usize,
    /// Directory for per-run event logs.
    pub event_dir: Option<PathBuf>,
}

/// One (scenario, label) cell of a sweep.
#[derive(Debug, Clone)]
pub struct Cell {
    pub sweep_value: Option<String>,
    pub scenario: Scenario,
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub cell: Cell,
    pub reports: Vec<MetricsReport>,
    pub summary: Summary,
}

/// Runs every (cell, seed) pair, in parallel when `jobs > 1`, and returns
/// results in input order.
pub fn run_cells(cells: &[Cell], seeds: &[u64], opts: &RunOptions) -> Result<Vec<CellResult>, RunnerError> {
    if seeds.is_empty() {
        return Err(RunnerError::NoSeeds);
    }
    let mut sorted_seeds = seeds.to_vec();
    sorted_seeds.sort();
    sorted_seeds.dedup();
    let work: Vec<(usize, u64)> = (0..cells.len()).flat_map(|c| sorted_seeds.iter().map(move |&s| (c, s))).collect();
    let sim_opts = SimOptions { event_log: opts.event_dir.is_some(), check_loops: false };
    let job = |&(c, seed): &(usize, u64)| run_scenario(&cells[c].scenario, seed, sim_opts);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .map_err(|e| RunnerError::Pool(e.to_string()))?;
    let outputs: Vec<_> = pool.install(|| work.par_iter().map(job).collect::<Vec<_>>());

    if let Some(dir) = &opts.event_dir {
        fs::create_dir_all(dir)?;
    }
    let mut results: Vec<CellResult> = Vec::with_capacity(cells.len());
    let mut it = outputs.into_iter();
    for cell in cells {
        let mut reports = Vec::with_capacity(sorted_seeds.len());
        for _ in &sorted_seeds {
            let (report, log) = it.next().expect("one output per job")?;
            if let (Some(dir), Some(log)) = (&opts.event_dir, log) {
                let sweep = cell.sweep_value.as_deref().map_or(String::new(), |v| format!("{v}-"));
                let name = format!("{sweep}{}-seed{}.log", cell.scenario.mode, report.seed);
                fs::write(dir.join(name), log)?;
            }
            reports.push(report);
        }
        let summary = aggregate(&reports)?;
        results.push(CellResult { cell: cell.clone(), reports, summary });
    }
    Ok(results)
}

fn header(sweep_key: Option<&str>, sample: &MetricsReport) -> Vec<String> {
    let mut h = Vec::new();
    if sweep_key.is_some() {
        h.push("sweep_key".to_string());
        h.push("sweep_value".to_string());
    }
    h.push("seed".to_string());
    h.push("mode".to_string());
    for (k, _) in sample.scenario.csv_fields() {
        if k != "seed" && k != "mode" {
            h.push(k.to_string());
        }
    }
    h.extend(sample.values().into_iter().map(|(k, _)| k.to_string()));
    h.push("flagged".to_string());
    h
}

fn scenario_cols(s: &Scenario) -> impl Iterator<Item = String> {
    s.csv_fields().into_iter().filter(|(k, _)| *k != "seed" && *k != "mode").map(|(_, v)| v)
}

fn rows_for(sweep_key: Option<&str>, r: &CellResult, aggregates: &[&str]) -> Vec<Vec<String>> {
    let lead = |seed: String| {
        let mut row = Vec::new();
        if let Some(k) = sweep_key {
            row.push(k.to_string());
            row.push(r.cell.sweep_value.clone().unwrap_or_default());
        }
        row.push(seed);
        row.push(r.cell.scenario.mode.to_string());
        row.extend(scenario_cols(&r.cell.scenario));
        row
    };
    let mut rows = Vec::new();
    for rep in &r.reports {
        let mut row = lead(rep.seed.to_string());
        row.extend(rep.values().into_iter().map(|(_, v)| v.to_string()));
        row.push(rep.flagged_labels());
        rows.push(row);
    }
    let flagged_all = r.summary.flagged_in_all.iter().map(|&n| r.cell.scenario.label(n)).collect::<Vec<_>>().join(";");
    for &which in aggregates {
        let pick = |s: &Stats| match which {
            "mean" => s.mean,
            "min" => s.min,
            "max" => s.max,
            _ => s.stddev,
        };
        let mut row = lead(which.to_string());
        row.extend(r.summary.stats.iter().map(|(_, s)| pick(s).to_string()));
        row.push(flagged_all.clone());
        rows.push(row);
    }
    rows
}

fn write_csv(out: &Path, header: Vec<String>, rows: Vec<Vec<String>>) -> Result<(), RunnerError> {
    let result = (|| -> Result<(), RunnerError> {
        let mut w = csv::Writer::from_path(out)?;
        w.write_record(&header)?;
        for row in rows {
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    })();
    if result.is_err() {
        let _ = fs::remove_file(out);
    }
    result
}

/// Runs `scenario` once per seed; writes one row per run and a mean row.
pub fn cmd_run(scenario: &Scenario, seeds: &[u64], out: &Path, opts: &RunOptions) -> Result<CellResult, RunnerError> {
    let cell = Cell { sweep_value: None, scenario: scenario.clone() };
    let result = run_cells(&[cell], seeds, opts)?.pop().expect("one cell");
    let head = header(None, &result.reports[0]);
    write_csv(out, head, rows_for(None, &result, &["mean"]))?;
    Ok(result)
}

/// Builds the sweep grid: values x modes. Cells a mode cannot run (attack
/// without black holes) are skipped.
pub fn sweep_cells(base: &Scenario, key: &str, values: &[String], modes: &[Mode]) -> Result<Vec<Cell>, RunnerError> {
    let err = |msg: String| RunnerError::Sweep { key: key.to_string(), msg };
    if base.get(key).is_none() || matches!(key, "mode" | "seed") {
        return Err(err("not a sweepable scenario field".into()));
    }
    let mut cells = Vec::new();
    for v in values {
        for &mode in modes {
            let mut s = base.clone();
            s.mode = mode;
            s.set(key, v).map_err(err)?;
            if key == "speed_max_mps" {
                s.speed_min_mps = s.speed_min_mps.min(s.speed_max_mps);
            }
            if mode == Mode::Attack && s.blackhole_count == 0 {
                continue;
            }
            s.validate().map_err(|e| err(e.to_string()))?;
            cells.push(Cell { sweep_value: Some(v.clone()), scenario: s });
        }
    }
    Ok(cells)
}

/// Sweeps `key` over `values` for each mode; writes per-run rows and
/// mean/min/max/stddev rows per cell.
pub fn cmd_sweep(
    base: &Scenario,
    key: &str,
    values: &[String],
    modes: &[Mode],
    seeds: &[u64],
    out: &Path,
    opts: &RunOptions,
) -> Result<Vec<CellResult>, RunnerError> {
    let cells = sweep_cells(base, key, values, modes)?;
    let results = run_cells(&cells, seeds, opts)?;
    let Some(first) = results.first() else {
        return Err(RunnerError::Sweep { key: key.to_string(), msg: "no runnable cells".into() });
    };
    let head = header(Some(key), &first.reports[0]);
    let rows = results.iter().flat_map(|r| rows_for(Some(key), r, &["mean", "min", "max", "stddev"])).collect();
    write_csv(out, head, rows)?;
    Ok(results)
}

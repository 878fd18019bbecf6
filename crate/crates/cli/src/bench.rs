//! Parallel benchmark driver and its CSV and plot outputs.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use rompca_core::sim::{
    medians, run_task, tasks, BenchRecord, MedianRow, Method, Scenario, SimConfig,
};

use crate::error::{CliError, CliResult};
use crate::format::write_csv;
use crate::svg::{line_panels_svg, Panel, Series};

pub const THREADS_ENV: &str = "ROMPCA_THREADS";

pub const RESULT_HEADER: [&str; 7] = [
    "scenario",
    "method",
    "gamma_cell",
    "rep",
    "mse",
    "converged",
    "seconds",
];
pub const MEDIAN_HEADER: [&str; 6] = [
    "scenario",
    "method",
    "gamma_cell",
    "median_mse",
    "n_ok",
    "n_failed",
];

/// Thread count from an explicit value, else `ROMPCA_THREADS`, else rayon's
/// default.
pub fn thread_count(explicit: Option<usize>) -> CliResult<Option<usize>> {
    if let Some(t) = explicit {
        return if t == 0 {
            Err(CliError::Usage("--threads must be at least 1".into()))
        } else {
            Ok(Some(t))
        };
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(t) if t > 0 => Ok(Some(t)),
            _ => Err(CliError::Usage(format!(
                "{THREADS_ENV} must be a positive integer, got {v:?}"
            ))),
        },
        Err(_) => Ok(None),
    }
}

pub fn pool(threads: Option<usize>) -> CliResult<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        b = b.num_threads(t);
    }
    b.build().map_err(|e| CliError::Runtime(e.to_string()))
}

/// Runs every configuration's grid in parallel. Records come back in task
/// order regardless of scheduling; with `record_time` false every
/// `seconds` entry is 0.
pub fn run_parallel(
    configs: &[SimConfig],
    threads: Option<usize>,
    record_time: bool,
) -> CliResult<Vec<BenchRecord>> {
    for c in configs {
        c.validate()?;
    }
    let jobs: Vec<(usize, usize, usize)> = configs
        .iter()
        .enumerate()
        .flat_map(|(i, c)| tasks(c).into_iter().map(move |(g, r)| (i, g, r)))
        .collect();
    let start = Instant::now();
    let clock = move || start.elapsed().as_secs_f64();
    let results: Vec<_> = pool(threads)?.install(|| {
        jobs.par_iter()
            .map(|&(i, g, r)| {
                let c: Option<&dyn Fn() -> f64> = if record_time { Some(&clock) } else { None };
                run_task(&configs[i], g, r, c)
            })
            .collect()
    });
    let mut out = Vec::new();
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

pub fn record_rows(records: &[BenchRecord]) -> Vec<Vec<String>> {
    records
        .iter()
        .map(|r| {
            vec![
                r.scenario.name().to_string(),
                r.method.name().to_string(),
                fmt_f64(r.gamma_cell),
                r.rep.to_string(),
                r.mse.map_or("NA".to_string(), fmt_f64),
                r.converged.to_string(),
                format!("{:.6}", r.seconds),
            ]
        })
        .collect()
}

pub fn median_rows(rows: &[MedianRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|m| {
            vec![
                m.scenario.name().to_string(),
                m.method.name().to_string(),
                fmt_f64(m.gamma_cell),
                if m.median_mse.is_nan() {
                    "NA".into()
                } else {
                    fmt_f64(m.median_mse)
                },
                m.n_ok.to_string(),
                m.n_failed.to_string(),
            ]
        })
        .collect()
}

pub fn write_results(path: &Path, records: &[BenchRecord]) -> CliResult<()> {
    write_csv(path, &RESULT_HEADER, &record_rows(records))
}

pub fn write_medians(path: &Path, rows: &[MedianRow]) -> CliResult<()> {
    write_csv(path, &MEDIAN_HEADER, &median_rows(rows))
}

/// One panel per scenario of median MSE against `gamma_cell`.
pub fn mse_plot(rows: &[MedianRow]) -> String {
    let mut scenarios: Vec<Scenario> = rows.iter().map(|r| r.scenario).collect();
    scenarios.dedup();
    let panels: Vec<Panel> = scenarios
        .iter()
        .map(|&s| Panel {
            title: s.name().to_string(),
            xlabel: "gamma_cell".into(),
            ylabel: "median MSE".into(),
            log_y: true,
            hline: None,
            series: Method::ALL
                .iter()
                .filter_map(|&m| {
                    let points: Vec<(f64, f64)> = rows
                        .iter()
                        .filter(|r| r.scenario == s && r.method == m)
                        .map(|r| (r.gamma_cell, r.median_mse))
                        .collect();
                    (!points.is_empty()).then(|| Series {
                        name: m.name().to_string(),
                        points,
                    })
                })
                .collect(),
        })
        .collect();
    line_panels_svg(&panels)
}

pub fn summarize(records: &[BenchRecord]) -> Vec<MedianRow> {
    medians(records)
}

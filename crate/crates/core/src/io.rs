//! Result emission: atomic file writes, per-trial CSV streams and the
//! benchmark summary JSON.
//!
//! Everything except the timing files is a pure function of the
//! configuration and seed, so repeated runs produce byte-identical output.
//! Wall-clock measurements go to separate `timing_*` files that are excluded
//! from that contract.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::simlab::{BenchmarkResult, TrialRecord};

/// Write via a temporary file plus rename so interrupted runs never leave a
/// truncated file behind.
pub fn atomic_write(path: &Path, contents: &str) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)
}

fn fmt(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v}")
    }
}

/// Per-step log: state, control, true margin, branch and certificates.
pub fn trial_csv(record: &TrialRecord) -> String {
    let n_x = record.steps.first().map_or(0, |s| s.state.len());
    let n_u = record.steps.first().map_or(0, |s| s.control.len());
    let mut header: Vec<String> = vec!["step".into()];
    header.extend((0..n_x).map(|i| format!("x{i}")));
    header.extend((0..n_u).map(|i| format!("u{i}")));
    header.extend(
        ["h_margin", "branch", "r_nominal", "r_robust", "cost"]
            .iter()
            .map(|s| s.to_string()),
    );
    let mut out = header.join(",");
    out.push('\n');
    for s in &record.steps {
        let mut row: Vec<String> = vec![s.step.to_string()];
        row.extend(s.state.iter().map(|v| fmt(*v)));
        row.extend(s.control.iter().map(|v| fmt(*v)));
        row.push(fmt(s.margin));
        row.push(s.branch.to_string());
        row.push(fmt(s.r_nominal));
        row.push(fmt(s.r_robust));
        row.push(fmt(s.cost));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Wall-clock per-step timings, microseconds (non-deterministic by nature).
pub fn timing_csv(record: &TrialRecord) -> String {
    let mut out = String::from("step,step_us\n");
    for (i, us) in record.step_times_us.iter().enumerate() {
        out.push_str(&format!("{i},{us}\n"));
    }
    out
}

#[derive(Serialize)]
struct TimingSummary {
    step_ms_mean: f64,
    step_ms_max: f64,
    per_trial_mean_ms: Vec<f64>,
}

/// Write the whole benchmark output tree into `dir`:
/// `summary.json`, `trials.json`, one `trial_<seed>.csv` per trial (when
/// step logging is on), `belief_<seed>_lap<i>.csv` snapshots and the
/// timing files.
pub fn write_benchmark(
    dir: &Path,
    result: &BenchmarkResult,
    config_echo: &impl Serialize,
) -> io::Result<Vec<PathBuf>> {
    let mut written = Vec::new();

    let summary = serde_json::json!({
        "summary": result.summary,
        "config": config_echo,
        "trials": result.records,
    });
    let summary_path = dir.join("summary.json");
    atomic_write(
        &summary_path,
        &format!("{}\n", serde_json::to_string_pretty(&summary)?),
    )?;
    written.push(summary_path);

    for record in &result.records {
        if !record.steps.is_empty() {
            let p = dir.join(format!("trial_{}.csv", record.seed));
            atomic_write(&p, &trial_csv(record))?;
            written.push(p);
        }
        for (lap, csv) in &record.belief_snapshots {
            let p = dir.join(format!("belief_{}_lap{}.csv", record.seed, lap));
            atomic_write(&p, csv)?;
            written.push(p);
        }
    }

    // Timing goes to its own files so everything above stays reproducible
    // byte for byte.
    let timing = TimingSummary {
        step_ms_mean: mean(result.records.iter().map(|r| r.step_time_mean_ms)),
        step_ms_max: result
            .records
            .iter()
            .map(|r| r.step_time_max_ms)
            .fold(0.0, f64::max),
        per_trial_mean_ms: result.records.iter().map(|r| r.step_time_mean_ms).collect(),
    };
    atomic_write(
        &dir.join("timing.json"),
        &format!("{}\n", serde_json::to_string_pretty(&timing)?),
    )?;
    for record in &result.records {
        if !record.step_times_us.is_empty() {
            atomic_write(
                &dir.join(format!("timing_{}.csv", record.seed)),
                &timing_csv(record),
            )?;
        }
    }

    Ok(written)
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        return 0.0;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

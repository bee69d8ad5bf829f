//! Writing experiment outputs: `report.json` and noise-matrix files per run
//! under `<out>/<run_id>/`, plus one summary row per run in `<out>/results.csv`.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::noise::io::{to_csv, to_pgm};
use crate::noise::NoiseFamily;

use super::config::Variant;
use super::experiment::{validate_run_id, ExperimentReport, RunStatus};

pub const RESULTS_FILE: &str = "results.csv";
pub const RESULTS_HEADER: &str = "run_id,dataset,model,variant,noise_family,p,keep_prob,lambda,seed,\
epochs_run,best_epoch,test_error_percent,true_avg_diagonal,learned_avg_diagonal,status,wall_clock_secs";

const PGM_CELL: usize = 16;

/// Fails with an I/O error unless `dir` exists (it is created if needed)
/// and accepts new files. Meant to run before any training starts.
pub fn preflight_output_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let probe = dir.join(".noisylab-write-probe");
    fs::write(&probe, b"").map_err(|e| Error::io(&probe, e))?;
    fs::remove_file(&probe).map_err(|e| Error::io(&probe, e))
}

/// Pretty JSON with a trailing newline.
pub fn report_json(report: &ExperimentReport) -> Result<String> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    Ok(text)
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn results_row(report: &ExperimentReport) -> String {
    let cfg = &report.config;
    let t = &cfg.training;
    let keep_prob = match t.variant {
        Variant::SoftmaxDropout { keep_prob } => Some(keep_prob),
        _ => None,
    };
    let family = match t.noise.family {
        NoiseFamily::Uniform => "uniform",
        NoiseFamily::NonUniform { .. } => "non_uniform",
    };
    let status = match report.status {
        RunStatus::Completed => "completed",
        RunStatus::Diverged { .. } => "diverged",
    };
    [
        report.run_id.clone(),
        cfg.dataset.kind().to_string(),
        cfg.model.name().to_string(),
        t.variant.name().to_string(),
        family.to_string(),
        t.noise.p.to_string(),
        opt(keep_prob),
        opt(report.trace_lambda),
        t.seed.to_string(),
        report.curve.len().to_string(),
        report.best_epoch.map(|e| e.to_string()).unwrap_or_default(),
        opt(report.test_error_percent),
        report.true_average_diagonal.to_string(),
        opt(report.learned_average_diagonal),
        status.to_string(),
        format!("{:.1}", report.wall_clock_secs),
    ]
    .join(",")
}

/// Replaces the row for `run_id` (first column) or appends one, keeping
/// the header first. The file is rewritten through a temporary and renamed.
pub fn upsert_results_row(path: &Path, run_id: &str, row: &str) -> Result<()> {
    let existing = match fs::read_to_string(path) {
        Ok(text) => text,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut lines: Vec<&str> = existing.lines().filter(|l| !l.is_empty()).collect();
    match lines.first() {
        None => lines.push(RESULTS_HEADER),
        Some(&h) if h == RESULTS_HEADER => {}
        Some(_) => {
            return Err(Error::format(
                path.display().to_string(),
                "existing results file has a different header",
            ))
        }
    }
    let key = format!("{run_id},");
    match lines.iter().position(|l| l.starts_with(&key)) {
        Some(i) => lines[i] = row,
        None => lines.push(row),
    }
    let mut text = lines.join("\n");
    text.push('\n');
    let tmp = path.with_extension("csv.tmp");
    fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn write(path: PathBuf, bytes: &[u8], written: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(())
}

/// Writes every output of one run and returns the paths touched. Rerunning
/// with the same run id overwrites the same files.
pub fn emit_report(report: &ExperimentReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    validate_run_id(&report.run_id)?;
    let run_dir = out_dir.join(&report.run_id);
    fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
    let mut written = Vec::new();
    write(run_dir.join("report.json"), report_json(report)?.as_bytes(), &mut written)?;

    if let Some(learned) = &report.learned_noise {
        for (stem, m) in [("learned_noise", learned.matrix()), ("true_noise", report.true_noise.matrix())] {
            write(run_dir.join(format!("{stem}.csv")), to_csv(m).as_bytes(), &mut written)?;
            write(run_dir.join(format!("{stem}.pgm")), &to_pgm(m, PGM_CELL), &mut written)?;
        }
    }

    let results = out_dir.join(RESULTS_FILE);
    upsert_results_row(&results, &report.run_id, &results_row(report))?;
    written.push(results);
    Ok(written)
}

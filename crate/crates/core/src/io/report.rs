//! CSV output: run traces, ablation tables and merged comparisons.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::trainer::{AblationRow, EvalRow, RunReport};

/// Header of run-trace CSVs.
pub const RUN_HEADER: [&str; 4] = ["step", "domain", "metric", "value"];

pub const BAD_PIXEL_RATE: &str = "bad_pixel_rate";
pub const MEAN_ABS_ERROR: &str = "mean_abs_error";

/// Writes a header and rows with RFC 4180 quoting.
pub fn write_csv<W: std::io::Write, R: AsRef<[String]>>(out: W, header: &[&str], rows: &[R]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.as_ref())?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

fn create(path: &Path) -> Result<std::fs::File> {
    std::fs::File::create(path).map_err(|e| Error::io(path, e))
}

/// Long-format rows of a run trace: two metric rows per (step, domain).
pub fn run_rows(rows: &[EvalRow]) -> Vec<Vec<String>> {
    rows.iter()
        .flat_map(|r| {
            [(BAD_PIXEL_RATE, r.bad_pixel_rate), (MEAN_ABS_ERROR, r.mean_abs_error)]
                .map(|(m, v)| vec![r.step.to_string(), r.domain.clone(), m.to_string(), v.to_string()])
        })
        .collect()
}

pub fn write_run_report(report: &RunReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write_csv(create(path)?, &RUN_HEADER, &run_rows(&report.rows))
}

/// Parses a run-trace CSV back into rows.
pub fn read_run_report(path: impl AsRef<Path>) -> Result<Vec<EvalRow>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != RUN_HEADER {
        return Err(Error::format(0, format!("{}: unexpected header {header:?}", path.display())));
    }
    let mut rows: Vec<EvalRow> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let bad = |m: &str| Error::format(rec.position().map_or(0, |p| p.byte()), format!("{}: {m}", path.display()));
        let step: usize = rec[0].parse().map_err(|_| bad("bad step"))?;
        let value: f64 = rec[3].parse().map_err(|_| bad("bad value"))?;
        let domain = rec[1].to_string();
        let idx = match rows.iter().position(|e| e.step == step && e.domain == domain) {
            Some(i) => i,
            None => {
                rows.push(EvalRow { step, domain, bad_pixel_rate: f64::NAN, mean_abs_error: f64::NAN });
                rows.len() - 1
            }
        };
        match &rec[2] {
            BAD_PIXEL_RATE => rows[idx].bad_pixel_rate = value,
            MEAN_ABS_ERROR => rows[idx].mean_abs_error = value,
            other => return Err(bad(&format!("unknown metric {other:?}"))),
        }
    }
    Ok(rows)
}

pub const ABLATION_HEADER: [&str; 5] = ["strategy", "domain", "bad_pixel_rate", "mean_abs_error", "status"];

pub fn ablation_rows(rows: &[AblationRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            vec![
                r.strategy.clone(),
                r.domain.clone(),
                r.bad_pixel_rate.to_string(),
                r.mean_abs_error.to_string(),
                r.status.clone(),
            ]
        })
        .collect()
}

pub fn write_ablation<W: std::io::Write>(rows: &[AblationRow], out: W) -> Result<()> {
    write_csv(out, &ABLATION_HEADER, &ablation_rows(rows))
}

pub const COMPARISON_HEADER: [&str; 6] = ["run", "domain", "metric", "initial", "final", "relative_change"];

/// Collects every `*.csv` run trace under `dir` (recursively) and tabulates
/// the first and last value of each (domain, metric). The run name is the
/// path relative to `dir` without extension.
pub fn merge_reports(dir: impl AsRef<Path>) -> Result<Vec<Vec<String>>> {
    let dir = dir.as_ref();
    let mut files = Vec::new();
    collect_csv(dir, &mut files)?;
    files.sort();
    let mut table = Vec::new();
    for f in files {
        let Ok(rows) = read_run_report(&f) else { continue };
        let run = f.strip_prefix(dir).unwrap_or(&f).with_extension("").to_string_lossy().into_owned();
        let mut by_domain: BTreeMap<&str, (&EvalRow, &EvalRow)> = BTreeMap::new();
        for r in &rows {
            by_domain
                .entry(r.domain.as_str())
                .and_modify(|(first, last)| {
                    if r.step < first.step {
                        *first = r;
                    }
                    if r.step >= last.step {
                        *last = r;
                    }
                })
                .or_insert((r, r));
        }
        for (domain, (first, last)) in by_domain {
            for (metric, a, b) in [
                (BAD_PIXEL_RATE, first.bad_pixel_rate, last.bad_pixel_rate),
                (MEAN_ABS_ERROR, first.mean_abs_error, last.mean_abs_error),
            ] {
                let rel = if a != 0.0 { (b - a) / a } else { f64::NAN };
                table.push(vec![
                    run.clone(),
                    domain.to_string(),
                    metric.into(),
                    a.to_string(),
                    b.to_string(),
                    rel.to_string(),
                ]);
            }
        }
    }
    Ok(table)
}

fn collect_csv(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_csv(&path, out)?;
        } else if path.extension().is_some_and(|e| e == "csv") {
            out.push(path);
        }
    }
    Ok(())
}

//! Report files: per-seed trace and gap CSVs plus a flat `key=value` summary.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::metrics::{format_float, HorizonTrace};
use crate::offline::GapPoint;
use crate::utilities::UtilityProfile;

use super::experiment::RunReport;

pub const SUMMARY_FILE: &str = "summary.txt";

pub fn trace_file(seed: u64) -> String {
    format!("trace_seed{seed}.csv")
}

pub fn gaps_file(seed: u64) -> String {
    format!("gaps_seed{seed}.csv")
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| io_err(path, e))
}

/// Writes `horizon, offline_objective, avr_objective, gap, relative_gap, kkt_residual`.
pub fn write_gaps_csv<W: Write>(mut out: W, gaps: &[GapPoint], digest: &str) -> Result<()> {
    writeln!(out, "# config_digest={digest}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["horizon", "offline_objective", "avr_objective", "gap", "relative_gap", "kkt_residual"])?;
    for g in gaps {
        w.write_record([
            g.horizon.to_string(),
            format_float(g.offline_objective),
            format_float(g.avr_objective),
            format_float(g.gap),
            format_float(g.relative_gap),
            format_float(g.kkt_residual),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn push_vec(out: &mut Vec<(String, String)>, prefix: &str, xs: &[f64]) {
    for (i, x) in xs.iter().enumerate() {
        out.push((format!("{prefix}_{}", i + 1), format_float(*x)));
    }
}

/// The summary as ordered `(key, value)` pairs.
pub fn summary_entries(report: &RunReport) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = vec![
        ("scenario".into(), report.scenario.clone()),
        ("config_digest".into(), report.digest.clone()),
        ("version".into(), report.version.into()),
        ("horizon".into(), report.horizon.to_string()),
    ];
    match &report.stationary {
        Ok(s) => {
            out.push(("stationary.status".into(), "ok".into()));
            push_vec(&mut out, "stationary.m", &s.theta_pi.m);
            push_vec(&mut out, "stationary.v", &s.theta_pi.v);
            push_vec(&mut out, "stationary.e", &s.e_pi);
            out.push(("stationary.objective".into(), format_float(s.objective)));
            out.push(("stationary.kkt_residual".into(), format_float(s.kkt_residual)));
        }
        Err(e) => out.push(("stationary.status".into(), format!("error: {e}"))),
    }
    for s in &report.seeds {
        let p = format!("seed.{}", s.seed);
        let r = match &s.outcome {
            Ok(r) => r,
            Err(e) => {
                out.push((format!("{p}.status"), format!("error: {e}")));
                continue;
            }
        };
        out.push((format!("{p}.status"), "ok".into()));
        push_vec(&mut out, &format!("{p}.theta_T.m"), &r.theta_final.m);
        push_vec(&mut out, &format!("{p}.theta_T.v"), &r.theta_final.v);
        push_vec(&mut out, &format!("{p}.horizon.mean"), &r.horizon_mean);
        push_vec(&mut out, &format!("{p}.horizon.variance"), &r.horizon_variance);
        push_vec(&mut out, &format!("{p}.horizon.qoe"), &r.horizon_qoe);
        out.push((format!("{p}.avr_objective"), format_float(r.avr_objective)));
        out.push((format!("{p}.offline_objective"), format_float(r.offline_objective)));
        out.push((format!("{p}.offline_kkt_residual"), format_float(r.offline_kkt_residual)));
        push_vec(&mut out, &format!("{p}.deviation.mean"), &r.deviations.mean);
        push_vec(&mut out, &format!("{p}.deviation.variance"), &r.deviations.variance);
        push_vec(&mut out, &format!("{p}.deviation.qoe"), &r.deviations.qoe);
        if let Some(d) = r.stationary_distance {
            out.push((format!("{p}.stationary_distance"), format_float(d)));
        }
        for g in &r.gaps {
            let q = format!("{p}.gap.{}", g.horizon);
            out.push((format!("{q}.gap"), format_float(g.gap)));
            out.push((format!("{q}.relative_gap"), format_float(g.relative_gap)));
            out.push((format!("{q}.kkt_residual"), format_float(g.kkt_residual)));
        }
    }
    for (h, g) in report.median_relative_gaps() {
        out.push((format!("median.relative_gap.{h}"), g.map_or_else(|| "nan".into(), format_float)));
    }
    let checks = report.checks();
    for c in &checks {
        out.push((format!("check.{}", c.name), if c.passed { "pass" } else { "fail" }.into()));
    }
    let all = checks.iter().all(|c| c.passed);
    out.push(("all_checks".into(), if all { "pass" } else { "fail" }.into()));
    out
}

pub fn write_summary<W: Write>(mut out: W, report: &RunReport) -> Result<()> {
    for (k, v) in summary_entries(report) {
        writeln!(out, "{k}={v}")?;
    }
    Ok(())
}

/// Writes every per-seed file and the summary into `dir`. Returns the written paths.
pub fn write_outputs(report: &RunReport, profile: &UtilityProfile, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let per_seed: Vec<Vec<PathBuf>> = report
        .seeds
        .par_iter()
        .filter_map(|s| s.outcome.as_ref().ok().map(|r| (s.seed, r)))
        .map(|(seed, r)| {
            let trace_path = dir.join(trace_file(seed));
            let mut w = create(&trace_path)?;
            r.trace.write_csv(&mut w, profile, Some(&report.digest))?;
            w.flush()?;
            let gaps_path = dir.join(gaps_file(seed));
            let mut w = create(&gaps_path)?;
            write_gaps_csv(&mut w, &r.gaps, &report.digest)?;
            w.flush()?;
            Ok(vec![trace_path, gaps_path])
        })
        .collect::<Result<_>>()?;
    let summary = dir.join(SUMMARY_FILE);
    let mut w = create(&summary)?;
    write_summary(&mut w, report)?;
    w.flush()?;
    let mut paths: Vec<PathBuf> = per_seed.into_iter().flatten().collect();
    paths.push(summary);
    Ok(paths)
}

/// Reads a trace CSV and checks its embedded digest against `expected`.
pub fn load_trace(path: &Path, expected: Option<&str>) -> Result<HorizonTrace> {
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let (trace, digest) = HorizonTrace::read_csv(std::io::BufReader::new(file))?;
    if let Some(want) = expected {
        match digest.as_deref() {
            Some(got) if got == want => {}
            Some(got) => {
                return Err(Error::Config(format!(
                    "{} was produced by config {got}, not {want}",
                    path.display()
                )))
            }
            None => return Err(Error::Config(format!("{} carries no config digest", path.display()))),
        }
    }
    Ok(trace)
}

use std::path::Path;

use super::robustness::{LooReport, SweepRow};
use super::run::SimulationSummary;
use crate::data::io::write_json;
use crate::error::{Error, Result};

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `summary.json`, `shift.csv`, `subgroups.csv` and `runs.csv` in `dir`.
pub fn write_summary(dir: &Path, summary: &SimulationSummary) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(&dir.join("summary.json"), summary)?;

    let path = dir.join("shift.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["location", "before", "after", "delta"])?;
    for r in &summary.location_shift {
        w.write_record([r.location.to_string(), r.before.to_string(), r.after.to_string(), r.delta.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("subgroups.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["feature", "level", "n", "mean_gain", "suppressed"])?;
    for r in &summary.subgroups {
        w.write_record([r.feature.clone(), r.level.clone(), r.n.to_string(), opt(r.mean_gain), r.mean_gain.is_none().to_string()])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("runs.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["run", "cohort_gain", "complier_gain", "complier_fraction", "compliers"])?;
    for r in &summary.runs {
        w.write_record([
            r.run.to_string(),
            r.cohort_gain.to_string(),
            opt(r.complier_gain),
            r.complier_fraction.to_string(),
            r.compliers.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "pi_max",
        "phi",
        "compliance_mode",
        "outcome_mode",
        "z",
        "n_runs",
        "cohort_gain",
        "cohort_ci_low",
        "cohort_ci_high",
        "complier_gain",
        "complier_ci_low",
        "complier_ci_high",
        "complier_fraction",
        "mean_compliance",
    ])?;
    for r in rows {
        w.write_record([
            r.pi_max.to_string(),
            r.phi.to_string(),
            r.compliance_mode.to_string(),
            r.outcome_mode.to_string(),
            r.z.to_string(),
            r.n_runs.to_string(),
            r.cohort_gain.to_string(),
            r.cohort_ci_low.to_string(),
            r.cohort_ci_high.to_string(),
            opt(r.complier_gain),
            opt(r.complier_ci_low),
            opt(r.complier_ci_high),
            r.complier_fraction.to_string(),
            r.mean_compliance.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_loo(path: &Path, report: &LooReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["excluded", "cohort_gain", "complier_gain"])?;
    for r in &report.rows {
        w.write_record([r.excluded.to_string(), r.cohort_gain.to_string(), opt(r.complier_gain)])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

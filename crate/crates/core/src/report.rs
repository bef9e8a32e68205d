//! Batch evaluation reports: per-case CSV rows and a JSON summary.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::TargetMetrics;

pub const CSV_COLUMNS: [&str; 8] = [
    "case_id",
    "target",
    "dsc",
    "msd_mm",
    "sensitivity",
    "precision",
    "tool_call_f1",
    "error",
];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Outcome for one case: metrics per target, or the error that stopped it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub case_id: String,
    pub targets: Vec<TargetMetrics>,
    pub tool_call_f1: Option<f64>,
    pub error: Option<String>,
}

impl CaseReport {
    pub fn ok(case_id: impl Into<String>, targets: Vec<TargetMetrics>, tool_call_f1: Option<f64>) -> Self {
        CaseReport {
            case_id: case_id.into(),
            targets,
            tool_call_f1,
            error: None,
        }
    }

    pub fn failed(case_id: impl Into<String>, error: impl Into<String>) -> Self {
        CaseReport {
            case_id: case_id.into(),
            targets: Vec::new(),
            tool_call_f1: None,
            error: Some(error.into()),
        }
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// One row per (case, target); a failed case gets a single row with only
/// `case_id` and `error` filled.
pub fn write_csv<W: Write>(reports: &[CaseReport], out: W) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for r in reports {
        if let Some(err) = &r.error {
            w.write_record([r.case_id.as_str(), "", "", "", "", "", "", err.as_str()])?;
            continue;
        }
        for t in &r.targets {
            w.write_record([
                r.case_id.clone(),
                t.target.clone(),
                cell(Some(t.dsc)),
                cell(t.msd_mm),
                cell(t.sensitivity),
                cell(t.precision),
                cell(r.tool_call_f1),
                String::new(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Mean and sample standard deviation over the defined values of a column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub n: usize,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len();
        let mean = (n > 0).then(|| values.iter().sum::<f64>() / n as f64);
        let sd = mean.filter(|_| n > 1).map(|m| {
            let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
            (ss / (n - 1) as f64).sqrt()
        });
        Stat { n, mean, sd }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSummary {
    pub dsc: Stat,
    pub msd_mm: Stat,
    pub sensitivity: Stat,
    pub precision: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseFailure {
    pub case_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub cases: usize,
    pub evaluated: usize,
    pub targets: BTreeMap<String, TargetSummary>,
    pub tool_call_f1: Stat,
    pub errors: Vec<CaseFailure>,
}

pub fn summarize(reports: &[CaseReport]) -> BatchSummary {
    let mut cols: BTreeMap<&str, [Vec<f64>; 4]> = BTreeMap::new();
    let mut f1 = Vec::new();
    let mut errors = Vec::new();
    for r in reports {
        if let Some(e) = &r.error {
            errors.push(CaseFailure {
                case_id: r.case_id.clone(),
                error: e.clone(),
            });
            continue;
        }
        f1.extend(r.tool_call_f1);
        for t in &r.targets {
            let c = cols.entry(&t.target).or_default();
            c[0].push(t.dsc);
            c[1].extend(t.msd_mm);
            c[2].extend(t.sensitivity);
            c[3].extend(t.precision);
        }
    }
    BatchSummary {
        cases: reports.len(),
        evaluated: reports.len() - errors.len(),
        targets: cols
            .into_iter()
            .map(|(k, c)| {
                (
                    k.to_string(),
                    TargetSummary {
                        dsc: Stat::of(&c[0]),
                        msd_mm: Stat::of(&c[1]),
                        sensitivity: Stat::of(&c[2]),
                        precision: Stat::of(&c[3]),
                    },
                )
            })
            .collect(),
        tool_call_f1: Stat::of(&f1),
        errors,
    }
}

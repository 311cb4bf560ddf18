use std::fs;
use std::ops::RangeInclusive;
use std::path::Path;

use crate::error::{Error, Result};
use crate::propagation::Stage;
use crate::statistics::{fit_exponential, fit_power_law, power_law_reference};

/// One line of `aggregate.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    pub run_id: String,
    pub layer: usize,
    pub substep: String,
    pub metric: String,
    pub statistic: String,
    pub value: f64,
}

pub fn read_aggregate(path: &Path) -> Result<Vec<AggregateRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Format("empty aggregate file".into()))?;
    if header.trim() != "run_id,layer,substep,metric,statistic,value" {
        return Err(Error::Format(format!("unexpected header `{header}`")));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::Format(format!("line {}: `{line}`", i + 2));
            if f.len() != 6 {
                return Err(bad());
            }
            Ok(AggregateRow {
                run_id: f[0].to_string(),
                layer: f[1].parse().map_err(|_| bad())?,
                substep: f[2].to_string(),
                metric: f[3].to_string(),
                statistic: f[4].to_string(),
                value: f[5].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FitMode {
    Power,
    Exponential,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitReport {
    pub mode: FitMode,
    /// Power-law exponent or exponential rate.
    pub estimate: f64,
    pub r_squared: f64,
    /// `(<d>^(2H) - 1) / 2` from the mean first-branch increment, residual runs only.
    pub tau_reference: Option<f64>,
    pub residual_depth: Option<usize>,
}

fn mean_curve(rows: &[AggregateRow], substep: &str, metric: &str) -> Vec<f64> {
    let max = rows.iter().map(|r| r.layer).max().unwrap_or(0);
    let mut curve = vec![f64::NAN; max + 1];
    for r in rows {
        if r.substep == substep && r.metric == metric && r.statistic == "mean" {
            curve[r.layer] = r.value;
        }
    }
    curve
}

/// Fits the mean `chi` curve at the layer outputs over `layers`.
pub fn fit_report(rows: &[AggregateRow], mode: FitMode, layers: RangeInclusive<usize>) -> Result<FitReport> {
    let output = if rows.iter().any(|r| r.substep == "residual") {
        "residual"
    } else {
        "act"
    };
    let mut curve = mean_curve(rows, output, "chi");
    if curve.is_empty() {
        return Err(Error::Fit("no chi rows in aggregate".into()));
    }
    // layer 0 is the reference
    curve[0] = 1.0;
    let (estimate, r_squared) = match mode {
        FitMode::Power => {
            let f = fit_power_law(&curve, layers)?;
            (f.exponent, f.r_squared)
        }
        FitMode::Exponential => {
            let f = fit_exponential(&curve, layers)?;
            (f.rate, f.r_squared)
        }
    };
    let residual_depth = rows
        .iter()
        .filter_map(|r| match r.substep.parse::<Stage>() {
            Ok(Stage::BranchConv(h)) => Some(h),
            _ => None,
        })
        .max();
    let tau_reference = residual_depth.and_then(|h| {
        let inc: Vec<f64> = mean_curve(rows, "conv.1", "delta_chi_branch")
            .into_iter()
            .filter(|v| v.is_finite())
            .collect();
        if inc.is_empty() {
            None
        } else {
            Some(power_law_reference(inc.iter().sum::<f64>() / inc.len() as f64, h))
        }
    });
    Ok(FitReport {
        mode,
        estimate,
        r_squared,
        tau_reference,
        residual_depth,
    })
}

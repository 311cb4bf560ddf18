use std::ops::RangeInclusive;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerLawFit {
    pub exponent: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExponentialFit {
    pub rate: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least squares of `log chi_l` against `log l`; `chi_means[l]` is layer `l`.
pub fn fit_power_law(chi_means: &[f64], layers: RangeInclusive<usize>) -> Result<PowerLawFit> {
    let pts = points(chi_means, &layers)?;
    if pts.iter().any(|(l, _)| *l == 0.0) {
        return Err(Error::Fit("power-law fit cannot include layer 0".into()));
    }
    let (slope, intercept, r_squared) =
        least_squares(pts.iter().map(|(l, c)| (l.ln(), c.ln())));
    Ok(PowerLawFit {
        exponent: slope,
        intercept,
        r_squared,
    })
}

/// Least squares of `log chi_l` against `l`.
pub fn fit_exponential(chi_means: &[f64], layers: RangeInclusive<usize>) -> Result<ExponentialFit> {
    let pts = points(chi_means, &layers)?;
    let (slope, intercept, r_squared) = least_squares(pts.iter().map(|(l, c)| (*l, c.ln())));
    Ok(ExponentialFit {
        rate: slope,
        intercept,
        r_squared,
    })
}

/// Exponent predicted from the mean first-branch increment of a residual unit
/// with `h` convs: `(d^(2h) - 1) / 2`.
pub fn power_law_reference(mean_branch_increment: f64, h: usize) -> f64 {
    0.5 * (mean_branch_increment.powi(2 * h as i32) - 1.0)
}

fn points(chi_means: &[f64], layers: &RangeInclusive<usize>) -> Result<Vec<(f64, f64)>> {
    let (a, b) = (*layers.start(), *layers.end());
    if b >= chi_means.len() || a > b {
        return Err(Error::Fit(format!(
            "layer range {a}:{b} outside recorded layers 0:{}",
            chi_means.len().saturating_sub(1)
        )));
    }
    if b - a + 1 < 3 {
        return Err(Error::Fit("need at least 3 points".into()));
    }
    let pts: Vec<(f64, f64)> = (a..=b).map(|l| (l as f64, chi_means[l])).collect();
    if let Some((l, c)) = pts.iter().find(|(_, c)| !(*c > 0.0 && c.is_finite())) {
        return Err(Error::Fit(format!("non-positive value {c} at layer {l}")));
    }
    Ok(pts)
}

/// Slope, intercept and coefficient of determination.
fn least_squares(pts: impl Iterator<Item = (f64, f64)> + Clone) -> (f64, f64, f64) {
    let n = pts.clone().count() as f64;
    let (sx, sy) = pts.clone().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / n, sy / n);
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in pts.clone() {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = pts.map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r2 = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    (slope, intercept, r2)
}

use crate::error::{Error, Result};

/// Normalized sensitivity and the derived quantities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sensitivity {
    pub chi: f64,
    /// Signal-to-noise ratio `mu_2(x) / mu_2(dx)` at the layer.
    pub snr: f64,
    /// `chi^2`.
    pub noise_factor: f64,
}

/// `chi = sqrt(noise_l / signal_l) * sqrt(signal_0 / noise_0)`.
pub fn normalized_sensitivity(
    mu2_noise_l: f64,
    mu2_signal_l: f64,
    mu2_noise_0: f64,
    mu2_signal_0: f64,
) -> Result<Sensitivity> {
    for (name, v) in [
        ("noise", mu2_noise_l),
        ("signal", mu2_signal_l),
        ("input noise", mu2_noise_0),
        ("input signal", mu2_signal_0),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Degenerate(format!("{name} second moment is {v}")));
        }
    }
    let noise_factor = (mu2_noise_l / mu2_signal_l) * (mu2_signal_0 / mu2_noise_0);
    Ok(Sensitivity {
        chi: noise_factor.sqrt(),
        snr: mu2_signal_l / mu2_noise_l,
        noise_factor,
    })
}

/// Per-layer increment of `chi` split into normalization and activation parts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepDecomposition {
    pub delta_chi: f64,
    pub delta_chi_bn: f64,
    pub delta_chi_phi: f64,
}

/// From `chi` at the layer input, after normalization, and at the layer output.
pub fn chi_step_decomposition(chi_input: f64, chi_norm: f64, chi_output: f64) -> Result<StepDecomposition> {
    if !(chi_input > 0.0 && chi_norm > 0.0 && chi_output.is_finite() && chi_output >= 0.0) {
        return Err(Error::Degenerate("non-positive sensitivity in step decomposition".into()));
    }
    Ok(StepDecomposition {
        delta_chi: chi_output / chi_input,
        delta_chi_bn: chi_norm / chi_input,
        delta_chi_phi: chi_output / chi_norm,
    })
}

/// Decomposition of the log of an increment over realizations.
#[derive(Clone, Debug, PartialEq)]
pub struct IncrementTerms {
    /// `log(mean delta)`.
    pub m_bar: f64,
    /// `mean(log delta) - log(mean delta)`, never positive.
    pub m_under: f64,
    /// `log delta - mean(log delta)` per kept realization.
    pub s_under: Vec<f64>,
    /// Realizations dropped for a non-positive or non-finite increment.
    pub excluded: usize,
}

pub fn log_increment_terms(deltas: &[f64]) -> Result<IncrementTerms> {
    let kept: Vec<f64> = deltas.iter().copied().filter(|d| *d > 0.0 && d.is_finite()).collect();
    let excluded = deltas.len() - kept.len();
    if kept.len() < 2 {
        return Err(Error::Degenerate(format!(
            "need at least 2 positive increments, got {}",
            kept.len()
        )));
    }
    let n = kept.len() as f64;
    let m_bar = (kept.iter().sum::<f64>() / n).ln();
    let logs: Vec<f64> = kept.iter().map(|d| d.ln()).collect();
    let mean_log = logs.iter().sum::<f64>() / n;
    // rounding can push the Jensen gap just above zero
    let m_under = (mean_log - m_bar).min(0.0);
    Ok(IncrementTerms {
        m_bar,
        m_under,
        s_under: logs.iter().map(|l| l - mean_log).collect(),
        excluded,
    })
}

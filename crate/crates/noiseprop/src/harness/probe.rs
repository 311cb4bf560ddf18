use super::config::ExperimentConfig;
use super::run::Realizations;
use crate::error::{Error, Result};
use crate::propagation::{apply_layer, propagate};
use crate::statistics::{log_increment_terms, noise_moment, second_moments, IncrementTerms};
use crate::tensor::SeedStream;

/// Increment terms of one layer with all earlier layers held fixed.
#[derive(Clone, Debug)]
pub struct FrozenPrefixProbe {
    pub layer: usize,
    pub delta_chi: IncrementTerms,
    pub delta_nu2: IncrementTerms,
    pub delta_mu2_noise: IncrementTerms,
}

/// Freezes layers `1..layer` of realization `realization` and redraws only
/// layer `layer` `resamples` times, estimating the conditional increment terms.
pub fn frozen_prefix_probe(
    config: &ExperimentConfig,
    realization: usize,
    layer: usize,
    resamples: usize,
) -> Result<FrozenPrefixProbe> {
    let config = config.clone().resolve()?;
    if layer == 0 || layer > config.depth {
        return Err(Error::Parameter(format!("probe layer {layer} outside 1..={}", config.depth)));
    }
    let reals = Realizations::new(&config)?;
    let input = reals.input(realization)?;
    let prefix_state = if layer == 1 {
        input
    } else {
        let mut prefix = reals.arch.clone();
        prefix.depth = layer - 1;
        propagate(&prefix, input, reals.weights(realization))?.finish()?.0
    };
    let level = |s: &crate::propagation::PairState| {
        let (nu2, mu2) = second_moments(&s.signal);
        let noise = noise_moment(&s.noise);
        (nu2, noise, (noise / mu2).sqrt())
    };
    let (nu2_0, noise_0, chi_0) = level(&prefix_state);
    let stream = reals.stream(realization).child(SeedStream::PROBE);
    let mut dchi = Vec::with_capacity(resamples);
    let mut dnu2 = Vec::with_capacity(resamples);
    let mut dnoise = Vec::with_capacity(resamples);
    for j in 0..resamples {
        let params = reals.arch.layer_params(stream.child(j as u64), layer)?;
        let out = apply_layer(&reals.arch, &prefix_state, &params, None)?;
        let (nu2, noise, chi) = level(&out.output);
        dchi.push(chi / chi_0);
        dnu2.push(nu2 / nu2_0);
        dnoise.push(noise / noise_0);
    }
    Ok(FrozenPrefixProbe {
        layer,
        delta_chi: log_increment_terms(&dchi)?,
        delta_nu2: log_increment_terms(&dnu2)?,
        delta_mu2_noise: log_increment_terms(&dnoise)?,
    })
}

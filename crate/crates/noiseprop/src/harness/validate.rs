use super::input::generate_noise;
use crate::error::{Error, Result};
use crate::propagation::{propagate, ArchitectureSpec, PairState};
use crate::statistics::{noise_moment, second_moments};
use crate::tensor::{BatchedField, SeedStream};

/// First-order error at one noise scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseCheck {
    pub sigma: f64,
    /// `m2(f(x + dx) - f(x) - dx^L) / m2(dx^L)`, second moments about zero.
    pub ratio: f64,
}

/// Compares the propagated noise with the actual output difference for
/// shrinking noise scales. The same unit-variance direction `u` is scaled by
/// each `sigma`; normalization statistics are frozen at their clean values.
pub fn finite_difference_validate(
    arch: &ArchitectureSpec,
    input: &BatchedField,
    direction: &BatchedField,
    sigmas: &[f64],
    weights: SeedStream,
) -> Result<Vec<NoiseCheck>> {
    if sigmas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Parameter("noise scales must be strictly descending".into()));
    }
    let clean_state = PairState::new(input.clone(), input.zeros_like(), location_of(arch))?;
    let (clean, stats) = propagate(arch, clean_state, weights)?.recording_stats().finish()?;

    let mut out = Vec::with_capacity(sigmas.len());
    for &sigma in sigmas {
        let mut dx = direction.clone();
        dx.scale(sigma);
        let (linear, _) = propagate(arch, PairState::new(input.clone(), dx.clone(), location_of(arch))?, weights)?
            .with_frozen_stats(stats.clone())
            .finish()?;
        let mut shifted = input.clone();
        shifted.add_assign(&dx)?;
        let (moved, _) = propagate(arch, PairState::new(shifted, dx.zeros_like(), location_of(arch))?, weights)?
            .with_frozen_stats(stats.clone())
            .finish()?;
        let denom = noise_moment(&linear.noise);
        if !(denom > 0.0) {
            return Err(Error::Degenerate(format!("propagated noise vanished at sigma {sigma}")));
        }
        let residual = moved.signal.sub(&clean.signal)?.sub(&linear.noise)?;
        out.push(NoiseCheck {
            sigma,
            ratio: noise_moment(&residual) / denom,
        });
    }
    Ok(out)
}

fn location_of(arch: &ArchitectureSpec) -> crate::propagation::Location {
    if arch.family.is_residual() {
        crate::propagation::Location::ResidualAggregate
    } else {
        crate::propagation::Location::PostActivation
    }
}

/// Exact sensitivity of a fully-connected network from its end-to-end Jacobian.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JacobianChi {
    pub chi: f64,
    /// Mean over samples and outputs of the squared Jacobian row norm.
    pub mean_row_norm_sq: f64,
}

/// Propagates each input coordinate direction as a noise field; the summed
/// output second moments equal the mean squared Jacobian row norm, which is
/// the noise gain for unit white noise.
pub fn jacobian_exact_chi(arch: &ArchitectureSpec, input: &BatchedField, weights: SeedStream) -> Result<JacobianChi> {
    if input.extent() != 1 || arch.extent != 1 {
        return Err(Error::Unsupported("exact Jacobian needs a fully-connected network (spatial_n = 1)".into()));
    }
    let (_, mu2_in) = second_moments(input);
    let mut row_norm_sq = 0.0;
    let mut mu2_out = None;
    for i in 0..input.channels() {
        let mut basis = input.zeros_like();
        for m in 0..input.batch() {
            basis.set(m, 0, i, 1.0);
        }
        let (out, _) = propagate(arch, PairState::new(input.clone(), basis, location_of(arch))?, weights)?.finish()?;
        row_norm_sq += noise_moment(&out.noise);
        mu2_out.get_or_insert_with(|| second_moments(&out.signal).1);
    }
    let mu2_out = mu2_out.unwrap_or(0.0);
    if !(mu2_out > 0.0 && mu2_in > 0.0) {
        return Err(Error::Degenerate("zero signal variance".into()));
    }
    Ok(JacobianChi {
        chi: (row_norm_sq * mu2_in / mu2_out).sqrt(),
        mean_row_norm_sq: row_norm_sq,
    })
}

/// Monte-Carlo sensitivity estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MonteCarloChi {
    pub chi: f64,
    pub stderr: f64,
    pub draws: usize,
}

/// `chi` from `draws` white-noise fields on frozen weights, as a ratio of mean
/// output to mean input noise moments; delta-method standard error.
pub fn monte_carlo_chi(
    arch: &ArchitectureSpec,
    input: &BatchedField,
    weights: SeedStream,
    sigma: f64,
    draws: usize,
    noise: SeedStream,
) -> Result<MonteCarloChi> {
    if draws < 2 {
        return Err(Error::Parameter("need at least 2 draws".into()));
    }
    let (_, mu2_in) = second_moments(input);
    let mut mu2_out = 0.0;
    let (mut a, mut b) = (Vec::with_capacity(draws), Vec::with_capacity(draws));
    for k in 0..draws {
        let dx = generate_noise(
            input.batch(),
            input.extent(),
            input.dims(),
            input.channels(),
            sigma,
            &mut noise.child(k as u64).rng(),
        )?;
        b.push(noise_moment(&dx));
        let (out, _) = propagate(arch, PairState::new(input.clone(), dx, location_of(arch))?, weights)?.finish()?;
        a.push(noise_moment(&out.noise));
        if k == 0 {
            mu2_out = second_moments(&out.signal).1;
        }
    }
    let n = draws as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let ratio = ma / mb;
    let mut s = 0.0;
    for (x, y) in a.iter().zip(&b) {
        let r = (x - ma) - ratio * (y - mb);
        s += r * r;
    }
    let var_ratio = s / (n - 1.0) / n / (mb * mb);
    let scale = mu2_in / mu2_out;
    let chi = (ratio * scale).sqrt();
    Ok(MonteCarloChi {
        chi,
        stderr: chi / (2.0 * ratio) * var_ratio.sqrt(),
        draws,
    })
}

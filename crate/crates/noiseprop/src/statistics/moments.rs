use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::tensor::{gram, BatchedField};

/// Per-channel and channel-averaged moments of order `p`, averaged over (batch, sites).
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelMoments {
    pub order: u32,
    /// `nu_{p,c}`: mean of `v^p`.
    pub noncentral: Vec<f64>,
    /// `mu_{p,c}`: mean of `(v - nu_{1,c})^p`.
    pub central: Vec<f64>,
    pub nu: f64,
    pub mu: f64,
}

pub fn channel_moments(field: &BatchedField, p: u32) -> Result<ChannelMoments> {
    if !matches!(p, 1 | 2 | 4) {
        return Err(Error::Parameter(format!("moment order must be 1, 2 or 4, got {p}")));
    }
    let c = field.channels();
    let s = field.samples() as f64;
    let means = channel_means(field);
    let mut noncentral = vec![0.0; c];
    let mut central = vec![0.0; c];
    for row in field.values().chunks_exact(c) {
        for ch in 0..c {
            let v = row[ch];
            let d = v - means[ch];
            noncentral[ch] += v.powi(p as i32);
            central[ch] += d.powi(p as i32);
        }
    }
    noncentral.iter_mut().for_each(|v| *v /= s);
    central.iter_mut().for_each(|v| *v /= s);
    let nu = noncentral.iter().sum::<f64>() / c as f64;
    let mu = central.iter().sum::<f64>() / c as f64;
    Ok(ChannelMoments {
        order: p,
        noncentral,
        central,
        nu,
        mu,
    })
}

pub(crate) fn channel_means(field: &BatchedField) -> Vec<f64> {
    let c = field.channels();
    let mut means = vec![0.0; c];
    for row in field.values().chunks_exact(c) {
        means.iter_mut().zip(row).for_each(|(m, v)| *m += v);
    }
    let s = field.samples() as f64;
    means.iter_mut().for_each(|m| *m /= s);
    means
}

/// Channel-averaged second moments: `(nu_2, mu_2)`.
pub fn second_moments(field: &BatchedField) -> (f64, f64) {
    let c = field.channels();
    let means = channel_means(field);
    let (mut nu, mut mu) = (0.0, 0.0);
    for row in field.values().chunks_exact(c) {
        for (v, m) in row.iter().zip(&means) {
            nu += v * v;
            let d = v - m;
            mu += d * d;
        }
    }
    let n = field.values().len() as f64;
    (nu / n, mu / n)
}

/// Second moment of a noise field about zero.
///
/// Noise is centred by construction, so its second moment is taken about the
/// true mean rather than the sample mean.
pub fn noise_moment(field: &BatchedField) -> f64 {
    field.values().iter().map(|v| v * v).sum::<f64>() / field.values().len() as f64
}

/// Per-channel version of [`noise_moment`].
pub fn noise_moment_per_channel(field: &BatchedField) -> Vec<f64> {
    let c = field.channels();
    let mut acc = vec![0.0; c];
    for row in field.values().chunks_exact(c) {
        acc.iter_mut().zip(row).for_each(|(a, v)| *a += v * v);
    }
    let s = field.samples() as f64;
    acc.iter_mut().for_each(|a| *a /= s);
    acc
}

/// Mean of `|v|` over everything.
pub fn abs_first_moment(field: &BatchedField) -> f64 {
    field.values().iter().map(|v| v.abs()).sum::<f64>() / field.values().len() as f64
}

/// Channel-averaged central fourth moment.
pub fn central_fourth_moment(field: &BatchedField) -> f64 {
    let c = field.channels();
    let means = channel_means(field);
    let mut acc = 0.0;
    for row in field.values().chunks_exact(c) {
        for (v, m) in row.iter().zip(&means) {
            let d = (v - m) * (v - m);
            acc += d * d;
        }
    }
    acc / field.values().len() as f64
}

/// Effective rank with a flag set when the covariance is zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EffectiveRank {
    pub value: f64,
    pub zero_covariance: bool,
}

/// `trace(Cov) / lambda_max(Cov)` of the feature-vector covariance; 1 for a zero covariance.
pub fn effective_rank(field: &BatchedField) -> f64 {
    effective_rank_flagged(field).value
}

pub fn effective_rank_flagged(field: &BatchedField) -> EffectiveRank {
    effective_rank_of_covariance(&covariance(field), field.channels())
}

/// Population covariance `C x C` of the feature vectors, row-major.
pub fn covariance(field: &BatchedField) -> Vec<f64> {
    let c = field.channels();
    let means = channel_means(field);
    let mut centered = field.values().to_vec();
    for row in centered.chunks_exact_mut(c) {
        row.iter_mut().zip(&means).for_each(|(v, m)| *v -= m);
    }
    let mut cov = vec![0.0; c * c];
    gram(field.samples(), c, &centered, &mut cov);
    let s = field.samples() as f64;
    cov.iter_mut().for_each(|v| *v /= s);
    cov
}

pub fn effective_rank_of_covariance(cov: &[f64], c: usize) -> EffectiveRank {
    let trace: f64 = (0..c).map(|i| cov[i * c + i]).sum();
    if trace <= 0.0 {
        return EffectiveRank {
            value: 1.0,
            zero_covariance: true,
        };
    }
    let mut m = DMatrix::from_row_slice(c, c, cov);
    // symmetrize against rounding in the product
    let mt = m.transpose();
    m = (m + mt) * 0.5;
    let eig = SymmetricEigen::new(m);
    let top = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if top <= 0.0 {
        return EffectiveRank {
            value: 1.0,
            zero_covariance: true,
        };
    }
    EffectiveRank {
        value: (trace / top).clamp(1.0, c as f64),
        zero_covariance: false,
    }
}

/// Fraction of (site, channel) units whose sign over the batch is not constant.
pub fn coactivation_mixed_fraction(field: &BatchedField) -> f64 {
    let c = field.channels();
    let units = field.sites() * c;
    let mut pos = vec![false; units];
    let mut nonpos = vec![false; units];
    for sample in field.values().chunks_exact(units) {
        for (u, &v) in sample.iter().enumerate() {
            if v > 0.0 {
                pos[u] = true;
            } else {
                nonpos[u] = true;
            }
        }
    }
    let mixed = pos.iter().zip(&nonpos).filter(|(p, n)| **p && **n).count();
    mixed as f64 / units as f64
}

/// Mean over (batch, sites, channels) of the product of the per-channel
/// centred skip and branch fields.
pub fn residual_cross_term(skip: &BatchedField, branch: &BatchedField) -> Result<f64> {
    if !skip.same_shape(branch) {
        return Err(Error::Shape("skip and branch shapes differ".into()));
    }
    let c = skip.channels();
    let ms = channel_means(skip);
    let mb = channel_means(branch);
    let mut acc = 0.0;
    for (rs, rb) in skip.values().chunks_exact(c).zip(branch.values().chunks_exact(c)) {
        for ch in 0..c {
            acc += (rs[ch] - ms[ch]) * (rb[ch] - mb[ch]);
        }
    }
    Ok(acc / skip.values().len() as f64)
}

//! Scalar measurements of fields and their evolution with depth.

mod accumulator;
mod fit;
mod meter;
mod moments;
mod sensitivity;

pub use accumulator::{histogram_log_moment, merge, AccumulatorSet, Histogram, HistogramPolicy, Key, StatsAccumulator};
pub use fit::{fit_exponential, fit_power_law, power_law_reference, ExponentialFit, PowerLawFit};
pub use meter::{LayerStats, Meter, Metric};
pub use moments::{
    abs_first_moment, central_fourth_moment, channel_moments, coactivation_mixed_fraction, covariance,
    effective_rank, effective_rank_flagged, effective_rank_of_covariance, noise_moment, noise_moment_per_channel,
    residual_cross_term, second_moments, ChannelMoments, EffectiveRank,
};
pub use sensitivity::{
    chi_step_decomposition, log_increment_terms, normalized_sensitivity, IncrementTerms, Sensitivity,
    StepDecomposition,
};

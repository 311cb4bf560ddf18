use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::propagation::{phi_pair_step, Activation, Family, PairState, Snapshot, Stage};
use crate::tensor::BatchedField;

use super::moments::{
    abs_first_moment, central_fourth_moment, coactivation_mixed_fraction, effective_rank, noise_moment,
    residual_cross_term, second_moments,
};

macro_rules! metrics {
    ($($variant:ident => $name:literal,)*) => {
        /// Scalar measured at a snapshot.
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum Metric {
            $($variant,)*
        }

        impl Metric {
            pub const ALL: &'static [Metric] = &[$(Metric::$variant,)*];

            pub fn name(self) -> &'static str {
                match self {
                    $(Metric::$variant => $name,)*
                }
            }
        }

        impl FromStr for Metric {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok(Metric::$variant),)*
                    _ => Err(Error::Parameter(format!("unknown metric `{s}`"))),
                }
            }
        }
    };
}

metrics! {
    Nu2Signal => "nu2_signal",
    Mu2Signal => "mu2_signal",
    Mu2Noise => "mu2_noise",
    Mu2OverNu2 => "mu2_over_nu2",
    Chi => "chi",
    DeltaChi => "delta_chi",
    LogDeltaChi => "log_delta_chi",
    DeltaChiBn => "delta_chi_bn",
    LogDeltaChiBn => "log_delta_chi_bn",
    DeltaChiPhi => "delta_chi_phi",
    LogDeltaChiPhi => "log_delta_chi_phi",
    DeltaChiBranch => "delta_chi_branch",
    LogDeltaChiBranch => "log_delta_chi_branch",
    Nu2Ratio => "nu2_ratio",
    Mu2NoiseRatio => "mu2_noise_ratio",
    LogNu2Ratio => "log_nu2_ratio",
    LogMu2NoiseRatio => "log_mu2_noise_ratio",
    DeltaNu2 => "delta_nu2",
    LogDeltaNu2 => "log_delta_nu2",
    DeltaMu2Noise => "delta_mu2_noise",
    LogDeltaMu2Noise => "log_delta_mu2_noise",
    ReffSignal => "reff_signal",
    ReffNoise => "reff_noise",
    Mu4 => "mu4",
    Nu1Abs => "nu1_abs",
    CoactivationMixed => "coactivation_mixed",
    CrossTerm => "cross_term",
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Metric {
    /// The log-companion of an increment metric.
    pub fn log_companion(self) -> Option<Metric> {
        Some(match self {
            Metric::DeltaChi => Metric::LogDeltaChi,
            Metric::DeltaChiBn => Metric::LogDeltaChiBn,
            Metric::DeltaChiPhi => Metric::LogDeltaChiPhi,
            Metric::DeltaChiBranch => Metric::LogDeltaChiBranch,
            Metric::DeltaNu2 => Metric::LogDeltaNu2,
            Metric::DeltaMu2Noise => Metric::LogDeltaMu2Noise,
            _ => return None,
        })
    }
}

/// All statistics measured at one (layer, stage).
#[derive(Clone, Debug, PartialEq)]
pub struct LayerStats {
    pub layer: usize,
    pub stage: Stage,
    pub values: Vec<(Metric, f64)>,
    pub degenerate: bool,
}

impl LayerStats {
    pub fn get(&self, metric: Metric) -> Option<f64> {
        self.values.iter().find(|(m, _)| *m == metric).map(|(_, v)| *v)
    }
}

/// The moments of one snapshot that later steps refer back to.
#[derive(Clone, Copy, Debug)]
struct Level {
    chi: f64,
    nu2: f64,
    noise: f64,
}

/// Streams snapshots of one realization and turns them into [`LayerStats`].
///
/// Holds the input reference, the previous layer output and, for residual
/// networks, the previous aggregate signal.
pub struct Meter {
    family: Family,
    activation: Activation,
    residual_depth: usize,
    enabled: Option<BTreeSet<Metric>>,
    reference: Option<(f64, f64, f64)>,
    previous: Option<Level>,
    norm_chi: Option<f64>,
    skip: Option<BatchedField>,
    branch: Option<BatchedField>,
    degenerate: bool,
}

impl Meter {
    /// `enabled = None` measures everything.
    pub fn new(family: Family, activation: Activation, residual_depth: usize, enabled: Option<BTreeSet<Metric>>) -> Self {
        Meter {
            family,
            activation,
            residual_depth,
            enabled,
            reference: None,
            previous: None,
            norm_chi: None,
            skip: None,
            branch: None,
            degenerate: false,
        }
    }

    fn on(&self, m: Metric) -> bool {
        self.enabled.as_ref().is_none_or(|s| s.contains(&m))
    }

    /// True once any snapshot of this realization had zero signal or noise.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn observe(&mut self, snap: &Snapshot) -> Result<Vec<LayerStats>> {
        let state = &snap.state;
        let (nu2, mu2) = second_moments(&state.signal);
        let noise = noise_moment(&state.noise);
        if snap.stage == Stage::Input {
            self.reference = Some((nu2, mu2, noise));
            self.previous = None;
            self.skip = None;
            self.degenerate = !(mu2 > 0.0 && noise > 0.0);
        } else if !(mu2 > 0.0 && noise > 0.0) {
            self.degenerate = true;
        }
        let (nu2_0, mu2_0, noise_0) = self
            .reference
            .ok_or_else(|| Error::Parameter("meter needs the input snapshot first".into()))?;

        let mut out = Out::new(&self.enabled, self.degenerate, snap.layer, snap.stage);
        out.put(Metric::Nu2Signal, nu2);
        out.put(Metric::Mu2Signal, mu2);
        out.put(Metric::Mu2Noise, noise);
        let chi = if self.degenerate {
            f64::NAN
        } else {
            ((noise / mu2) * (mu2_0 / noise_0)).sqrt()
        };
        out.put_log_safe(Metric::Chi, chi);
        let mut extra = Vec::new();

        match snap.stage {
            Stage::Input => {
                self.previous = Some(Level { chi, nu2, noise });
                if self.family.is_residual() {
                    self.skip = Some(state.signal.clone());
                }
            }
            Stage::Conv => {}
            Stage::Norm => {
                out.norm_terms(state);
                if let Some(p) = self.previous {
                    out.put_delta(Metric::DeltaChiBn, chi / p.chi);
                }
                self.norm_chi = Some(chi);
            }
            Stage::Activation => {
                out.output_terms(mu2, Level { chi, nu2, noise }, self.previous, (nu2_0, mu2_0, noise_0));
                if let Some(zc) = self.norm_chi.take() {
                    out.put_delta(Metric::DeltaChiPhi, chi / zc);
                }
                out.rank_terms(state);
                if self.activation == Activation::Relu && out.on(Metric::CoactivationMixed) {
                    out.put(Metric::CoactivationMixed, coactivation_mixed_fraction(&state.signal));
                }
                self.previous = Some(Level { chi, nu2, noise });
            }
            Stage::BranchNorm(h) => {
                out.norm_terms(state);
                if h == 1 {
                    if let Some(p) = self.previous {
                        out.put_delta(Metric::DeltaChiBn, chi / p.chi);
                    }
                    self.norm_chi = Some(chi);
                    let wants_rank = [Metric::ReffSignal, Metric::ReffNoise, Metric::CoactivationMixed]
                        .iter()
                        .any(|m| self.on(*m));
                    if wants_rank {
                        let act = phi_pair_step(state.clone(), self.activation);
                        let mut side = Out::new(&self.enabled, self.degenerate, snap.layer, Stage::BranchActivation(1));
                        side.rank_terms(&act);
                        if self.activation == Activation::Relu && side.on(Metric::CoactivationMixed) {
                            side.put(Metric::CoactivationMixed, coactivation_mixed_fraction(&act.signal));
                        }
                        extra.push(side.finish());
                    }
                }
            }
            Stage::BranchActivation(h) => {
                if h == 1 {
                    out.rank_terms(state);
                    if self.activation == Activation::Relu && out.on(Metric::CoactivationMixed) {
                        out.put(Metric::CoactivationMixed, coactivation_mixed_fraction(&state.signal));
                    }
                }
            }
            Stage::BranchConv(h) => {
                if h == 1 {
                    if let Some(p) = self.previous {
                        out.put_delta(Metric::DeltaChiBranch, chi / p.chi);
                    }
                    if let Some(zc) = self.norm_chi.take() {
                        out.put_delta(Metric::DeltaChiPhi, chi / zc);
                    }
                }
                if h == self.residual_depth && self.on(Metric::CrossTerm) {
                    self.branch = Some(state.signal.clone());
                }
            }
            Stage::Residual => {
                out.output_terms(mu2, Level { chi, nu2, noise }, self.previous, (nu2_0, mu2_0, noise_0));
                if let (Some(skip), Some(branch)) = (&self.skip, self.branch.take()) {
                    out.put(Metric::CrossTerm, residual_cross_term(skip, &branch)?);
                }
                self.previous = Some(Level { chi, nu2, noise });
                self.skip = Some(state.signal.clone());
            }
        }
        let mut all = vec![out.finish()];
        all.extend(extra);
        Ok(all)
    }
}

/// Builder for one [`LayerStats`], applying the metric filter and the
/// degenerate exclusion.
struct Out<'m> {
    enabled: &'m Option<BTreeSet<Metric>>,
    degenerate: bool,
    stats: LayerStats,
}

impl<'m> Out<'m> {
    fn new(enabled: &'m Option<BTreeSet<Metric>>, degenerate: bool, layer: usize, stage: Stage) -> Self {
        Out {
            enabled,
            degenerate,
            stats: LayerStats {
                layer,
                stage,
                values: Vec::new(),
                degenerate,
            },
        }
    }

    fn on(&self, m: Metric) -> bool {
        self.enabled.as_ref().is_none_or(|s| s.contains(&m))
    }

    fn put(&mut self, m: Metric, v: f64) {
        if self.on(m) && v.is_finite() {
            self.stats.values.push((m, v));
        }
    }

    /// Values that are meaningless for a degenerate realization.
    fn put_log_safe(&mut self, m: Metric, v: f64) {
        if !self.degenerate {
            self.put(m, v);
        }
    }

    fn put_delta(&mut self, m: Metric, v: f64) {
        if self.degenerate || !(v > 0.0) {
            return;
        }
        self.put(m, v);
        if let Some(lm) = m.log_companion() {
            self.put(lm, v.ln());
        }
    }

    fn norm_terms(&mut self, state: &PairState) {
        if self.on(Metric::Mu4) {
            self.put(Metric::Mu4, central_fourth_moment(&state.signal));
        }
        if self.on(Metric::Nu1Abs) {
            self.put(Metric::Nu1Abs, abs_first_moment(&state.signal));
        }
    }

    fn rank_terms(&mut self, state: &PairState) {
        if self.on(Metric::ReffSignal) {
            self.put(Metric::ReffSignal, effective_rank(&state.signal));
        }
        if self.on(Metric::ReffNoise) {
            self.put(Metric::ReffNoise, effective_rank(&state.noise));
        }
    }

    fn output_terms(&mut self, mu2: f64, now: Level, prev: Option<Level>, reference: (f64, f64, f64)) {
        let (nu2_0, _, noise_0) = reference;
        if now.nu2 > 0.0 {
            self.put(Metric::Mu2OverNu2, mu2 / now.nu2);
        }
        if self.degenerate {
            return;
        }
        self.put(Metric::Nu2Ratio, now.nu2 / nu2_0);
        self.put(Metric::Mu2NoiseRatio, now.noise / noise_0);
        self.put(Metric::LogNu2Ratio, (now.nu2 / nu2_0).ln());
        self.put(Metric::LogMu2NoiseRatio, (now.noise / noise_0).ln());
        if let Some(p) = prev {
            self.put_delta(Metric::DeltaChi, now.chi / p.chi);
            self.put_delta(Metric::DeltaNu2, now.nu2 / p.nu2);
            self.put_delta(Metric::DeltaMu2Noise, now.noise / p.noise);
        }
    }

    fn finish(self) -> LayerStats {
        self.stats
    }
}

use std::collections::BTreeSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::input::InputKind;
use crate::error::{Error, Result};
use crate::propagation::{Activation, ArchitectureSpec, Family};
use crate::statistics::{HistogramPolicy, Metric};

/// One experiment, as read from JSON. Missing keys take the desk-scale defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub family: Family,
    #[serde(rename = "depth_L")]
    pub depth: usize,
    #[serde(rename = "residual_H", default = "defaults::residual_depth")]
    pub residual_depth: usize,
    #[serde(rename = "width_N")]
    pub width: usize,
    #[serde(rename = "kernel_K", default = "defaults::kernel")]
    pub kernel: usize,
    #[serde(rename = "spatial_n", default = "defaults::extent")]
    pub extent: usize,
    #[serde(rename = "spatial_d", default = "defaults::dims")]
    pub dims: usize,
    /// Channels of the raw input; defaults to the width.
    #[serde(default)]
    pub input_channels: Option<usize>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default = "defaults::bn_epsilon")]
    pub bn_epsilon: f64,
    #[serde(rename = "batch_M", default = "defaults::batch")]
    pub batch: usize,
    #[serde(default = "defaults::sigma_dx")]
    pub sigma_dx: f64,
    #[serde(default = "defaults::realizations")]
    pub realizations: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub input_kind: InputKind,
    #[serde(default)]
    pub dataset_path: Option<PathBuf>,
    /// Stride of the initial conv; `None` means no initial conv. Residual
    /// families always get one (stride 1 unless set).
    #[serde(default)]
    pub initial_conv_stride: Option<usize>,
    #[serde(default)]
    pub probe_layers: Vec<usize>,
    #[serde(default)]
    pub histogram_layers: Vec<usize>,
    #[serde(default = "defaults::yes")]
    pub fixed_input: bool,
    #[serde(default = "defaults::threads")]
    pub threads: usize,
    /// Metric names to record; `None` records all.
    #[serde(default)]
    pub metrics: Option<Vec<String>>,
    #[serde(default = "defaults::histogram_bins")]
    pub histogram_bins: usize,
    #[serde(default = "defaults::histogram_range")]
    pub histogram_range: [f64; 2],
}

mod defaults {
    pub fn residual_depth() -> usize {
        2
    }
    pub fn kernel() -> usize {
        3
    }
    pub fn extent() -> usize {
        8
    }
    pub fn dims() -> usize {
        2
    }
    pub fn bn_epsilon() -> f64 {
        0.001
    }
    pub fn batch() -> usize {
        32
    }
    pub fn sigma_dx() -> f64 {
        1e-3
    }
    pub fn realizations() -> usize {
        200
    }
    pub fn yes() -> bool {
        true
    }
    pub fn threads() -> usize {
        1
    }
    pub fn histogram_bins() -> usize {
        100
    }
    pub fn histogram_range() -> [f64; 2] {
        [-5.0, 5.0]
    }
}

/// Kernel extent of the initial convolution.
pub const INITIAL_CONV_KERNEL: usize = 3;

impl ExperimentConfig {
    /// Desk-scale config for `family` with the given depth and width.
    pub fn new(family: Family, depth: usize, width: usize) -> Self {
        ExperimentConfig {
            family,
            depth,
            residual_depth: defaults::residual_depth(),
            width,
            kernel: defaults::kernel(),
            extent: defaults::extent(),
            dims: defaults::dims(),
            input_channels: None,
            activation: Activation::default(),
            bn_epsilon: defaults::bn_epsilon(),
            batch: defaults::batch(),
            sigma_dx: defaults::sigma_dx(),
            realizations: defaults::realizations(),
            master_seed: 0,
            input_kind: InputKind::default(),
            dataset_path: None,
            initial_conv_stride: None,
            probe_layers: Vec::new(),
            histogram_layers: Vec::new(),
            fixed_input: true,
            threads: defaults::threads(),
            metrics: None,
            histogram_bins: defaults::histogram_bins(),
            histogram_range: defaults::histogram_range(),
        }
    }

    /// Fills derived defaults and checks every constraint.
    pub fn resolve(mut self) -> Result<Self> {
        if self.input_kind == InputKind::DatasetFile {
            self.input_channels.get_or_insert(3);
        }
        self.input_channels.get_or_insert(self.width);
        if self.family.is_residual() && self.initial_conv_stride.is_none() {
            self.initial_conv_stride = Some(1);
        }
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        let fail = |k: &str, m: String| Err(Error::config(k, m));
        if self.depth == 0 {
            return fail("depth_L", "must be >= 1".into());
        }
        if self.width == 0 {
            return fail("width_N", "must be >= 1".into());
        }
        if self.family.is_residual() && self.residual_depth == 0 {
            return fail("residual_H", "must be >= 1".into());
        }
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return fail("kernel_K", format!("must be odd, got {}", self.kernel));
        }
        if self.extent == 0 {
            return fail("spatial_n", "must be >= 1".into());
        }
        if !(1..=2).contains(&self.dims) {
            return fail("spatial_d", format!("must be 1 or 2, got {}", self.dims));
        }
        if self.input_channels == Some(0) {
            return fail("input_channels", "must be >= 1".into());
        }
        if !(self.bn_epsilon >= 0.0 && self.bn_epsilon.is_finite()) {
            return fail("bn_epsilon", format!("must be finite and >= 0, got {}", self.bn_epsilon));
        }
        if self.batch == 0 {
            return fail("batch_M", "must be >= 1".into());
        }
        if self.family.uses_bn() && self.batch < 2 {
            return fail("batch_M", "normalization needs at least 2 samples".into());
        }
        if !(self.sigma_dx > 0.0 && self.sigma_dx.is_finite()) {
            return fail("sigma_dx", format!("must be > 0, got {}", self.sigma_dx));
        }
        if self.realizations == 0 {
            return fail("realizations", "must be >= 1".into());
        }
        if self.threads == 0 {
            return fail("threads", "must be >= 1".into());
        }
        if let Some(s) = self.initial_conv_stride {
            if !(1..=2).contains(&s) {
                return fail("initial_conv_stride", format!("must be 1 or 2, got {s}"));
            }
            if s == 2 && self.extent % 2 != 0 {
                return fail("initial_conv_stride", format!("stride 2 needs even spatial_n, got {}", self.extent));
            }
        }
        if let Some(l) = self.probe_layers.iter().find(|l| **l > self.depth) {
            return fail("probe_layers", format!("layer {l} exceeds depth {}", self.depth));
        }
        if let Some(l) = self.histogram_layers.iter().find(|l| **l > self.depth) {
            return fail("histogram_layers", format!("layer {l} exceeds depth {}", self.depth));
        }
        if self.histogram_bins == 0 {
            return fail("histogram_bins", "must be >= 1".into());
        }
        let [lo, hi] = self.histogram_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return fail("histogram_range", format!("need lo < hi, got [{lo}, {hi}]"));
        }
        if let Some(names) = &self.metrics {
            for n in names {
                if n.parse::<Metric>().is_err() {
                    return fail("metrics", format!("unknown metric `{n}`"));
                }
            }
        }
        match self.input_kind {
            InputKind::GaussianMixture if self.extent != 1 || self.input_channels != Some(1) => {
                return fail("input_kind", "gaussian_mixture needs spatial_n = 1 and input_channels = 1".into());
            }
            InputKind::DatasetFile => {
                if self.dataset_path.is_none() {
                    return fail("dataset_path", "required for dataset_file input".into());
                }
                if self.extent != 32 || self.dims != 2 || self.input_channels != Some(3) {
                    return fail("input_kind", "dataset_file needs spatial_n = 32, spatial_d = 2, input_channels = 3".into());
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn input_channels(&self) -> usize {
        self.input_channels.unwrap_or(self.width)
    }

    /// Architecture of the part after the initial conv.
    pub fn architecture(&self) -> ArchitectureSpec {
        let (extent, input_channels) = match self.initial_conv_stride {
            Some(s) => (self.extent / s, self.width),
            None => (self.extent, self.input_channels()),
        };
        ArchitectureSpec {
            family: self.family,
            depth: self.depth,
            residual_depth: self.residual_depth,
            width: self.width,
            kernel: self.kernel,
            extent,
            dims: self.dims,
            activation: self.activation,
            bn_epsilon: self.bn_epsilon,
            input_channels,
        }
    }

    pub fn metric_set(&self) -> Option<BTreeSet<Metric>> {
        self.metrics
            .as_ref()
            .map(|names| names.iter().filter_map(|n| n.parse().ok()).collect())
    }

    pub fn histogram_policy(&self) -> Option<HistogramPolicy> {
        if self.histogram_layers.is_empty() {
            return None;
        }
        Some(HistogramPolicy {
            layers: self.histogram_layers.clone(),
            bins: self.histogram_bins,
            lo: self.histogram_range[0],
            hi: self.histogram_range[1],
        })
    }

    /// Canonical JSON: sorted keys, every field present.
    pub fn canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        serde_json::to_string(&value).expect("value serializes")
    }

    /// SHA-256 of the canonical JSON without the thread count, which does not
    /// affect results.
    pub fn digest(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("threads");
        }
        let text = serde_json::to_string(&value).expect("value serializes");
        Sha256::digest(text.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

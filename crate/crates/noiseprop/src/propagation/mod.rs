//! Simultaneous propagation of (signal, noise) pairs through the network families.

mod steps;

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use steps::{
    bn_pair_step, bn_pair_step_with, bnff_layer, conv_pair_step, phi_pair_step, resnet_unit,
    vanilla_layer, Activation, BNStats, BnffOutput, BranchStep, Location, PairState, ResnetOutput,
};

use crate::error::{Error, Result};
use crate::tensor::{he_init_conv, ConvParams, SeedStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Vanilla,
    BnFeedforward,
    BnResnet,
    ResnetNoBn,
}

impl Family {
    pub fn is_residual(self) -> bool {
        matches!(self, Family::BnResnet | Family::ResnetNoBn)
    }

    pub fn uses_bn(self) -> bool {
        matches!(self, Family::BnFeedforward | Family::BnResnet)
    }
}

/// One network instance. `extent` and `input_channels` describe the field
/// entering [`propagate`], i.e. after any initial convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchitectureSpec {
    pub family: Family,
    pub depth: usize,
    pub residual_depth: usize,
    pub width: usize,
    pub kernel: usize,
    pub extent: usize,
    pub dims: usize,
    pub activation: Activation,
    pub bn_epsilon: f64,
    pub input_channels: usize,
}

impl ArchitectureSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parameter(m));
        if self.depth == 0 {
            return bad("depth must be >= 1".into());
        }
        if self.family.is_residual() && self.residual_depth == 0 {
            return bad("residual depth must be >= 1".into());
        }
        if self.width == 0 || self.input_channels == 0 || self.extent == 0 {
            return bad("widths and extent must be >= 1".into());
        }
        if self.kernel % 2 == 0 {
            return bad(format!("kernel extent must be odd, got {}", self.kernel));
        }
        if !(1..=2).contains(&self.dims) {
            return bad(format!("spatial dims must be 1 or 2, got {}", self.dims));
        }
        if !(self.bn_epsilon >= 0.0 && self.bn_epsilon.is_finite()) {
            return bad("bn epsilon must be finite and >= 0".into());
        }
        if self.family.is_residual() && self.input_channels != self.width {
            return bad("residual input must already have the network width".into());
        }
        Ok(())
    }

    /// Convs per layer: 1 for feedforward, `H` for residual units.
    pub fn convs_per_layer(&self) -> usize {
        if self.family.is_residual() {
            self.residual_depth
        } else {
            1
        }
    }

    /// Snapshots emitted per layer.
    pub fn snapshots_per_layer(&self) -> usize {
        match self.family {
            Family::Vanilla => 1,
            Family::BnFeedforward => 3,
            Family::BnResnet | Family::ResnetNoBn => 2 * self.residual_depth + 1,
        }
    }

    /// He-initialized parameters of layer `layer` (1-based) from the weight stream.
    pub fn layer_params(&self, weights: SeedStream, layer: usize) -> Result<Vec<ConvParams>> {
        let stream = weights.child(layer as u64);
        (1..=self.convs_per_layer())
            .map(|h| {
                let c_in = if layer == 1 && !self.family.is_residual() {
                    self.input_channels
                } else {
                    self.width
                };
                he_init_conv(
                    self.kernel,
                    self.dims,
                    c_in,
                    self.width,
                    &mut stream.child(h as u64).rng(),
                )
            })
            .collect()
    }
}

/// Position of a snapshot within a layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Input,
    Conv,
    Norm,
    Activation,
    BranchNorm(usize),
    BranchActivation(usize),
    BranchConv(usize),
    Residual,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stage::Input => write!(f, "input"),
            Stage::Conv => write!(f, "conv"),
            Stage::Norm => write!(f, "bn"),
            Stage::Activation => write!(f, "act"),
            Stage::BranchNorm(h) => write!(f, "bn.{h}"),
            Stage::BranchActivation(h) => write!(f, "act.{h}"),
            Stage::BranchConv(h) => write!(f, "conv.{h}"),
            Stage::Residual => write!(f, "residual"),
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let branch = |rest: &str| {
            rest.parse::<usize>()
                .map_err(|_| Error::Format(format!("bad substep `{s}`")))
        };
        Ok(match s {
            "input" => Stage::Input,
            "conv" => Stage::Conv,
            "bn" => Stage::Norm,
            "act" => Stage::Activation,
            "residual" => Stage::Residual,
            _ => match s.split_once('.') {
                Some(("bn", h)) => Stage::BranchNorm(branch(h)?),
                Some(("act", h)) => Stage::BranchActivation(branch(h)?),
                Some(("conv", h)) => Stage::BranchConv(branch(h)?),
                _ => return Err(Error::Format(format!("bad substep `{s}`"))),
            },
        })
    }
}

#[derive(Clone, Debug)]
pub struct Snapshot {
    pub layer: usize,
    pub stage: Stage,
    pub state: PairState,
}

/// Result of applying one layer.
#[derive(Clone, Debug)]
pub struct LayerOutput {
    pub snapshots: Vec<(Stage, PairState)>,
    pub output: PairState,
    pub stats: Vec<BNStats>,
}

/// Applies layer `layer` with the given parameters. `frozen` replaces the
/// batch statistics of the layer's normalization steps when given.
pub fn apply_layer(
    arch: &ArchitectureSpec,
    state: &PairState,
    params: &[ConvParams],
    frozen: Option<&[BNStats]>,
) -> Result<LayerOutput> {
    match arch.family {
        Family::Vanilla => {
            let out = vanilla_layer(state, &params[0], arch.activation)?;
            Ok(LayerOutput {
                snapshots: vec![(Stage::Activation, out.clone())],
                output: out,
                stats: Vec::new(),
            })
        }
        Family::BnFeedforward => {
            let conv = conv_pair_step(state, &params[0])?;
            let (norm, stats) = match frozen {
                Some(f) => {
                    let s = f.first().ok_or_else(|| {
                        Error::Parameter("missing frozen normalization statistics".into())
                    })?;
                    (bn_pair_step_with(conv.clone(), s, arch.bn_epsilon)?, s.clone())
                }
                None => bn_pair_step(conv.clone(), arch.bn_epsilon)?,
            };
            let out = phi_pair_step(norm.clone(), arch.activation);
            Ok(LayerOutput {
                snapshots: vec![
                    (Stage::Conv, conv),
                    (Stage::Norm, norm),
                    (Stage::Activation, out.clone()),
                ],
                output: out,
                stats: vec![stats],
            })
        }
        Family::BnResnet | Family::ResnetNoBn => {
            let bn = arch.family == Family::BnResnet;
            let unit = steps::resnet_unit_with(state, params, arch.activation, arch.bn_epsilon, bn, frozen)?;
            let mut snapshots = Vec::with_capacity(arch.snapshots_per_layer());
            for (i, step) in unit.steps.into_iter().enumerate() {
                let h = i + 1;
                match step.norm {
                    Some(z) => snapshots.push((Stage::BranchNorm(h), z)),
                    None => snapshots.push((Stage::BranchActivation(h), step.activation)),
                }
                snapshots.push((Stage::BranchConv(h), step.conv));
            }
            snapshots.push((Stage::Residual, unit.output.clone()));
            Ok(LayerOutput {
                snapshots,
                output: unit.output,
                stats: unit.stats,
            })
        }
    }
}

/// Lazily propagates an input through all layers, yielding snapshots in
/// depth order and keeping only the current layer in memory.
pub struct Propagation<'a> {
    arch: &'a ArchitectureSpec,
    weights: SeedStream,
    state: PairState,
    layer: usize,
    pending: VecDeque<Snapshot>,
    frozen: Option<Vec<BNStats>>,
    cursor: usize,
    record: Option<Vec<BNStats>>,
    failed: bool,
}

/// Starts propagation of `input` with weights drawn from `weights`.
pub fn propagate(arch: &ArchitectureSpec, input: PairState, weights: SeedStream) -> Result<Propagation<'_>> {
    arch.validate()?;
    let f = &input.signal;
    if f.channels() != arch.input_channels || f.extent() != arch.extent || f.dims() != arch.dims {
        return Err(Error::Shape(format!(
            "input shape ({}^{}, {} channels) does not match architecture ({}^{}, {} channels)",
            f.extent(),
            f.dims(),
            f.channels(),
            arch.extent,
            arch.dims,
            arch.input_channels
        )));
    }
    if !input.signal.same_shape(&input.noise) {
        return Err(Error::Shape("signal and noise shapes differ".into()));
    }
    let mut pending = VecDeque::new();
    pending.push_back(Snapshot {
        layer: 0,
        stage: Stage::Input,
        state: input.clone(),
    });
    Ok(Propagation {
        arch,
        weights,
        state: input,
        layer: 0,
        pending,
        frozen: None,
        cursor: 0,
        record: None,
        failed: false,
    })
}

impl<'a> Propagation<'a> {
    /// Use previously recorded normalization statistics instead of batch statistics.
    pub fn with_frozen_stats(mut self, stats: Vec<BNStats>) -> Self {
        self.frozen = Some(stats);
        self
    }

    /// Keep the normalization statistics used at every step.
    pub fn recording_stats(mut self) -> Self {
        self.record = Some(Vec::new());
        self
    }

    pub fn recorded_stats(&self) -> Option<&[BNStats]> {
        self.record.as_deref()
    }

    pub fn take_recorded_stats(&mut self) -> Vec<BNStats> {
        self.record.take().unwrap_or_default()
    }

    /// Runs to the end and returns the final state.
    pub fn finish(mut self) -> Result<(PairState, Vec<BNStats>)> {
        while let Some(s) = self.next() {
            s?;
        }
        let stats = self.take_recorded_stats();
        Ok((self.state, stats))
    }

    fn advance(&mut self) -> Result<()> {
        let layer = self.layer + 1;
        let params = self.arch.layer_params(self.weights, layer)?;
        let per_layer = if self.arch.family.uses_bn() {
            self.arch.convs_per_layer()
        } else {
            0
        };
        let frozen = match &self.frozen {
            Some(f) => {
                let end = self.cursor + per_layer;
                if end > f.len() {
                    return Err(Error::Parameter("not enough frozen normalization statistics".into()));
                }
                Some(&f[self.cursor..end])
            }
            None => None,
        };
        let out = apply_layer(self.arch, &self.state, &params, frozen)?;
        self.cursor += per_layer;
        if let Some(r) = &mut self.record {
            r.extend(out.stats);
        }
        for (stage, state) in out.snapshots {
            self.pending.push_back(Snapshot { layer, stage, state });
        }
        self.state = out.output;
        self.layer = layer;
        Ok(())
    }
}

impl Iterator for Propagation<'_> {
    type Item = Result<Snapshot>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        if self.pending.is_empty() && self.layer < self.arch.depth {
            if let Err(e) = self.advance() {
                self.failed = true;
                return Some(Err(e));
            }
        }
        self.pending.pop_front().map(Ok)
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{conv_linear, conv_periodic, BatchedField, ConvParams};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Linear,
}

impl Activation {
    pub fn value(self, y: f64) -> f64 {
        match self {
            Activation::Relu => y.max(0.0),
            Activation::Tanh => y.tanh(),
            Activation::Linear => y,
        }
    }

    /// Derivative, with the ReLU kink taken as 1/2.
    pub fn derivative(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else if y < 0.0 {
                    0.0
                } else {
                    0.5
                }
            }
            Activation::Tanh => {
                let t = y.tanh();
                1.0 - t * t
            }
            Activation::Linear => 1.0,
        }
    }
}

/// Where in the network a pair of fields lives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Location {
    PostConv,
    PostNorm,
    PostActivation,
    ResidualAggregate,
}

/// Signal and noise fields propagated together.
#[derive(Clone, Debug, PartialEq)]
pub struct PairState {
    pub signal: BatchedField,
    pub noise: BatchedField,
    pub location: Location,
}

impl PairState {
    pub fn new(signal: BatchedField, noise: BatchedField, location: Location) -> Result<Self> {
        if !signal.same_shape(&noise) {
            return Err(Error::Shape("signal and noise shapes differ".into()));
        }
        Ok(PairState {
            signal,
            noise,
            location,
        })
    }
}

/// Per-channel batch statistics used by one normalization step.
#[derive(Clone, Debug, PartialEq)]
pub struct BNStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BNStats {
    pub fn of(field: &BatchedField) -> Self {
        let c = field.channels();
        let s = field.samples() as f64;
        let mut mean = vec![0.0; c];
        for row in field.values().chunks_exact(c) {
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= s);
        let mut var = vec![0.0; c];
        for row in field.values().chunks_exact(c) {
            for ((acc, v), m) in var.iter_mut().zip(row).zip(&mean) {
                let d = v - m;
                *acc += d * d;
            }
        }
        var.iter_mut().for_each(|v| *v /= s);
        BNStats { mean, var }
    }
}

/// `x = phi(y)`, `dx = phi'(y) * dy`.
pub fn phi_pair_step(state: PairState, activation: Activation) -> PairState {
    let PairState {
        mut signal,
        mut noise,
        ..
    } = state;
    if activation != Activation::Linear {
        for (y, dy) in signal.values_mut().iter_mut().zip(noise.values_mut()) {
            *dy *= activation.derivative(*y);
            *y = activation.value(*y);
        }
    }
    PairState {
        signal,
        noise,
        location: Location::PostActivation,
    }
}

/// Batch normalization with statistics of the signal over (batch, sites);
/// the noise is divided by the same scale, statistics held constant.
pub fn bn_pair_step(state: PairState, eps: f64) -> Result<(PairState, BNStats)> {
    let stats = BNStats::of(&state.signal);
    let out = bn_pair_step_with(state, &stats, eps)?;
    Ok((out, stats))
}

/// Normalization with externally supplied statistics.
pub fn bn_pair_step_with(state: PairState, stats: &BNStats, eps: f64) -> Result<PairState> {
    let c = state.signal.channels();
    if stats.mean.len() != c || stats.var.len() != c {
        return Err(Error::Shape("normalization statistics do not match channels".into()));
    }
    let mut inv = Vec::with_capacity(c);
    for (ch, v) in stats.var.iter().enumerate() {
        let d = v + eps;
        if d <= 0.0 {
            return Err(Error::DegenerateChannel { channel: ch });
        }
        inv.push(1.0 / d.sqrt());
    }
    let PairState {
        mut signal,
        mut noise,
        ..
    } = state;
    for row in signal.values_mut().chunks_exact_mut(c) {
        for ((v, m), s) in row.iter_mut().zip(&stats.mean).zip(&inv) {
            *v = (*v - m) * s;
        }
    }
    for row in noise.values_mut().chunks_exact_mut(c) {
        row.iter_mut().zip(&inv).for_each(|(v, s)| *v *= s);
    }
    Ok(PairState {
        signal,
        noise,
        location: Location::PostNorm,
    })
}

/// Convolution of both fields; the noise path carries no bias.
pub fn conv_pair_step(state: &PairState, params: &ConvParams) -> Result<PairState> {
    Ok(PairState {
        signal: conv_periodic(&state.signal, params)?,
        noise: conv_linear(&state.noise, params)?,
        location: Location::PostConv,
    })
}

/// conv then activation.
pub fn vanilla_layer(state: &PairState, params: &ConvParams, activation: Activation) -> Result<PairState> {
    Ok(phi_pair_step(conv_pair_step(state, params)?, activation))
}

/// Output of one batch-normalized feedforward layer with its sub-steps.
#[derive(Clone, Debug)]
pub struct BnffOutput {
    pub conv: PairState,
    pub norm: PairState,
    pub output: PairState,
    pub stats: BNStats,
}

/// conv, then batch norm, then activation.
pub fn bnff_layer(
    state: &PairState,
    params: &ConvParams,
    activation: Activation,
    eps: f64,
) -> Result<BnffOutput> {
    let conv = conv_pair_step(state, params)?;
    let (norm, stats) = bn_pair_step(conv.clone(), eps)?;
    let output = phi_pair_step(norm.clone(), activation);
    Ok(BnffOutput {
        conv,
        norm,
        output,
        stats,
    })
}

/// Sub-steps of one residual branch repetition.
#[derive(Clone, Debug)]
pub struct BranchStep {
    /// Post-normalization state, or `None` without normalization.
    pub norm: Option<PairState>,
    pub activation: PairState,
    pub conv: PairState,
}

#[derive(Clone, Debug)]
pub struct ResnetOutput {
    pub steps: Vec<BranchStep>,
    pub output: PairState,
    pub stats: Vec<BNStats>,
}

/// Pre-activation residual unit: `H` repetitions of [BN] -> phi -> conv on the
/// branch, then the branch output is added to the input on both fields.
pub fn resnet_unit(
    state: &PairState,
    params: &[ConvParams],
    activation: Activation,
    eps: f64,
    bn_enabled: bool,
) -> Result<ResnetOutput> {
    resnet_unit_with(state, params, activation, eps, bn_enabled, None)
}

pub(crate) fn resnet_unit_with(
    state: &PairState,
    params: &[ConvParams],
    activation: Activation,
    eps: f64,
    bn_enabled: bool,
    frozen: Option<&[BNStats]>,
) -> Result<ResnetOutput> {
    if params.is_empty() {
        return Err(Error::Parameter("residual unit needs at least one conv".into()));
    }
    let mut steps = Vec::with_capacity(params.len());
    let mut stats_used = Vec::new();
    let mut current = state.clone();
    for (h, p) in params.iter().enumerate() {
        let (norm, pre) = if bn_enabled {
            let z = match frozen {
                Some(f) => {
                    let s = f.get(h).ok_or_else(|| {
                        Error::Parameter("missing frozen normalization statistics".into())
                    })?;
                    stats_used.push(s.clone());
                    bn_pair_step_with(current, s, eps)?
                }
                None => {
                    let (z, s) = bn_pair_step(current, eps)?;
                    stats_used.push(s);
                    z
                }
            };
            (Some(z.clone()), z)
        } else {
            (None, current)
        };
        let act = phi_pair_step(pre, activation);
        let conv = conv_pair_step(&act, p)?;
        current = conv.clone();
        steps.push(BranchStep {
            norm,
            activation: act,
            conv,
        });
    }
    let mut signal = state.signal.clone();
    let mut noise = state.noise.clone();
    signal.add_assign(&current.signal)?;
    noise.add_assign(&current.noise)?;
    Ok(ResnetOutput {
        steps,
        output: PairState {
            signal,
            noise,
            location: Location::ResidualAggregate,
        },
        stats: stats_used,
    })
}

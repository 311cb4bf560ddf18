use std::cell::RefCell;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{gemm, BatchedField};
use crate::error::{Error, Result};

/// Kernel and bias of one periodic convolution.
///
/// Weights are laid out `[tap][c_in][c_out]`, taps row-major over the `d` axes,
/// so the flat buffer is already the `(K^d * c_in) x c_out` matrix acting on
/// receptive-field rows.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    pub kernel: usize,
    pub dims: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvParams {
    pub fn zeros(kernel: usize, dims: usize, in_channels: usize, out_channels: usize) -> Result<Self> {
        check_params(kernel, dims, in_channels, out_channels)?;
        Ok(ConvParams {
            kernel,
            dims,
            in_channels,
            out_channels,
            stride: 1,
            weights: vec![0.0; taps(kernel, dims) * in_channels * out_channels],
            bias: vec![0.0; out_channels],
        })
    }

    /// 1x1 kernel mapping each channel to itself.
    pub fn identity(dims: usize, channels: usize) -> Result<Self> {
        let mut p = ConvParams::zeros(1, dims, channels, channels)?;
        for c in 0..channels {
            p.weights[c * channels + c] = 1.0;
        }
        Ok(p)
    }

    pub fn with_stride(mut self, stride: usize) -> Result<Self> {
        if !(1..=2).contains(&stride) {
            return Err(Error::Parameter(format!("stride must be 1 or 2, got {stride}")));
        }
        self.stride = stride;
        Ok(self)
    }

    /// Kernel taps `K^d`.
    pub fn taps(&self) -> usize {
        taps(self.kernel, self.dims)
    }

    /// Receptive-field width `K^d * c_in`.
    pub fn fan_in(&self) -> usize {
        self.taps() * self.in_channels
    }

    pub fn weight(&self, tap: usize, c_in: usize, c_out: usize) -> f64 {
        self.weights[(tap * self.in_channels + c_in) * self.out_channels + c_out]
    }

    /// The mirrored parameters `(-W, -b)`.
    pub fn negated(&self) -> Self {
        ConvParams {
            weights: self.weights.iter().map(|w| -w).collect(),
            bias: self.bias.iter().map(|b| -b).collect(),
            ..self.clone()
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        ConvParams {
            weights: self.weights.iter().map(|w| w * factor).collect(),
            bias: self.bias.iter().map(|b| b * factor).collect(),
            ..self.clone()
        }
    }
}

fn taps(kernel: usize, dims: usize) -> usize {
    kernel.pow(dims as u32)
}

fn check_params(kernel: usize, dims: usize, c_in: usize, c_out: usize) -> Result<()> {
    if kernel == 0 || kernel % 2 == 0 {
        return Err(Error::Parameter(format!("kernel extent must be odd, got {kernel}")));
    }
    if !(1..=2).contains(&dims) {
        return Err(Error::Parameter(format!("spatial dims must be 1 or 2, got {dims}")));
    }
    if c_in == 0 || c_out == 0 {
        return Err(Error::Parameter("channel counts must be >= 1".into()));
    }
    Ok(())
}

/// He initialization: iid `N(0, 2 / (K^d c_in))` weights, zero bias, stride 1.
pub fn he_init_conv<R: Rng + ?Sized>(
    kernel: usize,
    dims: usize,
    in_channels: usize,
    out_channels: usize,
    rng: &mut R,
) -> Result<ConvParams> {
    let mut p = ConvParams::zeros(kernel, dims, in_channels, out_channels)?;
    let std = (2.0 / p.fan_in() as f64).sqrt();
    for w in p.weights.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *w = std * z;
    }
    Ok(p)
}

thread_local! {
    static SCRATCH: RefCell<Vec<f64>> = const { RefCell::new(Vec::new()) };
}

/// For each output site and kernel tap, the flat input site it reads.
fn source_sites(extent: usize, dims: usize, kernel: usize, stride: usize) -> Vec<usize> {
    let out_extent = extent / stride;
    let off = (kernel / 2) as i64;
    let n = extent as i64;
    let wrap = |a: usize, k: usize| ((stride * a) as i64 + k as i64 - off).rem_euclid(n) as usize;
    let mut table = Vec::with_capacity(out_extent.pow(dims as u32) * kernel.pow(dims as u32));
    match dims {
        1 => {
            for a in 0..out_extent {
                for k in 0..kernel {
                    table.push(wrap(a, k));
                }
            }
        }
        _ => {
            for a0 in 0..out_extent {
                for a1 in 0..out_extent {
                    for k0 in 0..kernel {
                        for k1 in 0..kernel {
                            table.push(wrap(a0, k0) * extent + wrap(a1, k1));
                        }
                    }
                }
            }
        }
    }
    table
}

fn check_input(input: &BatchedField, kernel: usize, dims: usize, stride: usize) -> Result<()> {
    if input.dims() != dims {
        return Err(Error::Shape(format!(
            "field has {} spatial dims, kernel has {dims}",
            input.dims()
        )));
    }
    if stride == 2 && input.extent() % 2 != 0 {
        return Err(Error::Shape(format!(
            "stride 2 requires even spatial extent, got {}",
            input.extent()
        )));
    }
    if !(1..=2).contains(&stride) || kernel % 2 == 0 {
        return Err(Error::Shape(format!("bad kernel {kernel} / stride {stride}")));
    }
    Ok(())
}

/// Periodic convolution with centered kernel (offset `K/2`) and circular wrapping.
///
/// Computed weights-first: for each tap, the input times that tap's weights,
/// then a shifted gather-add into the output.
pub fn conv_periodic(input: &BatchedField, params: &ConvParams) -> Result<BatchedField> {
    conv_impl(input, params, true)
}

/// Convolution without the bias term, as applied to noise fields.
pub(crate) fn conv_linear(input: &BatchedField, params: &ConvParams) -> Result<BatchedField> {
    conv_impl(input, params, false)
}

fn conv_impl(input: &BatchedField, params: &ConvParams, with_bias: bool) -> Result<BatchedField> {
    check_input(input, params.kernel, params.dims, params.stride)?;
    if input.channels() != params.in_channels {
        return Err(Error::Shape(format!(
            "field has {} channels, conv expects {}",
            input.channels(),
            params.in_channels
        )));
    }
    let (c_in, c_out, taps) = (params.in_channels, params.out_channels, params.taps());
    let sites_in = input.sites();
    let out_extent = input.extent() / params.stride;
    let mut out = BatchedField::zeros(input.batch(), out_extent, params.dims, c_out)?;
    let sites_out = out.sites();

    // per tap: partial = input * w[tap], then out[a] += partial[src(a, tap)]
    let rows = input.samples();
    let table = source_sites(input.extent(), params.dims, params.kernel, params.stride);
    let values = out.values_mut();
    if with_bias {
        for row in values.chunks_exact_mut(c_out) {
            row.copy_from_slice(&params.bias);
        }
    }
    SCRATCH.with(|cell| {
        let mut partial = cell.borrow_mut();
        partial.resize(rows * c_out, 0.0);
        for t in 0..taps {
            let w = &params.weights[t * c_in * c_out..(t + 1) * c_in * c_out];
            gemm(rows, c_in, c_out, input.values(), w, &mut partial);
            for m in 0..input.batch() {
                let src_block = &partial[m * sites_in * c_out..(m + 1) * sites_in * c_out];
                let dst_block = &mut values[m * sites_out * c_out..(m + 1) * sites_out * c_out];
                for a in 0..sites_out {
                    let s = table[a * taps + t];
                    let src = &src_block[s * c_out..(s + 1) * c_out];
                    let dst = &mut dst_block[a * c_out..(a + 1) * c_out];
                    dst.iter_mut().zip(src).for_each(|(d, r)| *d += r);
                }
            }
        }
    });
    Ok(out)
}

/// Receptive-field matrix: one row of `K^d * c_in` input values per output
/// feature vector, column `tap * c_in + c`.
#[derive(Clone, Debug, PartialEq)]
pub struct RFMatrix {
    pub batch: usize,
    pub out_extent: usize,
    pub dims: usize,
    pub kernel: usize,
    pub in_channels: usize,
    pub values: Vec<f64>,
}

impl RFMatrix {
    /// Columns `R = K^d * c_in`.
    pub fn width(&self) -> usize {
        self.kernel.pow(self.dims as u32) * self.in_channels
    }

    pub fn rows(&self) -> usize {
        self.batch * self.out_extent.pow(self.dims as u32)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width() + col]
    }

    /// Column indices belonging to input channel `c`; each has `K^d` members.
    pub fn channel_index_set(&self, c: usize) -> Vec<usize> {
        let taps = self.kernel.pow(self.dims as u32);
        (0..taps).map(|t| t * self.in_channels + c).collect()
    }

    /// `RF * W + b` as a field.
    pub fn apply(&self, params: &ConvParams) -> Result<BatchedField> {
        if params.kernel != self.kernel
            || params.dims != self.dims
            || params.in_channels != self.in_channels
        {
            return Err(Error::Shape("conv params do not match receptive field".into()));
        }
        let mut out = BatchedField::zeros(self.batch, self.out_extent, self.dims, params.out_channels)?;
        let c_out = params.out_channels;
        gemm(self.rows(), self.width(), c_out, &self.values, &params.weights, out.values_mut());
        for row in out.values_mut().chunks_exact_mut(c_out) {
            row.iter_mut().zip(&params.bias).for_each(|(v, b)| *v += b);
        }
        Ok(out)
    }
}

pub fn receptive_field(input: &BatchedField, kernel: usize, stride: usize) -> Result<RFMatrix> {
    check_input(input, kernel, input.dims(), stride)?;
    let dims = input.dims();
    let c = input.channels();
    let taps = kernel.pow(dims as u32);
    let out_extent = input.extent() / stride;
    let sites_out = out_extent.pow(dims as u32);
    let sites_in = input.sites();
    let width = taps * c;
    let table = source_sites(input.extent(), dims, kernel, stride);
    let mut values = vec![0.0; input.batch() * sites_out * width];
    for m in 0..input.batch() {
        for a in 0..sites_out {
            let row = &mut values[(m * sites_out + a) * width..][..width];
            for (t, &s) in table[a * taps..(a + 1) * taps].iter().enumerate() {
                row[t * c..(t + 1) * c].copy_from_slice(&input.values()[(m * sites_in + s) * c..][..c]);
            }
        }
    }
    Ok(RFMatrix {
        batch: input.batch(),
        out_extent,
        dims,
        kernel,
        in_channels: c,
        values,
    })
}

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::BatchedField;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    #[default]
    GaussianIid,
    /// Two-component mixture `N(-1, 0.3^2)` / `N(1, 0.3^2)`, scalar inputs only.
    GaussianMixture,
    DatasetFile,
}

pub const MIXTURE_CENTER: f64 = 1.0;
pub const MIXTURE_STD: f64 = 0.3;

/// Synthetic input batch. `DatasetFile` must go through [`load_dataset_binary`].
pub fn generate_input<R: Rng + ?Sized>(
    kind: InputKind,
    batch: usize,
    extent: usize,
    dims: usize,
    channels: usize,
    rng: &mut R,
) -> Result<BatchedField> {
    let mut field = BatchedField::zeros(batch, extent, dims, channels)?;
    match kind {
        InputKind::GaussianIid => {
            for v in field.values_mut() {
                *v = rng.sample(StandardNormal);
            }
        }
        InputKind::GaussianMixture => {
            if extent != 1 || channels != 1 {
                return Err(Error::config(
                    "input_kind",
                    format!("gaussian_mixture needs spatial_n = 1 and one channel, got n = {extent}, {channels} channels"),
                ));
            }
            for v in field.values_mut() {
                let center = if rng.random::<bool>() { MIXTURE_CENTER } else { -MIXTURE_CENTER };
                let z: f64 = rng.sample(StandardNormal);
                *v = center + MIXTURE_STD * z;
            }
        }
        InputKind::DatasetFile => {
            return Err(Error::config("input_kind", "dataset inputs are loaded, not generated"));
        }
    }
    Ok(field)
}

/// White Gaussian noise with standard deviation `sigma`.
pub fn generate_noise<R: Rng + ?Sized>(
    batch: usize,
    extent: usize,
    dims: usize,
    channels: usize,
    sigma: f64,
    rng: &mut R,
) -> Result<BatchedField> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Parameter(format!("noise std must be > 0, got {sigma}")));
    }
    let mut field = BatchedField::zeros(batch, extent, dims, channels)?;
    for v in field.values_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v = sigma * z;
    }
    Ok(field)
}

pub const RECORD_PIXELS: usize = 32 * 32 * 3;
pub const RECORD_BYTES: usize = 1 + RECORD_PIXELS;

/// Loads 32x32x3 image records (label byte, then red, green and blue planes),
/// scales pixels to [0, 1] and standardizes globally.
pub fn load_dataset_binary(path: &Path) -> Result<BatchedField> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_records(&bytes)
}

pub fn decode_records(bytes: &[u8]) -> Result<BatchedField> {
    if bytes.is_empty() || bytes.len() % RECORD_BYTES != 0 {
        return Err(Error::Format(format!(
            "{} bytes is not a positive multiple of the {RECORD_BYTES}-byte record",
            bytes.len()
        )));
    }
    let records = bytes.len() / RECORD_BYTES;
    let plane = 32 * 32;
    let mut values = vec![0.0; records * RECORD_PIXELS];
    for (m, rec) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        let pixels = &rec[1..];
        for c in 0..3 {
            for site in 0..plane {
                values[(m * plane + site) * 3 + c] = pixels[c * plane + site] as f64 / 255.0;
            }
        }
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var <= 0.0 {
        return Err(Error::Format("dataset has constant pixels; cannot standardize".into()));
    }
    let inv = 1.0 / var.sqrt();
    values.iter_mut().for_each(|v| *v = (*v - mean) * inv);
    BatchedField::from_values(records, 32, 2, 3, values)
}

/// Rows `rows` of a batch, in order.
pub(crate) fn select_rows(field: &BatchedField, rows: &[usize]) -> Result<BatchedField> {
    let per = field.sites() * field.channels();
    let mut values = Vec::with_capacity(rows.len() * per);
    for &r in rows {
        values.extend_from_slice(&field.values()[r * per..(r + 1) * per]);
    }
    BatchedField::from_values(rows.len(), field.extent(), field.dims(), field.channels(), values)
}

use crate::error::{Error, Result};

/// A batch of `M` feature maps over `n^d` periodic sites with `C` channels.
///
/// Values are stored as `[m][site][c]`, sites row-major over the `d` axes.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchedField {
    batch: usize,
    extent: usize,
    dims: usize,
    channels: usize,
    values: Vec<f64>,
}

impl BatchedField {
    pub fn zeros(batch: usize, extent: usize, dims: usize, channels: usize) -> Result<Self> {
        check_shape(batch, extent, dims, channels)?;
        let len = batch * extent.pow(dims as u32) * channels;
        Ok(BatchedField {
            batch,
            extent,
            dims,
            channels,
            values: vec![0.0; len],
        })
    }

    pub fn from_values(
        batch: usize,
        extent: usize,
        dims: usize,
        channels: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        check_shape(batch, extent, dims, channels)?;
        let len = batch * extent.pow(dims as u32) * channels;
        if values.len() != len {
            return Err(Error::Shape(format!(
                "expected {len} values for shape ({batch}, {extent}^{dims}, {channels}), got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Shape(format!("non-finite value at flat index {i}")));
        }
        Ok(BatchedField {
            batch,
            extent,
            dims,
            channels,
            values,
        })
    }

    /// Same shape as `self`, all zeros.
    pub fn zeros_like(&self) -> Self {
        BatchedField {
            values: vec![0.0; self.values.len()],
            ..*self
        }
    }

    /// Same shape as `self` with new values; lengths must match.
    pub(crate) fn with_values(&self, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        BatchedField { values, ..*self }
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn extent(&self) -> usize {
        self.extent
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of spatial sites `n^d`.
    pub fn sites(&self) -> usize {
        self.extent.pow(self.dims as u32)
    }

    /// Number of feature vectors `M * n^d`.
    pub fn samples(&self) -> usize {
        self.batch * self.sites()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn same_shape(&self, other: &BatchedField) -> bool {
        self.batch == other.batch
            && self.extent == other.extent
            && self.dims == other.dims
            && self.channels == other.channels
    }

    pub fn get(&self, m: usize, site: usize, c: usize) -> f64 {
        self.values[(m * self.sites() + site) * self.channels + c]
    }

    pub fn set(&mut self, m: usize, site: usize, c: usize, v: f64) {
        let s = self.sites();
        self.values[(m * s + site) * self.channels + c] = v;
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &BatchedField) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::Shape("add of fields with different shapes".into()));
        }
        self.values
            .iter_mut()
            .zip(&other.values)
            .for_each(|(a, b)| *a += b);
        Ok(())
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &BatchedField) -> Result<BatchedField> {
        if !self.same_shape(other) {
            return Err(Error::Shape("sub of fields with different shapes".into()));
        }
        Ok(self.with_values(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        ))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

fn check_shape(batch: usize, extent: usize, dims: usize, channels: usize) -> Result<()> {
    if batch == 0 || extent == 0 || channels == 0 {
        return Err(Error::Shape(format!(
            "counts must be >= 1, got batch {batch}, extent {extent}, channels {channels}"
        )));
    }
    if !(1..=2).contains(&dims) {
        return Err(Error::Shape(format!("spatial dims must be 1 or 2, got {dims}")));
    }
    Ok(())
}

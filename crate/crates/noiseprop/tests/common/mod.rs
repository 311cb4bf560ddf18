#![allow(dead_code)]

use noiseprop::propagation::{Activation, ArchitectureSpec, Family, Location, PairState};
use noiseprop::tensor::{BatchedField, SeedStream};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn random_field(seed: u64, batch: usize, extent: usize, dims: usize, channels: usize) -> BatchedField {
    let mut rng = SeedStream::new(seed).rng();
    let len = batch * extent.pow(dims as u32) * channels;
    let values = (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    BatchedField::from_values(batch, extent, dims, channels, values).unwrap()
}

pub fn random_pair(seed: u64, batch: usize, extent: usize, dims: usize, channels: usize) -> PairState {
    PairState::new(
        random_field(seed, batch, extent, dims, channels),
        random_field(seed ^ 0xdead_beef, batch, extent, dims, channels),
        Location::PostConv,
    )
    .unwrap()
}

pub fn tiny_arch(family: Family, depth: usize, activation: Activation) -> ArchitectureSpec {
    ArchitectureSpec {
        family,
        depth,
        residual_depth: 2,
        width: 4,
        kernel: 3,
        extent: 4,
        dims: 2,
        activation,
        bn_epsilon: 1e-3,
        input_channels: if family.is_residual() { 4 } else { 3 },
    }
}

pub fn tiny_input(arch: &ArchitectureSpec, seed: u64) -> PairState {
    random_pair(seed, 4, arch.extent, arch.dims, arch.input_channels)
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

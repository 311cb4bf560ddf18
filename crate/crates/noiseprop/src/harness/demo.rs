use super::input::{generate_input, generate_noise, InputKind};
use crate::error::Result;
use crate::propagation::{bn_pair_step, conv_pair_step, phi_pair_step, Activation, Location, PairState};
use crate::statistics::{noise_moment, normalized_sensitivity, second_moments};
use crate::tensor::{he_init_conv, SeedStream};

/// One fully-connected scalar-input example.
#[derive(Clone, Debug, PartialEq)]
pub struct DemoPanel {
    pub name: &'static str,
    pub inputs: Vec<f64>,
    pub outputs: Vec<f64>,
    pub chi: f64,
}

pub const DEMO_SAMPLES: usize = 1000;
pub const DEMO_DEPTH: usize = 10;
pub const DEMO_WIDTH: usize = 100;
const DEMO_SIGMA: f64 = 1e-3;

/// Scalar mixture inputs through a tanh layer, a linear layer and a deep
/// batch-normalized ReLU net ending in one linear unit.
pub fn fc_demo(seed: u64) -> Result<Vec<DemoPanel>> {
    let master = SeedStream::new(seed);
    let x = generate_input(InputKind::GaussianMixture, DEMO_SAMPLES, 1, 1, 1, &mut master.child(SeedStream::INPUT).rng())?;
    let dx = generate_noise(DEMO_SAMPLES, 1, 1, 1, DEMO_SIGMA, &mut master.child(SeedStream::NOISE).rng())?;
    let input = PairState::new(x, dx, Location::PostActivation)?;
    let weights = master.child(SeedStream::WEIGHTS);

    let single = |name: &'static str, act: Activation, tag: u64| -> Result<DemoPanel> {
        let p = he_init_conv(1, 1, 1, 1, &mut weights.child(tag).rng())?;
        let out = phi_pair_step(conv_pair_step(&input, &p)?, act);
        panel(name, &input, &out)
    };
    let tanh = single("tanh", Activation::Tanh, 1)?;
    let linear = single("linear", Activation::Linear, 2)?;

    let deep_weights = weights.child(3);
    let mut state = input.clone();
    for l in 1..=DEMO_DEPTH {
        let c_in = if l == 1 { 1 } else { DEMO_WIDTH };
        let (c_out, act) = if l == DEMO_DEPTH {
            (1, Activation::Linear)
        } else {
            (DEMO_WIDTH, Activation::Relu)
        };
        let p = he_init_conv(1, 1, c_in, c_out, &mut deep_weights.child(l as u64).rng())?;
        let (z, _) = bn_pair_step(conv_pair_step(&state, &p)?, 0.001)?;
        state = phi_pair_step(z, act);
    }
    let deep = panel("bn_relu_deep", &input, &state)?;
    Ok(vec![tanh, linear, deep])
}

fn panel(name: &'static str, input: &PairState, out: &PairState) -> Result<DemoPanel> {
    let s = normalized_sensitivity(
        noise_moment(&out.noise),
        second_moments(&out.signal).1,
        noise_moment(&input.noise),
        second_moments(&input.signal).1,
    )?;
    Ok(DemoPanel {
        name,
        inputs: input.signal.values().to_vec(),
        outputs: out.signal.values().to_vec(),
        chi: s.chi,
    })
}

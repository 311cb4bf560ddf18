//! Experiment orchestration: inputs, Monte-Carlo runs and validators.

mod config;
mod demo;
mod input;
mod probe;
mod run;
mod validate;

pub use config::{ExperimentConfig, INITIAL_CONV_KERNEL};
pub use demo::{fc_demo, DemoPanel, DEMO_DEPTH, DEMO_SAMPLES, DEMO_WIDTH};
pub use input::{
    decode_records, generate_input, generate_noise, load_dataset_binary, InputKind, MIXTURE_CENTER, MIXTURE_STD,
    RECORD_BYTES,
};
pub use probe::{frozen_prefix_probe, FrozenPrefixProbe};
pub use run::{run_experiment, ProbeValue, Realizations, RunOutput, RunRecord, Timing};
pub use validate::{
    finite_difference_validate, jacobian_exact_chi, monte_carlo_chi, JacobianChi, MonteCarloChi, NoiseCheck,
};

use std::collections::BTreeMap;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{ExperimentConfig, INITIAL_CONV_KERNEL};
use super::input::{generate_input, generate_noise, load_dataset_binary, select_rows, InputKind};
use crate::error::{Error, Result};
use crate::propagation::{conv_pair_step, propagate, ArchitectureSpec, Location, PairState, Stage};
use crate::statistics::{AccumulatorSet, Meter, Metric};
use crate::tensor::{he_init_conv, BatchedField, SeedStream};

/// Deterministic run metadata, written as `run.json`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunRecord {
    pub config_digest: String,
    pub master_seed: u64,
    pub tool_version: String,
    pub realizations: u64,
    /// Realizations degenerate (zero signal or noise) at or before each layer.
    pub degenerate_counts: BTreeMap<usize, u64>,
    pub degenerate_rate: f64,
    /// `sum_k 2^-N_k` over the layers.
    pub degenerate_rate_reference: f64,
}

/// Wall-clock information, kept apart from [`RunRecord`] so that reruns
/// produce identical `run.json` files.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Timing {
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub realization_seconds: Vec<f64>,
}

/// One per-realization value at a probe layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeValue {
    pub realization: usize,
    pub layer: usize,
    pub stage: Stage,
    pub metric: Metric,
    pub value: f64,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub config: ExperimentConfig,
    pub set: AccumulatorSet,
    pub record: RunRecord,
    pub probes: Vec<ProbeValue>,
    pub timing: Timing,
}

impl RunOutput {
    /// Per-realization values of `metric` at `(layer, stage)`, in realization order.
    pub fn probe_values(&self, layer: usize, stage: Stage, metric: Metric) -> Vec<f64> {
        self.probes
            .iter()
            .filter(|p| p.layer == layer && p.stage == stage && p.metric == metric)
            .map(|p| p.value)
            .collect()
    }
}

/// Everything needed to rebuild the inputs and weights of any realization.
pub struct Realizations<'c> {
    pub config: &'c ExperimentConfig,
    pub arch: ArchitectureSpec,
    dataset: Option<BatchedField>,
    master: SeedStream,
}

impl<'c> Realizations<'c> {
    pub fn new(config: &'c ExperimentConfig) -> Result<Self> {
        let dataset = match config.input_kind {
            InputKind::DatasetFile => {
                let path = config
                    .dataset_path
                    .as_ref()
                    .ok_or_else(|| Error::config("dataset_path", "required for dataset_file input"))?;
                let data = load_dataset_binary(path)?;
                if data.batch() < config.batch {
                    return Err(Error::config(
                        "batch_M",
                        format!("dataset has {} records, batch needs {}", data.batch(), config.batch),
                    ));
                }
                Some(data)
            }
            _ => None,
        };
        let arch = config.architecture();
        arch.validate()?;
        Ok(Realizations {
            config,
            arch,
            dataset,
            master: SeedStream::new(config.master_seed),
        })
    }

    pub fn stream(&self, r: usize) -> SeedStream {
        self.master.child(SeedStream::REALIZATION).child(r as u64)
    }

    pub fn weights(&self, r: usize) -> SeedStream {
        self.stream(r).child(SeedStream::WEIGHTS)
    }

    /// Raw input batch of realization `r`, before any initial conv.
    pub fn raw_signal(&self, r: usize) -> Result<BatchedField> {
        let c = self.config;
        let stream = if c.fixed_input {
            self.master.child(SeedStream::INPUT)
        } else {
            self.stream(r).child(SeedStream::INPUT)
        };
        match &self.dataset {
            Some(data) => {
                let rows: Vec<usize> = if c.fixed_input {
                    (0..c.batch).collect()
                } else {
                    sample(&mut stream.rng(), data.batch(), c.batch).into_vec()
                };
                select_rows(data, &rows)
            }
            None => generate_input(c.input_kind, c.batch, c.extent, c.dims, c.input_channels(), &mut stream.rng()),
        }
    }

    /// Raw white input noise of realization `r`.
    pub fn raw_noise(&self, r: usize, sigma: f64) -> Result<BatchedField> {
        let c = self.config;
        generate_noise(
            c.batch,
            c.extent,
            c.dims,
            c.input_channels(),
            sigma,
            &mut self.stream(r).child(SeedStream::NOISE).rng(),
        )
    }

    /// Applies the initial conv of realization `r`, if configured.
    pub fn shape_input(&self, r: usize, signal: BatchedField, noise: BatchedField) -> Result<PairState> {
        let location = if self.arch.family.is_residual() {
            Location::ResidualAggregate
        } else {
            Location::PostActivation
        };
        let raw = PairState::new(signal, noise, location)?;
        match self.config.initial_conv_stride {
            None => Ok(raw),
            Some(s) => {
                let params = he_init_conv(
                    INITIAL_CONV_KERNEL,
                    self.config.dims,
                    self.config.input_channels(),
                    self.config.width,
                    &mut self.stream(r).child(SeedStream::INITIAL_CONV).rng(),
                )?
                .with_stride(s)?;
                let mut out = conv_pair_step(&raw, &params)?;
                out.location = location;
                Ok(out)
            }
        }
    }

    /// Network input `(x^0, dx^0)` of realization `r`.
    pub fn input(&self, r: usize) -> Result<PairState> {
        let signal = self.raw_signal(r)?;
        let noise = self.raw_noise(r, self.config.sigma_dx)?;
        self.shape_input(r, signal, noise)
    }
}

fn is_layer_output(stage: Stage) -> bool {
    matches!(stage, Stage::Input | Stage::Activation | Stage::Residual)
}

struct RealizationResult {
    set: AccumulatorSet,
    probes: Vec<ProbeValue>,
    seconds: f64,
}

fn run_one(reals: &Realizations<'_>, r: usize) -> Result<RealizationResult> {
    let start = Instant::now();
    let config = reals.config;
    let mut set = AccumulatorSet::new(config.histogram_policy());
    let mut probes = Vec::new();
    let mut meter = Meter::new(config.family, config.activation, config.residual_depth, config.metric_set());
    let input = reals.input(r)?;
    for snap in propagate(&reals.arch, input, reals.weights(r))? {
        let snap = snap?;
        for stats in meter.observe(&snap)? {
            set.record(&stats)?;
            if config.probe_layers.contains(&stats.layer) {
                probes.extend(stats.values.iter().map(|&(metric, value)| ProbeValue {
                    realization: r,
                    layer: stats.layer,
                    stage: stats.stage,
                    metric,
                    value,
                }));
            }
        }
        if is_layer_output(snap.stage) && meter.is_degenerate() {
            set.record_degenerate(snap.layer);
        }
    }
    set.finish_realization();
    Ok(RealizationResult {
        set,
        probes,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn unix_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

/// Runs every realization of `config` and aggregates the statistics.
///
/// Realizations run on `config.threads` workers; results are merged in a
/// fixed tree over realization index, so aggregates do not depend on the
/// thread count.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutput> {
    let config = config.clone().resolve()?;
    let started = unix_ms();
    let reals = Realizations::new(&config)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| Error::Run(format!("thread pool: {e}")))?;
    let results: Vec<RealizationResult> = pool.install(|| {
        (0..config.realizations)
            .into_par_iter()
            .map(|r| run_one(&reals, r))
            .collect::<Result<Vec<_>>>()
    })?;

    let mut seconds = Vec::with_capacity(results.len());
    let mut probes = Vec::new();
    let mut sets = Vec::with_capacity(results.len());
    for res in results {
        seconds.push(res.seconds);
        probes.extend(res.probes);
        sets.push(res.set);
    }
    let set = AccumulatorSet::tree_merge(sets)?;

    let final_degenerate = set.degenerate_counts().get(&config.depth).copied().unwrap_or(0);
    if final_degenerate == config.realizations as u64 {
        return Err(Error::Run("every realization collapsed to a degenerate state".into()));
    }
    let reference = (1..=config.depth)
        .map(|_| 2f64.powi(-(config.width.min(1074) as i32)))
        .sum();
    let record = RunRecord {
        config_digest: config.digest(),
        master_seed: config.master_seed,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        realizations: set.realizations(),
        degenerate_counts: set.degenerate_counts().clone(),
        degenerate_rate: final_degenerate as f64 / config.realizations as f64,
        degenerate_rate_reference: reference,
    };
    let timing = Timing {
        started_unix_ms: started,
        finished_unix_ms: unix_ms(),
        realization_seconds: seconds,
    };
    Ok(RunOutput {
        config,
        set,
        record,
        probes,
        timing,
    })
}

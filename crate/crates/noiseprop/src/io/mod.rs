//! Config parsing and result files.

mod aggregate;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

pub use aggregate::{fit_report, read_aggregate, AggregateRow, FitMode, FitReport};

use crate::error::{Error, Result};
use crate::harness::{DemoPanel, ExperimentConfig, NoiseCheck, RunOutput};
use crate::statistics::Metric;

/// Shortest decimal that parses back to exactly `v`.
pub fn format_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text)
}

/// Parses and resolves a JSON config; errors name the offending key.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let config: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let message = e.inner().to_string();
        let key = if path != "." && !path.is_empty() {
            path
        } else {
            message
                .split('`')
                .nth(1)
                .map(str::to_string)
                .unwrap_or_else(|| "<document>".to_string())
        };
        Error::config(key, message)
    })?;
    config.resolve()
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn run_id(output: &RunOutput) -> String {
    output.record.config_digest[..16].to_string()
}

/// Writes `aggregate.csv`, `realizations.csv`, `histograms.csv`, `run.json`
/// (all reproducible byte for byte) and `timing.json`.
pub fn emit_results(output: &RunOutput, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let id = run_id(output);

    let mut agg = String::from("run_id,layer,substep,metric,statistic,value\n");
    for ((layer, stage, metric), acc) in output.set.iter() {
        if *layer == 0 {
            continue;
        }
        for (stat, v) in [("mean", acc.mean), ("std", acc.std()), ("count", acc.count as f64)] {
            writeln!(agg, "{id},{layer},{stage},{metric},{stat},{}", format_f64(v)).unwrap();
        }
        if let Some(log_metric) = metric.log_companion() {
            if let Some(log_acc) = output.set.get(*layer, *stage, log_metric) {
                let m_bar = acc.mean.ln();
                let m_under = (log_acc.mean - m_bar).min(0.0);
                writeln!(agg, "{id},{layer},{stage},{metric}.m_bar,value,{}", format_f64(m_bar)).unwrap();
                writeln!(agg, "{id},{layer},{stage},{metric}.m_under,value,{}", format_f64(m_under)).unwrap();
            }
        }
    }
    write(&out_dir.join("aggregate.csv"), &agg)?;

    let mut probes = String::from("run_id,realization,layer,substep,metric,value\n");
    let mut rows: Vec<_> = output.probes.iter().collect();
    rows.sort_by(|a, b| {
        (a.layer, a.stage, a.metric, a.realization).cmp(&(b.layer, b.stage, b.metric, b.realization))
    });
    for p in rows {
        writeln!(
            probes,
            "{id},{},{},{},{},{}",
            p.realization,
            p.layer,
            p.stage,
            p.metric,
            format_f64(p.value)
        )
        .unwrap();
    }
    write(&out_dir.join("realizations.csv"), &probes)?;

    let mut hist = String::from("run_id,layer,substep,metric,bin_left,bin_right,count\n");
    for ((layer, stage, metric), acc) in output.set.iter() {
        if let Some(h) = &acc.histogram {
            for (i, c) in h.counts.iter().enumerate() {
                let (lo, hi) = h.edges(i);
                writeln!(hist, "{id},{layer},{stage},{metric},{},{},{c}", format_f64(lo), format_f64(hi)).unwrap();
            }
        }
    }
    write(&out_dir.join("histograms.csv"), &hist)?;

    let mut record = serde_json::to_value(&output.record).expect("record serializes");
    record["config"] = serde_json::to_value(&output.config).expect("config serializes");
    record["run_id"] = id.into();
    write(
        &out_dir.join("run.json"),
        &(serde_json::to_string_pretty(&record).expect("json") + "\n"),
    )?;
    write(
        &out_dir.join("timing.json"),
        &(serde_json::to_string_pretty(&output.timing).expect("json") + "\n"),
    )
}

pub fn emit_noise_validation(checks: &[NoiseCheck], out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut s = String::from("sigma,ratio\n");
    for c in checks {
        writeln!(s, "{},{}", format_f64(c.sigma), format_f64(c.ratio)).unwrap();
    }
    write(&out_dir.join("noise_validation.csv"), &s)
}

pub fn emit_fc_demo(panels: &[DemoPanel], out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut pairs = String::from("panel,sample,input,output\n");
    let mut chi = String::from("panel,chi\n");
    for p in panels {
        for (i, (x, y)) in p.inputs.iter().zip(&p.outputs).enumerate() {
            writeln!(pairs, "{},{i},{},{}", p.name, format_f64(*x), format_f64(*y)).unwrap();
        }
        writeln!(chi, "{},{}", p.name, format_f64(p.chi)).unwrap();
    }
    write(&out_dir.join("fc_demo.csv"), &pairs)?;
    write(&out_dir.join("fc_demo_chi.csv"), &chi)
}

/// Metric names accepted in the `metrics` config key.
pub fn metric_names() -> Vec<&'static str> {
    Metric::ALL.iter().map(|m| m.name()).collect()
}

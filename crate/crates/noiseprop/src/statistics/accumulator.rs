use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{LayerStats, Metric};
use crate::error::{Error, Result};
use crate::propagation::Stage;

/// Fixed-range histogram; out-of-range values land in the edge bins.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if !(hi > lo) || bins == 0 {
            return Err(Error::Parameter(format!("bad histogram range [{lo}, {hi}) x {bins}")));
        }
        Ok(Histogram {
            lo,
            hi,
            counts: vec![0; bins],
        })
    }

    pub fn push(&mut self, v: f64) {
        let bins = self.counts.len();
        let t = (v - self.lo) / (self.hi - self.lo) * bins as f64;
        let i = if t.is_nan() { 0 } else { (t.max(0.0) as usize).min(bins - 1) };
        self.counts[i] += 1;
    }

    pub fn edges(&self, bin: usize) -> (f64, f64) {
        let w = (self.hi - self.lo) / self.counts.len() as f64;
        (self.lo + w * bin as f64, self.lo + w * (bin + 1) as f64)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn same_bins(&self, other: &Histogram) -> bool {
        self.lo == other.lo && self.hi == other.hi && self.counts.len() == other.counts.len()
    }
}

/// Count, mean and sum of squared deviations, mergeable in any order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StatsAccumulator {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
    pub histogram: Option<Histogram>,
}

impl StatsAccumulator {
    pub fn with_histogram(histogram: Histogram) -> Self {
        StatsAccumulator {
            histogram: Some(histogram),
            ..Default::default()
        }
    }

    pub fn single(v: f64) -> Self {
        let mut a = StatsAccumulator::default();
        a.push(v);
        a
    }

    pub fn push(&mut self, v: f64) {
        self.count += 1;
        let d = v - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (v - self.mean);
        if let Some(h) = &mut self.histogram {
            h.push(v);
        }
    }

    /// Sample variance (n - 1); 0 below two values.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn std(&self) -> f64 {
        self.variance().sqrt()
    }

    /// Standard error of the mean.
    pub fn stderr(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.std() / (self.count as f64).sqrt()
        }
    }
}

/// Pairwise combination of two accumulators.
pub fn merge(a: &StatsAccumulator, b: &StatsAccumulator) -> Result<StatsAccumulator> {
    let histogram = match (&a.histogram, &b.histogram) {
        (None, None) => None,
        (Some(h), Some(g)) => {
            if !h.same_bins(g) {
                return Err(Error::Schema("histogram bins differ".into()));
            }
            Some(Histogram {
                counts: h.counts.iter().zip(&g.counts).map(|(x, y)| x + y).collect(),
                ..h.clone()
            })
        }
        (Some(h), None) if b.count == 0 => Some(h.clone()),
        (None, Some(g)) if a.count == 0 => Some(g.clone()),
        _ => return Err(Error::Schema("histogram present on one side only".into())),
    };
    if a.count == 0 {
        return Ok(StatsAccumulator { histogram, ..b.clone() });
    }
    if b.count == 0 {
        return Ok(StatsAccumulator { histogram, ..a.clone() });
    }
    let (na, nb) = (a.count as f64, b.count as f64);
    let n = na + nb;
    let d = b.mean - a.mean;
    Ok(StatsAccumulator {
        count: a.count + b.count,
        mean: (na * a.mean + nb * b.mean) / n,
        m2: a.m2 + b.m2 + d * d * na * nb / n,
        histogram,
    })
}

/// Which log-moment metrics get histograms, at which layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramPolicy {
    pub layers: Vec<usize>,
    pub bins: usize,
    pub lo: f64,
    pub hi: f64,
}

impl HistogramPolicy {
    fn tracks(&self, layer: usize, metric: Metric) -> bool {
        matches!(metric, Metric::LogNu2Ratio | Metric::LogMu2NoiseRatio) && self.layers.contains(&layer)
    }
}

pub type Key = (usize, Stage, Metric);

/// Accumulators for every (layer, stage, metric) seen, plus degenerate counts.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AccumulatorSet {
    entries: BTreeMap<Key, StatsAccumulator>,
    degenerate: BTreeMap<usize, u64>,
    realizations: u64,
    policy: Option<HistogramPolicy>,
}

impl AccumulatorSet {
    pub fn new(policy: Option<HistogramPolicy>) -> Self {
        AccumulatorSet {
            policy,
            ..Default::default()
        }
    }

    pub fn record(&mut self, stats: &LayerStats) -> Result<()> {
        for &(metric, v) in &stats.values {
            let key = (stats.layer, stats.stage, metric);
            let acc = match self.entries.get_mut(&key) {
                Some(a) => a,
                None => {
                    let fresh = match &self.policy {
                        Some(p) if p.tracks(stats.layer, metric) => {
                            StatsAccumulator::with_histogram(Histogram::new(p.lo, p.hi, p.bins)?)
                        }
                        _ => StatsAccumulator::default(),
                    };
                    self.entries.entry(key).or_insert(fresh)
                }
            };
            acc.push(v);
        }
        Ok(())
    }

    pub fn record_degenerate(&mut self, layer: usize) {
        *self.degenerate.entry(layer).or_default() += 1;
    }

    pub fn finish_realization(&mut self) {
        self.realizations += 1;
    }

    pub fn realizations(&self) -> u64 {
        self.realizations
    }

    pub fn degenerate_counts(&self) -> &BTreeMap<usize, u64> {
        &self.degenerate
    }

    pub fn policy(&self) -> Option<&HistogramPolicy> {
        self.policy.as_ref()
    }

    pub fn get(&self, layer: usize, stage: Stage, metric: Metric) -> Option<&StatsAccumulator> {
        self.entries.get(&(layer, stage, metric))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Key, &StatsAccumulator)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Means of `metric` at `stage`, indexed by layer `0..=depth`; NaN where absent.
    pub fn mean_curve(&self, stage: Stage, metric: Metric, depth: usize) -> Vec<f64> {
        (0..=depth)
            .map(|l| self.get(l, stage, metric).map_or(f64::NAN, |a| a.mean))
            .collect()
    }

    pub fn merge(&self, other: &AccumulatorSet) -> Result<AccumulatorSet> {
        if self.policy != other.policy {
            return Err(Error::Schema("histogram policies differ".into()));
        }
        let mut out = self.clone();
        for (k, b) in &other.entries {
            let merged = match self.entries.get(k) {
                Some(a) => merge(a, b)?,
                None => b.clone(),
            };
            out.entries.insert(*k, merged);
        }
        for (l, c) in &other.degenerate {
            *out.degenerate.entry(*l).or_default() += c;
        }
        out.realizations += other.realizations;
        Ok(out)
    }

    /// Merges in a fixed balanced tree over the given order.
    pub fn tree_merge(mut sets: Vec<AccumulatorSet>) -> Result<AccumulatorSet> {
        if sets.is_empty() {
            return Ok(AccumulatorSet::default());
        }
        while sets.len() > 1 {
            let mut next = Vec::with_capacity(sets.len().div_ceil(2));
            let mut it = sets.into_iter();
            while let Some(a) = it.next() {
                match it.next() {
                    Some(b) => next.push(a.merge(&b)?),
                    None => next.push(a),
                }
            }
            sets = next;
        }
        Ok(sets.pop().unwrap_or_default())
    }
}

/// Per-layer histograms of a log-moment metric at the layer-output stage.
pub fn histogram_log_moment(
    set: &AccumulatorSet,
    stage: Stage,
    metric: Metric,
    layers: &[usize],
) -> Result<Vec<(usize, Histogram)>> {
    if !matches!(metric, Metric::LogNu2Ratio | Metric::LogMu2NoiseRatio) {
        return Err(Error::Query(format!("`{metric}` is not a log-moment metric")));
    }
    layers
        .iter()
        .map(|&l| {
            set.get(l, stage, metric)
                .and_then(|a| a.histogram.clone())
                .map(|h| (l, h))
                .ok_or_else(|| Error::Query(format!("no histogram for `{metric}` at layer {l} ({stage})")))
        })
        .collect()
}

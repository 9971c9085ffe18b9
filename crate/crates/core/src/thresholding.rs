//! Score histograms and the ground threshold: the lower edge of the
//! lowest-density bin.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nms::Detection;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ThresholdError {
    #[error("histogram has no scores in [{lo}, {hi}]")]
    AllEmptyHistogram { lo: f64, hi: f64 },
    #[error("invalid histogram config: {0}")]
    InvalidConfig(String),
    #[error("uniform thresholding needs at least one candidate")]
    EmptyCandidatePool,
}

/// Range and resolution of the score histogram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HistogramConfig {
    pub lo: f64,
    pub hi: f64,
    pub n_bins: usize,
}

impl Default for HistogramConfig {
    fn default() -> Self {
        Self {
            lo: 0.5,
            hi: 1.0,
            n_bins: 21,
        }
    }
}

impl HistogramConfig {
    pub fn new(lo: f64, hi: f64, n_bins: usize) -> Result<Self, ThresholdError> {
        let cfg = Self { lo, hi, n_bins };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ThresholdError> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi) {
            return Err(ThresholdError::InvalidConfig(format!(
                "need lo < hi, got [{}, {}]",
                self.lo, self.hi
            )));
        }
        if self.n_bins < 2 {
            return Err(ThresholdError::InvalidConfig(format!(
                "need at least 2 bins, got {}",
                self.n_bins
            )));
        }
        Ok(())
    }

    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.n_bins as f64
    }

    /// Lower edge of bin `k`. Binning and thresholds both go through this so
    /// a score is in bin `k` iff `edge(k) <= score < edge(k + 1)`.
    pub fn edge(&self, k: usize) -> f64 {
        if k >= self.n_bins {
            return self.hi;
        }
        self.lo + (self.hi - self.lo) * k as f64 / self.n_bins as f64
    }

    /// Bin of `score`, or `None` outside `[lo, hi]`. The last bin is closed.
    pub fn bin_of(&self, score: f64) -> Option<usize> {
        if !(score >= self.lo && score <= self.hi) {
            return None;
        }
        let n = self.n_bins;
        let mut k = (((score - self.lo) / (self.hi - self.lo)) * n as f64) as usize;
        k = k.min(n - 1);
        // float guess may be off by one around the edges
        while k > 0 && score < self.edge(k) {
            k -= 1;
        }
        while k + 1 < n && score >= self.edge(k + 1) {
            k += 1;
        }
        Some(k)
    }
}

/// Binned counts of the scores within `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreHistogram {
    pub config: HistogramConfig,
    pub counts: Vec<u64>,
    /// Scores below `lo`, which take no part in thresholding.
    pub n_below: u64,
    /// Scores above `hi` (only possible when `hi < 1`).
    pub n_above: u64,
}

impl ScoreHistogram {
    pub fn empty(config: HistogramConfig) -> Self {
        Self {
            config,
            counts: vec![0; config.n_bins],
            n_below: 0,
            n_above: 0,
        }
    }

    pub fn add(&mut self, score: f64) {
        match self.config.bin_of(score) {
            Some(k) => self.counts[k] += 1,
            None if score < self.config.lo => self.n_below += 1,
            None => self.n_above += 1,
        }
    }

    pub fn binned(&self) -> u64 {
        self.counts.iter().sum()
    }
}

pub fn build_histogram<I>(scores: I, config: HistogramConfig) -> ScoreHistogram
where
    I: IntoIterator<Item = f64>,
{
    let mut h = ScoreHistogram::empty(config);
    for s in scores {
        h.add(s);
    }
    h
}

/// Index of the bin with the fewest scores, leftmost on ties.
pub fn ground_bin(h: &ScoreHistogram) -> Result<usize, ThresholdError> {
    if h.binned() == 0 {
        return Err(ThresholdError::AllEmptyHistogram {
            lo: h.config.lo,
            hi: h.config.hi,
        });
    }
    let mut best = 0;
    for (k, &c) in h.counts.iter().enumerate().skip(1) {
        if c < h.counts[best] {
            best = k;
        }
    }
    Ok(best)
}

/// Ground threshold: the lower edge of the lowest-density bin.
///
/// A monotonically decreasing histogram puts the threshold on the last
/// bin, which is the known failure mode for hard classes.
pub fn ground_threshold(h: &ScoreHistogram) -> Result<f64, ThresholdError> {
    ground_bin(h).map(|k| h.config.edge(k))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ThresholdMode {
    /// One threshold from the pooled histogram of every class.
    #[default]
    #[serde(rename = "uniform")]
    Uniform,
    /// One threshold per class from that class's histogram.
    #[serde(rename = "class-wise")]
    ClassWise,
}

impl fmt::Display for ThresholdMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ThresholdMode::Uniform => "uniform",
            ThresholdMode::ClassWise => "class-wise",
        })
    }
}

impl FromStr for ThresholdMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform" => Ok(ThresholdMode::Uniform),
            "class-wise" | "classwise" => Ok(ThresholdMode::ClassWise),
            other => Err(format!("unknown threshold mode {other:?}")),
        }
    }
}

/// Histogram and resulting threshold for one class or for the pool.
#[derive(Debug, Clone, PartialEq)]
pub struct BinThreshold {
    pub histogram: ScoreHistogram,
    /// Selected bin; `None` when no score landed in `[lo, hi]`.
    pub bin: Option<usize>,
}

impl BinThreshold {
    fn from_histogram(histogram: ScoreHistogram) -> Self {
        let bin = ground_bin(&histogram).ok();
        Self { histogram, bin }
    }

    pub fn tau(&self) -> Option<f64> {
        self.bin.map(|k| self.histogram.config.edge(k))
    }
}

/// Where a threshold comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum ThresholdSource {
    /// Ground thresholds derived from histograms.
    Ground {
        uniform: Option<BinThreshold>,
        per_class: BTreeMap<u32, BinThreshold>,
    },
    /// A fixed uniform value, as in a manual parameter sweep.
    Fixed(f64),
}

/// Thresholds used to promote candidates to pseudo-labels.
///
/// Both the pooled and the per-class thresholds are kept; `mode` picks which
/// one [`ThresholdSet::tau_for`] answers with.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSet {
    pub mode: ThresholdMode,
    pub config: HistogramConfig,
    pub source: ThresholdSource,
}

/// Result of looking up a class threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClassTau {
    Tau(f64),
    /// The class had candidates but none in `[lo, hi]`.
    Empty,
    /// The class had no candidates when the thresholds were computed.
    Missing,
}

impl ThresholdSet {
    pub fn fixed(tau: f64) -> Self {
        Self {
            mode: ThresholdMode::Uniform,
            config: HistogramConfig::default(),
            source: ThresholdSource::Fixed(tau),
        }
    }

    pub fn uniform_tau(&self) -> Option<f64> {
        match &self.source {
            ThresholdSource::Fixed(t) => Some(*t),
            ThresholdSource::Ground { uniform, .. } => uniform.as_ref().and_then(|u| u.tau()),
        }
    }

    pub fn tau_for(&self, class_id: u32) -> ClassTau {
        match (&self.source, self.mode) {
            (ThresholdSource::Fixed(t), _) => ClassTau::Tau(*t),
            (ThresholdSource::Ground { uniform, .. }, ThresholdMode::Uniform) => {
                match uniform.as_ref().and_then(|u| u.tau()) {
                    Some(t) => ClassTau::Tau(t),
                    None => ClassTau::Empty,
                }
            }
            (ThresholdSource::Ground { per_class, .. }, ThresholdMode::ClassWise) => match per_class.get(&class_id) {
                Some(bt) => bt.tau().map_or(ClassTau::Empty, ClassTau::Tau),
                None => ClassTau::Missing,
            },
        }
    }

    /// Classes whose histogram ended up empty.
    pub fn empty_classes(&self) -> Vec<u32> {
        match &self.source {
            ThresholdSource::Ground { per_class, .. } => per_class
                .iter()
                .filter(|(_, bt)| bt.bin.is_none())
                .map(|(&c, _)| c)
                .collect(),
            ThresholdSource::Fixed(_) => Vec::new(),
        }
    }
}

/// Builds the pooled and per-class histograms of `candidates` and their
/// ground thresholds.
///
/// Classes without candidates get no entry. In class-wise mode a class whose
/// scores all fall below `lo` is recorded with no threshold and yields no
/// pseudo-labels; in uniform mode an empty pooled histogram is an error.
pub fn compute_thresholds(
    candidates: &[Detection],
    config: HistogramConfig,
    mode: ThresholdMode,
) -> Result<ThresholdSet, ThresholdError> {
    config.validate()?;
    if mode == ThresholdMode::Uniform && candidates.is_empty() {
        return Err(ThresholdError::EmptyCandidatePool);
    }
    let mut pooled = ScoreHistogram::empty(config);
    let mut by_class: BTreeMap<u32, ScoreHistogram> = BTreeMap::new();
    for d in candidates {
        pooled.add(d.score);
        by_class
            .entry(d.class_id)
            .or_insert_with(|| ScoreHistogram::empty(config))
            .add(d.score);
    }
    let uniform = (!candidates.is_empty()).then(|| BinThreshold::from_histogram(pooled));
    if mode == ThresholdMode::Uniform {
        if let Some(u) = &uniform {
            ground_bin(&u.histogram)?;
        }
    }
    let per_class = by_class
        .into_iter()
        .map(|(c, h)| (c, BinThreshold::from_histogram(h)))
        .collect();
    Ok(ThresholdSet {
        mode,
        config,
        source: ThresholdSource::Ground { uniform, per_class },
    })
}

//! Expert-consistency augmentation and inverse probability weighting.
//!
//! The training set is the observed subset plus every screened-out instance
//! whose decision propensity is below `epsilon`, labeled with the expert
//! decision (0). Screened-in instances below `epsilon` stay observed with
//! their true outcome and are never duplicated. Screened-out instances at or
//! above `epsilon` carry neither a label nor a pseudo-label and are excluded.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{fmt_f64, observed_subset, Dataset, LabeledExample, Provenance};
use crate::error::{Error, Result};
use crate::math::{median, unit_bin};
use crate::tables::ProbMap;

pub const POSITIVITY_BINS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightMode {
    None,
    Ipw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub epsilon: f64,
    pub weight_mode: WeightMode,
    /// Upper bound on inverse-probability weights.
    pub clip: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            weight_mode: WeightMode::None,
            clip: 20.0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Config(format!(
                "augment.epsilon must lie in (0, 1), got {}",
                self.epsilon
            )));
        }
        if self.clip.is_nan() || self.clip <= 1.0 {
            return Err(Error::Config(format!("augment.clip must be > 1, got {}", self.clip)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentStats {
    /// Screened-in examples (including the skipped ones below).
    pub observed: usize,
    /// Screened-out examples absorbed with label 0.
    pub augmented: usize,
    /// Screened-in examples below epsilon, kept once as observed.
    pub skipped_already_observed: usize,
    /// Screened-out examples at or above epsilon, left out of training.
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSet {
    pub examples: Vec<LabeledExample>,
    pub stats: AugmentStats,
}

impl AugmentedSet {
    /// Audit CSV with header `id,label,weight,provenance`.
    pub fn render(&self) -> String {
        let mut out = String::from("id,label,weight,provenance\n");
        for e in &self.examples {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                e.id,
                u8::from(e.label),
                fmt_f64(e.weight),
                e.provenance.as_str()
            );
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }

    /// Read an audit CSV back, taking feature vectors from `dataset`.
    pub fn load(path: impl AsRef<Path>, dataset: &Dataset) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let by_id: HashMap<u64, _> = dataset.instances().iter().map(|i| (i.id, i)).collect();
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(&bytes[..]);
        let header = reader
            .headers()
            .map_err(|e| Error::parse(0, format!("unreadable header: {e}")))?;
        if header.iter().collect::<Vec<_>>() != ["id", "label", "weight", "provenance"] {
            return Err(Error::parse(0, "header must be `id,label,weight,provenance`"));
        }
        let mut examples = Vec::new();
        let mut stats = AugmentStats::default();
        for (i, record) in reader.records().enumerate() {
            let row = i + 1;
            let record = record.map_err(|e| Error::parse(row, format!("malformed row: {e}")))?;
            let id: u64 = record[0]
                .parse()
                .map_err(|_| Error::parse(row, format!("invalid id {:?}", &record[0])))?;
            let inst = by_id
                .get(&id)
                .ok_or_else(|| Error::parse(row, format!("id {id} not in dataset")))?;
            let label = match &record[1] {
                "0" => false,
                "1" => true,
                other => return Err(Error::parse(row, format!("label must be 0 or 1, got {other:?}"))),
            };
            let weight: f64 = record[2]
                .parse()
                .ok()
                .filter(|w: &f64| *w > 0.0 && w.is_finite())
                .ok_or_else(|| Error::parse(row, format!("invalid weight {:?}", &record[2])))?;
            let provenance = match &record[3] {
                "observed" => Provenance::Observed,
                "augmented" => Provenance::Augmented,
                other => return Err(Error::parse(row, format!("unknown provenance {other:?}"))),
            };
            match provenance {
                Provenance::Observed => stats.observed += 1,
                Provenance::Augmented => {
                    if inst.d {
                        return Err(Error::parse(row, "augmented example was screened in"));
                    }
                    stats.augmented += 1;
                }
            }
            examples.push(LabeledExample {
                id,
                x: inst.x.clone(),
                label,
                weight,
                provenance,
            });
        }
        Ok(Self { examples, stats })
    }
}

fn checked_prob(probs: &ProbMap, id: u64) -> Result<f64> {
    let p = probs.require(id)?;
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidInput(format!(
            "decision probability {p} for id {id} outside [0, 1]"
        )));
    }
    Ok(p)
}

/// Observed subset plus confidently screened-out instances labeled 0.
pub fn build_augmented(
    train: &Dataset,
    decision_probs: &ProbMap,
    config: &AugmentConfig,
) -> Result<AugmentedSet> {
    config.validate()?;
    let mut examples = Vec::new();
    let mut stats = AugmentStats::default();
    for inst in train.instances() {
        let p = checked_prob(decision_probs, inst.id)?;
        let confident = p < config.epsilon;
        match inst.y {
            Some(y) => {
                stats.observed += 1;
                if confident {
                    stats.skipped_already_observed += 1;
                }
                examples.push(LabeledExample::new(inst.id, inst.x.clone(), y));
            }
            None if confident => {
                stats.augmented += 1;
                examples.push(LabeledExample {
                    provenance: Provenance::Augmented,
                    ..LabeledExample::new(inst.id, inst.x.clone(), inst.d)
                });
            }
            None => stats.excluded += 1,
        }
    }
    let set = AugmentedSet { examples, stats };
    match config.weight_mode {
        WeightMode::None => Ok(set),
        WeightMode::Ipw => ipw_weights(set, decision_probs, config.clip),
    }
}

/// Observed examples get weight `min(1/p, clip)`; augmented examples keep
/// weight 1 since their inclusion is deterministic given `p < epsilon`.
pub fn ipw_weights(mut set: AugmentedSet, decision_probs: &ProbMap, clip: f64) -> Result<AugmentedSet> {
    if clip.is_nan() || clip <= 1.0 {
        return Err(Error::Config(format!("clip must be > 1, got {clip}")));
    }
    for e in set.examples.iter_mut() {
        match e.provenance {
            Provenance::Augmented => e.weight = 1.0,
            Provenance::Observed => {
                let p = checked_prob(decision_probs, e.id)?;
                if p == 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "observed id {} has decision probability 0",
                        e.id
                    )));
                }
                let w = (1.0 / p).min(clip);
                if !w.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "weight for id {} is not finite; set a finite clip",
                        e.id
                    )));
                }
                e.weight = w;
            }
        }
    }
    Ok(set)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub count: usize,
    pub min: Option<f64>,
    pub median: Option<f64>,
}

impl GroupSummary {
    fn from_values(mut values: Vec<f64>) -> Self {
        Self {
            count: values.len(),
            min: values.iter().copied().reduce(f64::min),
            median: median(&mut values),
        }
    }
}

/// Diagnostics for the positivity assumption on a set of decision
/// propensities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositivityReport {
    pub n: usize,
    pub epsilon: f64,
    pub count_below_epsilon: usize,
    pub mass_below_epsilon: f64,
    pub screened_in: GroupSummary,
    pub screened_out: GroupSummary,
    /// Counts over 20 equal-width bins of `[0, 1]`.
    pub histogram: Vec<usize>,
}

impl PositivityReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Summarize `(propensity, screened_in)` pairs.
pub fn positivity_report(scored: &[(f64, bool)], epsilon: f64) -> PositivityReport {
    let mut histogram = vec![0usize; POSITIVITY_BINS];
    let mut below = 0usize;
    let (mut ins, mut outs) = (Vec::new(), Vec::new());
    for &(p, d) in scored {
        histogram[unit_bin(p, POSITIVITY_BINS)] += 1;
        if p < epsilon {
            below += 1;
        }
        if d {
            ins.push(p);
        } else {
            outs.push(p);
        }
    }
    let n = scored.len();
    PositivityReport {
        n,
        epsilon,
        count_below_epsilon: below,
        mass_below_epsilon: if n == 0 { 0.0 } else { below as f64 / n as f64 },
        screened_in: GroupSummary::from_values(ins),
        screened_out: GroupSummary::from_values(outs),
        histogram,
    }
}

/// Pairs a dataset with its propensities for [`positivity_report`].
pub fn scored_decisions(dataset: &Dataset, probs: &ProbMap) -> Result<Vec<(f64, bool)>> {
    dataset
        .instances()
        .iter()
        .map(|i| Ok((probs.require(i.id)?, i.d)))
        .collect()
}

/// Observed subset with unit weights, packaged like an augmented set.
pub fn observed_only(train: &Dataset) -> AugmentedSet {
    let examples = observed_subset(train);
    let observed = examples.len();
    AugmentedSet {
        examples,
        stats: AugmentStats {
            observed,
            excluded: train.len() - observed,
            ..AugmentStats::default()
        },
    }
}

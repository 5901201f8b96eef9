//! Metrics and plot-ready data: ROC/AUC, reliability bins, score
//! histograms, and the decision-vs-outcome agreement table, evaluated on the
//! observed test subset, the augmented test set and (for synthetic data) the
//! full ground truth.

mod agreement;
mod calibration;
mod roc;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use agreement::{
    agreement_from_scores, agreement_table, AgreementRow, AgreementTable, DecileSummary,
    AGREEMENT_CSV_HEADER,
};
pub use calibration::{calibration, CalibrationBin, CalibrationReport};
pub use roc::{roc_and_auc, RocCurve};

use crate::dataset::{fmt_f64, Dataset};
use crate::error::{Error, Result};
use crate::learners::ProbModel;
use crate::math::unit_bin;
use crate::tables::{ProbMap, TruthTable};

pub const CALIBRATION_BINS: usize = 10;
pub const HISTOGRAM_BINS: usize = 20;
/// Upper false-positive rate of the reported partial AUC.
pub const PARTIAL_AUC_MAX_FPR: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestSet {
    /// Screened-in test instances with their observed outcome.
    Observed,
    /// Observed plus confidently screened-out instances labeled 0.
    Augmented,
    /// Every test instance with its ground-truth outcome.
    FullTruth,
}

impl TestSet {
    pub fn as_str(self) -> &'static str {
        match self {
            TestSet::Observed => "observed",
            TestSet::Augmented => "augmented",
            TestSet::FullTruth => "full_truth",
        }
    }
}

/// Instances and labels of one evaluation set.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledTestSet {
    pub kind: TestSet,
    pub ids: Vec<u64>,
    pub labels: Vec<bool>,
}

/// Build the evaluation sets for a test split. The augmented set mirrors the
/// training augmentation: screened-in instances keep `y`, screened-out ones
/// with decision probability below `epsilon` get label 0.
pub fn test_sets(
    test: &Dataset,
    truth: Option<&TruthTable>,
    decision_probs: &ProbMap,
    epsilon: f64,
) -> Result<Vec<LabeledTestSet>> {
    let mut observed = LabeledTestSet {
        kind: TestSet::Observed,
        ids: vec![],
        labels: vec![],
    };
    let mut augmented = LabeledTestSet {
        kind: TestSet::Augmented,
        ..observed.clone()
    };
    for inst in test.instances() {
        let p = decision_probs.require(inst.id)?;
        if let Some(y) = inst.y {
            observed.ids.push(inst.id);
            observed.labels.push(y);
            augmented.ids.push(inst.id);
            augmented.labels.push(y);
        } else if p < epsilon {
            augmented.ids.push(inst.id);
            augmented.labels.push(false);
        }
    }
    let mut sets = vec![observed, augmented];
    if let Some(truth) = truth {
        let labels = test
            .ids()
            .map(|id| {
                truth
                    .get(id)
                    .ok_or_else(|| Error::MissingTruth(format!(" for test id {id}")))
            })
            .collect::<Result<_>>()?;
        sets.push(LabeledTestSet {
            kind: TestSet::FullTruth,
            ids: test.ids().collect(),
            labels,
        });
    }
    Ok(sets)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSetSummary {
    pub test_set: TestSet,
    pub n: usize,
    pub positives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveReport {
    pub test_set: TestSet,
    pub auc: f64,
    /// Area under the ROC curve for FPR in `[0, 0.2]`, unnormalized.
    pub partial_auc: f64,
    pub roc: RocCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub name: String,
    pub curves: Vec<CurveReport>,
}

impl ModelReport {
    pub fn curve(&self, set: TestSet) -> Option<&CurveReport> {
        self.curves.iter().find(|c| c.test_set == set)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedAgreement {
    pub model: String,
    pub table: AgreementTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub epsilon: f64,
    pub test_sets: Vec<TestSetSummary>,
    pub models: Vec<ModelReport>,
    /// Decision-model probabilities against the test decisions.
    pub decision_calibration: CalibrationReport,
    pub decision_histogram: Vec<HistogramBin>,
    pub agreement: Vec<NamedAgreement>,
}

impl EvalReport {
    pub fn model(&self, name: &str) -> Option<&ModelReport> {
        self.models.iter().find(|m| m.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Flat CSV exports as `(file name, contents)` pairs.
    pub fn csv_files(&self) -> Vec<(String, String)> {
        let mut files = Vec::new();
        for m in &self.models {
            for c in &m.curves {
                let mut out = String::from("fpr,tpr,threshold\n");
                for (&(fpr, tpr), &t) in c.roc.points.iter().zip(&c.roc.thresholds) {
                    let t = if t.is_finite() { fmt_f64(t) } else { "inf".to_string() };
                    let _ = writeln!(out, "{},{},{t}", fmt_f64(fpr), fmt_f64(tpr));
                }
                files.push((format!("roc_{}_{}.csv", m.name, c.test_set.as_str()), out));
            }
        }
        files.push(("calibration.csv".into(), self.decision_calibration.render_csv()));
        let mut agreement = String::from(AGREEMENT_CSV_HEADER);
        for a in &self.agreement {
            a.table.render_rows(&a.model, &mut agreement);
        }
        files.push(("agreement.csv".into(), agreement));
        let mut hist = String::from("lower,upper,count\n");
        for b in &self.decision_histogram {
            let _ = writeln!(hist, "{},{},{}", fmt_f64(b.lower), fmt_f64(b.upper), b.count);
        }
        files.push(("histogram.csv".into(), hist));
        files
    }

    /// One line per model and test set.
    pub fn summary_table(&self) -> String {
        let mut out = format!("{:<20} {:<11} {:>8} {:>12}\n", "model", "test set", "AUC", "pAUC[0,0.2]");
        for m in &self.models {
            for c in &m.curves {
                let _ = writeln!(
                    out,
                    "{:<20} {:<11} {:>8.4} {:>12.4}",
                    m.name,
                    c.test_set.as_str(),
                    c.auc,
                    c.partial_auc
                );
            }
        }
        out
    }
}

pub fn histogram(probs: &[f64], bins: usize) -> Vec<HistogramBin> {
    let mut counts = vec![0usize; bins];
    for &p in probs {
        counts[unit_bin(p, bins)] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(b, count)| HistogramBin {
            lower: b as f64 / bins as f64,
            upper: (b + 1) as f64 / bins as f64,
            count,
        })
        .collect()
}

/// Evaluate named outcome models on the observed, augmented and (when
/// truth is given) full-truth test sets.
pub fn evaluate_models(
    models: &[(&str, &ProbModel)],
    test: &Dataset,
    truth: Option<&TruthTable>,
    decision_probs_test: &ProbMap,
    epsilon: f64,
) -> Result<EvalReport> {
    let sets = test_sets(test, truth, decision_probs_test, epsilon)?;
    let decision_scores = decision_probs_test.aligned(test)?;
    let decisions: Vec<bool> = test.instances().iter().map(|i| i.d).collect();

    let mut reports = Vec::with_capacity(models.len());
    let mut agreement = Vec::with_capacity(models.len());
    for &(name, model) in models {
        let scores = model.predict_dataset(test)?;
        let mut curves = Vec::with_capacity(sets.len());
        for set in &sets {
            let s: Vec<f64> = set
                .ids
                .iter()
                .map(|&id| scores.require(id))
                .collect::<Result<_>>()?;
            let roc = roc_and_auc(&s, &set.labels).map_err(|e| match e {
                Error::SingleClass => Error::InvalidInput(format!(
                    "AUC undefined on the {} test set: labels contain a single class",
                    set.kind.as_str()
                )),
                other => other,
            })?;
            curves.push(CurveReport {
                test_set: set.kind,
                auc: roc.auc,
                partial_auc: roc.partial_auc(PARTIAL_AUC_MAX_FPR),
                roc,
            });
        }
        reports.push(ModelReport {
            name: name.to_string(),
            curves,
        });
        agreement.push(NamedAgreement {
            model: name.to_string(),
            table: agreement_from_scores(test, decision_probs_test, &scores)?,
        });
    }

    Ok(EvalReport {
        epsilon,
        test_sets: sets
            .iter()
            .map(|s| TestSetSummary {
                test_set: s.kind,
                n: s.ids.len(),
                positives: s.labels.iter().filter(|&&l| l).count(),
            })
            .collect(),
        models: reports,
        decision_calibration: calibration(&decision_scores, &decisions, CALIBRATION_BINS)?,
        decision_histogram: histogram(&decision_scores, HISTOGRAM_BINS),
        agreement,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Instance;
    use crate::learners::Logistic;

    fn fixture() -> (Dataset, TruthTable, ProbMap) {
        let mut instances = vec![];
        let mut truth = TruthTable::new();
        let mut probs = ProbMap::new();
        for i in 0..60u64 {
            let x = i as f64 / 10.0 - 3.0;
            let y = (i * 7) % 5 < 2 + u64::from(x > 0.0);
            let d = x > -1.0 || i % 4 == 0;
            instances.push(Instance::new(i, vec![x], d, d.then_some(y)).unwrap());
            truth.insert(i, y);
            probs.insert(i, if x < -2.0 { 0.01 } else { 0.6 });
        }
        (
            Dataset::new(Dataset::default_feature_names(1), instances).unwrap(),
            truth,
            probs,
        )
    }

    #[test]
    fn tiny_epsilon_makes_augmented_equal_observed() {
        let (ds, truth, probs) = fixture();
        let m: ProbModel = Logistic::new(vec![0.7], 0.1).into();
        let r = evaluate_models(&[("m", &m)], &ds, Some(&truth), &probs, 1e-9).unwrap();
        let mr = r.model("m").unwrap();
        let (obs, aug) = (
            mr.curve(TestSet::Observed).unwrap(),
            mr.curve(TestSet::Augmented).unwrap(),
        );
        assert_eq!(obs.roc, aug.roc);
        assert_eq!(r.test_sets.len(), 3);
    }

    #[test]
    fn same_model_under_two_names() {
        let (ds, truth, probs) = fixture();
        let m: ProbModel = Logistic::new(vec![0.7], 0.1).into();
        let r = evaluate_models(&[("a", &m), ("b", &m)], &ds, Some(&truth), &probs, 0.05).unwrap();
        assert_eq!(r.models[0].curves, r.models[1].curves);
        let again = evaluate_models(&[("a", &m), ("b", &m)], &ds, Some(&truth), &probs, 0.05).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn augmented_set_adds_confident_screen_outs_as_negatives() {
        let (ds, truth, probs) = fixture();
        let sets = test_sets(&ds, Some(&truth), &probs, 0.05).unwrap();
        let (obs, aug) = (&sets[0], &sets[1]);
        let extra = aug.ids.len() - obs.ids.len();
        let expected = ds
            .instances()
            .iter()
            .filter(|i| !i.d && probs.get(i.id).unwrap() < 0.05)
            .count();
        assert_eq!(extra, expected);
        assert!(extra > 0);
        for (id, l) in aug.ids.iter().zip(&aug.labels) {
            if !obs.ids.contains(id) {
                assert!(!l);
            }
        }
    }

    #[test]
    fn missing_truth_is_reported() {
        let (ds, _, probs) = fixture();
        let partial: TruthTable = [(0, true)].into_iter().collect();
        let m: ProbModel = Logistic::new(vec![0.7], 0.1).into();
        assert!(matches!(
            evaluate_models(&[("m", &m)], &ds, Some(&partial), &probs, 0.05),
            Err(Error::MissingTruth(_))
        ));
        let r = evaluate_models(&[("m", &m)], &ds, None, &probs, 0.05).unwrap();
        assert_eq!(r.models[0].curves.len(), 2);
    }

    #[test]
    fn csv_exports_have_fixed_names() {
        let (ds, truth, probs) = fixture();
        let m: ProbModel = Logistic::new(vec![0.7], 0.1).into();
        let r = evaluate_models(&[("observed", &m)], &ds, Some(&truth), &probs, 0.05).unwrap();
        let names: Vec<String> = r.csv_files().into_iter().map(|f| f.0).collect();
        assert_eq!(
            names,
            vec![
                "roc_observed_observed.csv",
                "roc_observed_augmented.csv",
                "roc_observed_full_truth.csv",
                "calibration.csv",
                "agreement.csv",
                "histogram.csv"
            ]
        );
        let roc = &r.csv_files()[0].1;
        assert!(roc.starts_with("fpr,tpr,threshold\n0.0000000000000000e0,0.0000000000000000e0,inf\n"));
        let back: EvalReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }
}

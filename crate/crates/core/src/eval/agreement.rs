//! Decision model vs. outcome model agreement. If the outcome model assigns
//! high risk where the decision model is confident of a screen-out, one of
//! the two is wrong; the decile summary makes that checkable.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::{fmt_f64, Dataset};
use crate::error::Result;
use crate::learners::ProbModel;
use crate::tables::ProbMap;

pub const DECILES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementRow {
    pub id: u64,
    pub decision_score: f64,
    pub outcome_score: f64,
    /// Observed outcome, `None` for screened-out instances.
    pub observed_outcome: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecileSummary {
    pub decile: usize,
    pub count: usize,
    pub min_decision_score: Option<f64>,
    pub max_decision_score: Option<f64>,
    pub mean_outcome_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementTable {
    pub rows: Vec<AgreementRow>,
    /// Mean outcome score within rank deciles of the decision score
    /// (decile 0 holds the lowest decision scores).
    pub summary: Vec<DecileSummary>,
}

impl AgreementTable {
    pub fn lowest_decile_mean(&self) -> Option<f64> {
        self.summary.first().and_then(|d| d.mean_outcome_score)
    }

    /// Rows for `agreement.csv`, prefixed with the model name.
    pub fn render_rows(&self, model: &str, out: &mut String) {
        for r in &self.rows {
            let obs = match r.observed_outcome {
                Some(true) => "1",
                Some(false) => "0",
                None => "?",
            };
            let _ = writeln!(
                out,
                "{model},{},{},{},{obs}",
                r.id,
                fmt_f64(r.decision_score),
                fmt_f64(r.outcome_score)
            );
        }
    }
}

pub const AGREEMENT_CSV_HEADER: &str = "model,id,decision_score,outcome_score,observed_outcome\n";

pub fn agreement_table(
    test: &Dataset,
    decision_model: &ProbModel,
    outcome_model: &ProbModel,
) -> Result<AgreementTable> {
    let decision = decision_model.predict_dataset(test)?;
    let outcome = outcome_model.predict_dataset(test)?;
    agreement_from_scores(test, &decision, &outcome)
}

pub fn agreement_from_scores(
    test: &Dataset,
    decision_scores: &ProbMap,
    outcome_scores: &ProbMap,
) -> Result<AgreementTable> {
    let rows: Vec<AgreementRow> = test
        .instances()
        .iter()
        .map(|i| {
            Ok(AgreementRow {
                id: i.id,
                decision_score: decision_scores.require(i.id)?,
                outcome_score: outcome_scores.require(i.id)?,
                observed_outcome: i.y,
            })
        })
        .collect::<Result<_>>()?;

    let mut ranked: Vec<&AgreementRow> = rows.iter().collect();
    ranked.sort_by(|a, b| a.decision_score.total_cmp(&b.decision_score).then(a.id.cmp(&b.id)));
    let n = ranked.len();
    let mut groups: Vec<Vec<&AgreementRow>> = vec![Vec::new(); DECILES];
    for (rank, row) in ranked.into_iter().enumerate() {
        groups[rank * DECILES / n.max(1)].push(row);
    }
    let summary = groups
        .iter()
        .enumerate()
        .map(|(decile, g)| DecileSummary {
            decile,
            count: g.len(),
            min_decision_score: g.first().map(|r| r.decision_score),
            max_decision_score: g.last().map(|r| r.decision_score),
            mean_outcome_score: (!g.is_empty())
                .then(|| g.iter().map(|r| r.outcome_score).sum::<f64>() / g.len() as f64),
        })
        .collect();
    Ok(AgreementTable { rows, summary })
}

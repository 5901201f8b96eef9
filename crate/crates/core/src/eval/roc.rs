use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// ROC curve from a descending sweep over distinct scores. `thresholds[i]`
/// is the score cut that produces `points[i]`; the first point `(0, 0)`
/// has threshold `+inf`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(false positive rate, true positive rate)` pairs.
    pub points: Vec<(f64, f64)>,
    #[serde(with = "inf_as_string")]
    pub thresholds: Vec<f64>,
    pub auc: f64,
}

mod inf_as_string {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Cut {
        Finite(f64),
        Named(String),
    }

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        v.iter()
            .map(|&t| {
                if t.is_finite() {
                    Cut::Finite(t)
                } else {
                    Cut::Named(if t > 0.0 { "inf" } else { "-inf" }.into())
                }
            })
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<Cut>::deserialize(d)?
            .into_iter()
            .map(|c| match c {
                Cut::Finite(t) => Ok(t),
                Cut::Named(s) if s == "inf" => Ok(f64::INFINITY),
                Cut::Named(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
                Cut::Named(s) => Err(serde::de::Error::custom(format!("bad threshold {s:?}"))),
            })
            .collect()
    }
}

impl RocCurve {
    /// Area under the curve for false positive rates in `[0, max_fpr]`,
    /// interpolating linearly between points. Not normalized.
    pub fn partial_auc(&self, max_fpr: f64) -> f64 {
        let mut area = 0.0;
        for w in self.points.windows(2) {
            let ((x0, y0), (x1, y1)) = (w[0], w[1]);
            if x0 >= max_fpr {
                break;
            }
            if x1 <= max_fpr {
                area += (x1 - x0) * (y0 + y1) / 2.0;
            } else {
                let y_cut = y0 + (y1 - y0) * (max_fpr - x0) / (x1 - x0);
                area += (max_fpr - x0) * (y0 + y_cut) / 2.0;
            }
        }
        area
    }
}

/// ROC sweep with tied scores grouped into one step, so the trapezoidal
/// AUC gives half credit to tied positive/negative pairs.
pub fn roc_and_auc(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidInput("scores contain NaN".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let (p, n) = (pos as f64, neg as f64);
    let mut points = vec![(0.0, 0.0)];
    let mut thresholds = vec![f64::INFINITY];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut j = 0;
    while j < order.len() {
        let cut = scores[order[j]];
        while j < order.len() && scores[order[j]] == cut {
            if labels[order[j]] {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        let (x0, y0) = *points.last().expect("non-empty");
        let pt = (fp as f64 / n, tp as f64 / p);
        auc += (pt.0 - x0) * (pt.1 + y0) / 2.0;
        points.push(pt);
        thresholds.push(cut);
    }
    Ok(RocCurve {
        points,
        thresholds,
        auc,
    })
}

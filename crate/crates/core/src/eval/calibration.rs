use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::fmt_f64;
use crate::error::{Error, Result};
use crate::math::unit_bin;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// `None` for empty bins.
    pub mean_predicted: Option<f64>,
    pub empirical_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub n: usize,
    pub bins: Vec<CalibrationBin>,
    /// Expected calibration error: count-weighted mean absolute gap between
    /// mean prediction and empirical rate over non-empty bins.
    pub ece: f64,
}

impl CalibrationReport {
    pub fn render_csv(&self) -> String {
        let mut out = String::from("lower,upper,count,mean_predicted,empirical_rate\n");
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        for b in &self.bins {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                fmt_f64(b.lower),
                fmt_f64(b.upper),
                b.count,
                opt(b.mean_predicted),
                opt(b.empirical_rate)
            );
        }
        out
    }
}

/// Reliability bins of equal width over `[0, 1]` (last bin right-closed).
pub fn calibration(probs: &[f64], labels: &[bool], n_bins: usize) -> Result<CalibrationReport> {
    if probs.is_empty() {
        return Err(Error::InvalidInput("calibration needs at least one prediction".into()));
    }
    if probs.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} probabilities but {} labels",
            probs.len(),
            labels.len()
        )));
    }
    if n_bins == 0 {
        return Err(Error::Config("calibration needs at least one bin".into()));
    }
    let mut count = vec![0usize; n_bins];
    let mut sum_p = vec![0.0; n_bins];
    let mut sum_y = vec![0.0; n_bins];
    for (&p, &y) in probs.iter().zip(labels) {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidInput(format!("probability {p} outside [0, 1]")));
        }
        let b = unit_bin(p, n_bins);
        count[b] += 1;
        sum_p[b] += p;
        sum_y[b] += f64::from(u8::from(y));
    }
    let n = probs.len();
    let mut ece = 0.0;
    let bins = (0..n_bins)
        .map(|b| {
            let (mean_predicted, empirical_rate) = if count[b] == 0 {
                (None, None)
            } else {
                let c = count[b] as f64;
                let (mp, er) = (sum_p[b] / c, sum_y[b] / c);
                ece += c / n as f64 * (mp - er).abs();
                (Some(mp), Some(er))
            };
            CalibrationBin {
                lower: b as f64 / n_bins as f64,
                upper: (b + 1) as f64 / n_bins as f64,
                count: count[b],
                mean_predicted,
                empirical_rate,
            }
        })
        .collect();
    Ok(CalibrationReport { n, bins, ece })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_half_with_balanced_labels() {
        let r = calibration(&[0.5; 4], &[true, false, true, false], 10).unwrap();
        assert_eq!(r.ece, 0.0);
        assert_eq!(r.bins[5].count, 4);
    }

    #[test]
    fn one_in_ten_at_point_one() {
        let mut labels = vec![false; 10];
        labels[3] = true;
        let r = calibration(&[0.1; 10], &labels, 10).unwrap();
        assert!(r.ece.abs() < 1e-15);
    }

    #[test]
    fn two_occupied_bins() {
        let r = calibration(&[0.2, 0.2, 0.8, 0.8], &[false, true, true, true], 10).unwrap();
        assert!((r.ece - 0.25).abs() < 1e-15);
        assert_eq!(r.bins.iter().map(|b| b.count).sum::<usize>(), 4);
    }

    #[test]
    fn errors() {
        assert!(calibration(&[], &[], 10).is_err());
        assert!(calibration(&[0.1], &[], 10).is_err());
        assert!(calibration(&[1.1], &[true], 10).is_err());
    }

    proptest! {
        #[test]
        fn counts_sum_and_permutation_invariance(
            data in proptest::collection::vec((0.0f64..=1.0, any::<bool>()), 1..100),
            bins in 1usize..20,
            rot in 0usize..100,
        ) {
            let (p, l): (Vec<f64>, Vec<bool>) = data.iter().copied().unzip();
            let r = calibration(&p, &l, bins).unwrap();
            prop_assert_eq!(r.bins.iter().map(|b| b.count).sum::<usize>(), p.len());
            prop_assert!((0.0..=1.0).contains(&r.ece));
            let mut rotated = data.clone();
            rotated.rotate_left(rot % data.len());
            let (p2, l2): (Vec<f64>, Vec<bool>) = rotated.into_iter().unzip();
            let r2 = calibration(&p2, &l2, bins).unwrap();
            prop_assert!((r.ece - r2.ece).abs() < 1e-12);
        }
    }
}

//! Synthetic data-generating process with an expert-consistency region, and
//! the semi-synthetic relabeling that forces a high-recall expert regime.
//!
//! Each instance draws `x ~ N(0, I_k)` and an unobservable `u ~ N(0, 1)`.
//! With risk logit `z = beta.x + beta0 + gamma*u`, the outcome is
//! `y* ~ Bernoulli(sigmoid(z))`. The expert scores the case as
//! `s = sigmoid(alpha*z + eta)`, `eta ~ N(0, sigma_e^2)`, then screens out
//! deterministically below `t_low`, screens in deterministically above
//! `t_high`, and flips a coin with probability `s` in between.
//!
//! The default thresholds are a modeling choice, not calibrated to any real
//! decision process; they put a sizeable share of the population in the
//! deterministic screen-out region so positivity fails there.

use serde::{Deserialize, Serialize};

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::dataset::{Dataset, Instance};
use crate::error::{Error, Result};
use crate::math::{dot, logit, sigmoid, simpson};
use crate::rng;
use crate::tables::{ProbMap, TruthTable};

/// Seed used to draw the default outcome coefficients.
pub const DEFAULT_BETA_SEED: u64 = 20_180_712;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "RawDgpConfig")]
pub struct DgpConfig {
    pub k: usize,
    pub beta: Vec<f64>,
    pub beta0: f64,
    /// Weight of the unobservable in both outcome and expert score.
    /// Zero means `Y` is independent of `D` given `X`.
    pub gamma: f64,
    pub expert_noise_sd: f64,
    pub t_low: f64,
    pub t_high: f64,
    /// Expert sharpness.
    pub alpha: f64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self::with_k(10)
    }
}

impl DgpConfig {
    /// Default configuration with `k` features.
    pub fn with_k(k: usize) -> Self {
        Self {
            k,
            beta: default_beta(k, DEFAULT_BETA_SEED),
            beta0: -1.0,
            gamma: 0.0,
            expert_noise_sd: 0.3,
            t_low: 0.08,
            t_high: 0.6,
            alpha: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("dgp: {m}")));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.beta.len() != self.k {
            return bad(format!("beta has {} entries, k = {}", self.beta.len(), self.k));
        }
        if !self.beta.iter().chain([&self.beta0]).all(|v| v.is_finite()) {
            return bad("coefficients must be finite".into());
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be >= 0, got {}", self.gamma));
        }
        if !(self.expert_noise_sd >= 0.0 && self.expert_noise_sd.is_finite()) {
            return bad(format!("expert_noise_sd must be >= 0, got {}", self.expert_noise_sd));
        }
        if !(0.0 <= self.t_low && self.t_low < self.t_high && self.t_high <= 1.0) {
            return bad(format!(
                "need 0 <= t_low < t_high <= 1, got t_low = {}, t_high = {}",
                self.t_low, self.t_high
            ));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be > 0, got {}", self.alpha));
        }
        Ok(())
    }

    /// Observable part of the risk logit, `beta.x + beta0`.
    pub fn observable_logit(&self, x: &[f64]) -> f64 {
        dot(&self.beta, x) + self.beta0
    }

    /// Standard deviation of the expert-score noise not explained by `x`,
    /// i.e. of `alpha*gamma*u + eta`.
    fn score_noise_sd(&self) -> f64 {
        (self.alpha * self.alpha * self.gamma * self.gamma
            + self.expert_noise_sd * self.expert_noise_sd)
            .sqrt()
    }

    /// Exact propensity `P(d = 1 | x)` under this process.
    pub fn true_propensity(&self, x: &[f64]) -> f64 {
        let m = self.alpha * self.observable_logit(x);
        let sd = self.score_noise_sd();
        let (lo, hi) = (logit(self.t_low), logit(self.t_high));
        if sd == 0.0 {
            let s = sigmoid(m);
            return if s < self.t_low {
                0.0
            } else if s > self.t_high {
                1.0
            } else {
                s
            };
        }
        // The score logit is m + sd*t with t ~ N(0, 1).
        let a = ((lo - m) / sd).max(-12.0);
        let b = ((hi - m) / sd).min(12.0);
        let upper = if hi.is_finite() { normal_sf((hi - m) / sd) } else { 0.0 };
        let middle = simpson(
            |t| sigmoid(m + sd * t) * (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt(),
            a,
            b,
            512,
        );
        (upper + middle).clamp(0.0, 1.0)
    }

    /// `P(y* = 1 | x)`, marginalizing the unobservable.
    pub fn outcome_probability(&self, x: &[f64]) -> f64 {
        let z = self.observable_logit(x);
        if self.gamma == 0.0 {
            return sigmoid(z);
        }
        simpson(
            |t| sigmoid(z + self.gamma * t) * (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt(),
            -12.0,
            12.0,
            512,
        )
    }
}

/// Coefficients drawn from `N(0, 1)` with a fixed seed.
/// Upper tail of the standard normal.
fn normal_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z / std::f64::consts::SQRT_2)
}

pub fn default_beta(k: usize, seed: u64) -> Vec<f64> {
    let mut r = rng::from_seed(seed);
    (0..k).map(|_| r.sample(StandardNormal)).collect()
}

#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawDgpConfig {
    k: usize,
    beta: Option<Vec<f64>>,
    beta_seed: u64,
    beta0: f64,
    gamma: f64,
    expert_noise_sd: f64,
    t_low: f64,
    t_high: f64,
    alpha: f64,
}

impl Default for RawDgpConfig {
    fn default() -> Self {
        let d = DgpConfig::default();
        Self {
            k: d.k,
            beta: None,
            beta_seed: DEFAULT_BETA_SEED,
            beta0: d.beta0,
            gamma: d.gamma,
            expert_noise_sd: d.expert_noise_sd,
            t_low: d.t_low,
            t_high: d.t_high,
            alpha: d.alpha,
        }
    }
}

impl From<RawDgpConfig> for DgpConfig {
    fn from(raw: RawDgpConfig) -> Self {
        Self {
            k: raw.k,
            beta: raw.beta.unwrap_or_else(|| default_beta(raw.k, raw.beta_seed)),
            beta0: raw.beta0,
            gamma: raw.gamma,
            expert_noise_sd: raw.expert_noise_sd,
            t_low: raw.t_low,
            t_high: raw.t_high,
            alpha: raw.alpha,
        }
    }
}

/// Per-instance latent quantities, kept for oracle checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Latent {
    /// Full risk logit including the unobservable.
    pub risk_logit: f64,
    /// Expert score `s`.
    pub score: f64,
    /// Whether the decision fell in a deterministic region.
    pub forced: bool,
}

#[derive(Debug, Clone)]
pub struct Generated {
    pub dataset: Dataset,
    pub truth: TruthTable,
    /// Aligned with `dataset.instances()`.
    pub latent: Vec<Latent>,
}

/// Draw `n` instances. Instance `i` has id `i` and its own random stream
/// derived from `(seed, i)`.
pub fn generate(config: &DgpConfig, n: usize, seed: u64) -> Result<Generated> {
    config.validate()?;
    if n == 0 {
        return Err(Error::Config("n must be positive".into()));
    }
    let mut instances = Vec::with_capacity(n);
    let mut truth = TruthTable::new();
    let mut latent = Vec::with_capacity(n);
    for id in 0..n as u64 {
        let mut r = rng::from_seed(rng::derive(seed, id));
        let x: Vec<f64> = (0..config.k).map(|_| r.sample(StandardNormal)).collect();
        let u: f64 = r.sample(StandardNormal);
        let risk_logit = config.observable_logit(&x) + config.gamma * u;
        let y_star = r.random::<f64>() < sigmoid(risk_logit);
        let eta: f64 = r.sample::<f64, _>(StandardNormal) * config.expert_noise_sd;
        let score = sigmoid(config.alpha * risk_logit + eta);
        let (d, forced) = if score < config.t_low {
            (false, true)
        } else if score > config.t_high {
            (true, true)
        } else {
            (r.random::<f64>() < score, false)
        };
        truth.insert(id, y_star);
        latent.push(Latent {
            risk_logit,
            score,
            forced,
        });
        instances.push(Instance {
            id,
            x,
            d,
            y: d.then_some(y_star),
        });
    }
    let dataset = Dataset::new(Dataset::default_feature_names(config.k), instances)?;
    Ok(Generated {
        dataset,
        truth,
        latent,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SemiSyntheticConfig {
    pub threshold: f64,
}

impl Default for SemiSyntheticConfig {
    fn default() -> Self {
        Self { threshold: 0.9 }
    }
}

impl SemiSyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.threshold > 0.0 && self.threshold < 1.0 {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "semi_synthetic.threshold must lie in (0, 1), got {}",
                self.threshold
            )))
        }
    }
}

#[derive(Debug, Clone)]
pub struct Transformed {
    pub dataset: Dataset,
    /// `y^s` for every instance; `None` when the input carried no truth.
    pub truth: Option<TruthTable>,
}

/// Relabel so only confidently screened-in cases keep their decision and
/// outcome. Instances with decision probability at or below the threshold
/// become screened out (outcome censored) and their true outcome is set to 0
/// in the returned truth table.
pub fn semi_synthetic_transform(
    dataset: &Dataset,
    truth: Option<&TruthTable>,
    decision_probs: &ProbMap,
    config: &SemiSyntheticConfig,
) -> Result<Transformed> {
    config.validate()?;
    let mut instances = Vec::with_capacity(dataset.len());
    let mut new_truth = truth.map(|_| TruthTable::new());
    for inst in dataset.instances() {
        let p = decision_probs.require(inst.id)?;
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidInput(format!(
                "decision probability {p} for id {} outside [0, 1]",
                inst.id
            )));
        }
        let keep = p > config.threshold;
        if let (Some(src), Some(dst)) = (truth, new_truth.as_mut()) {
            let y = src.get(inst.id).ok_or_else(|| {
                Error::MissingTruth(format!(" for id {}", inst.id))
            })?;
            dst.insert(inst.id, keep && y);
        }
        let mut out = inst.clone();
        if !keep {
            out.d = false;
            out.y = None;
        }
        instances.push(out);
    }
    Ok(Transformed {
        dataset: dataset.with_instances(instances)?,
        truth: new_truth,
    })
}

/// Truth restricted to the dataset's ids, checked against every observed
/// outcome.
pub fn ground_truth_table(dataset: &Dataset, truth: Option<&TruthTable>) -> Result<TruthTable> {
    let truth = truth.ok_or_else(|| {
        Error::MissingTruth(": loaded data carries no ground-truth table".into())
    })?;
    let mut out = TruthTable::new();
    for inst in dataset.instances() {
        let y = truth
            .get(inst.id)
            .ok_or_else(|| Error::MissingTruth(format!(" for id {}", inst.id)))?;
        if let Some(observed) = inst.y {
            if observed != y {
                return Err(Error::Invariant(format!(
                    "truth for id {} disagrees with the observed outcome",
                    inst.id
                )));
            }
        }
        out.insert(inst.id, y);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mc_rng(seed: u64) -> rng::Rng {
        rng::from_seed(seed)
    }

    #[test]
    fn default_config_is_valid_and_matches_documented_values() {
        let c = DgpConfig::default();
        c.validate().unwrap();
        assert_eq!(c.k, 10);
        assert_eq!(c.beta.len(), 10);
        assert_eq!((c.beta0, c.alpha, c.expert_noise_sd), (-1.0, 1.0, 0.3));
        assert_eq!((c.t_low, c.t_high, c.gamma), (0.08, 0.6, 0.0));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = DgpConfig::default();
        c.t_low = 0.7;
        assert!(c.validate().is_err());
        let mut c = DgpConfig::default();
        c.beta.pop();
        assert!(c.validate().is_err());
        let mut c = DgpConfig::default();
        c.alpha = 0.0;
        assert!(c.validate().is_err());
        assert!(matches!(
            generate(&DgpConfig::default(), 0, 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn toml_defaults_fill_beta() {
        let c: DgpConfig = toml::from_str("k = 3\nbeta0 = -2.0").unwrap();
        assert_eq!(c.beta, default_beta(3, DEFAULT_BETA_SEED));
        assert_eq!(c.beta0, -2.0);
        let c: DgpConfig = toml::from_str("k = 2\nbeta = [1.0, 2.0]").unwrap();
        assert_eq!(c.beta, vec![1.0, 2.0]);
    }

    #[test]
    fn censoring_convention_and_determinism() {
        let c = DgpConfig::default();
        let a = generate(&c, 500, 9).unwrap();
        let b = generate(&c, 500, 9).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.truth, b.truth);
        for inst in a.dataset.instances() {
            assert_eq!(inst.d, inst.y.is_some());
            if let Some(y) = inst.y {
                assert_eq!(a.truth.get(inst.id), Some(y));
            }
        }
        assert_ne!(a.dataset, generate(&c, 500, 10).unwrap().dataset);
        // Prefix stability: instance streams depend only on (seed, id).
        let short = generate(&c, 100, 9).unwrap();
        assert_eq!(short.dataset.instances(), &a.dataset.instances()[..100]);
    }

    #[test]
    fn no_deterministic_region_when_thresholds_open() {
        let mut c = DgpConfig::default();
        c.t_low = 0.0;
        c.t_high = 1.0;
        c.expert_noise_sd = 0.0;
        let g = generate(&c, 2000, 3).unwrap();
        assert!(g.latent.iter().all(|l| !l.forced));
        for inst in g.dataset.instances() {
            let p = c.true_propensity(&inst.x);
            assert!(p > 0.0);
            assert!((p - sigmoid(c.alpha * c.observable_logit(&inst.x))).abs() < 1e-15);
        }
    }

    #[test]
    fn positivity_holds_without_low_threshold() {
        let mut c = DgpConfig::default();
        c.t_low = 0.0;
        let g = generate(&c, 2000, 4).unwrap();
        assert!(g.dataset.instances().iter().all(|i| c.true_propensity(&i.x) > 0.0));
    }

    #[test]
    fn deterministic_screen_out_fraction_matches_monte_carlo() {
        let mut c = DgpConfig::default();
        c.beta0 = -3.0;
        c.t_low = 0.08;
        let n = 20_000;
        let g = generate(&c, n, 77).unwrap();
        let forced_out = g
            .latent
            .iter()
            .filter(|l| l.forced && l.score < c.t_low)
            .count() as f64
            / n as f64;
        assert!(forced_out > 0.0);
        assert!(g
            .latent
            .iter()
            .zip(g.dataset.instances())
            .all(|(l, i)| !(l.score < c.t_low) || !i.d));

        // Independent Monte-Carlo of the score distribution, 10^6 draws.
        let mut r = mc_rng(0xC0FFEE);
        let draws = 1_000_000;
        let mut below = 0usize;
        for _ in 0..draws {
            let x: Vec<f64> = (0..c.k).map(|_| r.sample(StandardNormal)).collect();
            let z = dot(&c.beta, &x) + c.beta0;
            let eta: f64 = r.sample::<f64, _>(StandardNormal) * c.expert_noise_sd;
            if sigmoid(c.alpha * z + eta) < c.t_low {
                below += 1;
            }
        }
        let p = below as f64 / draws as f64;
        let se = (p * (1.0 - p) / n as f64 + p * (1.0 - p) / draws as f64).sqrt();
        assert!(
            (forced_out - p).abs() < 3.0 * se,
            "generated {forced_out}, monte-carlo {p}, se {se}"
        );
    }

    #[test]
    fn true_propensity_matches_simulation_at_fixed_x() {
        let c = DgpConfig::default();
        let mut r = mc_rng(5);
        for _ in 0..4 {
            let x: Vec<f64> = (0..c.k).map(|_| r.sample::<f64, _>(StandardNormal) * 0.3).collect();
            let z = c.observable_logit(&x);
            let draws = 200_000;
            let mut hits = 0usize;
            for _ in 0..draws {
                let eta: f64 = r.sample::<f64, _>(StandardNormal) * c.expert_noise_sd;
                let s = sigmoid(c.alpha * z + eta);
                let d = if s < c.t_low {
                    false
                } else if s > c.t_high {
                    true
                } else {
                    r.random::<f64>() < s
                };
                hits += usize::from(d);
            }
            let mc = hits as f64 / draws as f64;
            let p = c.true_propensity(&x);
            let se = (p * (1.0 - p) / draws as f64).sqrt().max(1e-6);
            assert!((mc - p).abs() < 4.0 * se, "x-logit {z}: mc {mc} vs exact {p}");
        }
    }

    fn toy_dataset() -> (Dataset, TruthTable) {
        let rows = [(true, Some(true)), (true, Some(true)), (false, None), (true, Some(false))];
        let instances = rows
            .iter()
            .enumerate()
            .map(|(i, &(d, y))| Instance::new(i as u64, vec![i as f64], d, y).unwrap())
            .collect();
        let truth = [(0, true), (1, true), (2, true), (3, false)].into_iter().collect();
        (
            Dataset::new(Dataset::default_feature_names(1), instances).unwrap(),
            truth,
        )
    }

    #[test]
    fn transform_follows_both_branches() {
        let (ds, truth) = toy_dataset();
        let probs: ProbMap = [(0, 0.95), (1, 0.6), (2, 0.95), (3, 0.9)].into_iter().collect();
        let out = semi_synthetic_transform(&ds, Some(&truth), &probs, &SemiSyntheticConfig::default())
            .unwrap();
        let inst = out.dataset.instances();
        assert_eq!((inst[0].d, inst[0].y), (true, Some(true)));
        assert_eq!((inst[1].d, inst[1].y), (false, None));
        // Confident but screened out: decision unchanged, truth carried over.
        assert_eq!((inst[2].d, inst[2].y), (false, None));
        // Exactly at the threshold falls in the second branch.
        assert_eq!((inst[3].d, inst[3].y), (false, None));
        let t = out.truth.unwrap();
        assert_eq!(t.get(0), Some(true));
        assert_eq!(t.get(1), Some(false));
        assert_eq!(t.get(2), Some(true));
        assert_eq!(t.get(3), Some(false));
    }

    #[test]
    fn transform_with_certain_probabilities_is_identity() {
        let (ds, truth) = toy_dataset();
        let probs: ProbMap = ds.ids().map(|id| (id, 1.0)).collect();
        let out = semi_synthetic_transform(&ds, Some(&truth), &probs, &SemiSyntheticConfig::default())
            .unwrap();
        assert_eq!(out.dataset, ds);
        assert_eq!(out.truth.unwrap(), truth);
    }

    #[test]
    fn transform_rejects_misaligned_probabilities() {
        let (ds, _) = toy_dataset();
        let probs: ProbMap = [(0, 0.5)].into_iter().collect();
        assert!(matches!(
            semi_synthetic_transform(&ds, None, &probs, &SemiSyntheticConfig::default()),
            Err(Error::MissingProbability(1))
        ));
    }

    #[test]
    fn transform_only_removes_screen_ins() {
        let c = DgpConfig::default();
        let g = generate(&c, 3000, 21).unwrap();
        let probs: ProbMap = g
            .dataset
            .instances()
            .iter()
            .map(|i| (i.id, c.true_propensity(&i.x)))
            .collect();
        let cfg = SemiSyntheticConfig::default();
        let out = semi_synthetic_transform(&g.dataset, Some(&g.truth), &probs, &cfg).unwrap();
        let truth = out.truth.as_ref().unwrap();
        for (before, after) in g.dataset.instances().iter().zip(out.dataset.instances()) {
            assert!(after.d <= before.d);
            assert_eq!(after.d, after.y.is_some());
            if probs.get(before.id).unwrap() <= cfg.threshold {
                assert_eq!(truth.get(before.id), Some(false));
            }
        }
        let table = ground_truth_table(&out.dataset, out.truth.as_ref()).unwrap();
        assert_eq!(&table, truth);
    }

    #[test]
    fn ground_truth_table_agrees_with_observed_outcomes() {
        let g = generate(&DgpConfig::default(), 400, 8).unwrap();
        let table = ground_truth_table(&g.dataset, Some(&g.truth)).unwrap();
        for inst in g.dataset.instances() {
            if let Some(y) = inst.y {
                assert_eq!(table.get(inst.id), Some(y));
            }
        }
        assert!(matches!(
            ground_truth_table(&g.dataset, None),
            Err(Error::MissingTruth(_))
        ));
    }
}

//! End-to-end experiment: generate, split, fit the decision model,
//! optionally apply the semi-synthetic relabeling, augment, train the three
//! outcome models and evaluate them. The run is a pure function of the
//! configuration; writing artifacts and the hash manifest is a separate step.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{
    build_augmented, observed_only, positivity_report, scored_decisions, AugmentConfig,
    AugmentedSet, PositivityReport, WeightMode,
};
use crate::dataset::{render_dataset, Dataset};
use crate::error::{Error, Result};
use crate::eval::{evaluate_models, EvalReport};
use crate::learners::{
    cross_fit_probs, target_examples, CrossFitTarget, LearnerSpec, ProbModel,
};
use crate::rng::{self, stream};
use crate::synthgen::{
    generate, semi_synthetic_transform, DgpConfig, Generated, SemiSyntheticConfig,
};
use crate::tables::{ProbMap, TruthTable};

pub const MODEL_OBSERVED: &str = "observed";
pub const MODEL_AUGMENTED: &str = "augmented";
pub const MODEL_AUGMENTED_IPW: &str = "augmented_ipw";
pub const OUTCOME_MODELS: [&str; 3] = [MODEL_OBSERVED, MODEL_AUGMENTED, MODEL_AUGMENTED_IPW];

/// How training-set decision probabilities are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropensityMode {
    /// Out-of-fold predictions.
    #[default]
    CrossFit,
    /// Predictions of the model fit on the full training set.
    InSample,
}

fn default_n() -> usize {
    20_000
}

fn default_train_fraction() -> f64 {
    0.75
}

fn default_folds() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Required, either here or on the command line.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default)]
    pub dgp: DgpConfig,
    /// Present to enable the semi-synthetic relabeling.
    #[serde(default)]
    pub semi_synthetic: Option<SemiSyntheticConfig>,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub augment: AugmentConfig,
    #[serde(default)]
    pub decision_model: LearnerSpec,
    #[serde(default)]
    pub outcome_model: LearnerSpec,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub decision_probs: PropensityMode,
    /// Output directory; not part of the config echo.
    #[serde(default, skip_serializing)]
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: None,
            n: default_n(),
            dgp: DgpConfig::default(),
            semi_synthetic: None,
            train_fraction: default_train_fraction(),
            augment: AugmentConfig::default(),
            decision_model: LearnerSpec::default(),
            outcome_model: LearnerSpec::default(),
            folds: default_folds(),
            decision_probs: PropensityMode::default(),
            out: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Config("seed is required (set `seed` or pass --seed)".into()))
    }

    pub fn validate(&self) -> Result<()> {
        self.seed()?;
        if self.n == 0 {
            return Err(Error::Config("n must be positive".into()));
        }
        self.dgp.validate()?;
        if let Some(s) = &self.semi_synthetic {
            s.validate()?;
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        self.augment.validate()?;
        if self.folds < 2 {
            return Err(Error::Config(format!("folds must be >= 2, got {}", self.folds)));
        }
        Ok(())
    }

    /// Canonical echo used in the manifest.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// Decision model fit on a training split, with training probabilities
/// (out-of-fold by default) and test probabilities from the full-train fit
/// (empty when no test set is given).
#[derive(Debug, Clone)]
pub struct DecisionFit {
    pub model: ProbModel,
    pub train_probs: ProbMap,
    pub test_probs: ProbMap,
}

pub fn fit_decision(
    train: &Dataset,
    test: Option<&Dataset>,
    learner: &LearnerSpec,
    folds: usize,
    mode: PropensityMode,
    seed: u64,
) -> Result<DecisionFit> {
    let model = learner.fit(
        &target_examples(train, CrossFitTarget::Decision),
        rng::derive(seed, u64::MAX),
    )?;
    let train_probs = match mode {
        PropensityMode::CrossFit => {
            cross_fit_probs(train, CrossFitTarget::Decision, learner, folds, seed)?
        }
        PropensityMode::InSample => model.predict_dataset(train)?,
    };
    let test_probs = match test {
        Some(t) => model.predict_dataset(t)?,
        None => ProbMap::new(),
    };
    Ok(DecisionFit {
        model,
        train_probs,
        test_probs,
    })
}

/// Probabilities that drove the semi-synthetic relabeling.
#[derive(Debug, Clone)]
pub struct SemiSyntheticStage {
    pub train_probs: ProbMap,
    pub test_probs: ProbMap,
}

#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub seed: u64,
    pub generated: Generated,
    pub semi: Option<SemiSyntheticStage>,
    /// Splits as seen by the models (after relabeling, if enabled).
    pub train: Dataset,
    pub test: Dataset,
    /// Ground truth for evaluation (`y^s` when relabeled).
    pub truth: TruthTable,
    pub decision: DecisionFit,
    pub positivity: PositivityReport,
    pub observed_set: AugmentedSet,
    pub augmented_set: AugmentedSet,
    pub augmented_ipw_set: AugmentedSet,
    /// In [`OUTCOME_MODELS`] order.
    pub outcome_models: Vec<(String, ProbModel)>,
    pub report: EvalReport,
}

impl ExperimentRun {
    pub fn outcome_model(&self, name: &str) -> Option<&ProbModel> {
        self.outcome_models
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
    }
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentRun> {
    config.validate()?;
    let seed = config.seed()?;

    let generated = stage(
        "generate",
        generate(&config.dgp, config.n, rng::derive(seed, stream::GENERATE)),
    )?;
    let (train, test) = stage(
        "split",
        crate::dataset::split(
            &generated.dataset,
            config.train_fraction,
            rng::derive(seed, stream::SPLIT),
        ),
    )?;

    let (train, test, truth, semi) = match &config.semi_synthetic {
        None => (train, test, generated.truth.clone(), None),
        Some(semi_cfg) => {
            let fit = stage(
                "semi-synthetic decision model",
                fit_decision(
                    &train,
                    Some(&test),
                    &config.decision_model,
                    config.folds,
                    config.decision_probs,
                    rng::derive(seed, stream::SEMI_DECISION),
                ),
            )?;
            let tr = stage(
                "transform",
                semi_synthetic_transform(&train, Some(&generated.truth), &fit.train_probs, semi_cfg),
            )?;
            let te = stage(
                "transform",
                semi_synthetic_transform(&test, Some(&generated.truth), &fit.test_probs, semi_cfg),
            )?;
            let mut truth = tr.truth.expect("truth retained");
            for (id, y) in te.truth.expect("truth retained").iter() {
                truth.insert(id, y);
            }
            let stage_probs = SemiSyntheticStage {
                train_probs: fit.train_probs,
                test_probs: fit.test_probs,
            };
            (tr.dataset, te.dataset, truth, Some(stage_probs))
        }
    };

    let decision = stage(
        "decision model",
        fit_decision(
            &train,
            Some(&test),
            &config.decision_model,
            config.folds,
            config.decision_probs,
            rng::derive(seed, stream::DECISION),
        ),
    )?;
    let positivity = positivity_report(
        &stage("positivity", scored_decisions(&train, &decision.train_probs))?,
        config.augment.epsilon,
    );

    let observed_set = observed_only(&train);
    let augmented_set = stage(
        "augment",
        build_augmented(
            &train,
            &decision.train_probs,
            &AugmentConfig {
                weight_mode: WeightMode::None,
                ..config.augment
            },
        ),
    )?;
    let augmented_ipw_set = stage(
        "augment",
        build_augmented(
            &train,
            &decision.train_probs,
            &AugmentConfig {
                weight_mode: WeightMode::Ipw,
                ..config.augment
            },
        ),
    )?;
    check_augmentation(&train, &augmented_set)?;

    // One seed for all three variants so they differ only in training data.
    let outcome_seed = rng::derive(seed, stream::OUTCOME);
    let mut outcome_models = Vec::with_capacity(3);
    for (name, set) in OUTCOME_MODELS
        .iter()
        .zip([&observed_set, &augmented_set, &augmented_ipw_set])
    {
        let model = stage(
            "outcome model",
            config.outcome_model.fit(&set.examples, outcome_seed),
        )?;
        outcome_models.push((name.to_string(), model));
    }

    let named: Vec<(&str, &ProbModel)> = outcome_models
        .iter()
        .map(|(n, m)| (n.as_str(), m))
        .collect();
    let report = stage(
        "evaluate",
        evaluate_models(
            &named,
            &test,
            Some(&truth),
            &decision.test_probs,
            config.augment.epsilon,
        ),
    )?;

    Ok(ExperimentRun {
        seed,
        generated,
        semi,
        train,
        test,
        truth,
        decision,
        positivity,
        observed_set,
        augmented_set,
        augmented_ipw_set,
        outcome_models,
        report,
    })
}

fn check_augmentation(train: &Dataset, set: &AugmentedSet) -> Result<()> {
    let s = set.stats;
    if s.observed + s.augmented + s.excluded != train.len() {
        return Err(Error::Invariant(format!(
            "augmentation partition {s:?} does not cover {} training instances",
            train.len()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
    }

    /// Augmentation threshold from the config echo.
    pub fn epsilon(&self) -> Option<f64> {
        self.config["augment"]["epsilon"].as_f64()
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const REPORT_FILE: &str = "report.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn record(path: &str, bytes: &[u8]) -> FileRecord {
    FileRecord {
        path: path.to_string(),
        sha256: sha256_hex(bytes),
        bytes: bytes.len() as u64,
    }
}

/// Every artifact of a run as `(file name, contents)`, in a fixed order.
pub fn artifacts(run: &ExperimentRun) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = vec![
        ("generated.csv".into(), render_dataset(&run.generated.dataset).into_bytes()),
        ("generated_truth.csv".into(), run.generated.truth.render().into_bytes()),
        ("train.csv".into(), render_dataset(&run.train).into_bytes()),
        ("test.csv".into(), render_dataset(&run.test).into_bytes()),
        ("truth.csv".into(), run.truth.render().into_bytes()),
        ("decision_probs_train.csv".into(), run.decision.train_probs.render().into_bytes()),
        ("decision_probs_test.csv".into(), run.decision.test_probs.render().into_bytes()),
        ("positivity.json".into(), run.positivity.to_json().into_bytes()),
        ("augmented.csv".into(), run.augmented_set.render().into_bytes()),
        ("augmented_ipw.csv".into(), run.augmented_ipw_set.render().into_bytes()),
        ("model_decision.json".into(), run.decision.model.to_json().into_bytes()),
    ];
    if let Some(semi) = &run.semi {
        files.push(("semi_probs_train.csv".into(), semi.train_probs.render().into_bytes()));
        files.push(("semi_probs_test.csv".into(), semi.test_probs.render().into_bytes()));
    }
    for (name, model) in &run.outcome_models {
        files.push((format!("model_{name}.json"), model.to_json().into_bytes()));
    }
    files.push((REPORT_FILE.into(), run.report.to_json().into_bytes()));
    for (name, contents) in run.report.csv_files() {
        files.push((name, contents.into_bytes()));
    }
    files
}

/// Writes files into a directory and removes them again unless committed.
pub struct OutputWriter {
    dir: PathBuf,
    created_dirs: Vec<PathBuf>,
    written: Vec<PathBuf>,
    records: Vec<FileRecord>,
    committed: bool,
}

impl OutputWriter {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        let mut w = Self {
            dir: dir.clone(),
            created_dirs: vec![],
            written: vec![],
            records: vec![],
            committed: false,
        };
        w.ensure_dir(&dir)?;
        Ok(w)
    }

    fn ensure_dir(&mut self, dir: &Path) -> Result<()> {
        let mut missing = vec![];
        let mut cur = Some(dir);
        while let Some(d) = cur {
            if d.as_os_str().is_empty() || d.exists() {
                break;
            }
            missing.push(d.to_path_buf());
            cur = d.parent();
        }
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.created_dirs.extend(missing.into_iter().rev());
        Ok(())
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            self.ensure_dir(parent)?;
        }
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.written.push(path);
        self.records.push(record(name, bytes));
        Ok(())
    }

    pub fn records(&self) -> &[FileRecord] {
        &self.records
    }

    pub fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for OutputWriter {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for p in &self.written {
            let _ = std::fs::remove_file(p);
        }
        for d in self.created_dirs.iter().rev() {
            let _ = std::fs::remove_dir(d);
        }
    }
}

/// Input file read by a run, recorded in the manifest under its file name.
pub fn input_record(path: &Path) -> Result<FileRecord> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(record(&name, &bytes))
}

/// Write `files` plus `manifest.json` into `out`. On any failure the files
/// written so far are removed.
pub fn write_outputs(
    out: &Path,
    files: Vec<(String, Vec<u8>)>,
    seed: Option<u64>,
    config: serde_json::Value,
    inputs: Vec<FileRecord>,
) -> Result<Manifest> {
    let mut writer = OutputWriter::new(out)?;
    for (name, bytes) in files {
        writer.write(&name, &bytes).map_err(|e| e.in_stage("write outputs"))?;
    }
    let mut outputs = writer.records().to_vec();
    outputs.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = Manifest {
        format: "selective-labels/manifest".into(),
        version: 1,
        seed,
        config,
        inputs,
        outputs,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    writer
        .write(MANIFEST_FILE, text.as_bytes())
        .map_err(|e| e.in_stage("write outputs"))?;
    writer.commit();
    Ok(manifest)
}

/// Write every artifact of `run` plus the manifest into `out`.
pub fn write_run(
    run: &ExperimentRun,
    config: &ExperimentConfig,
    inputs: Vec<FileRecord>,
    out: &Path,
) -> Result<Manifest> {
    let mut config = config.clone();
    config.seed = Some(run.seed);
    write_outputs(out, artifacts(run), Some(run.seed), config.echo(), inputs)
}

/// Per-seed AUC rows for multi-seed runs.
pub fn seeds_summary_csv(runs: &[(u64, EvalReport)]) -> String {
    use std::fmt::Write as _;
    let mut out = String::from("seed,model,test_set,auc,partial_auc\n");
    for (seed, report) in runs {
        for m in &report.models {
            for c in &m.curves {
                let _ = writeln!(
                    out,
                    "{seed},{},{},{},{}",
                    m.name,
                    c.test_set.as_str(),
                    crate::dataset::fmt_f64(c.auc),
                    crate::dataset::fmt_f64(c.partial_auc)
                );
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::{ForestParams, TreeParams};

    pub(crate) fn small_config(seed: u64) -> ExperimentConfig {
        ExperimentConfig {
            seed: Some(seed),
            n: 1200,
            dgp: DgpConfig::with_k(4),
            decision_model: LearnerSpec::Forest(ForestParams {
                n_trees: 10,
                bootstrap: true,
                tree: TreeParams::default(),
            }),
            outcome_model: LearnerSpec::Forest(ForestParams {
                n_trees: 10,
                bootstrap: true,
                tree: TreeParams::default(),
            }),
            folds: 3,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn config_defaults_from_minimal_toml() {
        let c = ExperimentConfig::from_toml("seed = 3").unwrap();
        assert_eq!(c.seed, Some(3));
        assert_eq!(c.n, 20_000);
        assert_eq!(c.train_fraction, 0.75);
        assert_eq!(c.augment.epsilon, 0.05);
        assert_eq!(c.folds, 5);
        assert!(c.semi_synthetic.is_none());
        let c = ExperimentConfig::from_toml("seed = 3\n[semi_synthetic]\n").unwrap();
        assert_eq!(c.semi_synthetic.unwrap().threshold, 0.9);
    }

    #[test]
    fn seed_is_mandatory_and_unknown_keys_rejected() {
        let c = ExperimentConfig::from_toml("n = 10").unwrap();
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        assert!(ExperimentConfig::from_toml("seed = 1\nbogus = 2").is_err());
    }

    #[test]
    fn pipeline_is_deterministic() {
        let a = run_experiment(&small_config(5)).unwrap();
        let b = run_experiment(&small_config(5)).unwrap();
        assert_eq!(a.report, b.report);
        assert_eq!(artifacts(&a), artifacts(&b));
        let names: Vec<&str> = a.outcome_models.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, OUTCOME_MODELS);
    }

    #[test]
    fn semi_synthetic_run_censors_more() {
        let mut cfg = small_config(6);
        cfg.semi_synthetic = Some(SemiSyntheticConfig::default());
        let run = run_experiment(&cfg).unwrap();
        let screened = |ds: &Dataset| ds.instances().iter().filter(|i| i.d).count();
        let before: usize = run
            .generated
            .dataset
            .instances()
            .iter()
            .filter(|i| i.d)
            .count();
        assert!(screened(&run.train) + screened(&run.test) <= before);
        assert!(run.semi.is_some());
        for inst in run.train.instances().iter().chain(run.test.instances()) {
            let p = run
                .semi
                .as_ref()
                .unwrap()
                .train_probs
                .get(inst.id)
                .or_else(|| run.semi.as_ref().unwrap().test_probs.get(inst.id))
                .unwrap();
            if p <= 0.9 {
                assert!(!inst.d);
                assert_eq!(run.truth.get(inst.id), Some(false));
            }
        }
    }

    #[test]
    fn failed_write_removes_partial_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        {
            let mut w = OutputWriter::new(&out).unwrap();
            w.write("a.txt", b"a").unwrap();
            w.write("sub/c.txt", b"c").unwrap();
            assert!(w.write("a.txt/b.txt", b"b").is_err());
        }
        assert!(!out.exists());
    }
}

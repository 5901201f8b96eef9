//! Learning under selective labels with expert-consistency augmentation.
//!
//! The crate covers the whole pipeline: a selectively-labeled data model with
//! canonical CSV I/O, a synthetic data-generating process with a configurable
//! expert-consistency region, from-scratch probabilistic learners, the
//! augmentation and inverse-probability-weighting step, evaluation metrics on
//! observed and augmented test sets, and an experiment orchestrator.

pub mod augment;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod learners;
pub mod math;
pub mod rng;
pub mod synthgen;
pub mod tables;

pub use augment::{
    build_augmented, ipw_weights, positivity_report, AugmentConfig, AugmentStats, AugmentedSet,
    PositivityReport, WeightMode,
};
pub use dataset::{
    load_dataset, observed_subset, render_dataset, save_dataset, split, Dataset, Instance, LabeledExample,
    Provenance,
};
pub use error::{Error, ErrorKind, Result};
pub use eval::{
    agreement_table, calibration, evaluate_models, roc_and_auc, AgreementTable, CalibrationReport,
    EvalReport, RocCurve,
};
pub use learners::{
    cross_fit_probs, fit_forest, fit_logistic, fit_tree, predict_proba, CrossFitTarget,
    ForestParams, LearnerSpec, LogisticParams, ProbModel, TreeParams,
};
pub use synthgen::{
    generate, ground_truth_table, semi_synthetic_transform, DgpConfig, Generated,
    SemiSyntheticConfig, Transformed,
};
pub use tables::{ProbMap, TruthTable};

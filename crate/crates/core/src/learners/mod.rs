//! Probabilistic binary classifiers shared by the decision model and the
//! outcome models, plus out-of-fold probability estimation.

mod crossfit;
mod forest;
mod logistic;
mod tree;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use crossfit::{cross_fit_probs, in_sample_probs, target_examples, CrossFitTarget};
pub use forest::{fit_forest, Forest, ForestParams};
pub use logistic::{fit_logistic, logistic_objective, Logistic, LogisticParams};
pub use tree::{fit_tree, Node, Tree, TreeParams};

use crate::dataset::{Dataset, LabeledExample};
use crate::error::{Error, Result};
use crate::tables::ProbMap;

pub const MODEL_FORMAT: &str = "selective-labels/model";
pub const MODEL_VERSION: u32 = 1;

/// A fitted model mapping a feature vector to a probability in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ProbModel {
    Tree(Tree),
    Forest(Forest),
    Logistic(Logistic),
}

impl From<Tree> for ProbModel {
    fn from(t: Tree) -> Self {
        ProbModel::Tree(t)
    }
}

impl From<Forest> for ProbModel {
    fn from(f: Forest) -> Self {
        ProbModel::Forest(f)
    }
}

impl From<Logistic> for ProbModel {
    fn from(l: Logistic) -> Self {
        ProbModel::Logistic(l)
    }
}

impl ProbModel {
    pub fn k(&self) -> usize {
        match self {
            ProbModel::Tree(t) => t.k,
            ProbModel::Forest(f) => f.k,
            ProbModel::Logistic(l) => l.k,
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.k() {
            return Err(Error::DimensionMismatch {
                expected: self.k(),
                found: x.len(),
            });
        }
        Ok(match self {
            ProbModel::Tree(t) => t.predict(x),
            ProbModel::Forest(f) => f.predict(x),
            ProbModel::Logistic(l) => l.predict(x),
        })
    }

    /// Predictions for every instance, keyed by id.
    pub fn predict_dataset(&self, dataset: &Dataset) -> Result<ProbMap> {
        if dataset.k() != self.k() {
            return Err(Error::DimensionMismatch {
                expected: self.k(),
                found: dataset.k(),
            });
        }
        dataset
            .instances()
            .iter()
            .map(|i| Ok((i.id, self.predict(&i.x)?)))
            .collect()
    }

    pub fn to_json(&self) -> String {
        let doc = ModelDocumentRef {
            format: MODEL_FORMAT,
            version: MODEL_VERSION,
            model: self,
        };
        serde_json::to_string_pretty(&doc).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let header: DocumentHeader =
            serde_json::from_str(text).map_err(|e| Error::ModelFormat(e.to_string()))?;
        if header.format != MODEL_FORMAT {
            return Err(Error::ModelFormat(format!("unknown format {:?}", header.format)));
        }
        if header.version != MODEL_VERSION {
            return Err(Error::ModelFormat(format!(
                "version mismatch: file has version {}, this build reads version {MODEL_VERSION}",
                header.version
            )));
        }
        let doc: ModelDocument =
            serde_json::from_str(text).map_err(|e| Error::ModelFormat(e.to_string()))?;
        Ok(doc.model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Serialize)]
struct ModelDocumentRef<'a> {
    format: &'a str,
    version: u32,
    model: &'a ProbModel,
}

#[derive(Deserialize)]
struct DocumentHeader {
    format: String,
    version: u32,
}

#[derive(Deserialize)]
struct ModelDocument {
    model: ProbModel,
}

pub fn predict_proba(model: &ProbModel, x: &[f64]) -> Result<f64> {
    model.predict(x)
}

/// Which learner to fit, with its parameters. In config files:
///
/// ```toml
/// learner = "forest"
/// [params]
/// n_trees = 200
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLearnerSpec", into = "RawLearnerSpec")]
pub enum LearnerSpec {
    Tree(TreeParams),
    Forest(ForestParams),
    Logistic(LogisticParams),
}

impl Default for LearnerSpec {
    fn default() -> Self {
        LearnerSpec::Forest(ForestParams::default())
    }
}

impl LearnerSpec {
    pub fn fit(&self, examples: &[LabeledExample], seed: u64) -> Result<ProbModel> {
        Ok(match self {
            LearnerSpec::Tree(p) => fit_tree(examples, p, seed)?.into(),
            LearnerSpec::Forest(p) => fit_forest(examples, p, seed)?.into(),
            LearnerSpec::Logistic(p) => fit_logistic(examples, p)?.into(),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            LearnerSpec::Tree(_) => "tree",
            LearnerSpec::Forest(_) => "forest",
            LearnerSpec::Logistic(_) => "logistic",
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLearnerSpec {
    learner: String,
    #[serde(default)]
    params: Option<serde_json::Value>,
}

impl TryFrom<RawLearnerSpec> for LearnerSpec {
    type Error = String;

    fn try_from(raw: RawLearnerSpec) -> std::result::Result<Self, String> {
        fn parse<T: serde::de::DeserializeOwned + Default>(
            v: Option<serde_json::Value>,
        ) -> std::result::Result<T, String> {
            match v {
                None => Ok(T::default()),
                Some(v) => serde_json::from_value(v).map_err(|e| e.to_string()),
            }
        }
        match raw.learner.as_str() {
            "tree" => parse(raw.params).map(LearnerSpec::Tree),
            "forest" => parse(raw.params).map(LearnerSpec::Forest),
            "logistic" => parse(raw.params).map(LearnerSpec::Logistic),
            other => Err(format!(
                "unknown learner {other:?} (expected forest, tree or logistic)"
            )),
        }
    }
}

impl From<LearnerSpec> for RawLearnerSpec {
    fn from(spec: LearnerSpec) -> Self {
        let params = match &spec {
            LearnerSpec::Tree(p) => serde_json::to_value(p),
            LearnerSpec::Forest(p) => serde_json::to_value(p),
            LearnerSpec::Logistic(p) => serde_json::to_value(p),
        }
        .expect("params serialize");
        RawLearnerSpec {
            learner: spec.name().to_string(),
            params: Some(params),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predict_checks_dimension() {
        let m: ProbModel = Tree::constant(3, 0.25).into();
        assert_eq!(m.predict(&[1.0, 2.0, 3.0]).unwrap(), 0.25);
        assert!(matches!(
            m.predict(&[1.0]),
            Err(Error::DimensionMismatch { expected: 3, found: 1 })
        ));
    }

    #[test]
    fn json_round_trip_and_version_check() {
        let ex: Vec<_> = (0..50)
            .map(|i| LabeledExample::new(i, vec![(i % 7) as f64 / 3.0, (i % 5) as f64], i % 3 == 0))
            .collect();
        let forest = LearnerSpec::Forest(ForestParams {
            n_trees: 3,
            ..ForestParams::default()
        })
        .fit(&ex, 1)
        .unwrap();
        let back = ProbModel::from_json(&forest.to_json()).unwrap();
        assert_eq!(back, forest);
        let logistic: ProbModel = Logistic::new(vec![0.1, -1.0 / 3.0], 0.7).into();
        assert_eq!(ProbModel::from_json(&logistic.to_json()).unwrap(), logistic);

        let bumped = logistic.to_json().replace("\"version\": 1", "\"version\": 2");
        let err = ProbModel::from_json(&bumped).unwrap_err();
        assert!(err.to_string().contains("version mismatch"), "{err}");
    }

    #[test]
    fn learner_spec_from_toml() {
        let spec: LearnerSpec = toml::from_str("learner = \"forest\"\n[params]\nn_trees = 7\nmax_depth = 3").unwrap();
        match spec {
            LearnerSpec::Forest(p) => {
                assert_eq!(p.n_trees, 7);
                assert_eq!(p.tree.max_depth, 3);
                assert_eq!(p.tree.min_leaf, 5);
            }
            other => panic!("{other:?}"),
        }
        let spec: LearnerSpec = toml::from_str("learner = \"logistic\"").unwrap();
        assert_eq!(spec, LearnerSpec::Logistic(LogisticParams::default()));
        assert!(toml::from_str::<LearnerSpec>("learner = \"boosting\"").is_err());
        assert!(toml::from_str::<LearnerSpec>("learner = \"tree\"\n[params]\nbogus = 1").is_err());
    }
}

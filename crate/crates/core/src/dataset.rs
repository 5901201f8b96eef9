//! Selectively-labeled datasets: the outcome of an instance is only known
//! when the expert decision screened it in (`d = 1`).

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: u64,
    pub x: Vec<f64>,
    /// Expert decision; `true` means screened in and the outcome is observed.
    pub d: bool,
    pub y: Option<bool>,
}

impl Instance {
    pub fn new(id: u64, x: Vec<f64>, d: bool, y: Option<bool>) -> Result<Self> {
        if d != y.is_some() {
            return Err(Error::InvalidInput(format!(
                "instance {id}: outcome must be present exactly when d=1"
            )));
        }
        Ok(Self { id, x, d, y })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    feature_names: Vec<String>,
    instances: Vec<Instance>,
}

impl Dataset {
    pub fn new(feature_names: Vec<String>, instances: Vec<Instance>) -> Result<Self> {
        if feature_names.is_empty() {
            return Err(Error::InvalidInput("dataset needs at least one feature".into()));
        }
        let k = feature_names.len();
        let mut seen = HashSet::with_capacity(instances.len());
        for inst in &instances {
            if inst.x.len() != k {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    found: inst.x.len(),
                });
            }
            if inst.d != inst.y.is_some() {
                return Err(Error::InvalidInput(format!(
                    "instance {}: outcome must be present exactly when d=1",
                    inst.id
                )));
            }
            if !seen.insert(inst.id) {
                return Err(Error::InvalidInput(format!("duplicate id {}", inst.id)));
            }
        }
        Ok(Self {
            feature_names,
            instances,
        })
    }

    /// Feature names `f0..f{k-1}`.
    pub fn default_feature_names(k: usize) -> Vec<String> {
        (0..k).map(|j| format!("f{j}")).collect()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn k(&self) -> usize {
        self.feature_names.len()
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.instances.iter().map(|i| i.id)
    }

    pub fn into_instances(self) -> Vec<Instance> {
        self.instances
    }

    /// Same feature names, different instances. Invariants are re-checked.
    pub fn with_instances(&self, instances: Vec<Instance>) -> Result<Self> {
        Dataset::new(self.feature_names.clone(), instances)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Observed,
    Augmented,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Observed => "observed",
            Provenance::Augmented => "augmented",
        }
    }
}

/// A training example for an outcome or decision model.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub id: u64,
    pub x: Vec<f64>,
    pub label: bool,
    pub weight: f64,
    pub provenance: Provenance,
}

impl LabeledExample {
    pub fn new(id: u64, x: Vec<f64>, label: bool) -> Self {
        Self {
            id,
            x,
            label,
            weight: 1.0,
            provenance: Provenance::Observed,
        }
    }
}

/// The instances whose outcome was observed, labeled by that outcome.
pub fn observed_subset(dataset: &Dataset) -> Vec<LabeledExample> {
    dataset
        .instances
        .iter()
        .filter_map(|inst| {
            inst.y
                .map(|y| LabeledExample::new(inst.id, inst.x.clone(), y))
        })
        .collect()
}

/// Canonical float rendering: 17 significant digits, exact for `f64`.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_binary(field: &str, what: &str, row: usize) -> Result<bool> {
    match field {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(Error::parse(row, format!("{what} must be 0 or 1, got {other:?}"))),
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&bytes)
}

pub(crate) fn parse_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(bytes);
    let header = reader
        .headers()
        .map_err(|e| Error::parse(0, format!("unreadable header: {e}")))?
        .clone();
    let cols: Vec<&str> = header.iter().collect();
    let ncol = cols.len();
    if ncol < 4 || cols[0] != "id" || cols[ncol - 2] != "d" || cols[ncol - 1] != "y" {
        return Err(Error::parse(
            0,
            "header must be `id,<features...>,d,y` with at least one feature",
        ));
    }
    let feature_names: Vec<String> = cols[1..ncol - 2].iter().map(|s| s.to_string()).collect();
    let k = feature_names.len();

    let mut instances = Vec::new();
    let mut seen = HashSet::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::parse(row, format!("malformed row: {e}")))?;
        if record.len() != ncol {
            return Err(Error::parse(
                row,
                format!("expected {ncol} columns, found {}", record.len()),
            ));
        }
        let id: u64 = record[0]
            .parse()
            .map_err(|_| Error::parse(row, format!("invalid id {:?}", &record[0])))?;
        if !seen.insert(id) {
            return Err(Error::parse(row, format!("duplicate id {id}")));
        }
        let mut x = Vec::with_capacity(k);
        for j in 0..k {
            let v: f64 = record[1 + j].parse().map_err(|_| {
                Error::parse(
                    row,
                    format!("feature {} is not a number: {:?}", feature_names[j], &record[1 + j]),
                )
            })?;
            x.push(v);
        }
        let d = parse_binary(&record[ncol - 2], "d", row)?;
        let y_field = &record[ncol - 1];
        let y = if y_field.is_empty() {
            None
        } else {
            Some(parse_binary(y_field, "y", row)?)
        };
        match (d, y) {
            (false, Some(_)) => return Err(Error::parse(row, "outcome present but d=0")),
            (true, None) => return Err(Error::parse(row, "outcome missing but d=1")),
            _ => {}
        }
        instances.push(Instance { id, x, d, y });
    }
    Ok(Dataset {
        feature_names,
        instances,
    })
}

pub fn render_dataset(dataset: &Dataset) -> String {
    let mut out = String::new();
    out.push_str("id");
    for name in &dataset.feature_names {
        out.push(',');
        out.push_str(name);
    }
    out.push_str(",d,y\n");
    for inst in &dataset.instances {
        let _ = write!(out, "{}", inst.id);
        for v in &inst.x {
            out.push(',');
            out.push_str(&fmt_f64(*v));
        }
        out.push_str(if inst.d { ",1," } else { ",0," });
        match inst.y {
            Some(true) => out.push('1'),
            Some(false) => out.push('0'),
            None => {}
        }
        out.push('\n');
    }
    out
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, render_dataset(dataset)).map_err(|e| Error::io(path, e))
}

/// Seeded train/test partition. The train half has `round(n * train_fraction)`
/// instances; both halves keep the original relative order.
pub fn split(dataset: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    if dataset.is_empty() {
        return Err(Error::InvalidInput("cannot split an empty dataset".into()));
    }
    let n = dataset.len();
    let n_train = (n as f64 * train_fraction).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::from_seed(seed));
    let mut in_train = vec![false; n];
    for &i in &order[..n_train] {
        in_train[i] = true;
    }
    let (mut train, mut test) = (Vec::with_capacity(n_train), Vec::with_capacity(n - n_train));
    for (inst, is_train) in dataset.instances.iter().zip(in_train) {
        if is_train {
            train.push(inst.clone());
        } else {
            test.push(inst.clone());
        }
    }
    Ok((
        Dataset {
            feature_names: dataset.feature_names.clone(),
            instances: train,
        },
        Dataset {
            feature_names: dataset.feature_names.clone(),
            instances: test,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy(ds: &[(bool, Option<bool>)]) -> Dataset {
        let instances = ds
            .iter()
            .enumerate()
            .map(|(i, &(d, y))| Instance::new(i as u64, vec![i as f64 * 0.5 - 1.0], d, y).unwrap())
            .collect();
        Dataset::new(Dataset::default_feature_names(1), instances).unwrap()
    }

    #[test]
    fn loads_three_rows_with_absent_outcome() {
        let csv = "id,f0,f1,d,y\n0,0.5,1.5,1,1\n1,-2,3e-1,1,0\n2,0,0,0,\n";
        let ds = parse_dataset(csv.as_bytes()).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.k(), 2);
        assert_eq!(ds.instances()[0].y, Some(true));
        assert_eq!(ds.instances()[1].y, Some(false));
        assert_eq!(ds.instances()[2].y, None);
        assert_eq!(ds.instances()[1].x, vec![-2.0, 0.3]);
    }

    #[test]
    fn outcome_with_screen_out_is_rejected_with_row_number() {
        let csv = "id,f0,d,y\n0,0.5,1,1\n1,0.1,0,1\n";
        let err = parse_dataset(csv.as_bytes()).unwrap_err();
        assert_eq!(err.to_string(), "row 2: outcome present but d=0");
    }

    #[test]
    fn other_parse_errors_name_the_row() {
        let cases = [
            ("id,f0,d,y\n0,0.5,1\n", "row 1: expected 4 columns"),
            ("id,f0,d,y\n0,0.5,1,1\n1,abc,1,0\n", "row 2: feature f0"),
            ("id,f0,d,y\n0,0.5,2,\n", "row 1: d must be 0 or 1"),
            ("id,f0,d,y\n0,0.5,1,x\n", "row 1: y must be 0 or 1"),
            ("id,f0,d,y\n0,0.5,1,\n", "row 1: outcome missing but d=1"),
            ("id,f0,d,y\n0,0.5,0,\n0,0.5,0,\n", "row 2: duplicate id"),
            ("id,d,y\n", "row 0: header"),
        ];
        for (csv, prefix) in cases {
            let msg = parse_dataset(csv.as_bytes()).unwrap_err().to_string();
            assert!(msg.starts_with(prefix), "{msg:?} should start with {prefix:?}");
        }
    }

    #[test]
    fn save_of_load_is_canonical_form() {
        let csv = "id,f0,d,y\n3,0.25,1,0\n1,-1e3,0,\n";
        let ds = parse_dataset(csv.as_bytes()).unwrap();
        let canonical = render_dataset(&ds);
        assert_eq!(
            canonical,
            "id,f0,d,y\n3,2.5000000000000000e-1,1,0\n1,-1.0000000000000000e3,0,\n"
        );
        let again = render_dataset(&parse_dataset(canonical.as_bytes()).unwrap());
        assert_eq!(again, canonical);
    }

    #[test]
    fn empty_dataset_is_header_only() {
        let ds = Dataset::new(Dataset::default_feature_names(2), vec![]).unwrap();
        assert_eq!(render_dataset(&ds), "id,f0,f1,d,y\n");
        assert_eq!(parse_dataset(b"id,f0,f1,d,y\n").unwrap(), ds);
    }

    #[test]
    fn single_unobserved_row_ends_with_empty_field() {
        let ds = toy(&[(false, None)]);
        let text = render_dataset(&ds);
        assert!(text.lines().nth(1).unwrap().ends_with(",0,"));
    }

    #[test]
    fn constructor_enforces_invariants() {
        assert!(Instance::new(0, vec![1.0], false, Some(true)).is_err());
        let a = Instance::new(0, vec![1.0], true, Some(true)).unwrap();
        let b = Instance::new(0, vec![2.0], false, None).unwrap();
        assert!(Dataset::new(vec!["a".into()], vec![a.clone(), b]).is_err());
        let c = Instance::new(1, vec![2.0, 3.0], false, None).unwrap();
        assert!(matches!(
            Dataset::new(vec!["a".into()], vec![a, c]),
            Err(Error::DimensionMismatch { expected: 1, found: 2 })
        ));
    }

    #[test]
    fn observed_subset_reads_screened_in_rows() {
        let ds = toy(&[(true, Some(true)), (false, None), (true, Some(false))]);
        let obs = observed_subset(&ds);
        assert_eq!(obs.len(), 2);
        assert_eq!(obs.iter().map(|e| e.label).collect::<Vec<_>>(), vec![true, false]);
        assert!(obs
            .iter()
            .all(|e| e.weight == 1.0 && e.provenance == Provenance::Observed));

        assert!(observed_subset(&toy(&[(false, None), (false, None)])).is_empty());
        let all = toy(&[(true, Some(true)), (true, Some(false))]);
        assert_eq!(observed_subset(&all).len(), 2);
    }

    #[test]
    fn split_sizes_follow_fraction() {
        let ds = toy(&vec![(false, None); 100]);
        let (train, test) = split(&ds, 0.75, 11).unwrap();
        assert_eq!((train.len(), test.len()), (75, 25));

        let two = toy(&[(false, None), (true, Some(true))]);
        for seed in 0..20 {
            let (a, b) = split(&two, 0.5, seed).unwrap();
            assert_eq!((a.len(), b.len()), (1, 1));
            let mut ids: Vec<u64> = a.ids().chain(b.ids()).collect();
            ids.sort();
            assert_eq!(ids, vec![0, 1]);
        }
    }

    #[test]
    fn split_is_deterministic_and_rejects_bad_fraction() {
        let ds = toy(&vec![(false, None); 40]);
        assert_eq!(split(&ds, 0.3, 5).unwrap(), split(&ds, 0.3, 5).unwrap());
        assert_ne!(split(&ds, 0.3, 5).unwrap(), split(&ds, 0.3, 6).unwrap());
        for bad in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(split(&ds, bad, 1), Err(Error::Config(_))));
        }
    }

    fn arb_dataset() -> impl Strategy<Value = Dataset> {
        (1usize..4, 0usize..30).prop_flat_map(|(k, n)| {
            proptest::collection::vec(
                (
                    proptest::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), k),
                    any::<bool>(),
                    any::<bool>(),
                ),
                n,
            )
            .prop_map(move |rows| {
                let instances = rows
                    .into_iter()
                    .enumerate()
                    .map(|(i, (x, d, y))| Instance {
                        id: (i * 7) as u64,
                        x,
                        d,
                        y: d.then_some(y),
                    })
                    .collect();
                Dataset::new(Dataset::default_feature_names(k), instances).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_identity(ds in arb_dataset()) {
            let text = render_dataset(&ds);
            let back = parse_dataset(text.as_bytes()).unwrap();
            prop_assert_eq!(&back, &ds);
            prop_assert_eq!(render_dataset(&back), text);
        }

        #[test]
        fn split_is_a_partition(ds in arb_dataset(), frac in 0.01f64..0.99, seed in any::<u64>()) {
            prop_assume!(!ds.is_empty());
            let (a, b) = split(&ds, frac, seed).unwrap();
            prop_assert_eq!(a.len(), (ds.len() as f64 * frac).round() as usize);
            let mut ids: Vec<u64> = a.ids().chain(b.ids()).collect();
            ids.sort();
            let mut orig: Vec<u64> = ds.ids().collect();
            orig.sort();
            prop_assert_eq!(ids, orig);
        }

        #[test]
        fn observed_count_matches_screen_ins(ds in arb_dataset()) {
            let n_in = ds.instances().iter().filter(|i| i.d).count();
            prop_assert_eq!(observed_subset(&ds).len(), n_in);
        }
    }
}

//! Per-instance side tables keyed by instance id: propensity maps and
//! ground-truth outcome tables, with their two-column CSV forms.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::dataset::{fmt_f64, Dataset};
use crate::error::{Error, Result};

/// Probability per instance id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProbMap(BTreeMap<u64, f64>);

impl ProbMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: u64, p: f64) {
        self.0.insert(id, p);
    }

    pub fn get(&self, id: u64) -> Option<f64> {
        self.0.get(&id).copied()
    }

    /// Lookup that fails with [`Error::MissingProbability`].
    pub fn require(&self, id: u64) -> Result<f64> {
        self.get(id).ok_or(Error::MissingProbability(id))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.0.iter().map(|(&id, &p)| (id, p))
    }

    /// Probabilities in dataset order; errors on the first uncovered id.
    pub fn aligned(&self, dataset: &Dataset) -> Result<Vec<f64>> {
        dataset.ids().map(|id| self.require(id)).collect()
    }

    pub fn render(&self) -> String {
        let mut out = String::from("id,prob\n");
        for (id, p) in self.iter() {
            let _ = writeln!(out, "{id},{}", fmt_f64(p));
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut map = ProbMap::new();
        for (row, id, value) in read_pairs(&bytes, "prob")? {
            let p: f64 = value
                .parse()
                .map_err(|_| Error::parse(row, format!("invalid probability {value:?}")))?;
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::parse(row, format!("probability {p} outside [0, 1]")));
            }
            map.insert(id, p);
        }
        Ok(map)
    }
}

impl FromIterator<(u64, f64)> for ProbMap {
    fn from_iter<I: IntoIterator<Item = (u64, f64)>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

/// True outcome per instance id, including the censored ones. Only
/// available for synthetic or semi-synthetic data.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TruthTable(BTreeMap<u64, bool>);

impl TruthTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: u64, y: bool) {
        self.0.insert(id, y);
    }

    pub fn get(&self, id: u64) -> Option<bool> {
        self.0.get(&id).copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, bool)> + '_ {
        self.0.iter().map(|(&id, &y)| (id, y))
    }

    pub fn render(&self) -> String {
        let mut out = String::from("id,y_true\n");
        for (id, y) in self.iter() {
            let _ = writeln!(out, "{id},{}", u8::from(y));
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut table = TruthTable::new();
        for (row, id, value) in read_pairs(&bytes, "y_true")? {
            let y = match value.as_str() {
                "0" => false,
                "1" => true,
                other => return Err(Error::parse(row, format!("y_true must be 0 or 1, got {other:?}"))),
            };
            table.insert(id, y);
        }
        Ok(table)
    }
}

impl FromIterator<(u64, bool)> for TruthTable {
    fn from_iter<I: IntoIterator<Item = (u64, bool)>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

fn read_pairs(bytes: &[u8], value_col: &str) -> Result<Vec<(usize, u64, String)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(bytes);
    let header = reader
        .headers()
        .map_err(|e| Error::parse(0, format!("unreadable header: {e}")))?;
    if header.len() != 2 || &header[0] != "id" || &header[1] != value_col {
        return Err(Error::parse(0, format!("header must be `id,{value_col}`")));
    }
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::parse(row, format!("malformed row: {e}")))?;
        if record.len() != 2 {
            return Err(Error::parse(row, format!("expected 2 columns, found {}", record.len())));
        }
        let id: u64 = record[0]
            .parse()
            .map_err(|_| Error::parse(row, format!("invalid id {:?}", &record[0])))?;
        out.push((row, id, record[1].to_string()));
    }
    Ok(out)
}

//! CART classification tree on weighted examples.
//!
//! Columns are argsorted once; each node owns the same contiguous range in
//! every per-feature ordering and a split stably partitions those ranges, so
//! no sorting happens below the root.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledExample;
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Gains at or below this are treated as no improvement.
const MIN_GAIN: f64 = 1e-12;
/// Gains closer than this count as tied, so rounding noise cannot override
/// the lowest-feature, lowest-threshold preference.
const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeParams {
    pub max_depth: usize,
    /// Minimum number of distinct examples in each child.
    pub min_leaf: usize,
    /// Features sampled per split; `None` means `ceil(sqrt(k))`.
    pub mtry: Option<usize>,
    /// Additive smoothing of leaf probabilities.
    pub laplace: f64,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: 8,
            min_leaf: 5,
            mtry: None,
            laplace: 1.0,
        }
    }
}

impl TreeParams {
    pub fn resolved_mtry(&self, k: usize) -> usize {
        self.mtry
            .unwrap_or_else(|| (k as f64).sqrt().ceil() as usize)
            .max(1)
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if self.max_depth < 1 {
            return Err(Error::Config("tree: max_depth must be >= 1".into()));
        }
        if self.min_leaf < 1 {
            return Err(Error::Config("tree: min_leaf must be >= 1".into()));
        }
        let mtry = self.resolved_mtry(k);
        if mtry > k || self.mtry == Some(0) {
            return Err(Error::Config(format!("tree: mtry must lie in 1..={k}, got {mtry}")));
        }
        if !(self.laplace >= 0.0 && self.laplace.is_finite()) {
            return Err(Error::Config("tree: laplace must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node {
    Leaf {
        prob: f64,
    },
    Split {
        feature: usize,
        /// `x[feature] <= threshold` goes left.
        threshold: f64,
        /// Weighted Gini decrease achieved by this split.
        gain: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub k: usize,
    pub root: Node,
}

impl Tree {
    /// Depth-0 tree predicting `prob` everywhere.
    pub fn constant(k: usize, prob: f64) -> Self {
        Self {
            k,
            root: Node::Leaf { prob },
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = &self.root;
        loop {
            match node {
                Node::Leaf { prob } => return *prob,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    node = if x[*feature] <= *threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(n: &Node) -> usize {
            match n {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(left).max(go(right)),
            }
        }
        go(&self.root)
    }
}

/// Weighted Gini impurity decrease of splitting a node into the given
/// class-weight sums, normalized by the parent weight.
pub(crate) fn gini_decrease(pos_l: f64, neg_l: f64, pos_r: f64, neg_r: f64) -> f64 {
    let wl = pos_l + neg_l;
    let wr = pos_r + neg_r;
    let w = wl + wr;
    let (pos, neg) = (pos_l + pos_r, neg_l + neg_r);
    let parent = 2.0 * pos * neg / (w * w);
    let children = (2.0 * pos_l * neg_l / wl + 2.0 * pos_r * neg_r / wr) / w;
    parent - children
}

/// Column-major copy of a training set with per-feature argsorts, shared by
/// all trees of a forest.
pub(crate) struct Columns {
    pub k: usize,
    pub cols: Vec<Vec<f64>>,
    pub labels: Vec<bool>,
    pub weights: Vec<f64>,
    pub order: Vec<Vec<u32>>,
}

impl Columns {
    pub fn new(examples: &[LabeledExample]) -> Result<Self> {
        let first = examples
            .first()
            .ok_or_else(|| Error::InvalidInput("cannot fit on an empty training set".into()))?;
        let k = first.x.len();
        if k == 0 {
            return Err(Error::InvalidInput("examples have no features".into()));
        }
        let mut cols = vec![Vec::with_capacity(examples.len()); k];
        for ex in examples {
            if ex.x.len() != k {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    found: ex.x.len(),
                });
            }
            if !(ex.weight > 0.0 && ex.weight.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "example {} has non-positive or non-finite weight {}",
                    ex.id, ex.weight
                )));
            }
            for (c, &v) in cols.iter_mut().zip(&ex.x) {
                if !v.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "example {} has a non-finite feature",
                        ex.id
                    )));
                }
                c.push(v);
            }
        }
        let order = cols
            .iter()
            .map(|col| {
                let mut idx: Vec<u32> = (0..col.len() as u32).collect();
                idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
                idx
            })
            .collect();
        Ok(Self {
            k,
            cols,
            labels: examples.iter().map(|e| e.label).collect(),
            weights: examples.iter().map(|e| e.weight).collect(),
            order,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }
}

struct Builder<'a> {
    data: &'a Columns,
    params: TreeParams,
    mtry: usize,
    /// Effective weight per example (0 for examples not in the sample).
    weights: Vec<f64>,
    sorted: Vec<Vec<u32>>,
    go_left: Vec<bool>,
    scratch: Vec<u32>,
    rng: Rng,
}

struct Candidate {
    feature: usize,
    /// Last position (inclusive) of the left child in the feature ordering.
    cut: usize,
    threshold: f64,
    gain: f64,
}

impl Builder<'_> {
    fn build(&mut self, lo: usize, hi: usize, depth: usize) -> Node {
        let (mut pos, mut neg) = (0.0, 0.0);
        for &i in &self.sorted[0][lo..hi] {
            let w = self.weights[i as usize];
            if self.data.labels[i as usize] {
                pos += w;
            } else {
                neg += w;
            }
        }
        let lap = self.params.laplace;
        let leaf = Node::Leaf {
            prob: (pos + lap) / (pos + neg + 2.0 * lap),
        };
        let count = hi - lo;
        if depth >= self.params.max_depth
            || pos == 0.0
            || neg == 0.0
            || count < 2 * self.params.min_leaf
        {
            return leaf;
        }

        let k = self.data.k;
        let mut features: Vec<usize> = if self.mtry >= k {
            (0..k).collect()
        } else {
            index::sample(&mut self.rng, k, self.mtry).into_vec()
        };
        features.sort_unstable();

        let mut best: Option<Candidate> = None;
        for &f in &features {
            if let Some(c) = self.best_cut(f, lo, hi) {
                if best.as_ref().is_none_or(|b| c.gain > b.gain + TIE_TOL) {
                    best = Some(c);
                }
            }
        }
        let Some(best) = best else { return leaf };

        // Stable partition of every feature ordering around the chosen cut.
        let n_left = best.cut + 1 - lo;
        for &i in &self.sorted[best.feature][lo..=best.cut] {
            self.go_left[i as usize] = true;
        }
        for f in 0..k {
            if f == best.feature {
                continue;
            }
            let seg = &mut self.sorted[f][lo..hi];
            self.scratch.clear();
            let mut w = 0;
            for j in 0..seg.len() {
                let i = seg[j];
                if self.go_left[i as usize] {
                    seg[w] = i;
                    w += 1;
                } else {
                    self.scratch.push(i);
                }
            }
            seg[w..].copy_from_slice(&self.scratch);
        }
        for &i in &self.sorted[best.feature][lo..=best.cut] {
            self.go_left[i as usize] = false;
        }

        let left = self.build(lo, lo + n_left, depth + 1);
        let right = self.build(lo + n_left, hi, depth + 1);
        Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            gain: best.gain,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    /// Best threshold on one feature; ties keep the lowest threshold.
    fn best_cut(&self, f: usize, lo: usize, hi: usize) -> Option<Candidate> {
        let col = &self.data.cols[f];
        let idx = &self.sorted[f][lo..hi];
        let min_leaf = self.params.min_leaf;
        let (mut tot_pos, mut tot_neg) = (0.0, 0.0);
        for &i in idx {
            let w = self.weights[i as usize];
            if self.data.labels[i as usize] {
                tot_pos += w;
            } else {
                tot_neg += w;
            }
        }
        let (mut pos_l, mut neg_l) = (0.0, 0.0);
        let mut best: Option<Candidate> = None;
        let n = idx.len();
        for j in 0..n - 1 {
            let i = idx[j] as usize;
            let w = self.weights[i];
            if self.data.labels[i] {
                pos_l += w;
            } else {
                neg_l += w;
            }
            let left_n = j + 1;
            if left_n < min_leaf {
                continue;
            }
            if n - left_n < min_leaf {
                break;
            }
            let (v, next) = (col[i], col[idx[j + 1] as usize]);
            if v == next {
                continue;
            }
            let gain = gini_decrease(pos_l, neg_l, tot_pos - pos_l, tot_neg - neg_l);
            if gain > MIN_GAIN && best.as_ref().is_none_or(|b| gain > b.gain + TIE_TOL) {
                let mid = 0.5 * (v + next);
                let threshold = if mid < next { mid } else { v };
                best = Some(Candidate {
                    feature: f,
                    cut: lo + j,
                    threshold,
                    gain,
                });
            }
        }
        best
    }
}

/// Fit one tree on the examples with multiplicity `counts` (all ones when
/// `None`). Weights are multiplied by the counts.
pub(crate) fn fit_on_columns(
    data: &Columns,
    counts: Option<&[u32]>,
    params: &TreeParams,
    rng: Rng,
) -> Tree {
    let n = data.len();
    let weights: Vec<f64> = match counts {
        Some(c) => data.weights.iter().zip(c).map(|(w, &m)| w * m as f64).collect(),
        None => data.weights.clone(),
    };
    let sorted: Vec<Vec<u32>> = data
        .order
        .iter()
        .map(|o| match counts {
            Some(c) => o.iter().copied().filter(|&i| c[i as usize] > 0).collect(),
            None => o.clone(),
        })
        .collect();
    let active = sorted[0].len();
    let mut builder = Builder {
        data,
        params: *params,
        mtry: params.resolved_mtry(data.k),
        weights,
        sorted,
        go_left: vec![false; n],
        scratch: Vec::with_capacity(active),
        rng,
    };
    let root = builder.build(0, active, 0);
    Tree { k: data.k, root }
}

pub(crate) fn check_fit_input(examples: &[LabeledExample]) -> Result<()> {
    if examples.is_empty() {
        return Err(Error::InvalidInput("cannot fit on an empty training set".into()));
    }
    if examples.len() < 2 {
        return Err(Error::InvalidInput("need at least 2 examples to fit".into()));
    }
    Ok(())
}

/// Greedy CART tree maximizing weighted Gini decrease over `mtry` sampled
/// features per node.
pub fn fit_tree(examples: &[LabeledExample], params: &TreeParams, seed: u64) -> Result<Tree> {
    check_fit_input(examples)?;
    let data = Columns::new(examples)?;
    params.validate(data.k)?;
    Ok(fit_on_columns(&data, None, params, rng::from_seed(seed)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(id: u64, x: Vec<f64>, label: bool, weight: f64) -> LabeledExample {
        LabeledExample {
            weight,
            ..LabeledExample::new(id, x, label)
        }
    }

    #[test]
    fn single_class_gives_smoothed_leaf() {
        let examples: Vec<_> = (0..5).map(|i| ex(i, vec![i as f64], true, 2.0)).collect();
        let tree = fit_tree(&examples, &TreeParams::default(), 1).unwrap();
        assert_eq!(tree.depth(), 0);
        assert_eq!(tree.root, Node::Leaf { prob: 11.0 / 12.0 });
    }

    #[test]
    fn separable_line_needs_one_split() {
        let examples: Vec<_> = (0..100)
            .map(|i| {
                let x = (i as f64 - 49.5) / 10.0;
                ex(i, vec![x], x >= 0.0, 1.0)
            })
            .collect();
        let params = TreeParams {
            mtry: Some(1),
            ..TreeParams::default()
        };
        let tree = fit_tree(&examples, &params, 3).unwrap();
        assert_eq!(tree.depth(), 1);
        match &tree.root {
            Node::Split { threshold, .. } => assert!(*threshold > -0.05 && *threshold < 0.05),
            leaf => panic!("expected a split, got {leaf:?}"),
        }
        for e in &examples {
            assert_eq!(tree.predict(&e.x) > 0.5, e.label);
        }
    }

    #[test]
    fn respects_min_leaf_and_max_depth() {
        let examples: Vec<_> = (0..40)
            .map(|i| ex(i, vec![i as f64, (i * 7 % 13) as f64], i % 3 == 0, 1.0))
            .collect();
        let params = TreeParams {
            max_depth: 3,
            min_leaf: 4,
            mtry: Some(2),
            laplace: 1.0,
        };
        let tree = fit_tree(&examples, &params, 9).unwrap();
        assert!(tree.depth() <= 3);
        fn leaf_counts(n: &Node, ex: &[LabeledExample], out: &mut Vec<usize>) {
            match n {
                Node::Leaf { .. } => out.push(ex.len()),
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    let (l, r): (Vec<_>, Vec<_>) =
                        ex.iter().cloned().partition(|e| e.x[*feature] <= *threshold);
                    leaf_counts(left, &l, out);
                    leaf_counts(right, &r, out);
                }
            }
        }
        let mut counts = vec![];
        leaf_counts(&tree.root, &examples, &mut counts);
        assert!(counts.iter().all(|&c| c >= 4), "{counts:?}");
        assert_eq!(counts.iter().sum::<usize>(), 40);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(fit_tree(&[], &TreeParams::default(), 0).is_err());
        let one = [ex(0, vec![1.0], true, 1.0)];
        assert!(fit_tree(&one, &TreeParams::default(), 0).is_err());
        let bad_w = [ex(0, vec![1.0], true, 0.0), ex(1, vec![2.0], false, 1.0)];
        assert!(fit_tree(&bad_w, &TreeParams::default(), 0).is_err());
        let two = [ex(0, vec![1.0], true, 1.0), ex(1, vec![2.0], false, 1.0)];
        let p = TreeParams {
            mtry: Some(2),
            ..TreeParams::default()
        };
        assert!(matches!(fit_tree(&two, &p, 0), Err(Error::Config(_))));
    }

    #[test]
    fn duplicated_examples_match_doubled_weights() {
        let base: Vec<_> = (0..30)
            .map(|i| {
                let a = ((i * 37) % 17) as f64;
                let b = ((i * 11) % 7) as f64;
                ex(i, vec![a, b], (i * 5) % 3 == 0, 1.0)
            })
            .collect();
        let mut dup = base.clone();
        let mut doubled = base.clone();
        for i in [2usize, 5, 11, 20] {
            let mut copy = base[i].clone();
            copy.id += 1000;
            dup.push(copy);
            doubled[i].weight = 2.0;
        }
        let params = TreeParams {
            max_depth: 1,
            min_leaf: 1,
            mtry: Some(2),
            laplace: 1.0,
        };
        let a = fit_tree(&dup, &params, 0).unwrap();
        let b = fit_tree(&doubled, &params, 0).unwrap();
        match (&a.root, &b.root) {
            (
                Node::Split {
                    feature: fa,
                    threshold: ta,
                    ..
                },
                Node::Split {
                    feature: fb,
                    threshold: tb,
                    ..
                },
            ) => assert_eq!((fa, ta), (fb, tb)),
            other => panic!("expected two splits, got {other:?}"),
        }
    }

    #[test]
    fn ties_pick_lowest_feature() {
        // Identical columns: every split on f1 ties with the same split on f0.
        let examples: Vec<_> = (0..10)
            .map(|i| ex(i, vec![i as f64, i as f64], i >= 5, 1.0))
            .collect();
        let params = TreeParams {
            max_depth: 1,
            min_leaf: 1,
            mtry: Some(2),
            laplace: 0.0,
        };
        let tree = fit_tree(&examples, &params, 0).unwrap();
        assert!(matches!(tree.root, Node::Split { feature: 0, .. }));
    }
}

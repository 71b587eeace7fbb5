//! Gradient-boosted regression trees for binary classification under logistic loss.
//!
//! Each stage fits a tree to the residuals `y - σ(F)` by exact variance-reduction
//! split search, then replaces every leaf value with a single Newton step
//! `Σ r / Σ σ(F)(1 - σ(F))` over the samples in that leaf, clamped to `[-4, 4]`.
//! Predictions are `σ(base_score + η · Σ tree(x))`.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureRow, FEATURE_NAMES, N_FEATURES};

pub const MODEL_VERSION: u32 = 1;

/// Bound on leaf values, in log-odds.
pub const LEAF_CLAMP: f64 = 4.0;

/// Bound on the accumulated log-odds; keeps `σ` strictly inside (0, 1) in f64.
pub const MAX_LOGIT: f64 = 30.0;

/// Splits must reduce the residual sum of squares by more than this.
const MIN_GAIN: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum GbtError {
    #[error("training data has a single class (all labels {0}); cannot fit a classifier")]
    DegenerateTraining(u8),
    #[error("need at least 2 training rows, got {0}")]
    TooFewRows(usize),
    #[error("labels must be 0 or 1, found {0}")]
    BadLabel(u8),
    #[error("row/label count mismatch: {rows} rows, {labels} labels")]
    LabelCount { rows: usize, labels: usize },
    #[error("feature count mismatch: model expects {expected}, got {actual}")]
    FeatureCount { expected: usize, actual: usize },
    #[error("non-finite feature value at row {row}, column {column}")]
    NonFinite { row: usize, column: usize },
    #[error("invalid hyper-parameter: {0}")]
    Hyperparams(String),
    #[error("model file {path}: {message}")]
    ModelFile { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Dz,
    Amd,
    All,
}

impl std::str::FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "dz" => Ok(Preset::Dz),
            "amd" => Ok(Preset::Amd),
            "all" => Ok(Preset::All),
            other => Err(format!("unknown preset {other:?} (expected dz, amd or all)")),
        }
    }
}

impl Preset {
    pub fn hyperparams(self) -> Hyperparams {
        match self {
            Preset::Dz => Hyperparams {
                learning_rate: 0.115,
                max_depth: 11,
                min_samples_leaf: 0.0155,
                min_samples_split: 0.015,
                n_estimators: 350,
                block_size: 50,
                c_neg_size: 10,
            },
            Preset::Amd => Hyperparams {
                learning_rate: 0.185,
                max_depth: 14,
                min_samples_leaf: 0.08,
                min_samples_split: 0.02,
                n_estimators: 300,
                block_size: 20,
                c_neg_size: 6,
            },
            Preset::All => Hyperparams {
                learning_rate: 0.135,
                max_depth: 8,
                min_samples_leaf: 0.01,
                min_samples_split: 0.037,
                n_estimators: 500,
                block_size: 50,
                c_neg_size: 8,
            },
        }
    }

    /// NIL threshold tuned on the matching development set. `All` reuses the `Dz` value.
    pub fn nil_threshold(self) -> f64 {
        match self {
            Preset::Dz | Preset::All => 0.4,
            Preset::Amd => 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub max_depth: usize,
    /// Fraction of the training set; converted with `ceil`.
    pub min_samples_leaf: f64,
    /// Fraction of the training set; converted with `ceil`.
    pub min_samples_split: f64,
    pub n_estimators: usize,
    /// Candidates retrieved per mention.
    pub block_size: usize,
    /// Negatives sampled per block.
    pub c_neg_size: usize,
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), GbtError> {
        let bad = |m: &str| Err(GbtError::Hyperparams(m.to_string()));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        for (name, v) in [
            ("min_samples_leaf", self.min_samples_leaf),
            ("min_samples_split", self.min_samples_split),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(GbtError::Hyperparams(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        if self.max_depth < 1 || self.n_estimators < 1 || self.block_size < 1 || self.c_neg_size < 1 {
            return bad("max_depth, n_estimators, block_size and c_neg_size must be at least 1");
        }
        Ok(())
    }
}

/// Dense row-major feature matrix with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    names: Vec<String>,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(names: Vec<String>, data: Vec<f64>) -> Result<Self, GbtError> {
        let width = names.len();
        if width == 0 || !data.len().is_multiple_of(width) {
            return Err(GbtError::FeatureCount {
                expected: width,
                actual: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(GbtError::NonFinite {
                row: i / width,
                column: i % width,
            });
        }
        Ok(FeatureMatrix { names, data })
    }

    /// Matrix over the nine pairwise features in canonical order.
    pub fn from_feature_rows(rows: &[[f64; N_FEATURES]]) -> Result<Self, GbtError> {
        let names = FEATURE_NAMES.iter().map(|s| s.to_string()).collect();
        Self::new(names, rows.iter().flatten().copied().collect())
    }

    pub fn n_rows(&self) -> usize {
        self.data.len() / self.names.len()
    }

    pub fn n_features(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.n_features();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.n_features() + col]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.n_rows()).map(|r| self.get(r, col)).collect()
    }

    pub fn set_column(&mut self, col: usize, values: &[f64]) {
        assert_eq!(values.len(), self.n_rows(), "column length");
        let w = self.n_features();
        for (r, v) in values.iter().enumerate() {
            self.data[r * w + col] = *v;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        /// Residual sum-of-squares reduction achieved by this split.
        gain: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        value: f64,
    },
}

impl TreeNode {
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => node = if x[*feature] <= *threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    fn visit_splits(&self, f: &mut impl FnMut(usize, f64, f64)) {
        if let TreeNode::Split {
            feature,
            threshold,
            gain,
            left,
            right,
        } = self
        {
            f(*feature, *threshold, *gain);
            left.visit_splits(f);
            right.visit_splits(f);
        }
    }

    /// `(feature, threshold)` of the root split, if any.
    pub fn root_split(&self) -> Option<(usize, f64)> {
        match self {
            TreeNode::Split { feature, threshold, .. } => Some((*feature, *threshold)),
            TreeNode::Leaf { .. } => None,
        }
    }

    pub fn leaf_values(&self) -> Vec<f64> {
        match self {
            TreeNode::Leaf { value } => vec![*value],
            TreeNode::Split { left, right, .. } => {
                let mut v = left.leaf_values();
                v.extend(right.leaf_values());
                v
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub version: u32,
    pub feature_names: Vec<String>,
    pub learning_rate: f64,
    pub base_score: f64,
    pub seed: u64,
    pub trees: Vec<TreeNode>,
}

pub fn sigmoid(z: f64) -> f64 {
    let z = z.clamp(-MAX_LOGIT, MAX_LOGIT);
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean negative log-likelihood.
pub fn log_loss(labels: &[u8], probs: &[f64]) -> f64 {
    let total: f64 = labels
        .iter()
        .zip(probs)
        .map(|(&y, &p)| if y == 1 { -p.ln() } else { -(1.0 - p).ln() })
        .sum();
    total / labels.len() as f64
}

struct TreeBuilder<'a> {
    x: &'a FeatureMatrix,
    residuals: &'a [f64],
    hessians: &'a [f64],
    max_depth: usize,
    min_leaf: usize,
    min_split: usize,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl TreeBuilder<'_> {
    fn leaf(&self, idx: &[usize]) -> TreeNode {
        let g: f64 = idx.iter().map(|&i| self.residuals[i]).sum();
        let h: f64 = idx.iter().map(|&i| self.hessians[i]).sum();
        let value = if h > 0.0 {
            (g / h).clamp(-LEAF_CLAMP, LEAF_CLAMP)
        } else if g == 0.0 {
            0.0
        } else {
            LEAF_CLAMP.copysign(g)
        };
        TreeNode::Leaf { value }
    }

    fn best_split(&self, idx: &[usize]) -> Option<BestSplit> {
        let n = idx.len();
        let total: f64 = idx.iter().map(|&i| self.residuals[i]).sum();
        let parent_score = total * total / n as f64;
        let mut best: Option<BestSplit> = None;
        let mut order = idx.to_vec();
        for feature in 0..self.x.n_features() {
            order.sort_by(|&a, &b| self.x.get(a, feature).total_cmp(&self.x.get(b, feature)).then(a.cmp(&b)));
            let mut left_sum = 0.0;
            for pos in 0..n - 1 {
                left_sum += self.residuals[order[pos]];
                let lo = self.x.get(order[pos], feature);
                let hi = self.x.get(order[pos + 1], feature);
                if lo == hi {
                    continue;
                }
                let n_left = pos + 1;
                let n_right = n - n_left;
                if n_left < self.min_leaf || n_right < self.min_leaf {
                    continue;
                }
                let right_sum = total - left_sum;
                let gain =
                    left_sum * left_sum / n_left as f64 + right_sum * right_sum / n_right as f64 - parent_score;
                if gain > MIN_GAIN && best.as_ref().is_none_or(|b| gain > b.gain) {
                    let mut threshold = lo + (hi - lo) / 2.0;
                    if threshold >= hi {
                        threshold = lo;
                    }
                    best = Some(BestSplit {
                        feature,
                        threshold,
                        gain,
                    });
                }
            }
        }
        best
    }

    fn build(&self, idx: Vec<usize>, depth: usize) -> TreeNode {
        let n = idx.len();
        if depth >= self.max_depth || n < self.min_split || n < 2 * self.min_leaf || n < 2 {
            return self.leaf(&idx);
        }
        let Some(split) = self.best_split(&idx) else {
            return self.leaf(&idx);
        };
        let (left, right): (Vec<usize>, Vec<usize>) = idx
            .into_iter()
            .partition(|&i| self.x.get(i, split.feature) <= split.threshold);
        TreeNode::Split {
            feature: split.feature,
            threshold: split.threshold,
            gain: split.gain,
            left: Box::new(self.build(left, depth + 1)),
            right: Box::new(self.build(right, depth + 1)),
        }
    }
}

/// Fits a boosted ensemble. Deterministic in `(x, y, hp)` and input order; `seed` is
/// recorded in the model.
pub fn fit(x: &FeatureMatrix, y: &[u8], hp: &Hyperparams, seed: u64) -> Result<GbtModel, GbtError> {
    hp.validate()?;
    let n = x.n_rows();
    if n != y.len() {
        return Err(GbtError::LabelCount { rows: n, labels: y.len() });
    }
    if n < 2 {
        return Err(GbtError::TooFewRows(n));
    }
    if let Some(&bad) = y.iter().find(|&&v| v > 1) {
        return Err(GbtError::BadLabel(bad));
    }
    let positives = y.iter().filter(|&&v| v == 1).count();
    if positives == 0 || positives == n {
        return Err(GbtError::DegenerateTraining(y[0]));
    }

    let prior = positives as f64 / n as f64;
    let base_score = (prior / (1.0 - prior)).ln();
    let min_leaf = ((hp.min_samples_leaf * n as f64).ceil() as usize).max(1);
    let min_split = ((hp.min_samples_split * n as f64).ceil() as usize).max(2);

    let mut scores = vec![base_score; n];
    let mut residuals = vec![0.0; n];
    let mut hessians = vec![0.0; n];
    let mut trees = Vec::with_capacity(hp.n_estimators);
    for _ in 0..hp.n_estimators {
        for i in 0..n {
            let p = sigmoid(scores[i]);
            residuals[i] = f64::from(y[i]) - p;
            hessians[i] = p * (1.0 - p);
        }
        let builder = TreeBuilder {
            x,
            residuals: &residuals,
            hessians: &hessians,
            max_depth: hp.max_depth,
            min_leaf,
            min_split,
        };
        let tree = builder.build((0..n).collect(), 0);
        for (i, s) in scores.iter_mut().enumerate() {
            *s += hp.learning_rate * tree.evaluate(x.row(i));
        }
        trees.push(tree);
    }

    Ok(GbtModel {
        version: MODEL_VERSION,
        feature_names: x.names().to_vec(),
        learning_rate: hp.learning_rate,
        base_score,
        seed,
        trees,
    })
}

impl GbtModel {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Raw log-odds after the first `n_trees` stages.
    pub fn decision_function_staged(&self, x: &[f64], n_trees: usize) -> f64 {
        self.base_score
            + self.learning_rate * self.trees.iter().take(n_trees).map(|t| t.evaluate(x)).sum::<f64>()
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64, GbtError> {
        if x.len() != self.n_features() {
            return Err(GbtError::FeatureCount {
                expected: self.n_features(),
                actual: x.len(),
            });
        }
        Ok(sigmoid(self.decision_function_staged(x, self.trees.len())))
    }

    pub fn predict_proba_matrix(&self, x: &FeatureMatrix) -> Result<Vec<f64>, GbtError> {
        (0..x.n_rows()).map(|i| self.predict_proba(x.row(i))).collect()
    }

    /// Training loss after 0, 1, ..., T stages.
    pub fn staged_log_loss(&self, x: &FeatureMatrix, y: &[u8]) -> Vec<f64> {
        let n = x.n_rows();
        let mut scores = vec![self.base_score; n];
        let mut out = Vec::with_capacity(self.trees.len() + 1);
        out.push(log_loss(y, &scores.iter().map(|&s| sigmoid(s)).collect::<Vec<_>>()));
        for tree in &self.trees {
            for (i, s) in scores.iter_mut().enumerate() {
                *s += self.learning_rate * tree.evaluate(x.row(i));
            }
            out.push(log_loss(y, &scores.iter().map(|&s| sigmoid(s)).collect::<Vec<_>>()));
        }
        out
    }

    /// Per-feature share of the total split gain; all zeros for a model without splits.
    pub fn gain_importance(&self) -> Vec<f64> {
        let mut totals = vec![0.0; self.n_features()];
        for tree in &self.trees {
            tree.visit_splits(&mut |feature, _, gain| totals[feature] += gain);
        }
        let sum: f64 = totals.iter().sum();
        if sum > 0.0 {
            totals.iter_mut().for_each(|v| *v /= sum);
        }
        totals
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(json)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), GbtError> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| GbtError::ModelFile {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GbtError> {
        let path = path.as_ref();
        let err = |message: String| GbtError::ModelFile {
            path: path.display().to_string(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let model = Self::from_json(&text).map_err(|e| err(e.to_string()))?;
        if model.version != MODEL_VERSION {
            return Err(err(format!("unsupported model version {}", model.version)));
        }
        Ok(model)
    }
}

/// One retrieved candidate as seen by the pair sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockCandidate {
    pub entity_id: u64,
    pub l2: f64,
    pub features: [f64; N_FEATURES],
    pub is_gold: bool,
}

/// Candidates from a single retrieval call.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBlock {
    pub mention_id: String,
    pub candidates: Vec<BlockCandidate>,
}

/// Positions of `c` picks spread evenly over `n` sorted items: `round(i·(n−1)/(c−1))`,
/// the (rounded) median position when `c == 1`, everything when `c >= n`.
pub fn even_spread_indices(n: usize, c: usize) -> Vec<usize> {
    if c == 0 || n == 0 {
        return Vec::new();
    }
    if c >= n {
        return (0..n).collect();
    }
    if c == 1 {
        return vec![((n - 1) as f64 / 2.0).round() as usize];
    }
    let step = (n - 1) as f64 / (c - 1) as f64;
    (0..c).map(|i| (i as f64 * step).round() as usize).collect()
}

/// Builds labeled rows: the gold candidate (if retrieved) plus `c_neg_size` negatives
/// spread over the block's distance range.
///
/// Negatives tied on distance are ordered by a seeded shuffle.
pub fn sample_training_pairs(blocks: &[TrainingBlock], c_neg_size: usize, seed: u64) -> Vec<FeatureRow> {
    let mut rows = Vec::new();
    for (b, block) in blocks.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(b as u64);
        let gold = block
            .candidates
            .iter()
            .filter(|c| c.is_gold)
            .min_by(|a, b| a.l2.total_cmp(&b.l2).then(a.entity_id.cmp(&b.entity_id)));
        if let Some(g) = gold {
            rows.push(FeatureRow {
                mention_id: block.mention_id.clone(),
                entity_id: g.entity_id,
                features: g.features,
                label: 1,
            });
        }
        let mut negatives: Vec<&BlockCandidate> = block.candidates.iter().filter(|c| !c.is_gold).collect();
        negatives.shuffle(&mut rng);
        negatives.sort_by(|a, b| a.l2.total_cmp(&b.l2));
        for i in even_spread_indices(negatives.len(), c_neg_size) {
            let c = negatives[i];
            rows.push(FeatureRow {
                mention_id: block.mention_id.clone(),
                entity_id: c.entity_id,
                features: c.features,
                label: 0,
            });
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn matrix_1d(xs: &[f64]) -> FeatureMatrix {
        FeatureMatrix::new(vec!["x".into()], xs.to_vec()).unwrap()
    }

    fn hp(lr: f64, depth: usize, trees: usize) -> Hyperparams {
        Hyperparams {
            learning_rate: lr,
            max_depth: depth,
            min_samples_leaf: 0.01,
            min_samples_split: 0.02,
            n_estimators: trees,
            block_size: 10,
            c_neg_size: 2,
        }
    }

    #[test]
    fn presets_match_tuned_values() {
        let dz = Preset::Dz.hyperparams();
        assert_eq!((dz.learning_rate, dz.max_depth, dz.n_estimators), (0.115, 11, 350));
        assert_eq!((dz.min_samples_leaf, dz.min_samples_split), (0.0155, 0.015));
        assert_eq!((dz.block_size, dz.c_neg_size), (50, 10));
        let amd = Preset::Amd.hyperparams();
        assert_eq!((amd.learning_rate, amd.max_depth, amd.n_estimators), (0.185, 14, 300));
        assert_eq!((amd.min_samples_leaf, amd.min_samples_split), (0.08, 0.02));
        assert_eq!((amd.block_size, amd.c_neg_size), (20, 6));
        let all = Preset::All.hyperparams();
        assert_eq!((all.learning_rate, all.max_depth, all.n_estimators), (0.135, 8, 500));
        assert_eq!((all.min_samples_leaf, all.min_samples_split), (0.01, 0.037));
        assert_eq!((all.block_size, all.c_neg_size), (50, 8));
        assert_eq!(Preset::Dz.nil_threshold(), 0.4);
        assert_eq!(Preset::Amd.nil_threshold(), 0.2);
        for p in [Preset::Dz, Preset::Amd, Preset::All] {
            p.hyperparams().validate().unwrap();
        }
    }

    #[test]
    fn single_class_rejected() {
        let x = matrix_1d(&[1.0, 2.0, 3.0]);
        assert!(matches!(fit(&x, &[1, 1, 1], &hp(0.1, 2, 3), 0), Err(GbtError::DegenerateTraining(1))));
        assert!(matches!(fit(&x, &[0, 0, 0], &hp(0.1, 2, 3), 0), Err(GbtError::DegenerateTraining(0))));
    }

    #[test]
    fn invalid_hyperparams_rejected() {
        let x = matrix_1d(&[1.0, 2.0]);
        let mut h = hp(0.1, 2, 3);
        h.min_samples_leaf = 1.5;
        assert!(matches!(fit(&x, &[0, 1], &h, 0), Err(GbtError::Hyperparams(_))));
    }

    #[test]
    fn zero_tree_model_returns_prior() {
        let m = GbtModel {
            version: MODEL_VERSION,
            feature_names: vec!["x".into()],
            learning_rate: 0.1,
            base_score: 0.0,
            seed: 0,
            trees: vec![],
        };
        assert_eq!(m.predict_proba(&[3.0]).unwrap(), 0.5);
        assert!(matches!(m.predict_proba(&[1.0, 2.0]), Err(GbtError::FeatureCount { .. })));
    }

    #[test]
    fn stump_threshold_between_classes() {
        let xs: Vec<f64> = (0..40).map(|i| i as f64 * 0.25).collect();
        let y: Vec<u8> = xs.iter().map(|&x| u8::from(x > 5.0)).collect();
        let model = fit(&matrix_1d(&xs), &y, &hp(0.3, 1, 25), 0).unwrap();
        let (f, t) = model.trees[0].root_split().unwrap();
        assert_eq!(f, 0);
        assert!((5.0..5.25).contains(&t), "threshold {t}");
        for (x, label) in xs.iter().zip(&y) {
            let p = model.predict_proba(&[*x]).unwrap();
            assert_eq!(u8::from(p >= 0.5), *label);
        }
    }

    #[test]
    fn depth_respected_and_gain_importance() {
        let xs: Vec<f64> = (0..50).flat_map(|i| [i as f64, ((i * 7) % 11) as f64]).collect();
        let x = FeatureMatrix::new(vec!["a".into(), "b".into()], xs).unwrap();
        let y: Vec<u8> = (0..50).map(|i| u8::from(i % 3 == 0)).collect();
        let model = fit(&x, &y, &hp(0.2, 3, 20), 0).unwrap();
        assert!(model.trees.iter().all(|t| t.depth() <= 3));
        let imp = model.gain_importance();
        assert!((imp.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for t in &model.trees {
            assert!(t.leaf_values().iter().all(|v| v.abs() <= LEAF_CLAMP));
        }
    }

    #[test]
    fn lone_split_feature_has_all_importance() {
        let x = FeatureMatrix::new(
            vec!["noise".into(), "signal".into()],
            vec![1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0],
        )
        .unwrap();
        let model = fit(&x, &[0, 0, 1, 1], &hp(0.5, 1, 1), 0).unwrap();
        assert_eq!(model.gain_importance(), vec![0.0, 1.0]);
    }

    #[test]
    fn json_round_trip_preserves_probabilities() {
        let xs: Vec<f64> = (0..30).map(|i| (i as f64).sin()).collect();
        let y: Vec<u8> = (0..30).map(|i| u8::from(i % 4 == 0)).collect();
        let x = matrix_1d(&xs);
        let model = fit(&x, &y, &hp(0.3, 3, 10), 9).unwrap();
        let back = GbtModel::from_json(&model.to_json()).unwrap();
        assert_eq!(back, model);
        for i in 0..30 {
            let (a, b) = (model.predict_proba(x.row(i)).unwrap(), back.predict_proba(x.row(i)).unwrap());
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn sigmoid_stays_open() {
        assert!(sigmoid(1e6) < 1.0);
        assert!(sigmoid(-1e6) > 0.0);
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn even_spread_examples() {
        assert_eq!(even_spread_indices(4, 2), vec![0, 3]);
        assert_eq!(even_spread_indices(5, 3), vec![0, 2, 4]);
        assert_eq!(even_spread_indices(5, 1), vec![2]);
        assert_eq!(even_spread_indices(3, 8), vec![0, 1, 2]);
        assert_eq!(even_spread_indices(0, 2), Vec::<usize>::new());
    }

    fn block(gold_at: Option<usize>, l2s: &[f64]) -> TrainingBlock {
        TrainingBlock {
            mention_id: "m".into(),
            candidates: l2s
                .iter()
                .enumerate()
                .map(|(i, &l2)| BlockCandidate {
                    entity_id: i as u64,
                    l2,
                    features: [l2; N_FEATURES],
                    is_gold: Some(i) == gold_at,
                })
                .collect(),
        }
    }

    #[test]
    fn sampling_gold_first_and_spread_negatives() {
        let rows = sample_training_pairs(&[block(Some(0), &[0.1, 0.4, 0.2, 0.9, 0.5])], 2, 0);
        assert_eq!(rows.len(), 3);
        assert_eq!((rows[0].entity_id, rows[0].label), (0, 1));
        // negatives sorted by l2: ids [2, 1, 4, 3]; even spread over 4 picks positions {0, 3}
        assert_eq!(rows[1..].iter().map(|r| r.entity_id).collect::<Vec<_>>(), vec![2, 3]);
        assert!(rows[1..].iter().all(|r| r.label == 0));
    }

    #[test]
    fn sampling_without_gold_and_with_large_c() {
        let rows = sample_training_pairs(&[block(None, &[0.3, 0.1, 0.2])], 2, 0);
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.label == 0));
        let rows = sample_training_pairs(&[block(Some(1), &[0.3, 0.1, 0.2])], 10, 0);
        assert_eq!(rows.len(), 3);
        assert_eq!(rows.iter().filter(|r| r.label == 1).count(), 1);
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let blocks = vec![block(Some(2), &[0.5; 8]), block(None, &[0.1, 0.1, 0.2, 0.2, 0.2])];
        assert_eq!(sample_training_pairs(&blocks, 3, 5), sample_training_pairs(&blocks, 3, 5));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn training_loss_nonincreasing(
            xs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 8..40),
            flip in prop::collection::vec(any::<bool>(), 40),
            depth in 1usize..4,
        ) {
            let n = xs.len();
            let mut y: Vec<u8> = xs.iter().zip(&flip).map(|((a, b), f)| u8::from((a + b > 0.0) ^ *f)).collect();
            y[0] = 0;
            y[1] = 1;
            let data: Vec<f64> = xs.iter().flat_map(|(a, b)| [*a, *b]).collect();
            let x = FeatureMatrix::new(vec!["a".into(), "b".into()], data).unwrap();
            let model = fit(&x, &y, &hp(0.3, depth, 15), 0).unwrap();
            let losses = model.staged_log_loss(&x, &y);
            prop_assert_eq!(losses.len(), 16);
            for w in losses.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-12, "loss rose {} -> {} (n={})", w[0], w[1], n);
            }
            for i in 0..n {
                let p = model.predict_proba(x.row(i)).unwrap();
                prop_assert!(p > 0.0 && p < 1.0);
            }
        }

        #[test]
        fn fit_is_byte_deterministic(xs in prop::collection::vec(-3.0f64..3.0, 6..30)) {
            let mut y: Vec<u8> = xs.iter().map(|v| u8::from(*v > 0.3)).collect();
            y[0] = 0;
            y[1] = 1;
            let x = matrix_1d(&xs);
            let a = fit(&x, &y, &hp(0.2, 2, 5), 4).unwrap().to_json();
            let b = fit(&x, &y, &hp(0.2, 2, 5), 4).unwrap().to_json();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn monotone_rescaling_keeps_block_argmax(
            xs in prop::collection::vec((0.1f64..4.0, 0.0f64..1.0), 12..36),
        ) {
            let y: Vec<u8> = xs.iter().map(|(a, b)| u8::from(a * (1.0 + b) > 2.5)).collect();
            prop_assume!(y.contains(&0) && y.contains(&1));
            let raw: Vec<f64> = xs.iter().flat_map(|(a, b)| [*a, *b]).collect();
            let scaled: Vec<f64> = xs.iter().flat_map(|(a, b)| [a.ln() * 3.0 + 1.0, *b]).collect();
            let names = vec!["a".to_string(), "b".to_string()];
            let xa = FeatureMatrix::new(names.clone(), raw).unwrap();
            let xb = FeatureMatrix::new(names, scaled).unwrap();
            let ma = fit(&xa, &y, &hp(0.3, 3, 8), 0).unwrap();
            let mb = fit(&xb, &y, &hp(0.3, 3, 8), 0).unwrap();
            let pa = ma.predict_proba_matrix(&xa).unwrap();
            let pb = mb.predict_proba_matrix(&xb).unwrap();
            for (block_a, block_b) in pa.chunks(4).zip(pb.chunks(4)) {
                let argmax = |v: &[f64]| {
                    v.iter().enumerate().fold(0, |best, (i, p)| if *p > v[best] { i } else { best })
                };
                prop_assert_eq!(argmax(block_a), argmax(block_b));
            }
        }
    }
}

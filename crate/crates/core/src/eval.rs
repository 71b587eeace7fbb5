//! Scoring and explainability statistics.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use thiserror::Error;

use crate::corpus::{Document, Mention};
use crate::gbt::{FeatureMatrix, GbtModel};
use crate::linker::LinkPrediction;
use crate::types::{qid_or_nil, EntityType, Qid};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("overlapping predictions in document {doc_id}: [{a_start}, {a_end}) and [{b_start}, {b_end})")]
    OverlappingPredictions {
        doc_id: String,
        a_start: usize,
        a_end: usize,
        b_start: usize,
        b_end: usize,
    },
    #[error("token overlap needs the text of document {0}")]
    MissingText(String),
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),
    #[error("invalid input: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdReport {
    pub micro_accuracy: f64,
    pub per_class: BTreeMap<EntityType, f64>,
    pub macro_accuracy: f64,
    pub n: BTreeMap<EntityType, usize>,
    pub correct: BTreeMap<EntityType, usize>,
}

/// Accuracy of decisions against gold QIDs (NIL = NIL counts as correct), grouped by
/// gold mention type. Macro averages over the classes present in `gold`.
pub fn ed_accuracy(predictions: &[LinkPrediction], gold: &[Mention]) -> Result<EdReport, EvalError> {
    let mut by_key: HashMap<String, &LinkPrediction> = HashMap::with_capacity(predictions.len());
    for p in predictions {
        if by_key.insert(p.key(), p).is_some() {
            return Err(EvalError::Alignment(format!("duplicate prediction for {}", p.key())));
        }
    }
    if gold.is_empty() {
        return Err(EvalError::Invalid("no gold mentions".into()));
    }
    let mut seen = HashSet::with_capacity(gold.len());
    let mut n = BTreeMap::new();
    let mut correct = BTreeMap::new();
    for g in gold {
        let key = g.key();
        if !seen.insert(key.clone()) {
            return Err(EvalError::Alignment(format!("duplicate gold mention {key}")));
        }
        let p = by_key
            .get(&key)
            .ok_or_else(|| EvalError::Alignment(format!("no prediction for {key}")))?;
        *n.entry(g.etype).or_insert(0usize) += 1;
        let hit = usize::from(p.decision == g.gold);
        *correct.entry(g.etype).or_insert(0usize) += hit;
    }
    if by_key.len() != gold.len() {
        let extra = by_key.keys().find(|k| !seen.contains(*k)).expect("extra key");
        return Err(EvalError::Alignment(format!("prediction {extra} has no gold mention")));
    }
    let per_class: BTreeMap<EntityType, f64> = n
        .iter()
        .map(|(t, &count)| (*t, correct[t] as f64 / count as f64))
        .collect();
    let total_correct: usize = correct.values().sum();
    Ok(EdReport {
        micro_accuracy: total_correct as f64 / gold.len() as f64,
        macro_accuracy: per_class.values().sum::<f64>() / per_class.len() as f64,
        per_class,
        n,
        correct,
    })
}

/// Fixed-width table: one row per system with micro, per-class and macro accuracy in percent.
pub fn render_ed_table(rows: &[(String, EdReport)]) -> String {
    let mut out = String::new();
    let _ = write!(out, "{:<24} {:>8}", "Model", "Micro");
    for t in EntityType::ALL {
        let _ = write!(out, " {:>8}", t.code());
    }
    let _ = writeln!(out, " {:>8}", "Macro");
    for (name, r) in rows {
        let _ = write!(out, "{:<24} {:>8.2}", name, 100.0 * r.micro_accuracy);
        for t in EntityType::ALL {
            match r.per_class.get(&t) {
                Some(v) => {
                    let _ = write!(out, " {:>8.2}", 100.0 * v);
                }
                None => {
                    let _ = write!(out, " {:>8}", "-");
                }
            }
        }
        let _ = writeln!(out, " {:>8.2}", 100.0 * r.macro_accuracy);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    Exact,
    Fuzzy,
}

/// How partial overlap is measured in fuzzy mode.
#[derive(Debug, Clone, Copy)]
pub enum Overlap<'a> {
    Chars,
    /// Whitespace tokens touched by both spans; needs each document's text.
    Tokens(&'a HashMap<String, String>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub doc_id: String,
    pub start: usize,
    pub end: usize,
    #[serde(with = "qid_or_nil")]
    pub decision: Option<Qid>,
}

impl From<&LinkPrediction> for Span {
    fn from(p: &LinkPrediction) -> Self {
        Span {
            doc_id: p.doc_id.clone(),
            start: p.start,
            end: p.end,
            decision: p.decision.clone(),
        }
    }
}

impl From<&Mention> for Span {
    fn from(m: &Mention) -> Self {
        Span {
            doc_id: m.doc_id.clone(),
            start: m.start,
            end: m.end,
            decision: m.gold.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct E2eReport {
    pub mode: MatchMode,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl E2eReport {
    fn from_counts(mode: MatchMode, tp: usize, n_pred: usize, n_gold: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, n_pred);
        let recall = ratio(tp, n_gold);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        E2eReport {
            mode,
            precision,
            recall,
            f1,
            tp,
            fp: n_pred - tp,
            fn_: n_gold - tp,
        }
    }
}

fn token_ranges(text: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in text.chars().enumerate() {
        match (c.is_whitespace(), start) {
            (false, None) => start = Some(i),
            (true, Some(s)) => {
                out.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, text.chars().count()));
    }
    out
}

fn overlap_size(a: &Span, b: &Span, tokens: Option<&[(usize, usize)]>) -> usize {
    let lo = a.start.max(b.start);
    let hi = a.end.min(b.end);
    if lo >= hi {
        return 0;
    }
    match tokens {
        None => hi - lo,
        Some(toks) => toks
            .iter()
            .filter(|(s, e)| *s < a.end && a.start < *e && *s < b.end && b.start < *e)
            .count(),
    }
}

fn check_no_overlap(spans: &[&Span]) -> Result<(), EvalError> {
    let mut sorted = spans.to_vec();
    sorted.sort_by_key(|s| (s.start, s.end));
    for w in sorted.windows(2) {
        if w[1].start < w[0].end {
            return Err(EvalError::OverlappingPredictions {
                doc_id: w[0].doc_id.clone(),
                a_start: w[0].start,
                a_end: w[0].end,
                b_start: w[1].start,
                b_end: w[1].end,
            });
        }
    }
    Ok(())
}

/// Greedy one-to-one matching by descending overlap, then earliest start. Returns
/// `(pred index, gold index)` pairs.
fn match_spans(pred: &[&Span], gold: &[&Span], tokens: Option<&[(usize, usize)]>) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for (i, p) in pred.iter().enumerate() {
        for (j, g) in gold.iter().enumerate() {
            let ov = overlap_size(p, g, tokens);
            if ov > 0 {
                pairs.push((ov, p.start.min(g.start), p.start, g.start, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.cmp(&a.0).then((a.1, a.2, a.3, a.4, a.5).cmp(&(b.1, b.2, b.3, b.4, b.5))));
    let mut used_p = vec![false; pred.len()];
    let mut used_g = vec![false; gold.len()];
    let mut out = Vec::new();
    for (_, _, _, _, i, j) in pairs {
        if !used_p[i] && !used_g[j] {
            used_p[i] = true;
            used_g[j] = true;
            out.push((i, j));
        }
    }
    out
}

/// End-to-end precision, recall and F1 with character overlap.
pub fn e2e_metrics(pred: &[Span], gold: &[Span], mode: MatchMode) -> Result<E2eReport, EvalError> {
    e2e_metrics_with(pred, gold, mode, Overlap::Chars)
}

pub fn e2e_metrics_with(pred: &[Span], gold: &[Span], mode: MatchMode, overlap: Overlap<'_>) -> Result<E2eReport, EvalError> {
    let mut docs: BTreeMap<&str, (Vec<&Span>, Vec<&Span>)> = BTreeMap::new();
    for p in pred {
        docs.entry(&p.doc_id).or_default().0.push(p);
    }
    for g in gold {
        docs.entry(&g.doc_id).or_default().1.push(g);
    }
    let mut tp = 0;
    for (doc_id, (p, g)) in &docs {
        check_no_overlap(p)?;
        let tokens = match overlap {
            Overlap::Chars => None,
            Overlap::Tokens(texts) => Some(token_ranges(
                texts.get(*doc_id).ok_or_else(|| EvalError::MissingText(doc_id.to_string()))?,
            )),
        };
        for (i, j) in match_spans(p, g, tokens.as_deref()) {
            let span_ok = match mode {
                MatchMode::Exact => p[i].start == g[j].start && p[i].end == g[j].end,
                MatchMode::Fuzzy => true,
            };
            if span_ok && p[i].decision == g[j].decision {
                tp += 1;
            }
        }
    }
    Ok(E2eReport::from_counts(mode, tp, pred.len(), gold.len()))
}

/// Document texts keyed by id, for [`Overlap::Tokens`].
pub fn document_texts(docs: &[Document]) -> HashMap<String, String> {
    docs.iter().map(|d| (d.id.clone(), d.text.clone())).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    pub mean_drop: f64,
    pub sd_drop: f64,
    pub drops: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub n_reps: usize,
    pub seed: u64,
    pub baseline: f64,
    pub features: Vec<FeatureImportance>,
}

/// Pair-classification accuracy at probability 0.5.
pub fn pair_accuracy(model: &GbtModel, x: &FeatureMatrix, y: &[u8]) -> f64 {
    let probs = model.predict_proba_matrix(x).expect("feature width checked by caller");
    let hits = probs.iter().zip(y).filter(|(p, &l)| u8::from(**p >= 0.5) == l).count();
    hits as f64 / y.len() as f64
}

/// Block-level ED proxy: a block is right when its top row is the positive and clears 0.5,
/// or when it has no positive and no row clears 0.5. `groups[i]` names the block of row `i`.
pub fn block_accuracy(groups: &[String]) -> impl Fn(&GbtModel, &FeatureMatrix, &[u8]) -> f64 + Sync + '_ {
    move |model, x, y| {
        let probs = model.predict_proba_matrix(x).expect("feature width checked by caller");
        let mut blocks: BTreeMap<&str, (f64, u8, bool)> = BTreeMap::new();
        for (i, g) in groups.iter().enumerate() {
            let e = blocks.entry(g.as_str()).or_insert((f64::NEG_INFINITY, 0, false));
            if probs[i] > e.0 {
                e.0 = probs[i];
                e.1 = y[i];
            }
            e.2 |= y[i] == 1;
        }
        let right = blocks
            .values()
            .filter(|(p, top, has_pos)| if *has_pos { *top == 1 && *p >= 0.5 } else { *p < 0.5 })
            .count();
        right as f64 / blocks.len().max(1) as f64
    }
}

/// Permutation importance with the default pair-accuracy metric.
pub fn permutation_importance(
    model: &GbtModel,
    x: &FeatureMatrix,
    y: &[u8],
    n_reps: usize,
    seed: u64,
) -> Result<ImportanceReport, EvalError> {
    permutation_importance_with(model, x, y, n_reps, seed, pair_accuracy)
}

/// For each column `j` and repetition `r`, shuffles column `j` with a generator on stream
/// `(j << 32) | r` of `seed` and records `baseline - metric`.
pub fn permutation_importance_with<M>(
    model: &GbtModel,
    x: &FeatureMatrix,
    y: &[u8],
    n_reps: usize,
    seed: u64,
    metric: M,
) -> Result<ImportanceReport, EvalError>
where
    M: Fn(&GbtModel, &FeatureMatrix, &[u8]) -> f64 + Sync,
{
    if n_reps < 1 {
        return Err(EvalError::Invalid("n_reps must be at least 1".into()));
    }
    if x.n_rows() != y.len() || y.is_empty() {
        return Err(EvalError::Invalid(format!("{} rows but {} labels", x.n_rows(), y.len())));
    }
    if x.n_features() != model.n_features() {
        return Err(EvalError::Invalid(format!(
            "matrix has {} columns, model expects {}",
            x.n_features(),
            model.n_features()
        )));
    }
    let baseline = metric(model, x, y);
    let features = (0..x.n_features())
        .into_par_iter()
        .map(|j| {
            let original = x.column(j);
            let mut permuted = x.clone();
            let drops: Vec<f64> = (0..n_reps)
                .map(|r| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(((j as u64) << 32) | r as u64);
                    let mut col = original.clone();
                    col.shuffle(&mut rng);
                    permuted.set_column(j, &col);
                    baseline - metric(model, &permuted, y)
                })
                .collect();
            let mean = drops.iter().sum::<f64>() / n_reps as f64;
            let var = drops.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n_reps as f64;
            FeatureImportance {
                feature: x.names()[j].clone(),
                mean_drop: mean,
                sd_drop: var.sqrt(),
                drops,
            }
        })
        .collect();
    Ok(ImportanceReport {
        n_reps,
        seed,
        baseline,
        features,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub r_pb: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Sample Pearson correlation.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// Two-sided p-value of a correlation coefficient under a t test with `n - 2` degrees of freedom.
pub fn correlation_p_value(r: f64, n: usize) -> f64 {
    if r.abs() >= 1.0 {
        return 0.0;
    }
    let df = (n - 2) as f64;
    let t2 = r * r * df / (1.0 - r * r);
    beta_reg(df / 2.0, 0.5, df / (df + t2)).clamp(0.0, 1.0)
}

pub fn point_biserial(scores: &[f64], correct: &[bool]) -> Result<CorrelationReport, EvalError> {
    let n = scores.len();
    if n != correct.len() {
        return Err(EvalError::Invalid(format!("{n} scores but {} labels", correct.len())));
    }
    if n < 3 {
        return Err(EvalError::Invalid(format!("need at least 3 observations, got {n}")));
    }
    let n1 = correct.iter().filter(|&&c| c).count();
    let n0 = n - n1;
    if n1 == 0 || n0 == 0 {
        return Err(EvalError::UndefinedCorrelation("all outcomes belong to one class".into()));
    }
    let nf = n as f64;
    let mean = scores.iter().sum::<f64>() / nf;
    let sd = (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / nf).sqrt();
    if sd == 0.0 {
        return Err(EvalError::UndefinedCorrelation("scores have zero variance".into()));
    }
    let m1 = scores.iter().zip(correct).filter(|(_, &c)| c).map(|(s, _)| s).sum::<f64>() / n1 as f64;
    let m0 = scores.iter().zip(correct).filter(|(_, &c)| !c).map(|(s, _)| s).sum::<f64>() / n0 as f64;
    let (p, q) = (n1 as f64 / nf, n0 as f64 / nf);
    let r = ((m1 - m0) / sd * (p * q).sqrt()).clamp(-1.0, 1.0);
    Ok(CorrelationReport {
        r_pb: r,
        p_value: correlation_p_value(r, n),
        n,
    })
}

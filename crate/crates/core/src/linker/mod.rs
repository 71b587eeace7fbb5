//! End-to-end linking: embed, retrieve, enrich, featurize, re-rank and threshold.

pub mod prompt;

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Mention;
use crate::features::{featurize_block, FeatureRow, FeatureVector, N_FEATURES};
use crate::gbt::{fit, sample_training_pairs, BlockCandidate, FeatureMatrix, GbtError, GbtModel, Hyperparams, TrainingBlock};
use crate::index::{dot_score, knn, EmbeddingMatrix, EmbeddingProvider, MentionEmbedding};
use crate::kb::{CandidateTuple, LookupStore};
use crate::types::{qid_or_nil, EntityType, Qid};

pub use prompt::{
    build_prompt, parse_llm_response, LlmResponse, Prompt, PromptCandidate, PromptRecord, ResponseError, ResponseRecord,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Embed,
    Retrieve,
    Lookup,
    Featurize,
    Score,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Embed => "embed",
            Stage::Retrieve => "retrieve",
            Stage::Lookup => "lookup",
            Stage::Featurize => "featurize",
            Stage::Score => "score",
        })
    }
}

#[derive(Debug, Error)]
pub enum LinkError {
    #[error("{stage} failed for mention {mention}: {message}")]
    Stage {
        stage: Stage,
        mention: String,
        message: String,
    },
    #[error("invalid pipeline configuration: {0}")]
    Config(String),
    #[error("predictions and gold mentions disagree at position {index}: {message}")]
    Alignment { index: usize, message: String },
    #[error("prediction line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Training(#[from] GbtError),
}

fn stage_err(stage: Stage, mention: &Mention, err: impl fmt::Display) -> LinkError {
    LinkError::Stage {
        stage,
        mention: mention.key(),
        message: err.to_string(),
    }
}

/// Candidate generation: provider, dense index and lookup store.
#[derive(Clone)]
pub struct Retriever {
    pub provider: Arc<dyn EmbeddingProvider>,
    pub index: Arc<EmbeddingMatrix>,
    pub lookup: Arc<LookupStore>,
    pub k: usize,
}

impl fmt::Debug for Retriever {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Retriever")
            .field("provider_dim", &self.provider.dim())
            .field("index_rows", &self.index.len())
            .field("lookup_entries", &self.lookup.len())
            .field("k", &self.k)
            .finish()
    }
}

/// One retrieved and enriched candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievedCandidate {
    pub tuple: CandidateTuple,
    /// Inner product between mention and entity vectors.
    pub similarity: f64,
}

impl Retriever {
    pub fn new(
        provider: Arc<dyn EmbeddingProvider>,
        index: Arc<EmbeddingMatrix>,
        lookup: Arc<LookupStore>,
        k: usize,
    ) -> Result<Self, LinkError> {
        if k < 1 {
            return Err(LinkError::Config("k must be at least 1".into()));
        }
        if provider.dim() != index.dim() {
            return Err(LinkError::Config(format!(
                "provider dimension {} does not match index dimension {}",
                provider.dim(),
                index.dim()
            )));
        }
        Ok(Retriever {
            provider,
            index,
            lookup,
            k,
        })
    }

    pub fn embed(&self, mention: &Mention) -> Result<MentionEmbedding, LinkError> {
        self.provider.embed(mention).map_err(|e| stage_err(Stage::Embed, mention, e))
    }

    /// Top-k candidates in retrieval order.
    pub fn retrieve(&self, mention: &Mention) -> Result<Vec<RetrievedCandidate>, LinkError> {
        let query = self.embed(mention)?;
        let result = knn(&self.index, &query, self.k).map_err(|e| stage_err(Stage::Retrieve, mention, e))?;
        result
            .hits
            .iter()
            .map(|hit| {
                let tuple = self
                    .lookup
                    .lookup(hit.entity_id, hit.l2)
                    .map_err(|e| stage_err(Stage::Lookup, mention, e))?;
                let row = self.index.get(hit.entity_id).expect("hit ids come from the index");
                let similarity = dot_score(&query.0, row).map_err(|e| stage_err(Stage::Retrieve, mention, e))?;
                Ok(RetrievedCandidate { tuple, similarity })
            })
            .collect()
    }

    /// Candidates with their feature vectors.
    pub fn featurized_block(&self, mention: &Mention) -> Result<Vec<(CandidateTuple, FeatureVector)>, LinkError> {
        let tuples: Vec<CandidateTuple> = self.retrieve(mention)?.into_iter().map(|c| c.tuple).collect();
        if tuples.is_empty() {
            return Ok(Vec::new());
        }
        let features = featurize_block(mention, &tuples).map_err(|e| stage_err(Stage::Featurize, mention, e))?;
        Ok(tuples.into_iter().zip(features).collect())
    }
}

/// Everything needed to link a mention.
#[derive(Clone, Debug)]
pub struct PipelineConfig {
    pub retriever: Retriever,
    pub model: Arc<GbtModel>,
    pub nil_threshold: f64,
}

impl PipelineConfig {
    pub fn new(retriever: Retriever, model: Arc<GbtModel>, nil_threshold: f64) -> Result<Self, LinkError> {
        if !(0.0..=1.0).contains(&nil_threshold) {
            return Err(LinkError::Config(format!("nil threshold {nil_threshold} outside [0, 1]")));
        }
        if model.n_features() != N_FEATURES {
            return Err(LinkError::Config(format!(
                "model expects {} features, the pipeline produces {N_FEATURES}",
                model.n_features()
            )));
        }
        Ok(PipelineConfig {
            retriever,
            model,
            nil_threshold,
        })
    }

    pub fn k(&self) -> usize {
        self.retriever.k
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkPrediction {
    pub doc_id: String,
    pub start: usize,
    pub end: usize,
    #[serde(rename = "type")]
    pub etype: EntityType,
    #[serde(with = "qid_or_nil")]
    pub decision: Option<Qid>,
    pub score: f64,
    /// `(qid, p)` by descending probability, ties by lower entity id.
    pub ranked: Vec<(Qid, f64)>,
}

impl LinkPrediction {
    pub fn key(&self) -> String {
        crate::corpus::mention_key(&self.doc_id, self.start, self.end)
    }

    pub fn is_nil(&self) -> bool {
        self.decision.is_none()
    }

    /// The same ranking decided under another threshold.
    pub fn with_threshold(&self, nil_threshold: f64) -> LinkPrediction {
        let (decision, score) = decide(&self.ranked, nil_threshold);
        LinkPrediction {
            decision,
            score,
            ..self.clone()
        }
    }
}

/// Top-ranked candidate if its probability reaches the threshold, NIL otherwise.
pub fn decide(ranked: &[(Qid, f64)], nil_threshold: f64) -> (Option<Qid>, f64) {
    match ranked.first() {
        Some((qid, p)) if *p >= nil_threshold => (Some(qid.clone()), *p),
        _ => (None, 0.0),
    }
}

pub fn link(mention: &Mention, config: &PipelineConfig) -> Result<LinkPrediction, LinkError> {
    let block = config.retriever.featurized_block(mention)?;
    let mut scored = Vec::with_capacity(block.len());
    for (tuple, features) in &block {
        let p = config
            .model
            .predict_proba(&features.to_array())
            .map_err(|e| stage_err(Stage::Score, mention, e))?;
        scored.push((tuple.entity.entity_id, tuple.entity.qid.clone(), p));
    }
    scored.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
    let ranked: Vec<(Qid, f64)> = scored.into_iter().map(|(_, q, p)| (q, p)).collect();
    let (decision, score) = decide(&ranked, config.nil_threshold);
    Ok(LinkPrediction {
        doc_id: mention.doc_id.clone(),
        start: mention.start,
        end: mention.end,
        etype: mention.etype,
        decision,
        score,
        ranked,
    })
}

/// Links every mention on a pool of `threads` workers (0 = rayon default). Output order
/// follows input order and does not depend on the thread count.
pub fn link_batch(
    mentions: &[Mention],
    config: &PipelineConfig,
    threads: usize,
) -> Vec<Result<LinkPrediction, LinkError>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool");
    pool.install(|| mentions.par_iter().map(|m| link(m, config)).collect())
}

/// Retrieves a block per mention and marks candidates whose QID equals the gold QID.
pub fn training_blocks(mentions: &[Mention], retriever: &Retriever) -> Result<Vec<TrainingBlock>, LinkError> {
    mentions
        .iter()
        .map(|m| {
            let block = retriever.featurized_block(m)?;
            Ok(TrainingBlock {
                mention_id: m.key(),
                candidates: block
                    .into_iter()
                    .map(|(tuple, fv)| BlockCandidate {
                        entity_id: tuple.entity.entity_id,
                        l2: tuple.l2,
                        features: fv.to_array(),
                        is_gold: m.gold.as_ref() == Some(&tuple.entity.qid),
                    })
                    .collect(),
            })
        })
        .collect()
}

/// Samples labeled pairs from the retriever's blocks and fits the re-ranker.
pub fn train(
    mentions: &[Mention],
    retriever: &Retriever,
    hp: &Hyperparams,
    seed: u64,
) -> Result<(GbtModel, Vec<FeatureRow>), LinkError> {
    let blocks = training_blocks(mentions, retriever)?;
    let rows = sample_training_pairs(&blocks, hp.c_neg_size, seed);
    let positives = rows.iter().filter(|r| r.label == 1).count();
    log::info!(
        "sampled {} training pairs ({positives} positive) from {} mentions",
        rows.len(),
        mentions.len()
    );
    if rows.is_empty() {
        return Err(GbtError::TooFewRows(0).into());
    }
    let features: Vec<[f64; N_FEATURES]> = rows.iter().map(|r| r.features).collect();
    let labels: Vec<u8> = rows.iter().map(|r| r.label).collect();
    let x = FeatureMatrix::from_feature_rows(&features)?;
    let model = fit(&x, &labels, hp, seed)?;
    Ok((model, rows))
}

/// Default grid for threshold tuning: 0.00, 0.05, ..., 1.00.
pub fn default_threshold_grid() -> Vec<f64> {
    (0..=20).map(|i| f64::from(i) / 20.0).collect()
}

fn check_alignment(predictions: &[LinkPrediction], gold: &[Mention]) -> Result<(), LinkError> {
    if predictions.len() != gold.len() {
        return Err(LinkError::Alignment {
            index: predictions.len().min(gold.len()),
            message: format!("{} predictions for {} mentions", predictions.len(), gold.len()),
        });
    }
    for (i, (p, g)) in predictions.iter().zip(gold).enumerate() {
        if p.key() != g.key() {
            return Err(LinkError::Alignment {
                index: i,
                message: format!("{} vs {}", p.key(), g.key()),
            });
        }
    }
    Ok(())
}

/// Picks the threshold maximizing ED accuracy on a development slice; among equally good
/// grid points the middle one is taken.
pub fn tune_nil_threshold(predictions: &[LinkPrediction], gold: &[Mention], grid: &[f64]) -> Result<f64, LinkError> {
    check_alignment(predictions, gold)?;
    if grid.is_empty() {
        return Err(LinkError::Config("empty threshold grid".into()));
    }
    let mut grid = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let correct_at = |t: f64| {
        predictions
            .iter()
            .zip(gold)
            .filter(|(p, g)| decide(&p.ranked, t).0 == g.gold)
            .count()
    };
    let scores: Vec<usize> = grid.iter().map(|&t| correct_at(t)).collect();
    let best = *scores.iter().max().expect("non-empty grid");
    let winners: Vec<f64> = grid.iter().zip(&scores).filter(|(_, &s)| s == best).map(|(&t, _)| t).collect();
    Ok(winners[winners.len() / 2])
}

pub fn predictions_to_jsonl(predictions: &[LinkPrediction]) -> String {
    let mut out = String::new();
    for p in predictions {
        out.push_str(&serde_json::to_string(p).expect("prediction serializes"));
        out.push('\n');
    }
    out
}

pub fn predictions_from_jsonl(text: &str) -> Result<Vec<LinkPrediction>, LinkError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| LinkError::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(s: &str) -> Qid {
        Qid::new(s).unwrap()
    }

    fn pred(ranked: Vec<(Qid, f64)>, threshold: f64) -> LinkPrediction {
        let (decision, score) = decide(&ranked, threshold);
        LinkPrediction {
            doc_id: "d".into(),
            start: 0,
            end: 3,
            etype: EntityType::Per,
            decision,
            score,
            ranked,
        }
    }

    #[test]
    fn decide_threshold_semantics() {
        let ranked = vec![(q("Q1"), 0.3), (q("Q2"), 0.1)];
        assert_eq!(decide(&ranked, 0.4), (None, 0.0));
        assert_eq!(decide(&ranked, 0.3), (Some(q("Q1")), 0.3));
        assert_eq!(decide(&ranked, 0.0).0, Some(q("Q1")));
        assert_eq!(decide(&[], 0.0), (None, 0.0));
    }

    #[test]
    fn prediction_jsonl_round_trip() {
        let preds = vec![pred(vec![(q("Q7"), 0.9), (q("Q8"), 0.2)], 0.4), pred(vec![(q("Q9"), 0.1)], 0.4)];
        let text = predictions_to_jsonl(&preds);
        assert!(text.lines().next().unwrap().contains(r#""ranked":[["Q7",0.9],["Q8",0.2]]"#));
        assert!(text.lines().nth(1).unwrap().contains(r#""decision":"NIL""#));
        assert_eq!(predictions_from_jsonl(&text).unwrap(), preds);
    }

    #[test]
    fn raising_threshold_only_adds_nils() {
        let p = pred(vec![(q("Q1"), 0.55)], 0.0);
        let mut was_nil = false;
        for t in default_threshold_grid() {
            let nil = p.with_threshold(t).is_nil();
            assert!(!was_nil || nil);
            was_nil = nil;
        }
    }
}

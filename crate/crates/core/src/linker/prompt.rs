//! Prompt construction for LLM adjudication and parsing of the model's reply.
//!
//! The artifact never runs a model: prompts are dumped as JSONL, executed elsewhere,
//! and the raw replies are read back keyed by mention.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::{LinkPrediction, RetrievedCandidate};
use crate::corpus::Mention;
use crate::types::{EntityType, Qid};

pub const ENT_TAG: &str = "[ENT]";
const ENT_TAG_ESCAPED: &str = "[ENT ]";

const SYSTEM_PROMPT: &str = "You are an effective information extraction system specialized in disambiguating \
entities in historical and humanities texts. The user gives you a text in which one mention is enclosed in ENT \
tags, together with a list of Wikidata candidates. Pick the candidate the mention refers to. Reply with JSON only \
and never with program code.";

#[derive(Debug, Error)]
pub enum ResponseError {
    #[error("no JSON object found in response")]
    NoJson,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptCandidate {
    pub wikipedia_title: String,
    pub wikidata_id: Qid,
    /// Long type name (person, location, organization, work).
    #[serde(rename = "type")]
    pub etype: Option<String>,
    pub date: Option<i32>,
    /// Bi-encoder similarity.
    pub score: f64,
}

impl From<&RetrievedCandidate> for PromptCandidate {
    fn from(c: &RetrievedCandidate) -> Self {
        PromptCandidate {
            wikipedia_title: c.tuple.entity.wikipedia_title.clone(),
            wikidata_id: c.tuple.entity.qid.clone(),
            etype: c.tuple.entity.etype.map(|t| t.long_name().to_string()),
            date: c.tuple.entity.date,
            score: c.similarity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub system: String,
    pub user: String,
}

fn escape_tags(text: &str) -> String {
    text.replace(ENT_TAG, ENT_TAG_ESCAPED)
}

/// Mention context with the surface wrapped in a pair of tags.
pub fn annotated_text(mention: &Mention) -> String {
    format!(
        "{}{ENT_TAG}{}{ENT_TAG}{}",
        escape_tags(&mention.left_context),
        escape_tags(&mention.surface),
        escape_tags(&mention.right_context)
    )
}

pub fn candidates_json(candidates: &[PromptCandidate]) -> String {
    serde_json::to_string(candidates).expect("candidates serialize")
}

pub fn build_prompt(mention: &Mention, candidates: &[RetrievedCandidate], doc_date: i32) -> Prompt {
    let listed: Vec<PromptCandidate> = candidates.iter().map(PromptCandidate::from).collect();
    let user = format!(
        "The input text was published in {doc_date}.\n\n\
         Identify which Wikidata entity from the candidate list the mention enclosed in ENT tags refers to. \
         Entity types and dates are useful evidence.\n\n\
         Answer with one JSON object shaped like this:\n\
         {{\"wikipedia_title\": \"\", \"wikidata_id\": \"\"}}\n\n\
         Copy both values from the same candidate in the list. If no candidate matches the tagged mention, \
         answer with an empty JSON object.\n\n\
         Input text: {}\n\n\
         Candidates: {}",
        annotated_text(mention),
        candidates_json(&listed)
    );
    Prompt {
        system: SYSTEM_PROMPT.to_string(),
        user,
    }
}

/// Outcome of reading one reply.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LlmResponse {
    pub decision: Option<Qid>,
    /// Set when the reply named something that could not be accepted.
    pub warning: Option<String>,
}

fn first_json_object(text: &str) -> Option<serde_json::Map<String, Value>> {
    text.char_indices().filter(|(_, c)| *c == '{').find_map(|(i, _)| {
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(Value::Object(map))) => Some(map),
            _ => None,
        }
    })
}

/// Reads the first JSON object in `text`. An empty object means NIL; a QID outside
/// `candidates` is coerced to NIL with a warning.
pub fn parse_llm_response(text: &str, candidates: &[Qid]) -> Result<LlmResponse, ResponseError> {
    let object = first_json_object(text).ok_or(ResponseError::NoJson)?;
    let nil = |warning: Option<String>| {
        if let Some(w) = &warning {
            log::warn!("{w}");
        }
        Ok(LlmResponse { decision: None, warning })
    };
    if object.is_empty() {
        return nil(None);
    }
    let raw = match object.get("wikidata_id") {
        Some(Value::String(s)) => s.trim().to_string(),
        Some(other) => return nil(Some(format!("wikidata_id is not a string: {other}"))),
        None => return nil(Some("response object has no wikidata_id".into())),
    };
    if raw.is_empty() {
        return nil(None);
    }
    let Ok(qid) = Qid::new(&raw) else {
        return nil(Some(format!("malformed wikidata_id {raw:?}")));
    };
    if !candidates.contains(&qid) {
        return nil(Some(format!("{qid} is not among the candidates")));
    }
    Ok(LlmResponse {
        decision: Some(qid),
        warning: None,
    })
}

/// One line of the offline prompt dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub mention_key: String,
    pub doc_id: String,
    pub start: usize,
    pub end: usize,
    #[serde(rename = "type")]
    pub etype: EntityType,
    pub candidates: Vec<PromptCandidate>,
    pub system: String,
    pub user: String,
}

impl PromptRecord {
    pub fn new(mention: &Mention, candidates: &[RetrievedCandidate]) -> Self {
        let prompt = build_prompt(mention, candidates, mention.date);
        PromptRecord {
            mention_key: mention.key(),
            doc_id: mention.doc_id.clone(),
            start: mention.start,
            end: mention.end,
            etype: mention.etype,
            candidates: candidates.iter().map(PromptCandidate::from).collect(),
            system: prompt.system,
            user: prompt.user,
        }
    }

    /// Turns a reply into a prediction. Accepted picks get score 1; NIL gets score 0.
    pub fn resolve(&self, response_text: &str) -> Result<LinkPrediction, ResponseError> {
        let qids: Vec<Qid> = self.candidates.iter().map(|c| c.wikidata_id.clone()).collect();
        let parsed = parse_llm_response(response_text, &qids)?;
        let ranked = parsed.decision.iter().map(|q| (q.clone(), 1.0)).collect();
        Ok(LinkPrediction {
            doc_id: self.doc_id.clone(),
            start: self.start,
            end: self.end,
            etype: self.etype,
            score: if parsed.decision.is_some() { 1.0 } else { 0.0 },
            decision: parsed.decision,
            ranked,
        })
    }
}

/// One line of the response file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub mention_key: String,
    pub response_text: String,
}

pub fn to_jsonl<T: Serialize>(records: &[T]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn from_jsonl<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>, ResponseError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| ResponseError::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::{CandidateTuple, EntityRecord};

    fn mention(left: &str, surface: &str, right: &str) -> Mention {
        Mention {
            doc_id: "d1".into(),
            start: left.chars().count(),
            end: left.chars().count() + surface.chars().count(),
            surface: surface.into(),
            etype: EntityType::Per,
            date: 1925,
            left_context: left.into(),
            right_context: right.into(),
            gold: None,
        }
    }

    fn candidate(id: u64, qid: &str, title: &str, etype: Option<EntityType>, date: Option<i32>) -> RetrievedCandidate {
        RetrievedCandidate {
            tuple: CandidateTuple {
                entity: EntityRecord {
                    entity_id: id,
                    wikipedia_title: title.into(),
                    qid: Qid::new(qid).unwrap(),
                    label: title.into(),
                    etype,
                    date,
                },
                l2: 0.5,
            },
            similarity: 0.75,
        }
    }

    fn cands() -> Vec<RetrievedCandidate> {
        vec![
            candidate(1, "Q778445", "Giorgio Amendola", Some(EntityType::Per), Some(1907)),
            candidate(2, "Q356981", "Giovanni Amendola", Some(EntityType::Per), None),
        ]
    }

    #[test]
    fn prompt_has_tags_date_and_candidates() {
        let p = build_prompt(&mention("Ieri ", "Amendola", " parlò."), &cands(), 1925);
        assert_eq!(p.user.matches(ENT_TAG).count(), 2);
        assert!(p.user.contains("Ieri [ENT]Amendola[ENT] parlò."));
        assert!(p.user.contains("1925"));
        assert!(p.user.contains("\"wikipedia_title\"") && p.user.contains("\"wikidata_id\""));
        let json = p.user.rsplit("Candidates: ").next().unwrap();
        let parsed: Vec<PromptCandidate> = serde_json::from_str(json).unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[1].date, None);
        assert!(json.contains("\"date\":null"));
        assert_eq!(parsed[0].etype.as_deref(), Some("person"));
        assert!(!p.system.contains(ENT_TAG));
    }

    #[test]
    fn source_tags_are_escaped() {
        let p = build_prompt(&mention("a [ENT] b ", "X[ENT]", " [ENT]"), &cands(), 1900);
        assert_eq!(p.user.matches(ENT_TAG).count(), 2);
    }

    #[test]
    fn prompt_is_deterministic() {
        let m = mention("x ", "Moro", " y");
        assert_eq!(build_prompt(&m, &cands(), 1970), build_prompt(&m, &cands(), 1970));
    }

    fn qids() -> Vec<Qid> {
        cands().iter().map(|c| c.tuple.entity.qid.clone()).collect()
    }

    #[test]
    fn parse_valid_pick() {
        let r = parse_llm_response(
            r#"{"wikipedia_title": "Giorgio Amendola", "wikidata_id": "Q778445"}"#,
            &qids(),
        )
        .unwrap();
        assert_eq!(r.decision, Some(Qid::new("Q778445").unwrap()));
        assert_eq!(r.warning, None);
    }

    #[test]
    fn parse_empty_object_is_nil() {
        let r = parse_llm_response("{}", &qids()).unwrap();
        assert_eq!((r.decision, r.warning), (None, None));
    }

    #[test]
    fn parse_out_of_list_is_nil_with_warning() {
        let r = parse_llm_response(r#"{"wikipedia_title": "Roma", "wikidata_id": "Q220"}"#, &qids()).unwrap();
        assert_eq!(r.decision, None);
        assert!(r.warning.unwrap().contains("Q220"));
    }

    #[test]
    fn parse_skips_prose_and_braces() {
        let text = "Sure {not json} here:\n```json\n{\"wikipedia_title\": \"x\", \"wikidata_id\": \"Q356981\"}\n```";
        assert_eq!(
            parse_llm_response(text, &qids()).unwrap().decision,
            Some(Qid::new("Q356981").unwrap())
        );
        assert!(matches!(parse_llm_response("no idea", &qids()), Err(ResponseError::NoJson)));
        assert_eq!(
            parse_llm_response(r#"{"wikidata_id": ""}"#, &qids()).unwrap().decision,
            None
        );
    }

    #[test]
    fn record_resolution() {
        let m = mention("", "Amendola", "");
        let rec = PromptRecord::new(&m, &cands());
        let line = to_jsonl(std::slice::from_ref(&rec));
        let back: Vec<PromptRecord> = from_jsonl(&line).unwrap();
        assert_eq!(back[0], rec);
        let p = rec.resolve(r#"{"wikidata_id": "Q356981"}"#).unwrap();
        assert_eq!(p.decision, Some(Qid::new("Q356981").unwrap()));
        assert_eq!(p.score, 1.0);
        assert!(rec.resolve("{}").unwrap().is_nil());
    }
}

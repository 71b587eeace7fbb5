//! Annotated corpora: loading, type normalization, mention extraction and
//! chronologically stratified train/dev/test splits.
//!
//! Offsets in dataset files count Unicode scalar values, not bytes.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::types::{qid_or_nil, EntityType, Qid};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed dataset JSON at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("document {doc_id}: {message}")]
    InvalidDocument { doc_id: String, message: String },
    #[error("document {doc_id}, annotation #{index} [{start}, {end}): {message}")]
    InvalidAnnotation {
        doc_id: String,
        index: usize,
        start: usize,
        end: usize,
        message: String,
    },
    #[error("type {0:?} has no coarse mapping")]
    Unmapped(String),
    #[error("invalid split request: {0}")]
    InvalidSplit(String),
}

/// Which annotation vocabulary a dataset file uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    /// Coarse `PER`/`LOC`/`ORG`/`WORK` codes.
    Eneide,
    /// Free-form fine-grained type strings, translated by [`map_type`].
    Mhercl,
}

impl std::str::FromStr for DatasetFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "eneide" => Ok(DatasetFormat::Eneide),
            "mhercl" => Ok(DatasetFormat::Mhercl),
            other => Err(format!("unknown dataset format {other:?}")),
        }
    }
}

/// An annotation type as it appears in the source file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TypeLabel {
    Coarse(EntityType),
    Fine(String),
}

impl TypeLabel {
    pub fn coarse(&self) -> Option<EntityType> {
        match self {
            TypeLabel::Coarse(t) => Some(*t),
            TypeLabel::Fine(_) => None,
        }
    }
}

impl fmt::Display for TypeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TypeLabel::Coarse(t) => f.write_str(t.code()),
            TypeLabel::Fine(s) => f.write_str(s),
        }
    }
}

impl Serialize for TypeLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Annotation {
    pub start: usize,
    pub end: usize,
    pub surface: String,
    #[serde(rename = "type")]
    pub etype: TypeLabel,
    #[serde(with = "qid_or_nil")]
    pub gold: Option<Qid>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Document {
    pub id: String,
    pub date: i32,
    pub text: String,
    pub annotations: Vec<Annotation>,
}

#[derive(Deserialize)]
struct RawDataset {
    documents: Vec<RawDocument>,
}

#[derive(Deserialize)]
struct RawDocument {
    id: String,
    #[serde(deserialize_with = "year_from_date")]
    date: i32,
    text: String,
    #[serde(default)]
    annotations: Vec<RawAnnotation>,
}

#[derive(Deserialize)]
struct RawAnnotation {
    start: usize,
    end: usize,
    surface: String,
    #[serde(rename = "type")]
    etype: String,
    gold: String,
}

#[derive(Serialize)]
struct DatasetOut<'a> {
    documents: &'a [Document],
}

/// Accepts an integer year or an ISO-like date string; anything finer than a year is dropped.
fn year_from_date<'de, D: Deserializer<'de>>(deserializer: D) -> Result<i32, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum DateRepr {
        Year(i64),
        Text(String),
    }
    match DateRepr::deserialize(deserializer)? {
        DateRepr::Year(y) => i32::try_from(y).map_err(|_| serde::de::Error::custom(format!("year {y} out of range"))),
        DateRepr::Text(s) => parse_year(&s).ok_or_else(|| serde::de::Error::custom(format!("unparseable date {s:?}"))),
    }
}

pub(crate) fn parse_year(s: &str) -> Option<i32> {
    let s = s.trim();
    let (sign, rest) = match s.strip_prefix('-') {
        Some(r) => (-1, r),
        None => (1, s.strip_prefix('+').unwrap_or(s)),
    };
    let digits: String = rest.chars().take_while(|c| c.is_ascii_digit()).collect();
    if digits.is_empty() {
        return None;
    }
    digits.parse::<i32>().ok().map(|y| sign * y)
}

/// Byte offset of every char boundary in `text`, including the end.
fn char_boundaries(text: &str) -> Vec<usize> {
    let mut b: Vec<usize> = text.char_indices().map(|(i, _)| i).collect();
    b.push(text.len());
    b
}

/// Substring by char offsets. Caller guarantees `start <= end <= char count`.
fn char_slice(text: &str, bounds: &[usize], start: usize, end: usize) -> String {
    text[bounds[start]..bounds[end]].to_string()
}

pub fn load_dataset(path: impl AsRef<Path>, format: DatasetFormat) -> Result<Vec<Document>, CorpusError> {
    let path = path.as_ref();
    let raw = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_dataset(&raw, format)
}

pub fn parse_dataset(json: &str, format: DatasetFormat) -> Result<Vec<Document>, CorpusError> {
    let raw: RawDataset = serde_json::from_str(json).map_err(|e| CorpusError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    raw.documents.into_iter().map(|d| validate_document(d, format)).collect()
}

fn validate_document(raw: RawDocument, format: DatasetFormat) -> Result<Document, CorpusError> {
    if raw.date <= 0 {
        return Err(CorpusError::InvalidDocument {
            doc_id: raw.id,
            message: format!("date must be a positive year, got {}", raw.date),
        });
    }
    let bounds = char_boundaries(&raw.text);
    let n_chars = bounds.len() - 1;
    let mut annotations = Vec::with_capacity(raw.annotations.len());
    for (index, a) in raw.annotations.into_iter().enumerate() {
        let fail = |message: String| CorpusError::InvalidAnnotation {
            doc_id: raw.id.clone(),
            index,
            start: a.start,
            end: a.end,
            message,
        };
        if a.start >= a.end {
            return Err(fail("start must precede end".into()));
        }
        if a.end > n_chars {
            return Err(fail(format!("end exceeds text length {n_chars}")));
        }
        let actual = char_slice(&raw.text, &bounds, a.start, a.end);
        if actual != a.surface {
            return Err(fail(format!("surface {:?} does not match text {:?}", a.surface, actual)));
        }
        let etype = match format {
            DatasetFormat::Eneide => TypeLabel::Coarse(
                a.etype
                    .parse()
                    .map_err(|_| fail(format!("type {:?} is not one of PER, LOC, ORG, WORK", a.etype)))?,
            ),
            DatasetFormat::Mhercl => TypeLabel::Fine(a.etype.clone()),
        };
        let gold = if a.gold == crate::types::NIL {
            None
        } else {
            Some(Qid::new(a.gold.clone()).map_err(|e| fail(e.to_string()))?)
        };
        annotations.push(Annotation {
            start: a.start,
            end: a.end,
            surface: a.surface,
            etype,
            gold,
        });
    }
    let mut order: Vec<usize> = (0..annotations.len()).collect();
    order.sort_by_key(|&i| (annotations[i].start, annotations[i].end));
    for pair in order.windows(2) {
        let (a, b) = (&annotations[pair[0]], &annotations[pair[1]]);
        if b.start < a.end {
            return Err(CorpusError::InvalidAnnotation {
                doc_id: raw.id.clone(),
                index: pair[1],
                start: b.start,
                end: b.end,
                message: format!("overlaps annotation #{} [{}, {})", pair[0], a.start, a.end),
            });
        }
    }
    Ok(Document {
        id: raw.id,
        date: raw.date,
        text: raw.text,
        annotations,
    })
}

pub fn dataset_to_json(docs: &[Document]) -> String {
    serde_json::to_string_pretty(&DatasetOut { documents: docs }).expect("documents serialize")
}

pub fn save_dataset(path: impl AsRef<Path>, docs: &[Document]) -> Result<(), CorpusError> {
    let path = path.as_ref();
    fs::write(path, dataset_to_json(docs)).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

// Fine-grained vocabulary of the music-periodicals corpus, grouped by coarse type.
const PER_TYPES: &[&str] = &["person"];
const ORG_TYPES: &[&str] = &[
    "family",
    "organization",
    "school",
    "government-organization",
    "university",
    "newspaper",
    "magazine",
];
const LOC_TYPES: &[&str] = &[
    "city",
    "country",
    "country region",
    "continent",
    "location",
    "mountain",
    "road",
    "lake",
    "island",
    "building",
    "worship-place",
    "facility",
    "theater",
];
const WORK_TYPES: &[&str] = &[
    "book",
    "work-of-art",
    "publication",
    "music",
    "music key",
    "award",
    "event",
    "festival",
    "court decision",
    "war",
    "conference",
    "law",
];

/// Maps a fine-grained type string onto its coarse type (case-insensitive, otherwise exact).
pub fn map_type(fine: &str) -> Result<EntityType, CorpusError> {
    let table: [(&[&str], EntityType); 4] = [
        (PER_TYPES, EntityType::Per),
        (ORG_TYPES, EntityType::Org),
        (LOC_TYPES, EntityType::Loc),
        (WORK_TYPES, EntityType::Work),
    ];
    table
        .iter()
        .find(|(names, _)| names.iter().any(|n| n.eq_ignore_ascii_case(fine)))
        .map(|(_, t)| *t)
        .ok_or_else(|| CorpusError::Unmapped(fine.to_string()))
}

/// Every fine-grained type string [`map_type`] accepts.
pub fn fine_type_vocabulary() -> impl Iterator<Item = &'static str> {
    PER_TYPES
        .iter()
        .chain(ORG_TYPES)
        .chain(LOC_TYPES)
        .chain(WORK_TYPES)
        .copied()
}

/// Replaces every fine-grained label with its coarse type.
pub fn translate_types(docs: Vec<Document>) -> Result<Vec<Document>, CorpusError> {
    docs.into_iter()
        .map(|mut d| {
            for a in &mut d.annotations {
                if let TypeLabel::Fine(s) = &a.etype {
                    a.etype = TypeLabel::Coarse(map_type(s)?);
                }
            }
            Ok(d)
        })
        .collect()
}

/// A single annotated reference, with its attributes and flanking context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub doc_id: String,
    pub start: usize,
    pub end: usize,
    pub surface: String,
    #[serde(rename = "type")]
    pub etype: EntityType,
    pub date: i32,
    pub left_context: String,
    pub right_context: String,
    #[serde(with = "qid_or_nil")]
    pub gold: Option<Qid>,
}

impl Mention {
    /// Stable textual key: `doc_id:start:end`.
    pub fn key(&self) -> String {
        mention_key(&self.doc_id, self.start, self.end)
    }

    /// 64-bit FNV-1a hash of [`Mention::key`]; the key used in mention-embedding sidecars.
    pub fn numeric_key(&self) -> u64 {
        fnv1a64(self.key().as_bytes())
    }
}

pub fn mention_key(doc_id: &str, start: usize, end: usize) -> String {
    format!("{doc_id}:{start}:{end}")
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Byte ranges of whitespace-separated tokens.
fn token_spans(s: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, c) in s.char_indices() {
        match (c.is_whitespace(), start) {
            (true, Some(st)) => {
                spans.push((st, i));
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(st) = start {
        spans.push((st, s.len()));
    }
    spans
}

/// Emits one mention per annotation with at most `window` whitespace tokens of context per side.
///
/// Fails only if a document still carries an untranslated fine-grained type.
pub fn extract_mentions(docs: &[Document], window: usize) -> Result<Vec<Mention>, CorpusError> {
    let mut out = Vec::new();
    for doc in docs {
        let bounds = char_boundaries(&doc.text);
        for a in &doc.annotations {
            let etype = match &a.etype {
                TypeLabel::Coarse(t) => *t,
                TypeLabel::Fine(s) => return Err(CorpusError::Unmapped(s.clone())),
            };
            let (bs, be) = (bounds[a.start], bounds[a.end]);
            let left_text = &doc.text[..bs];
            let right_text = &doc.text[be..];
            let left_context = if window == 0 {
                String::new()
            } else {
                let spans = token_spans(left_text);
                match spans.len().checked_sub(window) {
                    _ if spans.is_empty() => String::new(),
                    Some(first) => left_text[spans[first].0..spans[spans.len() - 1].1].to_string(),
                    None => left_text[spans[0].0..spans[spans.len() - 1].1].to_string(),
                }
            };
            let right_context = if window == 0 {
                String::new()
            } else {
                let spans = token_spans(right_text);
                if spans.is_empty() {
                    String::new()
                } else {
                    let last = spans.len().min(window) - 1;
                    right_text[spans[0].0..spans[last].1].to_string()
                }
            };
            out.push(Mention {
                doc_id: doc.id.clone(),
                start: a.start,
                end: a.end,
                surface: a.surface.clone(),
                etype,
                date: doc.date,
                left_context,
                right_context,
                gold: a.gold.clone(),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SplitName {
    Train,
    Dev,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub name: SplitName,
    pub documents: Vec<Document>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.70,
            dev: 0.15,
            test: 0.15,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: DatasetSplit,
    pub dev: DatasetSplit,
    pub test: DatasetSplit,
    /// Set when undersized strata had to be merged.
    pub degenerate: bool,
}

/// Smallest stratum that is kept on its own.
const MIN_STRATUM: usize = 3;

/// Splits per decade of document date so every split keeps a similar chronological profile.
pub fn stratified_split(docs: &[Document], ratios: SplitRatios, seed: u64) -> Result<Splits, CorpusError> {
    let sum = ratios.train + ratios.dev + ratios.test;
    if (sum - 1.0).abs() > 1e-9 {
        return Err(CorpusError::InvalidSplit(format!("ratios sum to {sum}, expected 1")));
    }
    if [ratios.train, ratios.dev, ratios.test].iter().any(|r| *r < 0.0) {
        return Err(CorpusError::InvalidSplit("ratios must be nonnegative".into()));
    }
    if docs.is_empty() {
        return Err(CorpusError::InvalidSplit("no documents to split".into()));
    }

    let mut strata: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
    for (i, d) in docs.iter().enumerate() {
        strata.entry(d.date.div_euclid(10)).or_default().push(i);
    }
    let initial_strata = strata.len();
    merge_small_strata(&mut strata);
    let degenerate = strata.len() < initial_strata || docs.len() < initial_strata * 3;
    if degenerate {
        log::warn!(
            "degenerate split: {} documents over {} decade strata; merged into {}",
            docs.len(),
            initial_strata,
            strata.len()
        );
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assigned: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for members in strata.values_mut() {
        members.sort_by(|&a, &b| docs[a].id.cmp(&docs[b].id).then(a.cmp(&b)));
        members.shuffle(&mut rng);
        let sizes = largest_remainder(members.len(), [ratios.train, ratios.dev, ratios.test]);
        let mut it = members.iter().copied();
        for (split, &size) in assigned.iter_mut().zip(&sizes) {
            split.extend(it.by_ref().take(size));
        }
    }

    let [train, dev, test] = assigned.map(|mut idx| {
        idx.sort_unstable();
        idx.into_iter().map(|i| docs[i].clone()).collect::<Vec<_>>()
    });
    Ok(Splits {
        train: DatasetSplit {
            name: SplitName::Train,
            documents: train,
        },
        dev: DatasetSplit {
            name: SplitName::Dev,
            documents: dev,
        },
        test: DatasetSplit {
            name: SplitName::Test,
            documents: test,
        },
        degenerate,
    })
}

/// Folds strata smaller than [`MIN_STRATUM`] into the nearest decade (earlier decade on ties).
fn merge_small_strata(strata: &mut BTreeMap<i32, Vec<usize>>) {
    while strata.len() > 1 {
        let Some(small) = strata
            .iter()
            .find(|(_, m)| m.len() < MIN_STRATUM)
            .map(|(k, _)| *k)
        else {
            break;
        };
        let target = strata
            .keys()
            .copied()
            .filter(|&k| k != small)
            .min_by_key(|&k| ((i64::from(k) - i64::from(small)).abs(), k))
            .expect("at least two strata");
        let moved = strata.remove(&small).unwrap_or_default();
        strata.get_mut(&target).expect("target exists").extend(moved);
    }
}

/// Hamilton apportionment; ties on the fractional part go to the earlier split.
pub(crate) fn largest_remainder(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let quotas = ratios.map(|r| n as f64 * r);
    let mut sizes = quotas.map(|q| (q + 1e-9).floor() as usize);
    let assigned: usize = sizes.iter().sum();
    let mut order = [0usize, 1, 2];
    let frac = |i: usize| quotas[i] - sizes[i] as f64;
    order.sort_by(|&a, &b| frac(b).total_cmp(&frac(a)).then(a.cmp(&b)));
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    sizes
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, date: i32) -> Document {
        Document {
            id: id.into(),
            date,
            text: String::new(),
            annotations: vec![],
        }
    }

    #[test]
    fn empty_dataset_parses() {
        assert!(parse_dataset(r#"{"documents": []}"#, DatasetFormat::Eneide).unwrap().is_empty());
    }

    #[test]
    fn minimal_valid_document() {
        let json = r#"{"documents": [{"id": "d1", "date": 1978, "text": "Visitai Roma ieri",
            "annotations": [{"start": 8, "end": 12, "surface": "Roma", "type": "LOC", "gold": "Q220"}]}]}"#;
        let docs = parse_dataset(json, DatasetFormat::Eneide).unwrap();
        assert_eq!(docs.len(), 1);
        assert_eq!(docs[0].annotations.len(), 1);
        assert_eq!(docs[0].annotations[0].etype, TypeLabel::Coarse(EntityType::Loc));
    }

    #[test]
    fn shifted_offset_is_rejected() {
        let json = r#"{"documents": [{"id": "d1", "date": 1978, "text": "Visitai Roma ieri",
            "annotations": [{"start": 7, "end": 11, "surface": "Roma", "type": "LOC", "gold": "Q220"}]}]}"#;
        let err = parse_dataset(json, DatasetFormat::Eneide).unwrap_err();
        assert!(matches!(err, CorpusError::InvalidAnnotation { index: 0, .. }), "{err}");
        assert!(err.to_string().contains("d1"));
    }

    #[test]
    fn malformed_json_reports_line() {
        let err = parse_dataset("{\n\"documents\": [\n,]}", DatasetFormat::Eneide).unwrap_err();
        match err {
            CorpusError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn offsets_count_chars_not_bytes() {
        let json = r#"{"documents": [{"id": "d", "date": 1821, "text": "Città di Forlì",
            "annotations": [{"start": 9, "end": 14, "surface": "Forlì", "type": "LOC", "gold": "NIL"}]}]}"#;
        let docs = parse_dataset(json, DatasetFormat::Eneide).unwrap();
        assert_eq!(docs[0].annotations[0].gold, None);
    }

    #[test]
    fn overlapping_annotations_rejected() {
        let json = r#"{"documents": [{"id": "d", "date": 1900, "text": "Aldo Moro",
            "annotations": [{"start": 0, "end": 9, "surface": "Aldo Moro", "type": "PER", "gold": "Q48100"},
                            {"start": 5, "end": 9, "surface": "Moro", "type": "PER", "gold": "Q48100"}]}]}"#;
        assert!(parse_dataset(json, DatasetFormat::Eneide).is_err());
    }

    #[test]
    fn dates_truncate_to_year() {
        let json = r#"{"documents": [{"id": "d", "date": "1978-03-16", "text": "x", "annotations": []}]}"#;
        assert_eq!(parse_dataset(json, DatasetFormat::Eneide).unwrap()[0].date, 1978);
        let bad = r#"{"documents": [{"id": "d", "date": 0, "text": "x", "annotations": []}]}"#;
        assert!(parse_dataset(bad, DatasetFormat::Eneide).is_err());
    }

    #[test]
    fn eneide_rejects_fine_types_mhercl_keeps_them() {
        let json = r#"{"documents": [{"id": "d", "date": 1900, "text": "Roma",
            "annotations": [{"start": 0, "end": 4, "surface": "Roma", "type": "city", "gold": "Q220"}]}]}"#;
        assert!(parse_dataset(json, DatasetFormat::Eneide).is_err());
        let docs = parse_dataset(json, DatasetFormat::Mhercl).unwrap();
        assert_eq!(docs[0].annotations[0].etype, TypeLabel::Fine("city".into()));
        assert!(matches!(extract_mentions(&docs, 3), Err(CorpusError::Unmapped(_))));
        let translated = translate_types(docs).unwrap();
        assert_eq!(translated[0].annotations[0].etype, TypeLabel::Coarse(EntityType::Loc));
    }

    #[test]
    fn map_type_examples() {
        assert_eq!(map_type("city").unwrap(), EntityType::Loc);
        assert_eq!(map_type("person").unwrap(), EntityType::Per);
        assert_eq!(map_type("Work-Of-Art").unwrap(), EntityType::Work);
        assert_eq!(map_type("newspaper").unwrap(), EntityType::Org);
        assert!(matches!(map_type("spaceship"), Err(CorpusError::Unmapped(s)) if s == "spaceship"));
        assert!(map_type("work of art").is_err());
    }

    #[test]
    fn map_type_total_on_vocabulary() {
        let vocab: Vec<_> = fine_type_vocabulary().collect();
        assert_eq!(vocab.len(), 33);
        for v in vocab {
            assert!(map_type(v).is_ok(), "{v}");
            assert!(map_type(&v.to_uppercase()).is_ok(), "{v}");
        }
    }

    #[test]
    fn single_stratum_exact_ratios() {
        let docs: Vec<_> = (0..100).map(|i| doc(&format!("d{i:03}"), 1950)).collect();
        let s = stratified_split(&docs, SplitRatios::default(), 0).unwrap();
        assert_eq!(
            (s.train.documents.len(), s.dev.documents.len(), s.test.documents.len()),
            (70, 15, 15)
        );
        assert!(!s.degenerate);
    }

    #[test]
    fn two_decades_of_five() {
        // 5 docs per decade: quotas (3.5, 0.75, 0.75) -> floors (3, 0, 0), two remainder seats to dev and test.
        let docs: Vec<_> = (0..10)
            .map(|i| doc(&format!("d{i}"), if i < 5 { 1821 } else { 1978 }))
            .collect();
        let s = stratified_split(&docs, SplitRatios::default(), 0).unwrap();
        for decade in [182, 197] {
            let count = |split: &DatasetSplit| split.documents.iter().filter(|d| d.date / 10 == decade).count();
            assert_eq!((count(&s.train), count(&s.dev), count(&s.test)), (3, 1, 1));
        }
    }

    #[test]
    fn two_years_same_decade() {
        // Single decade stratum of 10: quotas (7, 1.5, 1.5); the tie goes to dev.
        let docs: Vec<_> = (0..10)
            .map(|i| doc(&format!("d{i}"), if i < 5 { 1821 } else { 1823 }))
            .collect();
        let s = stratified_split(&docs, SplitRatios::default(), 3).unwrap();
        assert_eq!(
            (s.train.documents.len(), s.dev.documents.len(), s.test.documents.len()),
            (7, 2, 1)
        );
    }

    #[test]
    fn split_is_deterministic_and_seed_sensitive() {
        let docs: Vec<_> = (0..40).map(|i| doc(&format!("d{i}"), 1900 + i)).collect();
        let a = stratified_split(&docs, SplitRatios::default(), 11).unwrap();
        let b = stratified_split(&docs, SplitRatios::default(), 11).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        let c = stratified_split(&docs, SplitRatios::default(), 12).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn small_strata_merge_with_warning() {
        let mut docs: Vec<_> = (0..9).map(|i| doc(&format!("a{i}"), 1900)).collect();
        docs.push(doc("lonely", 1750));
        let s = stratified_split(&docs, SplitRatios::default(), 0).unwrap();
        assert!(s.degenerate);
        let total = s.train.documents.len() + s.dev.documents.len() + s.test.documents.len();
        assert_eq!(total, 10);
    }

    #[test]
    fn bad_ratios_and_empty_input() {
        let docs = vec![doc("a", 1900)];
        let bad = SplitRatios {
            train: 0.7,
            dev: 0.2,
            test: 0.2,
        };
        assert!(stratified_split(&docs, bad, 0).is_err());
        assert!(stratified_split(&[], SplitRatios::default(), 0).is_err());
    }

    #[test]
    fn largest_remainder_sums_to_n() {
        for n in 0..50 {
            let s = largest_remainder(n, [0.7, 0.15, 0.15]);
            assert_eq!(s.iter().sum::<usize>(), n);
        }
    }

    fn one_mention_doc(text: &str, start: usize, end: usize) -> Document {
        let surface: String = text.chars().skip(start).take(end - start).collect();
        Document {
            id: "d".into(),
            date: 1978,
            text: text.into(),
            annotations: vec![Annotation {
                start,
                end,
                surface,
                etype: TypeLabel::Coarse(EntityType::Loc),
                gold: None,
            }],
        }
    }

    #[test]
    fn contexts_hand_tokenized() {
        let m = extract_mentions(&[one_mention_doc("Visitai Roma ieri", 8, 12)], 8).unwrap();
        assert_eq!(m[0].left_context, "Visitai");
        assert_eq!(m[0].right_context, "ieri");
        assert_eq!(m[0].date, 1978);
    }

    #[test]
    fn mention_at_text_start_has_empty_left_context() {
        let m = extract_mentions(&[one_mention_doc("Roma era bella", 0, 4)], 5).unwrap();
        assert_eq!(m[0].left_context, "");
        assert_eq!(m[0].right_context, "era bella");
    }

    #[test]
    fn zero_window_gives_empty_contexts() {
        let m = extract_mentions(&[one_mention_doc("Visitai Roma ieri", 8, 12)], 0).unwrap();
        assert_eq!(m[0].left_context, "");
        assert_eq!(m[0].right_context, "");
    }

    #[test]
    fn window_limits_tokens_and_contexts_are_substrings() {
        let text = "uno  due tre quattro Roma cinque sei   sette otto";
        let d = one_mention_doc(text, 21, 25);
        let m = extract_mentions(std::slice::from_ref(&d), 2).unwrap();
        assert_eq!(m[0].left_context, "tre quattro");
        assert_eq!(m[0].right_context, "cinque sei");
        assert!(text.contains(&m[0].left_context));
        let m = extract_mentions(std::slice::from_ref(&d), 4).unwrap();
        assert_eq!(m[0].left_context, "uno  due tre quattro");
        assert_eq!(m[0].right_context, "cinque sei   sette otto");
    }
}

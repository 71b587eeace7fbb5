//! Pairwise mention/candidate similarity features.
//!
//! Every vector carries nine values in a fixed order ([`FEATURE_NAMES`]); trained
//! models are only valid for that order.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::corpus::Mention;
use crate::kb::CandidateTuple;
use crate::types::EntityType;

pub const N_FEATURES: usize = 9;

pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "l2",
    "set_min",
    "set_max",
    "set_mean",
    "set_median",
    "levenshtein",
    "jaccard",
    "type_match",
    "delta_time",
];

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("cannot featurize an empty candidate block")]
    EmptyBlock,
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("feature dump line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub l2: f64,
    pub set_min: f64,
    pub set_max: f64,
    pub set_mean: f64,
    pub set_median: f64,
    pub levenshtein: u32,
    pub jaccard: f64,
    pub type_match: u8,
    pub delta_time: f64,
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; N_FEATURES] {
        [
            self.l2,
            self.set_min,
            self.set_max,
            self.set_mean,
            self.set_median,
            f64::from(self.levenshtein),
            self.jaccard,
            f64::from(self.type_match),
            self.delta_time,
        ]
    }
}

fn normalize(s: &str) -> String {
    s.nfc().collect::<String>().to_lowercase()
}

/// Unit-cost edit distance over Unicode scalar values, after NFC and lowercasing.
pub fn levenshtein(a: &str, b: &str) -> u32 {
    let a: Vec<char> = normalize(a).chars().collect();
    let b: Vec<char> = normalize(b).chars().collect();
    if a.is_empty() {
        return b.len() as u32;
    }
    let mut prev: Vec<u32> = (0..=b.len() as u32).collect();
    let mut cur = vec![0u32; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i as u32 + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + u32::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn token_set(s: &str) -> BTreeSet<String> {
    normalize(s).split_whitespace().map(str::to_string).collect()
}

/// `1 - |A ∩ B| / |A ∪ B|` over lowercased whitespace tokens; two empty sets are at distance 0.
pub fn jaccard_distance(a: &str, b: &str) -> f64 {
    let (ta, tb) = (token_set(a), token_set(b));
    let union = ta.union(&tb).count();
    if union == 0 {
        return 0.0;
    }
    let inter = ta.intersection(&tb).count();
    1.0 - inter as f64 / union as f64
}

/// Document year minus entity year; 0 when the entity is undated.
pub fn delta_time(doc_year: i32, entity_year: Option<i32>) -> f64 {
    entity_year.map_or(0.0, |y| f64::from(doc_year) - f64::from(y))
}

pub fn type_match(mention: EntityType, entity: Option<EntityType>) -> u8 {
    u8::from(entity == Some(mention))
}

/// Distance statistics over one retrieval block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SetStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub median: f64,
}

pub fn set_stats(distances: &[f64]) -> Option<SetStats> {
    if distances.is_empty() {
        return None;
    }
    let mut sorted = distances.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let (min, max) = (sorted[0], sorted[n - 1]);
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    };
    let mean = (sorted.iter().sum::<f64>() / n as f64).clamp(min, max);
    Some(SetStats { min, max, mean, median })
}

/// One feature vector per candidate, with block-level distance statistics replicated.
pub fn featurize_block(mention: &Mention, candidates: &[CandidateTuple]) -> Result<Vec<FeatureVector>, FeatureError> {
    let l2s: Vec<f64> = candidates.iter().map(|c| c.l2).collect();
    let stats = set_stats(&l2s).ok_or(FeatureError::EmptyBlock)?;
    Ok(candidates
        .iter()
        .map(|c| FeatureVector {
            l2: c.l2,
            set_min: stats.min,
            set_max: stats.max,
            set_mean: stats.mean,
            set_median: stats.median,
            levenshtein: levenshtein(&mention.surface, &c.entity.label),
            jaccard: jaccard_distance(&mention.surface, &c.entity.label),
            type_match: type_match(mention.etype, c.entity.etype),
            delta_time: delta_time(mention.date, c.entity.date),
        })
        .collect())
}

/// A labeled row of the offline feature dump.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub mention_id: String,
    pub entity_id: u64,
    pub features: [f64; N_FEATURES],
    pub label: u8,
}

/// TSV with header `mention_id entity_id <nine features> label`.
pub fn feature_dump_to_tsv(rows: &[FeatureRow]) -> String {
    let mut out = String::from("mention_id\tentity_id");
    for name in FEATURE_NAMES {
        out.push('\t');
        out.push_str(name);
    }
    out.push_str("\tlabel\n");
    for r in rows {
        let _ = write!(out, "{}\t{}", r.mention_id, r.entity_id);
        for v in r.features {
            let _ = write!(out, "\t{v}");
        }
        let _ = writeln!(out, "\t{}", r.label);
    }
    out
}

pub fn feature_dump_from_tsv(tsv: &str) -> Result<Vec<FeatureRow>, FeatureError> {
    let mut lines = tsv.lines().enumerate();
    let expected_header = feature_dump_to_tsv(&[]);
    match lines.next() {
        Some((_, h)) if h == expected_header.trim_end() => {}
        _ => {
            return Err(FeatureError::Parse {
                line: 1,
                message: "header must name mention_id, entity_id, the nine features and label in order".into(),
            })
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let err = |message: String| FeatureError::Parse { line: i + 1, message };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != N_FEATURES + 3 {
            return Err(err(format!("expected {} columns, got {}", N_FEATURES + 3, cols.len())));
        }
        let entity_id = cols[1].parse().map_err(|e| err(format!("entity_id: {e}")))?;
        let mut features = [0f64; N_FEATURES];
        for (j, f) in features.iter_mut().enumerate() {
            *f = cols[2 + j]
                .parse()
                .map_err(|e| err(format!("{}: {e}", FEATURE_NAMES[j])))?;
        }
        let label = match cols[N_FEATURES + 2] {
            "0" => 0,
            "1" => 1,
            other => return Err(err(format!("label must be 0 or 1, got {other:?}"))),
        };
        rows.push(FeatureRow {
            mention_id: cols[0].to_string(),
            entity_id,
            features,
            label,
        });
    }
    Ok(rows)
}

pub fn write_feature_dump(path: impl AsRef<Path>, rows: &[FeatureRow]) -> Result<(), FeatureError> {
    let path = path.as_ref();
    fs::write(path, feature_dump_to_tsv(rows)).map_err(|source| FeatureError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_feature_dump(path: impl AsRef<Path>) -> Result<Vec<FeatureRow>, FeatureError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| FeatureError::Io {
        path: path.display().to_string(),
        source,
    })?;
    feature_dump_from_tsv(&text)
}

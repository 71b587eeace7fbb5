//! Domain primitives shared by every stage: entity types and Wikidata identifiers.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// The four coarse entity types used throughout the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EntityType {
    #[serde(rename = "PER")]
    Per,
    #[serde(rename = "LOC")]
    Loc,
    #[serde(rename = "ORG")]
    Org,
    #[serde(rename = "WORK")]
    Work,
}

impl EntityType {
    pub const ALL: [EntityType; 4] = [EntityType::Per, EntityType::Loc, EntityType::Org, EntityType::Work];

    pub fn code(self) -> &'static str {
        match self {
            EntityType::Per => "PER",
            EntityType::Loc => "LOC",
            EntityType::Org => "ORG",
            EntityType::Work => "WORK",
        }
    }

    /// Lowercase English name, as shown to an LLM adjudicator.
    pub fn long_name(self) -> &'static str {
        match self {
            EntityType::Per => "person",
            EntityType::Loc => "location",
            EntityType::Org => "organization",
            EntityType::Work => "work",
        }
    }
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("not an entity type code: {0:?}")]
pub struct UnknownTypeCode(pub String);

impl FromStr for EntityType {
    type Err = UnknownTypeCode;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "PER" => Ok(EntityType::Per),
            "LOC" => Ok(EntityType::Loc),
            "ORG" => Ok(EntityType::Org),
            "WORK" => Ok(EntityType::Work),
            other => Err(UnknownTypeCode(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed Wikidata id {0:?} (expected Q followed by digits)")]
pub struct InvalidQid(pub String);

/// A Wikidata item identifier such as `Q778445`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Qid(String);

impl Qid {
    pub fn new(s: impl Into<String>) -> Result<Self, InvalidQid> {
        let s = s.into();
        if Self::is_valid(&s) {
            Ok(Qid(s))
        } else {
            Err(InvalidQid(s))
        }
    }

    pub fn is_valid(s: &str) -> bool {
        let mut chars = s.chars();
        chars.next() == Some('Q') && s.len() > 1 && chars.all(|c| c.is_ascii_digit())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Qid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for Qid {
    type Err = InvalidQid;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Qid::new(s)
    }
}

impl Serialize for Qid {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Qid {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Qid::new(s).map_err(serde::de::Error::custom)
    }
}

/// Literal used on the wire for a mention without a knowledge-base entry.
pub const NIL: &str = "NIL";

/// Serde adapter for `Option<Qid>` encoded as a QID string or the literal `"NIL"`.
pub mod qid_or_nil {
    use super::{Qid, NIL};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &Option<Qid>, serializer: S) -> Result<S::Ok, S::Error> {
        match value {
            Some(q) => serializer.serialize_str(q.as_str()),
            None => serializer.serialize_str(NIL),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<Option<Qid>, D::Error> {
        let s = String::deserialize(deserializer)?;
        if s == NIL {
            Ok(None)
        } else {
            Qid::new(s).map(Some).map_err(serde::de::Error::custom)
        }
    }
}

/// Renders an optional QID the way prediction files do.
pub fn display_decision(decision: Option<&Qid>) -> &str {
    decision.map(Qid::as_str).unwrap_or(NIL)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qid_validation() {
        assert!(Qid::new("Q5").is_ok());
        assert!(Qid::new("Q778445").is_ok());
        assert!(Qid::new("Q").is_err());
        assert!(Qid::new("q5").is_err());
        assert!(Qid::new("Q5a").is_err());
        assert!(Qid::new("NIL").is_err());
    }

    #[test]
    fn type_codes_round_trip() {
        for t in EntityType::ALL {
            assert_eq!(t.code().parse::<EntityType>().unwrap(), t);
            let json = serde_json::to_string(&t).unwrap();
            assert_eq!(json, format!("\"{}\"", t.code()));
        }
        assert!("per".parse::<EntityType>().is_err());
    }
}

//! Knowledge-base lookup table: maps each indexed entity to its Wikidata id,
//! coarse type (via a subclass closure) and a single earliest date.
//!
//! The persisted store is one file:
//!
//! ```text
//! "DLKB" | u32 version | u64 count | count x (u64 entity_id, u64 offset, u32 len) | blob
//! ```
//!
//! All integers are little-endian, index entries are sorted by `entity_id`, and each
//! blob slice is a JSON-encoded [`EntityRecord`].

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{EntityType, Qid};

const MAGIC: &[u8; 4] = b"DLKB";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;
const INDEX_ENTRY_LEN: usize = 20;

/// Time-valued Wikidata properties considered when dating an entity.
pub const TIME_PROPERTIES: [&str; 15] = [
    "P569", "P571", "P1619", "P1191", "P10135", "P577", "P575", "P1317", "P7124", "P10673", "P9448", "P6949", "P729",
    "P2031", "P585",
];

/// Open interval of plausible entity years.
pub const MIN_YEAR_EXCLUSIVE: i64 = -10_000;
pub const MAX_YEAR_EXCLUSIVE: i64 = 3_000;

#[derive(Debug, Error)]
pub enum KbError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("duplicate entity_id {0}")]
    DuplicateEntity(u64),
    #[error("entity {entity_id}: {message}")]
    InvalidEntity { entity_id: u64, message: String },
    #[error("entity {0} missing from lookup table (index and lookup out of sync?)")]
    MissingEntity(u64),
    #[error("corrupt lookup store: {0}")]
    Corrupt(String),
}

/// Root classes per coarse type, as used for the Italian Wikipedia build.
pub fn default_roots() -> BTreeMap<EntityType, Vec<Qid>> {
    let q = |s: &str| Qid::new(s).expect("static QID");
    BTreeMap::from([
        (EntityType::Per, vec![q("Q215627"), q("Q95074"), q("Q97498056")]),
        (EntityType::Org, vec![q("Q895526"), q("Q16334295"), q("Q14623646")]),
        (EntityType::Loc, vec![q("Q3895768"), q("Q27096213"), q("Q58416391")]),
        (EntityType::Work, vec![q("Q17537576"), q("Q15621286")]),
    ])
}

/// Class → type assignment with every multi-type class removed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassClosure {
    mapping: BTreeMap<Qid, EntityType>,
}

impl ClassClosure {
    pub fn get(&self, class: &Qid) -> Option<EntityType> {
        self.mapping.get(class).copied()
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Qid, EntityType)> {
        self.mapping.iter().map(|(q, t)| (q, *t))
    }
}

/// Transitive subclass closure below each type's roots.
///
/// `edges` are `(child, parent)` pairs from P279 and may contain cycles. Every root must
/// occur somewhere in the edge list.
pub fn build_class_closure(
    edges: &[(Qid, Qid)],
    roots: &BTreeMap<EntityType, Vec<Qid>>,
) -> Result<ClassClosure, KbError> {
    let mut children: HashMap<&Qid, Vec<&Qid>> = HashMap::new();
    for (child, parent) in edges {
        children.entry(parent).or_default().push(child);
        children.entry(child).or_default();
    }

    let mut reached: BTreeMap<&Qid, BTreeSet<EntityType>> = BTreeMap::new();
    for (&etype, type_roots) in roots {
        let mut visited: BTreeSet<&Qid> = BTreeSet::new();
        let mut queue: VecDeque<&Qid> = VecDeque::new();
        for root in type_roots {
            if !children.contains_key(root) {
                return Err(KbError::Config(format!("root class {root} for {etype} does not occur in the class graph")));
            }
            if visited.insert(root) {
                queue.push_back(root);
            }
        }
        while let Some(class) = queue.pop_front() {
            reached.entry(class).or_default().insert(etype);
            for &c in &children[class] {
                if visited.insert(c) {
                    queue.push_back(c);
                }
            }
        }
    }

    let mut dropped = 0usize;
    let mapping = reached
        .into_iter()
        .filter_map(|(class, types)| {
            if types.len() == 1 {
                Some((class.clone(), *types.iter().next().expect("one type")))
            } else {
                dropped += 1;
                None
            }
        })
        .collect();
    if dropped > 0 {
        log::info!("class closure: dropped {dropped} classes reachable from several types");
    }
    Ok(ClassClosure { mapping })
}

/// Earliest year among facts whose property is one of [`TIME_PROPERTIES`].
pub fn select_date<P: AsRef<str>>(facts: &[(P, i64)]) -> Option<i64> {
    facts
        .iter()
        .filter(|(p, _)| TIME_PROPERTIES.contains(&p.as_ref()))
        .map(|(_, y)| *y)
        .min()
}

/// One row of the entity dump.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityDumpRow {
    pub entity_id: u64,
    pub wikipedia_title: String,
    pub qid: Qid,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub entity_id: u64,
    pub wikipedia_title: String,
    pub qid: Qid,
    pub label: String,
    /// `None` when none of the entity's classes fall inside the closure.
    #[serde(rename = "type")]
    pub etype: Option<EntityType>,
    pub date: Option<i32>,
}

/// A retrieved candidate joined with its knowledge-base attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateTuple {
    pub entity: EntityRecord,
    pub l2: f64,
}

#[derive(Debug, Clone, Deserialize)]
struct TypeFactRow {
    entity_id: u64,
    classes: Vec<Qid>,
}

#[derive(Debug, Clone, Deserialize)]
struct DateFactRow {
    entity_id: u64,
    facts: Vec<(String, i64)>,
}

/// Immutable, file-backed entity table.
#[derive(Debug, Clone)]
pub struct LookupStore {
    bytes: Vec<u8>,
    offsets: HashMap<u64, (usize, usize)>,
}

/// Assembles the lookup table from the dumps.
///
/// The type of an entity is the type of its first class (in dump order) that the closure
/// knows; disagreeing later classes only produce a warning.
pub fn build_lookup(
    entities: &[EntityDumpRow],
    closure: &ClassClosure,
    type_facts: &HashMap<u64, Vec<Qid>>,
    date_facts: &HashMap<u64, Vec<(String, i64)>>,
) -> Result<LookupStore, KbError> {
    let mut records: BTreeMap<u64, EntityRecord> = BTreeMap::new();
    for row in entities {
        if row.label.is_empty() {
            return Err(KbError::InvalidEntity {
                entity_id: row.entity_id,
                message: "empty label".into(),
            });
        }
        let etype = type_facts.get(&row.entity_id).and_then(|classes| {
            let mut typed = classes.iter().filter_map(|c| closure.get(c));
            let first = typed.next()?;
            if typed.any(|t| t != first) {
                log::warn!(
                    "entity {} ({}) has classes of several types; using first: {first}",
                    row.entity_id,
                    row.qid
                );
            }
            Some(first)
        });
        let date = date_facts.get(&row.entity_id).and_then(|facts| {
            let admissible: Vec<(&str, i64)> = facts
                .iter()
                .filter(|(p, y)| {
                    let ok = *y > MIN_YEAR_EXCLUSIVE && *y < MAX_YEAR_EXCLUSIVE;
                    if !ok {
                        log::warn!("entity {}: ignoring implausible year {y} for {p}", row.entity_id);
                    }
                    ok
                })
                .map(|(p, y)| (p.as_str(), *y))
                .collect();
            select_date(&admissible).map(|y| y as i32)
        });
        let record = EntityRecord {
            entity_id: row.entity_id,
            wikipedia_title: row.wikipedia_title.clone(),
            qid: row.qid.clone(),
            label: row.label.clone(),
            etype,
            date,
        };
        if records.insert(row.entity_id, record).is_some() {
            return Err(KbError::DuplicateEntity(row.entity_id));
        }
    }
    LookupStore::from_bytes(encode_store(records.values()))
}

fn encode_store<'a>(records: impl ExactSizeIterator<Item = &'a EntityRecord>) -> Vec<u8> {
    let count = records.len();
    let mut index = Vec::with_capacity(count * INDEX_ENTRY_LEN);
    let mut blob = Vec::new();
    for r in records {
        let encoded = serde_json::to_vec(r).expect("record serializes");
        index.extend_from_slice(&r.entity_id.to_le_bytes());
        index.extend_from_slice(&(blob.len() as u64).to_le_bytes());
        index.extend_from_slice(&(encoded.len() as u32).to_le_bytes());
        blob.extend_from_slice(&encoded);
    }
    let mut out = Vec::with_capacity(HEADER_LEN + index.len() + blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(count as u64).to_le_bytes());
    out.extend_from_slice(&index);
    out.extend_from_slice(&blob);
    out
}

fn read_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

fn read_u64(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().expect("8 bytes"))
}

impl LookupStore {
    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self, KbError> {
        if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
            return Err(KbError::Corrupt("bad magic".into()));
        }
        let version = read_u32(&bytes, 4);
        if version != VERSION {
            return Err(KbError::Corrupt(format!("unsupported version {version}")));
        }
        let count = usize::try_from(read_u64(&bytes, 8)).map_err(|_| KbError::Corrupt("count overflow".into()))?;
        let blob_start = count
            .checked_mul(INDEX_ENTRY_LEN)
            .and_then(|n| n.checked_add(HEADER_LEN))
            .filter(|&s| s <= bytes.len())
            .ok_or_else(|| KbError::Corrupt("index truncated".into()))?;
        let mut offsets = HashMap::with_capacity(count);
        let mut prev: Option<u64> = None;
        for i in 0..count {
            let at = HEADER_LEN + i * INDEX_ENTRY_LEN;
            let id = read_u64(&bytes, at);
            let off = read_u64(&bytes, at + 8) as usize;
            let len = read_u32(&bytes, at + 16) as usize;
            if prev.is_some_and(|p| p >= id) {
                return Err(KbError::Corrupt(format!("index not strictly sorted at entry {i}")));
            }
            prev = Some(id);
            let start = blob_start + off;
            if start.checked_add(len).is_none_or(|e| e > bytes.len()) {
                return Err(KbError::Corrupt(format!("record for entity {id} out of bounds")));
            }
            offsets.insert(id, (start, len));
        }
        Ok(LookupStore { bytes, offsets })
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self, KbError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| KbError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(bytes)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), KbError> {
        let path = path.as_ref();
        fs::write(path, &self.bytes).map_err(|source| KbError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn get(&self, entity_id: u64) -> Result<EntityRecord, KbError> {
        let &(start, len) = self.offsets.get(&entity_id).ok_or(KbError::MissingEntity(entity_id))?;
        serde_json::from_slice(&self.bytes[start..start + len])
            .map_err(|e| KbError::Corrupt(format!("record for entity {entity_id}: {e}")))
    }

    /// Joins the stored record with a retrieval distance.
    pub fn lookup(&self, entity_id: u64, l2: f64) -> Result<CandidateTuple, KbError> {
        Ok(CandidateTuple {
            entity: self.get(entity_id)?,
            l2,
        })
    }

    /// Entity ids in ascending order.
    pub fn entity_ids(&self) -> Vec<u64> {
        let mut ids: Vec<u64> = self.offsets.keys().copied().collect();
        ids.sort_unstable();
        ids
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> KbError + '_ {
    move |source| KbError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, KbError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| KbError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn read_entity_dump(path: impl AsRef<Path>) -> Result<Vec<EntityDumpRow>, KbError> {
    read_jsonl(path.as_ref())
}

/// Reads `child<TAB>parent` lines.
pub fn read_class_edges(path: impl AsRef<Path>) -> Result<Vec<(Qid, Qid)>, KbError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut edges = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| KbError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message,
        };
        let (child, parent) = line
            .split_once('\t')
            .ok_or_else(|| parse_err("expected child<TAB>parent".into()))?;
        let child = Qid::new(child.trim()).map_err(|e| parse_err(e.to_string()))?;
        let parent = Qid::new(parent.trim()).map_err(|e| parse_err(e.to_string()))?;
        edges.push((child, parent));
    }
    Ok(edges)
}

pub fn read_type_facts(path: impl AsRef<Path>) -> Result<HashMap<u64, Vec<Qid>>, KbError> {
    let rows: Vec<TypeFactRow> = read_jsonl(path.as_ref())?;
    let mut out: HashMap<u64, Vec<Qid>> = HashMap::new();
    for r in rows {
        out.entry(r.entity_id).or_default().extend(r.classes);
    }
    Ok(out)
}

pub fn read_date_facts(path: impl AsRef<Path>) -> Result<HashMap<u64, Vec<(String, i64)>>, KbError> {
    let rows: Vec<DateFactRow> = read_jsonl(path.as_ref())?;
    let mut out: HashMap<u64, Vec<(String, i64)>> = HashMap::new();
    for r in rows {
        out.entry(r.entity_id).or_default().extend(r.facts);
    }
    Ok(out)
}

//! Deterministic synthetic knowledge base and corpus.
//!
//! Ten surname families of five entities each: two people born 150 years apart, an
//! undated place named after the family, a dated organization and a dated work.
//! Surname-only person mentions can only be resolved by the document date; NIL mentions
//! use unknown surnames or dates that fit neither person.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::corpus::{dataset_to_json, extract_mentions, Annotation, Document, Mention, TypeLabel};
use crate::gbt::Hyperparams;
use crate::index::{EmbeddingMatrix, HashProvider};
use crate::kb::{build_class_closure, build_lookup, default_roots, EntityDumpRow, LookupStore};
use crate::linker::{LinkError, Retriever};
use crate::types::{EntityType, Qid};

pub const EMBEDDING_DIM: usize = 64;
pub const CONTEXT_WINDOW: usize = 6;
pub const BLOCK_SIZE: usize = 10;

const SURNAMES: [&str; 10] = [
    "Amendola", "Moro", "Manzoni", "Verga", "Carducci", "Pascoli", "Mazzini", "Crispi", "Deledda", "Serao",
];
const FIRST_NAMES: [&str; 10] = [
    "Giovanni", "Giorgio", "Aldo", "Alessandro", "Giosue", "Giuseppe", "Francesco", "Grazia", "Matilde", "Luigi",
];
const UNKNOWN_SURNAMES: [&str; 12] = [
    "Bianchi", "Rossi", "Ferri", "Galli", "Conti", "Marini", "Greco", "Lombardi", "Moretti", "Barbieri", "Fontana",
    "Santoro",
];
const FILLER: [&str; 16] = [
    "ieri", "il", "discorso", "fu", "letto", "davanti", "al", "consiglio", "nel", "giornale", "si", "parlò", "molto",
    "con", "grande", "interesse",
];

const PERSON_CLASS: &str = "Q5";
const PLACE_CLASS: &str = "Q515";
const ORG_CLASS: &str = "Q4830453";
const WORK_CLASS: &str = "Q7725634";
const TOP_CLASS: &str = "Q35120";

fn q(s: &str) -> Qid {
    Qid::new(s).expect("static QID")
}

/// Family slots: 0 and 1 are people, then place, organization, work.
const SLOTS: usize = 5;

#[derive(Debug, Clone)]
pub struct SyntheticKb {
    pub entities: Vec<EntityDumpRow>,
    pub class_edges: Vec<(Qid, Qid)>,
    pub type_facts: HashMap<u64, Vec<Qid>>,
    pub date_facts: HashMap<u64, Vec<(String, i64)>>,
    /// Birth year of the elder person per family.
    base_years: Vec<i32>,
}

impl SyntheticKb {
    fn entity_id(family: usize, slot: usize) -> u64 {
        (family * SLOTS + slot + 1) as u64
    }

    fn row(&self, family: usize, slot: usize) -> &EntityDumpRow {
        &self.entities[family * SLOTS + slot]
    }

    pub fn lookup(&self) -> LookupStore {
        let closure = build_class_closure(&self.class_edges, &default_roots()).expect("fixture graph covers roots");
        build_lookup(&self.entities, &closure, &self.type_facts, &self.date_facts).expect("fixture ids are unique")
    }

    /// Entity vectors: the hashed embedding of each label.
    pub fn embeddings(&self, provider: &HashProvider) -> EmbeddingMatrix {
        let mut m = EmbeddingMatrix::new(provider.dim);
        for e in &self.entities {
            m.push(e.entity_id, &provider.embed_text(&e.label)).expect("finite unit rows");
        }
        m
    }
}

fn build_kb(rng: &mut ChaCha8Rng) -> SyntheticKb {
    let mut entities = Vec::new();
    let mut type_facts = HashMap::new();
    let mut date_facts = HashMap::new();
    let mut base_years = Vec::new();
    for (f, surname) in SURNAMES.iter().enumerate() {
        let base = 1700 + 10 * f as i32 + rng.gen_range(0..20);
        base_years.push(base);
        let labels = [
            format!("{} {surname}", FIRST_NAMES[f]),
            format!("{} {surname}", FIRST_NAMES[(f + 3) % FIRST_NAMES.len()]),
            surname.to_string(),
            format!("Società {surname}"),
            format!("Cronache {surname}"),
        ];
        let classes = [PERSON_CLASS, PERSON_CLASS, PLACE_CLASS, ORG_CLASS, WORK_CLASS];
        let dates: [Option<(&str, i32)>; SLOTS] = [
            Some(("P569", base)),
            Some(("P569", base + 150)),
            None,
            Some(("P571", base + 100)),
            Some(("P577", base + 60)),
        ];
        for slot in 0..SLOTS {
            let id = SyntheticKb::entity_id(f, slot);
            entities.push(EntityDumpRow {
                entity_id: id,
                wikipedia_title: labels[slot].clone(),
                qid: q(&format!("Q{}", 900_000 + id)),
                label: labels[slot].clone(),
            });
            type_facts.insert(id, vec![q(classes[slot])]);
            if let Some((prop, year)) = dates[slot] {
                date_facts.insert(id, vec![(prop.to_string(), i64::from(year))]);
            }
        }
    }
    let mut class_edges = vec![
        (q(PERSON_CLASS), q("Q215627")),
        (q(PLACE_CLASS), q("Q3895768")),
        (q(ORG_CLASS), q("Q895526")),
        (q(WORK_CLASS), q("Q17537576")),
    ];
    for roots in default_roots().values() {
        for r in roots {
            class_edges.push((r.clone(), q(TOP_CLASS)));
        }
    }
    SyntheticKb {
        entities,
        class_edges,
        type_facts,
        date_facts,
        base_years,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    PersonFull(usize),
    PersonSurname(usize),
    Place,
    Organization,
    Work,
    NilUnknown(EntityType),
    NilOffPeriod,
}

impl Kind {
    fn is_nil(self) -> bool {
        matches!(self, Kind::NilUnknown(_) | Kind::NilOffPeriod)
    }
}

fn linkable_kind(rng: &mut ChaCha8Rng) -> Kind {
    match rng.gen_range(0..100) {
        0..=24 => Kind::PersonFull(rng.gen_range(0..2)),
        25..=54 => Kind::PersonSurname(rng.gen_range(0..2)),
        55..=69 => Kind::Place,
        70..=84 => Kind::Organization,
        _ => Kind::Work,
    }
}

fn nil_kind(rng: &mut ChaCha8Rng) -> Kind {
    if rng.gen_bool(0.5) {
        Kind::NilOffPeriod
    } else {
        Kind::NilUnknown([EntityType::Per, EntityType::Loc, EntityType::Org][rng.gen_range(0..3)])
    }
}

fn filler(rng: &mut ChaCha8Rng, n: usize) -> String {
    (0..n).map(|_| *FILLER.choose(rng).expect("filler")).collect::<Vec<_>>().join(" ")
}

fn make_document(kb: &SyntheticKb, id: String, family: usize, kind: Kind, rng: &mut ChaCha8Rng) -> Document {
    let base = kb.base_years[family];
    let surname = SURNAMES[family];
    let (surface, etype, date, gold) = match kind {
        Kind::PersonFull(slot) => {
            let born = base + 150 * slot as i32;
            let row = kb.row(family, slot);
            (row.label.clone(), EntityType::Per, born + rng.gen_range(20..=60), Some(row.qid.clone()))
        }
        Kind::PersonSurname(slot) => {
            let born = base + 150 * slot as i32;
            (surname.to_string(), EntityType::Per, born + rng.gen_range(20..=60), Some(kb.row(family, slot).qid.clone()))
        }
        Kind::Place => (surname.to_string(), EntityType::Loc, base + rng.gen_range(0..=250), Some(kb.row(family, 2).qid.clone())),
        Kind::Organization => {
            let row = kb.row(family, 3);
            (row.label.clone(), EntityType::Org, base + 100 + rng.gen_range(10..=60), Some(row.qid.clone()))
        }
        Kind::Work => {
            let row = kb.row(family, 4);
            (row.label.clone(), EntityType::Work, base + 60 + rng.gen_range(5..=40), Some(row.qid.clone()))
        }
        Kind::NilUnknown(etype) => {
            let name = UNKNOWN_SURNAMES[rng.gen_range(0..UNKNOWN_SURNAMES.len())];
            let surface = if etype == EntityType::Org { format!("Società {name}") } else { name.to_string() };
            (surface, etype, base + rng.gen_range(20..=200), None)
        }
        Kind::NilOffPeriod => {
            let date = if rng.gen_bool(0.5) {
                base - rng.gen_range(30..=80)
            } else {
                base + rng.gen_range(95..=120)
            };
            (surname.to_string(), EntityType::Per, date, None)
        }
    };
    let left = filler(rng, 4);
    let right = filler(rng, 4);
    let start = left.chars().count() + 1;
    let end = start + surface.chars().count();
    Document {
        id,
        date,
        text: format!("{left} {surface} {right}"),
        annotations: vec![Annotation {
            start,
            end,
            surface,
            etype: TypeLabel::Coarse(etype),
            gold,
        }],
    }
}

fn make_split(kb: &SyntheticKb, prefix: &str, kinds: &[(usize, Kind)], rng: &mut ChaCha8Rng) -> Vec<Document> {
    kinds
        .iter()
        .enumerate()
        .map(|(i, &(family, kind))| make_document(kb, format!("{prefix}-{i:04}"), family, kind, rng))
        .collect()
}

/// The complete fixture: KB, vectors and three document splits.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub kb: SyntheticKb,
    pub provider: HashProvider,
    pub lookup: LookupStore,
    pub index: EmbeddingMatrix,
    pub train: Vec<Document>,
    pub dev: Vec<Document>,
    pub test: Vec<Document>,
}

/// Paths written by [`Fixture::write_to`].
#[derive(Debug, Clone)]
pub struct FixturePaths {
    pub entities: PathBuf,
    pub class_edges: PathBuf,
    pub type_facts: PathBuf,
    pub date_facts: PathBuf,
    pub embeddings: PathBuf,
    pub train: PathBuf,
    pub dev: PathBuf,
    pub test: PathBuf,
}

impl Fixture {
    /// 150 training, 10 development and 40 test mentions (30 linkable, 10 NIL).
    pub fn build(seed: u64) -> Fixture {
        Self::with_sizes(seed, 150, 10, 30, 10)
    }

    pub fn with_sizes(seed: u64, n_train: usize, n_dev: usize, test_linkable: usize, test_nil: usize) -> Fixture {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kb = build_kb(&mut rng);
        let families = SURNAMES.len();

        let train_kinds: Vec<(usize, Kind)> = (0..n_train)
            .map(|_| {
                let kind = if rng.gen_bool(0.2) { nil_kind(&mut rng) } else { linkable_kind(&mut rng) };
                (rng.gen_range(0..families), kind)
            })
            .collect();
        let dev_nil = (n_dev * 3).div_ceil(10);
        let dev_kinds: Vec<(usize, Kind)> = (0..n_dev)
            .map(|i| {
                let kind = if i < dev_nil { nil_kind(&mut rng) } else { linkable_kind(&mut rng) };
                (rng.gen_range(0..families), kind)
            })
            .collect();
        let mut test_kinds: Vec<(usize, Kind)> = (0..test_linkable)
            .map(|i| (i % families, linkable_kind(&mut rng)))
            .collect();
        for i in 0..test_nil {
            let kind = if i % 2 == 0 { Kind::NilOffPeriod } else { nil_kind(&mut rng) };
            test_kinds.push((i % families, kind));
        }
        test_kinds.shuffle(&mut rng);
        debug_assert_eq!(test_kinds.iter().filter(|(_, k)| k.is_nil()).count(), test_nil);

        let train = make_split(&kb, "train", &train_kinds, &mut rng);
        let dev = make_split(&kb, "dev", &dev_kinds, &mut rng);
        let test = make_split(&kb, "test", &test_kinds, &mut rng);
        let provider = HashProvider::new(EMBEDDING_DIM);
        let lookup = kb.lookup();
        let index = kb.embeddings(&provider);
        Fixture {
            kb,
            provider,
            lookup,
            index,
            train,
            dev,
            test,
        }
    }

    pub fn mentions(docs: &[Document]) -> Vec<Mention> {
        extract_mentions(docs, CONTEXT_WINDOW).expect("fixture uses coarse types")
    }

    pub fn retriever(&self, k: usize) -> Result<Retriever, LinkError> {
        Retriever::new(
            Arc::new(self.provider),
            Arc::new(self.index.clone()),
            Arc::new(self.lookup.clone()),
            k,
        )
    }

    /// Small, fast configuration suited to the fixture's size.
    pub fn hyperparams() -> Hyperparams {
        Hyperparams {
            learning_rate: 0.1,
            max_depth: 4,
            min_samples_leaf: 0.005,
            min_samples_split: 0.01,
            n_estimators: 150,
            block_size: BLOCK_SIZE,
            c_neg_size: 6,
        }
    }

    /// Writes dumps, entity vectors and datasets in the on-disk formats the CLI reads.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> std::io::Result<FixturePaths> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let paths = FixturePaths {
            entities: dir.join("entities.jsonl"),
            class_edges: dir.join("class_edges.tsv"),
            type_facts: dir.join("type_facts.jsonl"),
            date_facts: dir.join("date_facts.jsonl"),
            embeddings: dir.join("entities.emb"),
            train: dir.join("train.json"),
            dev: dir.join("dev.json"),
            test: dir.join("test.json"),
        };
        let mut entities = String::new();
        for e in &self.kb.entities {
            entities.push_str(&serde_json::to_string(e).expect("row serializes"));
            entities.push('\n');
        }
        fs::write(&paths.entities, entities)?;
        let edges: String = self.kb.class_edges.iter().map(|(c, p)| format!("{c}\t{p}\n")).collect();
        fs::write(&paths.class_edges, edges)?;
        let sorted_types: BTreeMap<_, _> = self.kb.type_facts.iter().collect();
        let types: String = sorted_types
            .iter()
            .map(|(id, classes)| format!("{}\n", json!({"entity_id": id, "classes": classes})))
            .collect();
        fs::write(&paths.type_facts, types)?;
        let sorted_dates: BTreeMap<_, _> = self.kb.date_facts.iter().collect();
        let dates: String = sorted_dates
            .iter()
            .map(|(id, facts)| format!("{}\n", json!({"entity_id": id, "facts": facts})))
            .collect();
        fs::write(&paths.date_facts, dates)?;
        self.index.write(&paths.embeddings).map_err(std::io::Error::other)?;
        fs::write(&paths.train, dataset_to_json(&self.train))?;
        fs::write(&paths.dev, dataset_to_json(&self.dev))?;
        fs::write(&paths.test, dataset_to_json(&self.test))?;
        Ok(paths)
    }
}

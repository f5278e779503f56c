use std::collections::HashMap;
use std::fs;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::tagging::{Span, SpanTriple};

/// A triple as annotated: entity surface strings and a relation name.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "(String, String, String)", into = "(String, String, String)")]
pub struct Triple {
    pub subject: String,
    pub relation: String,
    pub object: String,
}

impl Triple {
    pub fn new(
        subject: impl Into<String>,
        relation: impl Into<String>,
        object: impl Into<String>,
    ) -> Self {
        Self {
            subject: subject.into(),
            relation: relation.into(),
            object: object.into(),
        }
    }
}

impl From<(String, String, String)> for Triple {
    fn from((subject, relation, object): (String, String, String)) -> Self {
        Self {
            subject,
            relation,
            object,
        }
    }
}

impl From<Triple> for (String, String, String) {
    fn from(t: Triple) -> Self {
        (t.subject, t.relation, t.object)
    }
}

/// One line of a corpus or prediction file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub text: String,
    pub triple_list: Vec<Triple>,
}

/// Ordered relation names with dense ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct RelationSet {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for RelationSet {
    fn from(names: Vec<String>) -> Self {
        let mut set = Self::default();
        for n in names {
            set.insert(&n);
        }
        set
    }
}

impl From<RelationSet> for Vec<String> {
    fn from(set: RelationSet) -> Self {
        set.names
    }
}

impl RelationSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Self {
        let mut set = Self::default();
        for n in names {
            set.insert(n.as_ref());
        }
        set
    }

    /// Returns the id of `name`, adding it if new.
    pub fn insert(&mut self, name: &str) -> usize {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len();
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// A gold triple whose entities were located in the tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldTriple {
    pub triple: Triple,
    pub spans: SpanTriple,
}

/// A tokenized sentence with its annotation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub text: String,
    /// Whitespace tokens, truncated to the maximum length.
    pub tokens: Vec<String>,
    /// Triples exactly as annotated, including any that could not be located.
    pub triples: Vec<Triple>,
    /// Located triples; the supervision and evaluation reference.
    pub gold: Vec<GoldTriple>,
}

impl Sentence {
    pub fn span_triples(&self) -> Vec<SpanTriple> {
        self.gold.iter().map(|g| g.spans).collect()
    }

    pub fn gold_triples(&self) -> Vec<Triple> {
        self.gold.iter().map(|g| g.triple.clone()).collect()
    }

    pub fn surface(&self, span: Span) -> String {
        self.tokens[span.start..=span.end].join(" ")
    }

    pub fn to_record(&self) -> Record {
        Record {
            text: self.text.clone(),
            triple_list: self.triples.clone(),
        }
    }
}

/// What to do with relation names missing from the relation set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UnknownRelation {
    Error,
    #[default]
    Extend,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadOptions {
    pub max_len: usize,
    pub unknown_relation: UnknownRelation,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            max_len: 100,
            unknown_relation: UnknownRelation::Extend,
        }
    }
}

/// Loaded sentences plus alignment diagnostics.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub sentences: Vec<Sentence>,
    /// Triples whose entities could not be located after truncation.
    pub dropped_triples: usize,
    pub truncated_sentences: usize,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn records(&self) -> Vec<Record> {
        self.sentences.iter().map(Sentence::to_record).collect()
    }
}

/// Position of the first occurrence of `entity`'s tokens in `tokens`.
pub fn locate(tokens: &[String], entity: &str) -> Option<Span> {
    let needle: Vec<&str> = entity.split_whitespace().collect();
    if needle.is_empty() || needle.len() > tokens.len() {
        return None;
    }
    (0..=tokens.len() - needle.len())
        .find(|&i| {
            needle
                .iter()
                .zip(&tokens[i..])
                .all(|(a, b)| *a == b.as_str())
        })
        .map(|i| Span::new(i, i + needle.len() - 1))
}

/// Tokenizes a record and aligns its triples. Returns the sentence and the
/// number of triples that could not be located. Relation names must already
/// be in `relations`.
pub fn align_record(
    record: &Record,
    relations: &RelationSet,
    max_len: usize,
) -> Result<(Sentence, usize)> {
    let mut tokens: Vec<String> = record.text.split_whitespace().map(str::to_string).collect();
    tokens.truncate(max_len);
    let mut gold = Vec::with_capacity(record.triple_list.len());
    let mut dropped = 0;
    for t in &record.triple_list {
        let relation = relations.id(&t.relation).ok_or_else(|| {
            Error::Config(format!("relation `{}` not in relation set", t.relation))
        })?;
        match (locate(&tokens, &t.subject), locate(&tokens, &t.object)) {
            (Some(subject), Some(object)) => gold.push(GoldTriple {
                triple: t.clone(),
                spans: SpanTriple {
                    subject,
                    relation,
                    object,
                },
            }),
            _ => dropped += 1,
        }
    }
    Ok((
        Sentence {
            text: record.text.clone(),
            tokens,
            triples: record.triple_list.clone(),
            gold,
        },
        dropped,
    ))
}

/// Parses either a JSON array of records or one record per line.
pub fn parse_records(content: &str, origin: &str) -> Result<Vec<Record>> {
    if content.trim_start().starts_with('[') {
        return serde_json::from_str(content).map_err(|e| Error::MalformedRecord {
            path: origin.to_string(),
            line: e.line(),
            msg: e.to_string(),
        });
    }
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(line).map_err(|e| Error::MalformedRecord {
            path: origin.to_string(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_records(path: &Path) -> Result<Vec<Record>> {
    let content = fs::read_to_string(path)?;
    parse_records(&content, &path.display().to_string())
}

/// Builds sentences from records, growing or checking `relations`.
pub fn corpus_from_records(
    records: &[Record],
    relations: &mut RelationSet,
    options: LoadOptions,
    origin: &str,
) -> Result<Corpus> {
    let mut corpus = Corpus::default();
    for (i, rec) in records.iter().enumerate() {
        for t in &rec.triple_list {
            if relations.id(&t.relation).is_none() {
                match options.unknown_relation {
                    UnknownRelation::Extend => {
                        relations.insert(&t.relation);
                    }
                    UnknownRelation::Error => {
                        return Err(Error::UnknownRelation {
                            path: origin.to_string(),
                            line: i + 1,
                            name: t.relation.clone(),
                        })
                    }
                }
            }
        }
        if rec.text.split_whitespace().count() > options.max_len {
            corpus.truncated_sentences += 1;
        }
        let (sentence, dropped) = align_record(rec, relations, options.max_len)?;
        if dropped > 0 {
            warn!(
                "{origin}:{}: dropped {dropped} triple(s) with unlocatable entities",
                i + 1
            );
        }
        corpus.dropped_triples += dropped;
        corpus.sentences.push(sentence);
    }
    Ok(corpus)
}

pub fn load_corpus(
    path: &Path,
    relations: &mut RelationSet,
    options: LoadOptions,
) -> Result<Corpus> {
    let records = read_records(path)?;
    corpus_from_records(&records, relations, options, &path.display().to_string())
}

/// One JSON record per line.
pub fn records_to_jsonl(records: &[Record]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn save_records(path: &Path, records: &[Record]) -> Result<()> {
    write_atomic(path, records_to_jsonl(records)?.as_bytes())
}

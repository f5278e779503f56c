//! Cascade inference: subjects first, then every relation's object tagger
//! for each detected subject.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{Record, Sentence, Triple};
use crate::error::Result;
use crate::model::Model;
use crate::tagging::{match_spans, subject_vector, tag_object, tag_subject, Span, TagProbs};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedTriple {
    pub subject: Span,
    pub subject_text: String,
    pub relation: usize,
    pub relation_name: String,
    pub object: Span,
    pub object_text: String,
    /// Which detected subject (in span order) produced the triple.
    pub subject_index: usize,
}

impl ExtractedTriple {
    pub fn to_triple(&self) -> Triple {
        Triple::new(&self.subject_text, &self.relation_name, &self.object_text)
    }
}

/// One object-tagger invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectPass {
    pub subject_index: usize,
    pub relation: usize,
    pub probs: TagProbs,
    pub objects: Vec<Span>,
}

/// Everything computed while extracting from one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionTrace {
    pub subject_probs: TagProbs,
    pub subjects: Vec<Span>,
    pub passes: Vec<ObjectPass>,
    pub triples: Vec<ExtractedTriple>,
}

/// Runs the cascade and records every intermediate tag field.
pub fn extract_with_trace<S: AsRef<str>>(
    tokens: &[S],
    model: &Model,
    threshold: f64,
) -> Result<ExtractionTrace> {
    let mut trace = ExtractionTrace {
        subject_probs: TagProbs {
            start: vec![],
            end: vec![],
        },
        subjects: vec![],
        passes: vec![],
        triples: vec![],
    };
    if tokens.is_empty() {
        return Ok(trace);
    }
    let tokens: Vec<&str> = tokens.iter().map(AsRef::as_ref).collect();
    let h = model.encode(&model.token_ids(&tokens))?;
    let subject_tagger = model.subject_tagger()?;
    let object_taggers = model.object_taggers()?;

    trace.subject_probs = tag_subject(&h, &subject_tagger)?;
    let subject_tags = trace.subject_probs.binarize(threshold);
    trace.subjects = match_spans(&subject_tags.start, &subject_tags.end);

    let surface = |s: Span| tokens[s.start..=s.end].join(" ");
    let mut seen: HashSet<(String, usize, String)> = HashSet::new();
    for (k, &subject) in trace.subjects.iter().enumerate() {
        let v_sub = subject_vector(&h, subject)?;
        for r in 0..model.num_relations() {
            let probs = tag_object(&h, v_sub.view(), r, &object_taggers)?;
            let tags = probs.binarize(threshold);
            let objects = match_spans(&tags.start, &tags.end);
            for &object in &objects {
                let key = (surface(subject), r, surface(object));
                if seen.insert(key.clone()) {
                    trace.triples.push(ExtractedTriple {
                        subject,
                        subject_text: key.0,
                        relation: r,
                        relation_name: model.relations.name(r).unwrap_or_default().to_string(),
                        object,
                        object_text: key.2,
                        subject_index: k,
                    });
                }
            }
            trace.passes.push(ObjectPass {
                subject_index: k,
                relation: r,
                probs,
                objects,
            });
        }
    }
    Ok(trace)
}

/// Triples extracted from `tokens`, deduplicated on surface strings and relation.
pub fn extract_triples<S: AsRef<str>>(
    tokens: &[S],
    model: &Model,
    threshold: f64,
) -> Result<Vec<ExtractedTriple>> {
    Ok(extract_with_trace(tokens, model, threshold)?.triples)
}

/// Predicted triples for every sentence, in corpus order.
pub fn predict_corpus(
    model: &Model,
    sentences: &[Sentence],
    threshold: f64,
) -> Result<Vec<Vec<Triple>>> {
    sentences
        .par_iter()
        .map(|s| {
            extract_triples(&s.tokens, model, threshold)
                .map(|ts| ts.iter().map(ExtractedTriple::to_triple).collect())
        })
        .collect()
}

/// Prediction records in the corpus file shape.
pub fn prediction_records(sentences: &[Sentence], predictions: &[Vec<Triple>]) -> Vec<Record> {
    sentences
        .iter()
        .zip(predictions)
        .map(|(s, p)| Record {
            text: s.text.clone(),
            triple_list: p.clone(),
        })
        .collect()
}

//! Binary start/end taggers, span decoding and the span log-likelihood.
//!
//! Every tagger is stored as a `d x 2` weight matrix and a `1 x 2` bias,
//! column 0 scoring span starts and column 1 span ends. The subject tagger
//! lives under the `subject` prefix and the tagger of relation `r` under
//! `object.{r}`; no weights are shared between them.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, ParamStore, Tensor, BCE_CLAMP};
use crate::encoder::{EncodedSentence, ParamInit};
use crate::error::{Error, Result};

pub const SUBJECT_PREFIX: &str = "subject";

pub fn object_prefix(relation: usize) -> String {
    format!("object.{relation}")
}

/// Inclusive token span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Triple over token spans with a dense relation id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SpanTriple {
    pub subject: Span,
    pub relation: usize,
    pub object: Span,
}

/// One start/end classifier pair: `σ(w_start·x + b_start)`, `σ(w_end·x + b_end)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryTagger {
    pub w_start: Array1<f64>,
    pub b_start: f64,
    pub w_end: Array1<f64>,
    pub b_end: f64,
}

pub type SubjectTaggerParams = BinaryTagger;

/// One tagger per relation id.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectTaggerParams {
    pub relations: Vec<BinaryTagger>,
}

impl BinaryTagger {
    pub fn zeros(d: usize) -> Self {
        Self {
            w_start: Array1::zeros(d),
            b_start: 0.0,
            w_end: Array1::zeros(d),
            b_end: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.w_start.len()
    }

    pub fn from_store(store: &ParamStore, prefix: &str) -> Result<Self> {
        let w = store
            .get(&format!("{prefix}.w"))
            .ok_or_else(|| Error::Config(format!("missing parameter {prefix}.w")))?;
        let b = store
            .get(&format!("{prefix}.b"))
            .ok_or_else(|| Error::Config(format!("missing parameter {prefix}.b")))?;
        if w.ncols() != 2 || b.dim() != (1, 2) {
            return Err(Error::Shape(format!(
                "tagger {prefix} has shapes {:?}, {:?}",
                w.dim(),
                b.dim()
            )));
        }
        Ok(Self {
            w_start: w.column(0).to_owned(),
            b_start: b[[0, 0]],
            w_end: w.column(1).to_owned(),
            b_end: b[[0, 1]],
        })
    }

    pub fn write_to(&self, store: &mut ParamStore, prefix: &str) {
        let d = self.dim();
        let mut w = Array2::zeros((d, 2));
        w.column_mut(0).assign(&self.w_start);
        w.column_mut(1).assign(&self.w_end);
        store.insert(format!("{prefix}.w"), w);
        store.insert(
            format!("{prefix}.b"),
            ndarray::array![[self.b_start, self.b_end]],
        );
    }

    fn probs_for(&self, rows: impl Iterator<Item = Array1<f64>>) -> TagProbs {
        let mut start = Vec::new();
        let mut end = Vec::new();
        for x in rows {
            start.push(sigmoid(self.w_start.dot(&x) + self.b_start));
            end.push(sigmoid(self.w_end.dot(&x) + self.b_end));
        }
        TagProbs { start, end }
    }
}

impl ObjectTaggerParams {
    pub fn from_store(store: &ParamStore, relations: usize) -> Result<Self> {
        (0..relations)
            .map(|r| BinaryTagger::from_store(store, &object_prefix(r)))
            .collect::<Result<Vec<_>>>()
            .map(|relations| Self { relations })
    }
}

/// Parameter shapes for the subject tagger and `relations` object taggers.
pub fn head_param_shapes(d: usize, relations: usize) -> Vec<(String, (usize, usize), ParamInit)> {
    let mut out = Vec::with_capacity(2 + 2 * relations);
    let prefixes =
        std::iter::once(SUBJECT_PREFIX.to_string()).chain((0..relations).map(object_prefix));
    for p in prefixes {
        out.push((format!("{p}.w"), (d, 2), ParamInit::Uniform));
        out.push((format!("{p}.b"), (1, 2), ParamInit::Uniform));
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Start/end probabilities for every token.
#[derive(Debug, Clone, PartialEq)]
pub struct TagProbs {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
}

impl TagProbs {
    pub fn len(&self) -> usize {
        self.start.len()
    }

    pub fn is_empty(&self) -> bool {
        self.start.is_empty()
    }

    pub fn binarize(&self, threshold: f64) -> TagField {
        TagField {
            start: binarize(&self.start, threshold),
            end: binarize(&self.end, threshold),
        }
    }

    /// From an `L x 2` probability matrix (start column, end column).
    pub fn from_matrix(m: &Tensor) -> Self {
        Self {
            start: m.column(0).to_vec(),
            end: m.column(1).to_vec(),
        }
    }
}

/// Binary start/end tags for every token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagField {
    pub start: Vec<bool>,
    pub end: Vec<bool>,
}

impl TagField {
    pub fn zeros(len: usize) -> Self {
        Self {
            start: vec![false; len],
            end: vec![false; len],
        }
    }

    pub fn len(&self) -> usize {
        self.start.len()
    }

    pub fn is_empty(&self) -> bool {
        self.start.is_empty()
    }

    pub fn mark(&mut self, span: Span) {
        self.start[span.start] = true;
        self.end[span.end] = true;
    }

    pub fn is_null(&self) -> bool {
        !self.start.iter().chain(&self.end).any(|&b| b)
    }

    pub fn spans(&self) -> Vec<Span> {
        match_spans(&self.start, &self.end)
    }

    /// `L x 2` matrix of 0/1 targets (start column, end column).
    pub fn to_matrix(&self) -> Tensor {
        Array2::from_shape_fn((self.len(), 2), |(i, c)| {
            let on = if c == 0 { self.start[i] } else { self.end[i] };
            if on {
                1.0
            } else {
                0.0
            }
        })
    }
}

fn check_dim(h: &EncodedSentence, d: usize) -> Result<()> {
    if h.dim() != d {
        return Err(Error::Shape(format!(
            "token vectors have width {}, tagger expects {d}",
            h.dim()
        )));
    }
    Ok(())
}

/// Subject start/end probabilities from the token vectors alone.
pub fn tag_subject(h: &EncodedSentence, params: &SubjectTaggerParams) -> Result<TagProbs> {
    check_dim(h, params.dim())?;
    Ok(params.probs_for(h.hidden.rows().into_iter().map(|r| r.to_owned())))
}

/// Object probabilities for relation `relation`, conditioned on `v_sub`
/// by adding it to every token vector.
pub fn tag_object(
    h: &EncodedSentence,
    v_sub: ArrayView1<'_, f64>,
    relation: usize,
    params: &ObjectTaggerParams,
) -> Result<TagProbs> {
    let tagger = params
        .relations
        .get(relation)
        .ok_or(Error::UnknownRelationId(relation))?;
    check_dim(h, tagger.dim())?;
    if v_sub.len() != tagger.dim() {
        return Err(Error::Shape(format!(
            "subject vector has width {}, tagger expects {}",
            v_sub.len(),
            tagger.dim()
        )));
    }
    Ok(tagger.probs_for(h.hidden.rows().into_iter().map(|r| &r + &v_sub)))
}

/// `tag_i = p_i > threshold`.
pub fn binarize(probs: &[f64], threshold: f64) -> Vec<bool> {
    probs.iter().map(|&p| p > threshold).collect()
}

/// Pairs every start with the nearest end at the same or a later position.
///
/// Ends may be shared by several starts; starts with no end at or after
/// them are dropped. Output is ordered by start.
pub fn match_spans(starts: &[bool], ends: &[bool]) -> Vec<Span> {
    assert_eq!(
        starts.len(),
        ends.len(),
        "start and end tags differ in length"
    );
    let mut next_end = vec![None; starts.len()];
    let mut nearest = None;
    for i in (0..ends.len()).rev() {
        if ends[i] {
            nearest = Some(i);
        }
        next_end[i] = nearest;
    }
    starts
        .iter()
        .zip(next_end)
        .enumerate()
        .filter_map(|(i, (&s, e))| if s { e.map(|e| Span::new(i, e)) } else { None })
        .collect()
}

/// Mean of the token vectors `span.start..=span.end`.
pub fn subject_vector(h: &EncodedSentence, span: Span) -> Result<Array1<f64>> {
    if span.start > span.end || span.end >= h.len() {
        return Err(Error::Shape(format!(
            "span {}..={} outside a {}-token sentence",
            span.start,
            span.end,
            h.len()
        )));
    }
    let rows = h.hidden.slice(ndarray::s![span.start..=span.end, ..]);
    let mut acc = Array1::zeros(h.dim());
    for r in rows.rows() {
        acc += &r;
    }
    Ok(acc / span.len() as f64)
}

/// Gold object tags of one subject, one field per relation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubjectGold {
    pub subject: Span,
    pub objects: Vec<TagField>,
}

/// Supervision for one sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldTags {
    pub subject: TagField,
    /// Distinct gold subjects in span order.
    pub per_subject: Vec<SubjectGold>,
}

/// Object tags for `subject`: relations it leads get their objects marked,
/// every other relation gets the all-zero null field.
pub fn gold_object_tags(
    len: usize,
    subject: Span,
    triples: &[SpanTriple],
    relations: usize,
) -> Result<Vec<TagField>> {
    let mut fields = vec![TagField::zeros(len); relations];
    for t in triples.iter().filter(|t| t.subject == subject) {
        let field = fields
            .get_mut(t.relation)
            .ok_or(Error::UnknownRelationId(t.relation))?;
        check_span(t.object, len)?;
        field.mark(t.object);
    }
    Ok(fields)
}

fn check_span(span: Span, len: usize) -> Result<()> {
    if span.start > span.end || span.end >= len {
        return Err(Error::Shape(format!(
            "span {}..={} outside {len} tokens",
            span.start, span.end
        )));
    }
    Ok(())
}

pub fn build_gold_tags(len: usize, triples: &[SpanTriple], relations: usize) -> Result<GoldTags> {
    let mut subject = TagField::zeros(len);
    let subjects: BTreeSet<Span> = triples.iter().map(|t| t.subject).collect();
    for &s in &subjects {
        check_span(s, len)?;
        subject.mark(s);
    }
    let per_subject = subjects
        .into_iter()
        .map(|s| {
            Ok(SubjectGold {
                subject: s,
                objects: gold_object_tags(len, s, triples, relations)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GoldTags {
        subject,
        per_subject,
    })
}

/// `Σ_t Σ_i [y ln p + (1-y) ln(1-p)]` over start and end, with clamped `p`.
pub fn span_log_likelihood(probs: &TagProbs, gold: &TagField) -> Result<f64> {
    if probs.start.len() != gold.start.len() || probs.end.len() != gold.end.len() {
        return Err(Error::LengthMismatch(format!(
            "{} probabilities vs {} tags",
            probs.len(),
            gold.len()
        )));
    }
    let term = |p: f64, y: bool| {
        let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        if y {
            p.ln()
        } else {
            (1.0 - p).ln()
        }
    };
    let mut total = 0.0;
    for i in 0..probs.len() {
        total += term(probs.start[i], gold.start[i]);
        total += term(probs.end[i], gold.end[i]);
    }
    Ok(total)
}

/// Adds `σ(h·W + b)` for the tagger under `prefix`, an `L x 2` node.
pub fn tagger_graph(g: &mut Graph<'_>, h: NodeId, prefix: &str) -> Result<NodeId> {
    let w = g.param(&format!("{prefix}.w"))?;
    let b = g.param(&format!("{prefix}.b"))?;
    let logits = g.affine(h, w, b)?;
    Ok(g.sigmoid(logits)?)
}

/// Adds the averaged subject vector, a `1 x d` node.
pub fn subject_vector_graph(g: &mut Graph<'_>, h: NodeId, span: Span) -> Result<NodeId> {
    Ok(g.mean_rows(h, span.start, span.end)?)
}

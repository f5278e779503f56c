//! Triple matching, micro-averaged scores and breakdown reports.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{categorize_overlap, CountBucket, Triple};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    /// Relation and the first token of each entity.
    #[default]
    Partial,
    /// Relation and both full entity strings.
    Exact,
}

impl FromStr for MatchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "partial" => Ok(Self::Partial),
            "exact" => Ok(Self::Exact),
            other => Err(Error::Config(format!(
                "unknown match mode `{other}` (expected partial or exact)"
            ))),
        }
    }
}

impl fmt::Display for MatchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Partial => "partial",
            Self::Exact => "exact",
        })
    }
}

/// First whitespace-delimited token of an entity string.
pub fn head(entity: &str) -> &str {
    entity.split_whitespace().next().unwrap_or("")
}

fn entity_key(entity: &str, mode: MatchMode) -> &str {
    match mode {
        MatchMode::Partial => head(entity),
        MatchMode::Exact => entity,
    }
}

pub fn entities_match(a: &str, b: &str, mode: MatchMode) -> bool {
    entity_key(a, mode) == entity_key(b, mode)
}

pub fn triple_match(pred: &Triple, gold: &Triple, mode: MatchMode) -> bool {
    pred.relation == gold.relation
        && entities_match(&pred.subject, &gold.subject, mode)
        && entities_match(&pred.object, &gold.object, mode)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl std::ops::AddAssign for Counts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: Counts,
}

impl Scores {
    pub fn from_counts(counts: Counts) -> Self {
        let precision = ratio(counts.tp, counts.tp + counts.fp);
        let recall = ratio(counts.tp, counts.tp + counts.fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            precision,
            recall,
            f1,
            counts,
        }
    }
}

fn dedup(triples: &[Triple]) -> Vec<&Triple> {
    let mut seen = HashSet::new();
    triples.iter().filter(|t| seen.insert(*t)).collect()
}

/// Greedy one-to-one matching of one sentence's predictions against its gold
/// triples. Both sides are deduplicated first.
pub fn count_sentence(pred: &[Triple], gold: &[Triple], mode: MatchMode) -> Counts {
    let pred = dedup(pred);
    let gold = dedup(gold);
    let mut used = vec![false; gold.len()];
    let mut tp = 0;
    for p in &pred {
        if let Some(j) = (0..gold.len()).find(|&j| !used[j] && triple_match(p, gold[j], mode)) {
            used[j] = true;
            tp += 1;
        }
    }
    Counts {
        tp,
        fp: pred.len() - tp,
        fn_: gold.len() - tp,
    }
}

fn check_aligned(preds: usize, golds: usize) -> Result<()> {
    if preds != golds {
        return Err(Error::LengthMismatch(format!(
            "{preds} prediction sentences against {golds} gold sentences"
        )));
    }
    Ok(())
}

fn sum_counts(counts: impl Iterator<Item = Counts>) -> Counts {
    counts.fold(Counts::default(), |mut acc, c| {
        acc += c;
        acc
    })
}

/// Per-sentence counts, in corpus order.
pub fn sentence_counts(
    preds: &[Vec<Triple>],
    golds: &[Vec<Triple>],
    mode: MatchMode,
) -> Result<Vec<Counts>> {
    check_aligned(preds.len(), golds.len())?;
    Ok(preds
        .par_iter()
        .zip(golds.par_iter())
        .map(|(p, g)| count_sentence(p, g, mode))
        .collect())
}

pub fn score_micro(
    preds: &[Vec<Triple>],
    golds: &[Vec<Triple>],
    mode: MatchMode,
) -> Result<Scores> {
    let counts = sentence_counts(preds, golds, mode)?;
    Ok(Scores::from_counts(sum_counts(counts.into_iter())))
}

/// Scores restricted to sentence subsets; `None` marks an empty subset.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Breakdowns {
    pub normal: Option<Scores>,
    pub epo: Option<Scores>,
    pub seo: Option<Scores>,
    pub zero_triples: Option<Scores>,
    pub by_count: BTreeMap<CountBucket, Option<Scores>>,
}

fn subset_scores(counts: &[Counts], keep: impl Fn(usize) -> bool) -> Option<Scores> {
    let mut any = false;
    let total = sum_counts(
        counts
            .iter()
            .enumerate()
            .filter(|(i, _)| keep(*i))
            .map(|(_, c)| {
                any = true;
                *c
            }),
    );
    any.then(|| Scores::from_counts(total))
}

/// Overlap categories and triple-count buckets are taken from the gold side.
pub fn score_breakdowns(
    preds: &[Vec<Triple>],
    golds: &[Vec<Triple>],
    mode: MatchMode,
) -> Result<Breakdowns> {
    let counts = sentence_counts(preds, golds, mode)?;
    let flags: Vec<_> = golds.iter().map(|g| categorize_overlap(g)).collect();
    let sizes: Vec<_> = golds.iter().map(|g| dedup(g).len()).collect();
    let mut out = Breakdowns {
        normal: subset_scores(&counts, |i| flags[i].normal),
        epo: subset_scores(&counts, |i| flags[i].epo),
        seo: subset_scores(&counts, |i| flags[i].seo),
        zero_triples: subset_scores(&counts, |i| sizes[i] == 0),
        by_count: BTreeMap::new(),
    };
    for b in CountBucket::ALL {
        out.by_count.insert(
            b,
            subset_scores(&counts, |i| CountBucket::of(sizes[i]) == Some(b)),
        );
    }
    Ok(out)
}

/// Projection of a triple onto a subset of its elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Element {
    E1,
    E2,
    R,
    E1R,
    RE2,
    E1E2,
    E1RE2,
}

impl Element {
    pub const ALL: [Element; 7] = [
        Self::E1,
        Self::E2,
        Self::R,
        Self::E1R,
        Self::RE2,
        Self::E1E2,
        Self::E1RE2,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Self::E1 => "E1",
            Self::E2 => "E2",
            Self::R => "R",
            Self::E1R => "(E1,R)",
            Self::RE2 => "(R,E2)",
            Self::E1E2 => "(E1,E2)",
            Self::E1RE2 => "(E1,R,E2)",
        }
    }

    fn project(self, t: &Triple, mode: MatchMode) -> [Option<&str>; 3] {
        let s = Some(entity_key(&t.subject, mode));
        let r = Some(t.relation.as_str());
        let o = Some(entity_key(&t.object, mode));
        match self {
            Self::E1 => [s, None, None],
            Self::E2 => [None, None, o],
            Self::R => [None, r, None],
            Self::E1R => [s, r, None],
            Self::RE2 => [None, r, o],
            Self::E1E2 => [s, None, o],
            Self::E1RE2 => [s, r, o],
        }
    }
}

/// Counts for one sentence under one projection. Projections are compared
/// as multisets of the deduplicated triples, so a pattern's TP is never
/// below the full-triple TP.
pub fn count_projection(
    pred: &[Triple],
    gold: &[Triple],
    element: Element,
    mode: MatchMode,
) -> Counts {
    let mut remaining: BTreeMap<[Option<&str>; 3], usize> = BTreeMap::new();
    let gold = dedup(gold);
    for g in &gold {
        *remaining.entry(element.project(g, mode)).or_default() += 1;
    }
    let pred = dedup(pred);
    let mut tp = 0;
    for p in &pred {
        if let Some(n) = remaining.get_mut(&element.project(p, mode)) {
            if *n > 0 {
                *n -= 1;
                tp += 1;
            }
        }
    }
    Counts {
        tp,
        fp: pred.len() - tp,
        fn_: gold.len() - tp,
    }
}

pub fn element_analysis(
    preds: &[Vec<Triple>],
    golds: &[Vec<Triple>],
    mode: MatchMode,
) -> Result<Vec<(Element, Scores)>> {
    check_aligned(preds.len(), golds.len())?;
    Ok(Element::ALL
        .iter()
        .map(|&e| {
            let total = sum_counts(
                preds
                    .iter()
                    .zip(golds)
                    .map(|(p, g)| count_projection(p, g, e, mode)),
            );
            (e, Scores::from_counts(total))
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementRow {
    pub element: String,
    pub scores: Scores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: MatchMode,
    pub sentences: usize,
    pub overall: Scores,
    pub breakdowns: Breakdowns,
    pub elements: Vec<ElementRow>,
}

pub fn evaluate(
    preds: &[Vec<Triple>],
    golds: &[Vec<Triple>],
    mode: MatchMode,
) -> Result<EvalReport> {
    Ok(EvalReport {
        mode,
        sentences: golds.len(),
        overall: score_micro(preds, golds, mode)?,
        breakdowns: score_breakdowns(preds, golds, mode)?,
        elements: element_analysis(preds, golds, mode)?
            .into_iter()
            .map(|(e, scores)| ElementRow {
                element: e.label().to_string(),
                scores,
            })
            .collect(),
    })
}

fn row(out: &mut String, name: &str, s: Option<&Scores>) {
    match s {
        Some(s) => out.push_str(&format!(
            "{name:<12} {:>9.4} {:>9.4} {:>9.4} {:>7} {:>7} {:>7}\n",
            s.precision, s.recall, s.f1, s.counts.tp, s.counts.fp, s.counts.fn_
        )),
        None => out.push_str(&format!(
            "{name:<12} {:>9} {:>9} {:>9} {:>7} {:>7} {:>7}\n",
            "-", "-", "-", "-", "-", "-"
        )),
    }
}

impl EvalReport {
    pub fn render_table(&self) -> String {
        let mut out = format!("{} match, {} sentences\n\n", self.mode, self.sentences);
        let header = format!(
            "{:<12} {:>9} {:>9} {:>9} {:>7} {:>7} {:>7}\n",
            "", "Prec", "Rec", "F1", "TP", "FP", "FN"
        );
        out.push_str(&header);
        row(&mut out, "overall", Some(&self.overall));
        out.push('\n');
        let b = &self.breakdowns;
        row(&mut out, "Normal", b.normal.as_ref());
        row(&mut out, "EPO", b.epo.as_ref());
        row(&mut out, "SEO", b.seo.as_ref());
        out.push('\n');
        row(&mut out, "N=0", b.zero_triples.as_ref());
        for (k, v) in &b.by_count {
            row(&mut out, k.label(), v.as_ref());
        }
        out.push('\n');
        for e in &self.elements {
            row(&mut out, &e.element, Some(&e.scores));
        }
        out
    }
}

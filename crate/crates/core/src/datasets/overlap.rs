use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::corpus::{Sentence, Triple};

/// Overlap pattern of a sentence's triples. EPO and SEO may both hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OverlapFlags {
    pub normal: bool,
    pub epo: bool,
    pub seo: bool,
}

fn unordered(t: &Triple) -> (&str, &str) {
    let (a, b) = (t.subject.as_str(), t.object.as_str());
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Classifies a sentence by how its triples share entities.
///
/// EPO: two entries share the same unordered entity pair. SEO: two entries
/// share at least one entity without having the same pair. Entries are
/// compared by list position, so a duplicated triple counts as EPO.
pub fn categorize_overlap(triples: &[Triple]) -> OverlapFlags {
    let mut epo = false;
    let mut seo = false;
    for (i, a) in triples.iter().enumerate() {
        let pa = unordered(a);
        for b in &triples[i + 1..] {
            let pb = unordered(b);
            if pa == pb {
                epo = true;
            } else if pa.0 == pb.0 || pa.0 == pb.1 || pa.1 == pb.0 || pa.1 == pb.1 {
                seo = true;
            }
        }
        if epo && seo {
            break;
        }
    }
    OverlapFlags {
        normal: !(epo || seo),
        epo,
        seo,
    }
}

/// Triple-count bucket: 1, 2, 3, 4 or 5 and more.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CountBucket {
    One,
    Two,
    Three,
    Four,
    FiveOrMore,
}

impl CountBucket {
    pub const ALL: [CountBucket; 5] = [
        Self::One,
        Self::Two,
        Self::Three,
        Self::Four,
        Self::FiveOrMore,
    ];

    /// `None` for zero triples.
    pub fn of(count: usize) -> Option<Self> {
        match count {
            0 => None,
            1 => Some(Self::One),
            2 => Some(Self::Two),
            3 => Some(Self::Three),
            4 => Some(Self::Four),
            _ => Some(Self::FiveOrMore),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::One => "N=1",
            Self::Two => "N=2",
            Self::Three => "N=3",
            Self::Four => "N=4",
            Self::FiveOrMore => "N>=5",
        }
    }
}

impl fmt::Display for CountBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Sentence indices grouped by triple count.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Buckets {
    pub zero: Vec<usize>,
    pub by_count: BTreeMap<CountBucket, Vec<usize>>,
}

impl Buckets {
    pub fn get(&self, b: CountBucket) -> &[usize] {
        self.by_count.get(&b).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Buckets by the number of triples reported by `count`.
pub fn bucket_by_count<T>(items: &[T], count: impl Fn(&T) -> usize) -> Buckets {
    let mut out = Buckets::default();
    for (i, item) in items.iter().enumerate() {
        match CountBucket::of(count(item)) {
            None => out.zero.push(i),
            Some(b) => out.by_count.entry(b).or_default().push(i),
        }
    }
    out
}

/// Buckets sentences by their annotated triple count.
pub fn bucket_by_triple_count(corpus: &[Sentence]) -> Buckets {
    bucket_by_count(corpus, |s| s.triples.len())
}

/// Corpus statistics in the shape of the usual overlap table.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub normal: usize,
    pub epo: usize,
    pub seo: usize,
    pub all: usize,
    pub triples: usize,
    pub zero_triples: usize,
    pub by_count: BTreeMap<CountBucket, usize>,
    pub relations: BTreeMap<String, usize>,
}

/// Counts over annotated triples; a sentence may count as both EPO and SEO.
pub fn corpus_stats(corpus: &[Sentence]) -> CorpusStats {
    let mut stats = CorpusStats::default();
    for b in CountBucket::ALL {
        stats.by_count.insert(b, 0);
    }
    for s in corpus {
        let flags = categorize_overlap(&s.triples);
        stats.normal += flags.normal as usize;
        stats.epo += flags.epo as usize;
        stats.seo += flags.seo as usize;
        stats.all += 1;
        stats.triples += s.triples.len();
        match CountBucket::of(s.triples.len()) {
            None => stats.zero_triples += 1,
            Some(b) => *stats.by_count.entry(b).or_default() += 1,
        }
        for t in &s.triples {
            *stats.relations.entry(t.relation.clone()).or_default() += 1;
        }
    }
    stats
}

impl CorpusStats {
    /// Aligned text table: category rows, then triple-count rows.
    pub fn render_table(&self, title: &str) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<10} {:>10}\n", "Category", title));
        out.push_str(&format!("{:-<10} {:->10}\n", "", ""));
        for (name, v) in [
            ("Normal", self.normal),
            ("EPO", self.epo),
            ("SEO", self.seo),
        ] {
            out.push_str(&format!("{name:<10} {v:>10}\n"));
        }
        out.push_str(&format!("{:-<10} {:->10}\n", "", ""));
        out.push_str(&format!("{:<10} {:>10}\n", "ALL", self.all));
        out.push('\n');
        out.push_str(&format!("{:<10} {:>10}\n", "N=0", self.zero_triples));
        for (b, v) in &self.by_count {
            out.push_str(&format!("{:<10} {:>10}\n", b.label(), v));
        }
        out.push_str(&format!("{:<10} {:>10}\n", "triples", self.triples));
        out.push_str(&format!(
            "{:<10} {:>10}\n",
            "relations",
            self.relations.len()
        ));
        out
    }
}

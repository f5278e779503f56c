//! Template-generated corpora with a controlled overlap mix.
//!
//! Every sentence is built from disjoint entity words, so each entity string
//! occurs exactly once and is located at its intended position. For every
//! relation, the objects it links to different subjects in one sentence are
//! either identical sets or absent; taggers that condition on the subject by
//! a uniform shift can represent every generated sentence.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corpus::{Record, Triple};
use crate::error::{Error, Result};

const FUNCTION_WORDS: [&str; 8] = [
    ".",
    ",",
    "and",
    "which",
    "both",
    "also",
    "today",
    "reportedly",
];

const TRIGGERS: [(&str, &str); 8] = [
    ("founded", "Founded"),
    ("advises", "Advises"),
    ("visited", "Visited"),
    ("owns", "Owns"),
    ("joined", "Joined"),
    ("married", "Married"),
    ("sponsors", "Sponsors"),
    ("trains", "Trains"),
];

const NAME_WORDS: [&str; 96] = [
    "Alder",
    "Birch",
    "Cedar",
    "Dover",
    "Elgin",
    "Fenwick",
    "Garrow",
    "Hollis",
    "Ingram",
    "Jarvis",
    "Kendal",
    "Lowry",
    "Marlow",
    "Norris",
    "Orwell",
    "Pryce",
    "Quinton",
    "Radley",
    "Selby",
    "Thorne",
    "Upton",
    "Vance",
    "Whitby",
    "Yardley",
    "Ashby",
    "Barlow",
    "Corwin",
    "Darby",
    "Ellery",
    "Farley",
    "Gilmore",
    "Harlan",
    "Irving",
    "Jessop",
    "Kirby",
    "Lyle",
    "Merritt",
    "Nolan",
    "Oakley",
    "Pembroke",
    "Quill",
    "Rowan",
    "Sutton",
    "Tarrant",
    "Ulmer",
    "Verity",
    "Walden",
    "Yates",
    "Abbott",
    "Bexley",
    "Calder",
    "Denholm",
    "Easton",
    "Fairfax",
    "Grover",
    "Hadley",
    "Ives",
    "Joplin",
    "Keswick",
    "Lindell",
    "Mercer",
    "Newell",
    "Olney",
    "Prescott",
    "Redford",
    "Stanton",
    "Tolliver",
    "Underhill",
    "Vickers",
    "Wardell",
    "Aldous",
    "Brampton",
    "Chester",
    "Dunmore",
    "Everett",
    "Fulton",
    "Granger",
    "Halsey",
    "Ingleby",
    "Jennings",
    "Kimble",
    "Langley",
    "Morley",
    "Netherby",
    "Osborne",
    "Pickering",
    "Ramsey",
    "Sheldon",
    "Talbot",
    "Ulverston",
    "Vernon",
    "Winslow",
    "Ackroyd",
    "Bramley",
    "Carlisle",
    "Dorset",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapMix {
    pub normal: f64,
    pub epo: f64,
    pub seo: f64,
}

impl OverlapMix {
    pub fn new(normal: f64, epo: f64, seo: f64) -> Self {
        Self { normal, epo, seo }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Upper bound on distinct words used.
    pub vocab_size: usize,
    pub relations: usize,
    pub sentences: usize,
    pub mix: OverlapMix,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            vocab_size: 80,
            relations: 4,
            sentences: 200,
            mix: OverlapMix::new(0.4, 0.3, 0.3),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Normal,
    Epo,
    Seo,
}

/// Generated records with the category each was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub records: Vec<Record>,
    pub categories: Vec<Category>,
    pub relation_names: Vec<String>,
}

/// Relation names and trigger words used for `count` relations.
pub fn relation_inventory(count: usize) -> Vec<(String, String)> {
    (0..count)
        .map(|i| match TRIGGERS.get(i) {
            Some((t, n)) => (t.to_string(), n.to_string()),
            None => (format!("verb{i}"), format!("Rel{i}")),
        })
        .collect()
}

struct Generator<'a> {
    rng: ChaCha8Rng,
    names: &'a [&'a str],
    triggers: Vec<(String, String)>,
}

impl Generator<'_> {
    /// Draws `n` entities with pairwise disjoint words; some span two words.
    fn entities(&mut self, n: usize) -> Vec<String> {
        let words: Vec<&str> = self
            .names
            .choose_multiple(&mut self.rng, 2 * n)
            .copied()
            .collect();
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            if self.rng.random_bool(0.35) {
                out.push(format!("{} {}", words[2 * i], words[2 * i + 1]));
            } else {
                out.push(words[2 * i].to_string());
            }
        }
        out
    }

    fn relation(&mut self) -> usize {
        self.rng.random_range(0..self.triggers.len())
    }

    fn distinct_relations(&mut self, k: usize) -> Vec<usize> {
        let mut ids: Vec<usize> = (0..self.triggers.len()).collect();
        ids.shuffle(&mut self.rng);
        ids.truncate(k);
        ids
    }

    fn trig(&self, r: usize) -> &str {
        &self.triggers[r].0
    }

    fn rel(&self, r: usize) -> &str {
        &self.triggers[r].1
    }

    fn sentence(&mut self, category: Category) -> Record {
        let mut words: Vec<String> = Vec::new();
        if self.rng.random_bool(0.25) {
            let lead = if self.rng.random_bool(0.5) {
                "today"
            } else {
                "reportedly"
            };
            words.push(lead.into());
            words.push(",".into());
        }
        let mut triples = Vec::new();
        let n_rel = self.triggers.len();
        let push = |words: &mut Vec<String>, s: &str| words.extend(s.split(' ').map(String::from));

        match category {
            Category::Normal => {
                if n_rel >= 2 && self.rng.random_bool(0.4) {
                    let e = self.entities(4);
                    let r = self.distinct_relations(2);
                    push(
                        &mut words,
                        &format!(
                            "{} {} {} and {} {} {}",
                            e[0],
                            self.trig(r[0]),
                            e[1],
                            e[2],
                            self.trig(r[1]),
                            e[3]
                        ),
                    );
                    triples.push(Triple::new(&e[0], self.rel(r[0]), &e[1]));
                    triples.push(Triple::new(&e[2], self.rel(r[1]), &e[3]));
                } else {
                    let e = self.entities(2);
                    let r = self.relation();
                    push(&mut words, &format!("{} {} {}", e[0], self.trig(r), e[1]));
                    triples.push(Triple::new(&e[0], self.rel(r), &e[1]));
                }
            }
            Category::Epo => {
                let e = self.entities(2);
                if n_rel >= 3 && self.rng.random_bool(0.3) {
                    let r = self.distinct_relations(3);
                    push(
                        &mut words,
                        &format!(
                            "{} {} , {} and {} {}",
                            e[0],
                            self.trig(r[0]),
                            self.trig(r[1]),
                            self.trig(r[2]),
                            e[1]
                        ),
                    );
                    for &ri in &r {
                        triples.push(Triple::new(&e[0], self.rel(ri), &e[1]));
                    }
                } else {
                    let r = self.distinct_relations(2);
                    push(
                        &mut words,
                        &format!(
                            "{} {} and {} {}",
                            e[0],
                            self.trig(r[0]),
                            self.trig(r[1]),
                            e[1]
                        ),
                    );
                    for &ri in &r {
                        triples.push(Triple::new(&e[0], self.rel(ri), &e[1]));
                    }
                }
            }
            Category::Seo => {
                let choice = if n_rel >= 2 {
                    self.rng.random_range(0..3)
                } else {
                    self.rng.random_range(0..2)
                };
                match choice {
                    0 => {
                        // shared subject
                        let e = self.entities(3);
                        let (r0, r1) = (self.relation(), self.relation());
                        push(
                            &mut words,
                            &format!(
                                "{} {} {} and also {} {}",
                                e[0],
                                self.trig(r0),
                                e[1],
                                self.trig(r1),
                                e[2]
                            ),
                        );
                        triples.push(Triple::new(&e[0], self.rel(r0), &e[1]));
                        triples.push(Triple::new(&e[0], self.rel(r1), &e[2]));
                    }
                    1 => {
                        // shared object
                        let e = self.entities(3);
                        let r = self.relation();
                        push(
                            &mut words,
                            &format!("{} and {} both {} {}", e[0], e[1], self.trig(r), e[2]),
                        );
                        triples.push(Triple::new(&e[0], self.rel(r), &e[2]));
                        triples.push(Triple::new(&e[1], self.rel(r), &e[2]));
                    }
                    _ => {
                        // object of one triple is the subject of the next
                        let e = self.entities(3);
                        let r = self.distinct_relations(2);
                        push(
                            &mut words,
                            &format!(
                                "{} {} {} , which {} {}",
                                e[0],
                                self.trig(r[0]),
                                e[1],
                                self.trig(r[1]),
                                e[2]
                            ),
                        );
                        triples.push(Triple::new(&e[0], self.rel(r[0]), &e[1]));
                        triples.push(Triple::new(&e[1], self.rel(r[1]), &e[2]));
                    }
                }
            }
        }
        words.push(".".into());
        Record {
            text: words.join(" "),
            triple_list: triples,
        }
    }
}

/// Splits `n` by `weights` using largest remainders, ties to the first.
fn apportion(n: usize, weights: [f64; 3]) -> [usize; 3] {
    let raw: Vec<f64> = weights.iter().map(|w| w * n as f64).collect();
    let mut counts = [0usize; 3];
    for i in 0..3 {
        counts[i] = raw[i].floor() as usize;
    }
    let mut left = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = raw[a] - raw[a].floor();
        let rb = raw[b] - raw[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if weights[i] > 0.0 {
            counts[i] += 1;
            left -= 1;
        }
    }
    counts
}

pub fn generate_synthetic(config: &SynthConfig) -> Result<SynthCorpus> {
    let SynthConfig {
        vocab_size,
        relations,
        sentences,
        mix,
        seed,
    } = *config;
    let weights = [mix.normal, mix.epo, mix.seo];
    if weights.iter().any(|w| !(0.0..=1.0).contains(w))
        || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(Error::Infeasible(format!(
            "overlap mix {weights:?} must be fractions summing to 1"
        )));
    }
    if relations == 0 {
        return Err(Error::Infeasible(
            "at least one relation is required".into(),
        ));
    }
    if mix.epo > 0.0 && relations < 2 {
        return Err(Error::Infeasible(
            "entity-pair overlap needs at least two relations".into(),
        ));
    }
    let fixed = FUNCTION_WORDS.len() + relations;
    let name_budget = vocab_size.saturating_sub(fixed).min(NAME_WORDS.len());
    if name_budget < 8 {
        return Err(Error::Infeasible(format!(
            "vocabulary of {vocab_size} leaves {name_budget} entity words; at least 8 are needed"
        )));
    }

    let mut gen = Generator {
        rng: ChaCha8Rng::seed_from_u64(seed),
        names: &NAME_WORDS[..name_budget],
        triggers: relation_inventory(relations),
    };
    let counts = apportion(sentences, weights);
    let mut categories: Vec<Category> = std::iter::repeat_n(Category::Normal, counts[0])
        .chain(std::iter::repeat_n(Category::Epo, counts[1]))
        .chain(std::iter::repeat_n(Category::Seo, counts[2]))
        .collect();
    categories.shuffle(&mut gen.rng);
    let records = categories.iter().map(|&c| gen.sentence(c)).collect();
    Ok(SynthCorpus {
        records,
        categories,
        relation_names: gen.triggers.iter().map(|(_, n)| n.clone()).collect(),
    })
}

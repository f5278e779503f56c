//! Oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashSet;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use reltag::autodiff::{Bindings, Graph, NodeId, ParamStore};
use reltag::datasets::{RelationSet, Triple};
use reltag::encoder::{EncoderConfig, EncoderKind, Vocab, POSITION_EMBEDDING, TOKEN_EMBEDDING};
use reltag::evaluation::MatchMode;
use reltag::tagging::{object_prefix, Span, SUBJECT_PREFIX};
use reltag::Model;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;
/// Denominator floor for relative errors. Central differences of an O(10)
/// loss carry O(1e-9) round-off, so entries below this scale are compared
/// absolutely at `FD_TOLERANCE * FD_FLOOR`.
pub const FD_FLOOR: f64 = 1e-4;

/// Largest mismatch between analytic and central-difference gradients of
/// the scalar built by `build`, over every parameter entry. Each mismatch is
/// `|a - n| / max(|a|, |n|, floor)`.
pub fn max_gradient_error(
    params: &ParamStore,
    floor: f64,
    build: &dyn Fn(&mut Graph<'_>) -> NodeId,
) -> f64 {
    let loss_at = |p: &ParamStore| {
        let mut g = Graph::new(p);
        let l = build(&mut g);
        g.evaluate_node(&Bindings::new(), l).unwrap()[[0, 0]]
    };
    let analytic = {
        let mut g = Graph::new(params);
        let l = build(&mut g);
        g.gradient(&Bindings::new(), l).unwrap()
    };
    let mut worst: f64 = 0.0;
    let mut probe = params.clone();
    for name in params.names().map(String::from).collect::<Vec<_>>() {
        let shape = params.get(&name).unwrap().dim();
        for r in 0..shape.0 {
            for c in 0..shape.1 {
                let orig = params.get(&name).unwrap()[[r, c]];
                probe.get_mut(&name).unwrap()[[r, c]] = orig + FD_STEP;
                let up = loss_at(&probe);
                probe.get_mut(&name).unwrap()[[r, c]] = orig - FD_STEP;
                let down = loss_at(&probe);
                probe.get_mut(&name).unwrap()[[r, c]] = orig;
                let numeric = (up - down) / (2.0 * FD_STEP);
                let a = analytic[&name][[r, c]];
                let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
                worst = worst.max(err);
            }
        }
    }
    worst
}

pub fn random_tensor(
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
    lo: f64,
    hi: f64,
) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(lo..hi))
}

/// Spans by exhaustive search: `(i, j)` is emitted when `i` is a start, `j`
/// is an end with `j >= i`, and no end lies in `i..j`.
pub fn brute_force_spans(starts: &[bool], ends: &[bool]) -> Vec<Span> {
    let n = starts.len();
    let mut out = Vec::new();
    for (i, &start) in starts.iter().enumerate() {
        for j in i..n {
            if start && ends[j] && !ends[i..j].iter().any(|&e| e) {
                out.push(Span::new(i, j));
            }
        }
    }
    out
}

fn first_token(s: &str) -> &str {
    s.split(' ').next().unwrap()
}

pub fn oracle_match(p: &Triple, g: &Triple, mode: MatchMode) -> bool {
    if p.relation != g.relation {
        return false;
    }
    match mode {
        MatchMode::Exact => p.subject == g.subject && p.object == g.object,
        MatchMode::Partial => {
            first_token(&p.subject) == first_token(&g.subject)
                && first_token(&p.object) == first_token(&g.object)
        }
    }
}

fn unique(ts: &[Triple]) -> Vec<Triple> {
    let mut seen = HashSet::new();
    ts.iter()
        .filter(|t| seen.insert((*t).clone()))
        .cloned()
        .collect()
}

/// Maximum one-to-one matching by trying every assignment.
fn max_matching(pred: &[Triple], gold: &[Triple], used: &mut Vec<bool>, mode: MatchMode) -> usize {
    let Some((first, rest)) = pred.split_first() else {
        return 0;
    };
    let mut best = max_matching(rest, gold, used, mode);
    for j in 0..gold.len() {
        if !used[j] && oracle_match(first, &gold[j], mode) {
            used[j] = true;
            best = best.max(1 + max_matching(rest, gold, used, mode));
            used[j] = false;
        }
    }
    best
}

/// `(tp, fp, fn)` from an exhaustive bipartite matching.
pub fn oracle_counts(pred: &[Triple], gold: &[Triple], mode: MatchMode) -> (usize, usize, usize) {
    let pred = unique(pred);
    let gold = unique(gold);
    let tp = max_matching(&pred, &gold, &mut vec![false; gold.len()], mode);
    (tp, pred.len() - tp, gold.len() - tp)
}

/// Random triple over a small alphabet so that collisions are frequent.
pub fn random_triple(rng: &mut ChaCha8Rng) -> Triple {
    const WORDS: [&str; 4] = ["New", "York", "Paris", "Rome"];
    const RELS: [&str; 3] = ["r0", "r1", "r2"];
    let entity = |rng: &mut ChaCha8Rng| {
        let n = rng.random_range(1..=2);
        (0..n)
            .map(|_| WORDS[rng.random_range(0..WORDS.len())])
            .collect::<Vec<_>>()
            .join(" ")
    };
    let s = entity(rng);
    let o = entity(rng);
    Triple::new(s, RELS[rng.random_range(0..RELS.len())], o)
}

/// A small randomly initialized transformer model.
pub fn tiny_model(hidden: usize, relations: usize, vocab_words: usize, seed: u64) -> Model {
    let words: Vec<String> = (0..vocab_words).map(|i| format!("w{i}")).collect();
    let vocab = Vocab::build(words.iter().map(String::as_str));
    let names: Vec<String> = (0..relations).map(|r| format!("r{r}")).collect();
    let encoder = EncoderConfig {
        hidden,
        layers: 1,
        heads: 2,
        ffn_hidden: 2 * hidden,
        max_len: 16,
        ..EncoderConfig::default()
    };
    Model::new(encoder, vocab, RelationSet::from_names(&names), seed).unwrap()
}

pub const GOLDEN_SENTENCE: &str =
    "Jackie R. Brown was born in Washington , the capital city of United States Of America";
pub const BIRTH_PLACE: usize = 0;
pub const WORK_IN: usize = 1;
pub const CAPITAL_OF: usize = 2;

/// Hand-set weights for the three-subject example sentence.
///
/// The encoder is the identity (no blocks, zero position table), so each
/// token's vector is its embedding row. Feature 0 marks subject starts,
/// feature 1 subject ends; features 2.. hold one score per (relation,
/// start/end) column that the object taggers read off directly. A token's
/// object score under subject `k` is `score(i) + mean_{j in k} score(j) + b`.
pub fn golden_model() -> (Model, Vec<String>) {
    let tokens: Vec<String> = GOLDEN_SENTENCE.split(' ').map(String::from).collect();
    let n = tokens.len();
    let vocab = Vocab::build(tokens.iter().map(String::as_str));
    let relations = RelationSet::from_names(&["Birth_place", "Work_in", "Capital_of"]);
    let d = 2 + 2 * relations.len();
    let encoder = EncoderConfig {
        kind: EncoderKind::Transformer,
        hidden: d,
        layers: 0,
        heads: 1,
        ffn_hidden: 1,
        max_len: 32,
        ..EncoderConfig::default()
    };
    let mut model = Model::zeros(encoder, vocab, relations).unwrap();

    let column = |r: usize, end: bool| 2 + 2 * r + end as usize;
    let mut rows = Array2::<f64>::zeros((n, d));
    for &i in &[0, 6, 12] {
        rows[[i, 0]] = 1.0;
    }
    for &i in &[2, 6, 15] {
        rows[[i, 1]] = 1.0;
    }
    let mut biases = [[0.0f64; 2]; 3];

    // Birth_place. Starts fire on Washington only under the first subject;
    // under Washington itself every firing end precedes every firing start.
    let bp_start = [-30.0, 0.0, 0.0, -30.0, -30.0, -30.0, 20.0];
    let bp_end = [60.0, -30.0, -30.0, -30.0, -30.0, -30.0, -10.0];
    for i in 0..n {
        rows[[i, column(BIRTH_PLACE, false)]] = *bp_start.get(i).unwrap_or(&-30.0);
        rows[[i, column(BIRTH_PLACE, true)]] = *bp_end.get(i).unwrap_or(&-30.0);
    }
    biases[BIRTH_PLACE] = [-5.0, 15.0];

    // Work_in never clears the threshold.
    biases[WORK_IN] = [-10.0, -10.0];

    // Capital_of: "United ... America" under Washington only.
    for i in 0..n {
        rows[[i, column(CAPITAL_OF, false)]] = match i {
            12 => 20.0,
            6 => 0.0,
            _ => -40.0,
        };
        rows[[i, column(CAPITAL_OF, true)]] = match i {
            15 => 20.0,
            6 => 0.0,
            _ => -40.0,
        };
    }
    biases[CAPITAL_OF] = [-5.0, -5.0];

    let p = &mut model.params;
    let table = p.get_mut(TOKEN_EMBEDDING).unwrap();
    for (i, tok) in tokens.iter().enumerate() {
        let id = model.vocab.id(tok);
        table.row_mut(id).assign(&rows.row(i));
    }
    assert!(p.get(POSITION_EMBEDDING).unwrap().iter().all(|&v| v == 0.0));

    let w = p.get_mut(&format!("{SUBJECT_PREFIX}.w")).unwrap();
    w[[0, 0]] = 20.0;
    w[[1, 1]] = 20.0;
    p.get_mut(&format!("{SUBJECT_PREFIX}.b"))
        .unwrap()
        .fill(-10.0);
    for r in 0..3 {
        let w = p.get_mut(&format!("{}.w", object_prefix(r))).unwrap();
        w[[column(r, false), 0]] = 1.0;
        w[[column(r, true), 1]] = 1.0;
        let b = p.get_mut(&format!("{}.b", object_prefix(r))).unwrap();
        b[[0, 0]] = biases[r][0];
        b[[0, 1]] = biases[r][1];
    }
    (model, tokens)
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub type Builder = Box<dyn Fn(&mut Graph<'_>) -> NodeId>;

/// Reduces `y` to a scalar with fixed random weights so every output entry
/// contributes a distinct amount.
fn readout(g: &mut Graph<'_>, y: NodeId, seed: u64) -> NodeId {
    let (r, c) = g.shape(y).unwrap();
    let weights = random_tensor(&mut seeded(seed), r, c, -1.0, 1.0);
    let w = g.constant(weights);
    let prod = g.mul(y, w).unwrap();
    g.sum(prod).unwrap()
}

/// One small graph per differentiable op, with its parameters.
pub fn op_cases() -> Vec<(&'static str, ParamStore, Builder)> {
    let mut rng = seeded(2024);
    let store = |shapes: &[(&str, usize, usize, f64, f64)], rng: &mut ChaCha8Rng| {
        let mut p = ParamStore::new();
        for &(name, r, c, lo, hi) in shapes {
            p.insert(name, random_tensor(rng, r, c, lo, hi));
        }
        p
    };
    fn unary(f: fn(&mut Graph<'_>, NodeId) -> NodeId) -> Builder {
        Box::new(move |g| {
            let a = g.param("a").unwrap();
            let y = f(g, a);
            readout(g, y, 1)
        })
    }
    fn binary(f: fn(&mut Graph<'_>, NodeId, NodeId) -> NodeId) -> Builder {
        Box::new(move |g| {
            let a = g.param("a").unwrap();
            let b = g.param("b").unwrap();
            let y = f(g, a, b);
            readout(g, y, 2)
        })
    }
    let mut targets = random_tensor(&mut rng, 3, 4, 0.0, 1.0);
    targets.mapv_inplace(|v| if v > 0.5 { 1.0 } else { 0.0 });

    vec![
        (
            "matmul",
            store(&[("a", 3, 4, -1.0, 1.0), ("b", 4, 2, -1.0, 1.0)], &mut rng),
            binary(|g, a, b| g.matmul(a, b).unwrap()),
        ),
        (
            "affine",
            store(
                &[
                    ("a", 3, 4, -1.0, 1.0),
                    ("w", 4, 5, -1.0, 1.0),
                    ("b", 1, 5, -1.0, 1.0),
                ],
                &mut rng,
            ),
            Box::new(|g| {
                let x = g.param("a").unwrap();
                let w = g.param("w").unwrap();
                let b = g.param("b").unwrap();
                let y = g.affine(x, w, b).unwrap();
                readout(g, y, 3)
            }),
        ),
        (
            "add",
            store(&[("a", 3, 4, -1.0, 1.0), ("b", 3, 4, -1.0, 1.0)], &mut rng),
            binary(|g, a, b| g.add(a, b).unwrap()),
        ),
        (
            "add_row",
            store(&[("a", 3, 4, -1.0, 1.0), ("b", 1, 4, -1.0, 1.0)], &mut rng),
            binary(|g, a, b| g.add_row(a, b).unwrap()),
        ),
        (
            "mul",
            store(&[("a", 3, 4, -1.0, 1.0), ("b", 3, 4, -1.0, 1.0)], &mut rng),
            binary(|g, a, b| g.mul(a, b).unwrap()),
        ),
        (
            "scale",
            store(&[("a", 3, 4, -1.0, 1.0)], &mut rng),
            unary(|g, a| g.scale(a, -1.7).unwrap()),
        ),
        (
            "transpose",
            store(&[("a", 3, 4, -1.0, 1.0)], &mut rng),
            unary(|g, a| g.transpose(a).unwrap()),
        ),
        (
            "sigmoid",
            store(&[("a", 3, 4, -2.0, 2.0)], &mut rng),
            unary(|g, a| g.sigmoid(a).unwrap()),
        ),
        (
            "tanh",
            store(&[("a", 3, 4, -2.0, 2.0)], &mut rng),
            unary(|g, a| g.tanh(a).unwrap()),
        ),
        (
            "gelu",
            store(&[("a", 3, 4, -2.0, 2.0)], &mut rng),
            unary(|g, a| g.gelu(a).unwrap()),
        ),
        (
            "softmax_rows",
            store(&[("a", 3, 5, -2.0, 2.0)], &mut rng),
            unary(|g, a| g.softmax_rows(a).unwrap()),
        ),
        (
            "layer_norm",
            store(
                &[
                    ("a", 3, 6, -2.0, 2.0),
                    ("gain", 1, 6, 0.5, 1.5),
                    ("bias", 1, 6, -0.5, 0.5),
                ],
                &mut rng,
            ),
            Box::new(|g| {
                let x = g.param("a").unwrap();
                let gain = g.param("gain").unwrap();
                let bias = g.param("bias").unwrap();
                let y = g.layer_norm(x, gain, bias).unwrap();
                readout(g, y, 4)
            }),
        ),
        (
            "log",
            store(&[("a", 3, 4, 0.5, 2.0)], &mut rng),
            unary(|g, a| g.log(a).unwrap()),
        ),
        (
            "gather_rows",
            store(&[("a", 5, 3, -1.0, 1.0)], &mut rng),
            unary(|g, a| g.gather_rows(a, &[0, 2, 2, 4]).unwrap()),
        ),
        (
            "slice_rows",
            store(&[("a", 5, 3, -1.0, 1.0)], &mut rng),
            unary(|g, a| g.slice_rows(a, 1, 4).unwrap()),
        ),
        (
            "slice_cols",
            store(&[("a", 3, 5, -1.0, 1.0)], &mut rng),
            unary(|g, a| g.slice_cols(a, 1, 3).unwrap()),
        ),
        (
            "concat_rows",
            store(&[("a", 2, 3, -1.0, 1.0), ("b", 3, 3, -1.0, 1.0)], &mut rng),
            binary(|g, a, b| g.concat_rows(&[a, b]).unwrap()),
        ),
        (
            "concat_cols",
            store(&[("a", 3, 2, -1.0, 1.0), ("b", 3, 4, -1.0, 1.0)], &mut rng),
            binary(|g, a, b| g.concat_cols(&[a, b]).unwrap()),
        ),
        (
            "mean_rows",
            store(&[("a", 5, 3, -1.0, 1.0)], &mut rng),
            unary(|g, a| g.mean_rows(a, 1, 3).unwrap()),
        ),
        (
            "sum",
            store(&[("a", 3, 4, -1.0, 1.0)], &mut rng),
            unary(|g, a| g.sum(a).unwrap()),
        ),
        (
            "bce",
            store(&[("a", 3, 4, 0.1, 0.9)], &mut rng),
            Box::new(move |g| {
                let p = g.param("a").unwrap();
                g.bce(p, targets.clone()).unwrap()
            }),
        ),
        (
            "affine_sigmoid_bce",
            store(
                &[
                    ("x", 1, 8, -1.0, 1.0),
                    ("w", 8, 8, -1.0, 1.0),
                    ("b", 1, 8, -1.0, 1.0),
                ],
                &mut rng,
            ),
            Box::new(|g| {
                let x = g.param("x").unwrap();
                let w = g.param("w").unwrap();
                let b = g.param("b").unwrap();
                let z = g.affine(x, w, b).unwrap();
                let p = g.sigmoid(z).unwrap();
                let y = Array2::from_shape_fn((1, 8), |(_, j)| (j % 2) as f64);
                g.bce(p, y).unwrap()
            }),
        ),
    ]
}

/// Random span triples over `len` tokens with `relations` relation ids.
pub fn random_span_triples(
    rng: &mut ChaCha8Rng,
    len: usize,
    relations: usize,
    max: usize,
) -> Vec<reltag::tagging::SpanTriple> {
    let span = |rng: &mut ChaCha8Rng| {
        let a = rng.random_range(0..len);
        let b = rng.random_range(a..len.min(a + 3));
        Span::new(a, b)
    };
    (0..rng.random_range(0..=max))
        .map(|_| reltag::tagging::SpanTriple {
            subject: span(rng),
            relation: rng.random_range(0..relations),
            object: span(rng),
        })
        .collect()
}

/// Negated sum of span log-likelihoods computed term by term through the
/// inference path: the subject field, then for every distinct gold subject in
/// span order, every relation's field in id order.
pub fn independent_loss(
    model: &Model,
    ids: &[usize],
    triples: &[reltag::tagging::SpanTriple],
) -> f64 {
    use reltag::tagging::{span_log_likelihood, subject_vector, tag_object, tag_subject, TagField};
    let len = ids.len();
    let h = model.encode(ids).unwrap();
    let field = |spans: &mut dyn Iterator<Item = Span>| {
        let mut f = TagField {
            start: vec![false; len],
            end: vec![false; len],
        };
        for s in spans {
            f.start[s.start] = true;
            f.end[s.end] = true;
        }
        f
    };
    let probs = tag_subject(&h, &model.subject_tagger().unwrap()).unwrap();
    let mut total =
        span_log_likelihood(&probs, &field(&mut triples.iter().map(|t| t.subject))).unwrap();
    let mut subjects: Vec<Span> = triples.iter().map(|t| t.subject).collect();
    subjects.sort();
    subjects.dedup();
    let objects = model.object_taggers().unwrap();
    for s in subjects {
        let v = subject_vector(&h, s).unwrap();
        for r in 0..model.num_relations() {
            let probs = tag_object(&h, v.view(), r, &objects).unwrap();
            let gold = field(
                &mut triples
                    .iter()
                    .filter(|t| t.subject == s && t.relation == r)
                    .map(|t| t.object),
            );
            total += span_log_likelihood(&probs, &gold).unwrap();
        }
    }
    -total
}

/// A generated corpus split and a small model whose vocabulary covers it.
pub fn synthetic_setup(sentences: usize, seed: u64) -> (Vec<reltag::datasets::Sentence>, Model) {
    use reltag::datasets::{corpus_from_records, generate_synthetic, SynthConfig};
    let synth = generate_synthetic(&SynthConfig {
        sentences,
        seed,
        ..SynthConfig::default()
    })
    .unwrap();
    let mut relations = RelationSet::from_names(&synth.relation_names);
    let corpus = corpus_from_records(
        &synth.records,
        &mut relations,
        Default::default(),
        "synthetic",
    )
    .unwrap();
    let vocab = Vocab::build(
        corpus
            .sentences
            .iter()
            .flat_map(|s| s.tokens.iter().map(String::as_str)),
    );
    let encoder = EncoderConfig {
        hidden: 8,
        layers: 1,
        heads: 2,
        ffn_hidden: 16,
        ..EncoderConfig::default()
    };
    let model = Model::new(encoder, vocab, relations, seed).unwrap();
    (corpus.sentences, model)
}

/// A sentence with a shared subject and a chained triple.
pub fn fd_sentence(model: &Model, len: usize, seed: u64) -> reltag::training::PreparedSentence {
    let mut rng = seeded(seed);
    let ids: Vec<usize> = (0..len)
        .map(|_| rng.random_range(0..model.vocab.len()))
        .collect();
    let triples = vec![
        reltag::tagging::SpanTriple {
            subject: Span::new(0, 1),
            relation: 0,
            object: Span::new(3, 3),
        },
        reltag::tagging::SpanTriple {
            subject: Span::new(0, 1),
            relation: 2,
            object: Span::new(4, 5),
        },
        reltag::tagging::SpanTriple {
            subject: Span::new(3, 3),
            relation: 1,
            object: Span::new(5, 5),
        },
    ];
    reltag::training::PreparedSentence {
        ids,
        gold: reltag::tagging::build_gold_tags(len, &triples, model.num_relations()).unwrap(),
    }
}

/// A triple that keeps each element of `t` with probability one half and
/// redraws it otherwise, so exact matches and near misses are both common.
pub fn perturbed_triple(rng: &mut ChaCha8Rng, t: &Triple) -> Triple {
    let fresh = random_triple(rng);
    let mut keep = || rng.random_bool(0.5);
    Triple::new(
        if keep() {
            t.subject.clone()
        } else {
            fresh.subject
        },
        if keep() {
            t.relation.clone()
        } else {
            fresh.relation
        },
        if keep() {
            t.object.clone()
        } else {
            fresh.object
        },
    )
}

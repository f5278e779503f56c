mod common;

use common::{golden_model, BIRTH_PLACE, CAPITAL_OF, WORK_IN};
use ndarray::Array2;
use reltag::datasets::{RelationSet, Triple};
use reltag::encoder::{EncoderConfig, Vocab, TOKEN_EMBEDDING};
use reltag::extraction::{extract_triples, extract_with_trace, predict_corpus};
use reltag::tagging::{object_prefix, Span, SUBJECT_PREFIX};
use reltag::Model;

/// Identity-encoder model with saturating weights: the given subjects fire,
/// and relation `r` fires object `o` for every subject listed with it.
/// Each distinct token may appear once.
fn hand_model(
    sentence: &str,
    relations: usize,
    subjects: &[Span],
    triples: &[(Span, usize, Span)],
) -> (Model, Vec<String>) {
    let tokens: Vec<String> = sentence.split(' ').map(String::from).collect();
    let n = tokens.len();
    let names: Vec<String> = (0..relations).map(|r| format!("r{r}")).collect();
    let d = 2 + 2 * relations;
    let encoder = EncoderConfig {
        hidden: d,
        layers: 0,
        heads: 1,
        ffn_hidden: 1,
        max_len: 32,
        ..EncoderConfig::default()
    };
    let mut model = Model::zeros(
        encoder,
        Vocab::build(tokens.iter().map(String::as_str)),
        RelationSet::from_names(&names),
    )
    .unwrap();

    let mut rows = Array2::<f64>::zeros((n, d));
    for s in subjects {
        rows[[s.start, 0]] = 1.0;
        rows[[s.end, 1]] = 1.0;
    }
    for r in 0..relations {
        for c in [2 + 2 * r, 3 + 2 * r] {
            rows.column_mut(c).fill(-40.0);
        }
    }
    for &(s, r, o) in triples {
        for i in s.start..=s.end {
            rows[[i, 2 + 2 * r]] = 0.0;
            rows[[i, 3 + 2 * r]] = 0.0;
        }
        rows[[o.start, 2 + 2 * r]] = 20.0;
        rows[[o.end, 3 + 2 * r]] = 20.0;
    }

    let p = &mut model.params;
    let table = p.get_mut(TOKEN_EMBEDDING).unwrap();
    for (i, tok) in tokens.iter().enumerate() {
        let id = model.vocab.id(tok);
        table.row_mut(id).assign(&rows.row(i));
    }
    let w = p.get_mut(&format!("{SUBJECT_PREFIX}.w")).unwrap();
    w[[0, 0]] = 20.0;
    w[[1, 1]] = 20.0;
    p.get_mut(&format!("{SUBJECT_PREFIX}.b"))
        .unwrap()
        .fill(-10.0);
    for r in 0..relations {
        let w = p.get_mut(&format!("{}.w", object_prefix(r))).unwrap();
        w[[2 + 2 * r, 0]] = 1.0;
        w[[3 + 2 * r, 1]] = 1.0;
        p.get_mut(&format!("{}.b", object_prefix(r)))
            .unwrap()
            .fill(-5.0);
    }
    (model, tokens)
}

fn triples(model: &Model, tokens: &[String]) -> Vec<Triple> {
    let mut out: Vec<Triple> = extract_triples(tokens, model, 0.5)
        .unwrap()
        .iter()
        .map(|t| t.to_triple())
        .collect();
    out.sort_by(|a, b| {
        (&a.subject, &a.relation, &a.object).cmp(&(&b.subject, &b.relation, &b.object))
    });
    out
}

#[test]
fn example_sentence_follows_the_cascade() {
    let (model, tokens) = golden_model();
    let trace = extract_with_trace(&tokens, &model, 0.5).unwrap();
    assert_eq!(
        trace.subjects,
        [Span::new(0, 2), Span::new(6, 6), Span::new(12, 15)]
    );
    assert_eq!(trace.passes.len(), 3 * 3);

    let pass = |k: usize, r: usize| {
        trace
            .passes
            .iter()
            .find(|p| p.subject_index == k && p.relation == r)
            .unwrap()
    };
    assert_eq!(pass(0, BIRTH_PLACE).objects, [Span::new(6, 6)]);
    for k in 0..3 {
        let tags = pass(k, WORK_IN).probs.binarize(0.5);
        assert!(tags.is_null(), "Work_in fired under subject {k}");
    }
    assert!(pass(1, BIRTH_PLACE).objects.is_empty());
    assert_eq!(pass(1, CAPITAL_OF).objects, [Span::new(12, 15)]);
    assert!(pass(0, CAPITAL_OF).objects.is_empty());
    assert!(trace
        .passes
        .iter()
        .filter(|p| p.subject_index == 2)
        .all(|p| p.objects.is_empty()));

    let got: Vec<_> = trace.triples.iter().map(|t| t.to_triple()).collect();
    assert_eq!(
        got,
        [
            Triple::new("Jackie R. Brown", "Birth_place", "Washington"),
            Triple::new("Washington", "Capital_of", "United States Of America"),
        ]
    );
    assert_eq!(trace.triples[1].subject_index, 1);
}

#[test]
fn single_triple() {
    let (model, tokens) = hand_model(
        "Ann Lee lives in Paris",
        2,
        &[Span::new(0, 1)],
        &[(Span::new(0, 1), 0, Span::new(4, 4))],
    );
    assert_eq!(
        triples(&model, &tokens),
        [Triple::new("Ann Lee", "r0", "Paris")]
    );
    assert_eq!(
        extract_with_trace(&tokens, &model, 0.5)
            .unwrap()
            .passes
            .len(),
        2
    );
}

#[test]
fn entity_pair_overlap_yields_both_relations() {
    let pair = (Span::new(0, 0), Span::new(3, 4));
    let (model, tokens) = hand_model(
        "Rome , in Lazio Region",
        3,
        &[pair.0],
        &[(pair.0, 0, pair.1), (pair.0, 2, pair.1)],
    );
    assert_eq!(
        triples(&model, &tokens),
        [
            Triple::new("Rome", "r0", "Lazio Region"),
            Triple::new("Rome", "r2", "Lazio Region")
        ]
    );
}

#[test]
fn single_entity_overlap_shares_an_object() {
    let (a, b, c) = (Span::new(0, 0), Span::new(2, 2), Span::new(5, 6));
    let (model, tokens) = hand_model(
        "Ann and Bob live in New York",
        2,
        &[a, b],
        &[(a, 1, c), (b, 1, c)],
    );
    assert_eq!(
        triples(&model, &tokens),
        [
            Triple::new("Ann", "r1", "New York"),
            Triple::new("Bob", "r1", "New York")
        ]
    );
}

#[test]
fn one_subject_with_several_objects() {
    let s = Span::new(0, 0);
    let (model, tokens) = hand_model(
        "Ann visited Oslo then Bergen",
        1,
        &[s],
        &[(s, 0, Span::new(2, 2)), (s, 0, Span::new(4, 4))],
    );
    assert_eq!(
        triples(&model, &tokens),
        [
            Triple::new("Ann", "r0", "Bergen"),
            Triple::new("Ann", "r0", "Oslo")
        ]
    );
}

#[test]
fn nothing_is_extracted_without_subjects() {
    let (model, tokens) = hand_model("a b c", 2, &[], &[]);
    let trace = extract_with_trace(&tokens, &model, 0.5).unwrap();
    assert!(trace.subjects.is_empty() && trace.passes.is_empty() && trace.triples.is_empty());

    let zero = Model::zeros(
        EncoderConfig::default(),
        Vocab::build(["a"]),
        RelationSet::from_names(&["r"]),
    )
    .unwrap();
    assert!(extract_triples(&["a", "a"], &zero, 0.5).unwrap().is_empty());
    assert!(extract_with_trace::<&str>(&[], &zero, 0.5)
        .unwrap()
        .subjects
        .is_empty());
}

#[test]
fn repeated_surface_forms_are_reported_once() {
    let (a1, a2, o) = (Span::new(0, 0), Span::new(2, 2), Span::new(4, 4));
    let (model, _) = hand_model(
        "Ann met x and Oslo",
        2,
        &[a1, a2],
        &[(a1, 0, o), (a2, 0, o)],
    );
    let tokens = ["Ann", "met", "x", "and", "Oslo"].map(String::from);
    assert_eq!(triples(&model, &tokens).len(), 2);
    // Both subject positions carry the same word.
    let repeated = ["Ann", "met", "Ann", "and", "Oslo"].map(String::from);
    let trace = extract_with_trace(&repeated, &model, 0.5).unwrap();
    assert_eq!(trace.subjects, [a1, a2]);
    assert_eq!(trace.passes.len(), 4);
    assert_eq!(trace.triples.len(), 1);
}

#[test]
fn corpus_prediction_keeps_sentence_order() {
    let (model, tokens) = golden_model();
    let sentences: Vec<_> = (0..5)
        .map(|i| {
            let words: Vec<&str> = tokens.iter().skip(i).map(String::as_str).collect();
            let record = reltag::datasets::Record {
                text: words.join(" "),
                triple_list: vec![],
            };
            reltag::datasets::align_record(&record, &model.relations, 100)
                .unwrap()
                .0
        })
        .collect();
    let preds = predict_corpus(&model, &sentences, 0.5).unwrap();
    for (s, p) in sentences.iter().zip(&preds) {
        let direct: Vec<Triple> = extract_triples(&s.tokens, &model, 0.5)
            .unwrap()
            .iter()
            .map(|t| t.to_triple())
            .collect();
        assert_eq!(&direct, p);
    }
}

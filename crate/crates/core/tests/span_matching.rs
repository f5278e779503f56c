mod common;

use common::{brute_force_spans, seeded};
use proptest::prelude::*;
use rand::Rng;
use reltag::tagging::{binarize, match_spans, Span, TagField};

fn bits(mask: u32, len: usize) -> Vec<bool> {
    (0..len).map(|i| mask >> i & 1 == 1).collect()
}

#[test]
fn decoder_agrees_with_exhaustive_search_on_all_short_fields() {
    for len in 0..=6 {
        for s in 0..1u32 << len {
            for e in 0..1u32 << len {
                let (starts, ends) = (bits(s, len), bits(e, len));
                assert_eq!(
                    match_spans(&starts, &ends),
                    brute_force_spans(&starts, &ends),
                    "{starts:?} {ends:?}"
                );
            }
        }
    }
}

#[test]
fn decoder_agrees_with_exhaustive_search_on_random_fields() {
    let mut rng = seeded(31);
    for _ in 0..10_000 {
        let len = rng.random_range(0..=12);
        let density = rng.random_range(0.05..0.7);
        let starts: Vec<bool> = (0..len).map(|_| rng.random_bool(density)).collect();
        let ends: Vec<bool> = (0..len).map(|_| rng.random_bool(density)).collect();
        assert_eq!(
            match_spans(&starts, &ends),
            brute_force_spans(&starts, &ends)
        );
    }
}

#[test]
fn shared_ends_and_orphan_starts() {
    let starts = [true, true, false, false, true];
    let ends = [false, false, true, false, false];
    assert_eq!(
        match_spans(&starts, &ends),
        [Span::new(0, 2), Span::new(1, 2)]
    );
    assert!(match_spans(&[false, true], &[true, false]).is_empty());
}

/// Disjoint spans drawn from gap and length runs.
fn disjoint_spans() -> impl Strategy<Value = (usize, Vec<Span>)> {
    prop::collection::vec((0usize..3, 0usize..4), 0..6).prop_map(|runs| {
        let mut at = 0;
        let mut spans = Vec::new();
        for (gap, extra) in runs {
            at += gap;
            spans.push(Span::new(at, at + extra));
            at += extra + 1;
        }
        (at, spans)
    })
}

proptest! {
    #[test]
    fn disjoint_spans_survive_tagging_and_decoding((len, spans) in disjoint_spans()) {
        let mut field = TagField::zeros(len);
        for &s in &spans {
            field.mark(s);
        }
        prop_assert_eq!(field.spans(), spans);
        let m = field.to_matrix();
        prop_assert_eq!(m.sum() as usize, 2 * field.start.iter().filter(|&&b| b).count());
    }

    #[test]
    fn binarize_is_strict(probs in prop::collection::vec(0.0f64..=1.0, 0..20), threshold in 0.0f64..1.0) {
        let tags = binarize(&probs, threshold);
        for (p, t) in probs.iter().zip(&tags) {
            prop_assert_eq!(*t, *p > threshold);
        }
        prop_assert!(!binarize(&[threshold], threshold)[0]);
    }

    #[test]
    fn decoded_spans_are_well_formed(starts in prop::collection::vec(any::<bool>(), 0..16), seed in any::<u64>()) {
        let mut rng = seeded(seed);
        let ends: Vec<bool> = starts.iter().map(|_| rng.random_bool(0.4)).collect();
        let spans = match_spans(&starts, &ends);
        for w in spans.windows(2) {
            prop_assert!(w[0].start < w[1].start);
        }
        for s in &spans {
            prop_assert!(starts[s.start] && ends[s.end] && s.start <= s.end);
        }
        prop_assert_eq!(spans.len(), (0..starts.len()).filter(|&i| starts[i] && ends[i..].iter().any(|&b| b)).count());
    }
}

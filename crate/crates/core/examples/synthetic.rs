//! Trains a small transformer tagger on a generated corpus and reports
//! training and held-out scores by overlap pattern.
//!
//! cargo run --release -p reltag-core --example synthetic -- [seed]

use std::time::Instant;

use reltag::datasets::{
    corpus_from_records, generate_synthetic, LoadOptions, RelationSet, Sentence, SynthConfig,
};
use reltag::encoder::{EncoderConfig, Vocab};
use reltag::evaluation::{evaluate, MatchMode};
use reltag::extraction::predict_corpus;
use reltag::training::{train, TrainConfig};
use reltag::Model;

fn split(seed: u64, n: usize, relations: &mut RelationSet) -> reltag::Result<Vec<Sentence>> {
    let synth = generate_synthetic(&SynthConfig {
        sentences: n,
        seed,
        ..SynthConfig::default()
    })?;
    Ok(corpus_from_records(
        &synth.records,
        relations,
        LoadOptions::default(),
        "synthetic",
    )?
    .sentences)
}

fn main() -> reltag::Result<()> {
    env_logger::init();
    let seed: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1);
    let mut relations =
        RelationSet::from_names(&generate_synthetic(&SynthConfig::default())?.relation_names);
    let train_set = split(seed, 200, &mut relations)?;
    let val_set = split(seed + 1000, 50, &mut relations)?;
    let test_set = split(seed + 2000, 50, &mut relations)?;
    let vocab = Vocab::build(
        train_set
            .iter()
            .flat_map(|s| s.tokens.iter().map(String::as_str)),
    );

    let model = Model::new(EncoderConfig::default(), vocab, relations, seed)?;
    let config = TrainConfig {
        max_epochs: 200,
        patience: 200,
        learning_rate: 3e-3,
        seed,
        ..TrainConfig::default()
    };

    let started = Instant::now();
    let (model, history) = train(model, &train_set, &val_set, &config)?;
    println!(
        "{} epochs, best epoch {:?}, {:.1}s",
        history.epochs.len(),
        history.best_epoch,
        started.elapsed().as_secs_f64()
    );

    for (name, set) in [("train", &train_set), ("test", &test_set)] {
        let preds = predict_corpus(&model, set, config.threshold)?;
        let golds: Vec<_> = set.iter().map(Sentence::gold_triples).collect();
        println!(
            "== {name}\n{}",
            evaluate(&preds, &golds, MatchMode::Partial)?.render_table()
        );
    }
    Ok(())
}

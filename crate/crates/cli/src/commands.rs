use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::ExitCode;

use anyhow::Context;
use log::info;

use reltag::datasets::{
    corpus_from_records, corpus_stats, generate_synthetic, load_corpus, read_records, save_records,
    LoadOptions, OverlapMix, RelationSet, Sentence, UnknownRelation,
};
use reltag::encoder::Vocab;
use reltag::evaluation::evaluate;
use reltag::extraction::{predict_corpus, prediction_records};
use reltag::io::write_atomic;
use reltag::training::train_with_validator;
use reltag::Model;

use crate::config::{existing, required, RunConfig};
use crate::{Common, EvalArgs, ExtractArgs, StatsArgs, SynthArgs, TrainArgs};

pub const HISTORY_FILE: &str = "history.jsonl";
pub const RUN_CONFIG_FILE: &str = "run.toml";

/// A failed command: bad configuration (exit 2) or a runtime error (exit 1).
pub enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            Failure::Config(_) => ExitCode::from(2),
            Failure::Runtime(_) => ExitCode::from(1),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(e) => write!(f, "configuration: {e:#}"),
            Failure::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

trait Categorize<T> {
    fn config(self) -> Result<T, Failure>;
    fn runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Categorize<T> for Result<T, E> {
    fn config(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Config(e.into()))
    }

    fn runtime(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

fn base_config(common: &Common) -> Result<RunConfig, Failure> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path).config()?,
        None => RunConfig::default(),
    };
    if common.seed.is_some() {
        config.seed = common.seed;
    }
    Ok(config)
}

/// Writes to stdout, treating a closed pipe as success.
fn emit(text: &str) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

pub fn train(args: TrainArgs) -> Result<(), Failure> {
    let mut config = base_config(&args.common)?;
    if args.input.is_some() {
        config.paths.train = args.input;
    }
    if args.val.is_some() {
        config.paths.val = args.val;
    }
    if args.output.is_some() {
        config.paths.model = args.output;
    }
    if let Some(kind) = args.encoder {
        config.encoder.kind = kind;
    }
    if let Some(mode) = args.mode {
        config.mode = mode;
    }
    if args.threshold.is_some() {
        config.threshold = args.threshold;
    }
    let seed = config.require_seed().config()?;
    let threshold = config.threshold();
    let t = &mut config.train;
    t.max_epochs = args.epochs.unwrap_or(t.max_epochs);
    t.learning_rate = args.lr.unwrap_or(t.learning_rate);
    t.patience = args.patience.unwrap_or(t.patience);
    t.batch_size = args.batch_size.unwrap_or(t.batch_size);
    t.seed = seed;
    t.threshold = threshold;
    t.validation_mode = config.mode;
    config.threshold = Some(t.threshold);
    t.validate().config()?;
    config.encoder.validate().config()?;

    let train_path = existing(
        &config.paths.train,
        "training corpus (--input or paths.train)",
    )
    .config()?;
    let val_path =
        existing(&config.paths.val, "validation corpus (--val or paths.val)").config()?;
    let model_dir = required(
        &config.paths.model,
        "model directory (--output or paths.model)",
    )
    .config()?;
    if let Some(v) = &config.paths.vocab {
        existing(&Some(v.clone()), "vocabulary file").config()?;
    }

    let options = LoadOptions {
        max_len: config.encoder.max_len,
        ..LoadOptions::default()
    };
    let mut relations = RelationSet::new();
    let train_set = load_corpus(train_path, &mut relations, options).runtime()?;
    let val_set = load_corpus(val_path, &mut relations, options).runtime()?;
    info!(
        "{} training and {} validation sentences, {} relations",
        train_set.len(),
        val_set.len(),
        relations.len()
    );
    let vocab = match &config.paths.vocab {
        Some(path) => Vocab::load(path).runtime()?,
        None => Vocab::build(
            train_set
                .sentences
                .iter()
                .flat_map(|s| s.tokens.iter().map(String::as_str)),
        ),
    };
    let model =
        Model::new(config.encoder.clone(), vocab, relations, config.train.seed).runtime()?;

    config.encoder.vocab_size = model.encoder.vocab_size;
    fs::create_dir_all(model_dir)
        .with_context(|| format!("creating {}", model_dir.display()))
        .runtime()?;
    let run_toml = toml::to_string(&config)
        .context("serializing run configuration")
        .runtime()?;
    write_atomic(&model_dir.join(RUN_CONFIG_FILE), run_toml.as_bytes()).runtime()?;

    let history_path = model_dir.join(HISTORY_FILE);
    let mut log = String::new();
    let train_config = config.train.clone();
    let val = &val_set.sentences;
    let (model, history) = train_with_validator(
        model,
        &train_set.sentences,
        &train_config,
        |m| {
            let preds = predict_corpus(m, val, train_config.threshold)?;
            let golds: Vec<_> = val.iter().map(Sentence::gold_triples).collect();
            Ok(reltag::evaluation::score_micro(&preds, &golds, train_config.validation_mode)?.f1)
        },
        |record, m, best| {
            log.push_str(&serde_json::to_string(record)?);
            log.push('\n');
            write_atomic(&history_path, log.as_bytes())?;
            if best {
                m.save(model_dir)?;
            }
            Ok(())
        },
    )
    .runtime()?;
    // The directory already holds the best epoch; saving again covers a run
    // whose observer never fired.
    model.save(model_dir).runtime()?;
    if let Some(best) = history.best() {
        info!(
            "best epoch {} of {}: validation F1 {:.4}",
            best.epoch,
            history.epochs.len(),
            best.val_f1
        );
    }
    emit(&format!("{}\n", model_dir.display())).runtime()?;
    Ok(())
}

pub fn extract(args: ExtractArgs) -> Result<(), Failure> {
    let mut config = base_config(&args.common)?;
    if args.model.is_some() {
        config.paths.model = args.model;
    }
    if args.input.is_some() {
        config.paths.test = args.input;
    }
    if args.output.is_some() {
        config.paths.output = args.output;
    }
    if args.threshold.is_some() {
        config.threshold = args.threshold;
    }
    let threshold = config.threshold();
    if !(0.0..1.0).contains(&threshold) {
        return Err(Failure::Config(anyhow::anyhow!(
            "threshold must lie in [0, 1)"
        )));
    }
    let model_dir = existing(
        &config.paths.model,
        "model directory (--model or paths.model)",
    )
    .config()?;
    let input = existing(&config.paths.test, "input corpus (--input or paths.test)").config()?;
    let output = required(
        &config.paths.output,
        "output file (--output or paths.output)",
    )
    .config()?;

    let model = Model::load(model_dir).runtime()?;
    let records = read_records(input).runtime()?;
    // Gold annotations in the input are ignored, so relations unknown to the
    // model only extend a local copy.
    let mut relations = model.relations.clone();
    let options = LoadOptions {
        max_len: model.encoder.max_len,
        unknown_relation: UnknownRelation::Extend,
    };
    let corpus = corpus_from_records(
        &records,
        &mut relations,
        options,
        &input.display().to_string(),
    )
    .runtime()?;
    let preds = predict_corpus(&model, &corpus.sentences, threshold).runtime()?;
    save_records(output, &prediction_records(&corpus.sentences, &preds)).runtime()?;
    info!(
        "{} triples from {} sentences",
        preds.iter().map(Vec::len).sum::<usize>(),
        preds.len()
    );
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<(), Failure> {
    let mut config = base_config(&args.common)?;
    if args.gold.is_some() {
        config.paths.test = args.gold;
    }
    if let Some(mode) = args.mode {
        config.mode = mode;
    }
    if args.output.is_some() {
        config.paths.output = args.output;
    }
    let pred_path = existing(&Some(args.pred), "prediction file")
        .config()?
        .to_path_buf();
    let gold_path = existing(&config.paths.test, "gold corpus (--gold or paths.test)").config()?;

    let preds = read_records(&pred_path).runtime()?;
    let golds = read_records(gold_path).runtime()?;
    if preds.len() != golds.len() {
        return Err(Failure::Runtime(anyhow::anyhow!(
            "{} holds {} records but {} holds {}",
            pred_path.display(),
            preds.len(),
            gold_path.display(),
            golds.len()
        )));
    }
    let pred_triples: Vec<_> = preds.into_iter().map(|r| r.triple_list).collect();
    let gold_triples: Vec<_> = golds.into_iter().map(|r| r.triple_list).collect();
    let report = evaluate(&pred_triples, &gold_triples, config.mode).runtime()?;
    let table = report.render_table();
    emit(&table).runtime()?;
    if let Some(out) = &config.paths.output {
        write_json(out, &report).runtime()?;
        write_atomic(&out.with_extension("txt"), table.as_bytes()).runtime()?;
    }
    Ok(())
}

pub fn stats(args: StatsArgs) -> Result<(), Failure> {
    base_config(&args.common)?;
    for p in &args.input {
        existing(&Some(p.clone()), "input corpus").config()?;
    }
    let mut all = Vec::new();
    for path in &args.input {
        let records = read_records(path).runtime()?;
        let options = LoadOptions {
            max_len: usize::MAX,
            ..LoadOptions::default()
        };
        let corpus = corpus_from_records(
            &records,
            &mut RelationSet::new(),
            options,
            &path.display().to_string(),
        )
        .runtime()?;
        let stats = corpus_stats(&corpus.sentences);
        let name = path.file_name().map_or_else(
            || path.display().to_string(),
            |n| n.to_string_lossy().into(),
        );
        emit(&format!("{}\n", stats.render_table(&name))).runtime()?;
        all.push((path.display().to_string(), stats));
    }
    if let Some(out) = &args.output {
        let map: serde_json::Map<String, serde_json::Value> = all
            .into_iter()
            .map(|(k, v)| Ok((k, serde_json::to_value(v)?)))
            .collect::<serde_json::Result<_>>()
            .runtime()?;
        write_json(out, &map).runtime()?;
    }
    Ok(())
}

pub fn synth(args: SynthArgs) -> Result<(), Failure> {
    let mut config = base_config(&args.common)?;
    if args.output.is_some() {
        config.paths.output = args.output;
    }
    let seed = config.require_seed().config()?;
    let s = &mut config.synth;
    s.sentences = args.n.unwrap_or(s.sentences);
    s.relations = args.relations.unwrap_or(s.relations);
    s.vocab_size = args.vocab_size.unwrap_or(s.vocab_size);
    if let Some(m) = args.mix {
        let [normal, epo, seo] = m[..] else {
            return Err(Failure::Config(anyhow::anyhow!(
                "--mix takes three comma-separated proportions"
            )));
        };
        s.mix = OverlapMix::new(normal, epo, seo);
    }
    s.seed = seed;
    let output = required(
        &config.paths.output,
        "output file (--output or paths.output)",
    )
    .config()?;

    let corpus = match generate_synthetic(&config.synth) {
        Ok(c) => c,
        Err(e @ (reltag::Error::Config(_) | reltag::Error::Infeasible(_))) => {
            return Err(Failure::Config(e.into()))
        }
        Err(e) => return Err(Failure::Runtime(e.into())),
    };
    save_records(output, &corpus.records).runtime()?;
    info!(
        "{} sentences, {} relations written to {}",
        corpus.records.len(),
        corpus.relation_names.len(),
        output.display()
    );
    Ok(())
}

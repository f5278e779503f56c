//! Per-sentence objective, mini-batch Adam training and early stopping.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    accumulate_grads, adam_step, scale_grads, AdamConfig, AdamState, Grads, Graph, NodeId,
};
use crate::datasets::Sentence;
use crate::encoder::{encode_graph, Dropout};
use crate::error::{Error, Result};
use crate::evaluation::{score_micro, MatchMode};
use crate::extraction::predict_corpus;
use crate::model::Model;
use crate::tagging::{build_gold_tags, object_prefix, tagger_graph, GoldTags, SUBJECT_PREFIX};

/// Learning rate used when fine-tuning a pre-trained encoder.
pub const FINE_TUNE_LR: f64 = 1e-5;

/// Which gold subjects contribute object terms to a sentence's loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Supervision {
    #[default]
    AllSubjects,
    /// One gold subject drawn uniformly per sentence and step.
    SampleOne,
}

impl FromStr for Supervision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all-subjects" => Ok(Self::AllSubjects),
            "sample-one" => Ok(Self::SampleOne),
            other => Err(Error::Config(format!("unknown supervision `{other}`"))),
        }
    }
}

impl fmt::Display for Supervision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::AllSubjects => "all-subjects",
            Self::SampleOne => "sample-one",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub threshold: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub supervision: Supervision,
    pub validation_mode: MatchMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 6,
            learning_rate: 1e-3,
            threshold: 0.5,
            patience: 7,
            max_epochs: 100,
            seed: 0,
            supervision: Supervision::AllSubjects,
            validation_mode: MatchMode::Partial,
        }
    }
}

impl TrainConfig {
    /// Settings for fine-tuning a pre-trained encoder.
    pub fn fine_tune() -> Self {
        Self {
            learning_rate: FINE_TUNE_LR,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config("threshold must lie in (0, 1)".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be positive".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be positive".into()));
        }
        Ok(())
    }
}

/// A sentence converted to token ids and gold tag fields.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSentence {
    pub ids: Vec<usize>,
    pub gold: GoldTags,
}

pub fn prepare(model: &Model, sentence: &Sentence) -> Result<PreparedSentence> {
    Ok(PreparedSentence {
        ids: model.token_ids(&sentence.tokens),
        gold: build_gold_tags(
            sentence.tokens.len(),
            &sentence.span_triples(),
            model.num_relations(),
        )?,
    })
}

/// Adds the loss of one sentence to `g`, restricted to the gold subjects at
/// indices `subjects` of `gold.per_subject`. Terms are summed in a fixed order:
/// subject field first, then each chosen subject's relations in id order.
pub fn sentence_loss_graph(
    g: &mut Graph<'_>,
    model: &Model,
    sentence: &PreparedSentence,
    subjects: &[usize],
    dropout: Option<&mut Dropout>,
) -> Result<NodeId> {
    let h = encode_graph(g, &sentence.ids, &model.encoder, dropout)?;
    let subject_probs = tagger_graph(g, h, SUBJECT_PREFIX)?;
    let mut loss = g.bce(subject_probs, sentence.gold.subject.to_matrix())?;
    for &k in subjects {
        let gold = &sentence.gold.per_subject[k];
        let v_sub = g.mean_rows(h, gold.subject.start, gold.subject.end)?;
        let conditioned = g.add_row(h, v_sub)?;
        for (r, field) in gold.objects.iter().enumerate() {
            let probs = tagger_graph(g, conditioned, &object_prefix(r))?;
            let term = g.bce(probs, field.to_matrix())?;
            loss = g.add(loss, term)?;
        }
    }
    Ok(loss)
}

fn chosen_subjects(
    sentence: &PreparedSentence,
    supervision: Supervision,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let n = sentence.gold.per_subject.len();
    match supervision {
        Supervision::AllSubjects => (0..n).collect(),
        Supervision::SampleOne if n == 0 => vec![],
        Supervision::SampleOne => vec![rng.random_range(0..n)],
    }
}

fn scalar(t: &crate::autodiff::Tensor) -> f64 {
    t[[0, 0]]
}

/// Loss of one sentence over every gold subject.
pub fn sentence_loss(model: &Model, sentence: &PreparedSentence) -> Result<f64> {
    let mut g = Graph::new(&model.params);
    let subjects: Vec<usize> = (0..sentence.gold.per_subject.len()).collect();
    let loss = sentence_loss_graph(&mut g, model, sentence, &subjects, None)?;
    Ok(scalar(&g.evaluate_node(&Default::default(), loss)?))
}

/// Loss and parameter gradients of one sentence.
pub fn sentence_loss_and_grads(
    model: &Model,
    sentence: &PreparedSentence,
    subjects: &[usize],
    dropout: Option<&mut Dropout>,
) -> Result<(f64, Grads)> {
    let mut g = Graph::new(&model.params);
    let loss = sentence_loss_graph(&mut g, model, sentence, subjects, dropout)?;
    let values = g.evaluate(&Default::default())?;
    let grads = g.gradient_from_values(&values, loss)?;
    Ok((scalar(&values[loss]), grads))
}

/// Mean loss and mean gradients over a batch, reduced in batch order.
pub fn batch_loss_and_grads(model: &Model, batch: &[&PreparedSentence]) -> Result<(f64, Grads)> {
    let parts: Vec<(f64, Grads)> = batch
        .par_iter()
        .map(|s| {
            sentence_loss_and_grads(
                model,
                s,
                &(0..s.gold.per_subject.len()).collect::<Vec<_>>(),
                None,
            )
        })
        .collect::<Result<_>>()?;
    reduce(model, parts)
}

fn reduce(model: &Model, parts: Vec<(f64, Grads)>) -> Result<(f64, Grads)> {
    let n = parts.len() as f64;
    let mut total = 0.0;
    let mut grads = model.params.zero_grads();
    for (loss, g) in &parts {
        total += loss;
        accumulate_grads(&mut grads, g);
    }
    scale_grads(&mut grads, 1.0 / n);
    Ok((total / n, grads))
}

/// Independent stream seed for one (epoch, slot) pair.
fn derive_seed(seed: u64, epoch: usize, slot: usize) -> u64 {
    let mut z = seed
        ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (slot as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss over the epoch's sentences.
    pub loss: f64,
    pub val_f1: f64,
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
}

impl TrainHistory {
    /// One JSON record per epoch. Wall-clock times are left out so that
    /// identical runs produce identical logs.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.best_epoch
            .and_then(|b| self.epochs.iter().find(|e| e.epoch == b))
    }
}

/// Trains on `train`, validating on `val` after every epoch with
/// Partial-Match micro-F1 (or the configured mode).
pub fn train(
    model: Model,
    train: &[Sentence],
    val: &[Sentence],
    config: &TrainConfig,
) -> Result<(Model, TrainHistory)> {
    train_with_validator(
        model,
        train,
        config,
        |m| {
            let preds = predict_corpus(m, val, config.threshold)?;
            let golds: Vec<_> = val.iter().map(Sentence::gold_triples).collect();
            Ok(score_micro(&preds, &golds, config.validation_mode)?.f1)
        },
        |_, _, _| Ok(()),
    )
}

/// Training loop with a caller-supplied validation score and an observer
/// called after every epoch with `(record, model, is_new_best)`.
///
/// Returns the parameters of the best validation epoch; ties keep the
/// earlier epoch.
pub fn train_with_validator(
    mut model: Model,
    train: &[Sentence],
    config: &TrainConfig,
    mut validate: impl FnMut(&Model) -> Result<f64>,
    mut observe: impl FnMut(&EpochRecord, &Model, bool) -> Result<()>,
) -> Result<(Model, TrainHistory)> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Config("training corpus is empty".into()));
    }
    let prepared: Vec<PreparedSentence> = train
        .iter()
        .map(|s| prepare(&model, s))
        .collect::<Result<_>>()?;
    let mut adam = AdamState::new(&model.params, AdamConfig::with_lr(config.learning_rate));
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, crate::autodiff::ParamStore)> = None;
    let mut stale = 0;

    for epoch in 1..=config.max_epochs {
        let started = Instant::now();
        let mut shuffle_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(config.seed, epoch, usize::MAX));
        order.shuffle(&mut shuffle_rng);

        let mut epoch_loss = 0.0;
        for (batch_index, chunk) in order.chunks(config.batch_size).enumerate() {
            let parts: Vec<(f64, Grads)> = chunk
                .par_iter()
                .map(|&i| {
                    let sentence = &prepared[i];
                    let stream = derive_seed(config.seed, epoch, i);
                    let mut rng = ChaCha8Rng::seed_from_u64(stream);
                    let subjects = chosen_subjects(sentence, config.supervision, &mut rng);
                    let mut dropout = Dropout::new(model.encoder.dropout, rng.random());
                    sentence_loss_and_grads(&model, sentence, &subjects, Some(&mut dropout))
                })
                .collect::<Result<_>>()?;
            epoch_loss += parts.iter().map(|(l, _)| l).sum::<f64>();
            let (loss, grads) = reduce(&model, parts)?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: batch_index,
                    loss,
                });
            }
            adam_step(&mut model.params, &grads, &mut adam)?;
        }

        let val_f1 = validate(&model)?;
        let record = EpochRecord {
            epoch,
            loss: epoch_loss / prepared.len() as f64,
            val_f1,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!("epoch {epoch}: loss {:.6} val F1 {val_f1:.4}", record.loss);
        let improved = best.as_ref().is_none_or(|(f, _)| val_f1 > *f);
        if improved {
            best = Some((val_f1, model.params.clone()));
            history.best_epoch = Some(epoch);
            stale = 0;
        } else {
            stale += 1;
        }
        observe(&record, &model, improved)?;
        history.epochs.push(record);
        if stale >= config.patience {
            log::info!("stopping after {epoch} epochs, no improvement in {stale}");
            break;
        }
    }

    if let Some((_, params)) = best {
        model.params = params;
    }
    Ok((model, history))
}

//! The complete tagging model: encoder, subject tagger and one object
//! tagger per relation, together with the vocabulary and relation names
//! needed to run it on raw tokens.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{load_params, save_params, ParamStore, Tensor};
use crate::datasets::RelationSet;
use crate::encoder::{self, init_params, EncodedSentence, EncoderConfig, ParamInit, Vocab};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::tagging::{head_param_shapes, BinaryTagger, ObjectTaggerParams, SUBJECT_PREFIX};

pub const PARAMS_FILE: &str = "params.ckpt";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const META_FILE: &str = "model.json";

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub encoder: EncoderConfig,
    pub vocab: Vocab,
    pub relations: RelationSet,
    pub params: ParamStore,
}

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    encoder: EncoderConfig,
    relations: RelationSet,
}

fn all_shapes(
    encoder: &EncoderConfig,
    relations: usize,
) -> Vec<(String, (usize, usize), ParamInit)> {
    let mut shapes = encoder.param_shapes();
    shapes.extend(head_param_shapes(encoder.hidden, relations));
    shapes
}

impl Model {
    /// Uniformly initialized model; `encoder.vocab_size` is taken from `vocab`.
    pub fn new(
        mut encoder: EncoderConfig,
        vocab: Vocab,
        relations: RelationSet,
        seed: u64,
    ) -> Result<Self> {
        encoder.vocab_size = vocab.len();
        encoder.validate()?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        init_params(
            &all_shapes(&encoder, relations.len()),
            &mut rng,
            &mut params,
        );
        Ok(Self {
            encoder,
            vocab,
            relations,
            params,
        })
    }

    /// Every parameter set to zero, so every tagger outputs exactly 0.5.
    pub fn zeros(mut encoder: EncoderConfig, vocab: Vocab, relations: RelationSet) -> Result<Self> {
        encoder.vocab_size = vocab.len();
        encoder.validate()?;
        let mut params = ParamStore::new();
        for (name, shape, _) in all_shapes(&encoder, relations.len()) {
            params.insert(name, Tensor::zeros(shape));
        }
        Ok(Self {
            encoder,
            vocab,
            relations,
            params,
        })
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn token_ids<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        self.vocab.ids(tokens)
    }

    pub fn encode(&self, ids: &[usize]) -> Result<EncodedSentence> {
        encoder::encode(&self.params, &self.encoder, ids)
    }

    pub fn subject_tagger(&self) -> Result<BinaryTagger> {
        BinaryTagger::from_store(&self.params, SUBJECT_PREFIX)
    }

    pub fn object_taggers(&self) -> Result<ObjectTaggerParams> {
        ObjectTaggerParams::from_store(&self.params, self.num_relations())
    }

    /// Checks that every expected parameter exists with the right shape.
    pub fn check_params(&self) -> Result<()> {
        let shapes = all_shapes(&self.encoder, self.num_relations());
        for (name, shape, _) in &shapes {
            match self.params.get(name) {
                Some(t) if t.dim() == *shape => {}
                Some(t) => {
                    return Err(Error::Shape(format!(
                        "parameter {name} is {:?}, expected {shape:?}",
                        t.dim()
                    )))
                }
                None => return Err(Error::Checkpoint(format!("missing parameter {name}"))),
            }
        }
        if self.params.len() != shapes.len() {
            return Err(Error::Checkpoint(
                "checkpoint holds unexpected parameters".into(),
            ));
        }
        Ok(())
    }

    /// Writes `model.json`, `vocab.txt` and `params.ckpt` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let meta = Meta {
            encoder: self.encoder.clone(),
            relations: self.relations.clone(),
        };
        write_atomic(
            &dir.join(META_FILE),
            serde_json::to_string_pretty(&meta)?.as_bytes(),
        )?;
        self.vocab.save(&dir.join(VOCAB_FILE))?;
        save_params(&self.params, &dir.join(PARAMS_FILE))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: Meta = serde_json::from_str(&fs::read_to_string(dir.join(META_FILE))?)?;
        let vocab = Vocab::load(&dir.join(VOCAB_FILE))?;
        let params = load_params(&dir.join(PARAMS_FILE))?;
        if vocab.len() != meta.encoder.vocab_size {
            return Err(Error::Vocab(format!(
                "vocabulary has {} entries, model expects {}",
                vocab.len(),
                meta.encoder.vocab_size
            )));
        }
        let model = Self {
            encoder: meta.encoder,
            vocab,
            relations: meta.relations,
            params,
        };
        model.check_params()?;
        Ok(model)
    }
}

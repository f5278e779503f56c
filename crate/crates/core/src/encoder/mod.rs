//! Token encoders: embeddings followed by a transformer stack or a BiLSTM.

mod bilstm;
mod transformer;
mod vocab;

pub use bilstm::encode_bilstm;
pub use transformer::encode_transformer;
pub use vocab::{Vocab, PAD, PAD_ID, UNK, UNK_ID};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Bindings, Graph, NodeId, ParamStore, Tensor};
use crate::error::{Error, Result};

pub const TOKEN_EMBEDDING: &str = "embed.token";
pub const POSITION_EMBEDDING: &str = "embed.position";

/// Bound of the uniform initializer.
pub const INIT_RANGE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Transformer,
    Bilstm,
}

impl std::str::FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transformer" => Ok(Self::Transformer),
            "bilstm" => Ok(Self::Bilstm),
            other => Err(Error::Config(format!("unknown encoder `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    /// Width `d` of every token vector.
    pub hidden: usize,
    /// Transformer blocks, or stacked BiLSTM layers.
    pub layers: usize,
    pub heads: usize,
    /// Inner width of the transformer feed-forward sublayer.
    pub ffn_hidden: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    /// Dropout on sublayer outputs during training; 0 disables it.
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            kind: EncoderKind::Transformer,
            hidden: 32,
            layers: 2,
            heads: 4,
            ffn_hidden: 128,
            max_len: 100,
            vocab_size: 2,
            dropout: 0.1,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::Config("hidden size must be positive".into()));
        }
        if self.max_len == 0 {
            return Err(Error::Config("max length must be at least 1".into()));
        }
        if self.vocab_size == 0 {
            return Err(Error::Config("empty vocabulary".into()));
        }
        if self.kind == EncoderKind::Transformer {
            if self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
                return Err(Error::Config(format!(
                    "head count {} does not divide hidden size {}",
                    self.heads, self.hidden
                )));
            }
            if self.layers > 0 && self.ffn_hidden == 0 {
                return Err(Error::Config("feed-forward width must be positive".into()));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} not in [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }

    /// Name and shape of every encoder parameter.
    pub fn param_shapes(&self) -> Vec<(String, (usize, usize), ParamInit)> {
        let d = self.hidden;
        let mut out = vec![
            (
                TOKEN_EMBEDDING.to_string(),
                (self.vocab_size, d),
                ParamInit::Uniform,
            ),
            (
                POSITION_EMBEDDING.to_string(),
                (self.max_len, d),
                ParamInit::Uniform,
            ),
        ];
        match self.kind {
            EncoderKind::Transformer => {
                for b in 0..self.layers {
                    out.extend(transformer::block_param_shapes(b, d, self.ffn_hidden));
                }
            }
            EncoderKind::Bilstm => {
                for l in 0..self.layers {
                    out.extend(bilstm::layer_param_shapes(l, d));
                }
            }
        }
        out
    }
}

/// How a parameter is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamInit {
    Uniform,
    Ones,
    Zeros,
}

/// Fills `store` with freshly initialized tensors for the given shapes.
pub fn init_params(
    shapes: &[(String, (usize, usize), ParamInit)],
    rng: &mut impl Rng,
    store: &mut ParamStore,
) {
    for (name, (rows, cols), init) in shapes {
        let t = match init {
            ParamInit::Uniform => Tensor::from_shape_fn((*rows, *cols), |_| {
                rng.random_range(-INIT_RANGE..INIT_RANGE)
            }),
            ParamInit::Ones => Tensor::ones((*rows, *cols)),
            ParamInit::Zeros => Tensor::zeros((*rows, *cols)),
        };
        store.insert(name.clone(), t);
    }
}

/// Inverted dropout applied while building a training graph.
#[derive(Debug, Clone)]
pub struct Dropout {
    rate: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Self {
        Self {
            rate,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn apply(&mut self, g: &mut Graph<'_>, x: NodeId) -> Result<NodeId> {
        if self.rate <= 0.0 {
            return Ok(x);
        }
        let shape = g.shape(x)?;
        let keep = 1.0 - self.rate;
        let mask = Tensor::from_shape_fn(shape, |_| {
            if self.rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        let m = g.constant(mask);
        Ok(g.mul(x, m)?)
    }
}

/// Per-token context vectors `h_N`, one row per token.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSentence {
    pub hidden: Tensor,
}

impl EncodedSentence {
    pub fn len(&self) -> usize {
        self.hidden.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.hidden.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.hidden.ncols()
    }
}

/// Adds `h_0[i] = W_s[token_i] + W_p[i]` to the graph.
pub fn embed(g: &mut Graph<'_>, tokens: &[usize], config: &EncoderConfig) -> Result<NodeId> {
    if tokens.len() > config.max_len {
        return Err(Error::TooLong {
            len: tokens.len(),
            max: config.max_len,
        });
    }
    if tokens.is_empty() {
        return Err(Error::Config("cannot encode an empty sentence".into()));
    }
    let table = g.param(TOKEN_EMBEDDING)?;
    let vocab = g.shape(table)?.0;
    if let Some(&id) = tokens.iter().find(|&&id| id >= vocab) {
        return Err(Error::TokenOutOfRange { id, vocab });
    }
    let words = g.gather_rows(table, tokens)?;
    let positions = g.param(POSITION_EMBEDDING)?;
    let positions = g.slice_rows(positions, 0, tokens.len())?;
    Ok(g.add(words, positions)?)
}

/// Runs the configured encoder stack on `h0`.
pub fn encode_stack(
    g: &mut Graph<'_>,
    h0: NodeId,
    config: &EncoderConfig,
    dropout: Option<&mut Dropout>,
) -> Result<NodeId> {
    match config.kind {
        EncoderKind::Transformer => encode_transformer(g, h0, config, dropout),
        EncoderKind::Bilstm => encode_bilstm(g, h0, config, dropout),
    }
}

/// Embeds and encodes `tokens`, returning the `h_N` node.
pub fn encode_graph(
    g: &mut Graph<'_>,
    tokens: &[usize],
    config: &EncoderConfig,
    dropout: Option<&mut Dropout>,
) -> Result<NodeId> {
    let h0 = embed(g, tokens, config)?;
    encode_stack(g, h0, config, dropout)
}

/// Inference-time encoding of a token-id sequence.
pub fn encode(
    params: &ParamStore,
    config: &EncoderConfig,
    tokens: &[usize],
) -> Result<EncodedSentence> {
    let mut g = Graph::new(params);
    let out = encode_graph(&mut g, tokens, config, None)?;
    let hidden = g.evaluate_node(&Bindings::new(), out)?;
    Ok(EncodedSentence { hidden })
}

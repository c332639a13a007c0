//! Interface shared by both summarization models.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Batch;
use crate::error::{Error, Result};
use crate::seq2seq::{Seq2Seq, Seq2SeqConfig};
use crate::tensor::{Array, Dropout, ParamId, ParamStore, Tape, Tensor};
use crate::transformer::{Transformer, TransformerConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Transformer,
    Seq2Seq,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Transformer => "transformer",
            ModelKind::Seq2Seq => "seq2seq",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transformer" => Ok(ModelKind::Transformer),
            "seq2seq" | "rnn" => Ok(ModelKind::Seq2Seq),
            other => Err(Error::invalid(format!("unknown model kind {other:?}"))),
        }
    }
}

/// Teacher-forced loss for one batch.
pub struct LossOutput<'t> {
    /// Mean cross-entropy over non-pad target positions.
    pub loss: Tensor<'t>,
    /// Summed cross-entropy, for perplexity pooling across batches.
    pub total: f64,
    /// Non-pad target positions scored.
    pub tokens: usize,
}

/// Logits for the next target position plus the attention used to get them.
pub struct StepOutput {
    pub logits: Vec<f64>,
    /// `[layer][head][source position]`.
    pub attention: Vec<Vec<Vec<f64>>>,
}

/// Incremental decoder over a single source sequence.
pub trait StepDecoder {
    /// Feeds the previously emitted id and returns scores for the next one.
    fn step(&mut self, prev: usize) -> Result<StepOutput>;
}

pub trait Summarizer: Send + Sync {
    fn kind(&self) -> ModelKind;

    fn params(&self) -> &ParamStore;

    fn params_mut(&mut self) -> &mut ParamStore;

    /// Dropout probability used while training.
    fn train_dropout(&self) -> f64;

    fn loss<'t>(&self, tape: &'t Tape, batch: &Batch, dropout: &mut Dropout) -> Result<LossOutput<'t>>;

    fn start_decoding<'a>(&'a self, src: &[usize]) -> Result<Box<dyn StepDecoder + 'a>>;

    /// Hyperparameters as ordered key/value text.
    fn config_entries(&self) -> Vec<(String, String)>;
}

/// Either model behind one type, as stored in checkpoints.
#[derive(Clone, Debug)]
pub enum AnyModel {
    Transformer(Transformer),
    Seq2Seq(Seq2Seq),
}

impl AnyModel {
    /// A freshly initialised model of `kind` from key/value configuration.
    pub fn from_config(kind: ModelKind, entries: &BTreeMap<String, String>, seed: u64) -> Result<Self> {
        Ok(match kind {
            ModelKind::Transformer => AnyModel::Transformer(Transformer::new(TransformerConfig::from_entries(entries)?, seed)?),
            ModelKind::Seq2Seq => AnyModel::Seq2Seq(Seq2Seq::new(Seq2SeqConfig::from_entries(entries)?, seed)?),
        })
    }

    fn inner(&self) -> &dyn Summarizer {
        match self {
            AnyModel::Transformer(m) => m,
            AnyModel::Seq2Seq(m) => m,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Summarizer {
        match self {
            AnyModel::Transformer(m) => m,
            AnyModel::Seq2Seq(m) => m,
        }
    }
}

impl From<Transformer> for AnyModel {
    fn from(m: Transformer) -> Self {
        AnyModel::Transformer(m)
    }
}

impl From<Seq2Seq> for AnyModel {
    fn from(m: Seq2Seq) -> Self {
        AnyModel::Seq2Seq(m)
    }
}

impl Summarizer for AnyModel {
    fn kind(&self) -> ModelKind {
        self.inner().kind()
    }

    fn params(&self) -> &ParamStore {
        self.inner().params()
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        self.inner_mut().params_mut()
    }

    fn train_dropout(&self) -> f64 {
        self.inner().train_dropout()
    }

    fn loss<'t>(&self, tape: &'t Tape, batch: &Batch, dropout: &mut Dropout) -> Result<LossOutput<'t>> {
        self.inner().loss(tape, batch, dropout)
    }

    fn start_decoding<'a>(&'a self, src: &[usize]) -> Result<Box<dyn StepDecoder + 'a>> {
        self.inner().start_decoding(src)
    }

    fn config_entries(&self) -> Vec<(String, String)> {
        self.inner().config_entries()
    }
}

/// Affine map over the last dimension.
pub(crate) fn linear<'t>(x: &Tensor<'t>, w: &Tensor<'t>, b: Option<&Tensor<'t>>) -> Result<Tensor<'t>> {
    let y = x.matmul(w)?;
    match b {
        Some(b) => y.add(b),
        None => Ok(y),
    }
}

/// Parses a required key from configuration entries.
pub(crate) fn entry<T: FromStr>(entries: &BTreeMap<String, String>, key: &str) -> Result<T> {
    let raw = entries
        .get(key)
        .ok_or_else(|| Error::Format(format!("missing config key {key:?}")))?;
    raw.parse()
        .map_err(|_| Error::Format(format!("bad value {raw:?} for config key {key:?}")))
}

/// Initialises `store` entries in a fixed order so that parameter layout is
/// reproducible from the configuration alone.
pub(crate) struct Init<'a, R> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut R,
}

impl<R: rand::Rng> Init<'_, R> {
    pub fn matrix(&mut self, name: String, shape: &[usize]) -> ParamId {
        self.store.add_xavier(name, shape, self.rng)
    }

    pub fn zeros(&mut self, name: String, len: usize) -> ParamId {
        self.store.add(name, Array::zeros(&[len]))
    }

    pub fn ones(&mut self, name: String, len: usize) -> ParamId {
        self.store.add(name, Array::full(&[len], 1.0))
    }
}

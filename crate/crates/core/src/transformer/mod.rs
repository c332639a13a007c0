//! Encoder-decoder Transformer: `N` post-norm layers per side, multi-head
//! scaled dot-product attention, position-wise feed-forward sublayers and
//! fixed sinusoidal positions.

mod attention;

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use attention::{multi_head_attention, positional_encoding, scaled_dot_attention, MultiHeadParams};

use crate::corpus::{Batch, PAD};
use crate::error::{Error, Result};
use crate::model::{entry, linear, Init, LossOutput, ModelKind, StepDecoder, StepOutput, Summarizer};
use crate::tensor::{Array, Dropout, Mask, ParamId, ParamStore, Tape, Tensor};

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct TransformerConfig {
    /// Layers in each of the encoder and decoder stacks.
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_k: usize,
    pub d_v: usize,
    pub d_ff: usize,
    pub src_vocab_size: usize,
    pub tgt_vocab_size: usize,
    pub dropout: f64,
    /// Positional-encoding horizon; bounds both source and target length.
    pub max_len: usize,
}

impl TransformerConfig {
    /// Config with `d_k = d_v = d_model / heads`, dropout 0.1 and a
    /// 128-position horizon.
    pub fn new(src_vocab_size: usize, tgt_vocab_size: usize, layers: usize, d_model: usize, heads: usize, d_ff: usize) -> Self {
        let per_head = (d_model / heads.max(1)).max(1);
        Self {
            layers,
            d_model,
            heads,
            d_k: per_head,
            d_v: per_head,
            d_ff,
            src_vocab_size,
            tgt_vocab_size,
            dropout: 0.1,
            max_len: 128,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("d_k", self.d_k),
            ("d_v", self.d_v),
            ("d_ff", self.d_ff),
            ("src_vocab_size", self.src_vocab_size),
            ("tgt_vocab_size", self.tgt_vocab_size),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("transformer {name} must be positive")));
        }
        if self.max_len < 100 {
            return Err(Error::invalid("transformer max_len must cover 100 source tokens"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Exact number of scalar parameters.
    pub fn count_parameters(&self) -> usize {
        let d = self.d_model;
        let mha = MultiHeadParams::scalar_count(d, self.heads, self.d_k, self.d_v);
        let norm = 2 * d;
        let ffn = d * self.d_ff + self.d_ff + self.d_ff * d + d;
        let encoder_layer = mha + ffn + 2 * norm;
        let decoder_layer = 2 * mha + ffn + 3 * norm;
        (self.src_vocab_size + self.tgt_vocab_size) * d
            + self.layers * (encoder_layer + decoder_layer)
            + (d + 1) * self.tgt_vocab_size
    }

    pub fn to_entries(&self) -> Vec<(String, String)> {
        [
            ("layers", self.layers.to_string()),
            ("d_model", self.d_model.to_string()),
            ("heads", self.heads.to_string()),
            ("d_k", self.d_k.to_string()),
            ("d_v", self.d_v.to_string()),
            ("d_ff", self.d_ff.to_string()),
            ("src_vocab_size", self.src_vocab_size.to_string()),
            ("tgt_vocab_size", self.tgt_vocab_size.to_string()),
            ("dropout", self.dropout.to_string()),
            ("max_len", self.max_len.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn from_entries(e: &BTreeMap<String, String>) -> Result<Self> {
        Ok(Self {
            layers: entry(e, "layers")?,
            d_model: entry(e, "d_model")?,
            heads: entry(e, "heads")?,
            d_k: entry(e, "d_k")?,
            d_v: entry(e, "d_v")?,
            d_ff: entry(e, "d_ff")?,
            src_vocab_size: entry(e, "src_vocab_size")?,
            tgt_vocab_size: entry(e, "tgt_vocab_size")?,
            dropout: entry(e, "dropout")?,
            max_len: entry(e, "max_len")?,
        })
    }
}

#[derive(Clone, Debug)]
struct Norm {
    gain: ParamId,
    bias: ParamId,
}

#[derive(Clone, Debug)]
struct FeedForward {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Clone, Debug)]
struct EncoderLayer {
    self_attn: MultiHeadParams,
    norm1: Norm,
    ffn: FeedForward,
    norm2: Norm,
}

#[derive(Clone, Debug)]
struct DecoderLayer {
    self_attn: MultiHeadParams,
    norm1: Norm,
    cross_attn: MultiHeadParams,
    norm2: Norm,
    ffn: FeedForward,
    norm3: Norm,
}

#[derive(Clone, Debug)]
pub struct Transformer {
    config: TransformerConfig,
    params: ParamStore,
    src_embed: ParamId,
    tgt_embed: ParamId,
    encoder: Vec<EncoderLayer>,
    decoder: Vec<DecoderLayer>,
    out_w: ParamId,
    out_b: ParamId,
    positions: Arc<Array>,
}

impl<R: rand::Rng> Init<'_, R> {
    fn mha(&mut self, prefix: &str, c: &TransformerConfig) -> MultiHeadParams {
        let mut per_head = |kind: &str, width: usize| -> Vec<ParamId> {
            (0..c.heads)
                .map(|i| self.matrix(format!("{prefix}.{kind}.{i}"), &[c.d_model, width]))
                .collect()
        };
        let query = per_head("wq", c.d_k);
        let key = per_head("wk", c.d_k);
        let value = per_head("wv", c.d_v);
        let output = self.matrix(format!("{prefix}.wo"), &[c.heads * c.d_v, c.d_model]);
        MultiHeadParams { query, key, value, output }
    }

    fn norm(&mut self, prefix: &str, d: usize) -> Norm {
        Norm {
            gain: self.ones(format!("{prefix}.gain"), d),
            bias: self.zeros(format!("{prefix}.bias"), d),
        }
    }

    fn ffn(&mut self, prefix: &str, d: usize, d_ff: usize) -> FeedForward {
        FeedForward {
            w1: self.matrix(format!("{prefix}.w1"), &[d, d_ff]),
            b1: self.zeros(format!("{prefix}.b1"), d_ff),
            w2: self.matrix(format!("{prefix}.w2"), &[d_ff, d]),
            b2: self.zeros(format!("{prefix}.b2"), d),
        }
    }
}

/// Key-padding mask `[batch, queries, keys]`, optionally causal.
fn attention_mask(batch: usize, queries: usize, key_mask: &[bool], causal: bool) -> Mask {
    let keys = key_mask.len() / batch;
    Mask::from_fn(&[batch, queries, keys], |flat| {
        let b = flat / (queries * keys);
        let (i, j) = ((flat / keys) % queries, flat % keys);
        key_mask[b * keys + j] && (!causal || j <= i)
    })
}

/// Decoder output plus per-layer, per-head cross-attention grids.
pub struct DecoderOutput<'t> {
    pub logits: Tensor<'t>,
    pub cross_attention: Vec<Vec<Tensor<'t>>>,
}

impl Transformer {
    pub fn new(config: TransformerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init {
            store: &mut params,
            rng: &mut rng,
        };
        let c = &config;
        let src_embed = init.matrix("src_embed".into(), &[c.src_vocab_size, c.d_model]);
        let tgt_embed = init.matrix("tgt_embed".into(), &[c.tgt_vocab_size, c.d_model]);
        let encoder = (0..c.layers)
            .map(|l| EncoderLayer {
                self_attn: init.mha(&format!("enc.{l}.self_attn"), c),
                norm1: init.norm(&format!("enc.{l}.norm1"), c.d_model),
                ffn: init.ffn(&format!("enc.{l}.ffn"), c.d_model, c.d_ff),
                norm2: init.norm(&format!("enc.{l}.norm2"), c.d_model),
            })
            .collect();
        let decoder = (0..c.layers)
            .map(|l| DecoderLayer {
                self_attn: init.mha(&format!("dec.{l}.self_attn"), c),
                norm1: init.norm(&format!("dec.{l}.norm1"), c.d_model),
                cross_attn: init.mha(&format!("dec.{l}.cross_attn"), c),
                norm2: init.norm(&format!("dec.{l}.norm2"), c.d_model),
                ffn: init.ffn(&format!("dec.{l}.ffn"), c.d_model, c.d_ff),
                norm3: init.norm(&format!("dec.{l}.norm3"), c.d_model),
            })
            .collect();
        let out_w = init.matrix("out.w".into(), &[c.d_model, c.tgt_vocab_size]);
        let out_b = init.zeros("out.b".into(), c.tgt_vocab_size);
        let positions = Arc::new(positional_encoding(c.max_len, c.d_model));
        Ok(Self {
            config,
            params,
            src_embed,
            tgt_embed,
            encoder,
            decoder,
            out_w,
            out_b,
            positions,
        })
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.config
    }

    /// Replaces the positional table, e.g. with zeros to probe order sensitivity.
    pub fn set_positional_table(&mut self, table: Array) -> Result<()> {
        let expected = [self.config.max_len, self.config.d_model];
        if table.shape() != expected {
            return Err(Error::shape("set_positional_table", &expected, table.shape()));
        }
        self.positions = Arc::new(table);
        Ok(())
    }

    pub fn output_projection(&self) -> (ParamId, ParamId) {
        (self.out_w, self.out_b)
    }

    fn embed<'t>(
        &self,
        tape: &'t Tape,
        table: ParamId,
        ids: &[usize],
        batch: usize,
        len: usize,
        dropout: &mut Dropout,
    ) -> Result<Tensor<'t>> {
        if len > self.config.max_len {
            return Err(Error::TooLong {
                len,
                max: self.config.max_len,
            });
        }
        let d = self.config.d_model;
        let x = tape
            .param(&self.params, table)
            .embedding(ids, &[batch, len])?
            .scale((d as f64).sqrt())?;
        let pe = Array::from_parts(vec![len, d], self.positions.data()[..len * d].to_vec());
        x.add(&tape.constant(pe))?.dropout(dropout)
    }

    fn norm<'t>(&self, tape: &'t Tape, norm: &Norm, x: &Tensor<'t>) -> Result<Tensor<'t>> {
        x.layer_norm(&tape.param(&self.params, norm.gain), &tape.param(&self.params, norm.bias), LN_EPS)
    }

    /// `LayerNorm(x + Dropout(sublayer))`.
    fn residual<'t>(
        &self,
        tape: &'t Tape,
        norm: &Norm,
        x: &Tensor<'t>,
        sub: Tensor<'t>,
        dropout: &mut Dropout,
    ) -> Result<Tensor<'t>> {
        self.norm(tape, norm, &x.add(&sub.dropout(dropout)?)?)
    }

    fn feed_forward<'t>(&self, tape: &'t Tape, ffn: &FeedForward, x: &Tensor<'t>) -> Result<Tensor<'t>> {
        let p = |id| tape.param(&self.params, id);
        let hidden = linear(x, &p(ffn.w1), Some(&p(ffn.b1)))?.relu()?;
        linear(&hidden, &p(ffn.w2), Some(&p(ffn.b2)))
    }

    /// Encodes `[batch, src_len]` ids into memory `[batch, src_len, d_model]`.
    pub fn encoder_forward<'t>(
        &self,
        tape: &'t Tape,
        src_ids: &[usize],
        src_mask: &[bool],
        batch: usize,
        dropout: &mut Dropout,
    ) -> Result<Tensor<'t>> {
        let len = src_ids.len() / batch;
        let mask = attention_mask(batch, len, src_mask, false);
        let mut x = self.embed(tape, self.src_embed, src_ids, batch, len, dropout)?;
        for layer in &self.encoder {
            let (attn, _) = multi_head_attention(tape, &self.params, &layer.self_attn, &x, &x, &x, Some(&mask))?;
            x = self.residual(tape, &layer.norm1, &x, attn, dropout)?;
            let ff = self.feed_forward(tape, &layer.ffn, &x)?;
            x = self.residual(tape, &layer.norm2, &x, ff, dropout)?;
        }
        Ok(x)
    }

    /// Decodes `[batch, tgt_len]` input ids against encoder memory.
    pub fn decoder_forward<'t>(
        &self,
        tape: &'t Tape,
        tgt_ids: &[usize],
        memory: &Tensor<'t>,
        src_mask: &[bool],
        batch: usize,
        dropout: &mut Dropout,
    ) -> Result<DecoderOutput<'t>> {
        let len = tgt_ids.len() / batch;
        let tgt_mask: Vec<bool> = tgt_ids.iter().map(|&i| i != PAD).collect();
        let self_mask = attention_mask(batch, len, &tgt_mask, true);
        let cross_mask = attention_mask(batch, len, src_mask, false);
        let mut x = self.embed(tape, self.tgt_embed, tgt_ids, batch, len, dropout)?;
        let mut cross_attention = Vec::with_capacity(self.decoder.len());
        for layer in &self.decoder {
            let (attn, _) = multi_head_attention(tape, &self.params, &layer.self_attn, &x, &x, &x, Some(&self_mask))?;
            x = self.residual(tape, &layer.norm1, &x, attn, dropout)?;
            let (cross, weights) =
                multi_head_attention(tape, &self.params, &layer.cross_attn, &x, memory, memory, Some(&cross_mask))?;
            cross_attention.push(weights);
            x = self.residual(tape, &layer.norm2, &x, cross, dropout)?;
            let ff = self.feed_forward(tape, &layer.ffn, &x)?;
            x = self.residual(tape, &layer.norm3, &x, ff, dropout)?;
        }
        let p = |id| tape.param(&self.params, id);
        let logits = linear(&x, &p(self.out_w), Some(&p(self.out_b)))?;
        Ok(DecoderOutput { logits, cross_attention })
    }

    /// Teacher-forced logits `[batch, tgt_len - 1, tgt_vocab]` for a batch.
    pub fn batch_logits<'t>(&self, tape: &'t Tape, batch: &Batch, dropout: &mut Dropout) -> Result<Tensor<'t>> {
        let memory = self.encoder_forward(tape, &batch.src_ids, &batch.src_mask, batch.size, dropout)?;
        let out = self.decoder_forward(tape, &batch.decoder_input(), &memory, &batch.src_mask, batch.size, dropout)?;
        Ok(out.logits)
    }
}

impl Summarizer for Transformer {
    fn kind(&self) -> ModelKind {
        ModelKind::Transformer
    }

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn train_dropout(&self) -> f64 {
        self.config.dropout
    }

    fn loss<'t>(&self, tape: &'t Tape, batch: &Batch, dropout: &mut Dropout) -> Result<LossOutput<'t>> {
        let logits = self.batch_logits(tape, batch, dropout)?;
        let targets = batch.decoder_target();
        let loss = logits.cross_entropy(&targets, PAD)?;
        let tokens = targets.iter().filter(|&&t| t != PAD).count();
        let total = loss.value().item() * tokens as f64;
        Ok(LossOutput { loss, total, tokens })
    }

    fn start_decoding<'a>(&'a self, src: &[usize]) -> Result<Box<dyn StepDecoder + 'a>> {
        if src.is_empty() {
            return Err(Error::EmptySequence);
        }
        let tape = Tape::new();
        let mask = vec![true; src.len()];
        let memory = self.encoder_forward(&tape, src, &mask, 1, &mut Dropout::eval())?;
        Ok(Box::new(TransformerDecoder {
            model: self,
            memory: memory.value(),
            src_mask: mask,
            prefix: Vec::new(),
        }))
    }

    fn config_entries(&self) -> Vec<(String, String)> {
        self.config.to_entries()
    }
}

struct TransformerDecoder<'a> {
    model: &'a Transformer,
    memory: Arc<Array>,
    src_mask: Vec<bool>,
    prefix: Vec<usize>,
}

impl StepDecoder for TransformerDecoder<'_> {
    fn step(&mut self, prev: usize) -> Result<StepOutput> {
        self.prefix.push(prev);
        let tape = Tape::new();
        let memory = tape.constant((*self.memory).clone());
        let out = self
            .model
            .decoder_forward(&tape, &self.prefix, &memory, &self.src_mask, 1, &mut Dropout::eval())?;
        let vocab = self.model.config.tgt_vocab_size;
        let last = self.prefix.len() - 1;
        let logits = out.logits.value().data()[last * vocab..].to_vec();
        let src_len = self.src_mask.len();
        let attention = out
            .cross_attention
            .iter()
            .map(|heads| {
                heads
                    .iter()
                    .map(|w| w.value().data()[last * src_len..].to_vec())
                    .collect()
            })
            .collect();
        Ok(StepOutput { logits, attention })
    }
}

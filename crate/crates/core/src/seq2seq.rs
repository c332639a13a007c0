//! Recurrent attentional encoder-decoder baseline.
//!
//! A bidirectional GRU encodes the method. The two final states are
//! concatenated and linearly projected to initialise a unidirectional GRU
//! decoder. At each target step the new decoder state scores every encoder
//! state with a bilinear form `sᵀ W_a h_j`, the softmax-weighted encoder
//! states form a context vector, and `[context; state]` goes through a
//! linear layer to vocabulary logits.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Batch, PAD};
use crate::error::{Error, Result};
use crate::model::{entry, linear, Init, LossOutput, ModelKind, StepDecoder, StepOutput, Summarizer};
use crate::tensor::{Array, Dropout, Mask, ParamId, ParamStore, Tape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Seq2SeqConfig {
    pub src_vocab_size: usize,
    pub tgt_vocab_size: usize,
    pub embed_dim: usize,
    /// Hidden width per direction.
    pub hidden_dim: usize,
    pub dropout: f64,
    pub max_decode_len: usize,
}

impl Seq2SeqConfig {
    pub fn new(src_vocab_size: usize, tgt_vocab_size: usize, embed_dim: usize, hidden_dim: usize) -> Self {
        Self {
            src_vocab_size,
            tgt_vocab_size,
            embed_dim,
            hidden_dim,
            dropout: 0.1,
            max_decode_len: 14,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.src_vocab_size, self.tgt_vocab_size, self.embed_dim, self.hidden_dim].contains(&0) {
            return Err(Error::invalid("seq2seq dimensions must be positive"));
        }
        if self.max_decode_len < 14 {
            return Err(Error::invalid("seq2seq max_decode_len must be at least 14"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn count_parameters(&self) -> usize {
        let (e, h) = (self.embed_dim, self.hidden_dim);
        let gru = 3 * h * (e + h) + 6 * h;
        (self.src_vocab_size + self.tgt_vocab_size) * e
            + 3 * gru
            + 2 * h * h
            + h * 2 * h
            + (3 * h + 1) * self.tgt_vocab_size
    }

    pub fn to_entries(&self) -> Vec<(String, String)> {
        [
            ("src_vocab_size", self.src_vocab_size.to_string()),
            ("tgt_vocab_size", self.tgt_vocab_size.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("hidden_dim", self.hidden_dim.to_string()),
            ("dropout", self.dropout.to_string()),
            ("max_decode_len", self.max_decode_len.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn from_entries(e: &BTreeMap<String, String>) -> Result<Self> {
        Ok(Self {
            src_vocab_size: entry(e, "src_vocab_size")?,
            tgt_vocab_size: entry(e, "tgt_vocab_size")?,
            embed_dim: entry(e, "embed_dim")?,
            hidden_dim: entry(e, "hidden_dim")?,
            dropout: entry(e, "dropout")?,
            max_decode_len: entry(e, "max_decode_len")?,
        })
    }
}

/// Gated recurrent unit weights; gates are packed as `[reset | update | candidate]`.
#[derive(Clone, Debug)]
struct Gru {
    w_x: ParamId,
    b_x: ParamId,
    w_h: ParamId,
    b_h: ParamId,
}

impl<R: rand::Rng> Init<'_, R> {
    fn gru(&mut self, prefix: &str, input: usize, hidden: usize) -> Gru {
        Gru {
            w_x: self.matrix(format!("{prefix}.w_x"), &[input, 3 * hidden]),
            b_x: self.zeros(format!("{prefix}.b_x"), 3 * hidden),
            w_h: self.matrix(format!("{prefix}.w_h"), &[hidden, 3 * hidden]),
            b_h: self.zeros(format!("{prefix}.b_h"), 3 * hidden),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Seq2Seq {
    config: Seq2SeqConfig,
    params: ParamStore,
    src_embed: ParamId,
    tgt_embed: ParamId,
    enc_fwd: Gru,
    enc_bwd: Gru,
    dec: Gru,
    w_init: ParamId,
    w_att: ParamId,
    w_out: ParamId,
    b_out: ParamId,
}

/// Encoder outputs for a batch.
pub struct Encoded<'t> {
    /// `[batch, src_len, 2 * hidden]`, forward and backward states per step.
    pub states: Tensor<'t>,
    /// `[batch, hidden]`, projected concatenation of both final states.
    pub init_state: Tensor<'t>,
}

/// One decoder step.
pub struct Step<'t> {
    pub logits: Tensor<'t>,
    pub state: Tensor<'t>,
    pub weights: Tensor<'t>,
}

impl Seq2Seq {
    pub fn new(config: Seq2SeqConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init {
            store: &mut params,
            rng: &mut rng,
        };
        let (e, h) = (config.embed_dim, config.hidden_dim);
        let src_embed = init.matrix("src_embed".into(), &[config.src_vocab_size, e]);
        let tgt_embed = init.matrix("tgt_embed".into(), &[config.tgt_vocab_size, e]);
        let enc_fwd = init.gru("enc.fwd", e, h);
        let enc_bwd = init.gru("enc.bwd", e, h);
        let dec = init.gru("dec", e, h);
        let w_init = init.matrix("w_init".into(), &[2 * h, h]);
        let w_att = init.matrix("w_att".into(), &[h, 2 * h]);
        let w_out = init.matrix("out.w".into(), &[3 * h, config.tgt_vocab_size]);
        let b_out = init.zeros("out.b".into(), config.tgt_vocab_size);
        Ok(Self {
            config,
            params,
            src_embed,
            tgt_embed,
            enc_fwd,
            enc_bwd,
            dec,
            w_init,
            w_att,
            w_out,
            b_out,
        })
    }

    pub fn config(&self) -> &Seq2SeqConfig {
        &self.config
    }

    pub fn attention_matrix(&self) -> ParamId {
        self.w_att
    }

    pub fn output_projection(&self) -> (ParamId, ParamId) {
        (self.w_out, self.b_out)
    }

    fn p<'t>(&self, tape: &'t Tape, id: ParamId) -> Tensor<'t> {
        tape.param(&self.params, id)
    }

    /// Input-side gate pre-activations `x W_x + b_x` for every position.
    fn input_gates<'t>(&self, tape: &'t Tape, cell: &Gru, x: &Tensor<'t>) -> Result<Tensor<'t>> {
        linear(x, &self.p(tape, cell.w_x), Some(&self.p(tape, cell.b_x)))
    }

    /// One GRU update from precomputed input gates `[batch, 3h]`.
    fn gru_step<'t>(&self, tape: &'t Tape, cell: &Gru, gates_x: &Tensor<'t>, h: &Tensor<'t>) -> Result<Tensor<'t>> {
        let hd = self.config.hidden_dim;
        let gates_h = linear(h, &self.p(tape, cell.w_h), Some(&self.p(tape, cell.b_h)))?;
        let r = gates_x.narrow(1, 0, hd)?.add(&gates_h.narrow(1, 0, hd)?)?.sigmoid()?;
        let z = gates_x.narrow(1, hd, hd)?.add(&gates_h.narrow(1, hd, hd)?)?.sigmoid()?;
        let n = gates_x
            .narrow(1, 2 * hd, hd)?
            .add(&r.mul(&gates_h.narrow(1, 2 * hd, hd)?)?)?
            .tanh()?;
        // (1 - z) * n + z * h
        n.add(&z.mul(&h.sub(&n)?)?)
    }

    /// Keeps `prev` where the step is padding.
    fn gate<'t>(&self, new: Tensor<'t>, prev: &Tensor<'t>, step_mask: &[bool]) -> Result<Tensor<'t>> {
        if step_mask.iter().all(|&m| m) {
            return Ok(new);
        }
        let hd = self.config.hidden_dim;
        let m = Array::from_fn(&[step_mask.len(), hd], |i| if step_mask[i / hd] { 1.0 } else { 0.0 });
        prev.add(&new.sub(prev)?.mul_const(Arc::new(m))?)
    }

    pub fn encode<'t>(
        &self,
        tape: &'t Tape,
        src_ids: &[usize],
        src_mask: &[bool],
        batch: usize,
        dropout: &mut Dropout,
    ) -> Result<Encoded<'t>> {
        let len = src_ids.len() / batch;
        let hd = self.config.hidden_dim;
        let emb = self.p(tape, self.src_embed).embedding(src_ids, &[batch, len])?.dropout(dropout)?;
        let step_mask = |t: usize| -> Vec<bool> { (0..batch).map(|b| src_mask[b * len + t]).collect() };
        let zero = tape.constant(Array::zeros(&[batch, hd]));

        let gx = self.input_gates(tape, &self.enc_fwd, &emb)?;
        let mut h = zero;
        let mut forward = Vec::with_capacity(len);
        for t in 0..len {
            let new = self.gru_step(tape, &self.enc_fwd, &gx.select(1, t)?, &h)?;
            h = self.gate(new, &h, &step_mask(t))?;
            forward.push(h);
        }
        let final_fwd = h;

        let gx = self.input_gates(tape, &self.enc_bwd, &emb)?;
        let mut h = zero;
        let mut backward = vec![zero; len];
        for t in (0..len).rev() {
            let new = self.gru_step(tape, &self.enc_bwd, &gx.select(1, t)?, &h)?;
            h = self.gate(new, &h, &step_mask(t))?;
            backward[t] = h;
        }
        let final_bwd = h;

        let states = tape.concat(&[tape.stack(&forward, 1)?, tape.stack(&backward, 1)?], 2)?;
        let init_state = tape.concat(&[final_fwd, final_bwd], 1)?.matmul(&self.p(tape, self.w_init))?;
        Ok(Encoded { states, init_state })
    }

    /// Bilinear attention weights `[batch, src_len]` of a decoder state over
    /// encoder states.
    pub fn attention_scores<'t>(
        &self,
        tape: &'t Tape,
        state: &Tensor<'t>,
        enc_states: &Tensor<'t>,
        src_mask: &[bool],
    ) -> Result<Tensor<'t>> {
        let shape = enc_states.shape();
        let (batch, len, width) = (shape[0], shape[1], shape[2]);
        for (row, keys) in src_mask.chunks_exact(len).enumerate() {
            if !keys.iter().any(|&k| k) {
                return Err(Error::FullyMasked { row });
            }
        }
        let query = state.matmul(&self.p(tape, self.w_att))?.reshape(&[batch, width, 1])?;
        let scores = enc_states.matmul(&query)?.reshape(&[batch, len])?;
        let mask = Mask::new(vec![batch, len], src_mask.to_vec())?;
        scores.masked_fill(&mask)?.softmax(1)
    }

    /// Recurrent update, attention and `[context; state]` features.
    fn step_features<'t>(
        &self,
        tape: &'t Tape,
        gates_x: &Tensor<'t>,
        state: &Tensor<'t>,
        enc_states: &Tensor<'t>,
        src_mask: &[bool],
    ) -> Result<(Tensor<'t>, Tensor<'t>, Tensor<'t>)> {
        let state = self.gru_step(tape, &self.dec, gates_x, state)?;
        let weights = self.attention_scores(tape, &state, enc_states, src_mask)?;
        let shape = enc_states.shape();
        let (batch, len, width) = (shape[0], shape[1], shape[2]);
        let context = weights
            .reshape(&[batch, 1, len])?
            .matmul(enc_states)?
            .reshape(&[batch, width])?;
        let features = tape.concat(&[context, state], 1)?;
        Ok((features, state, weights))
    }

    fn project<'t>(&self, tape: &'t Tape, features: &Tensor<'t>) -> Result<Tensor<'t>> {
        linear(features, &self.p(tape, self.w_out), Some(&self.p(tape, self.b_out)))
    }

    /// Feeds `prev_ids` (one per batch row) and returns logits, new state and
    /// attention weights.
    pub fn decode_step<'t>(
        &self,
        tape: &'t Tape,
        prev_ids: &[usize],
        state: &Tensor<'t>,
        enc_states: &Tensor<'t>,
        src_mask: &[bool],
    ) -> Result<Step<'t>> {
        let emb = self.p(tape, self.tgt_embed).embedding(prev_ids, &[prev_ids.len()])?;
        let gx = self.input_gates(tape, &self.dec, &emb)?;
        let (features, state, weights) = self.step_features(tape, &gx, state, enc_states, src_mask)?;
        Ok(Step {
            logits: self.project(tape, &features)?,
            state,
            weights,
        })
    }

    /// Teacher-forced logits `[batch, tgt_len - 1, tgt_vocab]`.
    pub fn batch_logits<'t>(&self, tape: &'t Tape, batch: &Batch, dropout: &mut Dropout) -> Result<Tensor<'t>> {
        let enc = self.encode(tape, &batch.src_ids, &batch.src_mask, batch.size, dropout)?;
        let steps = batch.tgt_len - 1;
        let inputs = batch.decoder_input();
        let emb = self.p(tape, self.tgt_embed).embedding(&inputs, &[batch.size, steps])?.dropout(dropout)?;
        let gx = self.input_gates(tape, &self.dec, &emb)?;
        let mut state = enc.init_state;
        let mut features = Vec::with_capacity(steps);
        for t in 0..steps {
            let (f, s, _) = self.step_features(tape, &gx.select(1, t)?, &state, &enc.states, &batch.src_mask)?;
            features.push(f);
            state = s;
        }
        let features = tape.stack(&features, 1)?.dropout(dropout)?;
        self.project(tape, &features)
    }
}

impl Summarizer for Seq2Seq {
    fn kind(&self) -> ModelKind {
        ModelKind::Seq2Seq
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
        let enc = self.encode(&tape, src, &mask, 1, &mut Dropout::eval())?;
        Ok(Box::new(RecurrentDecoder {
            model: self,
            enc_states: enc.states.value(),
            state: enc.init_state.value(),
            src_mask: mask,
        }))
    }

    fn config_entries(&self) -> Vec<(String, String)> {
        self.config.to_entries()
    }
}

struct RecurrentDecoder<'a> {
    model: &'a Seq2Seq,
    enc_states: Arc<Array>,
    state: Arc<Array>,
    src_mask: Vec<bool>,
}

impl StepDecoder for RecurrentDecoder<'_> {
    fn step(&mut self, prev: usize) -> Result<StepOutput> {
        let tape = Tape::new();
        let enc = tape.constant((*self.enc_states).clone());
        let state = tape.constant((*self.state).clone());
        let step = self.model.decode_step(&tape, &[prev], &state, &enc, &self.src_mask)?;
        self.state = step.state.value();
        Ok(StepOutput {
            logits: step.logits.value().data().to_vec(),
            attention: vec![vec![step.weights.value().data().to_vec()]],
        })
    }
}

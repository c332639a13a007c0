//! Browser bindings: tokenization, BLEU, and a small in-page model whose
//! cross-attention can be drawn as a heatmap.

use codesum::corpus::{
    make_batches, preprocess, synthetic, tokenize_code, tokenize_comment, filter_pair, Corpus, EncodedPair, Vocabulary,
};
use codesum::decoding::{summarize_tokens, DEFAULT_MAX_DECODE_LEN};
use codesum::metrics::corpus_bleu;
use codesum::model::Summarizer;
use codesum::tensor::Dropout;
use codesum::training::{eval_batches, evaluate_loss, train_step, Adam, DEFAULT_CLIP_NORM};
use codesum::transformer::{Transformer, TransformerConfig};
use serde_json::json;
use wasm_bindgen::prelude::*;

const BATCH: usize = 16;

fn js(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// Tokens of a method and its comment plus whether the pair survives the
/// length filter, as JSON.
pub fn tokenize_pair(method: &str, comment: &str) -> String {
    let code = tokenize_code(method).unwrap_or_default();
    let text = tokenize_comment(comment).unwrap_or_default();
    let kept = !code.is_empty() && !text.is_empty() && filter_pair(&code, &text);
    json!({ "method": code, "comment": text, "kept": kept }).to_string()
}

fn split_lines(text: &str) -> Vec<Vec<&str>> {
    text.lines().map(|l| l.split_whitespace().collect()).collect()
}

/// Corpus BLEU on 0..100 over line-aligned, whitespace-tokenized text.
pub fn bleu_lines(candidates: &str, references: &str) -> Result<f64, String> {
    let (c, r) = (split_lines(candidates), split_lines(references));
    if c.len() != r.len() {
        return Err(format!("{} candidate lines but {} reference lines", c.len(), r.len()));
    }
    corpus_bleu(&c, &r).map(|b| b * 100.0).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn tokenize(method: &str, comment: &str) -> String {
    tokenize_pair(method, comment)
}

#[wasm_bindgen]
pub fn bleu(candidates: &str, references: &str) -> Result<f64, JsError> {
    bleu_lines(candidates, references).map_err(js)
}

/// A one-layer transformer trained on generated accessor methods.
#[wasm_bindgen]
pub struct Demo {
    model: Transformer,
    src_vocab: Vocabulary,
    tgt_vocab: Vocabulary,
    train: Vec<EncodedPair>,
    val: Vec<EncodedPair>,
    optimizer: Adam,
    dropout: Dropout,
    epoch: u64,
}

impl Demo {
    pub fn build(pairs: usize, seed: u64) -> Result<Demo, String> {
        let raw = synthetic::generate(pairs, seed);
        let (corpus, _) = preprocess(&raw);
        let n_val = (corpus.len() / 10).max(1);
        if corpus.len() <= n_val {
            return Err("too few pairs to train on".into());
        }
        let part = |range: std::ops::Range<usize>| Corpus {
            functions: corpus.functions[range.clone()].to_vec(),
            comments: corpus.comments[range].to_vec(),
        };
        let (train, val) = (part(n_val..corpus.len()), part(0..n_val));
        let (src_vocab, tgt_vocab) = train.build_vocabs(1, usize::MAX);
        let mut config = TransformerConfig::new(src_vocab.len(), tgt_vocab.len(), 1, 32, 4, 64);
        config.dropout = 0.0;
        let model = Transformer::new(config, seed).map_err(|e| e.to_string())?;
        Ok(Demo {
            model,
            train: train.encode(&src_vocab, &tgt_vocab),
            val: val.encode(&src_vocab, &tgt_vocab),
            src_vocab,
            tgt_vocab,
            optimizer: Adam::new(1e-3),
            dropout: Dropout::new(0.0, seed),
            epoch: 0,
        })
    }

    /// Runs one epoch and returns validation perplexity.
    pub fn epoch(&mut self) -> Result<f64, String> {
        self.epoch += 1;
        for (i, batch) in make_batches(&self.train, BATCH, Some(self.epoch)).iter().enumerate() {
            train_step(&mut self.model, &mut self.optimizer, batch, &mut self.dropout, DEFAULT_CLIP_NORM, i)
                .map_err(|e| e.to_string())?;
        }
        evaluate_loss(&self.model, &eval_batches(&self.val, BATCH))
            .and_then(|t| t.perplexity())
            .map_err(|e| e.to_string())
    }

    /// Summary and attention record for `method`, as JSON.
    pub fn attention(&self, method: &str) -> Result<String, String> {
        let tokens = tokenize_code(method).map_err(|e| e.to_string())?;
        let record = summarize_tokens(&self.model, &tokens, &self.src_vocab, &self.tgt_vocab, DEFAULT_MAX_DECODE_LEN)
            .map_err(|e| e.to_string())?;
        serde_json::to_string(&record).map_err(|e| e.to_string())
    }
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(pairs: usize, seed: u32) -> Result<Demo, JsError> {
        Demo::build(pairs, seed.into()).map_err(js)
    }

    #[wasm_bindgen(js_name = trainEpoch)]
    pub fn train_epoch(&mut self) -> Result<f64, JsError> {
        self.epoch().map_err(js)
    }

    #[wasm_bindgen(js_name = summarize)]
    pub fn summarize(&self, method: &str) -> Result<String, JsError> {
        self.attention(method).map_err(js)
    }

    #[wasm_bindgen(getter)]
    pub fn parameters(&self) -> usize {
        self.model.params().num_scalars()
    }
}

//! Greedy autoregressive generation with cross-attention capture.

use serde::{Deserialize, Serialize};

use crate::corpus::{Vocabulary, BOS, EOS, MAX_COMMENT_TOKENS, RESERVED, UNK};
use crate::error::Result;
use crate::model::{StepDecoder, Summarizer};

/// Comment cap plus one slot for `</s>`.
pub const DEFAULT_MAX_DECODE_LEN: usize = MAX_COMMENT_TOKENS + 1;

/// Cross-attention captured while decoding one example.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub source_tokens: Vec<String>,
    pub generated_tokens: Vec<String>,
    /// `[layer][head][target position][source position]`.
    pub weights: Vec<Vec<Vec<Vec<f64>>>>,
}

/// Result of greedy decoding, as ids.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    /// Generated ids without `<s>` or `</s>`.
    pub ids: Vec<usize>,
    /// `[layer][head][target position][source position]`, one target row per
    /// generated id.
    pub attention: Vec<Vec<Vec<Vec<f64>>>>,
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Starts from `<s>` and repeatedly takes the argmax token until `</s>` or
/// `max_len` generated tokens.
pub fn greedy_decode_steps(decoder: &mut dyn StepDecoder, max_len: usize) -> Result<Decoded> {
    let mut ids = Vec::new();
    let mut attention: Vec<Vec<Vec<Vec<f64>>>> = Vec::new();
    let mut prev = BOS;
    while ids.len() < max_len {
        let out = decoder.step(prev)?;
        let next = argmax(&out.logits);
        if next == EOS {
            break;
        }
        if attention.is_empty() {
            attention = out.attention.iter().map(|l| vec![Vec::new(); l.len()]).collect();
        }
        for (layer, heads) in attention.iter_mut().zip(out.attention) {
            for (rows, row) in layer.iter_mut().zip(heads) {
                rows.push(row);
            }
        }
        ids.push(next);
        prev = next;
    }
    Ok(Decoded { ids, attention })
}

/// Greedy decoding of one encoded source with a trained model.
pub fn greedy_decode(model: &dyn Summarizer, src: &[usize], max_len: usize) -> Result<Decoded> {
    let mut decoder = model.start_decoding(src)?;
    greedy_decode_steps(decoder.as_mut(), max_len)
}

/// Decodes a tokenized method and returns generated tokens with their
/// attention record.
pub fn summarize_tokens(
    model: &dyn Summarizer,
    source_tokens: &[String],
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
    max_len: usize,
) -> Result<AttentionRecord> {
    let decoded = greedy_decode(model, &src_vocab.encode(source_tokens), max_len)?;
    Ok(AttentionRecord {
        source_tokens: source_tokens.to_vec(),
        // one token per attention row, even for reserved ids
        generated_tokens: decoded
            .ids
            .iter()
            .map(|&id| tgt_vocab.token(id).unwrap_or(RESERVED[UNK]).to_string())
            .collect(),
        weights: decoded.attention,
    })
}

//! Corpus BLEU-4 and perplexity.

use std::collections::HashMap;

use crate::error::{Error, Result};

const MAX_ORDER: usize = 4;

fn ngram_counts<S: AsRef<str> + Eq + std::hash::Hash>(tokens: &[S], n: usize) -> HashMap<&[S], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Pooled n-gram statistics behind a corpus BLEU score.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BleuStats {
    /// Clipped matches for orders 1..=4.
    pub matches: [usize; MAX_ORDER],
    /// Candidate n-grams for orders 1..=4.
    pub totals: [usize; MAX_ORDER],
    pub candidate_len: usize,
    pub reference_len: usize,
}

impl BleuStats {
    pub fn add<S: AsRef<str> + Eq + std::hash::Hash>(&mut self, candidate: &[S], reference: &[S]) {
        self.candidate_len += candidate.len();
        self.reference_len += reference.len();
        for n in 1..=MAX_ORDER {
            let cand = ngram_counts(candidate, n);
            let refs = ngram_counts(reference, n);
            for (gram, &c) in &cand {
                self.matches[n - 1] += c.min(refs.get(gram).copied().unwrap_or(0));
            }
            self.totals[n - 1] += candidate.len().saturating_sub(n - 1);
        }
    }

    /// Uniformly weighted geometric mean of clipped precisions times the
    /// brevity penalty; 0 when any order has no match.
    pub fn score(&self) -> f64 {
        if self.matches.iter().any(|&m| m == 0) {
            return 0.0;
        }
        let log_precision: f64 = self
            .matches
            .iter()
            .zip(&self.totals)
            .map(|(&m, &t)| (m as f64 / t as f64).ln())
            .sum::<f64>()
            / MAX_ORDER as f64;
        let (c, r) = (self.candidate_len as f64, self.reference_len as f64);
        let brevity = if c < r { (1.0 - r / c).exp() } else { 1.0 };
        brevity * log_precision.exp()
    }
}

/// Corpus-level BLEU-4 in `[0, 1]` with one reference per candidate and no
/// smoothing.
pub fn corpus_bleu<S: AsRef<str> + Eq + std::hash::Hash>(candidates: &[Vec<S>], references: &[Vec<S>]) -> Result<f64> {
    if candidates.is_empty() {
        return Err(Error::invalid("BLEU of an empty corpus"));
    }
    if candidates.len() != references.len() {
        return Err(Error::invalid(format!(
            "{} candidates but {} references",
            candidates.len(),
            references.len()
        )));
    }
    let mut stats = BleuStats::default();
    for (c, r) in candidates.iter().zip(references) {
        stats.add(c, r);
    }
    Ok(stats.score())
}

/// `exp(total / tokens)` for summed cross-entropy over `tokens` targets.
pub fn perplexity(total_ce_loss: f64, token_count: usize) -> Result<f64> {
    if token_count == 0 {
        return Err(Error::invalid("perplexity over zero tokens"));
    }
    Ok((total_ce_loss / token_count as f64).exp())
}

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::vocab::{BOS, EOS, PAD};

/// A method/comment pair as vocabulary ids. `tgt` is unframed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedPair {
    pub src: Vec<usize>,
    pub tgt: Vec<usize>,
}

/// Padded id matrices for one minibatch, stored row-major.
///
/// Target rows are framed as `<s> tokens </s>` followed by padding.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub src_len: usize,
    pub tgt_len: usize,
    pub src_ids: Vec<usize>,
    pub tgt_ids: Vec<usize>,
    pub src_mask: Vec<bool>,
    pub tgt_mask: Vec<bool>,
}

impl Batch {
    pub fn from_pairs(pairs: &[&EncodedPair]) -> Self {
        let src_len = pairs.iter().map(|p| p.src.len()).max().unwrap_or(0).max(1);
        let tgt_len = pairs.iter().map(|p| p.tgt.len() + 2).max().unwrap_or(2);
        Self::padded(pairs, src_len, tgt_len)
    }

    fn padded(pairs: &[&EncodedPair], src_len: usize, tgt_len: usize) -> Self {
        let mut src_ids = Vec::with_capacity(pairs.len() * src_len);
        let mut tgt_ids = Vec::with_capacity(pairs.len() * tgt_len);
        for p in pairs {
            src_ids.extend(&p.src);
            src_ids.extend(std::iter::repeat(PAD).take(src_len - p.src.len()));
            tgt_ids.push(BOS);
            tgt_ids.extend(&p.tgt);
            tgt_ids.push(EOS);
            tgt_ids.extend(std::iter::repeat(PAD).take(tgt_len - p.tgt.len() - 2));
        }
        let src_mask = src_ids.iter().map(|&i| i != PAD).collect();
        let tgt_mask = tgt_ids.iter().map(|&i| i != PAD).collect();
        Self {
            size: pairs.len(),
            src_len,
            tgt_len,
            src_ids,
            tgt_ids,
            src_mask,
            tgt_mask,
        }
    }

    /// Recovers the unpadded pairs.
    pub fn pairs(&self) -> Vec<EncodedPair> {
        (0..self.size)
            .map(|b| {
                let src = self.src_row(b).iter().copied().filter(|&i| i != PAD).collect();
                let row = &self.tgt_ids[b * self.tgt_len..(b + 1) * self.tgt_len];
                let tgt = row[1..].iter().copied().take_while(|&i| i != EOS).collect();
                EncodedPair { src, tgt }
            })
            .collect()
    }

    /// The same examples padded to larger lengths.
    pub fn repadded(&self, src_len: usize, tgt_len: usize) -> Self {
        assert!(src_len >= self.src_len && tgt_len >= self.tgt_len);
        let pairs = self.pairs();
        let refs: Vec<&EncodedPair> = pairs.iter().collect();
        Self::padded(&refs, src_len, tgt_len)
    }

    pub fn src_row(&self, b: usize) -> &[usize] {
        &self.src_ids[b * self.src_len..(b + 1) * self.src_len]
    }

    /// Teacher-forcing decoder input: every target row without its last column.
    pub fn decoder_input(&self) -> Vec<usize> {
        self.tgt_ids
            .chunks_exact(self.tgt_len)
            .flat_map(|row| &row[..self.tgt_len - 1])
            .copied()
            .collect()
    }

    /// Prediction targets: every target row without its first column.
    pub fn decoder_target(&self) -> Vec<usize> {
        self.tgt_ids
            .chunks_exact(self.tgt_len)
            .flat_map(|row| &row[1..])
            .copied()
            .collect()
    }

    /// Number of non-pad prediction targets (comment tokens plus `</s>`).
    pub fn target_tokens(&self) -> usize {
        self.decoder_target().iter().filter(|&&i| i != PAD).count()
    }
}

/// Groups pairs into padded batches. With a seed the order is shuffled
/// deterministically; the final batch may be smaller.
pub fn make_batches(pairs: &[EncodedPair], batch_size: usize, shuffle_seed: Option<u64>) -> Vec<Batch> {
    assert!(batch_size > 0, "batch size must be positive");
    let mut order: Vec<&EncodedPair> = pairs.iter().collect();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    order.chunks(batch_size).map(Batch::from_pairs).collect()
}

#![allow(dead_code)]

pub mod suite;

use std::sync::Arc;

use codesum::corpus::{make_batches, preprocess, synthetic, Batch, Corpus, EncodedPair, RawPair, SplitSizes, Vocabulary};
use codesum::model::Summarizer;
use codesum::tensor::{Array, Dropout, Mask, Tape, Tensor};
use codesum::transformer::scaled_dot_attention;
use codesum::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-3;
pub const FD_REL_TOL: f64 = 1e-4;
pub const FD_ABS_FLOOR: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_array(rng: &mut impl Rng, shape: &[usize]) -> Array {
    Array::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Worst mismatch found by a finite-difference check.
#[derive(Debug, Clone, Default)]
pub struct FdReport {
    pub checked: usize,
    pub worst_rel: f64,
    pub failures: Vec<String>,
}

impl FdReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.checked > 0
    }

    fn record(&mut self, what: String, analytic: f64, numeric: f64) {
        self.checked += 1;
        let diff = (analytic - numeric).abs();
        let rel = diff / analytic.abs().max(numeric.abs()).max(f64::MIN_POSITIVE);
        if diff > FD_ABS_FLOOR {
            self.worst_rel = self.worst_rel.max(rel);
            if rel >= FD_REL_TOL {
                self.failures.push(format!("{what}: analytic {analytic:e} numeric {numeric:e}"));
            }
        }
    }

    pub fn merge(&mut self, other: FdReport) {
        self.checked += other.checked;
        self.worst_rel = self.worst_rel.max(other.worst_rel);
        self.failures.extend(other.failures);
    }
}

/// Central finite differences of `f` with respect to every element of every
/// input, compared with the tape's gradients.
///
/// `f` maps leaf tensors to any-shaped output; the checked scalar is
/// `sum(output ⊙ probe)` for a fixed random probe so that every output
/// element matters with a different weight.
pub fn fd_check<F>(name: &str, inputs: &[Array], f: F) -> FdReport
where
    F: for<'t> Fn(&'t Tape, &[Tensor<'t>]) -> Result<Tensor<'t>>,
{
    let probe_for = |out: &Array| -> Arc<Array> {
        let mut r = rng(0xfd);
        Arc::new(random_array(&mut r, out.shape()))
    };
    let scalar = |values: &[Array]| -> f64 {
        let tape = Tape::new();
        let leaves: Vec<Tensor> = values.iter().map(|v| tape.leaf(v.clone(), false)).collect();
        let out = f(&tape, &leaves).expect("forward");
        let probe = probe_for(&out.value());
        out.mul_const(probe).unwrap().sum().unwrap().value().item()
    };

    let tape = Tape::new();
    let leaves: Vec<Tensor> = inputs.iter().map(|v| tape.leaf(v.clone(), true)).collect();
    let out = f(&tape, &leaves).expect("forward");
    let probe = probe_for(&out.value());
    let loss = out.mul_const(probe).unwrap().sum().unwrap();
    let grads = tape.backward(loss).expect("backward");

    let mut report = FdReport::default();
    for (i, leaf) in leaves.iter().enumerate() {
        let analytic = grads.get(leaf).cloned().unwrap_or_else(|| Array::zeros(inputs[i].shape()));
        for j in 0..inputs[i].numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= FD_STEP;
            let numeric = (scalar(&plus) - scalar(&minus)) / (2.0 * FD_STEP);
            report.record(format!("{name} input {i}[{j}]"), analytic.data()[j], numeric);
        }
    }
    report
}

/// Finite-difference check of a model's teacher-forced loss with respect to
/// every scalar parameter, dropout disabled.
pub fn fd_check_model(model: &mut dyn Summarizer, batch: &Batch) -> FdReport {
    let loss_of = |m: &dyn Summarizer| -> f64 {
        let tape = Tape::new();
        m.loss(&tape, batch, &mut Dropout::eval()).unwrap().loss.value().item()
    };
    let grads = {
        let tape = Tape::new();
        let out = model.loss(&tape, batch, &mut Dropout::eval()).unwrap();
        tape.backward(out.loss).unwrap()
    };
    let ids: Vec<_> = model.params().ids().collect();
    let mut report = FdReport::default();
    for id in ids {
        let name = model.params().name(id).to_string();
        let analytic = grads.param(id).cloned().unwrap_or_else(|| Array::zeros(model.params().value(id).shape()));
        for j in 0..analytic.numel() {
            let orig = model.params().value(id).data()[j];
            model.params_mut().value_mut(id).data_mut()[j] = orig + FD_STEP;
            let plus = loss_of(model);
            model.params_mut().value_mut(id).data_mut()[j] = orig - FD_STEP;
            let minus = loss_of(model);
            model.params_mut().value_mut(id).data_mut()[j] = orig;
            report.record(format!("{name}[{j}]"), analytic.data()[j], (plus - minus) / (2.0 * FD_STEP));
        }
    }
    report
}

/// Hand-written Java methods with their JavaDoc first lines.
pub fn java_pairs() -> Vec<RawPair> {
    include_str!("../data/java_pairs.jsonl")
        .lines()
        .map(|l| serde_json::from_str(l).expect("fixture line"))
        .collect()
}

pub fn first_pairs(corpus: &Corpus, n: usize) -> Corpus {
    let mut out = Corpus::default();
    for i in 0..n {
        out.push(corpus.functions[i].clone(), corpus.comments[i].clone());
    }
    out
}

pub struct Prepared {
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
    pub train: Vec<EncodedPair>,
    pub val: Vec<EncodedPair>,
    pub test: Vec<EncodedPair>,
    pub test_corpus: Corpus,
}

/// A generated corpus split into the requested sizes, with vocabularies built
/// on the training split.
pub fn synthetic_splits(sizes: SplitSizes, seed: u64) -> Prepared {
    let raw = synthetic::generate(sizes.total() + sizes.total() / 10 + 50, seed);
    let (corpus, _) = preprocess(&raw);
    let splits = corpus.split(sizes, seed).expect("enough generated pairs");
    let (src_vocab, tgt_vocab) = splits.train.build_vocabs(2, 50_000);
    Prepared {
        train: splits.train.encode(&src_vocab, &tgt_vocab),
        val: splits.val.encode(&src_vocab, &tgt_vocab),
        test: splits.test.encode(&src_vocab, &tgt_vocab),
        test_corpus: splits.test,
        src_vocab,
        tgt_vocab,
    }
}

/// Random encoded pairs over ids `4..vocab` for model-level property tests.
pub fn random_pairs(rng: &mut impl Rng, n: usize, vocab: usize, max_src: usize, max_tgt: usize) -> Vec<EncodedPair> {
    (0..n)
        .map(|_| {
            let s = rng.gen_range(1..=max_src);
            let t = rng.gen_range(1..=max_tgt);
            EncodedPair {
                src: (0..s).map(|_| rng.gen_range(4..vocab)).collect(),
                tgt: (0..t).map(|_| rng.gen_range(4..vocab)).collect(),
            }
        })
        .collect()
}

pub fn one_batch(pairs: &[EncodedPair]) -> Batch {
    make_batches(pairs, pairs.len(), None).remove(0)
}

/// Triple-loop `softmax(QKᵀ/√d_k)V` for a single `[L_q, d_k]` instance with an
/// optional `[L_q, L_k]` keep mask.
pub fn naive_attention(
    q: &[Vec<f64>],
    k: &[Vec<f64>],
    v: &[Vec<f64>],
    keep: Option<&[Vec<bool>]>,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let d_k = q[0].len() as f64;
    let mut out = Vec::new();
    let mut weights = Vec::new();
    for (i, qi) in q.iter().enumerate() {
        let mut scores = Vec::new();
        for (j, kj) in k.iter().enumerate() {
            if keep.map_or(true, |m| m[i][j]) {
                let mut dot = 0.0;
                for p in 0..qi.len() {
                    dot += qi[p] * kj[p];
                }
                scores.push(Some(dot / d_k.sqrt()));
            } else {
                scores.push(None);
            }
        }
        let max = scores.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| s.map_or(0.0, |s| (s - max).exp())).collect();
        let total: f64 = exps.iter().sum();
        let w: Vec<f64> = exps.iter().map(|e| e / total).collect();
        let mut row = vec![0.0; v[0].len()];
        for (j, vj) in v.iter().enumerate() {
            for c in 0..row.len() {
                row[c] += w[j] * vj[c];
            }
        }
        out.push(row);
        weights.push(w);
    }
    (out, weights)
}

pub fn rows(a: &Array) -> Vec<Vec<f64>> {
    let cols = *a.shape().last().unwrap();
    a.data().chunks(cols).map(<[f64]>::to_vec).collect()
}

/// Brute-force corpus BLEU-4: counts every n-gram by direct enumeration with
/// linear scans instead of hashing.
pub fn brute_force_bleu(candidates: &[Vec<String>], references: &[Vec<String>]) -> f64 {
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut c_len, mut r_len) = (0usize, 0usize);
    for (c, r) in candidates.iter().zip(references) {
        c_len += c.len();
        r_len += r.len();
        for n in 1..=4 {
            if c.len() < n {
                continue;
            }
            let cand: Vec<&[String]> = c.windows(n).collect();
            let refs: Vec<&[String]> = if r.len() >= n { r.windows(n).collect() } else { Vec::new() };
            totals[n - 1] += cand.len();
            let mut seen: Vec<&[String]> = Vec::new();
            for g in &cand {
                if seen.contains(g) {
                    continue;
                }
                seen.push(g);
                let in_c = cand.iter().filter(|x| *x == g).count();
                let in_r = refs.iter().filter(|x| *x == g).count();
                matches[n - 1] += in_c.min(in_r);
            }
        }
    }
    if matches.iter().any(|&m| m == 0) {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 0..4 {
        log_sum += (matches[n] as f64 / totals[n] as f64).ln();
    }
    log_sum /= 4.0;
    let bp = if c_len < r_len { (1.0 - r_len as f64 / c_len as f64).exp() } else { 1.0 };
    bp * log_sum.exp()
}

/// The first 32 fixture pairs with vocabularies keeping every token.
pub fn overfit_data() -> (Vocabulary, Vocabulary, Vec<EncodedPair>) {
    let (corpus, _) = preprocess(&java_pairs());
    let corpus = first_pairs(&corpus, 32);
    let (src_vocab, tgt_vocab) = corpus.build_vocabs(1, 50_000);
    let pairs = corpus.encode(&src_vocab, &tgt_vocab);
    (src_vocab, tgt_vocab, pairs)
}

/// Largest logit change seen by the causal and pad-extension probes for one
/// random configuration.
#[derive(Debug, Clone, Copy)]
pub struct MaskProbe {
    pub causal: f64,
    pub pad_transformer: f64,
    pub pad_seq2seq: f64,
}

impl MaskProbe {
    pub fn worst(&self) -> f64 {
        self.causal.max(self.pad_transformer).max(self.pad_seq2seq)
    }
}

fn real_position_diff(a: &Array, b: &Array, batch: &Batch, longer_tgt: usize) -> f64 {
    let vocab = *a.shape().last().unwrap();
    let (t0, t1) = (batch.tgt_len - 1, longer_tgt - 1);
    let mut worst: f64 = 0.0;
    for bi in 0..batch.size {
        for t in 0..t0 {
            if batch.tgt_ids[bi * batch.tgt_len + t + 1] == codesum::corpus::PAD {
                continue;
            }
            for v in 0..vocab {
                let x = a.data()[(bi * t0 + t) * vocab + v];
                let y = b.data()[(bi * t1 + t) * vocab + v];
                worst = worst.max((x - y).abs());
            }
        }
    }
    worst
}

/// Perturbs one decoder input token and measures logit changes at earlier
/// positions; repads a batch and measures changes at real positions.
pub fn mask_probe(seed: u64) -> MaskProbe {
    use codesum::seq2seq::{Seq2Seq, Seq2SeqConfig};
    use codesum::transformer::{Transformer, TransformerConfig};

    let mut r = rng(seed);
    let heads = r.gen_range(1..=3);
    let d_model = heads * r.gen_range(1..=4);
    let vocab = r.gen_range(6..16);
    let layers = r.gen_range(1..=2);
    let mut config = TransformerConfig::new(vocab, vocab, layers, d_model, heads, r.gen_range(2..=12));
    config.dropout = 0.0;
    let model = Transformer::new(config, seed).unwrap();

    let batch_size = r.gen_range(1..=3);
    let pairs = random_pairs(&mut r, batch_size, vocab, 6, 6);
    let batch = one_batch(&pairs);

    // causal perturbation on the decoder input
    let tape = Tape::new();
    let memory = model.encoder_forward(&tape, &batch.src_ids, &batch.src_mask, batch.size, &mut Dropout::eval()).unwrap();
    let input = batch.decoder_input();
    let len = batch.tgt_len - 1;
    let j = r.gen_range(0..len);
    let mut changed = input.clone();
    for b in 0..batch.size {
        changed[b * len + j] = if changed[b * len + j] == 4 { 5 } else { 4 };
    }
    let before = model.decoder_forward(&tape, &input, &memory, &batch.src_mask, batch.size, &mut Dropout::eval()).unwrap();
    let after = model.decoder_forward(&tape, &changed, &memory, &batch.src_mask, batch.size, &mut Dropout::eval()).unwrap();
    let (x, y) = (before.logits.value(), after.logits.value());
    let mut causal: f64 = 0.0;
    for b in 0..batch.size {
        for t in 0..j {
            for v in 0..vocab {
                let i = (b * len + t) * vocab + v;
                causal = causal.max((x.data()[i] - y.data()[i]).abs());
            }
        }
    }

    let longer = batch.repadded(batch.src_len + r.gen_range(1..=4), batch.tgt_len + r.gen_range(1..=4));
    let logits = |m: &dyn Fn(&Tape, &Batch) -> Array, b: &Batch| m(&Tape::new(), b);
    let t_logits = |tape: &Tape, b: &Batch| model.batch_logits(tape, b, &mut Dropout::eval()).unwrap().value().as_ref().clone();
    let pad_transformer = real_position_diff(&logits(&t_logits, &batch), &logits(&t_logits, &longer), &batch, longer.tgt_len);

    let hidden = r.gen_range(2..=6);
    let rnn = Seq2Seq::new(Seq2SeqConfig::new(vocab, vocab, r.gen_range(2..=6), hidden), seed).unwrap();
    let s_logits = |tape: &Tape, b: &Batch| rnn.batch_logits(tape, b, &mut Dropout::eval()).unwrap().value().as_ref().clone();
    let pad_seq2seq = real_position_diff(&logits(&s_logits, &batch), &logits(&s_logits, &longer), &batch, longer.tgt_len);

    MaskProbe { causal, pad_transformer, pad_seq2seq }
}

/// Largest absolute difference between the library's attention (output and
/// weights) and [`naive_attention`] over `n` random masked instances with
/// every dimension at most 5.
pub fn attention_oracle_error(seed: u64, n: usize) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let (lq, lk, dk, dv) = (r.gen_range(1..=5), r.gen_range(1..=5), r.gen_range(1..=5), r.gen_range(1..=5));
        let q = random_array(&mut r, &[lq, dk]).map(|v| v * 3.0);
        let k = random_array(&mut r, &[lk, dk]).map(|v| v * 3.0);
        let v = random_array(&mut r, &[lk, dv]);
        let keep: Vec<Vec<bool>> = (0..lq)
            .map(|_| {
                let mut row: Vec<bool> = (0..lk).map(|_| r.gen_bool(0.7)).collect();
                row[r.gen_range(0..lk)] = true;
                row
            })
            .collect();
        let mask = Mask::new(vec![lq, lk], keep.concat()).unwrap();
        let tape = Tape::new();
        let (out, w) = scaled_dot_attention(
            &tape.constant(q.clone()),
            &tape.constant(k.clone()),
            &tape.constant(v.clone()),
            Some(&mask),
        )
        .unwrap();
        let (want_out, want_w) = naive_attention(&rows(&q), &rows(&k), &rows(&v), Some(&keep));
        let (out, w) = (out.value(), w.value());
        let pairs = want_out.iter().flatten().zip(out.data());
        for (a, b) in pairs.chain(want_w.iter().flatten().zip(w.data())) {
            worst = worst.max((a - b).abs());
        }
        for (i, row) in want_w.iter().enumerate() {
            for (j, _) in row.iter().enumerate() {
                if !keep[i][j] && w.data()[i * lk + j] != 0.0 {
                    return f64::INFINITY;
                }
            }
        }
    }
    worst
}

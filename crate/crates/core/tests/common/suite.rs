//! Finite-difference checks shared by the gradient tests and the acceptance run.

use std::sync::Arc;

use codesum::corpus::{Batch, EncodedPair, PAD};
use codesum::seq2seq::{Seq2Seq, Seq2SeqConfig};
use codesum::tensor::{Dropout, Mask, ParamStore, Tape, Tensor};
use codesum::transformer::{multi_head_attention, scaled_dot_attention, MultiHeadParams, Transformer, TransformerConfig};

use super::*;

fn all(reports: impl IntoIterator<Item = FdReport>) -> FdReport {
    let mut out = FdReport::default();
    for r in reports {
        out.merge(r);
    }
    out
}

pub fn elementwise() -> FdReport {
    let mut r = rng(1);
    let a = random_array(&mut r, &[2, 3, 4]);
    let b = random_array(&mut r, &[3, 4]);
    let c = random_array(&mut r, &[2, 3, 4]);
    let k = Arc::new(random_array(&mut r, &[2, 3, 4]));
    all([
        fd_check("add broadcast", &[a.clone(), b.clone()], |_, x| x[0].add(&x[1])),
        fd_check("sub", &[a.clone(), c], |_, x| x[0].sub(&x[1])),
        fd_check("mul broadcast", &[a.clone(), b], |_, x| x[0].mul(&x[1])),
        fd_check("mul self", &[a.clone()], |_, x| x[0].mul(&x[0])),
        fd_check("scale", &[a.clone()], |_, x| x[0].scale(-2.5)),
        fd_check("mul_const", &[a], move |_, x| x[0].mul_const(k.clone())),
    ])
}

pub fn nonlinearities() -> FdReport {
    let mut r = rng(2);
    let a = random_array(&mut r, &[3, 5]).map(|v| v * 3.0);
    // keep relu inputs away from the kink
    let away = a.map(|v| if v.abs() < 0.05 { v + 0.2 } else { v });
    all([
        fd_check("tanh", &[a.clone()], |_, x| x[0].tanh()),
        fd_check("sigmoid", &[a], |_, x| x[0].sigmoid()),
        fd_check("relu", &[away], |_, x| x[0].relu()),
    ])
}

pub fn matmul_layouts() -> FdReport {
    let mut r = rng(3);
    let mut m = |s: &[usize]| random_array(&mut r, s);
    all([
        fd_check("matmul 2d", &[m(&[3, 4]), m(&[4, 2])], |_, x| x[0].matmul(&x[1])),
        fd_check("matmul shared rhs", &[m(&[2, 3, 4]), m(&[4, 5])], |_, x| x[0].matmul(&x[1])),
        fd_check("matmul shared lhs", &[m(&[3, 4]), m(&[2, 4, 5])], |_, x| x[0].matmul(&x[1])),
        fd_check("matmul batched", &[m(&[2, 3, 4]), m(&[2, 4, 2])], |_, x| x[0].matmul(&x[1])),
        // large enough for the blocked kernel
        fd_check("matmul large", &[m(&[24, 20]), m(&[20, 30])], |_, x| x[0].matmul(&x[1])),
        fd_check("matmul transposed", &[m(&[2, 3, 4]), m(&[2, 5, 4])], |_, x| x[0].matmul(&x[1].transpose()?)),
    ])
}

pub fn shape_ops() -> FdReport {
    let mut r = rng(4);
    let a = random_array(&mut r, &[2, 3, 4]);
    let b = random_array(&mut r, &[2, 3, 2]);
    let c = random_array(&mut r, &[2, 3, 4]);
    all([
        fd_check("transpose", &[a.clone()], |_, x| x[0].transpose()),
        fd_check("reshape", &[a.clone()], |_, x| x[0].reshape(&[6, 4])),
        fd_check("narrow", &[a.clone()], |_, x| x[0].narrow(2, 1, 2)),
        fd_check("select", &[a.clone()], |_, x| x[0].select(1, 2)),
        fd_check("concat", &[a.clone(), b], |t, x| t.concat(&[x[0], x[1]], 2)),
        fd_check("stack", &[a.clone(), c], |t, x| t.stack(&[x[0], x[1]], 1)),
        fd_check("sum", &[a], |_, x| x[0].sum()),
    ])
}

pub fn embedding() -> FdReport {
    let mut r = rng(5);
    let table = random_array(&mut r, &[6, 3]);
    fd_check("embedding", &[table], |_, x| x[0].embedding(&[1, 4, 1, 0, 5, 1], &[2, 3]))
}

pub fn softmax() -> FdReport {
    let mut r = rng(6);
    let a = random_array(&mut r, &[2, 3, 4]).map(|v| v * 2.0);
    let mask = Mask::from_fn(&[3, 4], |i| i % 3 != 1);
    let mut reports: Vec<FdReport> =
        (0..3).map(|axis| fd_check("softmax", &[a.clone()], move |_, x| x[0].softmax(axis))).collect();
    reports.push(fd_check("masked softmax", &[a], move |_, x| x[0].masked_fill(&mask)?.softmax(2)));
    all(reports)
}

pub fn layer_norm() -> FdReport {
    let mut r = rng(7);
    let x = random_array(&mut r, &[3, 5]);
    let g = random_array(&mut r, &[5]);
    let b = random_array(&mut r, &[5]);
    fd_check("layer_norm", &[x, g, b], |_, x| x[0].layer_norm(&x[1], &x[2], 1e-5))
}

pub fn cross_entropy() -> FdReport {
    let mut r = rng(8);
    let logits = random_array(&mut r, &[2, 3, 5]);
    fd_check("cross_entropy", &[logits], |_, x| x[0].cross_entropy(&[1, 0, 4, 2, 0, 3], 0))
}

pub fn dropout() -> FdReport {
    let mut r = rng(9);
    let a = random_array(&mut r, &[4, 6]);
    fd_check("dropout", &[a], |_, x| x[0].dropout(&mut Dropout::new(0.3, 17)))
}

pub fn attention() -> FdReport {
    let mut r = rng(10);
    let q = random_array(&mut r, &[2, 3, 4]);
    let k = random_array(&mut r, &[2, 5, 4]);
    let v = random_array(&mut r, &[2, 5, 3]);
    let mask = Mask::from_fn(&[2, 3, 5], |i| i % 5 != 4 || i < 15);
    let scaled = fd_check("scaled_dot_attention", &[q, k, v], move |_, x| {
        Ok(scaled_dot_attention(&x[0], &x[1], &x[2], Some(&mask))?.0)
    });

    let mut store = ParamStore::new();
    let params = MultiHeadParams {
        query: (0..2).map(|i| store.add(format!("q{i}"), random_array(&mut r, &[4, 2]))).collect(),
        key: (0..2).map(|i| store.add(format!("k{i}"), random_array(&mut r, &[4, 2]))).collect(),
        value: (0..2).map(|i| store.add(format!("v{i}"), random_array(&mut r, &[4, 3]))).collect(),
        output: store.add("o", random_array(&mut r, &[6, 4])),
    };
    let x = random_array(&mut r, &[2, 3, 4]);
    let mem = random_array(&mut r, &[2, 5, 4]);
    let multi = fd_check("multi_head_attention", &[x, mem], |t: &Tape, x: &[Tensor]| {
        Ok(multi_head_attention(t, &store, &params, &x[0], &x[1], &x[1], None)?.0)
    });
    all([scaled, multi])
}

fn model_batch() -> Batch {
    one_batch(&[
        EncodedPair { src: vec![4, 5, 6, 7], tgt: vec![8, 9, 10] },
        EncodedPair { src: vec![9, 4], tgt: vec![5, 6] },
    ])
}

/// N=1, d_model=8, h=2, d_k=d_v=4, d_ff=16, vocabulary 11.
pub fn full_transformer() -> FdReport {
    let mut config = TransformerConfig::new(11, 11, 1, 8, 2, 16);
    assert_eq!((config.d_k, config.d_v), (4, 4));
    config.dropout = 0.0;
    let mut model = Transformer::new(config, 3).unwrap();
    fd_check_model(&mut model, &model_batch())
}

/// Hidden width 8 on a padded batch.
pub fn full_seq2seq() -> FdReport {
    let mut model = Seq2Seq::new(Seq2SeqConfig::new(11, 11, 6, 8), 3).unwrap();
    let batch = model_batch();
    assert!(batch.src_ids.contains(&PAD));
    fd_check_model(&mut model, &batch)
}

pub type Check = (&'static str, fn() -> FdReport);

pub const ALL: [Check; 12] = [
    ("elementwise", elementwise),
    ("nonlinearities", nonlinearities),
    ("matmul", matmul_layouts),
    ("shape ops", shape_ops),
    ("embedding", embedding),
    ("softmax", softmax),
    ("layer norm", layer_norm),
    ("cross entropy", cross_entropy),
    ("dropout", dropout),
    ("attention", attention),
    ("transformer", full_transformer),
    ("seq2seq", full_seq2seq),
];

use crate::error::{Error, Result};
use crate::tensor::{Array, Mask, ParamId, ParamStore, Tape, Tensor};

/// Per-head projection matrices of one multi-head attention block.
#[derive(Clone, Debug)]
pub struct MultiHeadParams {
    /// `W_i^Q`, each `[d_model, d_k]`.
    pub query: Vec<ParamId>,
    /// `W_i^K`, each `[d_model, d_k]`.
    pub key: Vec<ParamId>,
    /// `W_i^V`, each `[d_model, d_v]`.
    pub value: Vec<ParamId>,
    /// `W^O`, `[h * d_v, d_model]`.
    pub output: ParamId,
}

impl MultiHeadParams {
    pub fn heads(&self) -> usize {
        self.query.len()
    }

    pub fn scalar_count(d_model: usize, heads: usize, d_k: usize, d_v: usize) -> usize {
        heads * (2 * d_model * d_k + d_model * d_v) + heads * d_v * d_model
    }
}

fn check_rows_have_keys(mask: &Mask) -> Result<()> {
    let lk = *mask.shape().last().expect("mask has rank >= 1");
    for (row, keys) in mask.keep().chunks_exact(lk).enumerate() {
        if !keys.iter().any(|&k| k) {
            return Err(Error::FullyMasked { row });
        }
    }
    Ok(())
}

/// `softmax(Q Kᵀ / √d_k) V` with masked scores removed before the softmax.
///
/// Returns the attended values and the weight grid `[..., L_q, L_k]`.
pub fn scaled_dot_attention<'t>(
    q: &Tensor<'t>,
    k: &Tensor<'t>,
    v: &Tensor<'t>,
    mask: Option<&Mask>,
) -> Result<(Tensor<'t>, Tensor<'t>)> {
    let d_k = *q.shape().last().ok_or_else(|| Error::invalid("attention query has rank 0"))?;
    let mut scores = q.matmul(&k.transpose()?)?.scale(1.0 / (d_k as f64).sqrt())?;
    if let Some(mask) = mask {
        check_rows_have_keys(mask)?;
        scores = scores.masked_fill(mask)?;
    }
    let rank = scores.shape().len();
    let weights = scores.softmax(rank - 1)?;
    Ok((weights.matmul(v)?, weights))
}

/// Runs `h` projected attention heads, concatenates them and applies `W^O`.
///
/// Returns the output `[..., L_q, d_model]` and each head's weight grid.
pub fn multi_head_attention<'t>(
    tape: &'t Tape,
    store: &ParamStore,
    params: &MultiHeadParams,
    q_in: &Tensor<'t>,
    k_in: &Tensor<'t>,
    v_in: &Tensor<'t>,
    mask: Option<&Mask>,
) -> Result<(Tensor<'t>, Vec<Tensor<'t>>)> {
    let mut heads = Vec::with_capacity(params.heads());
    let mut weights = Vec::with_capacity(params.heads());
    for i in 0..params.heads() {
        let q = q_in.matmul(&tape.param(store, params.query[i]))?;
        let k = k_in.matmul(&tape.param(store, params.key[i]))?;
        let v = v_in.matmul(&tape.param(store, params.value[i]))?;
        let (head, w) = scaled_dot_attention(&q, &k, &v, mask)?;
        heads.push(head);
        weights.push(w);
    }
    let concat = if heads.len() == 1 {
        heads[0]
    } else {
        let axis = heads[0].shape().len() - 1;
        tape.concat(&heads, axis)?
    };
    Ok((concat.matmul(&tape.param(store, params.output))?, weights))
}

/// Fixed sinusoidal table: `sin` on even columns, `cos` on odd columns.
pub fn positional_encoding(max_len: usize, d_model: usize) -> Array {
    Array::from_fn(&[max_len, d_model], |flat| {
        let (pos, col) = (flat / d_model, flat % d_model);
        let pair = (col / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * pair / d_model as f64);
        if col % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

use serde::Serialize;

use crate::corpus::EncodedPair;
use crate::error::{Error, Result};
use crate::model::{AnyModel, ModelKind, Summarizer};
use crate::seq2seq::{Seq2Seq, Seq2SeqConfig};
use crate::transformer::{Transformer, TransformerConfig};

use super::{train, Hyper, TrainRun};

/// Candidate values per swept hyperparameter. The sweep is the Cartesian
/// product of all axes.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub learning_rate: Vec<f64>,
    pub layers: Vec<usize>,
    pub d_model: Vec<usize>,
    pub heads: Vec<usize>,
    pub batch: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GridPoint {
    pub learning_rate: f64,
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub batch: usize,
}

impl GridSpec {
    pub fn points(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for &learning_rate in &self.learning_rate {
            for &layers in &self.layers {
                for &d_model in &self.d_model {
                    for &heads in &self.heads {
                        for &batch in &self.batch {
                            out.push(GridPoint { learning_rate, layers, d_model, heads, batch });
                        }
                    }
                }
            }
        }
        out
    }
}

impl GridPoint {
    /// Fresh model for this point. The transformer uses `d_ff = 4·d_model`;
    /// the recurrent model uses `d_model` as both embedding and hidden width
    /// and ignores `layers` and `heads`.
    pub fn build(&self, kind: ModelKind, src_vocab: usize, tgt_vocab: usize, seed: u64) -> Result<AnyModel> {
        Ok(match kind {
            ModelKind::Transformer => {
                let config =
                    TransformerConfig::new(src_vocab, tgt_vocab, self.layers, self.d_model, self.heads, 4 * self.d_model);
                Transformer::new(config, seed)?.into()
            }
            ModelKind::Seq2Seq => {
                Seq2Seq::new(Seq2SeqConfig::new(src_vocab, tgt_vocab, self.d_model, self.d_model), seed)?.into()
            }
        })
    }
}

#[derive(Clone, Debug)]
pub struct GridResult {
    pub point: GridPoint,
    pub parameters: Option<usize>,
    /// A failed point keeps its error message instead of stopping the sweep.
    pub outcome: std::result::Result<TrainRun, String>,
}

impl GridResult {
    pub fn final_val_ppl(&self) -> Option<f64> {
        self.outcome.as_ref().ok().and_then(TrainRun::final_val_ppl)
    }
}

/// Trains one model per grid point for `epochs` epochs and ranks the runs by
/// final validation perplexity, failures last.
#[allow(clippy::too_many_arguments)]
pub fn grid_search(
    kind: ModelKind,
    grid: &GridSpec,
    train_pairs: &[EncodedPair],
    val_pairs: &[EncodedPair],
    src_vocab: usize,
    tgt_vocab: usize,
    epochs: usize,
    seed: u64,
) -> Result<Vec<GridResult>> {
    let points = grid.points();
    if points.is_empty() {
        return Err(Error::invalid("grid has an empty axis"));
    }
    let mut results: Vec<GridResult> = points
        .into_iter()
        .map(|point| {
            let run = point.build(kind, src_vocab, tgt_vocab, seed).and_then(|mut model| {
                let params = model.params().num_scalars();
                let hyper = Hyper { lr: point.learning_rate, epochs, batch: point.batch, seed, ..Hyper::default() };
                train(&mut model, train_pairs, val_pairs, &hyper, None).map(|run| (params, run))
            });
            match run {
                Ok((params, run)) => GridResult { point, parameters: Some(params), outcome: Ok(run) },
                Err(e) => GridResult { point, parameters: None, outcome: Err(e.to_string()) },
            }
        })
        .collect();
    results.sort_by(|a, b| match (a.final_val_ppl(), b.final_val_ppl()) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    Ok(results)
}

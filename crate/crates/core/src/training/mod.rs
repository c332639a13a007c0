//! Optimisation loop, checkpoints and hyperparameter sweeps.

mod checkpoint;
mod grid;
mod optim;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

pub use checkpoint::{from_bytes, load_checkpoint, save_checkpoint, to_bytes, MAGIC, VERSION};
pub use grid::{grid_search, GridPoint, GridResult, GridSpec};
pub use optim::{clip_grad_norm, Adam, DEFAULT_CLIP_NORM, DEFAULT_LEARNING_RATE};

use crate::corpus::{make_batches, Batch, EncodedPair};
use crate::error::{Error, Result};
use crate::metrics::perplexity;
use crate::model::{ModelKind, Summarizer};
use crate::tensor::{Dropout, Tape};

/// File name of the line-delimited epoch log written beside checkpoints.
pub const LOG_FILE: &str = "train.jsonl";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hyper {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    pub clip_norm: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper { lr: DEFAULT_LEARNING_RATE, epochs: 10, batch: 32, seed: 0, clip_norm: DEFAULT_CLIP_NORM }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Token-averaged training cross-entropy over the epoch.
    pub train_loss: f64,
    pub val_ppl: f64,
    /// Time spent on training batches, excluding validation and saving.
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainRun {
    pub kind: ModelKind,
    pub config: Vec<(String, String)>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_checkpoint: Option<PathBuf>,
}

impl TrainRun {
    pub fn final_val_ppl(&self) -> Option<f64> {
        self.records.last().map(|r| r.val_ppl)
    }

    pub fn best_val_ppl(&self) -> Option<f64> {
        self.records.iter().map(|r| r.val_ppl).min_by(f64::total_cmp)
    }
}

/// Summed cross-entropy and token count over a set of batches.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTotals {
    pub total: f64,
    pub tokens: usize,
}

impl LossTotals {
    pub fn mean(&self) -> f64 {
        self.total / self.tokens as f64
    }

    pub fn perplexity(&self) -> Result<f64> {
        perplexity(self.total, self.tokens)
    }
}

/// Teacher-forced loss of `batches` without dropout or parameter updates.
pub fn evaluate_loss(model: &dyn Summarizer, batches: &[Batch]) -> Result<LossTotals> {
    let mut totals = LossTotals::default();
    let mut dropout = Dropout::eval();
    for batch in batches {
        let tape = Tape::new();
        let out = model.loss(&tape, batch, &mut dropout)?;
        totals.total += out.total;
        totals.tokens += out.tokens;
    }
    Ok(totals)
}

/// Batches used for validation: fixed order, no shuffling.
pub fn eval_batches(pairs: &[EncodedPair], batch: usize) -> Vec<Batch> {
    make_batches(pairs, batch, None)
}

/// One gradient step on `batch`. Returns the batch's summed loss and token
/// count.
pub fn train_step(
    model: &mut dyn Summarizer,
    optimizer: &mut Adam,
    batch: &Batch,
    dropout: &mut Dropout,
    clip_norm: f64,
    batch_index: usize,
) -> Result<LossTotals> {
    let diverged = |e: Error| match e {
        Error::NonFinite { .. } => Error::Diverged { batch: batch_index },
        other => other,
    };
    let (grads, totals) = {
        let tape = Tape::new();
        let out = model.loss(&tape, batch, dropout).map_err(diverged)?;
        if !out.total.is_finite() {
            return Err(Error::Diverged { batch: batch_index });
        }
        let grads = tape.backward(out.loss).map_err(diverged)?;
        (grads, LossTotals { total: out.total, tokens: out.tokens })
    };
    let store = model.params_mut();
    store.zero_grad();
    grads.accumulate_into(store);
    let norm = clip_grad_norm(store, clip_norm);
    if !norm.is_finite() {
        return Err(Error::Diverged { batch: batch_index });
    }
    optimizer.step(store);
    Ok(totals)
}

/// Trains `model` in place.
///
/// Each epoch shuffles `train` with a seed derived from `hyper.seed`, takes
/// one Adam step per batch, then measures validation perplexity. With an
/// `out_dir`, a checkpoint is written per epoch along with a JSONL log, and
/// the checkpoint with the lowest validation perplexity is reported as best.
pub fn train(
    model: &mut dyn Summarizer,
    train: &[EncodedPair],
    val: &[EncodedPair],
    hyper: &Hyper,
    out_dir: Option<&Path>,
) -> Result<TrainRun> {
    train_with(model, train, val, hyper, out_dir, |_| {})
}

/// [`train`] with a callback after each epoch.
pub fn train_with(
    model: &mut dyn Summarizer,
    train: &[EncodedPair],
    val: &[EncodedPair],
    hyper: &Hyper,
    out_dir: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainRun> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::invalid("training needs non-empty train and validation splits"));
    }
    if hyper.batch == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let mut log = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            Some(BufWriter::new(File::create(dir.join(LOG_FILE))?))
        }
        None => None,
    };
    let val_batches = eval_batches(val, hyper.batch);
    let mut optimizer = Adam::new(hyper.lr);
    let mut dropout = Dropout::new(model.train_dropout(), hyper.seed ^ 0x5eed_d80f);
    let mut run = TrainRun {
        kind: model.kind(),
        config: model.config_entries(),
        learning_rate: hyper.lr,
        epochs: hyper.epochs,
        seed: hyper.seed,
        records: Vec::with_capacity(hyper.epochs),
        best_epoch: 0,
        best_checkpoint: None,
    };
    let mut step = 0;
    for epoch in 1..=hyper.epochs {
        let batches = make_batches(train, hyper.batch, Some(hyper.seed.wrapping_add(epoch as u64)));
        let started = Instant::now();
        let mut totals = LossTotals::default();
        for batch in &batches {
            let t = train_step(model, &mut optimizer, batch, &mut dropout, hyper.clip_norm, step)?;
            totals.total += t.total;
            totals.tokens += t.tokens;
            step += 1;
        }
        let wall_seconds = started.elapsed().as_secs_f64().max(f64::MIN_POSITIVE);
        let val_ppl = evaluate_loss(model, &val_batches)?.perplexity()?;
        let record = EpochRecord { epoch, train_loss: totals.mean(), val_ppl, wall_seconds };

        let is_best = run.best_val_ppl().map_or(true, |best| val_ppl < best);
        if let Some(dir) = out_dir {
            let path = dir.join(format!("epoch-{epoch:03}.ckpt"));
            save_checkpoint(model, &path)?;
            if is_best {
                run.best_checkpoint = Some(path);
            }
        }
        if is_best {
            run.best_epoch = epoch;
        }
        if let Some(log) = log.as_mut() {
            serde_json::to_writer(&mut *log, &record).map_err(|e| Error::Format(e.to_string()))?;
            writeln!(log)?;
            log.flush()?;
        }
        on_epoch(&record);
        run.records.push(record);
    }
    Ok(run)
}

use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use codesum::corpus::{preprocess, synthetic, tokenize_code, Corpus, SplitSizes};
use codesum::decoding::{greedy_decode, summarize_tokens};
use codesum::metrics::corpus_bleu;
use codesum::model::{AnyModel, ModelKind, Summarizer};
use codesum::seq2seq::{Seq2Seq, Seq2SeqConfig};
use codesum::training::{eval_batches, evaluate_loss, grid_search, train_with, GridSpec, Hyper};
use codesum::transformer::{Transformer, TransformerConfig};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::io::{self, Loaded};
use crate::{Command, ModelArgs, VocabLimits};

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Preprocess { inputs, out } => cmd_preprocess(&inputs, &out),
        Command::Split { corpus, out, preset, train, val, test, seed } => {
            let sizes = match preset {
                Some(name) => SplitSizes::preset(&name).with_context(|| format!("unknown preset {name:?}"))?,
                None => SplitSizes { train, val, test },
            };
            cmd_split(&corpus, &out, sizes, seed)
        }
        Command::Vocab { corpus, out, limits } => {
            let corpus = io::load_corpus(&corpus)?;
            let (src, tgt) = corpus.build_vocabs(limits.min_count, limits.max_size);
            io::save_vocabs(&out, &src, &tgt)?;
            println!("{}", json!({ "src_vocab": src.len(), "tgt_vocab": tgt.len() }));
            Ok(())
        }
        Command::Train { train, val, out, model, batch, epochs, lr, seed, limits } => {
            let hyper = Hyper { lr, epochs, batch, seed, ..Hyper::default() };
            cmd_train(&train, &val, &out, model, hyper, limits)
        }
        Command::Grid { model, train, val, lr, layers, d_model, heads, batch, epochs, seed, limits } => {
            let grid = GridSpec { learning_rate: lr, layers, d_model, heads, batch };
            cmd_grid(model.into(), &train, &val, &grid, epochs, seed, limits)
        }
        Command::Eval { model, test, batch } => cmd_eval(&io::load_model(&model)?, &test, batch, model.max_len),
        Command::Summarize { model, input } => {
            let loaded = io::load_model(&model)?;
            let text = io::read_input(input.as_deref())?;
            let methods = io::blocks(&text);
            ensure!(!methods.is_empty(), "no method found in the input");
            for method in methods {
                println!("{}", summarize(&loaded, &method, model.max_len)?.generated_tokens.join(" "));
            }
            Ok(())
        }
        Command::Attention { model, input, out } => {
            let loaded = io::load_model(&model)?;
            let text = io::read_input(input.as_deref())?;
            ensure!(!text.trim().is_empty(), "no method found in the input");
            let record = summarize(&loaded, &text, model.max_len)?;
            let body = serde_json::to_string_pretty(&record)?;
            fs::write(&out, body + "\n").with_context(|| format!("writing {}", out.display()))?;
            println!("{}", record.generated_tokens.join(" "));
            Ok(())
        }
        Command::Synth { n, seed, out } => {
            let mut body = String::new();
            for pair in synthetic::generate(n, seed) {
                body.push_str(&serde_json::to_string(&pair)?);
                body.push('\n');
            }
            fs::write(&out, body).with_context(|| format!("writing {}", out.display()))?;
            Ok(())
        }
    }
}

fn cmd_preprocess(inputs: &[std::path::PathBuf], out: &Path) -> Result<()> {
    let mut raw = Vec::new();
    for path in inputs {
        raw.extend(io::read_raw_pairs(path)?);
    }
    let (corpus, report) = preprocess(&raw);
    corpus.save(out).with_context(|| format!("writing corpus to {}", out.display()))?;
    let report = serde_json::to_string_pretty(&report)?;
    fs::write(out.join("report.json"), format!("{report}\n"))?;
    println!("{report}");
    Ok(())
}

fn cmd_split(corpus: &Path, out: &Path, sizes: SplitSizes, seed: u64) -> Result<()> {
    ensure!(sizes.total() > 0, "give --preset or at least one of --train, --val, --test");
    let corpus = io::load_corpus(corpus)?;
    let splits = corpus.split(sizes, seed)?;
    for (name, part) in [("train", &splits.train), ("val", &splits.val), ("test", &splits.test)] {
        part.save(out.join(name)).with_context(|| format!("writing {name} split"))?;
    }
    println!("{}", json!({ "train": splits.train.len(), "val": splits.val.len(), "test": splits.test.len() }));
    Ok(())
}

fn build_model(args: &ModelArgs, src_vocab: usize, tgt_vocab: usize, seed: u64) -> Result<AnyModel> {
    Ok(match ModelKind::from(args.model) {
        ModelKind::Transformer => {
            let mut config = TransformerConfig::new(src_vocab, tgt_vocab, args.layers, args.d_model, args.heads, args.d_ff);
            config.d_k = args.d_k.unwrap_or(config.d_k);
            config.d_v = args.d_v.unwrap_or(config.d_v);
            config.dropout = args.dropout;
            Transformer::new(config, seed)?.into()
        }
        ModelKind::Seq2Seq => {
            let mut config = Seq2SeqConfig::new(src_vocab, tgt_vocab, args.embed, args.hidden);
            config.dropout = args.dropout;
            Seq2Seq::new(config, seed)?.into()
        }
    })
}

fn cmd_train(train: &Path, val: &Path, out: &Path, args: ModelArgs, hyper: Hyper, limits: VocabLimits) -> Result<()> {
    let train_corpus = io::load_corpus(train)?;
    let val_corpus = io::load_corpus(val)?;
    let (src_vocab, tgt_vocab) = train_corpus.build_vocabs(limits.min_count, limits.max_size);
    io::save_vocabs(out, &src_vocab, &tgt_vocab)?;
    let mut model = build_model(&args, src_vocab.len(), tgt_vocab.len(), hyper.seed)?;
    eprintln!("{} with {} parameters", model.kind(), model.params().num_scalars());
    let run = train_with(
        &mut model,
        &train_corpus.encode(&src_vocab, &tgt_vocab),
        &val_corpus.encode(&src_vocab, &tgt_vocab),
        &hyper,
        Some(out),
        |r| {
            eprintln!(
                "epoch {:>3}  train loss {:.4}  val ppl {:.3}  {:.2}s",
                r.epoch, r.train_loss, r.val_ppl, r.wall_seconds
            )
        },
    )?;
    let summary = serde_json::to_string_pretty(&run)?;
    fs::write(out.join("run.json"), format!("{summary}\n"))?;
    if let Some(best) = &run.best_checkpoint {
        println!("{}", best.display());
    }
    Ok(())
}

fn cmd_grid(
    kind: ModelKind,
    train: &Path,
    val: &Path,
    grid: &GridSpec,
    epochs: usize,
    seed: u64,
    limits: VocabLimits,
) -> Result<()> {
    let train_corpus = io::load_corpus(train)?;
    let val_corpus = io::load_corpus(val)?;
    let (src_vocab, tgt_vocab) = train_corpus.build_vocabs(limits.min_count, limits.max_size);
    let results = grid_search(
        kind,
        grid,
        &train_corpus.encode(&src_vocab, &tgt_vocab),
        &val_corpus.encode(&src_vocab, &tgt_vocab),
        src_vocab.len(),
        tgt_vocab.len(),
        epochs,
        seed,
    )?;
    for (rank, r) in results.iter().enumerate() {
        let line = match &r.outcome {
            Ok(run) => json!({
                "rank": rank + 1,
                "point": r.point,
                "parameters": r.parameters,
                "final_val_ppl": run.final_val_ppl(),
                "epoch_seconds": run.records.iter().map(|e| e.wall_seconds).collect::<Vec<_>>(),
            }),
            Err(e) => json!({ "rank": rank + 1, "point": r.point, "error": e }),
        };
        println!("{line}");
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalReport {
    /// Corpus BLEU-4 scaled to 0..100.
    bleu: f64,
    test_ppl: f64,
    n_examples: usize,
}

fn cmd_eval(loaded: &Loaded, test: &Path, batch: usize, max_len: usize) -> Result<()> {
    ensure!(batch > 0, "batch size must be positive");
    let corpus = io::load_corpus(test)?;
    ensure!(!corpus.is_empty(), "test corpus {} is empty", test.display());
    let report = evaluate(loaded, &corpus, batch, max_len)?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

fn evaluate(loaded: &Loaded, corpus: &Corpus, batch: usize, max_len: usize) -> Result<EvalReport> {
    let pairs = corpus.encode(&loaded.src_vocab, &loaded.tgt_vocab);
    let model: &dyn Summarizer = &loaded.model;
    let candidates = pairs
        .par_iter()
        .map(|p| Ok(loaded.tgt_vocab.decode_ids(&greedy_decode(model, &p.src, max_len)?.ids)))
        .collect::<Result<Vec<_>>>()?;
    let bleu = corpus_bleu(&candidates, &corpus.comments)?;
    let test_ppl = evaluate_loss(model, &eval_batches(&pairs, batch))?.perplexity()?;
    Ok(EvalReport { bleu: bleu * 100.0, test_ppl, n_examples: pairs.len() })
}

fn summarize(loaded: &Loaded, method: &str, max_len: usize) -> Result<codesum::decoding::AttentionRecord> {
    let tokens = tokenize_code(method).context("tokenizing method")?;
    if tokens.len() > codesum::corpus::MAX_METHOD_TOKENS {
        bail!(
            "method has {} tokens; the models accept at most {}",
            tokens.len(),
            codesum::corpus::MAX_METHOD_TOKENS
        );
    }
    Ok(summarize_tokens(&loaded.model, &tokens, &loaded.src_vocab, &loaded.tgt_vocab, max_len)?)
}

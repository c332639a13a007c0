use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use codesum::corpus::{Corpus, RawPair, Vocabulary};
use codesum::model::{AnyModel, Summarizer};
use codesum::training::load_checkpoint;

use crate::Checkpoint;

pub const SRC_VOCAB: &str = "src.vocab";
pub const TGT_VOCAB: &str = "tgt.vocab";

/// Parses JSON-lines raw pairs; blank lines are skipped.
pub fn read_raw_pairs(path: &Path) -> Result<Vec<RawPair>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let pair = serde_json::from_str(line).with_context(|| format!("{} line {}", path.display(), i + 1))?;
        pairs.push(pair);
    }
    Ok(pairs)
}

pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    Corpus::load(dir).with_context(|| format!("loading corpus from {}", dir.display()))
}

pub fn save_vocabs(dir: &Path, src: &Vocabulary, tgt: &Vocabulary) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    src.save(dir.join(SRC_VOCAB))?;
    tgt.save(dir.join(TGT_VOCAB))?;
    Ok(())
}

pub struct Loaded {
    pub model: AnyModel,
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
}

pub fn load_model(args: &Checkpoint) -> Result<Loaded> {
    let model = load_checkpoint(&args.checkpoint).with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let dir = match &args.vocab_dir {
        Some(d) => d.clone(),
        None => args.checkpoint.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(".")),
    };
    let load = |name: &str| {
        let path = dir.join(name);
        Vocabulary::load(&path).with_context(|| format!("loading vocabulary {}", path.display()))
    };
    let (src_vocab, tgt_vocab) = (load(SRC_VOCAB)?, load(TGT_VOCAB)?);
    let params = model.params();
    let rows = |name: &str| params.find(name).map(|id| params.value(id).shape()[0]);
    if rows("src_embed") != Some(src_vocab.len()) || rows("tgt_embed") != Some(tgt_vocab.len()) {
        bail!("vocabularies in {} do not match the checkpoint's embedding tables", dir.display());
    }
    Ok(Loaded { model, src_vocab, tgt_vocab })
}

/// Reads a file, or standard input when no path is given.
pub fn read_input(path: Option<&Path>) -> Result<String> {
    match path {
        Some(p) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display())),
        None => {
            let mut s = String::new();
            std::io::stdin().read_to_string(&mut s).context("reading standard input")?;
            Ok(s)
        }
    }
}

/// Splits text into blank-line-separated blocks.
pub fn blocks(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                out.push(current.join("\n"));
                current.clear();
            }
        } else {
            current.push(line);
        }
    }
    if !current.is_empty() {
        out.push(current.join("\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_splitting() {
        assert_eq!(blocks("a\nb\n\n\n  \nc\n"), vec!["a\nb", "c"]);
        assert!(blocks("\n \n").is_empty());
    }
}

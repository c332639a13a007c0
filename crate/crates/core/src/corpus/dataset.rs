use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::batch::EncodedPair;
use super::tokenize::{lengths_pass, tokenize_code, tokenize_comment};
use super::vocab::Vocabulary;
use crate::error::{Error, Result};

pub const FUNCTIONS_FILE: &str = "functions.tok";
pub const COMMENTS_FILE: &str = "comments.tok";

/// One untokenized Java method with its JavaDoc text.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawPair {
    pub method: String,
    pub comment: String,
}

/// Tokenized method/comment pairs, line-aligned.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Corpus {
    pub functions: Vec<Vec<String>>,
    pub comments: Vec<Vec<String>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub pairs_in: usize,
    pub pairs_kept: usize,
    pub dropped_by_length: usize,
    pub dropped_empty: usize,
}

/// Tokenizes and length-filters raw pairs.
pub fn preprocess<'a>(pairs: impl IntoIterator<Item = &'a RawPair>) -> (Corpus, PreprocessReport) {
    let mut corpus = Corpus::default();
    let mut report = PreprocessReport::default();
    for pair in pairs {
        report.pairs_in += 1;
        let tokens = match (tokenize_code(&pair.method), tokenize_comment(&pair.comment)) {
            (Ok(m), Ok(c)) => (m, c),
            _ => {
                report.dropped_empty += 1;
                continue;
            }
        };
        if !lengths_pass(tokens.0.len(), tokens.1.len()) {
            report.dropped_by_length += 1;
            continue;
        }
        corpus.functions.push(tokens.0);
        corpus.comments.push(tokens.1);
        report.pairs_kept += 1;
    }
    (corpus, report)
}

/// Requested split sizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSizes {
    pub const SMALL: Self = Self { train: 100_000, val: 3_000, test: 3_000 };
    pub const MEDIUM: Self = Self { train: 1_000_000, val: 5_000, test: 5_000 };
    pub const LARGE: Self = Self { train: 2_100_000, val: 10_000, test: 10_000 };

    pub fn preset(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "small" => Some(Self::SMALL),
            "medium" => Some(Self::MEDIUM),
            "large" => Some(Self::LARGE),
            _ => None,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

pub struct Splits {
    pub train: Corpus,
    pub val: Corpus,
    pub test: Corpus,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn push(&mut self, function: Vec<String>, comment: Vec<String>) {
        self.functions.push(function);
        self.comments.push(comment);
    }

    fn subset(&self, indices: &[usize]) -> Self {
        Self {
            functions: indices.iter().map(|&i| self.functions[i].clone()).collect(),
            comments: indices.iter().map(|&i| self.comments[i].clone()).collect(),
        }
    }

    /// Disjoint random train/val/test subsets, deterministic under `seed`.
    pub fn split(&self, sizes: SplitSizes, seed: u64) -> Result<Splits> {
        if sizes.total() > self.len() {
            return Err(Error::invalid(format!(
                "requested {} pairs but the corpus holds {}",
                sizes.total(),
                self.len()
            )));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (train, rest) = order.split_at(sizes.train);
        let (val, rest) = rest.split_at(sizes.val);
        let test = &rest[..sizes.test];
        Ok(Splits {
            train: self.subset(train),
            val: self.subset(val),
            test: self.subset(test),
        })
    }

    /// Source and target vocabularies built from this corpus.
    pub fn build_vocabs(&self, min_count: usize, max_size: usize) -> (Vocabulary, Vocabulary) {
        (
            Vocabulary::build(&self.functions, min_count, max_size),
            Vocabulary::build(&self.comments, min_count, max_size),
        )
    }

    pub fn encode(&self, src_vocab: &Vocabulary, tgt_vocab: &Vocabulary) -> Vec<EncodedPair> {
        self.functions
            .iter()
            .zip(&self.comments)
            .map(|(f, c)| EncodedPair {
                src: src_vocab.encode(f),
                tgt: tgt_vocab.encode(c),
            })
            .collect()
    }

    /// Writes `functions.tok` and `comments.tok` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        fs::write(dir.join(FUNCTIONS_FILE), join_lines(&self.functions))?;
        fs::write(dir.join(COMMENTS_FILE), join_lines(&self.comments))?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let functions = split_lines(&fs::read_to_string(dir.join(FUNCTIONS_FILE))?);
        let comments = split_lines(&fs::read_to_string(dir.join(COMMENTS_FILE))?);
        if functions.len() != comments.len() {
            return Err(Error::invalid(format!(
                "{FUNCTIONS_FILE} has {} lines but {COMMENTS_FILE} has {}",
                functions.len(),
                comments.len()
            )));
        }
        if let Some(i) = functions.iter().zip(&comments).position(|(f, c)| f.is_empty() || c.is_empty()) {
            return Err(Error::invalid(format!("empty sequence on line {}", i + 1)));
        }
        Ok(Self { functions, comments })
    }
}

fn join_lines(seqs: &[Vec<String>]) -> String {
    let mut s = String::new();
    for seq in seqs {
        s.push_str(&seq.join(" "));
        s.push('\n');
    }
    s
}

fn split_lines(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .map(|l| l.split_whitespace().map(str::to_string).collect())
        .collect()
}

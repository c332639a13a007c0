//! Tokenization, length filtering, vocabularies and batching for
//! (Java method, comment) pairs.

mod batch;
mod dataset;
pub mod synthetic;
mod tokenize;
mod vocab;

pub use batch::{make_batches, Batch, EncodedPair};
pub use dataset::{preprocess, Corpus, PreprocessReport, RawPair, SplitSizes, Splits, COMMENTS_FILE, FUNCTIONS_FILE};
pub use tokenize::{
    filter_pair, tokenize_code, tokenize_comment, MAX_COMMENT_TOKENS, MAX_METHOD_TOKENS, MIN_COMMENT_TOKENS,
};
pub use vocab::{Vocabulary, BOS, DEFAULT_MAX_SIZE, DEFAULT_MIN_COUNT, EOS, PAD, RESERVED, UNK};

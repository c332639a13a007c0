use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

pub const RESERVED: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

pub const DEFAULT_MIN_COUNT: usize = 2;
pub const DEFAULT_MAX_SIZE: usize = 50_000;

/// Bidirectional token/id map. Ids 0..4 are the reserved tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut id_to_token: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut token_to_id: HashMap<String, usize> =
            id_to_token.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        for token in tokens {
            if token_to_id.contains_key(&token) {
                return Err(Error::invalid(format!("duplicate vocabulary entry {token:?}")));
            }
            token_to_id.insert(token.clone(), id_to_token.len());
            id_to_token.push(token);
        }
        Ok(Self { token_to_id, id_to_token })
    }

    /// Vocabulary holding only the reserved tokens.
    pub fn reserved_only() -> Self {
        Self::from_tokens(std::iter::empty()).expect("reserved tokens are distinct")
    }

    /// Tokens with frequency at least `min_count`, most frequent first with
    /// ties broken lexicographically, keeping at most `max_size` of them.
    pub fn build<S: AsRef<str>>(sequences: &[Vec<S>], min_count: usize, max_size: usize) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for seq in sequences {
            for tok in seq {
                *counts.entry(tok.as_ref()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(t, c)| c >= min_count.max(1) && !RESERVED.contains(&t))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(max_size);
        Self::from_tokens(ranked.into_iter().map(|(t, _)| t.to_string())).expect("counted tokens are distinct")
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    /// Maps tokens to ids, sending unknown tokens to `<unk>`.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref()).unwrap_or(UNK)).collect()
    }

    /// Maps ids back to tokens, dropping `<pad>`, `<s>` and `</s>`.
    ///
    /// `<unk>` is kept as a literal token; it is a legal model output.
    pub fn decode_ids(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .filter(|&&id| !matches!(id, PAD | BOS | EOS))
            .filter_map(|&id| self.token(id).map(str::to_string))
            .collect()
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    /// One token per line; the line number is the id.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for t in &self.id_to_token {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn from_file_string(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < RESERVED.len() || lines[..RESERVED.len()] != RESERVED {
            return Err(Error::invalid("vocabulary file must start with <pad>, <s>, </s>, <unk>"));
        }
        Self::from_tokens(lines[RESERVED.len()..].iter().map(|s| s.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_file_string())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_file_string(&fs::read_to_string(path)?)
    }
}

use crate::error::{Error, Result};

/// Longest method kept by [`filter_pair`], in tokens.
pub const MAX_METHOD_TOKENS: usize = 100;
/// Shortest comment kept by [`filter_pair`], in tokens.
pub const MIN_COMMENT_TOKENS: usize = 3;
/// Longest comment kept by [`filter_pair`], in tokens.
pub const MAX_COMMENT_TOKENS: usize = 13;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Class {
    Lower,
    Upper,
    Digit,
}

fn class(c: char) -> Class {
    if c.is_ascii_digit() {
        Class::Digit
    } else if c.is_ascii_uppercase() {
        Class::Upper
    } else {
        Class::Lower
    }
}

/// Splits one alphanumeric word at camel-case and letter/digit boundaries.
///
/// A run of capitals keeps all but its last letter when a lowercase letter
/// follows, so `PartVO` gives `part vo` and `HTTPServer` gives `http server`.
fn split_identifier(word: &str, out: &mut Vec<String>) {
    let chars: Vec<char> = word.chars().collect();
    let mut start = 0;
    for i in 1..chars.len() {
        let (prev, cur) = (class(chars[i - 1]), class(chars[i]));
        let boundary = match (prev, cur) {
            (Class::Lower, Class::Upper) => true,
            (Class::Digit, Class::Lower | Class::Upper) | (Class::Lower | Class::Upper, Class::Digit) => true,
            (Class::Upper, Class::Upper) => chars.get(i + 1).is_some_and(|&n| class(n) == Class::Lower),
            _ => false,
        };
        if boundary {
            out.push(chars[start..i].iter().collect::<String>().to_ascii_lowercase());
            start = i;
        }
    }
    out.push(chars[start..].iter().collect::<String>().to_ascii_lowercase());
}

/// Tokenizes Java source: non-alphanumeric characters act as separators,
/// identifiers are split on camel case and digits, everything is lowercased.
pub fn tokenize_code(source: &str) -> Result<Vec<String>> {
    let mut tokens = Vec::new();
    for word in source.split(|c: char| !c.is_ascii_alphanumeric()) {
        if !word.is_empty() {
            split_identifier(word, &mut tokens);
        }
    }
    if tokens.is_empty() {
        return Err(Error::EmptySequence);
    }
    Ok(tokens)
}

/// Strips JavaDoc delimiters and returns the first line that has content.
fn first_comment_line(source: &str) -> &str {
    for line in source.lines() {
        let line = line.trim();
        let line = line.strip_prefix("/**").unwrap_or(line);
        let line = line.strip_suffix("*/").unwrap_or(line);
        let line = line.trim_start_matches('*').trim();
        if line.chars().any(|c| c.is_ascii_alphanumeric()) {
            return line;
        }
    }
    ""
}

/// Tokenizes a JavaDoc comment: first line only, cut at the first
/// sentence-ending period, lowercased, special characters removed.
pub fn tokenize_comment(source: &str) -> Result<Vec<String>> {
    let line = first_comment_line(source);
    let mut end = line.len();
    let mut chars = line.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if c == '.' && chars.peek().map_or(true, |(_, n)| n.is_whitespace()) {
            end = i;
            break;
        }
    }
    let tokens: Vec<String> = line[..end]
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_ascii_lowercase)
        .collect();
    if tokens.is_empty() {
        return Err(Error::EmptySequence);
    }
    Ok(tokens)
}

/// Length filter: methods of at most 100 tokens with 3 to 13 comment tokens.
pub fn filter_pair(method_tokens: &[String], comment_tokens: &[String]) -> bool {
    lengths_pass(method_tokens.len(), comment_tokens.len())
}

pub(crate) fn lengths_pass(method: usize, comment: usize) -> bool {
    method <= MAX_METHOD_TOKENS && (MIN_COMMENT_TOKENS..=MAX_COMMENT_TOKENS).contains(&comment)
}

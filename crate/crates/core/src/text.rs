//! Word tokenization with byte offsets, shared by every stage that needs to
//! line tokens back up with document text.

use std::ops::Range;

/// A word or punctuation token with its byte range in the source string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub begin: usize,
    pub end: usize,
}

impl Token {
    pub fn range(&self) -> Range<usize> {
        self.begin..self.end
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

/// Splits `text` into runs of alphanumeric characters and single
/// punctuation characters. Whitespace is dropped.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut word_start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if is_word_char(c) {
            if word_start.is_none() {
                word_start = Some(i);
            }
            continue;
        }
        if let Some(s) = word_start.take() {
            out.push(Token {
                text: text[s..i].to_string(),
                begin: s,
                end: i,
            });
        }
        if !c.is_whitespace() {
            let e = i + c.len_utf8();
            out.push(Token {
                text: text[i..e].to_string(),
                begin: i,
                end: e,
            });
        }
    }
    if let Some(s) = word_start {
        out.push(Token {
            text: text[s..].to_string(),
            begin: s,
            end: text.len(),
        });
    }
    out
}

/// Lowercased token strings, for models that ignore offsets.
pub fn lower_words(text: &str) -> Vec<String> {
    tokenize(text)
        .into_iter()
        .map(|t| t.text.to_lowercase())
        .collect()
}

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "did", "do", "does", "for", "from", "had",
    "has", "have", "he", "her", "his", "how", "i", "in", "is", "it", "its", "of", "on", "or",
    "she", "that", "the", "their", "them", "they", "this", "to", "was", "were", "what", "when",
    "where", "which", "who", "why", "with", "you",
];

pub fn is_stopword(word: &str) -> bool {
    STOPWORDS.binary_search(&word).is_ok()
}

/// 64-bit FNV-1a. Stable across platforms and compiler versions, unlike
/// `std`'s default hasher.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Joins generated word tokens back into a readable string, attaching
/// closing punctuation to the preceding word.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for tok in tokens {
        let t = tok.as_ref();
        let attach = matches!(t, "?" | "." | "," | "!" | ";" | ":" | ")" | "'" | "%");
        if !out.is_empty() && !attach && !out.ends_with(['(', '\'']) {
            out.push(' ');
        }
        out.push_str(t);
    }
    out
}

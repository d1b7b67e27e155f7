//! Small text utilities shared by the evidence pipeline and the stub
//! providers.

use std::collections::BTreeSet;

fn is_word_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

/// Byte offset of the first occurrence of `token` in `text` that is not
/// part of a longer identifier.
pub fn find_token(text: &str, token: &str) -> Option<usize> {
    if token.is_empty() {
        return None;
    }
    let mut from = 0;
    while let Some(i) = text[from..].find(token) {
        let start = from + i;
        let end = start + token.len();
        let before = text[..start].chars().next_back().is_none_or(|c| !is_word_char(c));
        let after = text[end..].chars().next().is_none_or(|c| !is_word_char(c));
        if before && after {
            return Some(start);
        }
        from = start + token.chars().next().map_or(1, char::len_utf8);
    }
    None
}

/// Upper-case identifiers containing an underscore, e.g. `FILTER_MERGE`.
pub fn rule_id_tokens(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for w in text.split(|c: char| !is_word_char(c)) {
        if w.contains('_')
            && w.chars().next().is_some_and(|c| c.is_ascii_uppercase())
            && w.chars().all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == '_')
            && !out.contains(&w)
        {
            out.push(w);
        }
    }
    out
}

/// Sentences of `text`, each a verbatim trimmed substring. Lines are split
/// independently; list markers are dropped.
pub fn sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for line in text.lines() {
        let mut line = line.trim();
        for marker in ["- ", "* "] {
            if let Some(rest) = line.strip_prefix(marker) {
                line = rest.trim_start();
            }
        }
        let mut start = 0;
        let bytes = line.as_bytes();
        for i in 0..bytes.len() {
            let end_mark = matches!(bytes[i], b'.' | b'?' | b'!');
            let boundary = i + 1 == bytes.len() || bytes[i + 1] == b' ';
            if end_mark && boundary {
                let s = line[start..=i].trim();
                if !s.is_empty() {
                    out.push(s);
                }
                start = i + 1;
            }
        }
        let s = line[start..].trim();
        if !s.is_empty() {
            out.push(s);
        }
    }
    out
}

/// Text of the comment lines in a code snippet, markers stripped.
pub fn comment_text(code: &str) -> String {
    let mut parts = Vec::new();
    let mut in_block = false;
    for line in code.lines() {
        let t = line.trim();
        let is_comment = in_block || t.starts_with("//") || t.starts_with("/*");
        if t.starts_with("/*") {
            in_block = true;
        }
        if in_block && t.ends_with("*/") {
            in_block = false;
        }
        if !is_comment {
            continue;
        }
        let stripped = t
            .trim_start_matches('/')
            .trim_start_matches('*')
            .trim_end_matches("*/")
            .trim();
        if !stripped.is_empty() {
            parts.push(stripped);
        }
    }
    parts.join(" ")
}

const STOP_WORDS: [&str; 12] = [
    "the", "and", "for", "with", "that", "this", "are", "its", "into", "from", "when", "then",
];

/// Lower-cased words of three or more characters, minus common stop words.
pub fn word_set(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|w| w.len() >= 3)
        .map(|w| w.to_ascii_lowercase())
        .filter(|w| !STOP_WORDS.contains(&w.as_str()))
        .collect()
}

/// Lower-cased words plus standalone punctuation characters.
pub fn embedding_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for c in text.chars() {
        if is_word_char(c) {
            word.push(c.to_ascii_lowercase());
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if !c.is_whitespace() {
            out.push(c.to_string());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

/// Token estimate used for block budgets: words × 1.3, rounded up.
pub fn approx_tokens(text: &str) -> usize {
    (text.split_whitespace().count() as f64 * 1.3).ceil() as usize
}

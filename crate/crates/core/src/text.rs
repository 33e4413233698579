//! Tokenization shared by the embedder, BLEU, and keyword matching.

/// Lowercases and splits on every non-alphanumeric character.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// True if `tokens` contains `keyword` as a contiguous token phrase. The last
/// keyword token may carry a plural `s`.
fn phrase_at(tokens: &[String], keyword: &[String], start: usize) -> bool {
    let n = keyword.len();
    if start + n > tokens.len() {
        return false;
    }
    keyword.iter().enumerate().all(|(j, kw)| {
        let tok = &tokens[start + j];
        tok == kw || (j + 1 == n && tok.len() == kw.len() + 1 && tok.starts_with(kw.as_str()) && tok.ends_with('s'))
    })
}

/// Case-insensitive, word-boundary keyword match; multi-word keywords match
/// as phrases and a trailing plural `s` is tolerated.
pub fn contains_keyword<S: AsRef<str>>(text: &str, keywords: &[S]) -> bool {
    let tokens = tokenize(text);
    keywords.iter().any(|kw| {
        let kw = tokenize(kw.as_ref());
        !kw.is_empty() && (0..tokens.len()).any(|i| phrase_at(&tokens, &kw, i))
    })
}

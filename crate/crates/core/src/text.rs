//! Text normalization shared by the tokenizer, answer matching and TF-IDF.

/// Lowercases, splits on whitespace, and splits every punctuation character
/// into its own token.
pub fn normalize_tokens(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            word.extend(ch.to_lowercase());
            continue;
        }
        if !word.is_empty() {
            tokens.push(std::mem::take(&mut word));
        }
        if !ch.is_whitespace() && !ch.is_control() {
            tokens.push(ch.to_lowercase().collect());
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

/// Normalized tokens with punctuation removed, for answer-span matching
/// and lexical retrieval.
pub fn word_tokens(text: &str) -> Vec<String> {
    normalize_tokens(text)
        .into_iter()
        .filter(|t| t.chars().any(char::is_alphanumeric))
        .collect()
}

/// True when `needle` occurs in `haystack` as a contiguous run of whole
/// tokens. An empty needle never matches.
pub fn contains_token_span(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty()
        && needle.len() <= haystack.len()
        && haystack.windows(needle.len()).any(|w| w == needle)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_punctuation() {
        assert_eq!(normalize_tokens("What is X?"), vec!["what", "is", "x", "?"]);
        assert_eq!(normalize_tokens("  a,b  "), vec!["a", ",", "b"]);
        assert!(normalize_tokens(" \t\n").is_empty());
    }

    #[test]
    fn span_matching_respects_token_boundaries() {
        let doc = word_tokens("... in Paris, France ...");
        assert!(contains_token_span(&doc, &word_tokens("paris")));
        let doc = word_tokens("newton yorkshire");
        assert!(!contains_token_span(&doc, &word_tokens("new york")));
        assert!(!contains_token_span(&doc, &word_tokens("?!")));
    }
}

//! Tokenization shared by corpus ingestion, query parsing, and log mining:
//! lowercase, split on any non-alphanumeric character.

pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            for lc in ch.to_lowercase() {
                current.push(lc);
            }
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lowercases_and_splits_on_punctuation() {
        assert_eq!(tokenize("Hello, World-2!"), vec!["hello", "world", "2"]);
    }

    #[test]
    fn empty_and_symbol_only_inputs_yield_nothing() {
        assert!(tokenize("").is_empty());
        assert!(tokenize(" \t--- ").is_empty());
    }

    #[test]
    fn unicode_terms_survive() {
        assert_eq!(tokenize("Müller 東京"), vec!["müller", "東京"]);
    }
}

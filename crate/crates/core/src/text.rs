//! String normalization shared by aggregation, matching and artifact filtering.

use sha2::{Digest, Sha256};
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

/// Light normalization used to pool evidence: lowercase, trim, strip
/// leading/trailing punctuation, collapse inner whitespace. No stemming.
pub fn normalize_value(raw: &str) -> String {
    let lowered = raw.to_lowercase();
    let trimmed = lowered.trim_matches(|c: char| !c.is_alphanumeric());
    trimmed.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Casefolded alphanumeric runs, in order of appearance.
pub fn word_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Maps a character to its closest ASCII letter by stripping combining
/// marks (`é` -> `e`). Returns `None` when no ASCII base exists (`ø`, `ß`).
pub fn ascii_fold(c: char) -> Option<char> {
    if c.is_ascii() {
        return Some(c);
    }
    let s = c.to_string();
    let mut base = s.nfd().filter(|m| !is_combining_mark(*m));
    match (base.next(), base.next()) {
        (Some(b), None) if b.is_ascii_alphabetic() => Some(b),
        _ => None,
    }
}

/// Stable 64-bit hash of a sequence of string parts. Independent of the
/// std hasher so seeds survive toolchain upgrades.
pub fn stable_hash(parts: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_strips_edges_and_case() {
        assert_eq!(normalize_value("  Hogwarts. "), "hogwarts");
        assert_eq!(normalize_value("\"New   York\""), "new york");
        assert_eq!(normalize_value("St. Louis!"), "st. louis");
        assert_eq!(normalize_value("..."), "");
    }

    #[test]
    fn tokens_split_on_non_alphanumerics() {
        assert_eq!(
            word_tokens("Doctor of Philosophy"),
            ["doctor", "of", "philosophy"]
        );
        assert_eq!(word_tokens("31/07/1980"), ["31", "07", "1980"]);
        assert!(word_tokens("").is_empty());
    }

    #[test]
    fn ascii_fold_handles_accents() {
        assert_eq!(ascii_fold('É'), Some('E'));
        assert_eq!(ascii_fold('ä'), Some('a'));
        assert_eq!(ascii_fold('ø'), None);
        assert_eq!(ascii_fold('x'), Some('x'));
    }

    #[test]
    fn stable_hash_separates_parts() {
        assert_ne!(stable_hash(&["ab", "c"]), stable_hash(&["a", "bc"]));
        assert_eq!(
            stable_hash(&["Harry Potter", "P551"]),
            stable_hash(&["Harry Potter", "P551"])
        );
    }
}

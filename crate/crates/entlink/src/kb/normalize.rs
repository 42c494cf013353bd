//! Surface-form and entity-name normalization.

use unicode_normalization::UnicodeNormalization;

/// Canonical form shared by prior-index keys and surface lookups: Unicode
/// compatibility (NFKC) normalization, lowercasing, and whitespace runs
/// collapsed to single ASCII spaces with the ends trimmed.
pub fn normalize_surface(raw: &str) -> String {
    let folded = raw.nfkc().collect::<String>().to_lowercase();
    collapse_whitespace(&folded)
}

/// Entity-name matching additionally treats underscores as spaces, so
/// `George_W._Bush` and `george w. bush` compare equal. Underscores are
/// substituted after NFKC folding so characters that fold *into* an
/// underscore (e.g. U+FE33) are treated as separators too.
pub fn normalize_entity_name(raw: &str) -> String {
    let folded = raw.nfkc().collect::<String>().to_lowercase();
    collapse_whitespace(&folded.replace('_', " "))
}

/// True when two entity names refer to the same entity under
/// [`normalize_entity_name`].
pub fn entity_names_match(a: &str, b: &str) -> bool {
    normalize_entity_name(a) == normalize_entity_name(b)
}

fn collapse_whitespace(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut pending_space = false;
    for ch in s.chars() {
        if ch.is_whitespace() {
            pending_space = !out.is_empty();
        } else {
            if pending_space {
                out.push(' ');
                pending_space = false;
            }
            out.push(ch);
        }
    }
    out
}

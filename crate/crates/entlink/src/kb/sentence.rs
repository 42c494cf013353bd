//! First-sentence extraction from knowledge-base descriptions.

/// Tokens that end with a period without ending a sentence.
const ABBREVIATIONS: &[&str] = &[
    "al", "approx", "ave", "blvd", "capt", "cmdr", "co", "col", "corp", "dept", "dr", "est",
    "etc", "fig", "ft", "gen", "hon", "inc", "jr", "lt", "ltd", "maj", "mr", "mrs", "ms", "mt",
    "no", "prof", "rd", "rev", "sgt", "sr", "st", "univ", "vol", "vs",
];

/// Returns the prefix of `text` up to and including the first period that
/// ends a sentence. A period ends a sentence when it is followed by
/// whitespace and then an uppercase letter, or by nothing but trailing
/// whitespace; periods that terminate a known abbreviation or a
/// single-letter initial never do. When no boundary exists the whole text is
/// returned, so the result is always a prefix of the input and the function
/// is idempotent.
pub fn first_sentence(text: &str) -> &str {
    for (idx, ch) in text.char_indices() {
        if ch != '.' {
            continue;
        }
        if is_abbreviation_before(text, idx) {
            continue;
        }
        if is_boundary_after(&text[idx + 1..]) {
            return &text[..idx + 1];
        }
    }
    text
}

/// True when the word immediately before the period is a known abbreviation
/// or a lone initial ("J." or the "S." inside "U.S.").
fn is_abbreviation_before(text: &str, period_idx: usize) -> bool {
    let token: Vec<char> = text[..period_idx]
        .chars()
        .rev()
        .take_while(|c| c.is_alphanumeric())
        .collect();
    match token.len() {
        0 => false,
        1 => token[0].is_alphabetic(),
        _ => {
            let word: String = token.iter().rev().collect();
            ABBREVIATIONS.iter().any(|a| a.eq_ignore_ascii_case(&word))
        }
    }
}

fn is_boundary_after(rest: &str) -> bool {
    if rest.chars().all(char::is_whitespace) {
        return true; // end of text, allowing trailing whitespace
    }
    let mut chars = rest.chars();
    if !chars.next().is_some_and(char::is_whitespace) {
        return false;
    }
    rest.chars()
        .find(|c| !c.is_whitespace())
        .is_some_and(char::is_uppercase)
}

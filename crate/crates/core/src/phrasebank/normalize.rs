const DETERMINERS: &[&str] = &["a", "an", "the"];

/// Inflected verb forms mapped to the participle used in the lexicon.
const VERB_FORMS: &[(&str, &str)] = &[
    ("stand", "standing"),
    ("stands", "standing"),
    ("rest", "resting"),
    ("rests", "resting"),
    ("sit", "sitting"),
    ("sits", "sitting"),
    ("hang", "hanging"),
    ("hangs", "hanging"),
    ("lean", "leaning"),
    ("leans", "leaning"),
    ("hold", "holding"),
    ("holds", "holding"),
    ("touch", "touching"),
    ("touches", "touching"),
    ("face", "facing"),
    ("faces", "facing"),
    ("look", "looking"),
    ("looks", "looking"),
    ("towards", "toward"),
];

/// Words ending in `s` that are not plurals.
const KEEP_S: &[&str] = &[
    "across", "always", "is", "was", "has", "its", "this", "his", "perhaps", "whereas",
];

fn verb_form(word: &str) -> Option<&'static str> {
    VERB_FORMS.iter().find(|(from, _)| *from == word).map(|(_, to)| *to)
}

fn lemma(word: &str) -> String {
    if let Some(to) = verb_form(word) {
        return to.to_string();
    }
    let strip = word.len() > 3
        && word.ends_with('s')
        && !word.ends_with("ss")
        && !word.ends_with("us")
        && !word.ends_with("is")
        && !KEEP_S.contains(&word);
    if strip {
        let stem = &word[..word.len() - 1];
        verb_form(stem).unwrap_or(stem).to_string()
    } else {
        word.to_string()
    }
}

/// Lowercases, drops determiners, applies the fixed lemma rules and
/// collapses whitespace. Idempotent.
pub fn normalize_phrase(raw: &str) -> String {
    let lower = raw.to_lowercase();
    lower
        .split(|c: char| c.is_whitespace() || (c.is_ascii_punctuation() && c != '\'' && c != '-'))
        .filter(|w| !w.is_empty())
        .map(lemma)
        .filter(|w| !DETERMINERS.contains(&w.as_str()))
        .collect::<Vec<_>>()
        .join(" ")
}

//! Parsing of free-text object lists returned by the vision-language model.

use super::{FilterError, FilterResult};

const MAX_WORDS: usize = 4;

pub fn is_hand_label(label: &str) -> bool {
    matches!(label.trim(), "hand" | "hands")
}

fn strip_bullet(item: &str) -> &str {
    let item = item.trim();
    let item = item.trim_start_matches(['-', '*', '•']).trim_start();
    // "1." / "2)" numbering
    let digits = item.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 {
        let rest = &item[digits..];
        if let Some(r) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            return r.trim_start();
        }
    }
    item
}

fn clean(item: &str) -> String {
    let mut s = strip_bullet(item)
        .trim_matches(|c: char| c == '.' || c == '"' || c == '\'' || c.is_whitespace())
        .to_lowercase();
    for prefix in ["and ", "a ", "an ", "the ", "some "] {
        if let Some(rest) = s.strip_prefix(prefix) {
            s = rest.trim_start().to_string();
        }
    }
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn is_noun_phrase(item: &str) -> bool {
    let words = item.split_whitespace().count();
    (1..=MAX_WORDS).contains(&words)
        && item
            .chars()
            .all(|c| c.is_alphanumeric() || c == ' ' || c == '-' || c == '\'')
}

/// Parses a comma-, semicolon- or newline-separated object list, optionally
/// bulleted or numbered. `"none"` yields an empty list; anything that is not a
/// list of short noun phrases is rejected.
pub fn parse_object_list(reply: &str) -> FilterResult<Vec<String>> {
    let body = reply.trim();
    if matches!(
        body.trim_end_matches('.').to_lowercase().as_str(),
        "none" | "nothing" | "no objects"
    ) {
        return Ok(Vec::new());
    }
    let mut out: Vec<String> = Vec::new();
    for raw in body.split([',', ';', '\n']) {
        let item = clean(raw);
        if item.is_empty() {
            continue;
        }
        if !is_noun_phrase(&item) {
            return Err(FilterError::MalformedBackendReply(format!(
                "not an object list: {reply:?}"
            )));
        }
        if !out.contains(&item) {
            out.push(item);
        }
    }
    if out.is_empty() {
        return Err(FilterError::MalformedBackendReply(format!(
            "empty reply: {reply:?}"
        )));
    }
    Ok(out)
}

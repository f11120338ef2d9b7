//! Completion parsing: answers, verdicts, yes/no, and verbalized confidence.
//!
//! The answer extraction rule list is ordered and auditable:
//! 1. a label following the word "answer" ("Answer: B", "the answer is C"),
//! 2. a parenthesized label anywhere ("(C)"),
//! 3. the first standalone label token,
//! 4. (caller-side) argmax over choice logprobs,
//!
//! otherwise the completion is unparseable.

/// Tokens are maximal alphanumeric runs; everything else separates.
fn tokens(text: &str) -> impl Iterator<Item = &str> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty())
}

fn as_label(token: &str, labels: &[char]) -> Option<char> {
    if token.len() != 1 {
        return None;
    }
    let c = token.chars().next().unwrap().to_ascii_uppercase();
    labels.contains(&c).then_some(c)
}

pub fn extract_answer(text: &str, labels: &[char]) -> Option<char> {
    let lower = text.to_lowercase();

    // rule 1: label shortly after the word "answer"
    let mut search_from = 0;
    while let Some(pos) = lower[search_from..].find("answer") {
        let tail = &text[search_from + pos + "answer".len()..];
        for (i, token) in tokens(tail).enumerate() {
            if i >= 3 {
                break;
            }
            if token.eq_ignore_ascii_case("is") || token.eq_ignore_ascii_case("was") {
                continue;
            }
            if let Some(label) = as_label(token, labels) {
                return Some(label);
            }
            break; // a non-label content word ends this rule's window
        }
        search_from += pos + "answer".len();
    }

    // rule 2: parenthesized label
    for (i, c) in text.char_indices() {
        if c == '(' {
            let rest = &text[i + 1..];
            let mut inner = rest.chars();
            if let (Some(candidate), Some(')')) = (inner.next(), inner.next()) {
                if let Some(label) = as_label(&candidate.to_string(), labels) {
                    return Some(label);
                }
            }
        }
    }

    // rule 3: first standalone label token
    tokens(text).find_map(|t| as_label(t, labels))
}

/// True/False verdict: `Some(false_means_abstain)` where the boolean is
/// "the verdict judged the answer true".
pub fn parse_verdict(text: &str) -> Option<bool> {
    for token in tokens(text) {
        if token.eq_ignore_ascii_case("true") {
            return Some(true);
        }
        if token.eq_ignore_ascii_case("false") {
            return Some(false);
        }
    }
    None
}

/// Yes/No judgment (MoreInfo-style prompts).
pub fn parse_yes_no(text: &str) -> Option<bool> {
    for token in tokens(text) {
        if token.eq_ignore_ascii_case("yes") {
            return Some(true);
        }
        if token.eq_ignore_ascii_case("no") {
            return Some(false);
        }
    }
    None
}

/// First number in [0, 1] in the completion (verbalized confidence).
pub fn parse_confidence(text: &str) -> Option<f64> {
    let mut current = String::new();
    let flush = |buf: &mut String| -> Option<f64> {
        if buf.is_empty() {
            return None;
        }
        let parsed = buf.parse::<f64>().ok();
        buf.clear();
        parsed.filter(|v| (0.0..=1.0).contains(v))
    };
    for c in text.chars() {
        if c.is_ascii_digit() || c == '.' {
            current.push(c);
        } else if let Some(v) = flush(&mut current) {
            return Some(v);
        }
    }
    flush(&mut current)
}

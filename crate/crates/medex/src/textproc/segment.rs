//! Rule-based sentence segmentation.
//!
//! Deterministic rules, in order of application:
//! - break after `.`, `!`, `?`, `;` when followed by whitespace and then an
//!   uppercase letter or digit, unless the `.` closes a known abbreviation;
//! - always break on blank lines;
//! - break on a single newline when the next line looks like a medication
//!   list entry: one or more tokens ending in a dose-like token
//!   (`\d+` optionally followed by `mg`, `po`, `IV`, or `x<digits>`).
//!
//! Sentence spans are trimmed to non-whitespace, so together they cover
//! exactly the non-whitespace text.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

/// Character-offset span of one sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceSpan {
    pub start: usize,
    pub end: usize,
}

const ABBREVIATIONS: [&str; 10] = [
    "dr", "mr", "mrs", "ms", "vs", "e.g", "i.e", "q", "b.i.d", "t.i.d",
];

fn is_dose_like(token: &str) -> bool {
    let token = token.trim_end_matches(['.', ',', ';', ':']);
    let digits: String = token.chars().take_while(|c| c.is_ascii_digit()).collect();
    if digits.is_empty() {
        return false;
    }
    let rest = &token[digits.len()..];
    match rest {
        "" | "mg" | "po" | "IV" => true,
        _ => {
            rest.starts_with('x')
                && rest.len() > 1
                && rest[1..].chars().all(|c| c.is_ascii_digit())
        }
    }
}

fn is_med_list_line(line: &str) -> bool {
    let tokens: Vec<&str> = line.split_whitespace().collect();
    tokens.len() >= 2 && is_dose_like(tokens.last().unwrap())
}

/// Token immediately preceding position `i` (exclusive), spanning
/// alphanumerics and interior periods, lowercased.
fn preceding_token(chars: &[char], i: usize) -> String {
    let mut start = i;
    while start > 0 {
        let c = chars[start - 1];
        if c.is_alphanumeric() || c == '.' {
            start -= 1;
        } else {
            break;
        }
    }
    let tok: String = chars[start..i].iter().collect();
    tok.trim_matches('.').to_lowercase()
}

pub fn segment_sentences(text: &str) -> Vec<SentenceSpan> {
    let chars: Vec<char> = text.chars().collect();
    let n = chars.len();
    let mut cuts: BTreeSet<usize> = BTreeSet::new();

    // Punctuation followed by whitespace and an uppercase letter or digit.
    for i in 0..n {
        let c = chars[i];
        if !matches!(c, '.' | '!' | '?' | ';') {
            continue;
        }
        let mut j = i + 1;
        while j < n && chars[j].is_whitespace() {
            j += 1;
        }
        if j == i + 1 || j >= n {
            continue;
        }
        if !(chars[j].is_uppercase() || chars[j].is_ascii_digit()) {
            continue;
        }
        if c == '.' {
            let prev = preceding_token(&chars, i);
            if ABBREVIATIONS.contains(&prev.as_str()) {
                continue;
            }
        }
        cuts.insert(i + 1);
    }

    // Newline rules over whitespace runs.
    let mut i = 0;
    while i < n {
        if !chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let run_start = i;
        let mut newlines = 0;
        while i < n && chars[i].is_whitespace() {
            if chars[i] == '\n' {
                newlines += 1;
            }
            i += 1;
        }
        let run_end = i;
        if run_start == 0 || run_end == n {
            continue;
        }
        if newlines >= 2 {
            cuts.insert(run_end);
        } else if newlines == 1 {
            let line_end = (run_end..n).find(|&k| chars[k] == '\n').unwrap_or(n);
            let line: String = chars[run_end..line_end].iter().collect();
            if is_med_list_line(&line) {
                cuts.insert(run_end);
            }
        }
    }

    // Carve the text at the cuts, trimming each piece to non-whitespace.
    let mut spans = Vec::new();
    let mut prev = 0;
    let mut boundaries: Vec<usize> = cuts.into_iter().collect();
    boundaries.push(n);
    for cut in boundaries {
        let mut s = prev;
        let mut e = cut;
        while s < e && chars[s].is_whitespace() {
            s += 1;
        }
        while e > s && chars[e - 1].is_whitespace() {
            e -= 1;
        }
        if s < e {
            spans.push(SentenceSpan { start: s, end: e });
        }
        prev = cut;
    }
    spans
}

//! Text processing: sentence segmentation, subword tokenization with
//! character alignment, window centering, and marker encodings.

mod segment;
mod vocab;

pub use segment::{segment_sentences, SentenceSpan};
pub use vocab::{
    fold_case, tokenize_subwords, train_subword_vocab, SubwordToken, Vocab, CLS_ID,
    MARKER_OTHER_CLOSE, MARKER_OTHER_OPEN, MARKER_TARGET_CLOSE, MARKER_TARGET_OPEN,
    MARKER_TYPED_TARGET_CLOSE, MARKER_TYPED_TARGET_OPEN, PAD_ID, SEP_ID, SPECIALS, UNK_ID,
};

use crate::{Error, Result};

/// Inclusive token index range `[first, last]`.
pub type TokenRange = (usize, usize);

/// Shifts token offsets by `delta`, mapping sentence-local offsets to
/// document offsets.
pub fn shift_token_offsets(tokens: &mut [SubwordToken], delta: usize) {
    for t in tokens.iter_mut() {
        t.start += delta;
        t.end += delta;
    }
}

/// Smallest contiguous range of non-special tokens whose character extent
/// covers the span `[start, end)`; tokens crossing the boundary are
/// included whole. Errors when the span overlaps no non-special token.
pub fn align_span(start: usize, end: usize, tokens: &[SubwordToken]) -> Result<TokenRange> {
    let mut first = None;
    let mut last = None;
    for (i, t) in tokens.iter().enumerate() {
        if t.is_special {
            continue;
        }
        if t.start < end && t.end > start {
            if first.is_none() {
                first = Some(i);
            }
            last = Some(i);
        }
    }
    match (first, last) {
        (Some(i), Some(j)) => Ok((i, j)),
        _ => Err(Error::NoTokenOverlap { start, end }),
    }
}

/// Wraps tokens in CLS/SEP, truncating to a window of `max_len - 2` pieces
/// centered on the target range's midpoint when the sequence is too long.
/// The window is clamped at sequence edges with its spill redistributed,
/// and always contains the whole target. Returns the windowed tokens and
/// the remapped target range.
pub fn build_window(
    tokens: &[SubwordToken],
    target: TokenRange,
    max_len: usize,
    vocab: &Vocab,
) -> Result<(Vec<SubwordToken>, TokenRange)> {
    let (i, j) = target;
    assert!(i <= j && j < tokens.len(), "target range out of bounds");
    let window = max_len.saturating_sub(2);
    let width = j - i + 1;
    if width > window {
        return Err(Error::TargetTooWide { width, max: window });
    }

    let (lo, hi) = if tokens.len() <= window {
        (0, tokens.len().saturating_sub(1))
    } else {
        let center = (i + j) / 2;
        // Left-heavy split of the remaining width around the center.
        let left = (window - 1).div_ceil(2);
        let right = (window - 1) / 2;
        let mut lo = center as isize - left as isize;
        let mut hi = center as isize + right as isize;
        if lo < 0 {
            hi -= lo;
            lo = 0;
        }
        if hi >= tokens.len() as isize {
            lo -= hi - (tokens.len() as isize - 1);
            hi = tokens.len() as isize - 1;
        }
        (lo as usize, hi as usize)
    };

    let sep_at = tokens.last().map(|t| t.end).unwrap_or(0);
    let mut out = Vec::with_capacity(hi - lo + 3);
    out.push(SubwordToken::special(CLS_ID, vocab, tokens.first().map(|t| t.start).unwrap_or(0)));
    out.extend_from_slice(&tokens[lo..=hi]);
    out.push(SubwordToken::special(SEP_ID, vocab, sep_at));
    Ok((out, (i - lo + 1, j - lo + 1)))
}

/// Inserts "@" before and "$" after the target range. Only the target is
/// marked; other mentions stay untouched. The returned range points at the
/// original target pieces with the markers excluded. Calling twice
/// double-marks; idempotence is the caller's responsibility.
pub fn encode_target_markers(
    tokens: &[SubwordToken],
    target: TokenRange,
    vocab: &Vocab,
) -> (Vec<SubwordToken>, TokenRange) {
    let (i, j) = target;
    assert!(i <= j && j < tokens.len(), "target range out of bounds");
    let mut out = Vec::with_capacity(tokens.len() + 2);
    out.extend_from_slice(&tokens[..i]);
    out.push(SubwordToken::special(MARKER_TARGET_OPEN, vocab, tokens[i].start));
    out.extend_from_slice(&tokens[i..=j]);
    out.push(SubwordToken::special(MARKER_TARGET_CLOSE, vocab, tokens[j].end));
    out.extend_from_slice(&tokens[j + 1..]);
    (out, (i + 1, j + 1))
}

/// Wraps the target in `<t>`/`</t>` and every other mention range in
/// `<o>`/`</o>`, inserting right-to-left so earlier ranges stay valid.
/// Ranges must be pairwise non-overlapping.
pub fn encode_typed_markers(
    tokens: &[SubwordToken],
    target: TokenRange,
    others: &[TokenRange],
    vocab: &Vocab,
) -> Result<(Vec<SubwordToken>, TokenRange)> {
    let mut all: Vec<(TokenRange, bool)> = vec![(target, true)];
    all.extend(others.iter().map(|r| (*r, false)));
    for (r, _) in &all {
        assert!(r.0 <= r.1 && r.1 < tokens.len(), "range out of bounds");
    }
    let mut sorted = all.clone();
    sorted.sort_by_key(|(r, _)| *r);
    for pair in sorted.windows(2) {
        let (a, b) = (pair[0].0, pair[1].0);
        if b.0 <= a.1 {
            return Err(Error::OverlappingRanges {
                a0: a.0,
                a1: a.1,
                b0: b.0,
                b1: b.1,
            });
        }
    }

    let mut out = tokens.to_vec();
    // Right-to-left insertion keeps earlier indices stable.
    for ((i, j), is_target) in sorted.iter().rev() {
        let (open, close) = if *is_target {
            (MARKER_TYPED_TARGET_OPEN, MARKER_TYPED_TARGET_CLOSE)
        } else {
            (MARKER_OTHER_OPEN, MARKER_OTHER_CLOSE)
        };
        out.insert(j + 1, SubwordToken::special(close, vocab, tokens[*j].end));
        out.insert(*i, SubwordToken::special(open, vocab, tokens[*i].start));
    }

    let earlier = others.iter().filter(|r| r.0 < target.0).count();
    let shift = 1 + 2 * earlier;
    Ok((out, (target.0 + shift, target.1 + shift)))
}

//! Subword vocabulary: greedy pair-merge construction and greedy
//! longest-match tokenization with exact character offsets.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Reserved special pieces, in fixed id order.
pub const SPECIALS: [&str; 10] = [
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "@", "$", "<t>", "</t>", "<o>", "</o>",
];

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;
pub const MARKER_TARGET_OPEN: u32 = 4; // "@"
pub const MARKER_TARGET_CLOSE: u32 = 5; // "$"
pub const MARKER_TYPED_TARGET_OPEN: u32 = 6; // "<t>"
pub const MARKER_TYPED_TARGET_CLOSE: u32 = 7; // "</t>"
pub const MARKER_OTHER_OPEN: u32 = 8; // "<o>"
pub const MARKER_OTHER_CLOSE: u32 = 9; // "</o>"

/// Piece inventory. Ids are list positions; the ten specials occupy ids
/// 0..=9 in [`SPECIALS`] order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pieces: Vec<String>,
    #[serde(skip)]
    lookup: HashMap<String, u32>,
    #[serde(skip)]
    max_piece_chars: usize,
}

impl Vocab {
    /// Builds from a full piece list that must start with the specials.
    pub fn from_pieces(pieces: Vec<String>) -> Result<Self> {
        if pieces.len() < SPECIALS.len() {
            return Err(Error::Config("vocab shorter than the special inventory".into()));
        }
        for (i, s) in SPECIALS.iter().enumerate() {
            if pieces[i] != *s {
                return Err(Error::Config(format!(
                    "vocab piece {i} is {:?}, expected special {s:?}",
                    pieces[i]
                )));
            }
        }
        let mut lookup = HashMap::with_capacity(pieces.len());
        let mut max_piece_chars = 1;
        for (i, p) in pieces.iter().enumerate() {
            if lookup.insert(p.clone(), i as u32).is_some() {
                return Err(Error::Config(format!("duplicate vocab piece {p:?}")));
            }
            // PAD/UNK/CLS/SEP never match raw text; markers may.
            if i >= 4 {
                max_piece_chars = max_piece_chars.max(p.chars().count());
            }
        }
        Ok(Vocab {
            pieces,
            lookup,
            max_piece_chars,
        })
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn piece(&self, id: u32) -> &str {
        &self.pieces[id as usize]
    }

    pub fn id(&self, piece: &str) -> Option<u32> {
        self.lookup.get(piece).copied()
    }

    /// Longest piece (in chars) matching a prefix of `chars`, skipping the
    /// four structural specials.
    fn longest_match(&self, chars: &[char]) -> Option<(u32, usize)> {
        let upper = self.max_piece_chars.min(chars.len());
        for len in (1..=upper).rev() {
            let cand: String = chars[..len].iter().collect();
            if let Some(&id) = self.lookup.get(&cand) {
                if id >= 4 {
                    return Some((id, len));
                }
            }
        }
        None
    }

    /// One piece per line; line number is the id.
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for p in &self.pieces {
            out.push_str(p);
            out.push('\n');
        }
        out
    }

    pub fn from_file_string(content: &str) -> Result<Self> {
        let pieces: Vec<String> = content.lines().map(|l| l.to_string()).collect();
        Vocab::from_pieces(pieces)
    }
}

/// One subword token with exact character offsets into the source text.
/// Structural specials (CLS, SEP, PAD, markers) carry `start == end`; an
/// `[UNK]` emitted for an unseen character covers that character.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubwordToken {
    pub id: u32,
    pub piece: String,
    pub start: usize,
    pub end: usize,
    pub is_continuation: bool,
    pub is_special: bool,
}

impl SubwordToken {
    pub fn special(id: u32, vocab: &Vocab, at: usize) -> Self {
        SubwordToken {
            id,
            piece: vocab.piece(id).to_string(),
            start: at,
            end: at,
            is_continuation: false,
            is_special: true,
        }
    }
}

/// Trains a vocabulary by greedy pair merging: starting from all observed
/// single characters, repeatedly merge the most frequent adjacent piece
/// pair (ties broken lexicographically on the pair) until `target_size`
/// pieces exist or no pairs remain. Every observed character gets a piece,
/// so `[UNK]` only ever covers characters unseen at training time.
pub fn train_subword_vocab<S: AsRef<str>>(texts: &[S], target_size: usize) -> Result<Vocab> {
    // Word type -> frequency, over whitespace-delimited words.
    let mut word_freq: BTreeMap<Vec<char>, u64> = BTreeMap::new();
    for text in texts {
        for word in text.as_ref().split_whitespace() {
            *word_freq.entry(word.chars().collect()).or_insert(0) += 1;
        }
    }
    if word_freq.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    let mut pieces: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    let mut seen: BTreeMap<String, ()> = pieces.iter().map(|p| (p.clone(), ())).collect();

    let mut chars: Vec<String> = word_freq
        .keys()
        .flat_map(|w| w.iter().map(|c| c.to_string()))
        .collect();
    chars.sort();
    chars.dedup();
    for c in chars {
        if seen.insert(c.clone(), ()).is_none() {
            pieces.push(c);
        }
    }
    if target_size <= pieces.len() {
        return Err(Error::Config(format!(
            "target vocab size {target_size} not above specials plus {} observed characters",
            pieces.len() - SPECIALS.len()
        )));
    }

    // Word types as piece sequences.
    let mut reps: Vec<(Vec<String>, u64)> = word_freq
        .into_iter()
        .map(|(w, f)| (w.iter().map(|c| c.to_string()).collect(), f))
        .collect();

    while pieces.len() < target_size {
        let mut pair_counts: BTreeMap<(String, String), u64> = BTreeMap::new();
        for (rep, freq) in &reps {
            for pair in rep.windows(2) {
                *pair_counts
                    .entry((pair[0].clone(), pair[1].clone()))
                    .or_insert(0) += freq;
            }
        }
        // Highest count wins; lexicographically smallest pair breaks ties.
        let Some((best_pair, _)) = pair_counts
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
        else {
            break;
        };
        let merged = format!("{}{}", best_pair.0, best_pair.1);
        for (rep, _) in &mut reps {
            let mut i = 0;
            while i + 1 < rep.len() {
                if rep[i] == best_pair.0 && rep[i + 1] == best_pair.1 {
                    rep[i] = merged.clone();
                    rep.remove(i + 1);
                }
                i += 1;
            }
        }
        if seen.insert(merged.clone(), ()).is_none() {
            pieces.push(merged);
        }
    }

    Vocab::from_pieces(pieces)
}

/// Splits on whitespace, then greedy longest-match within each word.
/// Unseen characters come out as single `[UNK]` tokens covering exactly
/// that character. Offsets are Unicode scalar-value positions.
pub fn tokenize_subwords(text: &str, vocab: &Vocab) -> Vec<SubwordToken> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let word_start = i;
        let mut j = i;
        while j < chars.len() && !chars[j].is_whitespace() {
            j += 1;
        }
        let mut p = word_start;
        while p < j {
            match vocab.longest_match(&chars[p..j]) {
                Some((id, len)) => {
                    tokens.push(SubwordToken {
                        id,
                        piece: vocab.piece(id).to_string(),
                        start: p,
                        end: p + len,
                        is_continuation: p > word_start,
                        is_special: false,
                    });
                    p += len;
                }
                None => {
                    tokens.push(SubwordToken {
                        id: UNK_ID,
                        piece: vocab.piece(UNK_ID).to_string(),
                        start: p,
                        end: p + 1,
                        is_continuation: p > word_start,
                        is_special: false,
                    });
                    p += 1;
                }
            }
        }
        i = j;
    }
    tokens
}

/// Case folding that preserves character count, for the optional lowercase
/// pipeline flag. Characters whose lowercase form changes length are kept
/// as-is so offsets stay valid.
pub fn fold_case(text: &str) -> String {
    text.chars()
        .map(|c| {
            let mut lower = c.to_lowercase();
            match (lower.next(), lower.next()) {
                (Some(l), None) => l,
                _ => c,
            }
        })
        .collect()
}

//! Classification instance construction.
//!
//! One instance per (sentence, mention), encoded per architecture: plain
//! windowed sentence tokens for the medication-agnostic architectures, a
//! kept target token range for MedSpan, "@"/"$" around the target for
//! MedIdentifiers, and typed markers around target and non-target
//! mentions for MedIDTyped. Markers are inserted before windowing so they
//! count toward (and survive) the piece budget.

use serde::{Deserialize, Serialize};

use super::Architecture;
use crate::corpus::{char_slice, Document, EventAnnotation, MedicationMention};
use crate::textproc::{
    align_span, build_window, encode_target_markers, encode_typed_markers, segment_sentences,
    shift_token_offsets, tokenize_subwords, SubwordToken, TokenRange, Vocab,
};
use crate::{Error, Result};

/// Maximum classification sequence length in word pieces.
pub const CLF_MAX_LEN: usize = 128;

/// One windowed, id-encoded mention classification example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationInstance {
    pub mention: MedicationMention,
    /// Index of the sentence this mention sits in, within the document's
    /// sentence list.
    pub sentence_idx: usize,
    /// CLS/SEP-wrapped, windowed token ids, at most [`CLF_MAX_LEN`].
    pub ids: Vec<u32>,
    /// Target token range within `ids`; populated for medication-aware
    /// architectures only.
    pub target: Option<TokenRange>,
    /// Gold labels, when the mention carries an annotation in the source
    /// document.
    pub gold: Option<EventAnnotation>,
}

fn tokenize_sentence(
    doc_text: &str,
    span: crate::textproc::SentenceSpan,
    vocab: &Vocab,
) -> Vec<SubwordToken> {
    let sent_text = char_slice(doc_text, span.start, span.end);
    let mut tokens = tokenize_subwords(&sent_text, vocab);
    shift_token_offsets(&mut tokens, span.start);
    tokens
}

/// Builds per-mention instances for a document. `mentions` may be the
/// document's own gold mentions (gold labels attach via the selected
/// annotation) or externally predicted ones (no gold). A mention that fits
/// inside no sentence is an error.
pub fn build_instances(
    doc: &Document,
    mentions: &[MedicationMention],
    architecture: Architecture,
    vocab: &Vocab,
) -> Result<Vec<ClassificationInstance>> {
    let sentences = segment_sentences(&doc.text);
    let mut out = Vec::with_capacity(mentions.len());

    // Mentions grouped by their covering sentence.
    let mut by_sentence: Vec<Vec<usize>> = vec![Vec::new(); sentences.len()];
    for (mi, m) in mentions.iter().enumerate() {
        let si = sentences
            .iter()
            .position(|s| m.start >= s.start && m.end <= s.end)
            .ok_or(Error::MentionOutsideSentences {
                start: m.start,
                end: m.end,
            })?;
        by_sentence[si].push(mi);
    }

    for (si, mention_indices) in by_sentence.iter().enumerate() {
        if mention_indices.is_empty() {
            continue;
        }
        let tokens = tokenize_sentence(&doc.text, sentences[si], vocab);
        let ranges: Vec<TokenRange> = mention_indices
            .iter()
            .map(|&mi| align_span(mentions[mi].start, mentions[mi].end, &tokens))
            .collect::<Result<_>>()?;

        for (k, &mi) in mention_indices.iter().enumerate() {
            let mention = &mentions[mi];
            let target = ranges[k];
            let (encoded, enc_target) = match architecture {
                Architecture::MedSingleTask | Architecture::MedMultiTask | Architecture::MedSpan => {
                    (tokens.clone(), target)
                }
                Architecture::MedIdentifiers => encode_target_markers(&tokens, target, vocab),
                Architecture::MedIdTyped => {
                    let others: Vec<TokenRange> = ranges
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| *j != k)
                        .map(|(_, r)| *r)
                        .collect();
                    encode_typed_markers(&tokens, target, &others, vocab)?
                }
            };
            let (windowed, win_target) = build_window(&encoded, enc_target, CLF_MAX_LEN, vocab)?;
            let gold = doc
                .mentions
                .iter()
                .position(|gm| gm.start == mention.start && gm.end == mention.end)
                .and_then(|gi| doc.selected_annotation(gi))
                .cloned();
            out.push(ClassificationInstance {
                mention: mention.clone(),
                sentence_idx: si,
                ids: windowed.iter().map(|t| t.id).collect(),
                target: architecture.is_medication_aware().then_some(win_target),
                gold,
            });
        }
    }
    Ok(out)
}

/// Canonical per-sentence encoding used by the medication-agnostic
/// architectures at prediction time: plain sentence tokens, windowed
/// around the sentence midpoint, no markers.
pub fn sentence_instance(
    doc: &Document,
    sentence: crate::textproc::SentenceSpan,
    vocab: &Vocab,
) -> Result<Option<Vec<u32>>> {
    let tokens = tokenize_sentence(&doc.text, sentence, vocab);
    if tokens.is_empty() {
        return Ok(None);
    }
    let mid = (tokens.len() - 1) / 2;
    let (windowed, _) = build_window(&tokens, (mid, mid), CLF_MAX_LEN, vocab)?;
    Ok(Some(windowed.iter().map(|t| t.id).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic_corpus, LabelSchema, SyntheticCorpusSpec};
    use crate::textproc::{train_subword_vocab, MARKER_OTHER_OPEN, MARKER_TARGET_OPEN, MARKER_TYPED_TARGET_OPEN};

    fn fixture() -> (Document, Vocab) {
        let text = "We started plavix and lisinopril today. Follow up soon.";
        let mentions = vec![
            MedicationMention {
                doc_id: "d".into(),
                start: 11,
                end: 17,
                text: "plavix".into(),
            },
            MedicationMention {
                doc_id: "d".into(),
                start: 22,
                end: 32,
                text: "lisinopril".into(),
            },
        ];
        let mut ann = EventAnnotation::with_event("disposition");
        ann.action = "start".into();
        ann.actor = "physician".into();
        ann.temporality = "present".into();
        ann.certainty = "certain".into();
        let doc = Document {
            doc_id: "d".into(),
            text: text.into(),
            mentions,
            annotations: vec![vec![ann.clone()], vec![ann]],
        };
        let vocab = train_subword_vocab(&[text], 70).unwrap();
        let _ = LabelSchema::default_schema();
        (doc, vocab)
    }

    #[test]
    fn identifiers_mark_a_different_target_per_instance() {
        let (doc, vocab) = fixture();
        let instances =
            build_instances(&doc, &doc.mentions.clone(), Architecture::MedIdentifiers, &vocab)
                .unwrap();
        assert_eq!(instances.len(), 2);
        assert_ne!(instances[0].ids, instances[1].ids);
        for inst in &instances {
            let at_count = inst.ids.iter().filter(|&&id| id == MARKER_TARGET_OPEN).count();
            assert_eq!(at_count, 1, "exactly one target opener");
            let (i, _) = inst.target.unwrap();
            assert_eq!(inst.ids[i - 1], MARKER_TARGET_OPEN);
        }
    }

    #[test]
    fn agnostic_instances_share_token_ids() {
        let (doc, vocab) = fixture();
        let instances =
            build_instances(&doc, &doc.mentions.clone(), Architecture::MedMultiTask, &vocab)
                .unwrap();
        assert_eq!(instances.len(), 2);
        assert_eq!(instances[0].ids, instances[1].ids);
        assert!(instances[0].target.is_none());
        assert_ne!(instances[0].mention, instances[1].mention);
        assert!(instances[0].gold.is_some());
    }

    #[test]
    fn typed_markers_wrap_target_and_single_mention_gets_no_other_pair() {
        let (doc, vocab) = fixture();
        let instances =
            build_instances(&doc, &doc.mentions.clone(), Architecture::MedIdTyped, &vocab).unwrap();
        for inst in &instances {
            assert_eq!(
                inst.ids.iter().filter(|&&id| id == MARKER_TYPED_TARGET_OPEN).count(),
                1
            );
            assert_eq!(
                inst.ids.iter().filter(|&&id| id == MARKER_OTHER_OPEN).count(),
                1
            );
        }

        // One-mention document: a target pair and zero other pairs.
        let mut solo = doc.clone();
        solo.mentions.truncate(1);
        solo.annotations.truncate(1);
        let instances =
            build_instances(&solo, &solo.mentions.clone(), Architecture::MedIdTyped, &vocab)
                .unwrap();
        assert_eq!(instances.len(), 1);
        assert_eq!(
            instances[0].ids.iter().filter(|&&id| id == MARKER_TYPED_TARGET_OPEN).count(),
            1
        );
        assert_eq!(
            instances[0].ids.iter().filter(|&&id| id == MARKER_OTHER_OPEN).count(),
            0
        );
    }

    #[test]
    fn med_span_keeps_target_without_markers() {
        let (doc, vocab) = fixture();
        let instances =
            build_instances(&doc, &doc.mentions.clone(), Architecture::MedSpan, &vocab).unwrap();
        let agnostic =
            build_instances(&doc, &doc.mentions.clone(), Architecture::MedMultiTask, &vocab)
                .unwrap();
        assert_eq!(instances[0].ids, agnostic[0].ids);
        assert!(instances[0].target.is_some());
        let (i, j) = instances[0].target.unwrap();
        assert!(i <= j && j < instances[0].ids.len());
    }

    #[test]
    fn mention_outside_sentences_is_an_error() {
        let (doc, vocab) = fixture();
        let stray = vec![MedicationMention {
            doc_id: "d".into(),
            start: 0,
            end: doc.char_len(),
            text: doc.text.clone(),
        }];
        // A span covering both sentences fits in neither.
        assert!(matches!(
            build_instances(&doc, &stray, Architecture::MedMultiTask, &vocab).unwrap_err(),
            Error::MentionOutsideSentences { .. }
        ));
    }

    #[test]
    fn instances_respect_length_budget_on_long_sentences() {
        let docs = generate_synthetic_corpus(&SyntheticCorpusSpec {
            doc_count: 10,
            seed: 33,
            ..Default::default()
        })
        .unwrap();
        let texts: Vec<&str> = docs.iter().map(|d| d.text.as_str()).collect();
        let vocab = train_subword_vocab(&texts, 220).unwrap();
        for doc in &docs {
            for arch in Architecture::ALL {
                let instances = build_instances(doc, &doc.mentions.clone(), arch, &vocab).unwrap();
                assert_eq!(instances.len(), doc.mentions.len());
                for inst in instances {
                    assert!(inst.ids.len() <= CLF_MAX_LEN);
                    if let Some((i, j)) = inst.target {
                        assert!(i <= j && j < inst.ids.len());
                    }
                    assert!(inst.gold.is_some());
                }
            }
        }
    }
}

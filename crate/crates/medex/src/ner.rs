//! Medication mention extraction as BIO sequence tagging.
//!
//! A linear head over the encoder's per-token states scores each subword
//! position as O, B-MED, or I-MED. Tagging runs per sentence; sentences
//! longer than the training length are chunked without overlap. Mention
//! character spans come from the first and last subword of each tag run,
//! which handles continuation pieces.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{char_slice, Document, MedicationMention};
use crate::encoder::{
    cross_entropy_mean, encoder_backward, encoder_forward_batch, AdamW, Batch, EncoderConfig,
    EncoderParams, Linear, ParamVisit, TrainConfig,
};
use crate::eval::{score_mentions, MentionMatchMode};
use crate::textproc::{
    align_span, segment_sentences, shift_token_offsets, tokenize_subwords, SubwordToken,
    TokenRange, Vocab, CLS_ID, SEP_ID,
};
use crate::{Error, Result};

/// Per-position tag. The numeric order O < B < I is the argmax
/// tie-breaking order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BioTag {
    O = 0,
    B = 1,
    I = 2,
}

impl BioTag {
    pub const COUNT: usize = 3;

    pub fn from_index(i: usize) -> BioTag {
        match i {
            1 => BioTag::B,
            2 => BioTag::I,
            _ => BioTag::O,
        }
    }
}

/// Encoder plus the per-position tag head.
pub struct NerModel {
    pub config: EncoderConfig,
    pub encoder: EncoderParams<f32>,
    pub head: Linear<f32>,
}

impl NerModel {
    pub fn init(config: &EncoderConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        NerModel {
            config: config.clone(),
            encoder: EncoderParams::init(config, &mut rng),
            head: Linear::init(config.hidden_dim, BioTag::COUNT, &mut rng),
        }
    }

    fn zeros_like(&self) -> Self {
        NerModel {
            config: self.config.clone(),
            encoder: self.encoder.zeros_like(),
            head: self.head.zeros_like(),
        }
    }
}

impl ParamVisit<f32> for NerModel {
    fn blocks(&self) -> Vec<(String, ndarray::ArrayViewD<'_, f32>)> {
        let mut v = self.encoder.blocks();
        for (n, b) in self.head.blocks() {
            v.push((format!("head.{n}"), b));
        }
        v
    }
    fn blocks_mut(&mut self) -> Vec<(String, ndarray::ArrayViewMutD<'_, f32>)> {
        let mut v = self.encoder.blocks_mut();
        for (n, b) in self.head.blocks_mut() {
            v.push((format!("head.{n}"), b));
        }
        v
    }
}

/// Tags token positions from aligned mention ranges: first position of
/// each range B, the rest I, everything else O. Ranges must not overlap.
pub fn bio_encode(ranges: &[TokenRange], token_count: usize) -> Result<Vec<BioTag>> {
    let mut sorted: Vec<TokenRange> = ranges.to_vec();
    sorted.sort_unstable();
    for pair in sorted.windows(2) {
        if pair[1].0 <= pair[0].1 {
            return Err(Error::OverlappingRanges {
                a0: pair[0].0,
                a1: pair[0].1,
                b0: pair[1].0,
                b1: pair[1].1,
            });
        }
    }
    let mut tags = vec![BioTag::O; token_count];
    for (start, end) in sorted {
        assert!(end < token_count, "range beyond token count");
        tags[start] = BioTag::B;
        for tag in tags.iter_mut().take(end + 1).skip(start + 1) {
            *tag = BioTag::I;
        }
    }
    Ok(tags)
}

/// Recovers mentions from a tag sequence: maximal B I* runs, with an I
/// following O or the sequence start repaired to B. Special tokens act as
/// O regardless of their tag, and every sequence in {O,B,I}^n decodes
/// without error.
pub fn bio_decode(
    tags: &[BioTag],
    tokens: &[SubwordToken],
    doc_id: &str,
    text: &str,
) -> Vec<MedicationMention> {
    assert_eq!(tags.len(), tokens.len(), "tag/token length mismatch");
    let mut mentions = Vec::new();
    let mut run: Option<(usize, usize)> = None;
    let flush = |run: &mut Option<(usize, usize)>, mentions: &mut Vec<MedicationMention>| {
        if let Some((i, j)) = run.take() {
            let start = tokens[i].start;
            let end = tokens[j].end;
            mentions.push(MedicationMention {
                doc_id: doc_id.to_string(),
                start,
                end,
                text: char_slice(text, start, end),
            });
        }
    };
    for (idx, (&tag, token)) in tags.iter().zip(tokens).enumerate() {
        let effective = if token.is_special { BioTag::O } else { tag };
        match effective {
            BioTag::O => flush(&mut run, &mut mentions),
            BioTag::B => {
                flush(&mut run, &mut mentions);
                run = Some((idx, idx));
            }
            BioTag::I => match &mut run {
                Some((_, j)) => *j = idx,
                // I after O or at the start: repaired to a fresh B.
                None => run = Some((idx, idx)),
            },
        }
    }
    flush(&mut run, &mut mentions);
    mentions
}

/// One training or inference sequence: a CLS/SEP-wrapped chunk of one
/// sentence's tokens.
struct TaggedChunk {
    ids: Vec<u32>,
    tokens: Vec<SubwordToken>,
    tags: Vec<BioTag>,
}

fn wrap_and_chunk(
    tokens: Vec<SubwordToken>,
    tags: Vec<BioTag>,
    max_len: usize,
    vocab: &Vocab,
) -> Vec<TaggedChunk> {
    let body = max_len - 2;
    let mut chunks = Vec::new();
    let mut start = 0;
    while start < tokens.len() {
        let end = (start + body).min(tokens.len());
        let at_start = tokens[start].start;
        let at_end = tokens[end - 1].end;
        let mut chunk_tokens = Vec::with_capacity(end - start + 2);
        chunk_tokens.push(SubwordToken::special(CLS_ID, vocab, at_start));
        chunk_tokens.extend_from_slice(&tokens[start..end]);
        chunk_tokens.push(SubwordToken::special(SEP_ID, vocab, at_end));
        let mut chunk_tags = Vec::with_capacity(end - start + 2);
        chunk_tags.push(BioTag::O);
        chunk_tags.extend_from_slice(&tags[start..end]);
        chunk_tags.push(BioTag::O);
        chunks.push(TaggedChunk {
            ids: chunk_tokens.iter().map(|t| t.id).collect(),
            tokens: chunk_tokens,
            tags: chunk_tags,
        });
        start = end;
    }
    chunks
}

fn doc_training_chunks(doc: &Document, vocab: &Vocab, max_len: usize) -> Result<Vec<TaggedChunk>> {
    let mut out = Vec::new();
    for sentence in segment_sentences(&doc.text) {
        let sent_text = char_slice(&doc.text, sentence.start, sentence.end);
        let mut tokens = tokenize_subwords(&sent_text, vocab);
        if tokens.is_empty() {
            continue;
        }
        shift_token_offsets(&mut tokens, sentence.start);
        let mut ranges = Vec::new();
        for m in &doc.mentions {
            if m.start < sentence.end && m.end > sentence.start {
                ranges.push(align_span(m.start, m.end, &tokens)?);
            }
        }
        let tags = bio_encode(&ranges, tokens.len())?;
        out.extend(wrap_and_chunk(tokens, tags, max_len, vocab));
    }
    Ok(out)
}

pub struct NerTrainOutcome {
    pub model: NerModel,
    /// Span F1 on the dev split after each completed epoch.
    pub dev_span_f1: Vec<f64>,
    /// Span F1 on the training split, tracked when early stopping is on.
    pub train_span_f1: Vec<f64>,
}

/// Maximum sequence length for mention tagging.
pub const NER_MAX_LEN: usize = 512;

pub fn default_ner_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: 5e-5,
        batch_size: 16,
        epochs: 4,
        weight_decay: 0.01,
        seed,
        early_stop_train_f1: None,
    }
}

fn span_f1(model: &NerModel, vocab: &Vocab, docs: &[Document]) -> f64 {
    let mut gold = std::collections::BTreeMap::new();
    let mut pred = std::collections::BTreeMap::new();
    let mut texts = std::collections::BTreeMap::new();
    for doc in docs {
        gold.insert(doc.doc_id.clone(), doc.mentions.clone());
        pred.insert(doc.doc_id.clone(), extract_mentions(model, vocab, doc));
        texts.insert(doc.doc_id.clone(), doc.text.clone());
    }
    score_mentions(&gold, &pred, &texts, MentionMatchMode::Span)
        .map(|s| s.f1)
        .unwrap_or(0.0)
}

/// Trains the tagger with per-token cross-entropy (special positions
/// masked from the loss). Deterministic given the seeds in the configs.
pub fn train_ner(
    train_docs: &[Document],
    dev_docs: &[Document],
    encoder_config: &EncoderConfig,
    train_config: &TrainConfig,
    vocab: &Vocab,
) -> Result<NerTrainOutcome> {
    encoder_config.validate()?;
    train_config.validate()?;
    if train_docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let max_len = NER_MAX_LEN.min(encoder_config.max_positions);

    let mut chunks = Vec::new();
    for doc in train_docs {
        chunks.extend(doc_training_chunks(doc, vocab, max_len)?);
    }
    if chunks.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    for c in &chunks {
        if c.ids.len() > max_len {
            return Err(Error::Config(format!(
                "chunk of {} pieces exceeds maximum length {max_len}",
                c.ids.len()
            )));
        }
    }

    let mut model = NerModel::init(encoder_config);
    let mut opt = AdamW::new(train_config.learning_rate, train_config.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(train_config.seed);
    let mut dev_history = Vec::new();
    let mut train_history = Vec::new();

    let mut order: Vec<usize> = (0..chunks.len()).collect();
    for _epoch in 0..train_config.epochs {
        order.shuffle(&mut rng);
        for batch_ids in order.chunks(train_config.batch_size) {
            let seqs: Vec<&[u32]> = batch_ids.iter().map(|&i| chunks[i].ids.as_slice()).collect();
            let batch = Batch::from_sequences(&seqs);
            let fwd =
                encoder_forward_batch(&model.encoder, encoder_config, &batch, Some(&mut rng))?;
            let logits = model.head.forward(&fwd.hidden);

            let mut targets = Vec::new();
            let mut row = 0usize;
            for &i in batch_ids {
                let chunk = &chunks[i];
                for (pos, token) in chunk.tokens.iter().enumerate() {
                    if !token.is_special {
                        targets.push((row + pos, chunk.tags[pos] as usize));
                    }
                }
                row += chunk.ids.len();
            }
            let (_, d_logits) = cross_entropy_mean(&logits, &targets);

            let mut grads = model.zeros_like();
            let d_hidden = model.head.backward(&fwd.hidden, &d_logits, &mut grads.head);
            encoder_backward(
                &model.encoder,
                encoder_config,
                &batch,
                &fwd,
                d_hidden,
                None,
                &mut grads.encoder,
            );
            opt.step(&mut model, &grads)?;
        }

        if !dev_docs.is_empty() {
            dev_history.push(span_f1(&model, vocab, dev_docs));
        }
        if let Some(target) = train_config.early_stop_train_f1 {
            let f1 = span_f1(&model, vocab, train_docs);
            train_history.push(f1);
            if f1 >= target {
                break;
            }
        }
    }

    Ok(NerTrainOutcome {
        model,
        dev_span_f1: dev_history,
        train_span_f1: train_history,
    })
}

/// Runs the tagger over a document: segment, tokenize, forward, argmax
/// (ties to the lower class index), decode, merge. Output is sorted and
/// non-overlapping.
pub fn extract_mentions(model: &NerModel, vocab: &Vocab, doc: &Document) -> Vec<MedicationMention> {
    let max_len = NER_MAX_LEN.min(model.config.max_positions);
    let mut chunks = Vec::new();
    for sentence in segment_sentences(&doc.text) {
        let sent_text = char_slice(&doc.text, sentence.start, sentence.end);
        let mut tokens = tokenize_subwords(&sent_text, vocab);
        if tokens.is_empty() {
            continue;
        }
        shift_token_offsets(&mut tokens, sentence.start);
        let tags = vec![BioTag::O; tokens.len()];
        chunks.extend(wrap_and_chunk(tokens, tags, max_len, vocab));
    }

    let mut mentions = Vec::new();
    for group in chunks.chunks(16) {
        let seqs: Vec<&[u32]> = group.iter().map(|c| c.ids.as_slice()).collect();
        let batch = Batch::from_sequences(&seqs);
        let fwd = match encoder_forward_batch(&model.encoder, &model.config, &batch, None) {
            Ok(f) => f,
            Err(_) => continue,
        };
        let logits = model.head.forward(&fwd.hidden);
        let mut row = 0usize;
        for chunk in group {
            let n = chunk.ids.len();
            let tags: Vec<BioTag> = (0..n)
                .map(|i| BioTag::from_index(argmax_lowest(&logits, row + i)))
                .collect();
            mentions.extend(bio_decode(&tags, &chunk.tokens, &doc.doc_id, &doc.text));
            row += n;
        }
    }
    mentions.sort_by_key(|m| (m.start, m.end));
    mentions
}

/// Index of the row maximum, preferring the lower index on exact ties.
fn argmax_lowest(logits: &Array2<f32>, row: usize) -> usize {
    let r = logits.row(row);
    let mut best = 0usize;
    let mut best_v = r[0];
    for (i, &v) in r.iter().enumerate().skip(1) {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic_corpus, SyntheticCorpusSpec};
    use crate::textproc::train_subword_vocab;

    fn plain_tokens(n: usize) -> Vec<SubwordToken> {
        (0..n)
            .map(|i| SubwordToken {
                id: 10,
                piece: "x".into(),
                start: i * 2,
                end: i * 2 + 1,
                is_continuation: false,
                is_special: false,
            })
            .collect()
    }

    #[test]
    fn encode_single_range() {
        let tags = bio_encode(&[(2, 3)], 5).unwrap();
        assert_eq!(tags, vec![BioTag::O, BioTag::O, BioTag::B, BioTag::I, BioTag::O]);
    }

    #[test]
    fn encode_no_mentions_is_all_o() {
        assert_eq!(bio_encode(&[], 4).unwrap(), vec![BioTag::O; 4]);
    }

    #[test]
    fn encode_adjacent_mentions_forces_double_b() {
        let tags = bio_encode(&[(1, 1), (2, 2)], 5).unwrap();
        assert_eq!(
            tags,
            vec![BioTag::O, BioTag::B, BioTag::B, BioTag::O, BioTag::O]
        );
    }

    #[test]
    fn encode_rejects_overlap() {
        assert!(matches!(
            bio_encode(&[(1, 3), (3, 4)], 6).unwrap_err(),
            Error::OverlappingRanges { .. }
        ));
    }

    #[test]
    fn decode_simple_run() {
        let tokens = plain_tokens(4);
        let text = "a b c d";
        let tags = vec![BioTag::O, BioTag::B, BioTag::I, BioTag::O];
        let mentions = bio_decode(&tags, &tokens, "d", text);
        assert_eq!(mentions.len(), 1);
        assert_eq!((mentions[0].start, mentions[0].end), (2, 5));
    }

    #[test]
    fn decode_repairs_leading_i() {
        let tokens = plain_tokens(4);
        let tags = vec![BioTag::O, BioTag::I, BioTag::I, BioTag::O];
        let mentions = bio_decode(&tags, &tokens, "d", "a b c d");
        assert_eq!(mentions.len(), 1);
        assert_eq!((mentions[0].start, mentions[0].end), (2, 5));
    }

    #[test]
    fn decode_encode_round_trip() {
        let spans: Vec<TokenRange> = vec![(0, 1), (3, 3), (5, 7)];
        let tags = bio_encode(&spans, 9).unwrap();
        let tokens = plain_tokens(9);
        let text: String = (0..20).map(|_| "x ").collect();
        let mentions = bio_decode(&tags, &tokens, "d", &text);
        let ranges: Vec<TokenRange> = mentions
            .iter()
            .map(|m| {
                let first = tokens.iter().position(|t| t.start == m.start).unwrap();
                let last = tokens.iter().position(|t| t.end == m.end).unwrap();
                (first, last)
            })
            .collect();
        assert_eq!(ranges, spans);
    }

    #[test]
    fn decode_is_total_over_short_tag_strings() {
        let tokens = plain_tokens(6);
        let text: String = (0..12).map(|_| "x ").collect();
        for code in 0..3usize.pow(6) {
            let mut c = code;
            let tags: Vec<BioTag> = (0..6)
                .map(|_| {
                    let t = BioTag::from_index(c % 3);
                    c /= 3;
                    t
                })
                .collect();
            let mentions = bio_decode(&tags, &tokens, "d", &text);
            for pair in mentions.windows(2) {
                assert!(pair[0].end <= pair[1].start);
            }
        }
    }

    #[test]
    fn empty_training_corpus_is_an_error() {
        let vocab = train_subword_vocab(&["a b"], 15).unwrap();
        let cfg = EncoderConfig {
            vocab_size: vocab.len(),
            ..Default::default()
        };
        let tc = default_ner_train_config(0);
        match train_ner(&[], &[], &cfg, &tc, &vocab) {
            Err(Error::EmptyCorpus) => {}
            Err(other) => panic!("unexpected error {other:?}"),
            Ok(_) => panic!("expected an error"),
        }
    }

    fn tiny_corpus(seed: u64) -> Vec<Document> {
        generate_synthetic_corpus(&SyntheticCorpusSpec {
            doc_count: 8,
            sentences_per_doc: (2, 4),
            seed,
            ..Default::default()
        })
        .unwrap()
    }

    fn tiny_encoder(vocab_len: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size: vocab_len,
            hidden_dim: 32,
            layers: 1,
            heads: 2,
            ffn_dim: 64,
            max_positions: 128,
            dropout: 0.1,
            seed: 4,
        }
    }

    #[test]
    fn training_is_deterministic() {
        let docs = tiny_corpus(3);
        let texts: Vec<&str> = docs.iter().map(|d| d.text.as_str()).collect();
        let vocab = train_subword_vocab(&texts, 160).unwrap();
        let cfg = tiny_encoder(vocab.len());
        let tc = TrainConfig {
            epochs: 3,
            batch_size: 8,
            ..default_ner_train_config(9)
        };
        let out1 = train_ner(&docs, &docs[..2], &cfg, &tc, &vocab).unwrap();
        let out2 = train_ner(&docs, &docs[..2], &cfg, &tc, &vocab).unwrap();
        assert_eq!(out1.dev_span_f1, out2.dev_span_f1);
        assert_eq!(out1.dev_span_f1.len(), 3);
    }

    #[test]
    fn overfit_small_corpus_reaches_high_span_f1() {
        let docs = tiny_corpus(5);
        let texts: Vec<&str> = docs.iter().map(|d| d.text.as_str()).collect();
        let vocab = train_subword_vocab(&texts, 200).unwrap();
        let mut cfg = tiny_encoder(vocab.len());
        cfg.dropout = 0.0;
        let tc = TrainConfig {
            learning_rate: 3e-4,
            epochs: 30,
            batch_size: 8,
            early_stop_train_f1: Some(0.95),
            ..default_ner_train_config(2)
        };
        let out = train_ner(&docs, &[], &cfg, &tc, &vocab).unwrap();
        let final_f1 = out.train_span_f1.last().copied().unwrap_or(0.0);
        assert!(final_f1 >= 0.95, "train span F1 {final_f1}");
    }

    #[test]
    fn untrained_model_extraction_is_deterministic_sorted_nonoverlapping() {
        let docs = tiny_corpus(7);
        let texts: Vec<&str> = docs.iter().map(|d| d.text.as_str()).collect();
        let vocab = train_subword_vocab(&texts, 160).unwrap();
        let cfg = tiny_encoder(vocab.len());
        let model = NerModel::init(&cfg);
        for doc in &docs {
            let a = extract_mentions(&model, &vocab, doc);
            let b = extract_mentions(&model, &vocab, doc);
            assert_eq!(a, b);
            for pair in a.windows(2) {
                assert!(pair[0].end <= pair[1].start);
            }
            for m in &a {
                assert!(m.end <= doc.char_len());
                assert_eq!(m.text, char_slice(&doc.text, m.start, m.end));
            }
        }
    }
}

//! Scoring and system comparison.
//!
//! Mention extraction is scored at span level (exact boundaries, one-to-one
//! matching) and token level (whitespace-word overlap). Label
//! classification reports one-vs-rest precision/recall/F1 per class with
//! micro and macro averages per task and an overall average across the
//! five tasks. End-to-end scoring counts a prediction only when the span
//! and every required label are right. Paired bootstrap resampling
//! compares two systems on identical evaluation units.

mod bootstrap;
mod report;

pub use bootstrap::{
    bootstrap_compare, units_from_end_to_end, units_from_label_pairs, units_from_mentions,
    ComparisonResult, PairedCounts, PairedUnit,
};
pub use report::{ClassPrf, MetricsReport, TaskMetrics};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, EventAnnotation, LabelSchema, MedicationMention, DISPOSITION, NONE_LABEL, TASKS};
use crate::{Error, Result};

/// Precision/recall/F1 with the counts they came from. Undefined ratios
/// (zero denominators) score 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrfScore {
    pub true_pos: usize,
    pub false_pos: usize,
    pub false_neg: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl PrfScore {
    pub fn from_counts(true_pos: usize, false_pos: usize, false_neg: usize) -> Self {
        let precision = if true_pos + false_pos == 0 {
            0.0
        } else {
            true_pos as f64 / (true_pos + false_pos) as f64
        };
        let recall = if true_pos + false_neg == 0 {
            0.0
        } else {
            true_pos as f64 / (true_pos + false_neg) as f64
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        PrfScore {
            true_pos,
            false_pos,
            false_neg,
            precision,
            recall,
            f1,
        }
    }
}

/// Exact span boundaries or whitespace-word overlap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MentionMatchMode {
    Span,
    Token,
}

/// Character spans of whitespace-delimited words, used as the token-level
/// evaluation unit so scores do not depend on any subword vocabulary.
pub fn word_spans(text: &str) -> Vec<(usize, usize)> {
    let chars: Vec<char> = text.chars().collect();
    let mut spans = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && !chars[i].is_whitespace() {
            i += 1;
        }
        spans.push((start, i));
    }
    spans
}

fn covered_words(words: &[(usize, usize)], mentions: &[MedicationMention]) -> BTreeSet<usize> {
    let mut covered = BTreeSet::new();
    for (wi, &(ws, we)) in words.iter().enumerate() {
        if mentions.iter().any(|m| m.start < we && m.end > ws) {
            covered.insert(wi);
        }
    }
    covered
}

/// Per-document mention counts for one system, in one mode. `doc_text` is
/// required for token mode.
pub fn mention_counts(
    gold: &[MedicationMention],
    pred: &[MedicationMention],
    doc_text: &str,
    mode: MentionMatchMode,
) -> (usize, usize, usize) {
    match mode {
        MentionMatchMode::Span => {
            let gold_spans: BTreeSet<(usize, usize)> = gold.iter().map(|m| (m.start, m.end)).collect();
            let pred_spans: BTreeSet<(usize, usize)> = pred.iter().map(|m| (m.start, m.end)).collect();
            let tp = gold_spans.intersection(&pred_spans).count();
            (tp, pred_spans.len() - tp, gold_spans.len() - tp)
        }
        MentionMatchMode::Token => {
            let words = word_spans(doc_text);
            let g = covered_words(&words, gold);
            let p = covered_words(&words, pred);
            let tp = g.intersection(&p).count();
            (tp, p.len() - tp, g.len() - tp)
        }
    }
}

/// Scores predicted against gold mentions over a corpus. The two maps must
/// cover the same document ids. `texts` maps doc id to note text (needed
/// for token mode).
pub fn score_mentions(
    gold: &BTreeMap<String, Vec<MedicationMention>>,
    pred: &BTreeMap<String, Vec<MedicationMention>>,
    texts: &BTreeMap<String, String>,
    mode: MentionMatchMode,
) -> Result<PrfScore> {
    let gold_ids: BTreeSet<&String> = gold.keys().collect();
    let pred_ids: BTreeSet<&String> = pred.keys().collect();
    if gold_ids != pred_ids {
        let missing: Vec<&&String> = gold_ids.symmetric_difference(&pred_ids).collect();
        return Err(Error::DocIdMismatch(format!("{missing:?}")));
    }
    let (mut tp, mut fp, mut fneg) = (0, 0, 0);
    for (doc_id, gold_mentions) in gold {
        let empty = String::new();
        let text = texts.get(doc_id).unwrap_or(&empty);
        let (t, f, n) = mention_counts(gold_mentions, &pred[doc_id], text, mode);
        tp += t;
        fp += f;
        fneg += n;
    }
    Ok(PrfScore::from_counts(tp, fp, fneg))
}

/// Identity of one mention for alignment across systems.
pub type MentionKey = (String, usize, usize);

pub fn mention_key(m: &MedicationMention) -> MentionKey {
    (m.doc_id.clone(), m.start, m.end)
}

/// One mention with its gold and predicted label sets.
#[derive(Debug, Clone)]
pub struct LabelPair {
    pub key: MentionKey,
    pub gold: EventAnnotation,
    pub pred: EventAnnotation,
}

/// Aligns two keyed label sets into pairs; the key sets must be identical.
pub fn align_label_pairs(
    gold: &[(MentionKey, EventAnnotation)],
    pred: &[(MentionKey, EventAnnotation)],
) -> Result<Vec<LabelPair>> {
    let gold_map: BTreeMap<&MentionKey, &EventAnnotation> =
        gold.iter().map(|(k, a)| (k, a)).collect();
    let pred_map: BTreeMap<&MentionKey, &EventAnnotation> =
        pred.iter().map(|(k, a)| (k, a)).collect();
    if gold_map.len() != gold.len() || pred_map.len() != pred.len() {
        return Err(Error::MentionSetMismatch("duplicate mention keys".into()));
    }
    let gk: BTreeSet<_> = gold_map.keys().collect();
    let pk: BTreeSet<_> = pred_map.keys().collect();
    if gk != pk {
        let diff: Vec<_> = gk.symmetric_difference(&pk).take(5).collect();
        return Err(Error::MentionSetMismatch(format!("{diff:?}")));
    }
    Ok(gold_map
        .iter()
        .map(|(k, g)| LabelPair {
            key: (*k).clone(),
            gold: (*g).clone(),
            pred: pred_map[*k].clone(),
        })
        .collect())
}

/// Per-task, per-class one-vs-rest scoring over aligned mention label
/// pairs, with micro and macro aggregates and the overall average across
/// the five tasks.
pub fn score_labels(pairs: &[LabelPair], schema: &LabelSchema) -> MetricsReport {
    let mut per_task = Vec::with_capacity(TASKS.len());
    for task in TASKS {
        let classes = schema.classes(task);
        let mut per_class = Vec::with_capacity(classes.len());
        let (mut pooled_tp, mut pooled_fp, mut pooled_fn) = (0usize, 0usize, 0usize);
        let (mut nn_tp, mut nn_fp, mut nn_fn) = (0usize, 0usize, 0usize);
        for class in classes {
            let mut tp = 0;
            let mut fp = 0;
            let mut fneg = 0;
            for p in pairs {
                let g = p.gold.label(task) == class;
                let pr = p.pred.label(task) == class;
                match (g, pr) {
                    (true, true) => tp += 1,
                    (false, true) => fp += 1,
                    (true, false) => fneg += 1,
                    _ => {}
                }
            }
            pooled_tp += tp;
            pooled_fp += fp;
            pooled_fn += fneg;
            if class != NONE_LABEL {
                nn_tp += tp;
                nn_fp += fp;
                nn_fn += fneg;
            }
            per_class.push(ClassPrf {
                class: class.clone(),
                score: PrfScore::from_counts(tp, fp, fneg),
            });
        }
        let included: Vec<&ClassPrf> = per_class
            .iter()
            .filter(|c| c.score.true_pos + c.score.false_pos + c.score.false_neg > 0)
            .collect();
        let macro_f1 = if included.is_empty() {
            0.0
        } else {
            included.iter().map(|c| c.score.f1).sum::<f64>() / included.len() as f64
        };
        let has_none = classes.iter().any(|c| c == NONE_LABEL);
        per_task.push(TaskMetrics {
            task: task.to_string(),
            per_class,
            micro: PrfScore::from_counts(pooled_tp, pooled_fp, pooled_fn),
            micro_excl_none: has_none.then(|| PrfScore::from_counts(nn_tp, nn_fp, nn_fn)),
            macro_f1,
        });
    }
    let overall_micro_f1 = per_task.iter().map(|t| t.micro.f1).sum::<f64>() / TASKS.len() as f64;
    let overall_macro_f1 = per_task.iter().map(|t| t.macro_f1).sum::<f64>() / TASKS.len() as f64;
    MetricsReport {
        mention_span: None,
        mention_token: None,
        per_task,
        overall_micro_f1,
        overall_macro_f1,
        support: pairs.len(),
    }
}

/// Whether a predicted annotation counts as fully correct against gold:
/// the event must match, and when the gold event is a disposition all four
/// attributes must match too.
pub fn labels_fully_correct(gold: &EventAnnotation, pred: &EventAnnotation) -> bool {
    if gold.event != pred.event {
        return false;
    }
    if gold.event == DISPOSITION {
        gold.action == pred.action
            && gold.actor == pred.actor
            && gold.temporality == pred.temporality
            && gold.certainty == pred.certainty
    } else {
        true
    }
}

/// Joint mention-plus-label scoring. A predicted mention is a true
/// positive only when its span exactly matches a gold mention and
/// [`labels_fully_correct`] holds against that mention's selected gold
/// annotation. Returns the overall score and a variant restricted to
/// disposition events on both sides.
pub fn score_end_to_end(
    gold_docs: &[Document],
    preds: &[(MedicationMention, EventAnnotation)],
) -> (PrfScore, PrfScore) {
    let mut gold: BTreeMap<MentionKey, &EventAnnotation> = BTreeMap::new();
    for doc in gold_docs {
        for (i, m) in doc.mentions.iter().enumerate() {
            if let Some(ann) = doc.selected_annotation(i) {
                gold.insert(mention_key(m), ann);
            }
        }
    }

    let score = |disposition_only: bool| -> PrfScore {
        let gold_filtered: BTreeMap<&MentionKey, &&EventAnnotation> = gold
            .iter()
            .filter(|(_, a)| !disposition_only || a.event == DISPOSITION)
            .collect();
        let preds_filtered: Vec<&(MedicationMention, EventAnnotation)> = preds
            .iter()
            .filter(|(_, a)| !disposition_only || a.event == DISPOSITION)
            .collect();
        let mut matched: BTreeSet<&MentionKey> = BTreeSet::new();
        let mut tp = 0;
        let mut fp = 0;
        for (mention, pred_ann) in &preds_filtered {
            let key = mention_key(mention);
            match gold_filtered.get(&key) {
                Some(gold_ann)
                    if !matched.contains(&key) && labels_fully_correct(gold_ann, pred_ann) =>
                {
                    let stored = gold_filtered.keys().find(|k| ***k == key).unwrap();
                    matched.insert(stored);
                    tp += 1;
                }
                _ => fp += 1,
            }
        }
        let fneg = gold_filtered.len() - tp;
        PrfScore::from_counts(tp, fp, fneg)
    };

    (score(false), score(true))
}

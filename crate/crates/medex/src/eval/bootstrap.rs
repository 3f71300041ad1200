//! Paired bootstrap comparison of two systems.
//!
//! Evaluation units carry additive per-task counts for both systems; the
//! metric of a unit multiset is the mean over tasks of pooled F1, so one
//! machinery covers span F1 (one slot, document units), per-task micro F1
//! (one slot, mention units), the five-task overall average (five slots),
//! and end-to-end F1. Units are sorted by key before resampling, which
//! makes the p-value independent of input order, and each resample draws
//! from its own RNG derived from the master seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{labels_fully_correct, mention_counts, LabelPair, MentionMatchMode, PrfScore};
use crate::corpus::{Document, EventAnnotation, MedicationMention, DISPOSITION, TASKS};
use crate::{Error, Result};

/// Additive true-positive/false-positive/false-negative counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairedCounts {
    pub tp: usize,
    pub fp: usize,
    pub fneg: usize,
}

impl PairedCounts {
    fn add(&mut self, other: &PairedCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fneg += other.fneg;
    }
}

/// One resampling unit: per-slot counts for systems A and B.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairedUnit {
    pub key: String,
    pub a: Vec<PairedCounts>,
    pub b: Vec<PairedCounts>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResult {
    /// Observed metric difference, system A minus system B, on the full data.
    pub delta: f64,
    pub n_resamples: usize,
    pub p_value: f64,
    pub seed: u64,
}

fn metric(units: &[PairedUnit], indices: &[usize], side_a: bool) -> f64 {
    let slots = units[0].a.len();
    let mut pooled = vec![PairedCounts::default(); slots];
    for &i in indices {
        let side = if side_a { &units[i].a } else { &units[i].b };
        for (acc, c) in pooled.iter_mut().zip(side) {
            acc.add(c);
        }
    }
    pooled
        .iter()
        .map(|c| PrfScore::from_counts(c.tp, c.fp, c.fneg).f1)
        .sum::<f64>()
        / slots as f64
}

fn iteration_rng(master: u64, iteration: u64) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    seed[..8].copy_from_slice(&master.to_le_bytes());
    seed[8..16].copy_from_slice(&iteration.to_le_bytes());
    seed[16..24].copy_from_slice(&master.rotate_left(32).to_le_bytes());
    ChaCha8Rng::from_seed(seed)
}

/// Paired bootstrap test: resamples units with replacement `n_resamples`
/// times and reports the fraction of resamples whose difference exceeds
/// twice the observed difference. Identical systems return p = 1.0 by
/// convention.
pub fn bootstrap_compare(
    units: &[PairedUnit],
    n_resamples: usize,
    seed: u64,
) -> Result<ComparisonResult> {
    if units.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let mut units = units.to_vec();
    units.sort_by(|x, y| x.key.cmp(&y.key));
    let slots = units[0].a.len();
    if units.iter().any(|u| u.a.len() != slots || u.b.len() != slots) {
        return Err(Error::Config("inconsistent slot counts across units".into()));
    }

    if units.iter().all(|u| u.a == u.b) {
        return Ok(ComparisonResult {
            delta: 0.0,
            n_resamples,
            p_value: 1.0,
            seed,
        });
    }

    let n = units.len();
    let all: Vec<usize> = (0..n).collect();
    let delta = metric(&units, &all, true) - metric(&units, &all, false);

    let mut exceed = 0usize;
    let mut indices = vec![0usize; n];
    for iter in 0..n_resamples {
        let mut rng = iteration_rng(seed, iter as u64);
        for slot in indices.iter_mut() {
            *slot = rng.gen_range(0..n);
        }
        let d_star = metric(&units, &indices, true) - metric(&units, &indices, false);
        if d_star > 2.0 * delta {
            exceed += 1;
        }
    }

    Ok(ComparisonResult {
        delta,
        n_resamples,
        p_value: exceed as f64 / n_resamples as f64,
        seed,
    })
}

/// Builds five-slot mention units from label pairs of two systems aligned
/// on the same mentions.
pub fn units_from_label_pairs(a: &[LabelPair], b: &[LabelPair]) -> Result<Vec<PairedUnit>> {
    if a.len() != b.len() {
        return Err(Error::MentionSetMismatch(format!(
            "system A has {} mentions, system B has {}",
            a.len(),
            b.len()
        )));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(|x, y| x.key.cmp(&y.key));
    b.sort_by(|x, y| x.key.cmp(&y.key));
    let mut units = Vec::with_capacity(a.len());
    for (pa, pb) in a.iter().zip(&b) {
        if pa.key != pb.key {
            return Err(Error::MentionSetMismatch(format!(
                "{:?} vs {:?}",
                pa.key, pb.key
            )));
        }
        if pa.gold != pb.gold {
            return Err(Error::MentionSetMismatch(format!(
                "gold labels differ for {:?}",
                pa.key
            )));
        }
        let counts = |p: &LabelPair| -> Vec<PairedCounts> {
            TASKS
                .iter()
                .map(|task| {
                    if p.gold.label(task) == p.pred.label(task) {
                        PairedCounts { tp: 1, fp: 0, fneg: 0 }
                    } else {
                        PairedCounts { tp: 0, fp: 1, fneg: 1 }
                    }
                })
                .collect()
        };
        units.push(PairedUnit {
            key: format!("{}:{}:{}", pa.key.0, pa.key.1, pa.key.2),
            a: counts(pa),
            b: counts(pb),
        });
    }
    Ok(units)
}

/// Builds one-slot document units for mention-extraction comparison.
pub fn units_from_mentions(
    gold: &std::collections::BTreeMap<String, Vec<MedicationMention>>,
    pred_a: &std::collections::BTreeMap<String, Vec<MedicationMention>>,
    pred_b: &std::collections::BTreeMap<String, Vec<MedicationMention>>,
    texts: &std::collections::BTreeMap<String, String>,
    mode: MentionMatchMode,
) -> Result<Vec<PairedUnit>> {
    let empty = String::new();
    let mut units = Vec::new();
    for (doc_id, gold_mentions) in gold {
        let (pa, pb) = match (pred_a.get(doc_id), pred_b.get(doc_id)) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(Error::DocIdMismatch(doc_id.clone())),
        };
        let text = texts.get(doc_id).unwrap_or(&empty);
        let (tp, fp, fneg) = mention_counts(gold_mentions, pa, text, mode);
        let a = vec![PairedCounts { tp, fp, fneg }];
        let (tp, fp, fneg) = mention_counts(gold_mentions, pb, text, mode);
        let b = vec![PairedCounts { tp, fp, fneg }];
        units.push(PairedUnit {
            key: doc_id.clone(),
            a,
            b,
        });
    }
    Ok(units)
}

fn end_to_end_unit_counts(
    gold: &std::collections::BTreeMap<super::MentionKey, EventAnnotation>,
    preds: &[(MedicationMention, EventAnnotation)],
    disposition_only: bool,
) -> std::collections::BTreeMap<String, PairedCounts> {
    let mut by_key: std::collections::BTreeMap<String, PairedCounts> =
        std::collections::BTreeMap::new();
    let mut matched: std::collections::BTreeSet<super::MentionKey> = Default::default();
    for (m, pred_ann) in preds {
        if disposition_only && pred_ann.event != DISPOSITION {
            continue;
        }
        let key = super::mention_key(m);
        let unit_key = format!("{}:{}:{}", key.0, key.1, key.2);
        let entry = by_key.entry(unit_key).or_default();
        match gold.get(&key) {
            Some(gold_ann)
                if (!disposition_only || gold_ann.event == DISPOSITION)
                    && !matched.contains(&key)
                    && labels_fully_correct(gold_ann, pred_ann) =>
            {
                matched.insert(key);
                entry.tp += 1;
            }
            _ => entry.fp += 1,
        }
    }
    for (key, gold_ann) in gold {
        if disposition_only && gold_ann.event != DISPOSITION {
            continue;
        }
        if !matched.contains(key) {
            let unit_key = format!("{}:{}:{}", key.0, key.1, key.2);
            by_key.entry(unit_key).or_default().fneg += 1;
        }
    }
    by_key
}

/// Builds one-slot mention units for end-to-end comparison; spurious
/// predictions become their own units.
pub fn units_from_end_to_end(
    gold_docs: &[Document],
    preds_a: &[(MedicationMention, EventAnnotation)],
    preds_b: &[(MedicationMention, EventAnnotation)],
    disposition_only: bool,
) -> Vec<PairedUnit> {
    let mut gold = std::collections::BTreeMap::new();
    for doc in gold_docs {
        for (i, m) in doc.mentions.iter().enumerate() {
            if let Some(ann) = doc.selected_annotation(i) {
                gold.insert(super::mention_key(m), ann.clone());
            }
        }
    }
    let a_counts = end_to_end_unit_counts(&gold, preds_a, disposition_only);
    let b_counts = end_to_end_unit_counts(&gold, preds_b, disposition_only);
    let keys: std::collections::BTreeSet<&String> =
        a_counts.keys().chain(b_counts.keys()).collect();
    keys.into_iter()
        .map(|k| PairedUnit {
            key: k.clone(),
            a: vec![a_counts.get(k).copied().unwrap_or_default()],
            b: vec![b_counts.get(k).copied().unwrap_or_default()],
        })
        .collect()
}

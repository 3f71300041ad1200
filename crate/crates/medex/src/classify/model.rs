//! Classifier architectures, bundles, span pooling, and prediction.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::instances::{build_instances, sentence_instance, ClassificationInstance};
use crate::corpus::{Document, EventAnnotation, LabelSchema, MedicationMention, DISPOSITION, NONE_LABEL, TASKS};
use crate::encoder::{
    cross_entropy_mean, encoder_forward_batch, softmax_rows, Batch, EncoderConfig, EncoderParams,
    Forward, Linear, ParamVisit, Scalar,
};
use crate::textproc::{segment_sentences, TokenRange, Vocab};
use crate::{Error, Result};

/// The five selectable classifier architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Architecture {
    MedSingleTask,
    MedMultiTask,
    MedSpan,
    MedIdentifiers,
    MedIdTyped,
}

impl Architecture {
    pub const ALL: [Architecture; 5] = [
        Architecture::MedSingleTask,
        Architecture::MedMultiTask,
        Architecture::MedSpan,
        Architecture::MedIdentifiers,
        Architecture::MedIdTyped,
    ];

    /// Medication-aware architectures condition on the target mention's
    /// location; the others classify the sentence as a whole.
    pub fn is_medication_aware(&self) -> bool {
        matches!(
            self,
            Architecture::MedSpan | Architecture::MedIdentifiers | Architecture::MedIdTyped
        )
    }

    pub fn name(&self) -> &'static str {
        match self {
            Architecture::MedSingleTask => "MedSingleTask",
            Architecture::MedMultiTask => "MedMultiTask",
            Architecture::MedSpan => "MedSpan",
            Architecture::MedIdentifiers => "MedIdentifiers",
            Architecture::MedIdTyped => "MedIDTyped",
        }
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "MedSingleTask" => Ok(Architecture::MedSingleTask),
            "MedMultiTask" => Ok(Architecture::MedMultiTask),
            "MedSpan" => Ok(Architecture::MedSpan),
            "MedIdentifiers" => Ok(Architecture::MedIdentifiers),
            "MedIDTyped" => Ok(Architecture::MedIdTyped),
            other => Err(Error::UnknownArchitecture(other.to_string())),
        }
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A single-task component: its own encoder and one head.
pub struct SingleTaskModel {
    pub encoder: EncoderParams<f32>,
    pub head: Linear<f32>,
}

/// Shared encoder with five heads.
pub struct MultiTaskModel {
    pub encoder: EncoderParams<f32>,
    pub heads: Vec<Linear<f32>>,
}

/// A trained classifier: either five independent single-task models or
/// one multi-task model, plus everything needed to run it.
pub struct ClassifierBundle {
    pub architecture: Architecture,
    pub schema: LabelSchema,
    pub config: EncoderConfig,
    pub kind: BundleKind,
}

pub enum BundleKind {
    SingleTask(Vec<SingleTaskModel>),
    MultiTask(MultiTaskModel),
}

impl SingleTaskModel {
    pub(crate) fn zeros_like(&self) -> Self {
        SingleTaskModel {
            encoder: self.encoder.zeros_like(),
            head: self.head.zeros_like(),
        }
    }
}

impl MultiTaskModel {
    pub(crate) fn zeros_like(&self) -> Self {
        MultiTaskModel {
            encoder: self.encoder.zeros_like(),
            heads: self.heads.iter().map(|h| h.zeros_like()).collect(),
        }
    }
}

impl ParamVisit<f32> for SingleTaskModel {
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

impl ParamVisit<f32> for MultiTaskModel {
    fn blocks(&self) -> Vec<(String, ndarray::ArrayViewD<'_, f32>)> {
        let mut v = self.encoder.blocks();
        for (task, head) in TASKS.iter().zip(&self.heads) {
            for (n, b) in head.blocks() {
                v.push((format!("head.{task}.{n}"), b));
            }
        }
        v
    }
    fn blocks_mut(&mut self) -> Vec<(String, ndarray::ArrayViewMutD<'_, f32>)> {
        let mut v = self.encoder.blocks_mut();
        for (task, head) in TASKS.iter().zip(self.heads.iter_mut()) {
            for (n, b) in head.blocks_mut() {
                v.push((format!("head.{task}.{n}"), b));
            }
        }
        v
    }
}

/// Span representation: the pooled state concatenated with an elementwise
/// max over the target span's hidden rows. Output length is twice the
/// hidden width.
pub fn med_span_representation<F: Scalar>(
    hidden: &Array2<F>,
    pooled: &Array1<F>,
    target: TokenRange,
) -> Result<Array1<F>> {
    let (i, j) = target;
    if i > j || j >= hidden.nrows() {
        return Err(Error::Config(format!(
            "span range [{i}, {j}] invalid for {} hidden rows",
            hidden.nrows()
        )));
    }
    let h = hidden.ncols();
    let mut out = Array1::zeros(h * 2);
    for (k, &v) in pooled.iter().enumerate() {
        out[k] = v;
    }
    for col in 0..h {
        let mut best = hidden[(i, col)];
        for row in i + 1..=j {
            if hidden[(row, col)] > best {
                best = hidden[(row, col)];
            }
        }
        out[h + col] = best;
    }
    Ok(out)
}

/// Mean of the per-task cross-entropy losses (natural log), with the
/// matching per-task logit gradients.
pub fn multitask_loss<F: Scalar>(
    per_task_logits: &[Array2<F>],
    per_task_gold: &[Vec<usize>],
) -> (f64, Vec<Array2<F>>) {
    assert_eq!(per_task_logits.len(), per_task_gold.len());
    let tasks = per_task_logits.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(per_task_logits.len());
    for (logits, gold) in per_task_logits.iter().zip(per_task_gold) {
        assert_eq!(logits.nrows(), gold.len(), "logit/gold shape mismatch");
        let targets: Vec<(usize, usize)> = gold.iter().copied().enumerate().collect();
        let (loss, mut d) = cross_entropy_mean(logits, &targets);
        total += loss / tasks;
        let scale = F::from(1.0 / tasks).unwrap();
        d.mapv_inplace(|v| v * scale);
        grads.push(d);
    }
    (total, grads)
}

/// One mention's predicted labels with per-task probability vectors in
/// [`TASKS`] order; labels are the per-task argmax with ties resolved to
/// the lower class index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventPrediction {
    pub mention: MedicationMention,
    pub annotation: EventAnnotation,
    pub probabilities: Vec<Vec<f64>>,
}

pub(crate) fn argmax_lowest_f64(probs: &[f64]) -> usize {
    let mut best = 0usize;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &p) in probs.iter().enumerate() {
        if p > best_v {
            best = i;
            best_v = p;
        }
    }
    best
}

fn annotation_from_probs(schema: &LabelSchema, probs: &[Vec<f64>]) -> EventAnnotation {
    let mut ann = EventAnnotation::with_event("");
    for (t, task) in TASKS.iter().enumerate() {
        let classes = schema.classes(task);
        let idx = argmax_lowest_f64(&probs[t]);
        let value = classes[idx].clone();
        match *task {
            "event" => ann.event = value,
            "action" => ann.action = value,
            "actor" => ann.actor = value,
            "temporality" => ann.temporality = value,
            "certainty" => ann.certainty = value,
            _ => unreachable!(),
        }
    }
    ann
}

fn one_hot(len: usize, idx: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    v[idx] = 1.0;
    v
}

fn probs_row(logits: &Array2<f32>, row: usize) -> Vec<f64> {
    let sm = softmax_rows(logits);
    sm.row(row).iter().map(|&v| v as f64).collect()
}

/// Per-instance feature matrix for a multi-task model: pooled states, or
/// pooled concatenated with span max-pooling for MedSpan. Also returns the
/// per-feature argmax rows needed to route span gradients back.
pub(crate) fn build_features(
    fwd: &Forward<f32>,
    batch: &Batch,
    targets: Option<&[TokenRange]>,
) -> (Array2<f32>, Option<Vec<Vec<usize>>>) {
    match targets {
        None => (fwd.pooled.clone(), None),
        Some(ranges) => {
            let h = fwd.pooled.ncols();
            let b = batch.seqs.len();
            let mut features = Array2::zeros((b, 2 * h));
            let mut argmax_rows = vec![vec![0usize; h]; b];
            for (bi, ((s0, _), (i, j))) in batch.seqs.iter().zip(ranges).enumerate() {
                for col in 0..h {
                    features[(bi, col)] = fwd.pooled[(bi, col)];
                }
                for col in 0..h {
                    let mut best_row = s0 + i;
                    let mut best = fwd.hidden[(best_row, col)];
                    for row in (s0 + i)..=(s0 + j) {
                        if fwd.hidden[(row, col)] > best {
                            best = fwd.hidden[(row, col)];
                            best_row = row;
                        }
                    }
                    features[(bi, h + col)] = best;
                    argmax_rows[bi][col] = best_row;
                }
            }
            (features, Some(argmax_rows))
        }
    }
}

/// Splits feature gradients back into pooled and hidden gradients. The
/// span half routes each column's gradient to its argmax row.
pub(crate) fn backprop_features(
    d_features: &Array2<f32>,
    argmax_rows: Option<&Vec<Vec<usize>>>,
    hidden_shape: (usize, usize),
) -> (Array2<f32>, Array2<f32>) {
    let b = d_features.nrows();
    let mut d_hidden = Array2::zeros(hidden_shape);
    match argmax_rows {
        None => (d_features.clone(), d_hidden),
        Some(rows) => {
            let h = hidden_shape.1;
            let mut d_pooled = Array2::zeros((b, h));
            for bi in 0..b {
                for col in 0..h {
                    d_pooled[(bi, col)] = d_features[(bi, col)];
                    d_hidden[(rows[bi][col], col)] += d_features[(bi, h + col)];
                }
            }
            (d_pooled, d_hidden)
        }
    }
}

fn forward_probs_multi(
    model: &MultiTaskModel,
    config: &EncoderConfig,
    instances: &[&ClassificationInstance],
    span_features: bool,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let seqs: Vec<&[u32]> = instances.iter().map(|i| i.ids.as_slice()).collect();
    let batch = Batch::from_sequences(&seqs);
    let fwd = encoder_forward_batch(&model.encoder, config, &batch, None)?;
    let targets: Option<Vec<TokenRange>> = if span_features {
        Some(
            instances
                .iter()
                .map(|i| i.target.expect("aware instance has a target"))
                .collect(),
        )
    } else {
        None
    };
    let (features, _) = build_features(&fwd, &batch, targets.as_deref());
    let mut out = vec![Vec::with_capacity(TASKS.len()); instances.len()];
    for head in &model.heads {
        let logits = head.forward(&features);
        for (bi, slot) in out.iter_mut().enumerate() {
            slot.push(probs_row(&logits, bi));
        }
    }
    Ok(out)
}

/// Predicts labels for the given mentions of one document.
///
/// Medication-agnostic bundles compute one prediction per sentence and
/// copy it to every mention in that sentence; MedSingleTask runs its
/// attribute models only where the predicted event is a disposition.
/// Medication-aware bundles predict per mention.
pub fn predict_labels(
    bundle: &ClassifierBundle,
    vocab: &Vocab,
    doc: &Document,
    mentions: &[MedicationMention],
) -> Result<Vec<EventPrediction>> {
    let schema = &bundle.schema;
    if mentions.is_empty() {
        return Ok(Vec::new());
    }

    if bundle.architecture.is_medication_aware() {
        let instances = build_instances(doc, mentions, bundle.architecture, vocab)?;
        let model = match &bundle.kind {
            BundleKind::MultiTask(m) => m,
            BundleKind::SingleTask(_) => {
                return Err(Error::Config(
                    "medication-aware bundle holds single-task models".into(),
                ))
            }
        };
        let refs: Vec<&ClassificationInstance> = instances.iter().collect();
        let probs = forward_probs_multi(
            model,
            &bundle.config,
            &refs,
            bundle.architecture == Architecture::MedSpan,
        )?;
        let mut out: Vec<EventPrediction> = instances
            .iter()
            .zip(probs)
            .map(|(inst, p)| EventPrediction {
                mention: inst.mention.clone(),
                annotation: annotation_from_probs(schema, &p),
                probabilities: p,
            })
            .collect();
        out.sort_by_key(|p| (p.mention.start, p.mention.end));
        return Ok(out);
    }

    // Medication-agnostic path: one canonical instance per sentence.
    let sentences = segment_sentences(&doc.text);
    let mut sentence_of = Vec::with_capacity(mentions.len());
    for m in mentions {
        let si = sentences
            .iter()
            .position(|s| m.start >= s.start && m.end <= s.end)
            .ok_or(Error::MentionOutsideSentences {
                start: m.start,
                end: m.end,
            })?;
        sentence_of.push(si);
    }
    let mut needed: Vec<usize> = sentence_of.clone();
    needed.sort_unstable();
    needed.dedup();

    let mut per_sentence: std::collections::BTreeMap<usize, Vec<Vec<f64>>> = Default::default();
    for &si in &needed {
        let Some(ids) = sentence_instance(doc, sentences[si], vocab)? else {
            continue;
        };
        let probs = match &bundle.kind {
            BundleKind::MultiTask(model) => {
                let batch = Batch::from_sequences(&[ids.as_slice()]);
                let fwd = encoder_forward_batch(&model.encoder, &bundle.config, &batch, None)?;
                let (features, _) = build_features(&fwd, &batch, None);
                model
                    .heads
                    .iter()
                    .map(|head| probs_row(&head.forward(&features), 0))
                    .collect::<Vec<_>>()
            }
            BundleKind::SingleTask(models) => {
                let batch = Batch::from_sequences(&[ids.as_slice()]);
                // Event model first.
                let event_probs = {
                    let m = &models[0];
                    let fwd = encoder_forward_batch(&m.encoder, &bundle.config, &batch, None)?;
                    probs_row(&m.head.forward(&fwd.pooled), 0)
                };
                let event_idx = argmax_lowest_f64(&event_probs);
                let is_disposition = schema.event[event_idx] == DISPOSITION;
                let mut all = vec![event_probs];
                for (t, task) in TASKS.iter().enumerate().skip(1) {
                    let classes = schema.classes(task);
                    if is_disposition {
                        let m = &models[t];
                        let fwd = encoder_forward_batch(&m.encoder, &bundle.config, &batch, None)?;
                        all.push(probs_row(&m.head.forward(&fwd.pooled), 0));
                    } else {
                        let none_idx = schema
                            .class_index(task, NONE_LABEL)
                            .unwrap_or(0);
                        all.push(one_hot(classes.len(), none_idx));
                    }
                }
                all
            }
        };
        per_sentence.insert(si, probs);
    }

    let mut out = Vec::with_capacity(mentions.len());
    for (m, &si) in mentions.iter().zip(&sentence_of) {
        let probs = per_sentence
            .get(&si)
            .ok_or_else(|| Error::Numerical("sentence produced no tokens".into()))?
            .clone();
        out.push(EventPrediction {
            mention: m.clone(),
            annotation: annotation_from_probs(schema, &probs),
            probabilities: probs,
        });
    }
    out.sort_by_key(|p| (p.mention.start, p.mention.end));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn span_representation_concatenates_pooled_and_max() {
        let hidden = Array2::from_shape_vec((3, 2), vec![9.0, 9.0, 0.0, 5.0, 3.0, 1.0]).unwrap();
        let pooled = Array1::from_vec(vec![1.0, 2.0]);
        let rep = med_span_representation(&hidden, &pooled, (1, 2)).unwrap();
        assert_eq!(rep.to_vec(), vec![1.0, 2.0, 3.0, 5.0]);
    }

    #[test]
    fn span_representation_single_row_equals_that_row() {
        let hidden = Array2::from_shape_vec((2, 2), vec![0.5, -1.0, 7.0, 2.0]).unwrap();
        let pooled = Array1::from_vec(vec![0.0, 0.0]);
        let rep = med_span_representation(&hidden, &pooled, (1, 1)).unwrap();
        assert_eq!(rep.to_vec(), vec![0.0, 0.0, 7.0, 2.0]);
    }

    #[test]
    fn span_representation_is_row_permutation_invariant() {
        let a = Array2::from_shape_vec((3, 2), vec![1.0, 8.0, 4.0, 2.0, 3.0, 6.0]).unwrap();
        let b = Array2::from_shape_vec((3, 2), vec![3.0, 6.0, 1.0, 8.0, 4.0, 2.0]).unwrap();
        let pooled = Array1::from_vec(vec![0.0, 0.0]);
        assert_eq!(
            med_span_representation(&a, &pooled, (0, 2)).unwrap(),
            med_span_representation(&b, &pooled, (0, 2)).unwrap()
        );
    }

    #[test]
    fn span_representation_is_monotone_in_span_values() {
        let mut hidden = Array2::from_shape_vec((2, 2), vec![1.0, 2.0, 3.0, 0.5]).unwrap();
        let pooled = Array1::from_vec(vec![0.0, 0.0]);
        let before = med_span_representation(&hidden, &pooled, (0, 1)).unwrap();
        hidden[(0, 0)] += 10.0;
        let after = med_span_representation(&hidden, &pooled, (0, 1)).unwrap();
        for (b, a) in before.iter().zip(after.iter()) {
            assert!(a >= b);
        }
    }

    #[test]
    fn span_representation_rejects_bad_range() {
        let hidden = Array2::<f64>::zeros((2, 2));
        let pooled = Array1::zeros(2);
        assert!(med_span_representation(&hidden, &pooled, (1, 5)).is_err());
    }

    #[test]
    fn multitask_loss_of_equal_task_losses_is_that_loss() {
        // Uniform logits over k classes give loss ln(k) per task.
        let logits: Vec<Array2<f64>> = vec![Array2::zeros((4, 3)); 5];
        let gold: Vec<Vec<usize>> = vec![vec![0, 1, 2, 0]; 5];
        let (loss, grads) = multitask_loss(&logits, &gold);
        assert!((loss - (3.0f64).ln()).abs() < 1e-9);
        assert_eq!(grads.len(), 5);
    }

    #[test]
    fn multitask_loss_perfect_predictions_near_zero() {
        let mut logits = Array2::<f64>::zeros((2, 3));
        logits[(0, 0)] = 40.0;
        logits[(1, 2)] = 40.0;
        let per_task = vec![logits; 5];
        let gold = vec![vec![0, 2]; 5];
        let (loss, _) = multitask_loss(&per_task, &gold);
        assert!(loss < 1e-6);
    }

    #[test]
    fn multitask_loss_mixed_class_counts() {
        // Uniform logits with class counts (3, 6, 3, 4, 4).
        let counts = [3usize, 6, 3, 4, 4];
        let logits: Vec<Array2<f64>> =
            counts.iter().map(|&k| Array2::zeros((2, k))).collect();
        let gold: Vec<Vec<usize>> = counts.iter().map(|_| vec![0, 1]).collect();
        let (loss, _) = multitask_loss(&logits, &gold);
        let expected: f64 = counts.iter().map(|&k| (k as f64).ln()).sum::<f64>() / 5.0;
        assert!((loss - expected).abs() < 1e-9);
    }

    #[test]
    fn architecture_parsing_round_trips_and_rejects_unknown() {
        for arch in Architecture::ALL {
            let parsed: Architecture = arch.name().parse().unwrap();
            assert_eq!(parsed, arch);
        }
        let err = "MedFoo".parse::<Architecture>().unwrap_err();
        assert!(matches!(err, Error::UnknownArchitecture(_)));
    }
}

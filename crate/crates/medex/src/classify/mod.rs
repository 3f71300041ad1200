//! Event and attribute classification under five architectures.
//!
//! The two medication-agnostic architectures (MedSingleTask, MedMultiTask)
//! classify whole sentences and copy the result to every mention in the
//! sentence. The three medication-aware architectures condition on the
//! target mention: MedSpan concatenates a max-pooled span representation
//! onto the pooled state, MedIdentifiers brackets the target with "@"/"$"
//! in the input, and MedIDTyped additionally brackets non-target mentions
//! with typed markers.

mod instances;
mod model;
mod train;

pub use instances::{build_instances, sentence_instance, ClassificationInstance};
pub use model::{
    med_span_representation, multitask_loss, predict_labels, Architecture, BundleKind,
    ClassifierBundle, EventPrediction, MultiTaskModel, SingleTaskModel,
};
pub use train::{default_clf_train_config, train_classifier, ClassifierTrainOutcome};

use crate::corpus::{EventAnnotation, LabelSchema, DISPOSITION, NONE_LABEL, TASKS};

/// Forces the event/attribute hierarchy onto a prediction: a non-
/// disposition event zeroes every attribute to `none`; a disposition event
/// replaces any `none` attribute with that task's highest-probability
/// non-`none` class. Idempotent, and off by default in the pipeline.
pub fn enforce_consistency(pred: &EventPrediction, schema: &LabelSchema) -> EventPrediction {
    let mut out = pred.clone();
    if out.annotation.event != DISPOSITION {
        for task in &TASKS[1..] {
            set_label(&mut out.annotation, task, NONE_LABEL.to_string());
        }
        return out;
    }
    for (t, task) in TASKS.iter().enumerate().skip(1) {
        if out.annotation.label(task) == NONE_LABEL {
            let classes = schema.classes(task);
            let probs = &out.probabilities[t];
            let mut best: Option<(usize, f64)> = None;
            for (i, class) in classes.iter().enumerate() {
                if class == NONE_LABEL {
                    continue;
                }
                let p = probs.get(i).copied().unwrap_or(0.0);
                if best.map(|(_, bp)| p > bp).unwrap_or(true) {
                    best = Some((i, p));
                }
            }
            if let Some((i, _)) = best {
                set_label(&mut out.annotation, task, classes[i].clone());
            }
        }
    }
    out
}

fn set_label(ann: &mut EventAnnotation, task: &str, value: String) {
    match task {
        "action" => ann.action = value,
        "actor" => ann.actor = value,
        "temporality" => ann.temporality = value,
        "certainty" => ann.certainty = value,
        "event" => ann.event = value,
        _ => unreachable!(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::MedicationMention;

    fn schema() -> LabelSchema {
        LabelSchema::default_schema()
    }

    fn prediction(event: &str, action: &str) -> EventPrediction {
        let s = schema();
        let mut ann = EventAnnotation::with_event(event);
        ann.action = action.to_string();
        // Probability mass puts "start" ahead of other non-none actions.
        let probs: Vec<Vec<f64>> = TASKS
            .iter()
            .map(|task| {
                let classes = s.classes(task);
                let mut p = vec![0.0; classes.len()];
                p[0] = 0.2;
                if p.len() > 1 {
                    p[1] = 0.5;
                }
                for v in p.iter_mut().skip(2) {
                    *v = 0.3 / (classes.len() - 2) as f64;
                }
                p
            })
            .collect();
        EventPrediction {
            mention: MedicationMention {
                doc_id: "d".into(),
                start: 0,
                end: 1,
                text: "x".into(),
            },
            annotation: ann,
            probabilities: probs,
        }
    }

    #[test]
    fn non_disposition_attributes_are_forced_to_none() {
        let pred = prediction("no_disposition", "unique_dose");
        let fixed = enforce_consistency(&pred, &schema());
        assert_eq!(fixed.annotation.action, NONE_LABEL);
        assert_eq!(fixed.annotation.actor, NONE_LABEL);
        assert!(fixed.annotation.hierarchy_consistent());
    }

    #[test]
    fn disposition_none_attribute_gets_best_non_none_class() {
        let mut pred = prediction(DISPOSITION, NONE_LABEL);
        pred.annotation.actor = "patient".into();
        pred.annotation.temporality = "past".into();
        pred.annotation.certainty = "certain".into();
        let fixed = enforce_consistency(&pred, &schema());
        // action probabilities favor index 1 = "start".
        assert_eq!(fixed.annotation.action, "start");
        assert_eq!(fixed.annotation.actor, "patient");
        assert!(fixed.annotation.hierarchy_consistent());
    }

    #[test]
    fn consistent_prediction_is_unchanged() {
        let mut pred = prediction(DISPOSITION, "stop");
        pred.annotation.actor = "patient".into();
        pred.annotation.temporality = "past".into();
        pred.annotation.certainty = "certain".into();
        let fixed = enforce_consistency(&pred, &schema());
        assert_eq!(fixed.annotation, pred.annotation);
    }

    #[test]
    fn enforcement_is_idempotent() {
        let pred = prediction(DISPOSITION, NONE_LABEL);
        let once = enforce_consistency(&pred, &schema());
        let twice = enforce_consistency(&once, &schema());
        assert_eq!(once.annotation, twice.annotation);
    }
}

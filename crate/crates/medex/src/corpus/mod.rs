//! Document model, standoff annotation I/O, corpus validation, synthetic
//! corpus generation, and note-level train/dev/test splitting.
//!
//! Offsets throughout this module count Unicode scalar values, not bytes,
//! so annotation files stay valid regardless of how the note text is
//! encoded on disk.

mod standoff;
mod synth;

pub use standoff::{parse_standoff, serialize_standoff};
pub use synth::{generate_synthetic_corpus, SyntheticCorpusSpec};

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// The five classification tasks, in reporting order.
pub const TASKS: [&str; 5] = ["event", "action", "actor", "temporality", "certainty"];

/// The null attribute value, assigned whenever no change event applies.
pub const NONE_LABEL: &str = "none";

/// Event label marking a described change to the medication.
pub const DISPOSITION: &str = "disposition";

/// A medication name span inside one document.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MedicationMention {
    pub doc_id: String,
    /// Inclusive start, in Unicode scalar values.
    pub start: usize,
    /// Exclusive end, in Unicode scalar values.
    pub end: usize,
    pub text: String,
}

/// One change event plus its attribute set. For gold data the hierarchy
/// holds: attributes are `none` exactly when the event is not `disposition`.
/// Predictions may violate it; see `classify::enforce_consistency`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventAnnotation {
    pub event: String,
    pub action: String,
    pub actor: String,
    pub temporality: String,
    pub certainty: String,
}

impl EventAnnotation {
    /// An annotation with the given event and all attributes `none`.
    pub fn with_event(event: &str) -> Self {
        EventAnnotation {
            event: event.to_string(),
            action: NONE_LABEL.to_string(),
            actor: NONE_LABEL.to_string(),
            temporality: NONE_LABEL.to_string(),
            certainty: NONE_LABEL.to_string(),
        }
    }

    /// Label for a task by name, in [`TASKS`] order.
    pub fn label(&self, task: &str) -> &str {
        match task {
            "event" => &self.event,
            "action" => &self.action,
            "actor" => &self.actor,
            "temporality" => &self.temporality,
            "certainty" => &self.certainty,
            other => panic!("unknown task {other}"),
        }
    }

    pub fn labels(&self) -> [&str; 5] {
        [
            &self.event,
            &self.action,
            &self.actor,
            &self.temporality,
            &self.certainty,
        ]
    }

    /// True iff attributes are `none` exactly when the event is not
    /// `disposition`, and non-`none` when it is.
    pub fn hierarchy_consistent(&self) -> bool {
        let attrs = [&self.action, &self.actor, &self.temporality, &self.certainty];
        if self.event == DISPOSITION {
            attrs.iter().all(|a| a.as_str() != NONE_LABEL)
        } else {
            attrs.iter().all(|a| a.as_str() == NONE_LABEL)
        }
    }
}

/// Ordered class lists per task. Class order is the argmax tie-breaking
/// order everywhere downstream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSchema {
    pub event: Vec<String>,
    pub action: Vec<String>,
    pub actor: Vec<String>,
    pub temporality: Vec<String>,
    pub certainty: Vec<String>,
}

impl LabelSchema {
    /// The label inventory used by the synthetic generator and the CLI
    /// defaults. Attribute lists carry `none` first so ties favor it.
    pub fn default_schema() -> Self {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect();
        LabelSchema {
            event: s(&["disposition", "no_disposition", "undetermined"]),
            action: s(&["none", "start", "stop", "increase", "decrease", "unique_dose"]),
            actor: s(&["none", "patient", "physician"]),
            temporality: s(&["none", "past", "present", "future"]),
            certainty: s(&["none", "certain", "hypothetical", "conditional"]),
        }
    }

    pub fn classes(&self, task: &str) -> &[String] {
        match task {
            "event" => &self.event,
            "action" => &self.action,
            "actor" => &self.actor,
            "temporality" => &self.temporality,
            "certainty" => &self.certainty,
            other => panic!("unknown task {other}"),
        }
    }

    pub fn class_index(&self, task: &str, value: &str) -> Option<usize> {
        self.classes(task).iter().position(|c| c == value)
    }

    /// Checks non-emptiness, uniqueness, and that every attribute list
    /// contains `none`.
    pub fn validate(&self) -> Result<()> {
        for task in TASKS {
            let classes = self.classes(task);
            if classes.is_empty() {
                return Err(Error::Config(format!("schema task '{task}' has no classes")));
            }
            let unique: BTreeSet<&String> = classes.iter().collect();
            if unique.len() != classes.len() {
                return Err(Error::Config(format!(
                    "schema task '{task}' has duplicate classes"
                )));
            }
            if task != "event" && !classes.iter().any(|c| c == NONE_LABEL) {
                return Err(Error::Config(format!(
                    "schema task '{task}' is missing the '{NONE_LABEL}' class"
                )));
            }
        }
        Ok(())
    }

    /// Flat text form: one `task: a, b, c` line per task.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for task in TASKS {
            out.push_str(task);
            out.push_str(": ");
            out.push_str(&self.classes(task).join(", "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut schema = LabelSchema {
            event: vec![],
            action: vec![],
            actor: vec![],
            temporality: vec![],
            certainty: vec![],
        };
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (task, rest) = line.split_once(':').ok_or_else(|| {
                Error::Config(format!("schema line {}: expected 'task: classes'", i + 1))
            })?;
            let classes: Vec<String> = rest
                .split(',')
                .map(|c| c.trim().to_string())
                .filter(|c| !c.is_empty())
                .collect();
            match task.trim() {
                "event" => schema.event = classes,
                "action" => schema.action = classes,
                "actor" => schema.actor = classes,
                "temporality" => schema.temporality = classes,
                "certainty" => schema.certainty = classes,
                other => {
                    return Err(Error::Config(format!(
                        "schema line {}: unknown task '{other}'",
                        i + 1
                    )))
                }
            }
        }
        schema.validate()?;
        Ok(schema)
    }
}

/// A note with its mentions and their gold annotations. `annotations[i]`
/// holds the (possibly multiple) annotations of `mentions[i]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
    pub mentions: Vec<MedicationMention>,
    pub annotations: Vec<Vec<EventAnnotation>>,
}

impl Document {
    /// Length in Unicode scalar values.
    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }

    /// Among a mention's gold annotations, the one training and evaluation
    /// target: the first `disposition` annotation when present, otherwise
    /// the first in file order. Systems emit a single prediction per
    /// mention, so one gold set must be chosen.
    pub fn selected_annotation(&self, mention_idx: usize) -> Option<&EventAnnotation> {
        let anns = self.annotations.get(mention_idx)?;
        anns.iter()
            .find(|a| a.event == DISPOSITION)
            .or_else(|| anns.first())
    }
}

/// Substring by Unicode scalar-value offsets.
pub fn char_slice(text: &str, start: usize, end: usize) -> String {
    text.chars().skip(start).take(end.saturating_sub(start)).collect()
}

/// A single failed integrity rule on one document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub doc_id: String,
    /// Index into `mentions`, when the rule concerns a specific mention.
    pub mention_idx: Option<usize>,
    pub rule: String,
    pub detail: String,
}

/// Collects every type-invariant violation in the document. Violations are
/// data, not errors, so whole corpora can be audited in one pass.
pub fn validate_document(doc: &Document, schema: &LabelSchema) -> Vec<Violation> {
    let mut out = Vec::new();
    let len = doc.char_len();
    let mut push = |mention_idx: Option<usize>, rule: &str, detail: String| {
        out.push(Violation {
            doc_id: doc.doc_id.clone(),
            mention_idx,
            rule: rule.to_string(),
            detail,
        });
    };

    if doc.annotations.len() != doc.mentions.len() {
        push(
            None,
            "annotation-arity",
            format!(
                "{} mentions but {} annotation lists",
                doc.mentions.len(),
                doc.annotations.len()
            ),
        );
    }

    for (i, m) in doc.mentions.iter().enumerate() {
        if m.start >= m.end || m.end > len {
            push(
                Some(i),
                "offset-range",
                format!("span [{}, {}) in text of length {len}", m.start, m.end),
            );
            continue;
        }
        let actual = char_slice(&doc.text, m.start, m.end);
        if actual != m.text {
            push(
                Some(i),
                "text-mismatch",
                format!("mention text {:?} vs substring {:?}", m.text, actual),
            );
        }
        if i + 1 < doc.mentions.len() {
            let next = &doc.mentions[i + 1];
            if next.start < m.start {
                push(Some(i), "order", "mentions not sorted by start offset".to_string());
            } else if next.start < m.end {
                push(
                    Some(i),
                    "overlap",
                    format!(
                        "[{}, {}) overlaps [{}, {})",
                        m.start, m.end, next.start, next.end
                    ),
                );
            }
        }
    }

    for (i, anns) in doc.annotations.iter().enumerate() {
        for ann in anns {
            for task in TASKS {
                let value = ann.label(task);
                if schema.class_index(task, value).is_none() {
                    push(
                        Some(i),
                        "label-schema",
                        format!("task '{task}' value '{value}' not in schema"),
                    );
                }
            }
            if !ann.hierarchy_consistent() {
                push(
                    Some(i),
                    "hierarchy",
                    format!(
                        "event '{}' with attributes ({}, {}, {}, {})",
                        ann.event, ann.action, ann.actor, ann.temporality, ann.certainty
                    ),
                );
            }
        }
    }

    out
}

/// Partitions documents into train/dev/test at the note level.
///
/// Sizes are `floor(ratio * n)` with the remainder going to the largest
/// fractional parts (earlier partition wins ties). A nonzero ratio that
/// ends up with zero documents is an error.
pub fn split_corpus(
    docs: Vec<Document>,
    ratios: [f64; 3],
    seed: u64,
) -> Result<(Vec<Document>, Vec<Document>, Vec<Document>)> {
    if ratios.iter().any(|r| *r < 0.0) {
        return Err(Error::Config("split ratios must be non-negative".into()));
    }
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios sum to {total}, expected 1")));
    }
    let n = docs.len();
    let nonzero = ratios.iter().filter(|r| **r > 0.0).count();
    if n < nonzero {
        return Err(Error::InsufficientDocuments { docs: n, parts: nonzero });
    }

    let mut sizes = [0usize; 3];
    let mut fracs: Vec<(usize, f64)> = Vec::new();
    for (i, r) in ratios.iter().enumerate() {
        let exact = r * n as f64;
        sizes[i] = exact.floor() as usize;
        fracs.push((i, exact - exact.floor()));
    }
    let mut remainder = n - sizes.iter().sum::<usize>();
    fracs.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for (i, _) in fracs {
        if remainder == 0 {
            break;
        }
        sizes[i] += 1;
        remainder -= 1;
    }
    for (i, r) in ratios.iter().enumerate() {
        if *r > 0.0 && sizes[i] == 0 {
            return Err(Error::InsufficientDocuments { docs: n, parts: nonzero });
        }
    }

    let mut docs = docs;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    docs.shuffle(&mut rng);
    let dev_start = sizes[0];
    let test_start = sizes[0] + sizes[1];
    let test = docs.split_off(test_start);
    let dev = docs.split_off(dev_start);
    Ok((docs, dev, test))
}

//! Standoff annotation I/O.
//!
//! One record per line, tab-separated, `\n` terminated:
//!
//! ```text
//! T<k>\tMedication <start> <end>\t<surface text>
//! E<k>\t<EventLabel> T<j>
//! A<k>\t<AttrName> E<j> <value>
//! ```
//!
//! Offsets count Unicode scalar values. Labels are matched against the
//! schema case-insensitively and stored in canonical (schema) form.
//! Attribute lines are written only for non-`none` values; missing
//! attributes parse back as `none`, so serialize→parse is the identity on
//! any valid [`Document`].

use std::collections::BTreeMap;

use super::{char_slice, Document, EventAnnotation, LabelSchema, MedicationMention, NONE_LABEL};
use crate::{Error, Result};

fn malformed(doc_id: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::MalformedLine {
        file: format!("{doc_id}.ann"),
        line,
        msg: msg.into(),
    }
}

fn canonical_label(schema_classes: &[String], raw: &str) -> Option<String> {
    let lower = raw.to_lowercase();
    schema_classes
        .iter()
        .find(|c| c.to_lowercase() == lower)
        .cloned()
}

/// Parses paired note text and annotation content into a [`Document`].
///
/// Mentions come out sorted by start offset; each mention's annotations
/// keep their file order. Unknown labels, out-of-range offsets, and
/// mention-text mismatches are rejected.
pub fn parse_standoff(
    doc_id: &str,
    text: &str,
    ann: &str,
    schema: &LabelSchema,
) -> Result<Document> {
    let char_len = text.chars().count();

    // id -> mention, keyed by the numeric part of T<k>
    let mut t_spans: BTreeMap<u64, MedicationMention> = BTreeMap::new();
    // (event id, mention id, annotation), in file order
    let mut events: Vec<(u64, u64, EventAnnotation)> = Vec::new();
    let mut event_pos: BTreeMap<u64, usize> = BTreeMap::new();

    for (idx, line) in ann.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let id_field = fields.next().unwrap_or("");
        let body = fields
            .next()
            .ok_or_else(|| malformed(doc_id, lineno, "missing tab-separated body"))?;

        match id_field.chars().next() {
            Some('T') => {
                let id: u64 = id_field[1..]
                    .parse()
                    .map_err(|_| malformed(doc_id, lineno, format!("bad id '{id_field}'")))?;
                let mut parts = body.split(' ');
                let kind = parts.next().unwrap_or("");
                if kind != "Medication" {
                    return Err(malformed(doc_id, lineno, format!("unknown mention type '{kind}'")));
                }
                let start: usize = parts
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| malformed(doc_id, lineno, "bad start offset"))?;
                let end: usize = parts
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| malformed(doc_id, lineno, "bad end offset"))?;
                if parts.next().is_some() {
                    return Err(malformed(doc_id, lineno, "trailing fields after offsets"));
                }
                let surface = fields
                    .next()
                    .ok_or_else(|| malformed(doc_id, lineno, "missing surface text field"))?;
                if start >= end || end > char_len {
                    return Err(Error::OffsetOutOfRange { start, end, len: char_len });
                }
                let actual = char_slice(text, start, end);
                if actual != surface {
                    return Err(Error::TextMismatch {
                        annotated: surface.to_string(),
                        actual,
                    });
                }
                if t_spans
                    .insert(
                        id,
                        MedicationMention {
                            doc_id: doc_id.to_string(),
                            start,
                            end,
                            text: surface.to_string(),
                        },
                    )
                    .is_some()
                {
                    return Err(malformed(doc_id, lineno, format!("duplicate id '{id_field}'")));
                }
            }
            Some('E') => {
                let id: u64 = id_field[1..]
                    .parse()
                    .map_err(|_| malformed(doc_id, lineno, format!("bad id '{id_field}'")))?;
                let (label, target) = body
                    .split_once(' ')
                    .ok_or_else(|| malformed(doc_id, lineno, "expected '<EventLabel> T<j>'"))?;
                let event = canonical_label(&schema.event, label).ok_or_else(|| {
                    Error::LabelNotInSchema {
                        task: "event".into(),
                        value: label.to_string(),
                    }
                })?;
                let tid: u64 = target
                    .strip_prefix('T')
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| malformed(doc_id, lineno, format!("bad mention ref '{target}'")))?;
                if !t_spans.contains_key(&tid) {
                    return Err(malformed(doc_id, lineno, format!("reference to unknown T{tid}")));
                }
                if event_pos.insert(id, events.len()).is_some() {
                    return Err(malformed(doc_id, lineno, format!("duplicate id '{id_field}'")));
                }
                events.push((id, tid, EventAnnotation::with_event(&event)));
            }
            Some('A') => {
                let mut parts = body.split(' ');
                let attr = parts
                    .next()
                    .ok_or_else(|| malformed(doc_id, lineno, "missing attribute name"))?
                    .to_lowercase();
                let eref = parts
                    .next()
                    .ok_or_else(|| malformed(doc_id, lineno, "missing event reference"))?;
                let value = parts
                    .next()
                    .ok_or_else(|| malformed(doc_id, lineno, "missing attribute value"))?;
                if parts.next().is_some() {
                    return Err(malformed(doc_id, lineno, "trailing fields on attribute line"));
                }
                let eid: u64 = eref
                    .strip_prefix('E')
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| malformed(doc_id, lineno, format!("bad event ref '{eref}'")))?;
                let pos = *event_pos
                    .get(&eid)
                    .ok_or_else(|| malformed(doc_id, lineno, format!("reference to unknown E{eid}")))?;
                let classes = match attr.as_str() {
                    "action" => &schema.action,
                    "actor" => &schema.actor,
                    "temporality" => &schema.temporality,
                    "certainty" => &schema.certainty,
                    other => {
                        return Err(malformed(doc_id, lineno, format!("unknown attribute '{other}'")))
                    }
                };
                let canon = canonical_label(classes, value).ok_or_else(|| Error::LabelNotInSchema {
                    task: attr.clone(),
                    value: value.to_string(),
                })?;
                let ann = &mut events[pos].2;
                match attr.as_str() {
                    "action" => ann.action = canon,
                    "actor" => ann.actor = canon,
                    "temporality" => ann.temporality = canon,
                    "certainty" => ann.certainty = canon,
                    _ => unreachable!(),
                }
            }
            _ => {
                return Err(malformed(
                    doc_id,
                    lineno,
                    format!("unknown record type '{id_field}'"),
                ));
            }
        }
    }

    // Sort mentions by span; annotations follow their mention in file order.
    let mut entries: Vec<(u64, MedicationMention)> = t_spans.into_iter().collect();
    entries.sort_by_key(|(id, m)| (m.start, m.end, *id));
    let mut mentions = Vec::with_capacity(entries.len());
    let mut annotations: Vec<Vec<EventAnnotation>> = Vec::with_capacity(entries.len());
    for (tid, mention) in entries {
        let anns: Vec<EventAnnotation> = events
            .iter()
            .filter(|(_, t, _)| *t == tid)
            .map(|(_, _, a)| a.clone())
            .collect();
        mentions.push(mention);
        annotations.push(anns);
    }

    Ok(Document {
        doc_id: doc_id.to_string(),
        text: text.to_string(),
        mentions,
        annotations,
    })
}

/// Renders a document back to `(note text, annotation content)`.
///
/// T-lines appear in start-offset order; attribute lines are emitted only
/// for non-`none` values.
pub fn serialize_standoff(doc: &Document) -> (String, String) {
    let mut ann = String::new();
    let mut next_event = 1u64;
    let mut next_attr = 1u64;
    for (i, mention) in doc.mentions.iter().enumerate() {
        ann.push_str(&format!(
            "T{}\tMedication {} {}\t{}\n",
            i + 1,
            mention.start,
            mention.end,
            mention.text
        ));
    }
    for (i, anns) in doc.annotations.iter().enumerate() {
        for a in anns {
            ann.push_str(&format!("E{}\t{} T{}\n", next_event, a.event, i + 1));
            for (name, value) in [
                ("action", &a.action),
                ("actor", &a.actor),
                ("temporality", &a.temporality),
                ("certainty", &a.certainty),
            ] {
                if value != NONE_LABEL {
                    ann.push_str(&format!("A{next_attr}\t{name} E{next_event} {value}\n"));
                    next_attr += 1;
                }
            }
            next_event += 1;
        }
    }
    (doc.text.clone(), ann)
}

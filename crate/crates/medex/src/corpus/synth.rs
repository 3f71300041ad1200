//! Deterministic synthetic corpus generation.
//!
//! Sentences are templated clinical-style text in which every label value
//! is carried by a unique surface cue adjacent to the mention (verb lemma
//! for action, subject for actor, time phrase for temporality, modal or
//! trailing clause for certainty), so all five tasks are learnable from
//! surface form. Corpus-level statistics (fraction of mentions sharing a
//! sentence, fraction of multi-mention sentences with a common context)
//! are hit by quota rather than by independent coin flips, which keeps
//! realized fractions within rounding error of the spec.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{char_slice, Document, EventAnnotation, LabelSchema, MedicationMention, NONE_LABEL};
use crate::{Error, Result};

const MEDS_ONE_WORD: &[&str] = &[
    "plavix", "coumadin", "lisinopril", "metformin", "aspirin", "warfarin", "lasix", "heparin",
    "vanco", "levo", "metoprolol", "insulin", "prednisone", "gabapentin", "keflex", "zofran",
    "bumex", "lopid", "digoxin", "amiodarone", "simvastatin", "losartan", "atenolol", "omeprazole",
];
const MEDS_TWO_WORD: &[&str] = &[
    "beta blocker",
    "ace inhibitor",
    "insulin glargine",
    "calcium carbonate",
    "iron sulfate",
    "vitamin d",
];
const MEDS_THREE_WORD: &[&str] = &["long acting insulin", "low dose aspirin"];

const DOSES: &[&str] = &["", " 40mg", " 10mg", " 325", " 25po", " x2", " 81mg"];

const FILLERS: &[&str] = &[
    "Follow up in two weeks.",
    "Vitals stable at this visit.",
    "Labs reviewed and discussed.",
    "No acute distress today.",
    "Patient tolerating diet well.",
    "Plan reviewed with family.",
];

/// Among multi-mention sentences, the share carrying three mentions
/// rather than two.
const TRIPLE_FRACTION: f64 = 0.3;

/// Per-task categorical priors, aligned with the schema's class order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskPriors {
    pub event: Vec<f64>,
    pub action: Vec<f64>,
    pub actor: Vec<f64>,
    pub temporality: Vec<f64>,
    pub certainty: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticCorpusSpec {
    pub doc_count: usize,
    /// Inclusive range of sentences per document.
    pub sentences_per_doc: (usize, usize),
    /// Target fraction of mentions that share a sentence with at least one
    /// other mention.
    pub multi_mention_fraction: f64,
    /// Among multi-mention sentences, the fraction whose mentions all carry
    /// identical labels.
    pub shared_context_fraction: f64,
    /// Fraction of sentences carrying no mention at all.
    pub filler_sentence_fraction: f64,
    /// `mention_len_probs[i]` is the probability of an (i+1)-word mention.
    pub mention_len_probs: Vec<f64>,
    pub schema: LabelSchema,
    pub priors: TaskPriors,
    pub seed: u64,
}

impl Default for SyntheticCorpusSpec {
    fn default() -> Self {
        SyntheticCorpusSpec {
            doc_count: 200,
            sentences_per_doc: (3, 8),
            multi_mention_fraction: 0.78,
            shared_context_fraction: 0.64,
            filler_sentence_fraction: 0.2,
            mention_len_probs: vec![0.80, 0.15, 0.05],
            schema: LabelSchema::default_schema(),
            priors: TaskPriors {
                event: vec![0.50, 0.35, 0.15],
                action: vec![0.0, 0.30, 0.30, 0.15, 0.15, 0.10],
                actor: vec![0.0, 0.40, 0.60],
                temporality: vec![0.0, 0.35, 0.40, 0.25],
                certainty: vec![0.0, 0.50, 0.30, 0.20],
            },
            seed: 7,
        }
    }
}

impl SyntheticCorpusSpec {
    fn validate(&self) -> Result<()> {
        if self.doc_count == 0 {
            return Err(Error::InfeasibleSpec("zero documents".into()));
        }
        let (lo, hi) = self.sentences_per_doc;
        if lo == 0 || lo > hi {
            return Err(Error::InfeasibleSpec(format!(
                "bad sentences-per-document range ({lo}, {hi})"
            )));
        }
        for (name, f) in [
            ("multi_mention_fraction", self.multi_mention_fraction),
            ("shared_context_fraction", self.shared_context_fraction),
            ("filler_sentence_fraction", self.filler_sentence_fraction),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::InfeasibleSpec(format!("{name} = {f} outside [0, 1]")));
            }
        }
        if self.filler_sentence_fraction >= 1.0 {
            return Err(Error::InfeasibleSpec("all sentences are fillers".into()));
        }
        let len_sum: f64 = self.mention_len_probs.iter().sum();
        if self.mention_len_probs.is_empty()
            || self.mention_len_probs.len() > 3
            || (len_sum - 1.0).abs() > 1e-6
            || self.mention_len_probs.iter().any(|p| *p < 0.0)
        {
            return Err(Error::InfeasibleSpec(
                "mention length probabilities must cover lengths 1..=3 and sum to 1".into(),
            ));
        }
        self.schema.validate()?;
        for (task, prior) in [
            ("event", &self.priors.event),
            ("action", &self.priors.action),
            ("actor", &self.priors.actor),
            ("temporality", &self.priors.temporality),
            ("certainty", &self.priors.certainty),
        ] {
            let classes = self.schema.classes(task);
            if prior.len() != classes.len() {
                return Err(Error::InfeasibleSpec(format!(
                    "prior for '{task}' has {} entries, schema has {} classes",
                    prior.len(),
                    classes.len()
                )));
            }
            let sum: f64 = prior.iter().sum();
            if (sum - 1.0).abs() > 1e-6 || prior.iter().any(|p| *p < 0.0) {
                return Err(Error::InfeasibleSpec(format!("prior for '{task}' does not sum to 1")));
            }
            if task != "event" {
                // Sampling conditions on event = disposition and draws from
                // the non-none mass, which must therefore exist.
                let disp_prior = self.priors.event.first().copied().unwrap_or(0.0);
                let non_none: f64 = classes
                    .iter()
                    .zip(prior)
                    .filter(|(c, _)| c.as_str() != NONE_LABEL)
                    .map(|(_, p)| p)
                    .sum();
                if disp_prior > 0.0 && non_none <= 0.0 {
                    return Err(Error::InfeasibleSpec(format!(
                        "prior for '{task}' has no mass on non-{NONE_LABEL} classes"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SentencePlan {
    Filler,
    Single,
    MultiShared(usize),
    MultiDiffering(usize),
}

struct Generator<'a> {
    spec: &'a SyntheticCorpusSpec,
    rng: ChaCha8Rng,
    len_dist: WeightedIndex<f64>,
}

impl<'a> Generator<'a> {
    fn sample_med(&mut self) -> &'static str {
        let len = self.len_dist.sample(&mut self.rng) + 1;
        let pool = match len {
            1 => MEDS_ONE_WORD,
            2 => MEDS_TWO_WORD,
            _ => MEDS_THREE_WORD,
        };
        pool[self.rng.gen_range(0..pool.len())]
    }

    fn sample_class(&mut self, task: &str, prior: &[f64], non_none_only: bool) -> String {
        let classes = self.spec.schema.classes(task);
        let weights: Vec<f64> = classes
            .iter()
            .zip(prior)
            .map(|(c, p)| {
                if non_none_only && c.as_str() == NONE_LABEL {
                    0.0
                } else {
                    *p
                }
            })
            .collect();
        let dist = WeightedIndex::new(&weights).expect("validated non-zero prior mass");
        classes[dist.sample(&mut self.rng)].clone()
    }

    fn sample_annotation(&mut self) -> EventAnnotation {
        let priors = self.spec.priors.clone();
        let event = self.sample_class("event", &priors.event, false);
        if event == self.spec.schema.event[0] && event == "disposition" {
            EventAnnotation {
                event,
                action: self.sample_class("action", &priors.action, true),
                actor: self.sample_class("actor", &priors.actor, true),
                temporality: self.sample_class("temporality", &priors.temporality, true),
                certainty: self.sample_class("certainty", &priors.certainty, true),
            }
        } else {
            EventAnnotation::with_event(&event)
        }
    }

    /// Annotations for one differing-context sentence. Every mention after
    /// the first draws its event from the prior restricted to classes other
    /// than the first mention's event, so the sentence always carries at
    /// least two distinct event labels.
    fn sample_differing(&mut self, k: usize) -> Vec<EventAnnotation> {
        let first = self.sample_annotation();
        let priors = self.spec.priors.clone();
        let events = self.spec.schema.event.clone();
        let mut anns = vec![first.clone()];
        for _ in 1..k {
            let weights: Vec<f64> = events
                .iter()
                .zip(&priors.event)
                .map(|(c, p)| if *c == first.event { 0.0 } else { *p })
                .collect();
            let event = match WeightedIndex::new(&weights) {
                Ok(dist) => events[dist.sample(&mut self.rng)].clone(),
                // Degenerate prior: rotate deterministically.
                Err(_) => {
                    let idx = events.iter().position(|e| *e == first.event).unwrap_or(0);
                    events[(idx + 1) % events.len()].clone()
                }
            };
            let next = if event == "disposition" {
                EventAnnotation {
                    event,
                    action: self.sample_class("action", &priors.action, true),
                    actor: self.sample_class("actor", &priors.actor, true),
                    temporality: self.sample_class("temporality", &priors.temporality, true),
                    certainty: self.sample_class("certainty", &priors.certainty, true),
                }
            } else {
                EventAnnotation::with_event(&event)
            };
            anns.push(next);
        }
        anns
    }

    fn pick<'s>(&mut self, options: &[&'s str]) -> &'s str {
        options[self.rng.gen_range(0..options.len())]
    }

    /// Clause text for one mention with its label set. Returns the clause
    /// and the mention's (start, end) char offsets within it.
    fn clause(&mut self, ann: &EventAnnotation, med: &str) -> (String, (usize, usize)) {
        let dose = self.pick(DOSES);
        match ann.event.as_str() {
            "disposition" => {
                let subj = match ann.actor.as_str() {
                    "patient" => "patient",
                    _ => "we",
                };
                let (modal, base_form) = match ann.certainty.as_str() {
                    "hypothetical" => ("may ", true),
                    "conditional" => ("will ", true),
                    _ => ("", false),
                };
                let verb = match (ann.action.as_str(), base_form) {
                    ("start", false) => "started",
                    ("start", true) => "start",
                    ("stop", false) => "discontinued",
                    ("stop", true) => "discontinue",
                    ("increase", false) => "increased",
                    ("increase", true) => "increase",
                    ("decrease", false) => "reduced",
                    ("decrease", true) => "reduce",
                    ("unique_dose", false) => "gave one dose of",
                    ("unique_dose", true) => "give one dose of",
                    (other, false) => if other.is_empty() { "changed" } else { "adjusted" },
                    (_, true) => "adjust",
                };
                let time = match ann.temporality.as_str() {
                    "past" => "last week",
                    "present" => "today",
                    "future" => "at discharge",
                    _ => "today",
                };
                let suffix = if ann.certainty == "conditional" { " if needed" } else { "" };
                let head = format!("{subj} {modal}{verb} ");
                let start = head.chars().count();
                let end = start + med.chars().count();
                (format!("{head}{med}{dose} {time}{suffix}"), (start, end))
            }
            "no_disposition" => {
                let template = self.rng.gen_range(0..3u8);
                match template {
                    0 => {
                        let head = "continues ";
                        let start = head.chars().count();
                        (format!("{head}{med}{dose}"), (start, start + med.chars().count()))
                    }
                    1 => (format!("{med}{dose} unchanged"), (0, med.chars().count())),
                    _ => {
                        let head = "remains on ";
                        let start = head.chars().count();
                        (format!("{head}{med}{dose}"), (start, start + med.chars().count()))
                    }
                }
            }
            _ => {
                let template = self.rng.gen_range(0..2u8);
                match template {
                    0 => {
                        let head = "status of ";
                        let start = head.chars().count();
                        (
                            format!("{head}{med} unclear"),
                            (start, start + med.chars().count()),
                        )
                    }
                    _ => (format!("{med} mentioned, plan not stated"), (0, med.chars().count())),
                }
            }
        }
    }

    /// Shared-context clause carrying several mentions with one label set.
    fn shared_clause(&mut self, ann: &EventAnnotation, meds: &[&str]) -> (String, Vec<(usize, usize)>) {
        let joined_tail = meds[1..].to_vec();
        let (first_clause, (s0, e0)) = self.clause(ann, meds[0]);
        // Splice the remaining meds right after the first mention: the
        // whole group shares the first clause's cue phrases.
        let mut text: String = first_clause.chars().take(e0).collect();
        let rest: String = first_clause.chars().skip(e0).collect();
        let mut spans = vec![(s0, e0)];
        for med in joined_tail {
            text.push_str(" and ");
            let start = text.chars().count();
            text.push_str(med);
            spans.push((start, start + med.chars().count()));
        }
        text.push_str(&rest);
        (text, spans)
    }

    /// One full sentence. Returns text (capitalized, terminated) plus
    /// per-mention spans and annotations.
    fn sentence(&mut self, plan: SentencePlan) -> (String, Vec<((usize, usize), EventAnnotation)>) {
        match plan {
            SentencePlan::Filler => {
                let text = self.pick(FILLERS).to_string();
                (text, vec![])
            }
            SentencePlan::Single => {
                let ann = self.sample_annotation();
                let med = self.sample_med();
                let (clause, span) = self.clause(&ann, med);
                let text = capitalize(&format!("{clause}."));
                (text, vec![(span, ann)])
            }
            SentencePlan::MultiShared(k) => {
                let ann = self.sample_annotation();
                let meds: Vec<&str> = (0..k).map(|_| self.sample_med()).collect();
                let (clause, spans) = self.shared_clause(&ann, &meds);
                let text = capitalize(&format!("{clause}."));
                (text, spans.into_iter().map(|s| (s, ann.clone())).collect())
            }
            SentencePlan::MultiDiffering(k) => {
                let anns = self.sample_differing(k);
                let mut text = String::new();
                let mut out = Vec::new();
                for (i, ann) in anns.iter().enumerate() {
                    if i > 0 {
                        text.push_str(self.pick(&[", but ", "; "]));
                    }
                    let med = self.sample_med();
                    let (clause, (s, e)) = self.clause(ann, med);
                    let base = text.chars().count();
                    text.push_str(&clause);
                    out.push(((base + s, base + e), ann.clone()));
                }
                (capitalize(&format!("{text}.")), out)
            }
        }
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().collect::<String>() + chars.as_str(),
        None => String::new(),
    }
}

/// Generates a corpus matching the spec's statistics, deterministically for
/// a given seed. Every mention carries exactly one gold annotation.
pub fn generate_synthetic_corpus(spec: &SyntheticCorpusSpec) -> Result<Vec<Document>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let (lo, hi) = spec.sentences_per_doc;
    let sentence_counts: Vec<usize> = (0..spec.doc_count)
        .map(|_| rng.gen_range(lo..=hi))
        .collect();
    let total: usize = sentence_counts.iter().sum();

    // Quota plan for the whole corpus.
    let n_filler = (spec.filler_sentence_fraction * total as f64).round() as usize;
    let n_bearing = total - n_filler;
    if n_bearing == 0 {
        return Err(Error::InfeasibleSpec("no mention-bearing sentences".into()));
    }
    let mean_multi = 2.0 * (1.0 - TRIPLE_FRACTION) + 3.0 * TRIPLE_FRACTION;
    let f = spec.multi_mention_fraction;
    // Per-sentence multi probability that yields a mention-level fraction f.
    let q = if f >= 1.0 { 1.0 } else { f / (mean_multi * (1.0 - f) + f) };
    let n_multi = (q * n_bearing as f64).round() as usize;
    let n_single = n_bearing - n_multi;
    let n_triple = (TRIPLE_FRACTION * n_multi as f64).round() as usize;
    let n_shared = (spec.shared_context_fraction * n_multi as f64).round() as usize;

    let mut plans = Vec::with_capacity(total);
    plans.extend(std::iter::repeat(SentencePlan::Filler).take(n_filler));
    plans.extend(std::iter::repeat(SentencePlan::Single).take(n_single));
    for i in 0..n_multi {
        let k = if i < n_triple { 3 } else { 2 };
        if i < n_shared {
            plans.push(SentencePlan::MultiShared(k));
        } else {
            plans.push(SentencePlan::MultiDiffering(k));
        }
    }
    plans.shuffle(&mut rng);

    let len_dist = WeightedIndex::new(&spec.mention_len_probs)
        .map_err(|e| Error::InfeasibleSpec(format!("mention length distribution: {e}")))?;
    let mut gen = Generator { spec, rng, len_dist };

    let mut docs = Vec::with_capacity(spec.doc_count);
    let mut plan_iter = plans.into_iter();
    for (d, n_sent) in sentence_counts.iter().enumerate() {
        let mut text = String::new();
        let mut cursor = 0usize;
        let mut mentions = Vec::new();
        let mut annotations = Vec::new();
        let doc_id = format!("synth-{d:04}");
        for s in 0..*n_sent {
            if s > 0 {
                let sep = gen.pick(&[" ", " ", " ", " ", "\n", "\n\n"]);
                text.push_str(sep);
                cursor += sep.chars().count();
            }
            let plan = plan_iter.next().expect("plan count matches sentence count");
            let (sent_text, sent_mentions) = gen.sentence(plan);
            for ((s_off, e_off), ann) in sent_mentions {
                let start = cursor + s_off;
                let end = cursor + e_off;
                mentions.push(MedicationMention {
                    doc_id: doc_id.clone(),
                    start,
                    end,
                    text: char_slice(&sent_text, s_off, e_off),
                });
                annotations.push(vec![ann]);
            }
            cursor += sent_text.chars().count();
            text.push_str(&sent_text);
        }
        docs.push(Document {
            doc_id,
            text,
            mentions,
            annotations,
        });
    }
    Ok(docs)
}

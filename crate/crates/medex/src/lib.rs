//! Two-stage medication change extraction toolkit.
//!
//! Stage one finds medication mentions in free-text clinical notes with a
//! BIO sequence tagger over a small trainable transformer encoder. Stage two
//! classifies each mention's change event and its attributes (action, actor,
//! temporality, certainty) under five selectable architectures, two of them
//! sentence-level ("medication-agnostic") and three conditioned on the target
//! mention ("medication-aware"). The crate also ships a scoring and paired
//! bootstrap comparison harness and a deterministic synthetic-corpus
//! generator for desk-scale experiments.
//!
//! Modules map onto the pipeline:
//! - [`corpus`]: document model, standoff annotation I/O, validation,
//!   synthetic generation, note-level splits
//! - [`textproc`]: sentence segmentation, subword vocabulary and tokenizer,
//!   window centering, marker encodings
//! - [`encoder`]: the trainable transformer encoder, AdamW, checkpoints,
//!   gradient checking
//! - [`ner`]: BIO tagging for mention extraction
//! - [`classify`]: the five event/attribute classification architectures
//! - [`eval`]: span/token/label/end-to-end scoring and bootstrap comparison
//! - [`cli`]: the `medex` command-line tool

pub mod classify;
pub mod cli;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod ner;
pub mod textproc;

pub use error::{Error, Result};

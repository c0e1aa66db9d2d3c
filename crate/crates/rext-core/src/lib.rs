//! Chemical–protein relation extraction for abstract-level corpora in the
//! DrugProt/ChemProt three-file format.
//!
//! The pipeline runs in five stages, each usable on its own:
//!
//! 1. [`corpus`] — parse and validate the abstracts / entities / relations
//!    TSV files and join them into an in-memory [`corpus::Corpus`].
//! 2. [`preprocess`] — flatten title+abstract, split sentences, generate
//!    same-sentence chemical–protein candidate pairs, tag entity mentions
//!    with `$…$` / `#…#` markers, and attach gold labels (or `Other`).
//! 3. [`tokenizer`] — build a word-level vocabulary and encode tagged
//!    examples into id sequences with entity token spans.
//! 4. [`model`] / [`train`] — a from-scratch transformer encoder with two
//!    classification heads (CLS-only and an entity-aware CNN head), exact
//!    reverse-mode gradients, and a weighted-sampling Adam training loop.
//! 5. [`eval`] — prediction, micro-averaged precision/recall/F1, and the
//!    per-class report.
//!
//! Checkpoints ([`checkpoint`]) are self-contained: parameters, model
//! configuration, vocabulary, and the label table travel in one file.

pub mod checkpoint;
pub mod corpus;
pub mod eval;
pub mod model;
pub mod preprocess;
pub mod tokenizer;
pub mod train;

pub use corpus::{Corpus, CorpusStats, Document, EntityKind, EntityMention, RelationAnnotation, RelationLabel};
pub use model::{HeadKind, ModelConfig, Params};
pub use preprocess::{RelationExample, SplitterConfig};
pub use tokenizer::{EncodedExample, Vocabulary};
pub use train::TrainConfig;

/// Half-open index range, used for both character spans and token spans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    /// True when `other` lies entirely inside `self`.
    pub fn contains(&self, other: &Span) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

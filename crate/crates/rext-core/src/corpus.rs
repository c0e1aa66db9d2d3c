//! The three-file abstract corpus: tab-separated abstracts, entity mentions,
//! and binary chemical–protein relations, joined by document id.
//!
//! All offsets are Unicode scalar-value (character) offsets into the flat
//! text `title + ' ' + abstract`, not byte offsets. Input accepts LF and
//! CRLF line endings; serialization always emits LF.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use thiserror::Error;

use crate::Span;

/// One PubMed abstract record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub pmid: String,
    pub title: String,
    pub abstract_text: String,
}

impl Document {
    /// Title and abstract joined by a single space; entity offsets index
    /// into this string.
    pub fn flat_text(&self) -> String {
        let mut s = String::with_capacity(self.title.len() + 1 + self.abstract_text.len());
        s.push_str(&self.title);
        s.push(' ');
        s.push_str(&self.abstract_text);
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EntityKind {
    Chemical,
    Protein,
}

/// A single annotated mention. `start`/`end` are character offsets into the
/// document's flat text; `type_tag` preserves the corpus type string
/// (`CHEMICAL`, `GENE`, `GENE-Y`, `GENE-N`) so files round-trip unchanged.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityMention {
    pub pmid: String,
    pub eid: String,
    pub kind: EntityKind,
    pub type_tag: String,
    pub start: usize,
    pub end: usize,
    pub surface: String,
}

impl EntityMention {
    pub fn span(&self) -> Span {
        Span::new(self.start, self.end)
    }
}

/// The 13 corpus relation types plus the synthetic `Other` class assigned
/// to unannotated same-sentence pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RelationLabel {
    Antagonist,
    Inhibitor,
    Agonist,
    Activator,
    IndirectUpregulator,
    IndirectDownregulator,
    PartOf,
    DirectRegulator,
    Substrate,
    ProductOf,
    AgonistActivator,
    AgonistInhibitor,
    SubstrateProductOf,
    Other,
}

impl RelationLabel {
    /// The 13 corpus labels in canonical (statistics-table) order. This
    /// order breaks ties when a pair carries more than one gold label.
    pub const CORPUS_LABELS: [RelationLabel; 13] = [
        RelationLabel::Antagonist,
        RelationLabel::Inhibitor,
        RelationLabel::Agonist,
        RelationLabel::Activator,
        RelationLabel::IndirectUpregulator,
        RelationLabel::IndirectDownregulator,
        RelationLabel::PartOf,
        RelationLabel::DirectRegulator,
        RelationLabel::Substrate,
        RelationLabel::ProductOf,
        RelationLabel::AgonistActivator,
        RelationLabel::AgonistInhibitor,
        RelationLabel::SubstrateProductOf,
    ];

    /// The 10 labels kept for classification, canonical order.
    pub const KEPT_LABELS: [RelationLabel; 10] = [
        RelationLabel::Antagonist,
        RelationLabel::Inhibitor,
        RelationLabel::Agonist,
        RelationLabel::Activator,
        RelationLabel::IndirectUpregulator,
        RelationLabel::IndirectDownregulator,
        RelationLabel::PartOf,
        RelationLabel::DirectRegulator,
        RelationLabel::Substrate,
        RelationLabel::ProductOf,
    ];

    /// The three under-represented labels removed before training.
    pub const DELETED_LABELS: [RelationLabel; 3] = [
        RelationLabel::AgonistActivator,
        RelationLabel::AgonistInhibitor,
        RelationLabel::SubstrateProductOf,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            RelationLabel::Antagonist => "ANTAGONIST",
            RelationLabel::Inhibitor => "INHIBITOR",
            RelationLabel::Agonist => "AGONIST",
            RelationLabel::Activator => "ACTIVATOR",
            RelationLabel::IndirectUpregulator => "INDIRECT-UPREGULATOR",
            RelationLabel::IndirectDownregulator => "INDIRECT-DOWNREGULATOR",
            RelationLabel::PartOf => "PART-OF",
            RelationLabel::DirectRegulator => "DIRECT-REGULATOR",
            RelationLabel::Substrate => "SUBSTRATE",
            RelationLabel::ProductOf => "PRODUCT-OF",
            RelationLabel::AgonistActivator => "AGONIST-ACTIVATOR",
            RelationLabel::AgonistInhibitor => "AGONIST-INHIBITOR",
            RelationLabel::SubstrateProductOf => "SUBSTRATE_PRODUCT-OF",
            RelationLabel::Other => "Other",
        }
    }

    /// Case-sensitive parse covering the 13 corpus labels and `Other`.
    pub fn parse(s: &str) -> Option<RelationLabel> {
        Self::CORPUS_LABELS
            .iter()
            .chain(std::iter::once(&RelationLabel::Other))
            .copied()
            .find(|l| l.as_str() == s)
    }

    pub fn is_deleted(&self) -> bool {
        Self::DELETED_LABELS.contains(self)
    }

    /// Classifier class id: kept labels map to 0..9 in canonical order,
    /// `Other` to 10; deleted labels have no class.
    pub fn class_id(&self) -> Option<usize> {
        if *self == RelationLabel::Other {
            return Some(Self::KEPT_LABELS.len());
        }
        Self::KEPT_LABELS.iter().position(|l| l == self)
    }

    pub fn from_class_id(id: usize) -> Option<RelationLabel> {
        if id == Self::KEPT_LABELS.len() {
            Some(RelationLabel::Other)
        } else {
            Self::KEPT_LABELS.get(id).copied()
        }
    }
}

impl fmt::Display for RelationLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A gold binary relation; `arg1` names a chemical mention, `arg2` a
/// gene/protein mention of the same document.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RelationAnnotation {
    pub pmid: String,
    pub label: RelationLabel,
    pub arg1: String,
    pub arg2: String,
}

/// Joined, validated corpus keyed by document id.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub documents: BTreeMap<String, Document>,
    pub entities: BTreeMap<String, Vec<EntityMention>>,
    pub relations: BTreeMap<String, Vec<RelationAnnotation>>,
}

impl Corpus {
    pub fn entities_of(&self, pmid: &str) -> &[EntityMention] {
        self.entities.get(pmid).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn relations_of(&self, pmid: &str) -> &[RelationAnnotation] {
        self.relations.get(pmid).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Corpus-level counts in the shape of the dataset statistics table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusStats {
    pub n_documents: usize,
    pub n_chemicals: usize,
    pub n_proteins: usize,
    pub n_positive_relations: usize,
    /// Zero-filled over all 13 corpus labels; `Other` never appears.
    pub per_label_counts: BTreeMap<RelationLabel, usize>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CorpusError {
    #[error("line {line}: expected {expected} tab-separated fields, found {found}")]
    MalformedLine { line: usize, expected: usize, found: usize },
    #[error("duplicate document id {pmid}")]
    DuplicatePmid { pmid: String },
    #[error("line {line}: unknown entity type {type_tag:?}")]
    UnknownEntityType { line: usize, type_tag: String },
    #[error("line {line}: bad offsets {start}..{end}")]
    BadOffsets { line: usize, start: usize, end: usize },
    #[error("line {line}: unknown relation label {label:?}")]
    UnknownLabel { line: usize, label: String },
    #[error("line {line}: relation argument missing Arg1:/Arg2: prefix")]
    BadArgPrefix { line: usize },
    #[error("entity {eid} of document {pmid} has no matching document")]
    OrphanEntity { pmid: String, eid: String },
    #[error("relation in document {pmid} references missing entity {eid}")]
    OrphanRelation { pmid: String, eid: String },
    #[error("entity {eid} of document {pmid}: expected surface {expected:?}, found {found:?} at {start}..{end}")]
    OffsetMismatch { pmid: String, eid: String, expected: String, found: String, start: usize, end: usize },
    #[error("relation in document {pmid}: argument {eid} has the wrong entity kind")]
    ArgKindMismatch { pmid: String, eid: String },
}

/// Iterate logical lines, accepting LF and CRLF, skipping empty lines.
/// Yields 1-based line numbers.
fn logical_lines(stream: &str) -> impl Iterator<Item = (usize, &str)> {
    stream
        .split('\n')
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
        .filter(|(_, l)| !l.is_empty())
}

/// Parse the abstracts file: `pmid TAB title TAB abstract` per line.
pub fn parse_abstracts(stream: &str) -> Result<Vec<Document>, CorpusError> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (line_no, line) in logical_lines(stream) {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(CorpusError::MalformedLine { line: line_no, expected: 3, found: fields.len() });
        }
        if !seen.insert(fields[0].to_string()) {
            return Err(CorpusError::DuplicatePmid { pmid: fields[0].to_string() });
        }
        docs.push(Document {
            pmid: fields[0].to_string(),
            title: fields[1].to_string(),
            abstract_text: fields[2].to_string(),
        });
    }
    Ok(docs)
}

/// Parse the entities file: `pmid TAB eid TAB type TAB start TAB end TAB surface`.
/// `CHEMICAL` maps to [`EntityKind::Chemical`]; `GENE`, `GENE-Y` and `GENE-N`
/// all fold into [`EntityKind::Protein`].
pub fn parse_entities(stream: &str) -> Result<Vec<EntityMention>, CorpusError> {
    let mut ents = Vec::new();
    for (line_no, line) in logical_lines(stream) {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            return Err(CorpusError::MalformedLine { line: line_no, expected: 6, found: fields.len() });
        }
        let kind = match fields[2] {
            "CHEMICAL" => EntityKind::Chemical,
            "GENE" | "GENE-Y" | "GENE-N" => EntityKind::Protein,
            other => {
                return Err(CorpusError::UnknownEntityType { line: line_no, type_tag: other.to_string() })
            }
        };
        let start: usize = fields[3]
            .parse()
            .map_err(|_| CorpusError::MalformedLine { line: line_no, expected: 6, found: 6 })?;
        let end: usize = fields[4]
            .parse()
            .map_err(|_| CorpusError::MalformedLine { line: line_no, expected: 6, found: 6 })?;
        if start >= end {
            return Err(CorpusError::BadOffsets { line: line_no, start, end });
        }
        ents.push(EntityMention {
            pmid: fields[0].to_string(),
            eid: fields[1].to_string(),
            kind,
            type_tag: fields[2].to_string(),
            start,
            end,
            surface: fields[5].to_string(),
        });
    }
    Ok(ents)
}

/// Parse the relations file: `pmid TAB label TAB Arg1:<eid> TAB Arg2:<eid>`.
/// Labels match case-sensitively against the 13 corpus labels.
pub fn parse_relations(stream: &str) -> Result<Vec<RelationAnnotation>, CorpusError> {
    let mut rels = Vec::new();
    for (line_no, line) in logical_lines(stream) {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(CorpusError::MalformedLine { line: line_no, expected: 4, found: fields.len() });
        }
        let label = RelationLabel::parse(fields[1])
            .filter(|l| *l != RelationLabel::Other)
            .ok_or_else(|| CorpusError::UnknownLabel { line: line_no, label: fields[1].to_string() })?;
        let arg1 = fields[2]
            .strip_prefix("Arg1:")
            .ok_or(CorpusError::BadArgPrefix { line: line_no })?;
        let arg2 = fields[3]
            .strip_prefix("Arg2:")
            .ok_or(CorpusError::BadArgPrefix { line: line_no })?;
        rels.push(RelationAnnotation {
            pmid: fields[0].to_string(),
            label,
            arg1: arg1.to_string(),
            arg2: arg2.to_string(),
        });
    }
    Ok(rels)
}

pub fn serialize_abstracts(docs: &[Document]) -> String {
    let mut out = String::new();
    for d in docs {
        out.push_str(&format!("{}\t{}\t{}\n", d.pmid, d.title, d.abstract_text));
    }
    out
}

pub fn serialize_entities(ents: &[EntityMention]) -> String {
    let mut out = String::new();
    for e in ents {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            e.pmid, e.eid, e.type_tag, e.start, e.end, e.surface
        ));
    }
    out
}

pub fn serialize_relations(rels: &[RelationAnnotation]) -> String {
    let mut out = String::new();
    for r in rels {
        out.push_str(&format!("{}\t{}\tArg1:{}\tArg2:{}\n", r.pmid, r.label, r.arg1, r.arg2));
    }
    out
}

/// Substring of `text` by character (not byte) offsets.
pub fn char_substring(text: &str, start: usize, end: usize) -> Option<String> {
    if end < start {
        return None;
    }
    let mut it = text.chars();
    let head: String = it.by_ref().skip(start).take(end - start).collect();
    if head.chars().count() == end - start {
        Some(head)
    } else {
        None
    }
}

/// Join parsed records into a validated [`Corpus`].
///
/// Every entity surface is checked against the flat text at its character
/// offsets, relation arguments must reference existing mentions with the
/// right kinds, and duplicate relation lines are dropped with a warning.
pub fn assemble_corpus(
    docs: Vec<Document>,
    ents: Vec<EntityMention>,
    rels: Vec<RelationAnnotation>,
) -> Result<Corpus, CorpusError> {
    let mut corpus = Corpus::default();
    for d in docs {
        corpus.documents.insert(d.pmid.clone(), d);
    }

    let mut flat_cache: HashMap<String, Vec<char>> = HashMap::new();
    for e in ents {
        let doc = corpus
            .documents
            .get(&e.pmid)
            .ok_or_else(|| CorpusError::OrphanEntity { pmid: e.pmid.clone(), eid: e.eid.clone() })?;
        let flat = flat_cache
            .entry(e.pmid.clone())
            .or_insert_with(|| doc.flat_text().chars().collect());
        let found: String = flat
            .get(e.start..e.end.min(flat.len()))
            .map(|cs| cs.iter().collect())
            .unwrap_or_default();
        if e.end > flat.len() || found != e.surface {
            return Err(CorpusError::OffsetMismatch {
                pmid: e.pmid.clone(),
                eid: e.eid.clone(),
                expected: e.surface.clone(),
                found,
                start: e.start,
                end: e.end,
            });
        }
        corpus.entities.entry(e.pmid.clone()).or_default().push(e);
    }

    let mut seen_rels: HashSet<RelationAnnotation> = HashSet::new();
    for r in rels {
        if !corpus.documents.contains_key(&r.pmid) {
            return Err(CorpusError::OrphanRelation { pmid: r.pmid.clone(), eid: r.arg1.clone() });
        }
        let doc_ents = corpus.entities.get(&r.pmid).map(Vec::as_slice).unwrap_or(&[]);
        let lookup = |eid: &str| doc_ents.iter().find(|e| e.eid == eid);
        let chem = lookup(&r.arg1)
            .ok_or_else(|| CorpusError::OrphanRelation { pmid: r.pmid.clone(), eid: r.arg1.clone() })?;
        let prot = lookup(&r.arg2)
            .ok_or_else(|| CorpusError::OrphanRelation { pmid: r.pmid.clone(), eid: r.arg2.clone() })?;
        if chem.kind != EntityKind::Chemical {
            return Err(CorpusError::ArgKindMismatch { pmid: r.pmid.clone(), eid: r.arg1.clone() });
        }
        if prot.kind != EntityKind::Protein {
            return Err(CorpusError::ArgKindMismatch { pmid: r.pmid.clone(), eid: r.arg2.clone() });
        }
        if !seen_rels.insert(r.clone()) {
            log::warn!(
                "duplicate relation line dropped: {} {} {} {}",
                r.pmid,
                r.label,
                r.arg1,
                r.arg2
            );
            continue;
        }
        corpus.relations.entry(r.pmid.clone()).or_default().push(r);
    }
    Ok(corpus)
}

/// Count documents, mentions per kind, and relations per label.
pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    let mut per_label: BTreeMap<RelationLabel, usize> =
        RelationLabel::CORPUS_LABELS.iter().map(|l| (*l, 0)).collect();
    let mut n_chem = 0;
    let mut n_prot = 0;
    for ents in corpus.entities.values() {
        for e in ents {
            match e.kind {
                EntityKind::Chemical => n_chem += 1,
                EntityKind::Protein => n_prot += 1,
            }
        }
    }
    for rels in corpus.relations.values() {
        for r in rels {
            *per_label.entry(r.label).or_insert(0) += 1;
        }
    }
    let n_positive = per_label.values().sum();
    CorpusStats {
        n_documents: corpus.documents.len(),
        n_chemicals: n_chem,
        n_proteins: n_prot,
        n_positive_relations: n_positive,
        per_label_counts: per_label,
    }
}

//! Turning a validated corpus into labeled, entity-tagged classification
//! examples: flat-text construction, rule-based sentence splitting with an
//! exception list, same-sentence candidate pair generation, `$…$`/`#…#`
//! marker tagging, `Other` labeling, and rare-class removal.

use thiserror::Error;

use crate::corpus::{Corpus, Document, EntityKind, EntityMention, RelationAnnotation, RelationLabel};
use crate::Span;

/// Title and abstract joined by a single space so that corpus entity
/// offsets index directly into one string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlatText {
    pub pmid: String,
    pub text: String,
    /// Character length of the title; `text[title_len]` is the joining space.
    pub title_len: usize,
}

/// One sentence, as a character span into the flat text, trimmed of
/// surrounding whitespace.
pub type SentenceSpan = Span;

/// A same-sentence chemical–protein mention pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidatePair {
    pub pmid: String,
    pub sentence: SentenceSpan,
    pub chem: EntityMention,
    pub prot: EntityMention,
}

/// A tagged, labeled example ready for encoding. `chem_char_span` and
/// `prot_char_span` are marker-inclusive character spans into `tagged_text`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationExample {
    pub pmid: String,
    pub chem_eid: String,
    pub prot_eid: String,
    pub tagged_text: String,
    pub label: RelationLabel,
    pub chem_char_span: Span,
    pub prot_char_span: Span,
}

/// Sentence-splitting exceptions: a candidate boundary is suppressed when
/// the word immediately before the terminator is listed here.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitterConfig {
    pub non_terminal_tokens: Vec<String>,
    pub abbreviations: Vec<String>,
}

impl Default for SplitterConfig {
    fn default() -> Self {
        SplitterConfig {
            non_terminal_tokens: vec!["vivo".into(), "Vmax".into()],
            abbreviations: Vec::new(),
        }
    }
}

impl SplitterConfig {
    fn suppresses(&self, word: &str) -> bool {
        !word.is_empty()
            && (self.non_terminal_tokens.iter().any(|t| t == word)
                || self.abbreviations.iter().any(|t| t == word))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PreprocessError {
    #[error("entity spans {0:?} and {1:?} overlap")]
    OverlapError(Span, Span),
    #[error("entity span {0:?} outside sentence {1:?}")]
    EntityOutsideSentence(Span, Span),
}

/// Counters reported alongside the generated examples.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PreprocessStats {
    pub documents: usize,
    pub sentences: usize,
    pub candidate_pairs: usize,
    pub examples: usize,
    /// Gold relations whose two mentions never share a sentence.
    pub cross_sentence_skipped: usize,
    /// Candidate pairs dropped because the two mention spans overlap.
    pub overlap_skipped: usize,
    /// Candidate pairs dropped because their only gold labels are deleted classes.
    pub rare_label_dropped: usize,
    /// Pairs with more than one kept gold label, resolved by canonical order.
    pub multi_label_resolved: usize,
}

/// Step 1: replace the title/abstract separator with a single space.
pub fn merge_title_abstract(doc: &Document) -> FlatText {
    FlatText {
        pmid: doc.pmid.clone(),
        text: doc.flat_text(),
        title_len: doc.title.chars().count(),
    }
}

/// Step 2 and 3: rule-based sentence splitting.
///
/// A boundary follows `.`, `!` or `?` when one or more whitespace characters
/// and then an uppercase letter or digit follow; the boundary is suppressed
/// when the word immediately before the terminator is in the exception list.
/// The title is always closed off at the title/abstract junction. Spans are
/// trimmed of surrounding whitespace.
pub fn split_sentences(flat: &FlatText, cfg: &SplitterConfig) -> Vec<SentenceSpan> {
    let chars: Vec<char> = flat.text.chars().collect();
    let n = chars.len();

    // Character indices where a new sentence begins.
    let mut starts: Vec<usize> = Vec::new();

    // Forced boundary after the title.
    if flat.title_len < n {
        if let Some(first) = (flat.title_len..n).find(|&i| !chars[i].is_whitespace()) {
            starts.push(first);
        }
    }

    let mut i = 0;
    while i < n {
        let c = chars[i];
        if c == '.' || c == '!' || c == '?' {
            // whitespace run, then uppercase or digit
            let mut j = i + 1;
            while j < n && chars[j].is_whitespace() {
                j += 1;
            }
            if j > i + 1 && j < n && (chars[j].is_uppercase() || chars[j].is_ascii_digit()) {
                let mut w = i;
                while w > 0 && chars[w - 1].is_alphanumeric() {
                    w -= 1;
                }
                let word: String = chars[w..i].iter().collect();
                if !cfg.suppresses(&word) {
                    starts.push(j);
                }
            }
        }
        i += 1;
    }

    starts.sort_unstable();
    starts.dedup();

    let mut cuts = vec![0];
    cuts.extend(starts.into_iter().filter(|s| *s > 0));
    cuts.push(n);

    let mut spans = Vec::new();
    for w in cuts.windows(2) {
        let (mut s, mut e) = (w[0], w[1]);
        while s < e && chars[s].is_whitespace() {
            s += 1;
        }
        while e > s && chars[e - 1].is_whitespace() {
            e -= 1;
        }
        if s < e {
            spans.push(Span::new(s, e));
        }
    }
    spans
}

/// Step 2 continued: the Cartesian product of chemical and protein mentions
/// that lie entirely within one sentence. Pairs whose mention spans overlap
/// are skipped with a warning. Output is ordered by
/// (sentence start, chemical start, protein start).
pub fn generate_candidates(
    flat: &FlatText,
    entities: &[EntityMention],
    sentences: &[SentenceSpan],
) -> Vec<CandidatePair> {
    let mut pairs = Vec::new();
    for sent in sentences {
        let inside =
            |e: &&EntityMention| sent.contains(&e.span());
        let chems: Vec<&EntityMention> = entities
            .iter()
            .filter(|e| e.kind == EntityKind::Chemical)
            .filter(inside)
            .collect();
        let prots: Vec<&EntityMention> = entities
            .iter()
            .filter(|e| e.kind == EntityKind::Protein)
            .filter(inside)
            .collect();
        let mut sent_pairs: Vec<CandidatePair> = Vec::new();
        for chem in &chems {
            for prot in &prots {
                if chem.span().overlaps(&prot.span()) {
                    log::warn!(
                        "skipping overlapping pair {}:{}/{} in {}",
                        flat.pmid,
                        chem.eid,
                        prot.eid,
                        flat.pmid
                    );
                    continue;
                }
                sent_pairs.push(CandidatePair {
                    pmid: flat.pmid.clone(),
                    sentence: *sent,
                    chem: (*chem).clone(),
                    prot: (*prot).clone(),
                });
            }
        }
        sent_pairs.sort_by_key(|p| (p.chem.start, p.prot.start));
        pairs.extend(sent_pairs);
    }
    pairs
}

/// Step 4: wrap the chemical surface in `$…$` and the protein surface in
/// `#…#` inside the sentence substring. Insertions are applied right to
/// left so earlier offsets stay valid; surfaces are kept verbatim. Returns
/// the tagged sentence and the marker-inclusive character spans.
pub fn tag_entities(
    flat: &FlatText,
    sentence: &SentenceSpan,
    chem: &EntityMention,
    prot: &EntityMention,
) -> Result<(String, Span, Span), PreprocessError> {
    let (cs, ps) = (chem.span(), prot.span());
    if cs.overlaps(&ps) {
        return Err(PreprocessError::OverlapError(cs, ps));
    }
    for s in [&cs, &ps] {
        if !sentence.contains(s) {
            return Err(PreprocessError::EntityOutsideSentence(*s, *sentence));
        }
    }
    if chem.surface.contains('$') || chem.surface.contains('#') || prot.surface.contains('$') || prot.surface.contains('#') {
        log::warn!("entity surface in {} contains a marker character", flat.pmid);
    }

    let sent_chars: Vec<char> = flat
        .text
        .chars()
        .skip(sentence.start)
        .take(sentence.len())
        .collect();
    // spans relative to the sentence
    let rel = |s: &Span| Span::new(s.start - sentence.start, s.end - sentence.start);
    let (rc, rp) = (rel(&cs), rel(&ps));

    let mut chars = sent_chars;
    let mut insert = |span: &Span, marker: char| {
        chars.insert(span.end, marker);
        chars.insert(span.start, marker);
    };
    let (chem_span, prot_span) = if rc.start > rp.start {
        insert(&rc, '$');
        insert(&rp, '#');
        // the two '#' insertions shift the chemical right by 2
        (Span::new(rc.start + 2, rc.end + 4), Span::new(rp.start, rp.end + 2))
    } else {
        insert(&rp, '#');
        insert(&rc, '$');
        (Span::new(rc.start, rc.end + 2), Span::new(rp.start + 2, rp.end + 4))
    };
    Ok((chars.into_iter().collect(), chem_span, prot_span))
}

fn gold_labels_for(gold: &[RelationAnnotation], pmid: &str, chem: &str, prot: &str) -> Vec<RelationLabel> {
    let mut labels: Vec<RelationLabel> = gold
        .iter()
        .filter(|r| r.pmid == pmid && r.arg1 == chem && r.arg2 == prot)
        .map(|r| r.label)
        .collect();
    labels.sort_by_key(|l| RelationLabel::CORPUS_LABELS.iter().position(|c| c == l));
    labels.dedup();
    labels
}

/// Steps 5 and 6: attach gold labels. Unmatched pairs become `Other`; pairs
/// whose only gold labels are deleted classes are dropped entirely; multiple
/// kept labels resolve to the earliest in canonical order with a warning.
pub fn label_candidates(
    flat: &FlatText,
    pairs: &[CandidatePair],
    gold: &[RelationAnnotation],
) -> Result<(Vec<RelationExample>, PreprocessStats), PreprocessError> {
    let mut out = Vec::new();
    let mut stats = PreprocessStats::default();
    for pair in pairs {
        let labels = gold_labels_for(gold, &pair.pmid, &pair.chem.eid, &pair.prot.eid);
        let label = if labels.is_empty() {
            RelationLabel::Other
        } else {
            let kept: Vec<RelationLabel> = labels.iter().filter(|l| !l.is_deleted()).copied().collect();
            match kept.len() {
                0 => {
                    stats.rare_label_dropped += 1;
                    continue;
                }
                1 => kept[0],
                _ => {
                    stats.multi_label_resolved += 1;
                    log::warn!(
                        "pair {}:{}/{} has {} kept gold labels; using {}",
                        pair.pmid,
                        pair.chem.eid,
                        pair.prot.eid,
                        kept.len(),
                        kept[0]
                    );
                    kept[0]
                }
            }
        };
        let (tagged_text, chem_char_span, prot_char_span) =
            tag_entities(flat, &pair.sentence, &pair.chem, &pair.prot)?;
        out.push(RelationExample {
            pmid: pair.pmid.clone(),
            chem_eid: pair.chem.eid.clone(),
            prot_eid: pair.prot.eid.clone(),
            tagged_text,
            label,
            chem_char_span,
            prot_char_span,
        });
    }
    stats.examples = out.len();
    Ok((out, stats))
}

/// Run steps 1–6 over every document of the corpus, in document-id order.
pub fn preprocess_corpus(
    corpus: &Corpus,
    cfg: &SplitterConfig,
) -> Result<(Vec<RelationExample>, PreprocessStats), PreprocessError> {
    let mut examples = Vec::new();
    let mut stats = PreprocessStats::default();
    for (pmid, doc) in &corpus.documents {
        let flat = merge_title_abstract(doc);
        let sentences = split_sentences(&flat, cfg);
        let entities = corpus.entities_of(pmid);
        let gold = corpus.relations_of(pmid);
        let pairs = generate_candidates(&flat, entities, &sentences);

        // possible same-sentence pairs minus generated pairs = overlap skips
        let mut possible = 0;
        for sent in &sentences {
            let c = entities
                .iter()
                .filter(|e| e.kind == EntityKind::Chemical && sent.contains(&e.span()))
                .count();
            let p = entities
                .iter()
                .filter(|e| e.kind == EntityKind::Protein && sent.contains(&e.span()))
                .count();
            possible += c * p;
        }
        stats.overlap_skipped += possible - pairs.len();

        for rel in gold {
            let find = |eid: &str| entities.iter().find(|e| e.eid == eid);
            if let (Some(a), Some(b)) = (find(&rel.arg1), find(&rel.arg2)) {
                let together = sentences
                    .iter()
                    .any(|s| s.contains(&a.span()) && s.contains(&b.span()));
                if !together {
                    stats.cross_sentence_skipped += 1;
                }
            }
        }

        let (doc_examples, doc_stats) = label_candidates(&flat, &pairs, gold)?;
        stats.documents += 1;
        stats.sentences += sentences.len();
        stats.candidate_pairs += pairs.len();
        stats.rare_label_dropped += doc_stats.rare_label_dropped;
        stats.multi_label_resolved += doc_stats.multi_label_resolved;
        examples.extend(doc_examples);
    }
    stats.examples = examples.len();
    Ok((examples, stats))
}

#[derive(Debug, Error)]
pub enum ExampleIoError {
    #[error("line {line}: expected 5 tab-separated fields, found {found}")]
    MalformedLine { line: usize, found: usize },
    #[error("line {line}: unknown or deleted label {label:?}")]
    BadLabel { line: usize, label: String },
    #[error("line {line}: tagged text must contain exactly one $-region and one #-region")]
    BadMarkers { line: usize },
}

/// Export examples as TSV: pmid, chem eid, prot eid, label, tagged text.
/// Tabs and newlines inside the text are replaced by single spaces.
pub fn write_examples_tsv(examples: &[RelationExample]) -> String {
    let mut out = String::new();
    for ex in examples {
        let clean: String = ex
            .tagged_text
            .chars()
            .map(|c| if c == '\t' || c == '\n' || c == '\r' { ' ' } else { c })
            .collect();
        let dollars = clean.chars().filter(|c| *c == '$').count();
        let hashes = clean.chars().filter(|c| *c == '#').count();
        if dollars != 2 || hashes != 2 {
            log::warn!(
                "example {}:{}/{} has extra marker characters in its text",
                ex.pmid,
                ex.chem_eid,
                ex.prot_eid
            );
        }
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            ex.pmid, ex.chem_eid, ex.prot_eid, ex.label, clean
        ));
    }
    out
}

/// Parse an examples TSV written by [`write_examples_tsv`]. Entity spans are
/// recovered from the marker positions, which must occur exactly twice each.
pub fn read_examples_tsv(stream: &str) -> Result<Vec<RelationExample>, ExampleIoError> {
    let mut out = Vec::new();
    for (idx, raw) in stream.split('\n').enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(ExampleIoError::MalformedLine { line: line_no, found: fields.len() });
        }
        let label = RelationLabel::parse(fields[3])
            .filter(|l| !l.is_deleted())
            .ok_or_else(|| ExampleIoError::BadLabel { line: line_no, label: fields[3].to_string() })?;
        let text = fields[4];
        let marker_span = |marker: char| -> Option<Span> {
            let mut positions = text.chars().enumerate().filter(|(_, c)| *c == marker).map(|(i, _)| i);
            let a = positions.next()?;
            let b = positions.next()?;
            if positions.next().is_some() {
                return None;
            }
            Some(Span::new(a, b + 1))
        };
        let chem_char_span = marker_span('$').ok_or(ExampleIoError::BadMarkers { line: line_no })?;
        let prot_char_span = marker_span('#').ok_or(ExampleIoError::BadMarkers { line: line_no })?;
        out.push(RelationExample {
            pmid: fields[0].to_string(),
            chem_eid: fields[1].to_string(),
            prot_eid: fields[2].to_string(),
            tagged_text: text.to_string(),
            label,
            chem_char_span,
            prot_char_span,
        });
    }
    Ok(out)
}

/// Remove the `$`/`#` markers of an example, recovering the original sentence.
pub fn strip_markers(ex: &RelationExample) -> String {
    ex.tagged_text
        .chars()
        .enumerate()
        .filter(|(i, _)| {
            ![
                ex.chem_char_span.start,
                ex.chem_char_span.end - 1,
                ex.prot_char_span.start,
                ex.prot_char_span.end - 1,
            ]
            .contains(i)
        })
        .map(|(_, c)| c)
        .collect()
}

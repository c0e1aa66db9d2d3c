//! Deterministic word-level tokenizer and vocabulary, standing in for a
//! learned subword tokenizer. Maximal alphanumeric runs are tokens; every
//! other non-whitespace character is a single-character token, so the
//! `$`/`#` entity markers always tokenize to themselves.

use std::collections::HashMap;

use thiserror::Error;

use crate::preprocess::RelationExample;
use crate::Span;

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";
pub const RESERVED: [&str; 4] = [PAD, BOS, EOS, UNK];

pub const PAD_ID: u32 = 0;
pub const BOS_ID: u32 = 1;
pub const EOS_ID: u32 = 2;
pub const UNK_ID: u32 = 3;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TokenizerError {
    #[error("no tokens in the input corpus")]
    EmptyCorpus,
    #[error("min_frequency must be >= 1")]
    BadMinFrequency,
    #[error("vocabulary file line {line}: {reason}")]
    BadVocabFile { line: usize, reason: String },
    #[error("example {pmid}:{chem}/{prot} carries a deleted label")]
    DeletedLabel { pmid: String, chem: String, prot: String },
    #[error("max_len must be >= 8, got {0}")]
    BadMaxLen(usize),
}

/// Token-to-id bijection with four reserved entries at ids 0..3. The entity
/// marker characters are always present so entity boundaries never map to
/// `<unk>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
    pub min_frequency: usize,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>, min_frequency: usize) -> Self {
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary { tokens, ids, min_frequency }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id_of(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> u32 {
        self.id_of(token).unwrap_or(UNK_ID)
    }

    pub fn token_of(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// One token per line; line number − 1 is the id, first four lines are
    /// the reserved tokens.
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn from_file_string(s: &str) -> Result<Self, TokenizerError> {
        let mut tokens = Vec::new();
        let fragments: Vec<&str> = s.split('\n').collect();
        for (i, raw) in fragments.iter().enumerate() {
            let line = raw.strip_suffix('\r').unwrap_or(raw);
            if line.is_empty() {
                if i + 1 == fragments.len() {
                    continue; // trailing newline
                }
                return Err(TokenizerError::BadVocabFile { line: i + 1, reason: "empty token".into() });
            }
            tokens.push(line.to_string());
        }
        for (i, reserved) in RESERVED.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*reserved) {
                return Err(TokenizerError::BadVocabFile {
                    line: i + 1,
                    reason: format!("expected reserved token {reserved:?}"),
                });
            }
        }
        let mut seen = HashMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if let Some(first) = seen.insert(t.clone(), i) {
                return Err(TokenizerError::BadVocabFile {
                    line: i + 1,
                    reason: format!("duplicate token also on line {}", first + 1),
                });
            }
        }
        Ok(Vocabulary::from_tokens(tokens, 1))
    }
}

/// Split into tokens: maximal alphanumeric runs, single non-whitespace
/// characters otherwise. Returns tokens with their character spans.
pub fn tokenize_with_spans(text: &str) -> Vec<(String, Span)> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_alphanumeric() {
            let start = i;
            while i < chars.len() && chars[i].is_alphanumeric() {
                i += 1;
            }
            out.push((chars[start..i].iter().collect(), Span::new(start, i)));
        } else {
            out.push((c.to_string(), Span::new(i, i + 1)));
            i += 1;
        }
    }
    out
}

pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_with_spans(text).into_iter().map(|(t, _)| t).collect()
}

/// Build a vocabulary from the tagged texts. Tokens below `min_frequency`
/// are excluded (the marker characters are kept regardless); ids are
/// assigned by descending frequency, ties broken lexicographically.
pub fn build_vocab(examples: &[RelationExample], min_frequency: usize) -> Result<Vocabulary, TokenizerError> {
    if min_frequency < 1 {
        return Err(TokenizerError::BadMinFrequency);
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for ex in examples {
        for tok in tokenize(&ex.tagged_text) {
            *counts.entry(tok).or_insert(0) += 1;
        }
    }
    if counts.is_empty() {
        return Err(TokenizerError::EmptyCorpus);
    }
    for marker in ["$", "#"] {
        let c = counts.entry(marker.to_string()).or_insert(0);
        if *c < min_frequency {
            *c = min_frequency;
        }
    }
    let mut entries: Vec<(String, usize)> =
        counts.into_iter().filter(|(_, c)| *c >= min_frequency).collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
    tokens.extend(entries.into_iter().map(|(t, _)| t));
    Ok(Vocabulary::from_tokens(tokens, min_frequency))
}

/// An id sequence ready for the model: wrapped in `<s>`/`</s>`, with
/// marker-inclusive token spans for the two entities and the class id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedExample {
    pub ids: Vec<u32>,
    pub chem_tok_span: Span,
    pub prot_tok_span: Span,
    pub label_id: usize,
    pub pmid: String,
    pub chem_eid: String,
    pub prot_eid: String,
}

/// Map an example to ids. Out-of-vocabulary tokens become `<unk>`; the
/// sequence is truncated from the right to `max_len`, and if truncation
/// would cut into either entity token span the example is skipped
/// (`Ok(None)`).
pub fn encode(
    ex: &RelationExample,
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<Option<EncodedExample>, TokenizerError> {
    if max_len < 8 {
        return Err(TokenizerError::BadMaxLen(max_len));
    }
    let label_id = ex.label.class_id().ok_or_else(|| TokenizerError::DeletedLabel {
        pmid: ex.pmid.clone(),
        chem: ex.chem_eid.clone(),
        prot: ex.prot_eid.clone(),
    })?;

    let toks = tokenize_with_spans(&ex.tagged_text);

    // token index ranges covering the marker-inclusive character spans;
    // no token straddles a span edge because markers are single-char tokens
    let tok_range = |span: &Span| {
        let mut start = None;
        let mut end = 0;
        for (i, (_, s)) in toks.iter().enumerate() {
            if s.start >= span.start && s.end <= span.end {
                if start.is_none() {
                    start = Some(i);
                }
                end = i + 1;
            }
        }
        start.map(|s| Span::new(s, end))
    };
    let chem = tok_range(&ex.chem_char_span);
    let prot = tok_range(&ex.prot_char_span);
    let (Some(chem), Some(prot)) = (chem, prot) else {
        return Ok(None);
    };

    let mut ids: Vec<u32> = Vec::with_capacity(toks.len() + 2);
    ids.push(BOS_ID);
    ids.extend(toks.iter().map(|(t, _)| vocab.id_or_unk(t)));
    ids.push(EOS_ID);

    // +1 for the leading <s>
    let chem = Span::new(chem.start + 1, chem.end + 1);
    let prot = Span::new(prot.start + 1, prot.end + 1);

    if ids.len() > max_len {
        ids.truncate(max_len - 1);
        ids.push(EOS_ID);
        let content_end = max_len - 1;
        if chem.end > content_end || prot.end > content_end {
            return Ok(None);
        }
    }

    Ok(Some(EncodedExample {
        ids,
        chem_tok_span: chem,
        prot_tok_span: prot,
        label_id,
        pmid: ex.pmid.clone(),
        chem_eid: ex.chem_eid.clone(),
        prot_eid: ex.prot_eid.clone(),
    }))
}

/// Ids back to token strings (for diagnostics and round-trip tests).
pub fn decode(ids: &[u32], vocab: &Vocabulary) -> Vec<String> {
    ids.iter()
        .map(|id| vocab.token_of(*id).unwrap_or(UNK).to_string())
        .collect()
}

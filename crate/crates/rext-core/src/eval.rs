//! Prediction and micro-averaged evaluation over relation tuples.
//! Metrics are computed on (pmid, label, arg1, arg2) sets, so duplicates
//! never change a score, and the `Other` class exists only inside the
//! classifier: it is filtered out before tuples are built.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::checkpoint::Checkpoint;
use crate::corpus::{RelationAnnotation, RelationLabel};
use crate::model::{forward, ModelError};
use crate::tokenizer::EncodedExample;

/// One predicted relation tuple; never carries `Other`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct PredictedRelation {
    pub pmid: String,
    pub label: RelationLabel,
    pub arg1: String,
    pub arg2: String,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("example ids exceed the checkpoint vocabulary ({max_id} >= {vocab_size})")]
    VocabMismatch { max_id: u32, vocab_size: usize },
    #[error("checkpoint label table does not cover class id {0}")]
    BadLabelTable(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Eval-mode argmax prediction; ties break toward the lowest class id, and
/// examples classified `Other` emit no tuple. Output order follows input.
pub fn predict(ckpt: &Checkpoint, examples: &[EncodedExample]) -> Result<Vec<PredictedRelation>, EvalError> {
    for ex in examples {
        if let Some(&max_id) = ex.ids.iter().max() {
            if max_id as usize >= ckpt.config.vocab_size {
                return Err(EvalError::VocabMismatch {
                    max_id,
                    vocab_size: ckpt.config.vocab_size,
                });
            }
        }
    }
    let mut out = Vec::new();
    for ex in examples {
        let trace = forward(&ckpt.params, &ckpt.config, ex, None)?;
        let mut best = 0;
        for (i, &p) in trace.probs.iter().enumerate() {
            if p > trace.probs[best] {
                best = i;
            }
        }
        let label = *ckpt.labels.get(best).ok_or(EvalError::BadLabelTable(best))?;
        if label == RelationLabel::Other {
            continue;
        }
        out.push(PredictedRelation {
            pmid: ex.pmid.clone(),
            label,
            arg1: ex.chem_eid.clone(),
            arg2: ex.prot_eid.clone(),
        });
    }
    Ok(out)
}

/// A relation tuple in set form.
pub type Tuple = (String, RelationLabel, String, String);

pub fn tuple_of_prediction(p: &PredictedRelation) -> Tuple {
    (p.pmid.clone(), p.label, p.arg1.clone(), p.arg2.clone())
}

pub fn tuple_of_annotation(r: &RelationAnnotation) -> Tuple {
    (r.pmid.clone(), r.label, r.arg1.clone(), r.arg2.clone())
}

/// Per-class true positives, false positives and false negatives over the
/// ten evaluated labels, from exact tuple matching with set semantics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub per_class: BTreeMap<RelationLabel, (usize, usize, usize)>,
}

impl ConfusionCounts {
    /// Zero counts for all ten evaluated labels.
    pub fn zero() -> Self {
        ConfusionCounts {
            per_class: RelationLabel::KEPT_LABELS.iter().map(|l| (*l, (0, 0, 0))).collect(),
        }
    }

    /// Build directly from per-class (TP, FP, FN) triples.
    pub fn from_counts(counts: &[(RelationLabel, usize, usize, usize)]) -> Self {
        let mut c = Self::zero();
        for (label, tp, fp, fn_) in counts {
            c.per_class.insert(*label, (*tp, *fp, *fn_));
        }
        c
    }
}

/// TP/FP/FN per class: `TP_c = |pred_c ∩ gold_c|`, `FP_c = |pred_c \ gold_c|`,
/// `FN_c = |gold_c \ pred_c|`, matching exactly on all four tuple fields.
pub fn confusion(pred: &BTreeSet<Tuple>, gold: &BTreeSet<Tuple>) -> ConfusionCounts {
    let mut counts = ConfusionCounts::zero();
    for t in pred {
        let entry = counts.per_class.entry(t.1).or_insert((0, 0, 0));
        if gold.contains(t) {
            entry.0 += 1;
        } else {
            entry.1 += 1;
        }
    }
    for t in gold {
        if !pred.contains(t) {
            counts.per_class.entry(t.1).or_insert((0, 0, 0)).2 += 1;
        }
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Micro-averaged scores plus the per-class table, in canonical label order.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub micro_f1: f64,
    pub per_class: Vec<(RelationLabel, ClassMetrics)>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0 // 0/0 is defined as 0
    } else {
        num as f64 / den as f64
    }
}

fn f1_of(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Micro precision `ΣTP/(ΣTP+ΣFP)`, micro recall `ΣTP/(ΣTP+ΣFN)`, micro F1
/// as their harmonic mean, and per-class scores from each class's counts.
pub fn micro_metrics(counts: &ConfusionCounts) -> MetricReport {
    let (mut tp_sum, mut fp_sum, mut fn_sum) = (0, 0, 0);
    let mut per_class = Vec::new();
    for label in RelationLabel::KEPT_LABELS {
        let (tp, fp, fn_) = counts.per_class.get(&label).copied().unwrap_or((0, 0, 0));
        tp_sum += tp;
        fp_sum += fp;
        fn_sum += fn_;
        let p = ratio(tp, tp + fp);
        let r = ratio(tp, tp + fn_);
        per_class.push((label, ClassMetrics { precision: p, recall: r, f1: f1_of(p, r) }));
    }
    let micro_precision = ratio(tp_sum, tp_sum + fp_sum);
    let micro_recall = ratio(tp_sum, tp_sum + fn_sum);
    MetricReport {
        micro_precision,
        micro_recall,
        micro_f1: f1_of(micro_precision, micro_recall),
        per_class,
    }
}

/// Prediction tuples in the relations-file format; round-trips through
/// `corpus::parse_relations`.
pub fn write_predictions(preds: &[PredictedRelation]) -> String {
    let mut out = String::new();
    for p in preds {
        out.push_str(&format!("{}\t{}\tArg1:{}\tArg2:{}\n", p.pmid, p.label, p.arg1, p.arg2));
    }
    out
}

/// Round half up to two decimals.
fn fmt2(x: f64) -> String {
    format!("{:.2}", (x * 100.0).round() / 100.0)
}

/// Fixed-layout report: one row per evaluated label in canonical order,
/// columns P/R/F1 at two decimals, and a final global row.
pub fn report(metrics: &MetricReport) -> String {
    let mut out = String::from("Relation\tP\tR\tF1\n");
    for (label, m) in &metrics.per_class {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            label,
            fmt2(m.precision),
            fmt2(m.recall),
            fmt2(m.f1)
        ));
    }
    out.push_str(&format!(
        "Global results across all interactions types\t{}\t{}\t{}\n",
        fmt2(metrics.micro_precision),
        fmt2(metrics.micro_recall),
        fmt2(metrics.micro_f1)
    ));
    out
}

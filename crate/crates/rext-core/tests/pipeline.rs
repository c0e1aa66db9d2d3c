//! End-to-end pipeline tests over the shipped fixture corpus, plus
//! property tests for the invariants that span modules.

use std::collections::BTreeSet;
use std::path::PathBuf;

use proptest::prelude::*;

use rext_core::corpus::{
    assemble_corpus, corpus_stats, parse_abstracts, parse_entities, parse_relations,
    serialize_abstracts, serialize_entities, serialize_relations, Document, EntityKind,
    EntityMention, RelationAnnotation, RelationLabel,
};
use rext_core::eval::{confusion, micro_metrics, predict, tuple_of_annotation, Tuple};
use rext_core::model::{HeadKind, ModelConfig};
use rext_core::preprocess::{
    merge_title_abstract, preprocess_corpus, split_sentences, strip_markers, SplitterConfig,
};
use rext_core::tokenizer::{build_vocab, decode, encode, tokenize};
use rext_core::train::{train, TrainConfig};

fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn fixture_corpus() -> rext_core::Corpus {
    let docs = parse_abstracts(&std::fs::read_to_string(fixture_path("abstracts.tsv")).unwrap()).unwrap();
    let ents = parse_entities(&std::fs::read_to_string(fixture_path("entities.tsv")).unwrap()).unwrap();
    let rels = parse_relations(&std::fs::read_to_string(fixture_path("relations.tsv")).unwrap()).unwrap();
    assemble_corpus(docs, ents, rels).unwrap()
}

#[test]
fn fixture_statistics_match_hand_counts() {
    let stats = corpus_stats(&fixture_corpus());
    assert_eq!(stats.n_documents, 5);
    assert_eq!(stats.n_chemicals, 11);
    assert_eq!(stats.n_proteins, 9);
    assert_eq!(stats.n_positive_relations, 5);
    assert_eq!(stats.per_label_counts[&RelationLabel::Inhibitor], 2);
    assert_eq!(stats.per_label_counts[&RelationLabel::Activator], 1);
    assert_eq!(stats.per_label_counts[&RelationLabel::Substrate], 1);
    assert_eq!(stats.per_label_counts[&RelationLabel::AgonistInhibitor], 1);
}

#[test]
fn fixture_preprocessing_produces_expected_examples() {
    let corpus = fixture_corpus();
    let (examples, stats) = preprocess_corpus(&corpus, &SplitterConfig::default()).unwrap();
    assert_eq!(stats.documents, 5);
    assert_eq!(stats.cross_sentence_skipped, 1);
    assert_eq!(stats.overlap_skipped, 1);
    assert_eq!(stats.rare_label_dropped, 1);
    assert_eq!(examples.len(), 6);

    let labels: Vec<RelationLabel> = examples.iter().map(|e| e.label).collect();
    assert_eq!(labels.iter().filter(|l| **l == RelationLabel::Other).count(), 3);
    assert_eq!(labels.iter().filter(|l| **l == RelationLabel::Inhibitor).count(), 2);
    assert_eq!(labels.iter().filter(|l| **l == RelationLabel::Substrate).count(), 1);
}

#[test]
fn fixture_trains_and_recovers_same_sentence_gold() {
    let corpus = fixture_corpus();
    let (examples, _) = preprocess_corpus(&corpus, &SplitterConfig::default()).unwrap();
    let vocab = build_vocab(&examples, 1).unwrap();
    let mut encoded = Vec::new();
    for ex in &examples {
        encoded.push(encode(ex, &vocab, 128).unwrap().expect("fixture fits"));
    }
    let model_cfg = ModelConfig {
        hidden: 32,
        layers: 4,
        heads: 4,
        ff_dim: 64,
        max_positions: 128,
        head_dim: 16,
        head: HeadKind::RBertCnn,
        ..ModelConfig::new(vocab.len())
    };
    let train_cfg = TrainConfig {
        epochs: 60,
        batch_size: 4,
        learning_rate: 3e-4,
        dropout: 0.1,
        seed: 7,
        ..TrainConfig::default()
    };
    let out = train(&encoded, &model_cfg, &train_cfg, &vocab, 128).unwrap();
    let preds = predict(&out.checkpoint, &encoded).unwrap();

    let pred_set: BTreeSet<Tuple> =
        preds.iter().map(rext_core::eval::tuple_of_prediction).collect();
    // same-sentence gold = all gold minus the cross-sentence ACTIVATOR and
    // the deleted rare label
    let gold_set: BTreeSet<Tuple> = corpus
        .relations
        .values()
        .flatten()
        .filter(|r| !r.label.is_deleted() && r.label != RelationLabel::Activator)
        .map(tuple_of_annotation)
        .collect();
    let metrics = micro_metrics(&confusion(&pred_set, &gold_set));
    assert!(
        metrics.micro_f1 > 0.99,
        "fixture memorization failed: F1 {}",
        metrics.micro_f1
    );
}

#[test]
fn fixture_files_round_trip_byte_identically() {
    for (name, reser) in [
        ("abstracts.tsv", 0usize),
        ("entities.tsv", 1),
        ("relations.tsv", 2),
    ] {
        let text = std::fs::read_to_string(fixture_path(name)).unwrap();
        let back = match reser {
            0 => serialize_abstracts(&parse_abstracts(&text).unwrap()),
            1 => serialize_entities(&parse_entities(&text).unwrap()),
            _ => serialize_relations(&parse_relations(&text).unwrap()),
        };
        assert_eq!(back, text, "{name} did not round-trip");
    }
}

// ---------------------------------------------------------------------------
// property tests

fn word() -> impl Strategy<Value = String> {
    proptest::string::string_regex("[a-zA-Z][a-zA-Z0-9]{0,7}").unwrap()
}

fn sentence_text() -> impl Strategy<Value = String> {
    proptest::collection::vec(word(), 3..12).prop_map(|ws| ws.join(" "))
}

proptest! {
    #[test]
    fn corpus_files_round_trip(docs in proptest::collection::vec((word(), sentence_text(), sentence_text()), 1..6)) {
        // unique pmids
        let docs: Vec<Document> = docs
            .into_iter()
            .enumerate()
            .map(|(i, (p, t, a))| Document { pmid: format!("{p}{i}"), title: t, abstract_text: a })
            .collect();
        let file = serialize_abstracts(&docs);
        prop_assert_eq!(serialize_abstracts(&parse_abstracts(&file).unwrap()), file);
    }

    #[test]
    fn relations_round_trip(rels in proptest::collection::vec((word(), 0usize..13, word(), word()), 0..12)) {
        let rels: Vec<RelationAnnotation> = rels
            .into_iter()
            .map(|(p, l, a, b)| RelationAnnotation {
                pmid: p,
                label: RelationLabel::CORPUS_LABELS[l],
                arg1: a,
                arg2: b,
            })
            .collect();
        let file = serialize_relations(&rels);
        let parsed = parse_relations(&file).unwrap();
        prop_assert_eq!(&parsed, &rels); // order-preserving
        prop_assert_eq!(serialize_relations(&parsed), file);
    }

    #[test]
    fn sentence_spans_partition_text(title in sentence_text(), body in sentence_text(), split_words in 0usize..3) {
        // glue several "sentences" with terminators
        let abstract_text = match split_words {
            0 => body,
            1 => format!("{body}. Next one here"),
            _ => format!("{body}! Another one? Final words"),
        };
        let doc = Document { pmid: "1".into(), title, abstract_text };
        let flat = merge_title_abstract(&doc);
        let spans = split_sentences(&flat, &SplitterConfig::default());
        let chars: Vec<char> = flat.text.chars().collect();

        // disjoint, ordered, covering all non-whitespace
        for w in spans.windows(2) {
            prop_assert!(w[0].end <= w[1].start);
        }
        for (i, c) in chars.iter().enumerate() {
            if !c.is_whitespace() {
                prop_assert!(spans.iter().any(|s| s.start <= i && i < s.end));
            }
        }
        // concatenating spans and collapsing whitespace recovers the text
        let joined: String = spans
            .iter()
            .map(|s| chars[s.start..s.end].iter().collect::<String>())
            .collect::<Vec<_>>()
            .join(" ");
        let collapse = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ");
        prop_assert_eq!(collapse(&joined), collapse(&flat.text));
    }

    #[test]
    fn candidate_count_is_chem_times_prot(n_chem in 1usize..4, n_prot in 1usize..4) {
        // one sentence of separated single-word entities
        let mut text = String::from("S");
        let mut entities = Vec::new();
        let mut pos = 1;
        for i in 0..n_chem + n_prot {
            text.push(' ');
            pos += 1;
            let w = format!("w{i}");
            let kind = if i < n_chem { EntityKind::Chemical } else { EntityKind::Protein };
            entities.push(EntityMention {
                pmid: "1".into(),
                eid: format!("T{i}"),
                kind,
                type_tag: "CHEMICAL".into(),
                start: pos,
                end: pos + w.chars().count(),
                surface: w.clone(),
            });
            pos += w.chars().count();
            text.push_str(&w);
        }
        let doc = Document { pmid: "1".into(), title: text, abstract_text: String::new() };
        let flat = merge_title_abstract(&doc);
        let sentences = split_sentences(&flat, &SplitterConfig::default());
        let pairs = rext_core::preprocess::generate_candidates(&flat, &entities, &sentences);
        prop_assert_eq!(pairs.len(), n_chem * n_prot);
    }

    #[test]
    fn tagging_preserves_offsets_and_strips_back(words in proptest::collection::vec(word(), 6..14), c in 0usize..3, p in 3usize..6) {
        let text = words.join(" ");
        let char_pos = |i: usize| -> (usize, usize) {
            let before: usize = words[..i].iter().map(|w| w.chars().count() + 1).sum();
            (before, before + words[i].chars().count())
        };
        let (cs, ce) = char_pos(c);
        let (ps, pe) = char_pos(p);
        let doc = Document { pmid: "1".into(), title: text, abstract_text: String::new() };
        let flat = merge_title_abstract(&doc);
        let chem = EntityMention {
            pmid: "1".into(), eid: "T1".into(), kind: EntityKind::Chemical,
            type_tag: "CHEMICAL".into(), start: cs, end: ce, surface: words[c].clone(),
        };
        let prot = EntityMention {
            pmid: "1".into(), eid: "T2".into(), kind: EntityKind::Protein,
            type_tag: "GENE".into(), start: ps, end: pe, surface: words[p].clone(),
        };
        let sentences = split_sentences(&flat, &SplitterConfig::default());
        prop_assume!(sentences.len() == 1);
        let sentence = sentences[0];
        let (tagged, chem_span, prot_span) =
            rext_core::preprocess::tag_entities(&flat, &sentence, &chem, &prot).unwrap();

        let tagged_chars: Vec<char> = tagged.chars().collect();
        let slice = |s: rext_core::Span| tagged_chars[s.start..s.end].iter().collect::<String>();
        prop_assert_eq!(slice(chem_span), format!("${}$", words[c]));
        prop_assert_eq!(slice(prot_span), format!("#{}#", words[p]));

        let ex = rext_core::preprocess::RelationExample {
            pmid: "1".into(), chem_eid: "T1".into(), prot_eid: "T2".into(),
            tagged_text: tagged, label: RelationLabel::Other,
            chem_char_span: chem_span, prot_char_span: prot_span,
        };
        let original: String = flat.text.chars().skip(sentence.start).take(sentence.len()).collect();
        prop_assert_eq!(strip_markers(&ex), original);
    }

    #[test]
    fn encode_round_trips_tokens(words in proptest::collection::vec(word(), 4..10)) {
        let text = format!("$a$ {} #b#", words.join(" "));
        let total = text.chars().count();
        let ex = rext_core::preprocess::RelationExample {
            pmid: "1".into(), chem_eid: "T1".into(), prot_eid: "T2".into(),
            tagged_text: text.clone(), label: RelationLabel::Other,
            chem_char_span: rext_core::Span::new(0, 3),
            prot_char_span: rext_core::Span::new(total - 3, total),
        };
        let vocab = build_vocab(std::slice::from_ref(&ex), 1).unwrap();
        let enc = encode(&ex, &vocab, 512).unwrap().unwrap();
        let toks = decode(&enc.ids, &vocab);
        let original = tokenize(&text);
        prop_assert_eq!(&toks[1..toks.len() - 1], original.as_slice());
        // same inputs, same outputs
        prop_assert_eq!(encode(&ex, &vocab, 512).unwrap().unwrap(), enc);
    }

    #[test]
    fn micro_metrics_agree_with_set_oracle(
        pred in proptest::collection::btree_set((0u8..20, 0usize..4, 0u8..5, 0u8..5), 0..50),
        gold in proptest::collection::btree_set((0u8..20, 0usize..4, 0u8..5, 0u8..5), 0..50),
    ) {
        let to_tuples = |set: &BTreeSet<(u8, usize, u8, u8)>| -> BTreeSet<Tuple> {
            set.iter()
                .map(|(p, l, a, b)| {
                    (p.to_string(), RelationLabel::KEPT_LABELS[*l], format!("T{a}"), format!("T{b}"))
                })
                .collect()
        };
        let pred = to_tuples(&pred);
        let gold = to_tuples(&gold);

        let metrics = micro_metrics(&confusion(&pred, &gold));

        // oracle: direct set arithmetic, no confusion-matrix intermediate
        let hits = pred.intersection(&gold).count() as f64;
        let p = if pred.is_empty() { 0.0 } else { hits / pred.len() as f64 };
        let r = if gold.is_empty() { 0.0 } else { hits / gold.len() as f64 };
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        prop_assert!((metrics.micro_precision - p).abs() < 1e-12);
        prop_assert!((metrics.micro_recall - r).abs() < 1e-12);
        prop_assert!((metrics.micro_f1 - f1).abs() < 1e-12);

        for (label, m) in &metrics.per_class {
            let pred_c: BTreeSet<&Tuple> = pred.iter().filter(|t| t.1 == *label).collect();
            let gold_c: BTreeSet<&Tuple> = gold.iter().filter(|t| t.1 == *label).collect();
            let hits = pred_c.intersection(&gold_c).count() as f64;
            let p = if pred_c.is_empty() { 0.0 } else { hits / pred_c.len() as f64 };
            let r = if gold_c.is_empty() { 0.0 } else { hits / gold_c.len() as f64 };
            let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
            prop_assert!((m.precision - p).abs() < 1e-12);
            prop_assert!((m.recall - r).abs() < 1e-12);
            prop_assert!((m.f1 - f1).abs() < 1e-12);
        }
    }
}

#[test]
fn predict_is_label_permutation_consistent() {
    use rext_core::checkpoint::{Checkpoint, TrainMeta};
    use rext_core::model::init_params;
    use rext_core::tokenizer::{EncodedExample, Vocabulary};
    use rext_core::Span;

    let vocab =
        Vocabulary::from_file_string("<pad>\n<s>\n</s>\n<unk>\n$\n#\na\nb\nc\nd\ne\nf\n").unwrap();
    let config = ModelConfig {
        hidden: 16,
        layers: 4,
        heads: 2,
        ff_dim: 32,
        max_positions: 16,
        head_dim: 8,
        dropout: 0.0,
        ..ModelConfig::new(vocab.len())
    };
    let mut labels = rext_core::train::label_table();
    let ckpt = Checkpoint {
        config: config.clone(),
        params: init_params(&config, 77).unwrap(),
        vocab: vocab.clone(),
        labels: labels.clone(),
        meta: TrainMeta { epochs_trained: 0, seed: 77, learning_rate: 3e-5, batch_size: 32, max_len: 16 },
    };

    let examples: Vec<EncodedExample> = (0..8)
        .map(|i| EncodedExample {
            ids: vec![1, 4, 6 + (i % 6) as u32, 4, 5, 7 + (i % 5) as u32, 5, 2],
            chem_tok_span: Span::new(1, 4),
            prot_tok_span: Span::new(4, 7),
            label_id: 0,
            pmid: format!("{i}"),
            chem_eid: "T1".into(),
            prot_eid: "T2".into(),
        })
        .collect();

    // rotate the ten kept labels; Other stays in place
    let rotate = |l: RelationLabel| -> RelationLabel {
        if l == RelationLabel::Other {
            l
        } else {
            let i = RelationLabel::KEPT_LABELS.iter().position(|k| *k == l).unwrap();
            RelationLabel::KEPT_LABELS[(i + 3) % 10]
        }
    };
    for slot in labels.iter_mut() {
        *slot = rotate(*slot);
    }
    let permuted = Checkpoint { labels, ..ckpt.clone() };

    let gold: BTreeSet<Tuple> = examples
        .iter()
        .take(4)
        .map(|e| (e.pmid.clone(), RelationLabel::Inhibitor, "T1".to_string(), "T2".to_string()))
        .collect();
    let gold_permuted: BTreeSet<Tuple> =
        gold.iter().map(|(p, l, a, b)| (p.clone(), rotate(*l), a.clone(), b.clone())).collect();

    let metrics = |ck: &Checkpoint, gold: &BTreeSet<Tuple>| {
        let preds = predict(ck, &examples).unwrap();
        let pred_set: BTreeSet<Tuple> =
            preds.iter().map(rext_core::eval::tuple_of_prediction).collect();
        micro_metrics(&confusion(&pred_set, gold))
    };
    let a = metrics(&ckpt, &gold);
    let b = metrics(&permuted, &gold_permuted);
    assert_eq!(a.micro_precision, b.micro_precision);
    assert_eq!(a.micro_recall, b.micro_recall);
    assert_eq!(a.micro_f1, b.micro_f1);
}

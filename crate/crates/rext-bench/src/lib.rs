//! Synthetic workloads shared by the criterion benchmarks.

use rext_core::corpus::{assemble_corpus, parse_abstracts, parse_entities, parse_relations};
use rext_core::model::{HeadKind, ModelConfig};
use rext_core::preprocess::{preprocess_corpus, RelationExample, SplitterConfig};
use rext_core::tokenizer::{build_vocab, encode, EncodedExample, Vocabulary};
use rext_core::Corpus;

/// A corpus of `n_docs` synthetic abstracts, each with one chemical and two
/// protein mentions and one gold relation.
pub fn synthetic_corpus(n_docs: usize) -> Corpus {
    let mut abstracts = String::new();
    let mut entities = String::new();
    let mut relations = String::new();
    for i in 0..n_docs {
        let pmid = format!("{:08}", 10_000_000 + i);
        let title = "Kinase binding study.";
        let body = "Drugomycin inhibited alpha kinase in cells. It spared beta kinase in vivo. Binding was strong.";
        abstracts.push_str(&format!("{pmid}\t{title}\t{body}\n"));
        let flat = format!("{title} {body}");
        let spans = [
            ("T1", "CHEMICAL", "Drugomycin"),
            ("T2", "GENE", "alpha kinase"),
            ("T3", "GENE-Y", "beta kinase"),
        ];
        for (eid, kind, surface) in spans {
            let start = flat.find(surface).unwrap();
            entities.push_str(&format!(
                "{pmid}\t{eid}\t{kind}\t{start}\t{}\t{surface}\n",
                start + surface.len()
            ));
        }
        relations.push_str(&format!("{pmid}\tINHIBITOR\tArg1:T1\tArg2:T2\n"));
    }
    assemble_corpus(
        parse_abstracts(&abstracts).unwrap(),
        parse_entities(&entities).unwrap(),
        parse_relations(&relations).unwrap(),
    )
    .unwrap()
}

pub fn preprocessed(n_docs: usize) -> Vec<RelationExample> {
    preprocess_corpus(&synthetic_corpus(n_docs), &SplitterConfig::default()).unwrap().0
}

pub fn encoded_workload(n_docs: usize, max_len: usize) -> (Vec<EncodedExample>, Vocabulary) {
    let examples = preprocessed(n_docs);
    let vocab = build_vocab(&examples, 1).unwrap();
    let encoded = examples
        .iter()
        .filter_map(|ex| encode(ex, &vocab, max_len).unwrap())
        .collect();
    (encoded, vocab)
}

/// Small encoder configuration used by the model benchmarks.
pub fn bench_model_config(vocab_size: usize) -> ModelConfig {
    ModelConfig {
        hidden: 64,
        layers: 4,
        heads: 4,
        ff_dim: 128,
        max_positions: 64,
        head_dim: 32,
        dropout: 0.0,
        head: HeadKind::RBertCnn,
        ..ModelConfig::new(vocab_size)
    }
}

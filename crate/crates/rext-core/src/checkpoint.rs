//! Self-contained checkpoints: a text manifest (version tag, config and
//! training metadata as `key=value` lines, label table, vocabulary, and one
//! line per named tensor with shape, dtype and byte offset) followed by the
//! raw little-endian IEEE-754 payload. Loading reproduces every parameter
//! bit-exactly; prediction needs no other artifacts.

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::corpus::RelationLabel;
use crate::model::{HeadKind, ModelConfig, Params};
use crate::tokenizer::Vocabulary;

pub const FORMAT_TAG: &str = "REXT1";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainMeta {
    pub epochs_trained: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: Params,
    pub vocab: Vocabulary,
    pub labels: Vec<RelationLabel>,
    pub meta: TrainMeta,
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported checkpoint format tag {found:?}")]
    FormatVersionMismatch { found: String },
    #[error("tensor {name}: manifest {found:?} disagrees with {expected:?}")]
    ShapeMismatch { name: String, expected: String, found: String },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let bytes = self.to_bytes();
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
        let bytes = fs::read(path)?;
        Checkpoint::from_bytes(&bytes)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let cfg = &self.config;
        let mut manifest = String::new();
        manifest.push_str(FORMAT_TAG);
        manifest.push('\n');

        let kv = |m: &mut String, k: &str, v: String| {
            m.push_str(k);
            m.push('=');
            m.push_str(&v);
            m.push('\n');
        };
        kv(&mut manifest, "config.vocab_size", cfg.vocab_size.to_string());
        kv(&mut manifest, "config.hidden", cfg.hidden.to_string());
        kv(&mut manifest, "config.layers", cfg.layers.to_string());
        kv(&mut manifest, "config.heads", cfg.heads.to_string());
        kv(&mut manifest, "config.ff_dim", cfg.ff_dim.to_string());
        kv(&mut manifest, "config.max_positions", cfg.max_positions.to_string());
        kv(
            &mut manifest,
            "config.cnn_window_sizes",
            cfg.cnn_window_sizes.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(","),
        );
        kv(&mut manifest, "config.cnn_filters_per_size", cfg.cnn_filters_per_size.to_string());
        kv(&mut manifest, "config.head_dim", cfg.head_dim.to_string());
        kv(&mut manifest, "config.n_classes", cfg.n_classes.to_string());
        kv(&mut manifest, "config.dropout", format!("{}", cfg.dropout));
        kv(&mut manifest, "config.include_cls_path", cfg.include_cls_path.to_string());
        kv(&mut manifest, "config.head", cfg.head.as_str().to_string());
        kv(&mut manifest, "meta.epochs_trained", self.meta.epochs_trained.to_string());
        kv(&mut manifest, "meta.seed", self.meta.seed.to_string());
        kv(&mut manifest, "meta.learning_rate", format!("{}", self.meta.learning_rate));
        kv(&mut manifest, "meta.batch_size", self.meta.batch_size.to_string());
        kv(&mut manifest, "meta.max_len", self.meta.max_len.to_string());

        kv(&mut manifest, "labels", self.labels.len().to_string());
        for (i, l) in self.labels.iter().enumerate() {
            kv(&mut manifest, &i.to_string(), l.as_str().to_string());
        }

        kv(&mut manifest, "vocab", self.vocab.len().to_string());
        manifest.push_str(&self.vocab.to_file_string());

        let tensors = self.params.tensors();
        kv(&mut manifest, "tensors", tensors.len().to_string());
        let mut offset = 0usize;
        for t in &tensors {
            let shape = t.shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x");
            manifest.push_str(&format!("{} f64 {} {}\n", t.name, shape, offset));
            offset += t.data.len() * 8;
        }
        kv(&mut manifest, "payload", offset.to_string());

        let mut bytes = manifest.into_bytes();
        bytes.reserve(offset);
        for t in &tensors {
            for v in t.data {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        bytes
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
        let mut cursor = LineCursor { bytes, pos: 0 };
        let corrupt = |m: &str| CheckpointError::Corrupt(m.to_string());

        let tag = cursor.line()?;
        if tag != FORMAT_TAG {
            return Err(CheckpointError::FormatVersionMismatch { found: tag.to_string() });
        }

        let mut kv = std::collections::HashMap::new();
        loop {
            let line = cursor.line()?;
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| corrupt(&format!("expected key=value, got {line:?}")))?;
            kv.insert(k.to_string(), v.to_string());
            if k == "labels" {
                break;
            }
        }

        let get = |k: &str| -> Result<&String, CheckpointError> {
            kv.get(k).ok_or_else(|| CheckpointError::Corrupt(format!("missing key {k}")))
        };
        let parse_usize = |k: &str| -> Result<usize, CheckpointError> {
            get(k)?.parse().map_err(|_| CheckpointError::Corrupt(format!("bad integer for {k}")))
        };
        let parse_f64 = |k: &str| -> Result<f64, CheckpointError> {
            get(k)?.parse().map_err(|_| CheckpointError::Corrupt(format!("bad float for {k}")))
        };

        let config = ModelConfig {
            vocab_size: parse_usize("config.vocab_size")?,
            hidden: parse_usize("config.hidden")?,
            layers: parse_usize("config.layers")?,
            heads: parse_usize("config.heads")?,
            ff_dim: parse_usize("config.ff_dim")?,
            max_positions: parse_usize("config.max_positions")?,
            cnn_window_sizes: get("config.cnn_window_sizes")?
                .split(',')
                .map(|s| s.parse().map_err(|_| corrupt("bad cnn window size")))
                .collect::<Result<Vec<usize>, _>>()?,
            cnn_filters_per_size: parse_usize("config.cnn_filters_per_size")?,
            head_dim: parse_usize("config.head_dim")?,
            n_classes: parse_usize("config.n_classes")?,
            dropout: parse_f64("config.dropout")?,
            include_cls_path: get("config.include_cls_path")? == "true",
            head: HeadKind::parse(get("config.head")?)
                .ok_or_else(|| corrupt("unknown head kind"))?,
        };
        config.validate().map_err(|e| corrupt(&e.to_string()))?;
        let meta = TrainMeta {
            epochs_trained: parse_usize("meta.epochs_trained")?,
            seed: get("meta.seed")?.parse().map_err(|_| corrupt("bad seed"))?,
            learning_rate: parse_f64("meta.learning_rate")?,
            batch_size: parse_usize("meta.batch_size")?,
            max_len: parse_usize("meta.max_len")?,
        };

        let n_labels: usize = parse_usize("labels")?;
        let mut labels = Vec::with_capacity(n_labels);
        for i in 0..n_labels {
            let line = cursor.line()?;
            let (k, v) = line.split_once('=').ok_or_else(|| corrupt("bad label line"))?;
            if k != i.to_string() {
                return Err(corrupt(&format!("label ids out of order at {k}")));
            }
            labels.push(
                RelationLabel::parse(v).ok_or_else(|| corrupt(&format!("unknown label {v:?}")))?,
            );
        }
        if labels.len() != config.n_classes {
            return Err(corrupt("label table does not match n_classes"));
        }

        let vocab_line = cursor.line()?;
        let n_vocab: usize = vocab_line
            .strip_prefix("vocab=")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| corrupt("bad vocab header"))?;
        let mut vocab_text = String::new();
        for _ in 0..n_vocab {
            vocab_text.push_str(cursor.line()?);
            vocab_text.push('\n');
        }
        let vocab = Vocabulary::from_file_string(&vocab_text)
            .map_err(|e| corrupt(&format!("bad vocabulary: {e}")))?;
        if vocab.len() != config.vocab_size {
            return Err(CheckpointError::ShapeMismatch {
                name: "vocab".into(),
                expected: config.vocab_size.to_string(),
                found: vocab.len().to_string(),
            });
        }

        let tensors_line = cursor.line()?;
        let n_tensors: usize = tensors_line
            .strip_prefix("tensors=")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| corrupt("bad tensors header"))?;

        struct ManifestTensor {
            name: String,
            shape: Vec<usize>,
            offset: usize,
        }
        let mut entries = Vec::with_capacity(n_tensors);
        for _ in 0..n_tensors {
            let line = cursor.line()?;
            let parts: Vec<&str> = line.split(' ').collect();
            if parts.len() != 4 || parts[1] != "f64" {
                return Err(corrupt(&format!("bad tensor line {line:?}")));
            }
            let shape: Vec<usize> = parts[2]
                .split('x')
                .map(|d| d.parse().map_err(|_| corrupt("bad shape")))
                .collect::<Result<_, _>>()?;
            let offset = parts[3].parse().map_err(|_| corrupt("bad offset"))?;
            entries.push(ManifestTensor { name: parts[0].to_string(), shape, offset });
        }

        let payload_line = cursor.line()?;
        let payload_len: usize = payload_line
            .strip_prefix("payload=")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| corrupt("bad payload header"))?;
        let payload = &bytes[cursor.pos..];
        if payload.len() != payload_len {
            return Err(CheckpointError::Io(std::io::Error::new(
                std::io::ErrorKind::UnexpectedEof,
                format!("payload is {} bytes, manifest declares {}", payload.len(), payload_len),
            )));
        }

        let mut params = Params::zeros(&config);
        let mut expected_offset = 0usize;
        {
            let mut slots = params.tensors_mut();
            if slots.len() != entries.len() {
                return Err(corrupt(&format!(
                    "manifest lists {} tensors, config implies {}",
                    entries.len(),
                    slots.len()
                )));
            }
            for (slot, entry) in slots.iter_mut().zip(entries.iter()) {
                if slot.name != entry.name || slot.shape != entry.shape {
                    return Err(CheckpointError::ShapeMismatch {
                        name: entry.name.clone(),
                        expected: format!("{} {:?}", slot.name, slot.shape),
                        found: format!("{} {:?}", entry.name, entry.shape),
                    });
                }
                if entry.offset != expected_offset {
                    return Err(CheckpointError::ShapeMismatch {
                        name: entry.name.clone(),
                        expected: expected_offset.to_string(),
                        found: entry.offset.to_string(),
                    });
                }
                let n_bytes = slot.data.len() * 8;
                for (i, v) in slot.data.iter_mut().enumerate() {
                    let at = entry.offset + i * 8;
                    *v = f64::from_le_bytes(payload[at..at + 8].try_into().unwrap());
                }
                expected_offset += n_bytes;
            }
        }
        if expected_offset != payload_len {
            return Err(CheckpointError::ShapeMismatch {
                name: "payload".into(),
                expected: expected_offset.to_string(),
                found: payload_len.to_string(),
            });
        }

        Ok(Checkpoint { config, params, vocab, labels, meta })
    }
}

struct LineCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> LineCursor<'a> {
    fn line(&mut self) -> Result<&'a str, CheckpointError> {
        let rest = &self.bytes[self.pos..];
        let end = rest.iter().position(|b| *b == b'\n').ok_or_else(|| {
            CheckpointError::Io(std::io::Error::new(
                std::io::ErrorKind::UnexpectedEof,
                "truncated manifest",
            ))
        })?;
        self.pos += end + 1;
        std::str::from_utf8(&rest[..end])
            .map_err(|_| CheckpointError::Corrupt("manifest is not UTF-8".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;
    use crate::preprocess::RelationExample;
    use crate::tokenizer::build_vocab;
    use crate::train::label_table;
    use crate::Span;

    fn sample_checkpoint() -> Checkpoint {
        let ex = RelationExample {
            pmid: "1".into(),
            chem_eid: "T1".into(),
            prot_eid: "T2".into(),
            tagged_text: "$a$ binds #b# strongly today".into(),
            label: RelationLabel::Other,
            chem_char_span: Span::new(0, 3),
            prot_char_span: Span::new(10, 13),
        };
        let vocab = build_vocab(std::slice::from_ref(&ex), 1).unwrap();
        let config = ModelConfig {
            hidden: 16,
            layers: 4,
            heads: 2,
            ff_dim: 32,
            max_positions: 16,
            head_dim: 8,
            dropout: 0.25,
            ..ModelConfig::new(vocab.len())
        };
        let params = init_params(&config, 17).unwrap();
        Checkpoint {
            config,
            params,
            vocab,
            labels: label_table(),
            meta: TrainMeta {
                epochs_trained: 7,
                seed: 17,
                learning_rate: 3e-5,
                batch_size: 32,
                max_len: 512,
            },
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ckpt = sample_checkpoint();
        let back = Checkpoint::from_bytes(&ckpt.to_bytes()).unwrap();
        assert_eq!(back, ckpt);
    }

    #[test]
    fn save_load_via_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.rext");
        let ckpt = sample_checkpoint();
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.params, ckpt.params);
        assert_eq!(back.vocab, ckpt.vocab);
        assert_eq!(back.labels, ckpt.labels);
        assert_eq!(back.meta, ckpt.meta);
    }

    #[test]
    fn wrong_tag_is_version_mismatch() {
        let mut bytes = sample_checkpoint().to_bytes();
        bytes[4] = b'9'; // REXT9
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(CheckpointError::FormatVersionMismatch { .. })
        ));
    }

    #[test]
    fn truncated_file_never_yields_partial_checkpoint() {
        let bytes = sample_checkpoint().to_bytes();
        for cut in [10, bytes.len() / 2, bytes.len() - 1] {
            let err = Checkpoint::from_bytes(&bytes[..cut]).unwrap_err();
            assert!(
                matches!(err, CheckpointError::Io(_) | CheckpointError::Corrupt(_)),
                "cut at {cut}: unexpected {err:?}"
            );
        }
    }

    #[test]
    fn edited_shape_is_shape_mismatch() {
        let bytes = sample_checkpoint().to_bytes();
        // split manifest from binary payload, edit only the manifest text
        let needle = b"tok_emb f64 ";
        let at = bytes
            .windows(needle.len())
            .position(|w| w == needle)
            .expect("manifest contains tok_emb");
        let mut edited = bytes[..at + needle.len()].to_vec();
        edited.extend_from_slice(b"9x");
        edited.extend_from_slice(&bytes[at + needle.len()..]);
        let err = Checkpoint::from_bytes(&edited).unwrap_err();
        assert!(matches!(err, CheckpointError::ShapeMismatch { .. }), "{err:?}");
    }
}

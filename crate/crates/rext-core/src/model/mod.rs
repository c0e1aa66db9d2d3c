//! The numeric core: a from-scratch transformer encoder plus two
//! classification heads, with hand-written reverse-mode gradients.
//!
//! * [`encode_forward`] runs the encoder and returns all per-layer hidden
//!   states (the entity-aware head consumes the last four).
//! * [`head_model1`] is the CLS-only baseline: two fully connected layers
//!   over the final hidden state of position 0.
//! * [`head_rbert_cnn`] stacks the last four layers along the sequence
//!   axis, applies banks of convolutional filters with ReLU and max-pooling
//!   over time, averages the final hidden states over each entity token
//!   span, optionally adds a CLS path, and fuses everything through a final
//!   dense layer.
//! * [`loss_and_grad`] backpropagates the mean cross-entropy loss of a
//!   batch and returns gradients shaped exactly like [`Params`].
//! * [`grad_check`] compares those gradients against central finite
//!   differences on a sampled subset of every named tensor.
//!
//! All reference-path arithmetic is `f64`; forward passes in eval mode are
//! bitwise deterministic.

mod backward;
mod forward;
mod gradcheck;
mod params;

pub use backward::{loss_and_grad, LossAndGrad};
pub use forward::{
    encode_forward, forward, head_model1, head_rbert_cnn, loss, softmax, stack_last4, ForwardTrace,
    HiddenStates,
};
pub use gradcheck::grad_check;
pub use params::{init_params, ConvBank, HeadParams, LayerNormParams, LayerParams, ParamKind, Params, TensorEntry, TensorEntryMut};

use thiserror::Error;

/// Which classification head sits on top of the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    /// CLS vector through two fully connected layers.
    Model1,
    /// Last-4-layer CNN + entity averages (+ optional CLS path) fused by a
    /// final dense layer.
    RBertCnn,
}

impl HeadKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            HeadKind::Model1 => "model1",
            HeadKind::RBertCnn => "rbert-cnn",
        }
    }

    pub fn parse(s: &str) -> Option<HeadKind> {
        match s {
            "model1" => Some(HeadKind::Model1),
            "rbert-cnn" => Some(HeadKind::RBertCnn),
            _ => None,
        }
    }
}

/// Architecture hyperparameters. `n_classes` is 10 relation types plus
/// `Other`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub max_positions: usize,
    pub cnn_window_sizes: Vec<usize>,
    pub cnn_filters_per_size: usize,
    pub head_dim: usize,
    pub n_classes: usize,
    pub dropout: f64,
    pub include_cls_path: bool,
    pub head: HeadKind,
}

impl ModelConfig {
    /// Desk-scale defaults; the dropout rate and 512-position window follow
    /// the training recipe, the CNN bank is 16 filters each of widths 3, 4
    /// and 5.
    pub fn new(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            hidden: 64,
            layers: 4,
            heads: 4,
            ff_dim: 128,
            max_positions: 512,
            cnn_window_sizes: vec![3, 4, 5],
            cnn_filters_per_size: 16,
            head_dim: 32,
            n_classes: 11,
            dropout: 0.5,
            include_cls_path: true,
            head: HeadKind::RBertCnn,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: String| Err(ModelError::BadConfig(m));
        if self.layers < 4 {
            return fail(format!("layers must be >= 4, got {}", self.layers));
        }
        if self.hidden == 0 || self.heads == 0 || self.hidden % self.heads != 0 {
            return fail(format!(
                "hidden ({}) must be a positive multiple of heads ({})",
                self.hidden, self.heads
            ));
        }
        if self.ff_dim == 0 || self.head_dim == 0 || self.max_positions == 0 {
            return fail("ff_dim, head_dim and max_positions must be positive".into());
        }
        if self.cnn_window_sizes.is_empty() || self.cnn_window_sizes.iter().any(|k| *k == 0) {
            return fail("cnn window sizes must be positive".into());
        }
        if self.cnn_filters_per_size == 0 {
            return fail("cnn_filters_per_size must be positive".into());
        }
        if self.n_classes < 2 {
            return fail("n_classes must be >= 2".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if self.vocab_size < 4 {
            return fail("vocab_size must cover the reserved tokens".into());
        }
        Ok(())
    }

    /// Total pooled CNN features (filters per size × number of sizes).
    pub fn total_filters(&self) -> usize {
        self.cnn_window_sizes.len() * self.cnn_filters_per_size
    }

    /// Width of the fused vector entering the final dense layer.
    pub fn fused_dim(&self) -> usize {
        match self.head {
            HeadKind::Model1 => self.head_dim,
            HeadKind::RBertCnn => {
                let paths = 3 + usize::from(self.include_cls_path);
                paths * self.head_dim
            }
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    BadConfig(String),
    #[error("token id {id} out of range for vocabulary of {vocab_size}")]
    IdOutOfRange { id: u32, vocab_size: usize },
    #[error("sequence length {len} exceeds max positions {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("sequence is empty or entirely padding")]
    EmptySequence,
    #[error("token span {start}..{end} out of range for sequence length {len}")]
    SpanOutOfRange { start: usize, end: usize, len: usize },
    #[error("head needs at least 4 encoder layers, got {0}")]
    InsufficientLayers(usize),
    #[error("entity span covers a padding position")]
    PaddingInSpan,
    #[error("finite-difference step must be positive, got {0}")]
    BadEps(f64),
    #[error("batch is empty")]
    EmptyBatch,
}

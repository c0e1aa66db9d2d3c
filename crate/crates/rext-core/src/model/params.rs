//! Named parameter tensors. Everything that optimizers, gradient clipping,
//! checkpoints and the gradient checker need is exposed through the
//! [`Params::tensors`] / [`Params::tensors_mut`] enumeration, which always
//! yields tensors in the same canonical order.

use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{HeadKind, ModelConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub gain: Array1<f64>,
    pub bias: Array1<f64>,
}

impl LayerNormParams {
    fn zeros(dim: usize) -> Self {
        LayerNormParams { gain: Array1::zeros(dim), bias: Array1::zeros(dim) }
    }
}

/// One encoder layer: attention projections (row convention, `Q = X·W_q`),
/// the two feed-forward affines, and the two layer norms.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub w_q: Array2<f64>,
    pub b_q: Array1<f64>,
    pub w_k: Array2<f64>,
    pub b_k: Array1<f64>,
    pub w_v: Array2<f64>,
    pub b_v: Array1<f64>,
    pub w_o: Array2<f64>,
    pub b_o: Array1<f64>,
    pub ln1: LayerNormParams,
    pub w_ff1: Array2<f64>,
    pub b_ff1: Array1<f64>,
    pub w_ff2: Array2<f64>,
    pub b_ff2: Array1<f64>,
    pub ln2: LayerNormParams,
}

/// Convolution filters of one window size over the stacked hidden states:
/// `weight[f]` is a `width × hidden` kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBank {
    pub width: usize,
    pub weight: Array3<f64>,
    pub bias: Array1<f64>,
}

/// Head parameters; the final dense layer is `logits = w_out · z + b_out`
/// (column convention).
#[derive(Debug, Clone, PartialEq)]
pub enum HeadParams {
    Model1 {
        w_cls: Array2<f64>,
        b_cls: Array1<f64>,
        w_out: Array2<f64>,
        b_out: Array1<f64>,
    },
    RBertCnn {
        conv: Vec<ConvBank>,
        w_cnn: Array2<f64>,
        b_cnn: Array1<f64>,
        w_chem: Array2<f64>,
        b_chem: Array1<f64>,
        w_prot: Array2<f64>,
        b_prot: Array1<f64>,
        /// Present only when the CLS path is included.
        cls: Option<(Array2<f64>, Array1<f64>)>,
        w_out: Array2<f64>,
        b_out: Array1<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub tok_emb: Array2<f64>,
    pub pos_emb: Array2<f64>,
    pub emb_ln: LayerNormParams,
    pub layers: Vec<LayerParams>,
    pub head: HeadParams,
}

/// How a tensor should be initialized and regularized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight { fan_in: usize },
    Bias,
    Gain,
}

pub struct TensorEntry<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
    pub data: &'a [f64],
}

pub struct TensorEntryMut<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
    pub data: &'a mut [f64],
}

impl Params {
    /// Build zero-valued tensors with the shapes implied by `cfg` (used for
    /// gradients and optimizer state).
    pub fn zeros(cfg: &ModelConfig) -> Params {
        let h = cfg.hidden;
        let head = match cfg.head {
            HeadKind::Model1 => HeadParams::Model1 {
                w_cls: Array2::zeros((cfg.head_dim, h)),
                b_cls: Array1::zeros(cfg.head_dim),
                w_out: Array2::zeros((cfg.n_classes, cfg.fused_dim())),
                b_out: Array1::zeros(cfg.n_classes),
            },
            HeadKind::RBertCnn => HeadParams::RBertCnn {
                conv: cfg
                    .cnn_window_sizes
                    .iter()
                    .map(|&k| ConvBank {
                        width: k,
                        weight: Array3::zeros((cfg.cnn_filters_per_size, k, h)),
                        bias: Array1::zeros(cfg.cnn_filters_per_size),
                    })
                    .collect(),
                w_cnn: Array2::zeros((cfg.head_dim, cfg.total_filters())),
                b_cnn: Array1::zeros(cfg.head_dim),
                w_chem: Array2::zeros((cfg.head_dim, h)),
                b_chem: Array1::zeros(cfg.head_dim),
                w_prot: Array2::zeros((cfg.head_dim, h)),
                b_prot: Array1::zeros(cfg.head_dim),
                cls: cfg
                    .include_cls_path
                    .then(|| (Array2::zeros((cfg.head_dim, h)), Array1::zeros(cfg.head_dim))),
                w_out: Array2::zeros((cfg.n_classes, cfg.fused_dim())),
                b_out: Array1::zeros(cfg.n_classes),
            },
        };
        Params {
            tok_emb: Array2::zeros((cfg.vocab_size, h)),
            pos_emb: Array2::zeros((cfg.max_positions, h)),
            emb_ln: LayerNormParams::zeros(h),
            layers: (0..cfg.layers)
                .map(|_| LayerParams {
                    w_q: Array2::zeros((h, h)),
                    b_q: Array1::zeros(h),
                    w_k: Array2::zeros((h, h)),
                    b_k: Array1::zeros(h),
                    w_v: Array2::zeros((h, h)),
                    b_v: Array1::zeros(h),
                    w_o: Array2::zeros((h, h)),
                    b_o: Array1::zeros(h),
                    ln1: LayerNormParams::zeros(h),
                    w_ff1: Array2::zeros((h, cfg.ff_dim)),
                    b_ff1: Array1::zeros(cfg.ff_dim),
                    w_ff2: Array2::zeros((cfg.ff_dim, h)),
                    b_ff2: Array1::zeros(h),
                    ln2: LayerNormParams::zeros(h),
                })
                .collect(),
            head,
        }
    }

    pub fn tensors(&self) -> Vec<TensorEntry<'_>> {
        collect_entries(self)
    }

    pub fn tensors_mut(&mut self) -> Vec<TensorEntryMut<'_>> {
        collect_entries_mut(self)
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }
}

fn collect_entries(p: &Params) -> Vec<TensorEntry<'_>> {
    let hidden = p.tok_emb.shape()[1];
    let mut out: Vec<TensorEntry<'_>> = Vec::new();

    macro_rules! push {
        ($name:expr, $kind:expr, $arr:expr) => {
            out.push(TensorEntry {
                name: $name.to_string(),
                shape: $arr.shape().to_vec(),
                kind: $kind,
                data: $arr.as_slice().expect("standard layout"),
            });
        };
    }

    push!("tok_emb", ParamKind::Weight { fan_in: hidden }, p.tok_emb);
    push!("pos_emb", ParamKind::Weight { fan_in: hidden }, p.pos_emb);
    push!("emb_ln_gain", ParamKind::Gain, p.emb_ln.gain);
    push!("emb_ln_bias", ParamKind::Bias, p.emb_ln.bias);
    for (l, layer) in p.layers.iter().enumerate() {
        let ff_in = layer.w_ff1.shape()[0];
        let ff_mid = layer.w_ff2.shape()[0];
        push!(format!("layer{l}.w_q"), ParamKind::Weight { fan_in: hidden }, layer.w_q);
        push!(format!("layer{l}.b_q"), ParamKind::Bias, layer.b_q);
        push!(format!("layer{l}.w_k"), ParamKind::Weight { fan_in: hidden }, layer.w_k);
        push!(format!("layer{l}.b_k"), ParamKind::Bias, layer.b_k);
        push!(format!("layer{l}.w_v"), ParamKind::Weight { fan_in: hidden }, layer.w_v);
        push!(format!("layer{l}.b_v"), ParamKind::Bias, layer.b_v);
        push!(format!("layer{l}.w_o"), ParamKind::Weight { fan_in: hidden }, layer.w_o);
        push!(format!("layer{l}.b_o"), ParamKind::Bias, layer.b_o);
        push!(format!("layer{l}.ln1_gain"), ParamKind::Gain, layer.ln1.gain);
        push!(format!("layer{l}.ln1_bias"), ParamKind::Bias, layer.ln1.bias);
        push!(format!("layer{l}.w_ff1"), ParamKind::Weight { fan_in: ff_in }, layer.w_ff1);
        push!(format!("layer{l}.b_ff1"), ParamKind::Bias, layer.b_ff1);
        push!(format!("layer{l}.w_ff2"), ParamKind::Weight { fan_in: ff_mid }, layer.w_ff2);
        push!(format!("layer{l}.b_ff2"), ParamKind::Bias, layer.b_ff2);
        push!(format!("layer{l}.ln2_gain"), ParamKind::Gain, layer.ln2.gain);
        push!(format!("layer{l}.ln2_bias"), ParamKind::Bias, layer.ln2.bias);
    }
    match &p.head {
        HeadParams::Model1 { w_cls, b_cls, w_out, b_out } => {
            push!("w_cls", ParamKind::Weight { fan_in: w_cls.shape()[1] }, w_cls);
            push!("b_cls", ParamKind::Bias, b_cls);
            push!("w_out", ParamKind::Weight { fan_in: w_out.shape()[1] }, w_out);
            push!("b_out", ParamKind::Bias, b_out);
        }
        HeadParams::RBertCnn { conv, w_cnn, b_cnn, w_chem, b_chem, w_prot, b_prot, cls, w_out, b_out } => {
            for bank in conv {
                let k = bank.width;
                push!(format!("conv_w{k}"), ParamKind::Weight { fan_in: k * bank.weight.shape()[2] }, bank.weight);
                push!(format!("conv_b{k}"), ParamKind::Bias, bank.bias);
            }
            push!("w_cnn", ParamKind::Weight { fan_in: w_cnn.shape()[1] }, w_cnn);
            push!("b_cnn", ParamKind::Bias, b_cnn);
            push!("w_chem", ParamKind::Weight { fan_in: hidden }, w_chem);
            push!("b_chem", ParamKind::Bias, b_chem);
            push!("w_prot", ParamKind::Weight { fan_in: hidden }, w_prot);
            push!("b_prot", ParamKind::Bias, b_prot);
            if let Some((w_cls, b_cls)) = cls {
                push!("w_cls", ParamKind::Weight { fan_in: hidden }, w_cls);
                push!("b_cls", ParamKind::Bias, b_cls);
            }
            push!("w_out", ParamKind::Weight { fan_in: w_out.shape()[1] }, w_out);
            push!("b_out", ParamKind::Bias, b_out);
        }
    }
    out
}

fn collect_entries_mut(p: &mut Params) -> Vec<TensorEntryMut<'_>> {
    let hidden = p.tok_emb.shape()[1];
    let mut out: Vec<TensorEntryMut<'_>> = Vec::new();

    macro_rules! push {
        ($name:expr, $kind:expr, $arr:expr) => {{
            let shape = $arr.shape().to_vec();
            out.push(TensorEntryMut {
                name: $name.to_string(),
                shape,
                kind: $kind,
                data: $arr.as_slice_mut().expect("standard layout"),
            });
        }};
    }

    push!("tok_emb", ParamKind::Weight { fan_in: hidden }, p.tok_emb);
    push!("pos_emb", ParamKind::Weight { fan_in: hidden }, p.pos_emb);
    push!("emb_ln_gain", ParamKind::Gain, p.emb_ln.gain);
    push!("emb_ln_bias", ParamKind::Bias, p.emb_ln.bias);
    for (l, layer) in p.layers.iter_mut().enumerate() {
        let ff_in = layer.w_ff1.shape()[0];
        let ff_mid = layer.w_ff2.shape()[0];
        push!(format!("layer{l}.w_q"), ParamKind::Weight { fan_in: hidden }, layer.w_q);
        push!(format!("layer{l}.b_q"), ParamKind::Bias, layer.b_q);
        push!(format!("layer{l}.w_k"), ParamKind::Weight { fan_in: hidden }, layer.w_k);
        push!(format!("layer{l}.b_k"), ParamKind::Bias, layer.b_k);
        push!(format!("layer{l}.w_v"), ParamKind::Weight { fan_in: hidden }, layer.w_v);
        push!(format!("layer{l}.b_v"), ParamKind::Bias, layer.b_v);
        push!(format!("layer{l}.w_o"), ParamKind::Weight { fan_in: hidden }, layer.w_o);
        push!(format!("layer{l}.b_o"), ParamKind::Bias, layer.b_o);
        push!(format!("layer{l}.ln1_gain"), ParamKind::Gain, layer.ln1.gain);
        push!(format!("layer{l}.ln1_bias"), ParamKind::Bias, layer.ln1.bias);
        push!(format!("layer{l}.w_ff1"), ParamKind::Weight { fan_in: ff_in }, layer.w_ff1);
        push!(format!("layer{l}.b_ff1"), ParamKind::Bias, layer.b_ff1);
        push!(format!("layer{l}.w_ff2"), ParamKind::Weight { fan_in: ff_mid }, layer.w_ff2);
        push!(format!("layer{l}.b_ff2"), ParamKind::Bias, layer.b_ff2);
        push!(format!("layer{l}.ln2_gain"), ParamKind::Gain, layer.ln2.gain);
        push!(format!("layer{l}.ln2_bias"), ParamKind::Bias, layer.ln2.bias);
    }
    match &mut p.head {
        HeadParams::Model1 { w_cls, b_cls, w_out, b_out } => {
            let cls_in = w_cls.shape()[1];
            let out_in = w_out.shape()[1];
            push!("w_cls", ParamKind::Weight { fan_in: cls_in }, w_cls);
            push!("b_cls", ParamKind::Bias, b_cls);
            push!("w_out", ParamKind::Weight { fan_in: out_in }, w_out);
            push!("b_out", ParamKind::Bias, b_out);
        }
        HeadParams::RBertCnn { conv, w_cnn, b_cnn, w_chem, b_chem, w_prot, b_prot, cls, w_out, b_out } => {
            for bank in conv.iter_mut() {
                let k = bank.width;
                let fan_in = k * bank.weight.shape()[2];
                push!(format!("conv_w{k}"), ParamKind::Weight { fan_in }, bank.weight);
                push!(format!("conv_b{k}"), ParamKind::Bias, bank.bias);
            }
            let cnn_in = w_cnn.shape()[1];
            push!("w_cnn", ParamKind::Weight { fan_in: cnn_in }, w_cnn);
            push!("b_cnn", ParamKind::Bias, b_cnn);
            push!("w_chem", ParamKind::Weight { fan_in: hidden }, w_chem);
            push!("b_chem", ParamKind::Bias, b_chem);
            push!("w_prot", ParamKind::Weight { fan_in: hidden }, w_prot);
            push!("b_prot", ParamKind::Bias, b_prot);
            if let Some((w_cls, b_cls)) = cls {
                push!("w_cls", ParamKind::Weight { fan_in: hidden }, w_cls);
                push!("b_cls", ParamKind::Bias, b_cls);
            }
            let out_in = w_out.shape()[1];
            push!("w_out", ParamKind::Weight { fan_in: out_in }, w_out);
            push!("b_out", ParamKind::Bias, b_out);
        }
    }
    out
}

/// Deterministic initialization: affine weights uniform in
/// `±1/sqrt(fan_in)`, biases zero, normalization gains one.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<Params, super::ModelError> {
    cfg.validate()?;
    let mut params = Params::zeros(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for entry in params.tensors_mut() {
        match entry.kind {
            ParamKind::Weight { fan_in } => {
                let scale = 1.0 / (fan_in as f64).sqrt();
                for v in entry.data.iter_mut() {
                    *v = rng.gen::<f64>() * 2.0 * scale - scale;
                }
            }
            ParamKind::Bias => {}
            ParamKind::Gain => entry.data.fill(1.0),
        }
    }
    Ok(params)
}

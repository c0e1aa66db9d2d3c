//! Forward passes. The internal trace structs cache every intermediate the
//! backward pass needs; the public surface returns hidden states and
//! logits/probabilities only.

use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{HeadParams, LayerNormParams};
use super::{HeadKind, ModelConfig, ModelError, Params};
use crate::tokenizer::{EncodedExample, PAD_ID};
use crate::Span;

const LN_EPS: f64 = 1e-12;

/// Per-layer activations: `layers[0]` is the embedding output, `layers[l]`
/// the output of encoder layer `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStates {
    pub layers: Vec<Array2<f64>>,
    /// Which positions are padding (masked out of attention columns).
    pub pad: Vec<bool>,
}

impl HiddenStates {
    pub fn seq_len(&self) -> usize {
        self.pad.len()
    }

    pub fn last(&self) -> &Array2<f64> {
        self.layers.last().expect("at least the embedding layer")
    }
}

/// Logits and softmax probabilities of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub logits: Array1<f64>,
    pub probs: Array1<f64>,
}

pub(crate) struct LnTrace {
    pub xhat: Array2<f64>,
    pub inv_std: Array1<f64>,
}

pub(crate) struct LayerTrace {
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    /// Post-softmax attention per head, each `T×T`.
    pub attn: Vec<Array2<f64>>,
    /// Concatenated head contexts before the output projection.
    pub ctx: Array2<f64>,
    pub ln1: LnTrace,
    /// Output of the first layer norm (input to the feed-forward).
    pub h_mid: Array2<f64>,
    /// Feed-forward pre-activation.
    pub f1: Array2<f64>,
    /// Feed-forward post-GELU.
    pub g: Array2<f64>,
    pub ln2: LnTrace,
}

pub(crate) struct EncoderTrace {
    pub states: HiddenStates,
    pub emb_ln: LnTrace,
    pub layers: Vec<LayerTrace>,
}

/// Numerically stable softmax; `-inf` entries get probability zero.
pub fn softmax(x: &Array1<f64>) -> Array1<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Array1<f64> = x.mapv(|v| (v - m).exp());
    let sum = exp.sum();
    exp / sum
}

fn softmax_rows_in_place(scores: &mut Array2<f64>) {
    for mut row in scores.rows_mut() {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const A: f64 = 0.044715;
    0.5 * x * (1.0 + (C * (x + A * x * x * x)).tanh())
}

pub(crate) fn gelu_prime(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    const A: f64 = 0.044715;
    let u = C * (x + A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * A * x * x)
}

/// Row-wise layer norm with mean 0 / variance 1 before gain and bias.
pub(crate) fn layer_norm_fwd(x: &Array2<f64>, p: &LayerNormParams) -> (Array2<f64>, LnTrace) {
    let (rows, cols) = x.dim();
    let mut xhat = Array2::zeros((rows, cols));
    let mut inv_std = Array1::zeros(rows);
    let mut y = Array2::zeros((rows, cols));
    for r in 0..rows {
        let row = x.row(r);
        let mean = row.sum() / cols as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
        let istd = 1.0 / (var + LN_EPS).sqrt();
        inv_std[r] = istd;
        for c in 0..cols {
            let xh = (x[[r, c]] - mean) * istd;
            xhat[[r, c]] = xh;
            y[[r, c]] = p.gain[c] * xh + p.bias[c];
        }
    }
    (y, LnTrace { xhat, inv_std })
}

fn affine_rows(x: &Array2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    let mut y = x.dot(w);
    for mut row in y.rows_mut() {
        row += b;
    }
    y
}

pub(crate) fn encoder_forward_trace(
    params: &Params,
    cfg: &ModelConfig,
    ids: &[u32],
) -> Result<EncoderTrace, ModelError> {
    let t_len = ids.len();
    if t_len == 0 {
        return Err(ModelError::EmptySequence);
    }
    if t_len > cfg.max_positions {
        return Err(ModelError::SequenceTooLong { len: t_len, max: cfg.max_positions });
    }
    for &id in ids {
        if id as usize >= cfg.vocab_size {
            return Err(ModelError::IdOutOfRange { id, vocab_size: cfg.vocab_size });
        }
    }
    let pad: Vec<bool> = ids.iter().map(|&id| id == PAD_ID).collect();
    if pad.iter().all(|p| *p) {
        return Err(ModelError::EmptySequence);
    }

    let h = cfg.hidden;
    let n_heads = cfg.heads;
    let d = h / n_heads;
    let scale = 1.0 / (d as f64).sqrt();

    let mut emb = Array2::zeros((t_len, h));
    for (t, &id) in ids.iter().enumerate() {
        let tok = params.tok_emb.row(id as usize);
        let pos = params.pos_emb.row(t);
        for c in 0..h {
            emb[[t, c]] = tok[c] + pos[c];
        }
    }
    let (h0, emb_ln) = layer_norm_fwd(&emb, &params.emb_ln);

    let mut states = vec![h0];
    let mut layer_traces = Vec::with_capacity(cfg.layers);

    for layer in &params.layers {
        let x = states.last().unwrap();
        let q = affine_rows(x, &layer.w_q, &layer.b_q);
        let k = affine_rows(x, &layer.w_k, &layer.b_k);
        let v = affine_rows(x, &layer.w_v, &layer.b_v);

        let mut ctx = Array2::zeros((t_len, h));
        let mut attn = Vec::with_capacity(n_heads);
        for head in 0..n_heads {
            let cols = s![.., head * d..(head + 1) * d];
            let qh = q.slice(cols);
            let kh = k.slice(cols);
            let vh = v.slice(cols);
            let mut scores = qh.dot(&kh.t()) * scale;
            for (j, is_pad) in pad.iter().enumerate() {
                if *is_pad {
                    scores.column_mut(j).fill(f64::NEG_INFINITY);
                }
            }
            softmax_rows_in_place(&mut scores);
            let ctx_h = scores.dot(&vh);
            ctx.slice_mut(cols).assign(&ctx_h);
            attn.push(scores);
        }

        let o = affine_rows(&ctx, &layer.w_o, &layer.b_o);
        let r1 = x + &o;
        let (h_mid, ln1) = layer_norm_fwd(&r1, &layer.ln1);

        let f1 = affine_rows(&h_mid, &layer.w_ff1, &layer.b_ff1);
        let g = f1.mapv(gelu);
        let f2 = affine_rows(&g, &layer.w_ff2, &layer.b_ff2);
        let r2 = &h_mid + &f2;
        let (out, ln2) = layer_norm_fwd(&r2, &layer.ln2);

        layer_traces.push(LayerTrace { q, k, v, attn, ctx, ln1, h_mid, f1, g, ln2 });
        states.push(out);
    }

    Ok(EncoderTrace {
        states: HiddenStates { layers: states, pad },
        emb_ln,
        layers: layer_traces,
    })
}

/// Run the encoder and return all per-layer hidden states.
pub fn encode_forward(params: &Params, cfg: &ModelConfig, ids: &[u32]) -> Result<HiddenStates, ModelError> {
    Ok(encoder_forward_trace(params, cfg, ids)?.states)
}

/// Stack the last four layers along the sequence axis: rows `0..T` come
/// from `h^(L-3)`, rows `T..2T` from `h^(L-2)`, and so on.
pub fn stack_last4(states: &HiddenStates) -> Result<Array2<f64>, ModelError> {
    let n_layers = states.layers.len() - 1;
    if n_layers < 4 {
        return Err(ModelError::InsufficientLayers(n_layers));
    }
    let views: Vec<_> = (n_layers - 3..=n_layers).map(|l| states.layers[l].view()).collect();
    Ok(concatenate(Axis(0), &views).expect("same widths"))
}

pub(crate) struct DropoutMask(pub Option<Array1<f64>>);

impl DropoutMask {
    /// Inverted dropout: entries are `0` or `1/(1-p)`.
    pub(crate) fn draw(len: usize, p: f64, rng: Option<&mut ChaCha8Rng>) -> DropoutMask {
        match rng {
            Some(rng) if p > 0.0 => {
                let keep = 1.0 / (1.0 - p);
                DropoutMask(Some(Array1::from_iter(
                    (0..len).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }),
                )))
            }
            _ => DropoutMask(None),
        }
    }

    pub(crate) fn apply(&self, x: &Array1<f64>) -> Array1<f64> {
        match &self.0 {
            Some(m) => x * m,
            None => x.clone(),
        }
    }
}

pub(crate) struct Model1Trace {
    pub v_dropped: Array1<f64>,
    pub v_mask: DropoutMask,
    pub t: Array1<f64>,
    pub t_dropped: Array1<f64>,
    pub t_mask: DropoutMask,
    pub logits: Array1<f64>,
}

/// CLS head: `logits = w_out · tanh(w_cls · v + b_cls) + b_out` with
/// dropout on `v` and on the tanh output in training mode.
pub(crate) fn head_model1_trace(
    params: &Params,
    cfg: &ModelConfig,
    states: &HiddenStates,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<Model1Trace, ModelError> {
    let HeadParams::Model1 { w_cls, b_cls, w_out, b_out } = &params.head else {
        return Err(ModelError::BadConfig("params carry a different head".into()));
    };
    let v = states.last().row(0).to_owned();
    let v_mask = DropoutMask::draw(v.len(), cfg.dropout, rng.as_deref_mut());
    let v_dropped = v_mask.apply(&v);
    let t = (w_cls.dot(&v_dropped) + b_cls).mapv(f64::tanh);
    let t_mask = DropoutMask::draw(t.len(), cfg.dropout, rng);
    let t_dropped = t_mask.apply(&t);
    let logits = w_out.dot(&t_dropped) + b_out;
    Ok(Model1Trace { v_dropped, v_mask, t, t_dropped, t_mask, logits })
}

/// CLS head logits (eval mode unless a dropout stream is supplied).
pub fn head_model1(
    params: &Params,
    cfg: &ModelConfig,
    states: &HiddenStates,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Array1<f64>, ModelError> {
    Ok(head_model1_trace(params, cfg, states, rng)?.logits)
}

pub(crate) struct PooledFilter {
    /// First position attaining the max (the pooled value itself lives in `u`).
    pub argmax: usize,
    /// Whether the pre-activation at the argmax was positive.
    pub active: bool,
}

pub(crate) struct Model2Trace {
    pub stacked: Array2<f64>,
    pub pooled: Vec<PooledFilter>,
    pub u: Array1<f64>,
    pub cnn_out: Array1<f64>,
    pub chem_tanh: Array1<f64>,
    pub prot_tanh: Array1<f64>,
    pub cls_tanh: Option<Array1<f64>>,
    pub z_dropped: Array1<f64>,
    pub z_mask: DropoutMask,
    pub logits: Array1<f64>,
    pub chem_span: Span,
    pub prot_span: Span,
}

fn span_mean(h_last: &Array2<f64>, span: &Span) -> Array1<f64> {
    let rows = h_last.slice(s![span.start..span.end, ..]);
    rows.sum_axis(Axis(0)) / span.len() as f64
}

fn check_span(span: &Span, len: usize, pad: &[bool]) -> Result<(), ModelError> {
    if span.is_empty() || span.end > len {
        return Err(ModelError::SpanOutOfRange { start: span.start, end: span.end, len });
    }
    if pad[span.start..span.end].iter().any(|p| *p) {
        return Err(ModelError::PaddingInSpan);
    }
    Ok(())
}

pub(crate) fn head_rbert_cnn_trace(
    params: &Params,
    cfg: &ModelConfig,
    states: &HiddenStates,
    chem_span: Span,
    prot_span: Span,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Model2Trace, ModelError> {
    let HeadParams::RBertCnn { conv, w_cnn, b_cnn, w_chem, b_chem, w_prot, b_prot, cls, w_out, b_out } =
        &params.head
    else {
        return Err(ModelError::BadConfig("params carry a different head".into()));
    };
    let t_len = states.seq_len();
    check_span(&chem_span, t_len, &states.pad)?;
    check_span(&prot_span, t_len, &states.pad)?;

    let stacked = stack_last4(states)?;
    let total_rows = stacked.shape()[0];

    let mut pooled = Vec::with_capacity(cfg.total_filters());
    let mut u = Array1::zeros(cfg.total_filters());
    let mut idx = 0;
    for bank in conv {
        let k = bank.width;
        if total_rows < k {
            return Err(ModelError::SequenceTooLong { len: total_rows, max: k });
        }
        for f in 0..bank.bias.len() {
            let kernel = bank.weight.slice(s![f, .., ..]);
            let mut best = f64::NEG_INFINITY;
            let mut best_i = 0;
            for i in 0..=total_rows - k {
                let window = stacked.slice(s![i..i + k, ..]);
                let pre = (&kernel * &window).sum() + bank.bias[f];
                let post = pre.max(0.0);
                if post > best {
                    best = post;
                    best_i = i;
                }
            }
            // recompute the winning pre-activation to know if ReLU passed
            let window = stacked.slice(s![best_i..best_i + k, ..]);
            let pre = (&kernel * &window).sum() + bank.bias[f];
            pooled.push(PooledFilter { argmax: best_i, active: pre > 0.0 });
            u[idx] = best;
            idx += 1;
        }
    }

    let cnn_out = (w_cnn.dot(&u) + b_cnn).mapv(f64::tanh);

    let h_last = states.last();
    let chem_tanh = span_mean(h_last, &chem_span).mapv(f64::tanh);
    let chem_out = w_chem.dot(&chem_tanh) + b_chem;
    let prot_tanh = span_mean(h_last, &prot_span).mapv(f64::tanh);
    let prot_out = w_prot.dot(&prot_tanh) + b_prot;

    let (cls_tanh, cls_out) = match cls {
        Some((w_cls, b_cls)) => {
            let ct = h_last.row(0).mapv(f64::tanh);
            let co = w_cls.dot(&ct) + b_cls;
            (Some(ct), Some(co))
        }
        None => (None, None),
    };

    let mut parts = vec![cnn_out.view(), chem_out.view(), prot_out.view()];
    if let Some(co) = &cls_out {
        parts.push(co.view());
    }
    let z = concatenate(Axis(0), &parts).expect("head widths agree");

    let z_mask = DropoutMask::draw(z.len(), cfg.dropout, rng);
    let z_dropped = z_mask.apply(&z);
    let logits = w_out.dot(&z_dropped) + b_out;

    Ok(Model2Trace {
        stacked,
        pooled,
        u,
        cnn_out,
        chem_tanh,
        prot_tanh,
        cls_tanh,
        z_dropped,
        z_mask,
        logits,
        chem_span,
        prot_span,
    })
}

/// Entity-aware CNN head over the last four layers.
pub fn head_rbert_cnn(
    params: &Params,
    cfg: &ModelConfig,
    states: &HiddenStates,
    chem_span: Span,
    prot_span: Span,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<ForwardTrace, ModelError> {
    let trace = head_rbert_cnn_trace(params, cfg, states, chem_span, prot_span, rng)?;
    let probs = softmax(&trace.logits);
    Ok(ForwardTrace { logits: trace.logits, probs })
}

/// Full forward pass for one encoded example, dispatching on the configured
/// head. Pass a dropout stream for training mode, `None` for eval.
pub fn forward(
    params: &Params,
    cfg: &ModelConfig,
    ex: &EncodedExample,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<ForwardTrace, ModelError> {
    let states = encode_forward(params, cfg, &ex.ids)?;
    match cfg.head {
        HeadKind::Model1 => {
            let logits = head_model1(params, cfg, &states, rng)?;
            let probs = softmax(&logits);
            Ok(ForwardTrace { logits, probs })
        }
        HeadKind::RBertCnn => {
            head_rbert_cnn(params, cfg, &states, ex.chem_tok_span, ex.prot_tok_span, rng)
        }
    }
}

/// Cross-entropy `-log p[label]` computed in the log-sum-exp-stable form.
pub fn loss(trace: &ForwardTrace, label: usize) -> f64 {
    cross_entropy_from_logits(&trace.logits, label)
}

pub(crate) fn cross_entropy_from_logits(logits: &Array1<f64>, label: usize) -> f64 {
    assert!(label < logits.len(), "label {label} out of range");
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.mapv(|v| (v - m).exp()).sum().ln();
    lse - logits[label]
}

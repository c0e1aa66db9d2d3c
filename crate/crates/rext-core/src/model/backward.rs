//! Reverse-mode gradients for the encoder and both heads. The backward
//! pass consumes the caches produced by the forward trace functions and
//! accumulates into a [`Params`]-shaped gradient structure, so optimizer
//! and checkpoint code never distinguish parameters from gradients.

use ndarray::{s, Array1, Array2};
use rand_chacha::ChaCha8Rng;

use super::forward::{
    cross_entropy_from_logits, encoder_forward_trace, gelu_prime, head_model1_trace,
    head_rbert_cnn_trace, softmax, EncoderTrace, LnTrace, Model1Trace, Model2Trace,
};
use super::params::{HeadParams, LayerNormParams, LayerParams};
use super::{HeadKind, ModelConfig, ModelError, Params};
use crate::tokenizer::EncodedExample;

/// Mean loss, gradients shaped like [`Params`], and the number of
/// batch examples whose argmax matched the label.
pub struct LossAndGrad {
    pub loss: f64,
    pub grads: Params,
    pub n_correct: usize,
}

pub(crate) fn argmax(p: &Array1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let mut m = Array2::zeros((a.len(), b.len()));
    for i in 0..a.len() {
        for j in 0..b.len() {
            m[[i, j]] = a[i] * b[j];
        }
    }
    m
}

/// Exact analytic gradient of the mean cross-entropy over the batch, for
/// the dropout masks drawn from `dropout_rng` (eval-mode when `None`).
pub fn loss_and_grad(
    params: &Params,
    cfg: &ModelConfig,
    batch: &[EncodedExample],
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<LossAndGrad, ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let mut grads = Params::zeros(cfg);
    let inv_b = 1.0 / batch.len() as f64;
    let mut total_loss = 0.0;
    let mut n_correct = 0;

    for ex in batch {
        let enc = encoder_forward_trace(params, cfg, &ex.ids)?;
        let t_len = enc.states.seq_len();

        let (mut d_top, mut injections) = match cfg.head {
            HeadKind::Model1 => {
                let head = head_model1_trace(params, cfg, &enc.states, dropout_rng.as_deref_mut())?;
                let probs = softmax(&head.logits);
                total_loss += cross_entropy_from_logits(&head.logits, ex.label_id);
                if argmax(&probs) == ex.label_id {
                    n_correct += 1;
                }
                let mut dlogits = probs;
                dlogits[ex.label_id] -= 1.0;
                dlogits *= inv_b;
                let dv = model1_backward(params, &head, &dlogits, &mut grads);
                let mut d_top = Array2::zeros((t_len, cfg.hidden));
                d_top.row_mut(0).assign(&dv);
                (d_top, vec![None; cfg.layers + 1])
            }
            HeadKind::RBertCnn => {
                let head = head_rbert_cnn_trace(
                    params,
                    cfg,
                    &enc.states,
                    ex.chem_tok_span,
                    ex.prot_tok_span,
                    dropout_rng.as_deref_mut(),
                )?;
                let probs = softmax(&head.logits);
                total_loss += cross_entropy_from_logits(&head.logits, ex.label_id);
                if argmax(&probs) == ex.label_id {
                    n_correct += 1;
                }
                let mut dlogits = probs;
                dlogits[ex.label_id] -= 1.0;
                dlogits *= inv_b;
                model2_backward(params, cfg, &head, &enc, &dlogits, &mut grads)
            }
        };

        // encoder backward, adding the CNN-stack injections layer by layer
        let mut g = std::mem::take(&mut d_top);
        for l in (1..=cfg.layers).rev() {
            g = layer_backward(
                &params.layers[l - 1],
                &mut grads.layers[l - 1],
                &enc.layers[l - 1],
                &enc.states.layers[l - 1],
                cfg,
                &g,
            );
            if let Some(inj) = injections[l - 1].take() {
                g += &inj;
            }
        }

        // embedding layer norm, then token/position tables
        let demb = layer_norm_bwd(&g, &enc.emb_ln, &params.emb_ln, &mut grads.emb_ln);
        for (t, &id) in ex.ids.iter().enumerate() {
            let mut tok_row = grads.tok_emb.row_mut(id as usize);
            tok_row += &demb.row(t);
            let mut pos_row = grads.pos_emb.row_mut(t);
            pos_row += &demb.row(t);
        }
    }

    Ok(LossAndGrad { loss: total_loss * inv_b, grads, n_correct })
}

fn layer_norm_bwd(
    dy: &Array2<f64>,
    trace: &LnTrace,
    p: &LayerNormParams,
    grads: &mut LayerNormParams,
) -> Array2<f64> {
    let (rows, cols) = dy.dim();
    let mut dx = Array2::zeros((rows, cols));
    for r in 0..rows {
        let istd = trace.inv_std[r];
        let mut mean_g = 0.0;
        let mut mean_gx = 0.0;
        for c in 0..cols {
            let g = dy[[r, c]] * p.gain[c];
            let xh = trace.xhat[[r, c]];
            mean_g += g;
            mean_gx += g * xh;
            grads.gain[c] += dy[[r, c]] * xh;
            grads.bias[c] += dy[[r, c]];
        }
        mean_g /= cols as f64;
        mean_gx /= cols as f64;
        for c in 0..cols {
            let g = dy[[r, c]] * p.gain[c];
            let xh = trace.xhat[[r, c]];
            dx[[r, c]] = istd * (g - mean_g - xh * mean_gx);
        }
    }
    dx
}

fn layer_backward(
    layer: &LayerParams,
    grads: &mut LayerParams,
    trace: &super::forward::LayerTrace,
    x: &Array2<f64>,
    cfg: &ModelConfig,
    dy: &Array2<f64>,
) -> Array2<f64> {
    use ndarray::Axis;
    let (t_len, h) = x.dim();
    let n_heads = cfg.heads;
    let d = h / n_heads;
    let scale = 1.0 / (d as f64).sqrt();

    // second residual + layer norm
    let dr2 = layer_norm_bwd(dy, &trace.ln2, &layer.ln2, &mut grads.ln2);
    let mut dh_mid = dr2.clone();
    let df2 = dr2;

    // feed-forward
    grads.w_ff2 += &trace.g.t().dot(&df2);
    grads.b_ff2 += &df2.sum_axis(Axis(0));
    let dg = df2.dot(&layer.w_ff2.t());
    let df1 = &dg * &trace.f1.mapv(gelu_prime);
    grads.w_ff1 += &trace.h_mid.t().dot(&df1);
    grads.b_ff1 += &df1.sum_axis(Axis(0));
    dh_mid += &df1.dot(&layer.w_ff1.t());

    // first residual + layer norm
    let dr1 = layer_norm_bwd(&dh_mid, &trace.ln1, &layer.ln1, &mut grads.ln1);
    let mut dx = dr1.clone();
    let d_attn_out = dr1;

    // output projection
    grads.w_o += &trace.ctx.t().dot(&d_attn_out);
    grads.b_o += &d_attn_out.sum_axis(Axis(0));
    let dctx = d_attn_out.dot(&layer.w_o.t());

    // attention heads
    let mut dq = Array2::zeros((t_len, h));
    let mut dk = Array2::zeros((t_len, h));
    let mut dv = Array2::zeros((t_len, h));
    for head in 0..n_heads {
        let cols = s![.., head * d..(head + 1) * d];
        let p = &trace.attn[head];
        let dctx_h = dctx.slice(cols);
        let vh = trace.v.slice(cols);
        let qh = trace.q.slice(cols);
        let kh = trace.k.slice(cols);

        let dp = dctx_h.dot(&vh.t());
        dv.slice_mut(cols).assign(&p.t().dot(&dctx_h));

        // softmax backward, row-wise
        let mut ds = Array2::zeros((t_len, t_len));
        for r in 0..t_len {
            let mut dot = 0.0;
            for c in 0..t_len {
                dot += dp[[r, c]] * p[[r, c]];
            }
            for c in 0..t_len {
                ds[[r, c]] = p[[r, c]] * (dp[[r, c]] - dot);
            }
        }

        dq.slice_mut(cols).assign(&(ds.dot(&kh) * scale));
        dk.slice_mut(cols).assign(&(ds.t().dot(&qh) * scale));
    }

    grads.w_q += &x.t().dot(&dq);
    grads.b_q += &dq.sum_axis(Axis(0));
    dx += &dq.dot(&layer.w_q.t());
    grads.w_k += &x.t().dot(&dk);
    grads.b_k += &dk.sum_axis(Axis(0));
    dx += &dk.dot(&layer.w_k.t());
    grads.w_v += &x.t().dot(&dv);
    grads.b_v += &dv.sum_axis(Axis(0));
    dx += &dv.dot(&layer.w_v.t());

    dx
}

/// Returns the gradient flowing into `h^L[0]`.
fn model1_backward(
    params: &Params,
    trace: &Model1Trace,
    dlogits: &Array1<f64>,
    grads: &mut Params,
) -> Array1<f64> {
    let HeadParams::Model1 { w_cls, w_out, .. } = &params.head else { unreachable!() };
    let HeadParams::Model1 {
        w_cls: g_w_cls,
        b_cls: g_b_cls,
        w_out: g_w_out,
        b_out: g_b_out,
    } = &mut grads.head
    else {
        unreachable!()
    };

    *g_w_out += &outer(dlogits, &trace.t_dropped);
    *g_b_out += dlogits;
    let dt_dropped = w_out.t().dot(dlogits);
    let dt = trace.t_mask.apply(&dt_dropped);
    let dfc1 = &dt * &trace.t.mapv(|v| 1.0 - v * v);
    *g_w_cls += &outer(&dfc1, &trace.v_dropped);
    *g_b_cls += &dfc1;
    let dv_dropped = w_cls.t().dot(&dfc1);
    trace.v_mask.apply(&dv_dropped)
}

/// Returns the gradient on `h^L` plus per-layer injections for
/// `h^(L-3)..h^(L-1)` coming from the stacked CNN input.
fn model2_backward(
    params: &Params,
    cfg: &ModelConfig,
    trace: &Model2Trace,
    enc: &EncoderTrace,
    dlogits: &Array1<f64>,
    grads: &mut Params,
) -> (Array2<f64>, Vec<Option<Array2<f64>>>) {
    let HeadParams::RBertCnn { conv, w_cnn, w_chem, w_prot, cls, w_out, .. } = &params.head else {
        unreachable!()
    };
    let HeadParams::RBertCnn {
        conv: g_conv,
        w_cnn: g_w_cnn,
        b_cnn: g_b_cnn,
        w_chem: g_w_chem,
        b_chem: g_b_chem,
        w_prot: g_w_prot,
        b_prot: g_b_prot,
        cls: g_cls,
        w_out: g_w_out,
        b_out: g_b_out,
    } = &mut grads.head
    else {
        unreachable!()
    };

    let d_head = cfg.head_dim;
    let t_len = enc.states.seq_len();
    let h = cfg.hidden;
    let n_layers = cfg.layers;

    *g_w_out += &outer(dlogits, &trace.z_dropped);
    *g_b_out += dlogits;
    let dz_dropped = w_out.t().dot(dlogits);
    let dz = trace.z_mask.apply(&dz_dropped);

    let dcnn_out = dz.slice(s![0..d_head]).to_owned();
    let dchem_out = dz.slice(s![d_head..2 * d_head]).to_owned();
    let dprot_out = dz.slice(s![2 * d_head..3 * d_head]).to_owned();
    let dcls_out = cls.is_some().then(|| dz.slice(s![3 * d_head..4 * d_head]).to_owned());

    // CNN path
    let dcnn_pre = &dcnn_out * &trace.cnn_out.mapv(|v| 1.0 - v * v);
    *g_w_cnn += &outer(&dcnn_pre, &trace.u);
    *g_b_cnn += &dcnn_pre;
    let du = w_cnn.t().dot(&dcnn_pre);

    let mut d_stacked = Array2::zeros((4 * t_len, h));
    let mut idx = 0;
    for (bank, g_bank) in conv.iter().zip(g_conv.iter_mut()) {
        let k = bank.width;
        for f in 0..bank.bias.len() {
            let pf = &trace.pooled[idx];
            if pf.active {
                let ds = du[idx];
                let window = trace.stacked.slice(s![pf.argmax..pf.argmax + k, ..]);
                let mut g_kernel = g_bank.weight.slice_mut(s![f, .., ..]);
                g_kernel += &(&window * ds);
                g_bank.bias[f] += ds;
                let kernel = bank.weight.slice(s![f, .., ..]);
                let mut d_window = d_stacked.slice_mut(s![pf.argmax..pf.argmax + k, ..]);
                d_window += &(&kernel * ds);
            }
            idx += 1;
        }
    }

    // entity averages over the final hidden state
    let mut d_top = Array2::zeros((t_len, h));
    let dchem_tanh = w_chem.t().dot(&dchem_out);
    *g_w_chem += &outer(&dchem_out, &trace.chem_tanh);
    *g_b_chem += &dchem_out;
    let dchem_mean = &dchem_tanh * &trace.chem_tanh.mapv(|v| 1.0 - v * v);
    let chem_n = trace.chem_span.len() as f64;
    for r in trace.chem_span.start..trace.chem_span.end {
        let mut row = d_top.row_mut(r);
        row += &(&dchem_mean / chem_n);
    }

    let dprot_tanh = w_prot.t().dot(&dprot_out);
    *g_w_prot += &outer(&dprot_out, &trace.prot_tanh);
    *g_b_prot += &dprot_out;
    let dprot_mean = &dprot_tanh * &trace.prot_tanh.mapv(|v| 1.0 - v * v);
    let prot_n = trace.prot_span.len() as f64;
    for r in trace.prot_span.start..trace.prot_span.end {
        let mut row = d_top.row_mut(r);
        row += &(&dprot_mean / prot_n);
    }

    if let (Some((w_cls, _)), Some((g_w_cls, g_b_cls)), Some(dcls_out), Some(cls_tanh)) =
        (cls.as_ref(), g_cls.as_mut(), dcls_out, trace.cls_tanh.as_ref())
    {
        let dcls_tanh = w_cls.t().dot(&dcls_out);
        *g_w_cls += &outer(&dcls_out, cls_tanh);
        *g_b_cls += &dcls_out;
        let d_row0 = &dcls_tanh * &cls_tanh.mapv(|v| 1.0 - v * v);
        let mut row = d_top.row_mut(0);
        row += &d_row0;
    }

    // route stacked-gradient blocks back to their layers
    let mut injections: Vec<Option<Array2<f64>>> = vec![None; n_layers + 1];
    for (block, l) in (n_layers - 3..=n_layers).enumerate() {
        let d_block = d_stacked.slice(s![block * t_len..(block + 1) * t_len, ..]);
        if l == n_layers {
            d_top += &d_block;
        } else {
            injections[l] = Some(d_block.to_owned());
        }
    }

    (d_top, injections)
}

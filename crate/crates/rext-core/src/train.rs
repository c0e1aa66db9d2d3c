//! Imbalance-aware training: inverse-frequency sample weights, replacement
//! sampling, global-norm gradient clipping, bias-corrected Adam, and the
//! epoch loop. The whole trajectory is a deterministic function of
//! `(seed, data, config)`; the sampler and the dropout masks draw from two
//! independent seeded streams.

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::checkpoint::{Checkpoint, TrainMeta};
use crate::corpus::RelationLabel;
use crate::model::{init_params, loss_and_grad, ModelConfig, ModelError, Params};
use crate::tokenizer::{EncodedExample, Vocabulary};

/// Optimizer and loop hyperparameters (defaults follow the training recipe:
/// lr 3e-5, 7 epochs, batch 32, Adam eps 1e-8, clip at 1, no decay or
/// warmup, dropout 0.5).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam_epsilon: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub gradient_accumulation_steps: usize,
    pub max_grad_norm: f64,
    pub weight_decay: f64,
    pub warmup_steps: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 3e-5,
            epochs: 7,
            batch_size: 32,
            adam_epsilon: 1e-8,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            gradient_accumulation_steps: 1,
            max_grad_norm: 1.0,
            weight_decay: 0.0,
            warmup_steps: 0,
            dropout: 0.5,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.learning_rate <= 0.0
            || self.batch_size == 0
            || self.gradient_accumulation_steps == 0
            || self.adam_epsilon <= 0.0
            || self.max_grad_norm <= 0.0
            || !(0.0..1.0).contains(&self.adam_beta1)
            || !(0.0..1.0).contains(&self.adam_beta2)
            || !(0.0..1.0).contains(&self.dropout)
            || self.weight_decay < 0.0
        {
            return Err(TrainError::BadConfig);
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration")]
    BadConfig,
    #[error("input is empty")]
    EmptyInput,
    #[error("non-finite gradient encountered")]
    NonFiniteGradient,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Per-example sampling weights `N / count(label)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleWeights(pub Vec<f64>);

/// Inverse-frequency weights: an example of class `c` gets `N / n_c`, so
/// every class has equal expected draw frequency.
pub fn class_weights(labels: &[usize]) -> Result<SampleWeights, TrainError> {
    if labels.is_empty() {
        return Err(TrainError::EmptyInput);
    }
    let n_classes = labels.iter().max().unwrap() + 1;
    let mut counts = vec![0usize; n_classes];
    for &l in labels {
        counts[l] += 1;
    }
    let total = labels.len() as f64;
    Ok(SampleWeights(labels.iter().map(|&l| total / counts[l] as f64).collect()))
}

/// Draw `n_draws` indices with replacement, probability proportional to the
/// weights; deterministic given the seed.
pub fn weighted_sample(weights: &SampleWeights, n_draws: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    weighted_sample_with(weights, n_draws, &mut rng)
}

fn weighted_sample_with(weights: &SampleWeights, n_draws: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let dist = WeightedIndex::new(&weights.0).expect("weights positive and finite");
    (0..n_draws).map(|_| dist.sample(rng)).collect()
}

/// Scale all gradients by `max_norm / g` when the global L2 norm `g`
/// exceeds `max_norm`. Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut Params, max_norm: f64) -> Result<f64, TrainError> {
    let mut sq_sum = 0.0;
    for t in grads.tensors() {
        for v in t.data {
            if !v.is_finite() {
                return Err(TrainError::NonFiniteGradient);
            }
            sq_sum += v * v;
        }
    }
    let norm = sq_sum.sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for t in grads.tensors_mut() {
            for v in t.data.iter_mut() {
                *v *= scale;
            }
        }
    }
    Ok(norm)
}

/// Adam moment accumulators, shaped like the parameters.
#[derive(Debug, Clone)]
pub struct OptState {
    pub m: Params,
    pub v: Params,
    pub step: usize,
}

impl OptState {
    pub fn new(cfg: &ModelConfig) -> Self {
        OptState { m: Params::zeros(cfg), v: Params::zeros(cfg), step: 0 }
    }
}

/// One bias-corrected Adam update:
/// `m ← β1·m + (1−β1)·g`, `v ← β2·v + (1−β2)·g²`,
/// `θ ← θ − lr·m̂/(√v̂ + ε)`, with optional linear warmup and decoupled
/// weight decay (both zero by default).
pub fn adam_step(params: &mut Params, grads: &Params, opt: &mut OptState, cfg: &TrainConfig) {
    opt.step += 1;
    let step = opt.step as f64;
    let lr = if cfg.warmup_steps > 0 && opt.step <= cfg.warmup_steps {
        cfg.learning_rate * step / cfg.warmup_steps as f64
    } else {
        cfg.learning_rate
    };
    let bc1 = 1.0 - cfg.adam_beta1.powf(step);
    let bc2 = 1.0 - cfg.adam_beta2.powf(step);

    let mut p_ts = params.tensors_mut();
    let g_ts = grads.tensors();
    let mut m_ts = opt.m.tensors_mut();
    let mut v_ts = opt.v.tensors_mut();
    for i in 0..p_ts.len() {
        let p = &mut p_ts[i].data;
        let g = &g_ts[i].data;
        let m = &mut m_ts[i].data;
        let v = &mut v_ts[i].data;
        for j in 0..p.len() {
            m[j] = cfg.adam_beta1 * m[j] + (1.0 - cfg.adam_beta1) * g[j];
            v[j] = cfg.adam_beta2 * v[j] + (1.0 - cfg.adam_beta2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] -= lr * m_hat / (v_hat.sqrt() + cfg.adam_epsilon);
            if cfg.weight_decay > 0.0 {
                p[j] -= lr * cfg.weight_decay * p[j];
            }
        }
    }
}

/// Per-epoch running statistics, and the exact log-line format they are
/// reported in.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_acc: f64,
}

impl EpochStats {
    pub fn log_line(&self) -> String {
        format!("epoch {}\tloss {:.6}\ttrain_acc {:.4}", self.epoch, self.mean_loss, self.train_acc)
    }
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub epochs: Vec<EpochStats>,
}

/// The epoch loop. Every epoch draws `len(examples)` indices from the
/// weighted sampler, batches them in draw order, accumulates gradients over
/// `gradient_accumulation_steps` micro-batches, clips to the global norm
/// bound, and steps Adam. `max_len` is recorded into the checkpoint so
/// prediction can re-encode raw corpora consistently.
pub fn train(
    examples: &[EncodedExample],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(TrainError::EmptyInput);
    }
    let mut model_cfg = model_cfg.clone();
    model_cfg.dropout = cfg.dropout;
    model_cfg.validate()?;

    let labels: Vec<usize> = examples.iter().map(|e| e.label_id).collect();
    let weights = class_weights(&labels)?;

    let mut params = init_params(&model_cfg, cfg.seed)?;
    let mut opt = OptState::new(&model_cfg);
    // independent streams so batch-size changes never perturb sampling
    let mut sampler_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);

    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let order = weighted_sample_with(&weights, examples.len(), &mut sampler_rng);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        let mut seen = 0usize;

        let micro_batches: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        for group in micro_batches.chunks(cfg.gradient_accumulation_steps) {
            let mut acc: Option<Params> = None;
            for chunk in group {
                let batch: Vec<EncodedExample> =
                    chunk.iter().map(|&i| examples[i].clone()).collect();
                let res = loss_and_grad(&params, &model_cfg, &batch, Some(&mut dropout_rng))?;
                loss_sum += res.loss * batch.len() as f64;
                correct += res.n_correct;
                seen += batch.len();
                acc = Some(match acc {
                    None => res.grads,
                    Some(mut a) => {
                        add_scaled(&mut a, &res.grads, 1.0);
                        a
                    }
                });
            }
            let mut grads = acc.expect("non-empty group");
            if group.len() > 1 {
                scale(&mut grads, 1.0 / group.len() as f64);
            }
            clip_global_norm(&mut grads, cfg.max_grad_norm)?;
            adam_step(&mut params, &grads, &mut opt, cfg);
        }

        let stats = EpochStats {
            epoch,
            mean_loss: loss_sum / seen as f64,
            train_acc: correct as f64 / seen as f64,
        };
        log::info!("{}", stats.log_line());
        epochs.push(stats);
    }

    let checkpoint = Checkpoint {
        config: model_cfg,
        params,
        vocab: vocab.clone(),
        labels: label_table(),
        meta: TrainMeta {
            epochs_trained: cfg.epochs,
            seed: cfg.seed,
            learning_rate: cfg.learning_rate,
            batch_size: cfg.batch_size,
            max_len,
        },
    };
    Ok(TrainOutcome { checkpoint, epochs })
}

/// Class-id order used everywhere: the ten kept labels then `Other`.
pub fn label_table() -> Vec<RelationLabel> {
    let mut t: Vec<RelationLabel> = RelationLabel::KEPT_LABELS.to_vec();
    t.push(RelationLabel::Other);
    t
}

fn add_scaled(acc: &mut Params, other: &Params, factor: f64) {
    let mut a_ts = acc.tensors_mut();
    let o_ts = other.tensors();
    for i in 0..a_ts.len() {
        for (a, o) in a_ts[i].data.iter_mut().zip(o_ts[i].data.iter()) {
            *a += factor * o;
        }
    }
}

fn scale(p: &mut Params, factor: f64) {
    for t in p.tensors_mut() {
        for v in t.data.iter_mut() {
            *v *= factor;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::HeadKind;
    use crate::Span;
    use rand::Rng;

    #[test]
    fn class_weights_formula() {
        // labels [A,A,A,B] -> [4/3, 4/3, 4/3, 4]
        let w = class_weights(&[0, 0, 0, 1]).unwrap();
        assert_eq!(w.0, vec![4.0 / 3.0, 4.0 / 3.0, 4.0 / 3.0, 4.0]);
    }

    #[test]
    fn class_weights_single_class_uniform() {
        let w = class_weights(&[2, 2, 2]).unwrap();
        assert!(w.0.iter().all(|v| *v == 1.0));
    }

    #[test]
    fn class_weights_table_shaped_ratio() {
        // counts 5392 vs 658 -> rare-class examples weigh 5392/658 more
        let mut labels = vec![0usize; 5392];
        labels.extend(vec![1usize; 658]);
        let w = class_weights(&labels).unwrap();
        let ratio = w.0[5392] / w.0[0];
        assert!((ratio - 5392.0 / 658.0).abs() < 1e-12);
    }

    #[test]
    fn class_weights_rejects_empty() {
        assert!(matches!(class_weights(&[]), Err(TrainError::EmptyInput)));
    }

    #[test]
    fn weighted_sample_follows_weights() {
        let w = SampleWeights(vec![3.0, 1.0]);
        let draws = weighted_sample(&w, 400_000, 99);
        let zero = draws.iter().filter(|i| **i == 0).count() as f64 / draws.len() as f64;
        assert!((zero - 0.75).abs() < 0.005, "frequency {zero}");
    }

    #[test]
    fn inverse_frequency_weights_balance_classes() {
        // labels [A,A,A,B]: per-class draw frequency 0.5 ± 0.01
        let labels = [0usize, 0, 0, 1];
        let w = class_weights(&labels).unwrap();
        let draws = weighted_sample(&w, 100_000, 7);
        let class_a = draws.iter().filter(|i| labels[**i] == 0).count() as f64 / draws.len() as f64;
        assert!((class_a - 0.5).abs() < 0.01, "class A frequency {class_a}");
    }

    #[test]
    fn weighted_sample_deterministic() {
        let w = SampleWeights(vec![1.0, 2.0, 3.0]);
        assert_eq!(weighted_sample(&w, 1000, 5), weighted_sample(&w, 1000, 5));
        assert_ne!(weighted_sample(&w, 1000, 5), weighted_sample(&w, 1000, 6));
    }

    fn cfg_for_test() -> ModelConfig {
        ModelConfig {
            hidden: 16,
            layers: 4,
            heads: 2,
            ff_dim: 32,
            max_positions: 16,
            head_dim: 8,
            dropout: 0.0,
            head: HeadKind::RBertCnn,
            ..ModelConfig::new(32)
        }
    }

    fn grads_like(cfg: &ModelConfig, fill: impl Fn(usize) -> f64) -> Params {
        let mut g = Params::zeros(cfg);
        let mut i = 0;
        for t in g.tensors_mut() {
            for v in t.data.iter_mut() {
                *v = fill(i);
                i += 1;
            }
        }
        g
    }

    #[test]
    fn clip_scales_when_norm_exceeds_bound() {
        let cfg = cfg_for_test();
        let mut g = Params::zeros(&cfg);
        {
            let mut ts = g.tensors_mut();
            ts[0].data[0] = 2.0; // global norm 2
        }
        let norm = clip_global_norm(&mut g, 1.0).unwrap();
        assert_eq!(norm, 2.0);
        assert_eq!(g.tensors()[0].data[0], 1.0);
    }

    #[test]
    fn clip_noop_below_bound() {
        let cfg = cfg_for_test();
        let mut g = Params::zeros(&cfg);
        {
            let mut ts = g.tensors_mut();
            ts[0].data[0] = 0.5;
        }
        clip_global_norm(&mut g, 1.0).unwrap();
        assert_eq!(g.tensors()[0].data[0], 0.5);
    }

    #[test]
    fn clip_bound_holds_over_random_gradients() {
        let cfg = cfg_for_test();
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        for _ in 0..1000 {
            let mut g = grads_like(&cfg, |_| 0.0);
            for t in g.tensors_mut() {
                for v in t.data.iter_mut() {
                    *v = rng.gen::<f64>() * 2.0 - 1.0;
                }
            }
            clip_global_norm(&mut g, 1.0).unwrap();
            let norm: f64 = g
                .tensors()
                .iter()
                .flat_map(|t| t.data.iter())
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            assert!(norm <= 1.0 + 1e-12, "norm {norm}");
        }
    }

    #[test]
    fn clip_rejects_non_finite() {
        let cfg = cfg_for_test();
        let mut g = Params::zeros(&cfg);
        {
            let mut ts = g.tensors_mut();
            ts[0].data[0] = f64::NAN;
        }
        assert!(matches!(clip_global_norm(&mut g, 1.0), Err(TrainError::NonFiniteGradient)));
    }

    #[test]
    fn adam_first_step_closed_form() {
        let cfg = cfg_for_test();
        let mut params = Params::zeros(&cfg);
        let grads = grads_like(&cfg, |_| 1.0);
        let mut opt = OptState::new(&cfg);
        let tc = TrainConfig::default();
        adam_step(&mut params, &grads, &mut opt, &tc);
        // m̂ = v̂ = 1 at step one, so the update is -lr/(1+ε)
        let expect = -3e-5 / (1.0 + 1e-8);
        for t in params.tensors() {
            for v in t.data {
                assert!((v - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let cfg = cfg_for_test();
        let mut params = init_params(&cfg, 1).unwrap();
        let before = params.clone();
        let grads = Params::zeros(&cfg);
        let mut opt = OptState::new(&cfg);
        adam_step(&mut params, &grads, &mut opt, &TrainConfig::default());
        assert_eq!(params, before);
    }

    #[test]
    fn adam_is_deterministic() {
        let cfg = cfg_for_test();
        let tc = TrainConfig::default();
        let run = || {
            let mut params = init_params(&cfg, 2).unwrap();
            let mut opt = OptState::new(&cfg);
            for s in 0..5 {
                let grads = grads_like(&cfg, |i| ((i + s) % 7) as f64 * 0.1 - 0.3);
                adam_step(&mut params, &grads, &mut opt, &tc);
            }
            params
        };
        assert_eq!(run(), run());
    }

    fn synthetic_examples(n: usize) -> Vec<EncodedExample> {
        (0..n)
            .map(|i| {
                let c = i % 11;
                EncodedExample {
                    ids: vec![1, 4, 4 + c as u32, 4, 15 + c as u32, 5, 5 + c as u32, 5, 2],
                    chem_tok_span: Span::new(1, 4),
                    prot_tok_span: Span::new(5, 8),
                    label_id: c,
                    pmid: format!("p{i}"),
                    chem_eid: "T1".into(),
                    prot_eid: "T2".into(),
                }
            })
            .collect()
    }

    fn tiny_vocab() -> Vocabulary {
        let ex = crate::preprocess::RelationExample {
            pmid: "1".into(),
            chem_eid: "T1".into(),
            prot_eid: "T2".into(),
            tagged_text: "$a$ x #b#".into(),
            label: RelationLabel::Other,
            chem_char_span: Span::new(0, 3),
            prot_char_span: Span::new(6, 9),
        };
        crate::tokenizer::build_vocab(std::slice::from_ref(&ex), 1).unwrap()
    }

    #[test]
    fn loss_descends_on_fixed_batch() {
        let cfg = cfg_for_test();
        let tc = TrainConfig { dropout: 0.0, learning_rate: 1e-3, ..TrainConfig::default() };
        let examples = synthetic_examples(8);
        let mut params = init_params(&cfg, 3).unwrap();
        let mut opt = OptState::new(&cfg);
        let initial = loss_and_grad(&params, &cfg, &examples, None).unwrap().loss;
        for _ in 0..50 {
            let res = loss_and_grad(&params, &cfg, &examples, None).unwrap();
            let mut grads = res.grads;
            clip_global_norm(&mut grads, tc.max_grad_norm).unwrap();
            adam_step(&mut params, &grads, &mut opt, &tc);
        }
        let fin = loss_and_grad(&params, &cfg, &examples, None).unwrap().loss;
        assert!(fin < initial, "no descent: {initial} -> {fin}");
    }

    #[test]
    fn zero_epochs_returns_initial_params() {
        let cfg = cfg_for_test();
        let tc = TrainConfig { epochs: 0, dropout: 0.0, ..TrainConfig::default() };
        let examples = synthetic_examples(4);
        let out = train(&examples, &cfg, &tc, &tiny_vocab(), 16).unwrap();
        let mut expect_cfg = cfg.clone();
        expect_cfg.dropout = 0.0;
        let expect = init_params(&expect_cfg, tc.seed).unwrap();
        assert_eq!(out.checkpoint.params, expect);
        assert!(out.epochs.is_empty());
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let cfg = cfg_for_test();
        let tc = TrainConfig { epochs: 2, batch_size: 4, dropout: 0.2, ..TrainConfig::default() };
        let examples = synthetic_examples(12);
        let a = train(&examples, &cfg, &tc, &tiny_vocab(), 16).unwrap();
        let b = train(&examples, &cfg, &tc, &tiny_vocab(), 16).unwrap();
        assert_eq!(a.checkpoint.params, b.checkpoint.params);
        assert_eq!(a.epochs, b.epochs);
    }

    #[test]
    fn epoch_log_line_format() {
        let s = EpochStats { epoch: 3, mean_loss: 2.397895, train_acc: 0.09375 };
        assert_eq!(s.log_line(), "epoch 3\tloss 2.397895\ttrain_acc 0.0938");
    }
}

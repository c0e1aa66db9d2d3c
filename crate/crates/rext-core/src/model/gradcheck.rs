//! Central finite-difference verification of the analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::forward::{cross_entropy_from_logits, forward};
use super::{loss_and_grad, ModelConfig, ModelError, Params};
use crate::tokenizer::EncodedExample;

/// `|a - n| / max(|a|, |n|, 1e-3)`: relative where gradients are sizable,
/// absolute against a 1e-3 floor where both are tiny (central differences
/// carry ~1e-8 of evaluation noise at eps 1e-4).
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

fn eval_loss(params: &Params, cfg: &ModelConfig, ex: &EncodedExample) -> Result<f64, ModelError> {
    let trace = forward(params, cfg, ex, None)?;
    Ok(cross_entropy_from_logits(&trace.logits, ex.label_id))
}

pub(crate) fn fd_error_for_coords(
    params: &Params,
    cfg: &ModelConfig,
    ex: &EncodedExample,
    eps: f64,
    analytic: &Params,
    coords: &[(usize, usize)],
) -> Result<f64, ModelError> {
    let mut work = params.clone();
    let analytic_tensors = analytic.tensors();
    let mut max_err: f64 = 0.0;
    for &(ti, ei) in coords {
        let orig = {
            let mut ts = work.tensors_mut();
            let v = ts[ti].data[ei];
            ts[ti].data[ei] = v + eps;
            v
        };
        let f_plus = eval_loss(&work, cfg, ex)?;
        {
            let mut ts = work.tensors_mut();
            ts[ti].data[ei] = orig - eps;
        }
        let f_minus = eval_loss(&work, cfg, ex)?;
        {
            let mut ts = work.tensors_mut();
            ts[ti].data[ei] = orig;
        }
        let numeric = (f_plus - f_minus) / (2.0 * eps);
        let err = rel_err(analytic_tensors[ti].data[ei], numeric);
        if err > max_err {
            max_err = err;
        }
    }
    Ok(max_err)
}

/// Compare analytic gradients against central finite differences on at
/// least `min_coords` sampled coordinates, covering every named tensor.
/// Requires dropout disabled; returns the maximum relative error.
pub fn grad_check(
    params: &Params,
    cfg: &ModelConfig,
    ex: &EncodedExample,
    eps: f64,
    min_coords: usize,
    seed: u64,
) -> Result<f64, ModelError> {
    if !(eps > 0.0) {
        return Err(ModelError::BadEps(eps));
    }
    if cfg.dropout != 0.0 {
        return Err(ModelError::BadConfig("grad_check requires dropout 0".into()));
    }

    let analytic = loss_and_grad(params, cfg, std::slice::from_ref(ex), None)?.grads;

    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.data.len()).collect();
    let n_tensors = sizes.len();
    let per_tensor = min_coords.div_ceil(n_tensors).max(1);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords = Vec::new();
    for (ti, &len) in sizes.iter().enumerate() {
        for _ in 0..per_tensor.min(len) {
            coords.push((ti, rng.gen_range(0..len)));
        }
    }
    while coords.len() < min_coords {
        let ti = rng.gen_range(0..n_tensors);
        coords.push((ti, rng.gen_range(0..sizes[ti])));
    }

    fd_error_for_coords(params, cfg, ex, eps, &analytic, &coords)
}

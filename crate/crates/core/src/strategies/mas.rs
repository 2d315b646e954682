//! Memory aware synapses: importance is the batch-averaged absolute gradient
//! of the squared logit norms of both heads.

use super::penalty::{quadratic_penalty, Penalty};
use super::ClState;
use crate::error::{contract, Result};
use crate::model::HybridModel;
use crate::num::ModelParams;
use crate::synth::Utterance;

/// Value and parameter gradient of
/// `(1 - a) * mean_b ||z_rnnt||^2 + a * mean_b ||z_ctc||^2` over one batch.
pub fn mas_logit_objective(
    model: &HybridModel,
    batch: &[&Utterance],
    alpha_ctx: f64,
) -> Result<(f64, ModelParams)> {
    if batch.is_empty() {
        return Err(contract("mas objective over an empty batch"));
    }
    let b = batch.len() as f64;
    let (w_rnnt, w_ctc) = ((1.0 - alpha_ctx) / b, alpha_ctx / b);
    let mut value = 0.0;
    let mut grads = model.params().zeros_like();
    for u in batch {
        let trace = model.forward(&u.features, &u.targets)?;
        let z_ctc = &trace.ctc.logits;
        let z_rnnt = &trace.joint.head.logits;
        let sq = |t: &crate::num::Tensor| t.data().iter().map(|x| x * x).sum::<f64>();
        value += w_rnnt * sq(z_rnnt) + w_ctc * sq(z_ctc);
        let d_ctc = (w_ctc != 0.0).then(|| z_ctc.map(|z| 2.0 * w_ctc * z));
        let d_rnnt = (w_rnnt != 0.0).then(|| z_rnnt.map(|z| 2.0 * w_rnnt * z));
        let g = model.backward(&trace, d_ctc.as_ref(), d_rnnt.as_ref())?;
        grads.axpy(1.0, &g)?;
    }
    Ok((value, grads))
}

/// Mean over batches of `|grad|`.
pub fn importance_from_batch_gradients<I>(grads: I) -> Result<ModelParams>
where
    I: IntoIterator<Item = Result<ModelParams>>,
{
    let mut acc: Option<ModelParams> = None;
    let mut batches = 0usize;
    for g in grads {
        let abs = g?.map(f64::abs);
        match acc.as_mut() {
            None => acc = Some(abs),
            Some(a) => a.axpy(1.0, &abs)?,
        }
        batches += 1;
    }
    let mut omega = acc.ok_or_else(|| contract("mas importance over an empty dataset"))?;
    omega.scale(1.0 / batches as f64);
    Ok(omega)
}

/// Importance contributed by one task's data (not yet added to prior tasks').
pub fn mas_estimate_importance(
    model: &HybridModel,
    data: &[&Utterance],
    alpha_ctx: f64,
    batch_size: usize,
) -> Result<ModelParams> {
    if batch_size == 0 {
        return Err(contract("batch size must be >= 1"));
    }
    importance_from_batch_gradients(
        data.chunks(batch_size)
            .map(|batch| mas_logit_objective(model, batch, alpha_ctx).map(|(_, g)| g)),
    )
}

pub fn mas_penalty(params: &ModelParams, state: &ClState) -> Result<Penalty> {
    let (anchor, omega) = match (&state.anchor, &state.importance) {
        (Some(a), Some(o)) => (a, o),
        _ => return Err(contract("mas penalty needs an anchor and importance weights")),
    };
    quadratic_penalty(params, anchor, omega, state.hyper.lambda_mas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, PRED_EMBED, PRED_PROJ_W};
    use crate::num::{finite_diff_gradient, max_relative_error, Tensor};
    use crate::synth::{build_task, SynthConfig};

    #[test]
    fn scalar_linear_output() {
        // z = w x with w = 2, x = 3: L = z^2 = 36, dL/dw = 2 z x = 36
        let (w, x) = (2.0, 3.0);
        let z: f64 = w * x;
        let mut g = ModelParams::new();
        g.insert("w", Tensor::scalar(2.0 * z * x));
        assert_eq!(z * z, 36.0);
        let omega = importance_from_batch_gradients([Ok(g)]).unwrap();
        assert_eq!(omega.get("w").unwrap().data(), &[36.0]);
    }

    fn small_task() -> Vec<Utterance> {
        let cfg = SynthConfig {
            feat_dim: 4,
            num_symbols: 3,
            u_max: 3,
            train_clean: 6,
            train_noisy: 2,
            ..Default::default()
        };
        build_task(1, 3, &cfg).unwrap().train
    }

    fn small_model() -> HybridModel {
        let cfg = ModelConfig {
            feat_dim: 4,
            hidden_dim: 5,
            vocab_size: 4,
            conv_kernel: 3,
        };
        HybridModel::init(cfg, 6).unwrap()
    }

    #[test]
    fn ctc_only_weighting_leaves_prediction_network_unimportant() {
        let data = small_task();
        let refs: Vec<&Utterance> = data.iter().collect();
        let omega = mas_estimate_importance(&small_model(), &refs, 1.0, 4).unwrap();
        for name in [PRED_EMBED, PRED_PROJ_W, "joint.out.w"] {
            assert!(omega.get(name).unwrap().data().iter().all(|&x| x == 0.0), "{name}");
        }
        assert!(omega.get("ctc.w").unwrap().data().iter().any(|&x| x > 0.0));
    }

    #[test]
    fn repeated_batches_do_not_scale_importance() {
        let data = small_task();
        let once: Vec<&Utterance> = data.iter().take(4).collect();
        let twice: Vec<&Utterance> = once.iter().chain(once.iter()).copied().collect();
        let m = small_model();
        let a = mas_estimate_importance(&m, &once, 0.3, 4).unwrap();
        let b = mas_estimate_importance(&m, &twice, 0.3, 4).unwrap();
        let worst = max_relative_error(&a, &b, 1e-300).unwrap();
        assert!(worst.rel_error < 1e-14, "{worst:?}");
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let data = small_task();
        let batch: Vec<&Utterance> = data.iter().take(3).collect();
        let m = small_model();
        let (_, analytic) = mas_logit_objective(&m, &batch, 0.3).unwrap();
        let numeric = finite_diff_gradient(
            |p| mas_logit_objective(&m.with_params(p.clone()).unwrap(), &batch, 0.3).unwrap().0,
            m.params(),
            1e-5,
        )
        .unwrap();
        assert!(max_relative_error(&analytic, &numeric, 1e-6).unwrap().rel_error < 1e-4);
    }

    #[test]
    fn importance_is_nonnegative() {
        let data = small_task();
        let refs: Vec<&Utterance> = data.iter().collect();
        let omega = mas_estimate_importance(&small_model(), &refs, 0.3, 3).unwrap();
        assert!(omega.iter().all(|(_, t)| t.data().iter().all(|&x| x >= 0.0)));
        assert!(mas_estimate_importance(&small_model(), &[], 0.3, 3).is_err());
    }
}

//! Learning without forgetting: distill the frozen previous-task model's
//! outputs on current-task inputs, separately for each head.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::model::{ForwardTrace, HybridModel};
use crate::num::{ModelParams, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistillKind {
    /// Row-wise KL(frozen || current), temperature 1.
    #[default]
    Kl,
    /// Mean squared error between raw logits.
    Mse,
}

impl DistillKind {
    pub fn name(&self) -> &'static str {
        match self {
            DistillKind::Kl => "kl",
            DistillKind::Mse => "mse",
        }
    }
}

impl std::str::FromStr for DistillKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kl" => Ok(DistillKind::Kl),
            "mse" => Ok(DistillKind::Mse),
            other => Err(crate::Error::Config(format!("unknown distill kind {other:?}"))),
        }
    }
}

/// Distillation term for one head and its gradient on the current logits.
///
/// KL is averaged over rows (frames or lattice nodes); MSE over every element.
pub fn head_distill(
    current: &crate::model::HeadTrace,
    frozen: &crate::model::HeadTrace,
    kind: DistillKind,
) -> Result<(f64, Tensor)> {
    if current.logits.shape() != frozen.logits.shape() {
        return Err(contract(format!(
            "distillation shape mismatch: {:?} vs {:?}",
            current.logits.shape(),
            frozen.logits.shape()
        )));
    }
    let shape = current.logits.shape();
    let v = *shape.last().expect("logits have a symbol axis");
    let mut grad = Tensor::zeros(shape);
    match kind {
        DistillKind::Kl => {
            let rows = current.log_probs.len() / v;
            let inv = 1.0 / rows as f64;
            let mut value = 0.0;
            let lc = current.log_probs.data().chunks(v);
            let lf = frozen.log_probs.data().chunks(v);
            for ((c, f), g) in lc.zip(lf).zip(grad.data_mut().chunks_mut(v)) {
                for j in 0..v {
                    let pf = f[j].exp();
                    if pf > 0.0 {
                        value += pf * (f[j] - c[j]);
                    }
                    g[j] = (c[j].exp() - pf) * inv;
                }
            }
            Ok((value * inv, grad))
        }
        DistillKind::Mse => {
            let n = current.logits.len() as f64;
            let mut value = 0.0;
            let pairs = current.logits.data().iter().zip(frozen.logits.data());
            for ((zc, zf), g) in pairs.zip(grad.data_mut()) {
                let d = zc - zf;
                value += d * d;
                *g = 2.0 * d / n;
            }
            Ok((value / n, grad))
        }
    }
}

/// Mixed distillation pieces at the logit level, already weighted by
/// `(1 - alpha_ctx)` for the joint head and `alpha_ctx` for the CTC head.
#[derive(Debug, Clone, PartialEq)]
pub struct DistillTerms {
    pub value: f64,
    pub rnnt: f64,
    pub ctc: f64,
    pub d_ctc_logits: Tensor,
    pub d_joint_logits: Tensor,
}

pub fn distill_terms(
    current: &ForwardTrace,
    frozen: &ForwardTrace,
    alpha_ctx: f64,
    kind: DistillKind,
) -> Result<DistillTerms> {
    let (rnnt, mut d_joint) = head_distill(&current.joint.head, &frozen.joint.head, kind)?;
    let (ctc, mut d_ctc) = head_distill(&current.ctc, &frozen.ctc, kind)?;
    d_joint.scale(1.0 - alpha_ctx);
    d_ctc.scale(alpha_ctx);
    Ok(DistillTerms {
        value: (1.0 - alpha_ctx) * rnnt + alpha_ctx * ctc,
        rnnt,
        ctc,
        d_ctc_logits: d_ctc,
        d_joint_logits: d_joint,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillLoss {
    pub value: f64,
    pub rnnt: f64,
    pub ctc: f64,
    pub grads: ModelParams,
}

/// Distillation loss of `current` towards `frozen` on one utterance.
/// Gradients are with respect to `current` only.
pub fn lwf_distill_loss(
    current: &HybridModel,
    frozen: &HybridModel,
    features: &Tensor,
    targets: &[usize],
    alpha_ctx: f64,
    kind: DistillKind,
) -> Result<DistillLoss> {
    if current.config() != frozen.config() {
        return Err(contract("frozen model has a different configuration"));
    }
    let trace = current.forward(features, targets)?;
    let teacher = frozen.forward(features, targets)?;
    let t = distill_terms(&trace, &teacher, alpha_ctx, kind)?;
    let grads = current.backward(&trace, Some(&t.d_ctc_logits), Some(&t.d_joint_logits))?;
    Ok(DistillLoss {
        value: t.value,
        rnnt: t.rnnt,
        ctc: t.ctc,
        grads,
    })
}

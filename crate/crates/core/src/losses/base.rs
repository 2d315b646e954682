use serde::{Deserialize, Serialize};

use super::{ctc_loss, rnnt_loss};
use crate::error::{Error, Result};
use crate::model::{ForwardTrace, HybridModel, BLANK_ID};
use crate::num::{ModelParams, Tensor};

/// Mixing of the two heads: `(1 - w_ctc) * L_rnnt + w_ctc * L_ctc`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_ctc: f64,
    /// Drop the CTC term (and flag it) instead of failing on infeasible input.
    pub skip_infeasible_ctc: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_ctc: 0.3,
            skip_infeasible_ctc: true,
        }
    }
}

impl LossWeights {
    pub fn w_rnnt(&self) -> f64 {
        1.0 - self.w_ctc
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaseLoss {
    pub value: f64,
    pub rnnt: f64,
    /// `None` when the CTC term was skipped as infeasible.
    pub ctc: Option<f64>,
    pub grads: ModelParams,
}

impl BaseLoss {
    pub fn ctc_skipped(&self) -> bool {
        self.ctc.is_none()
    }
}

/// Logit-level pieces of the hybrid loss for one forward trace, already scaled
/// by the head weights. Callers may add further logit gradients before a
/// single backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseTerms {
    pub value: f64,
    pub rnnt: f64,
    pub ctc: Option<f64>,
    pub d_ctc_logits: Option<Tensor>,
    pub d_joint_logits: Tensor,
}

pub fn base_terms(trace: &ForwardTrace, targets: &[usize], weights: &LossWeights) -> Result<BaseTerms> {
    let rnnt = rnnt_loss(&trace.joint.head.log_probs, targets, BLANK_ID)?;
    let ctc = match ctc_loss(&trace.ctc.log_probs, targets, BLANK_ID) {
        Ok(r) => Some(r),
        Err(Error::Infeasible { .. }) if weights.skip_infeasible_ctc => None,
        Err(e) => return Err(e),
    };
    let w_rnnt = weights.w_rnnt();
    let mut d_joint_logits = rnnt.logit_grads;
    d_joint_logits.scale(w_rnnt);
    let mut value = w_rnnt * rnnt.value;
    let d_ctc_logits = ctc.as_ref().map(|c| {
        value += weights.w_ctc * c.value;
        let mut g = c.logit_grads.clone();
        g.scale(weights.w_ctc);
        g
    });
    Ok(BaseTerms {
        value,
        rnnt: rnnt.value,
        ctc: ctc.map(|c| c.value),
        d_ctc_logits,
        d_joint_logits,
    })
}

/// Hybrid loss for one utterance with gradients for every parameter,
/// backpropagated through both heads into the shared encoder.
pub fn base_loss(
    model: &HybridModel,
    features: &Tensor,
    targets: &[usize],
    weights: &LossWeights,
) -> Result<BaseLoss> {
    let trace = model.forward(features, targets)?;
    let terms = base_terms(&trace, targets, weights)?;
    let grads = model.backward(&trace, terms.d_ctc_logits.as_ref(), Some(&terms.d_joint_logits))?;
    Ok(BaseLoss {
        value: terms.value,
        rnnt: terms.rnnt,
        ctc: terms.ctc,
        grads,
    })
}

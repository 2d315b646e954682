//! Sequential-training strategies: naive fine-tuning, EWC, MAS and LwF.
//!
//! A [`ClState`] carries everything a method needs from earlier tasks.
//! [`total_loss`] produces the objective for one minibatch of the current
//! task and [`end_of_task_update`] refreshes the state once a task is done.

mod ewc;
mod lwf;
mod mas;
mod penalty;
mod state_io;

use serde::{Deserialize, Serialize};

pub use ewc::{ewc_consolidate, ewc_estimate_fisher, ewc_penalty, fisher_from_gradients};
pub use lwf::{distill_terms, head_distill, lwf_distill_loss, DistillKind, DistillLoss, DistillTerms};
pub use mas::{importance_from_batch_gradients, mas_estimate_importance, mas_logit_objective, mas_penalty};
pub use penalty::{quadratic_penalty, Penalty};
pub use state_io::{load_cl_state, read_cl_state, save_cl_state, write_cl_state};

use crate::error::{contract, Error, Result};
use crate::losses::{base_terms, LossWeights};
use crate::model::HybridModel;
use crate::num::ModelParams;
use crate::synth::Utterance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Naive,
    Ewc,
    Mas,
    Lwf,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Naive, Method::Ewc, Method::Mas, Method::Lwf];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Naive => "naive",
            Method::Ewc => "ewc",
            Method::Mas => "mas",
            Method::Lwf => "lwf",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

/// Regularization hyperparameters.
///
/// `alpha_ctx` is shared: LwF uses it to mix the two distillation heads and
/// MAS uses it to mix the two logit norms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClHyper {
    pub lambda_ewc: f64,
    pub gamma: f64,
    pub lambda_mas: f64,
    pub alpha_ctx: f64,
    pub alpha_kd: f64,
    pub distill_kind: DistillKind,
}

impl Default for ClHyper {
    fn default() -> Self {
        Self {
            lambda_ewc: 10.0,
            gamma: 1.0,
            lambda_mas: 1.0,
            alpha_ctx: 0.3,
            alpha_kd: 0.1,
            distill_kind: DistillKind::Kl,
        }
    }
}

impl ClHyper {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("lambda_ewc", self.lambda_ewc),
            ("gamma", self.gamma),
            ("lambda_mas", self.lambda_mas),
        ];
        for (name, x) in nonneg {
            if !(x.is_finite() && x >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {x}")));
            }
        }
        for (name, x) in [("alpha_ctx", self.alpha_ctx), ("alpha_kd", self.alpha_kd)] {
            if !(0.0..=1.0).contains(&x) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {x}")));
            }
        }
        Ok(())
    }
}

/// State carried across tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct ClState {
    pub method: Method,
    pub hyper: ClHyper,
    /// Parameters at the end of the previous task.
    pub anchor: Option<ModelParams>,
    /// Consolidated Fisher (EWC) or accumulated importance (MAS).
    pub importance: Option<ModelParams>,
    /// End-of-previous-task model (LwF).
    pub frozen: Option<HybridModel>,
    pub tasks_seen: usize,
}

impl ClState {
    pub fn new(method: Method, hyper: ClHyper) -> Self {
        Self {
            method,
            hyper,
            anchor: None,
            importance: None,
            frozen: None,
            tasks_seen: 0,
        }
    }

    /// Checks the per-method presence rules and that stored tensors mirror
    /// `params`.
    pub fn check(&self, params: &ModelParams) -> Result<()> {
        self.hyper.validate()?;
        if self.tasks_seen == 0 {
            return Ok(());
        }
        let anchor = self
            .anchor
            .as_ref()
            .ok_or_else(|| contract("state after a task must hold an anchor"))?;
        params.check_layout(anchor, "anchor")?;
        match self.method {
            Method::Ewc | Method::Mas => {
                let imp = self
                    .importance
                    .as_ref()
                    .ok_or_else(|| contract(format!("{} state is missing importance", self.method)))?;
                params.check_layout(imp, "importance")?;
            }
            Method::Lwf => {
                let frozen = self
                    .frozen
                    .as_ref()
                    .ok_or_else(|| contract("lwf state is missing the frozen model"))?;
                params.check_layout(frozen.params(), "frozen model")?;
            }
            Method::Naive => {}
        }
        Ok(())
    }
}

/// Objective for one minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub value: f64,
    /// Batch-mean hybrid loss.
    pub base: f64,
    /// Penalty (EWC/MAS) or batch-mean distillation loss (LwF); 0 otherwise.
    pub regularizer: f64,
    pub grads: ModelParams,
    /// Utterances whose CTC term was dropped as infeasible.
    pub ctc_skipped: usize,
}

/// Total loss and gradients over a minibatch, averaged over utterances.
///
/// On the first task, or when the method's strength is zero, the result is
/// computed by the exact same operations as naive fine-tuning.
pub fn total_loss(
    model: &HybridModel,
    batch: &[&Utterance],
    state: &ClState,
    weights: &LossWeights,
) -> Result<Objective> {
    if batch.is_empty() {
        return Err(contract("total loss over an empty batch"));
    }
    let hyper = &state.hyper;
    let teacher = match (state.method, &state.frozen) {
        (Method::Lwf, Some(f)) if hyper.alpha_kd != 0.0 => Some(f),
        _ => None,
    };
    let inv_b = 1.0 / batch.len() as f64;
    let mut grads = model.params().zeros_like();
    let (mut base, mut distill, mut ctc_skipped) = (0.0, 0.0, 0usize);
    for u in batch {
        let trace = model.forward(&u.features, &u.targets)?;
        let terms = base_terms(&trace, &u.targets, weights)?;
        ctc_skipped += usize::from(terms.ctc.is_none());
        base += terms.value;
        let (d_ctc, d_joint) = match teacher {
            None => (terms.d_ctc_logits, terms.d_joint_logits),
            Some(frozen) => {
                let t_trace = frozen.forward(&u.features, &u.targets)?;
                let d = distill_terms(&trace, &t_trace, hyper.alpha_ctx, hyper.distill_kind)?;
                distill += d.value;
                let kd = hyper.alpha_kd;
                let mut d_ctc = d.d_ctc_logits;
                d_ctc.scale(kd);
                if let Some(b) = &terms.d_ctc_logits {
                    d_ctc.axpy(1.0 - kd, b)?;
                }
                let mut d_joint = d.d_joint_logits;
                d_joint.scale(kd);
                d_joint.axpy(1.0 - kd, &terms.d_joint_logits)?;
                (Some(d_ctc), d_joint)
            }
        };
        let g = model.backward(&trace, d_ctc.as_ref(), Some(&d_joint))?;
        grads.axpy(inv_b, &g)?;
    }
    base *= inv_b;
    let mut value = base;
    let mut regularizer = 0.0;
    if teacher.is_some() {
        regularizer = distill * inv_b;
        value = (1.0 - hyper.alpha_kd) * base + hyper.alpha_kd * regularizer;
    }
    let penalty = match state.method {
        Method::Ewc if state.anchor.is_some() && hyper.lambda_ewc != 0.0 => {
            Some(ewc_penalty(model.params(), state)?)
        }
        Method::Mas if state.anchor.is_some() && hyper.lambda_mas != 0.0 => {
            Some(mas_penalty(model.params(), state)?)
        }
        _ => None,
    };
    if let Some(p) = penalty {
        grads.axpy(1.0, &p.grads)?;
        regularizer = p.value;
        value = base + p.value;
    }
    Ok(Objective {
        value,
        base,
        regularizer,
        grads,
        ctc_skipped,
    })
}

/// Refreshes `state` after training on one task's `data`.
///
/// `batch_size` is the minibatch size used for the MAS importance pass.
pub fn end_of_task_update(
    state: &mut ClState,
    model: &HybridModel,
    data: &[&Utterance],
    weights: &LossWeights,
    batch_size: usize,
) -> Result<()> {
    state.hyper.validate()?;
    match state.method {
        Method::Naive => {}
        Method::Ewc => {
            let f_k = ewc_estimate_fisher(model, data, weights)?;
            state.importance = Some(ewc_consolidate(state.importance.as_ref(), &f_k, state.hyper.gamma)?);
        }
        Method::Mas => {
            let omega_k = mas_estimate_importance(model, data, state.hyper.alpha_ctx, batch_size)?;
            state.importance = Some(match state.importance.take() {
                None => omega_k,
                Some(mut prev) => {
                    prev.axpy(1.0, &omega_k)?;
                    prev
                }
            });
        }
        Method::Lwf => state.frozen = Some(model.clone()),
    }
    state.anchor = Some(model.snapshot());
    state.tasks_seen += 1;
    Ok(())
}

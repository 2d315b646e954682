//! Elastic weight consolidation: diagonal Fisher from per-utterance gradients,
//! consolidated across tasks with a decay factor.

use super::penalty::{quadratic_penalty, Penalty};
use super::ClState;
use crate::error::{contract, Result};
use crate::losses::{base_loss, LossWeights};
use crate::model::HybridModel;
use crate::num::ModelParams;
use crate::synth::Utterance;

/// Mean of elementwise squared gradients.
pub fn fisher_from_gradients<I>(grads: I) -> Result<ModelParams>
where
    I: IntoIterator<Item = Result<ModelParams>>,
{
    let mut acc: Option<ModelParams> = None;
    let mut n = 0usize;
    for g in grads {
        let sq = g?.map(|x| x * x);
        match acc.as_mut() {
            None => acc = Some(sq),
            Some(a) => a.axpy(1.0, &sq)?,
        }
        n += 1;
    }
    let mut f = acc.ok_or_else(|| contract("fisher estimate over an empty dataset"))?;
    f.scale(1.0 / n as f64);
    Ok(f)
}

/// Diagonal Fisher of the hybrid loss over `data`, batch size 1.
pub fn ewc_estimate_fisher(
    model: &HybridModel,
    data: &[&Utterance],
    weights: &LossWeights,
) -> Result<ModelParams> {
    fisher_from_gradients(
        data.iter()
            .map(|u| base_loss(model, &u.features, &u.targets, weights).map(|b| b.grads)),
    )
}

/// `gamma * previous + current`; with no previous task the result is `current`.
pub fn ewc_consolidate(
    previous: Option<&ModelParams>,
    current: &ModelParams,
    gamma: f64,
) -> Result<ModelParams> {
    match previous {
        None => Ok(current.clone()),
        Some(prev) => prev.zip_map(current, |p, c| gamma * p + c),
    }
}

pub fn ewc_penalty(params: &ModelParams, state: &ClState) -> Result<Penalty> {
    let (anchor, fisher) = match (&state.anchor, &state.importance) {
        (Some(a), Some(f)) => (a, f),
        _ => return Err(contract("ewc penalty needs an anchor and a consolidated Fisher")),
    };
    quadratic_penalty(params, anchor, fisher, state.hyper.lambda_ewc)
}

//! Greedy (best-path) decoding for both heads.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::model::{contexts_for, HybridModel, BLANK_ID};
use crate::num::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodePath {
    Ctc,
    Rnnt,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hypothesis {
    pub symbols: Vec<usize>,
    pub path: DecodePath,
}

pub const DEFAULT_MAX_SYMBOLS_PER_FRAME: usize = 10;

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Per-frame argmax, then collapse repeats and drop blanks.
pub fn ctc_greedy_decode(log_probs: &Tensor, blank: usize) -> Result<Hypothesis> {
    if log_probs.shape().len() != 2 || log_probs.dim(1) == 0 {
        return Err(contract(format!(
            "ctc_greedy_decode expects [T x V], got {:?}",
            log_probs.shape()
        )));
    }
    let mut symbols = Vec::new();
    let mut prev = None;
    for t in 0..log_probs.dim(0) {
        let best = argmax(log_probs.row(t));
        if best != blank && prev != Some(best) {
            symbols.push(best);
        }
        prev = Some(best);
    }
    Ok(Hypothesis {
        symbols,
        path: DecodePath::Ctc,
    })
}

/// Frame-synchronous greedy transducer search: at each frame keep emitting
/// the argmax label (updating the context) until blank wins or the
/// per-frame cap is hit.
pub fn rnnt_greedy_decode(
    model: &HybridModel,
    encoded: &Tensor,
    max_symbols_per_frame: usize,
) -> Result<Hypothesis> {
    if max_symbols_per_frame == 0 {
        return Err(contract("max_symbols_per_frame must be >= 1"));
    }
    if encoded.shape().len() != 2 || encoded.dim(1) != model.config().hidden_dim {
        return Err(contract(format!(
            "encoded frames must be [T x {}], got {:?}",
            model.config().hidden_dim,
            encoded.shape()
        )));
    }
    let mut symbols = Vec::new();
    let mut context = BLANK_ID;
    for t in 0..encoded.dim(0) {
        let frame = encoded.row(t);
        for _ in 0..max_symbols_per_frame {
            let best = argmax(&model.joint_step(frame, context)?);
            if best == BLANK_ID {
                break;
            }
            symbols.push(best);
            context = best;
        }
    }
    debug_assert_eq!(contexts_for(&symbols).len(), symbols.len() + 1);
    Ok(Hypothesis {
        symbols,
        path: DecodePath::Rnnt,
    })
}

/// Decodes one utterance with both heads: `(ctc, rnnt)`.
pub fn decode_both(
    model: &HybridModel,
    features: &Tensor,
    max_symbols_per_frame: usize,
) -> Result<(Hypothesis, Hypothesis)> {
    let encoded = model.encode(features)?;
    let ctc = ctc_greedy_decode(&model.ctc_log_probs(&encoded)?, BLANK_ID)?;
    let rnnt = rnnt_greedy_decode(model, &encoded, max_symbols_per_frame)?;
    Ok((ctc, rnnt))
}

//! [`ClState`] checkpoints in the shared tensor-record format (kind `S`).
//!
//! Records: `__meta__` holds `[method, lambda_ewc, gamma, lambda_mas,
//! alpha_ctx, alpha_kd, distill_kind, tasks_seen]`; then `anchor/*`,
//! `importance/*`, `frozen/__config__` and `frozen/*` as present.

use std::io::{Read, Write};
use std::path::Path;

use super::{ClHyper, ClState, DistillKind, Method};
use crate::checkpoint::{
    config_from_tensor, config_tensor, prefixed, read_records, write_atomic, write_records, KIND_CL_STATE,
};
use crate::error::{Error, Result};
use crate::model::HybridModel;
use crate::num::{ModelParams, Tensor};

const META: &str = "__meta__";
const FROZEN_CONFIG: &str = "frozen/__config__";

fn method_code(m: Method) -> f64 {
    Method::ALL.iter().position(|&x| x == m).expect("listed") as f64
}

pub fn write_cl_state<W: Write>(w: W, state: &ClState) -> Result<()> {
    let h = &state.hyper;
    let kind = match h.distill_kind {
        DistillKind::Kl => 0.0,
        DistillKind::Mse => 1.0,
    };
    let meta = Tensor::from_vec(
        &[8],
        vec![
            method_code(state.method),
            h.lambda_ewc,
            h.gamma,
            h.lambda_mas,
            h.alpha_ctx,
            h.alpha_kd,
            kind,
            state.tasks_seen as f64,
        ],
    )?;
    let frozen_cfg = state.frozen.as_ref().map(|f| config_tensor(f.config()));
    let mut records = vec![(META.to_string(), &meta)];
    if let Some(a) = &state.anchor {
        records.extend(prefixed("anchor/", a));
    }
    if let Some(i) = &state.importance {
        records.extend(prefixed("importance/", i));
    }
    if let (Some(f), Some(cfg)) = (&state.frozen, &frozen_cfg) {
        records.push((FROZEN_CONFIG.to_string(), cfg));
        records.extend(prefixed("frozen/", f.params()));
    }
    write_records(w, KIND_CL_STATE, &records)
}

pub fn read_cl_state<R: Read>(r: R) -> Result<ClState> {
    let mut meta = None;
    let mut frozen_cfg = None;
    let (mut anchor, mut importance, mut frozen) = (ModelParams::new(), ModelParams::new(), ModelParams::new());
    for (name, t) in read_records(r, KIND_CL_STATE)? {
        if name == META {
            meta = Some(t);
        } else if name == FROZEN_CONFIG {
            frozen_cfg = Some(config_from_tensor(&t)?);
        } else if let Some(n) = name.strip_prefix("anchor/") {
            anchor.insert(n, t);
        } else if let Some(n) = name.strip_prefix("importance/") {
            importance.insert(n, t);
        } else if let Some(n) = name.strip_prefix("frozen/") {
            frozen.insert(n, t);
        } else {
            return Err(Error::Format(format!("unexpected record {name:?}")));
        }
    }
    let meta = meta.ok_or_else(|| Error::Format("missing state metadata".into()))?;
    let m = meta.data();
    if m.len() != 8 {
        return Err(Error::Format("malformed state metadata".into()));
    }
    let method = *Method::ALL
        .get(m[0] as usize)
        .filter(|_| m[0].fract() == 0.0 && m[0] >= 0.0)
        .ok_or_else(|| Error::Format(format!("bad method code {}", m[0])))?;
    let distill_kind = match m[6] {
        0.0 => DistillKind::Kl,
        1.0 => DistillKind::Mse,
        x => return Err(Error::Format(format!("bad distill kind code {x}"))),
    };
    if m[7].fract() != 0.0 || m[7] < 0.0 {
        return Err(Error::Format("bad task count".into()));
    }
    let frozen = match (frozen_cfg, frozen.is_empty()) {
        (Some(cfg), false) => Some(HybridModel::from_params(cfg, frozen)?),
        (None, true) => None,
        _ => return Err(Error::Format("frozen model records are incomplete".into())),
    };
    let nonempty = |p: ModelParams| (!p.is_empty()).then_some(p);
    Ok(ClState {
        method,
        hyper: ClHyper {
            lambda_ewc: m[1],
            gamma: m[2],
            lambda_mas: m[3],
            alpha_ctx: m[4],
            alpha_kd: m[5],
            distill_kind,
        },
        anchor: nonempty(anchor),
        importance: nonempty(importance),
        frozen,
        tasks_seen: m[7] as usize,
    })
}

pub fn save_cl_state(path: &Path, state: &ClState) -> Result<()> {
    let mut buf = Vec::new();
    write_cl_state(&mut buf, state)?;
    write_atomic(path, &buf)
}

pub fn load_cl_state(path: &Path) -> Result<ClState> {
    read_cl_state(std::io::BufReader::new(std::fs::File::open(path)?))
}

//! The sequential training loop.

use std::path::Path;
use std::time::Instant;

use clasr_core::checkpoint::save_model;
use clasr_core::decoding::decode_both;
use clasr_core::losses::{base_terms, LossWeights};
use clasr_core::metrics::{wer, WerCell};
use clasr_core::num::{adam_step, AdamState, SeedStreams};
use clasr_core::strategies::{end_of_task_update, save_cl_state, total_loss, ClState};
use clasr_core::synth::Utterance;
use clasr_core::{Error, HybridModel};
use rand::seq::SliceRandom;

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::record::{RunRecord, CL_STATE_FILE, MODEL_FILE};
use crate::source::{Phase, SyntheticSource, TaskSource};

/// Runs `cfg` on freshly generated synthetic tasks and persists the record
/// (plus model and state checkpoints) under `cfg.run_dir()`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunRecord> {
    cfg.validate()?;
    let source = SyntheticSource::build(cfg)?;
    run_with_source(cfg, &source, Some(&cfg.run_dir()))
}

/// Runs `cfg` against `source`. With `out_dir`, the record is written after
/// every task so an interrupted run leaves a partial, incomplete record.
pub fn run_with_source(cfg: &ExperimentConfig, source: &dyn TaskSource, out_dir: Option<&Path>) -> Result<RunRecord> {
    cfg.validate()?;
    let streams = SeedStreams::new(cfg.global_seed);
    let mut model = HybridModel::init(cfg.model_config(), streams.derive_seed("model-init"))?;
    let mut state = ClState::new(cfg.method, cfg.hyper());
    let mut record = RunRecord::new(cfg.clone());

    for k in 1..=cfg.num_tasks {
        let started = Instant::now();
        if let Err(e) = run_task(cfg, source, &streams, k, &mut model, &mut state, &mut record) {
            return Err(abort(record, out_dir, k - 1, e));
        }
        record.wall_clock_secs.push(started.elapsed().as_secs_f64());
        record.complete = k == cfg.num_tasks;
        if let Some(dir) = out_dir {
            if let Err(e) = persist(dir, &record, &model, &state) {
                record.complete = false;
                return Err(abort(record, None, k, e));
            }
        }
    }
    Ok(record)
}

fn abort(mut record: RunRecord, out_dir: Option<&Path>, completed: usize, e: HarnessError) -> HarnessError {
    record.complete = false;
    if let Some(dir) = out_dir {
        // Best effort: the original error is what gets reported.
        let _ = record.save(dir);
    }
    HarnessError::Aborted {
        completed_tasks: completed,
        reason: e.to_string(),
        partial: Box::new(record),
    }
}

fn persist(dir: &Path, record: &RunRecord, model: &HybridModel, state: &ClState) -> Result<()> {
    record.save(dir)?;
    save_model(&dir.join(MODEL_FILE), model)?;
    save_cl_state(&dir.join(CL_STATE_FILE), state)?;
    Ok(())
}

fn run_task(
    cfg: &ExperimentConfig,
    source: &dyn TaskSource,
    streams: &SeedStreams,
    k: usize,
    model: &mut HybridModel,
    state: &mut ClState,
    record: &mut RunRecord,
) -> Result<()> {
    let task_id = cfg.task_at(k);
    let weights = cfg.loss_weights();

    source.enter(Phase::Train { position: k, task_id });
    let train = source.train(task_id)?;
    let val = source.val(task_id)?;
    let (train_curve, val_curve, skipped) = train_task(cfg, streams, k, model, state, train, val, &weights)?;
    record.train_loss.push(train_curve);
    record.val_loss.push(val_curve);
    record.ctc_skipped.push(skipped);

    source.enter(Phase::EndOfTask { position: k, task_id });
    let train: Vec<&Utterance> = source.train(task_id)?.iter().collect();
    end_of_task_update(state, model, &train, &weights, cfg.batch_size)?;

    source.enter(Phase::Eval { position: k });
    for (i, cell) in evaluate_matrix_row(cfg, model, source, k)?.into_iter().enumerate() {
        record.matrix.set(k, i + 1, cell)?;
    }
    record.refresh_summaries()
}

#[allow(clippy::too_many_arguments)]
fn train_task(
    cfg: &ExperimentConfig,
    streams: &SeedStreams,
    k: usize,
    model: &mut HybridModel,
    state: &ClState,
    train: &[Utterance],
    val: &[Utterance],
    weights: &LossWeights,
) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    let mut adam = AdamState::new(model.params(), cfg.learning_rate);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let (mut train_curve, mut val_curve) = (Vec::new(), Vec::new());
    let mut skipped = 0;
    for epoch in 1..=cfg.epochs_per_task {
        order.shuffle(&mut streams.stream(&format!("shuffle/{k}/{epoch}")));
        let (mut sum, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Utterance> = chunk.iter().map(|&i| &train[i]).collect();
            let obj = total_loss(model, &batch, state, weights)?;
            if let Some((param, index)) = obj.grads.first_non_finite() {
                return Err(Error::NonFinite { param, index }.into());
            }
            adam_step(model.params_mut(), &obj.grads, &mut adam)?;
            sum += obj.value;
            batches += 1;
            if epoch == cfg.epochs_per_task {
                skipped += obj.ctc_skipped;
            }
        }
        train_curve.push(sum / batches as f64);
        val_curve.push(mean_base_loss(model, val, weights)?);
    }
    Ok((train_curve, val_curve, skipped))
}

/// Mean hybrid loss over `data` (`NaN` for an empty split).
pub fn mean_base_loss(model: &HybridModel, data: &[Utterance], weights: &LossWeights) -> Result<f64> {
    let mut sum = 0.0;
    for u in data {
        let trace = model.forward(&u.features, &u.targets)?;
        sum += base_terms(&trace, &u.targets, weights)?.value;
    }
    Ok(sum / data.len() as f64)
}

/// WER on every task seen so far, for both decoders on both test halves.
pub fn evaluate_matrix_row(
    cfg: &ExperimentConfig,
    model: &HybridModel,
    source: &dyn TaskSource,
    k: usize,
) -> Result<Vec<WerCell>> {
    (1..=k)
        .map(|i| evaluate_task(cfg, model, source.test(cfg.task_at(i))?))
        .collect()
}

fn evaluate_task(cfg: &ExperimentConfig, model: &HybridModel, test: &[Utterance]) -> Result<WerCell> {
    let mut cell = [0.0; 4];
    for (slot, noisy) in [(0, false), (1, true)] {
        let half: Vec<&Utterance> = test.iter().filter(|u| u.noisy == noisy).collect();
        if half.is_empty() {
            return Err(Error::Contract(format!("empty {} test half", if noisy { "noisy" } else { "clean" })).into());
        }
        let refs: Vec<&[usize]> = half.iter().map(|u| u.targets.as_slice()).collect();
        let (mut ctc, mut rnnt) = (Vec::new(), Vec::new());
        for u in &half {
            let (c, r) = decode_both(model, &u.features, cfg.max_symbols_per_frame)?;
            ctc.push(c.symbols);
            rnnt.push(r.symbols);
        }
        cell[slot] = wer(&refs, &rnnt, cfg.wer_clip)?;
        cell[slot + 2] = wer(&refs, &ctc, cfg.wer_clip)?;
    }
    Ok(WerCell {
        wer_rnnt_clean: cell[0],
        wer_rnnt_noisy: cell[1],
        wer_ctc_clean: cell[2],
        wer_ctc_noisy: cell[3],
    })
}

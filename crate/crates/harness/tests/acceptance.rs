//! Acceptance criteria, one `[PASS]`/`[FAIL]` line each.
//!
//! Runs as a plain binary (no libtest harness) so the lines are always shown.

mod common;

use std::cell::RefCell;
use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use clasr_core::decoding::decode_both;
use clasr_core::losses::{adjacent_repeats, base_loss, ctc_loss, rnnt_loss, LossWeights};
use clasr_core::metrics::{avg_wer, bwt, edit_distance, Channel, ResultsMatrix, WerCell};
use clasr_core::num::{
    adam_step, finite_diff_gradient, log_softmax, max_relative_error, AdamState, ModelParams, SeedStreams, Tensor,
};
use clasr_core::strategies::{
    ewc_consolidate, ewc_estimate_fisher, ewc_penalty, lwf_distill_loss, mas_penalty, total_loss, ClHyper, ClState,
    DistillKind, Method,
};
use clasr_core::synth::{build_task, SynthConfig, Utterance};
use clasr_core::{Error, HybridModel, ModelConfig};
use clasr_harness::record::RunRecord;
use clasr_harness::source::{AuditedSource, SyntheticSource};
use clasr_harness::{run_with_source, ExperimentConfig};
use rand::Rng;

const LOSS_TOL: f64 = 1e-9;
const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;
/// Denominator floor for the relative error of near-zero gradient entries.
const FD_FLOOR: f64 = 1e-6;
const FD_POINTS: usize = 20;

const OVERFIT_LR: f64 = 1e-2;
const OVERFIT_STEPS: usize = 200;
const OVERFIT_LOSS: f64 = 0.05;

/// Learning rate for the desk-scale trend experiments.
const TREND_LR: f64 = 3e-3;
const TREND_TASKS: usize = 3;
const TREND_CHANNEL: Channel = Channel::CtcClean;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, budget_secs: u64) -> bool {
    elapsed <= Duration::from_secs(budget_secs)
}

fn random_log_probs(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let z = Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
    log_softmax(&z, shape.len() - 1).unwrap()
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let mut rng = SeedStreams::new(1).stream("acceptance/ctc");
    let (mut worst, mut infeasible, mut mismatches) = (0.0f64, 0, 0);
    for _ in 0..200 {
        let v = rng.random_range(2..=4);
        let t = rng.random_range(1..=4);
        let u = rng.random_range(0..=3);
        let lp = random_log_probs(&mut rng, &[t, v]);
        let y: Vec<usize> = (0..u).map(|_| rng.random_range(1..v)).collect();
        let p = common::ctc_probability(&lp, &y);
        match ctc_loss(&lp, &y, 0) {
            Ok(r) => worst = worst.max((r.value + p.ln()).abs()),
            Err(Error::Infeasible { .. }) if p == 0.0 => infeasible += 1,
            Err(_) => mismatches += 1,
        }
    }
    let elapsed = started.elapsed();
    outcome(
        worst < LOSS_TOL && mismatches == 0 && within(elapsed, 5),
        format!("max |diff| {worst:.2e} nats, {infeasible} infeasible agreed, {mismatches} mismatches, {elapsed:.2?}"),
    )
}

fn criterion_2() -> Outcome {
    let started = Instant::now();
    let mut rng = SeedStreams::new(2).stream("acceptance/rnnt");
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let v = rng.random_range(2..=4);
        let t = rng.random_range(1..=3);
        let u = rng.random_range(0..=3);
        let lp = random_log_probs(&mut rng, &[t, u + 1, v]);
        let y: Vec<usize> = (0..u).map(|_| rng.random_range(1..v)).collect();
        let p = common::rnnt_probability(&lp, &y);
        let r = rnnt_loss(&lp, &y, 0).unwrap();
        worst = worst.max((r.value + p.ln()).abs());
    }
    let elapsed = started.elapsed();
    outcome(
        worst < LOSS_TOL && within(elapsed, 5),
        format!("max |diff| {worst:.2e} nats, {elapsed:.2?}"),
    )
}

fn gradcheck_model_config() -> ModelConfig {
    ModelConfig {
        feat_dim: 4,
        hidden_dim: 8,
        vocab_size: 5,
        conv_kernel: 3,
    }
}

fn random_utterance(rng: &mut impl Rng, cfg: &ModelConfig) -> (Tensor, Vec<usize>) {
    let u = rng.random_range(1..=3);
    let t = rng.random_range(2 * u + 1..=2 * u + 3);
    let x = (0..t * cfg.feat_dim).map(|_| rng.random_range(-1.5..1.5)).collect();
    let y = (0..u).map(|_| rng.random_range(1..cfg.vocab_size)).collect();
    (Tensor::from_vec(&[t, cfg.feat_dim], x).unwrap(), y)
}

fn perturbed(p: &ModelParams, rng: &mut impl Rng, scale: f64) -> ModelParams {
    let mut out = p.clone();
    for (_, t) in out.iter_mut() {
        for x in t.data_mut() {
            *x += rng.random_range(-scale..scale);
        }
    }
    out
}

fn criterion_3() -> Outcome {
    let started = Instant::now();
    let cfg = gradcheck_model_config();
    let weights = LossWeights::default();
    let mut rng = SeedStreams::new(3).stream("acceptance/gradcheck");
    let mut worst: HashMap<&str, f64> = HashMap::new();
    let mut note = |name: &'static str, analytic: &ModelParams, numeric: &ModelParams| {
        let e = max_relative_error(analytic, numeric, FD_FLOOR).unwrap().rel_error;
        let w = worst.entry(name).or_insert(0.0);
        *w = w.max(e);
    };
    for point in 0..FD_POINTS as u64 {
        let model = HybridModel::init(cfg, 100 + point).unwrap();
        let (x, y) = random_utterance(&mut rng, &cfg);
        let loss_at = |p: &ModelParams| base_loss(&model.with_params(p.clone()).unwrap(), &x, &y, &weights);

        let analytic = loss_at(model.params()).unwrap().grads;
        let numeric = finite_diff_gradient(|p| loss_at(p).unwrap().value, model.params(), FD_STEP).unwrap();
        note("base_loss", &analytic, &numeric);

        for method in [Method::Ewc, Method::Mas] {
            let mut st = ClState::new(method, ClHyper::default());
            st.anchor = Some(perturbed(model.params(), &mut rng, 0.5));
            st.importance = Some(perturbed(model.params(), &mut rng, 1.0).map(f64::abs));
            st.tasks_seen = 1;
            let pen = |p: &ModelParams| match method {
                Method::Ewc => ewc_penalty(p, &st).unwrap(),
                _ => mas_penalty(p, &st).unwrap(),
            };
            let analytic = pen(model.params()).grads;
            let numeric = finite_diff_gradient(|p| pen(p).value, model.params(), FD_STEP).unwrap();
            note(if method == Method::Ewc { "ewc_penalty" } else { "mas_penalty" }, &analytic, &numeric);
        }

        let frozen = HybridModel::init(cfg, 500 + point).unwrap();
        let kd = |p: &ModelParams| {
            let m = model.with_params(p.clone()).unwrap();
            lwf_distill_loss(&m, &frozen, &x, &y, 0.3, DistillKind::Kl).unwrap()
        };
        let analytic = kd(model.params()).grads;
        let numeric = finite_diff_gradient(|p| kd(p).value, model.params(), FD_STEP).unwrap();
        note("lwf_kl", &analytic, &numeric);
    }
    let elapsed = started.elapsed();
    let mut names: Vec<_> = worst.iter().collect();
    names.sort_by_key(|(n, _)| **n);
    let pass = names.len() == 4 && names.iter().all(|(_, &e)| e < FD_TOL) && within(elapsed, 120);
    let detail = names
        .iter()
        .map(|(n, e)| format!("{n} {e:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(pass, format!("{FD_POINTS} points, max rel err: {detail}, {elapsed:.2?}"))
}

fn small_experiment(extra: &str) -> ExperimentConfig {
    ExperimentConfig::parse(&format!(
        "hidden_dim = 8\ntrain_clean = 6\ntrain_noisy = 3\nval_clean = 2\nval_noisy = 2\n\
         test_clean = 3\ntest_noisy = 3\nbatch_size = 4\nlearning_rate = 1e-2\n{extra}"
    ))
    .unwrap()
}

fn criterion_4() -> Outcome {
    let weights = LossWeights::default();
    let synth = SynthConfig::default();
    let cfg = ModelConfig::default();
    let tasks: Vec<Vec<Utterance>> = (1..=3).map(|k| build_task(k, 4, &synth).unwrap().train).collect();
    let models: Vec<HybridModel> = (0..3).map(|s| HybridModel::init(cfg, 40 + s).unwrap()).collect();

    // Consolidation with gamma = 1 is the plain sum of per-task Fishers.
    let fishers: Vec<ModelParams> = tasks
        .iter()
        .zip(&models)
        .map(|(d, m)| ewc_estimate_fisher(m, &d.iter().take(10).collect::<Vec<_>>(), &weights).unwrap())
        .collect();
    let mut consolidated: Option<ModelParams> = None;
    for f in &fishers {
        consolidated = Some(ewc_consolidate(consolidated.as_ref(), f, 1.0).unwrap());
    }
    let mut sum = fishers[0].clone();
    sum.axpy(1.0, &fishers[1]).unwrap();
    sum.axpy(1.0, &fishers[2]).unwrap();
    let consolidation_ok = consolidated.unwrap() == sum;

    // Penalties vanish at the anchor.
    let theta = models[0].params();
    let mut penalties_ok = true;
    for method in [Method::Ewc, Method::Mas] {
        let mut st = ClState::new(method, ClHyper::default());
        st.anchor = Some(theta.clone());
        st.importance = Some(fishers[1].clone());
        let p = if method == Method::Ewc {
            ewc_penalty(theta, &st).unwrap()
        } else {
            mas_penalty(theta, &st).unwrap()
        };
        penalties_ok &= p.value == 0.0 && p.grads.iter().all(|(_, t)| t.data().iter().all(|&g| g == 0.0));
    }

    // Task-1 objective equals the batch-mean base loss, bitwise.
    let batch: Vec<&Utterance> = tasks[0].iter().take(5).collect();
    let model = &models[0];
    let inv = 1.0 / batch.len() as f64;
    let (mut value, mut grads) = (0.0, model.params().zeros_like());
    for u in &batch {
        let b = base_loss(model, &u.features, &u.targets, &weights).unwrap();
        value += b.value;
        grads.axpy(inv, &b.grads).unwrap();
    }
    value *= inv;
    let mut objective_ok = true;
    for method in Method::ALL {
        let o = total_loss(model, &batch, &ClState::new(method, ClHyper::default()), &weights).unwrap();
        objective_ok &= o.value == value && o.grads == grads;
    }

    // And whole single-task runs agree bitwise across methods.
    let run = |m: Method| {
        let c = small_experiment(&format!("num_tasks = 1\nepochs_per_task = 2\nmethod = {m}"));
        run_with_source(&c, &SyntheticSource::build(&c).unwrap(), None).unwrap()
    };
    let reference = run(Method::Naive);
    let runs_ok = [Method::Ewc, Method::Mas, Method::Lwf].into_iter().all(|m| {
        let r = run(m);
        r.matrix == reference.matrix && r.train_loss == reference.train_loss && r.val_loss == reference.val_loss
    });

    outcome(
        consolidation_ok && penalties_ok && objective_ok && runs_ok,
        format!(
            "consolidation {consolidation_ok}, zero at anchor {penalties_ok}, task-1 objective {objective_ok}, task-1 runs {runs_ok}"
        ),
    )
}

fn criterion_5() -> Outcome {
    let seqs = common::all_sequences(3, 5);
    let mut mismatches = 0usize;
    for a in &seqs {
        for b in &seqs {
            if edit_distance(a, b) != common::edit_distance_recursive(a, b) {
                mismatches += 1;
            }
        }
    }
    let mut m = ResultsMatrix::new(4);
    let diag = [0.31, 0.07, 0.52, 0.18];
    for k in 1..=4 {
        for i in 1..=k {
            m.set(k, i, WerCell::uniform(diag[i - 1])).unwrap();
        }
    }
    let bwt_zero = (2..=4).all(|k| Channel::ALL.iter().all(|&ch| bwt(&m, k, ch).unwrap() == 0.0));
    let avg1 = Channel::ALL.iter().all(|&ch| avg_wer(&m, 1, ch).unwrap() == m.get(1, 1, ch).unwrap());
    outcome(
        mismatches == 0 && bwt_zero && avg1,
        format!(
            "{} sequence pairs, {mismatches} edit-distance mismatches, diagonal-copy BWT zero {bwt_zero}, AvgWER_1 = W_11 {avg1}",
            seqs.len() * seqs.len()
        ),
    )
}

fn overfit_one(seed: u64) -> (f64, bool, bool, usize) {
    let weights = LossWeights::default();
    let u = build_task(1, seed, &SynthConfig::default()).unwrap().train.swap_remove(0);
    let mut model = HybridModel::init(ModelConfig::default(), seed).unwrap();
    let mut adam = AdamState::new(model.params(), OVERFIT_LR);
    for _ in 0..OVERFIT_STEPS {
        let b = base_loss(&model, &u.features, &u.targets, &weights).unwrap();
        adam_step(model.params_mut(), &b.grads, &mut adam).unwrap();
    }
    let loss = base_loss(&model, &u.features, &u.targets, &weights).unwrap().value;
    let (ctc, rnnt) = decode_both(&model, &u.features, 10).unwrap();
    (loss, ctc.symbols == u.targets, rnnt.symbols == u.targets, adjacent_repeats(&u.targets))
}

fn criterion_6() -> Outcome {
    let started = Instant::now();
    let results: Vec<(f64, bool, bool, usize)> = (0..5).map(overfit_one).collect();
    let good = results.iter().filter(|(l, c, r, _)| *l < OVERFIT_LOSS && *c && *r).count();
    let elapsed = started.elapsed();
    let losses: Vec<String> = results.iter().map(|r| format!("{:.4}", r.0)).collect();
    let repeats: Vec<String> = results.iter().map(|r| r.3.to_string()).collect();
    outcome(
        good >= 4 && within(elapsed, 60),
        format!(
            "{good}/5 seeds fit (final losses {}; adjacent repeats {}), {elapsed:.2?}",
            losses.join(" "),
            repeats.join(" ")
        ),
    )
}

/// Trend runs, cached so the two trend criteria share their overlap.
#[derive(Default)]
struct TrendRuns {
    cache: HashMap<(Method, usize, u64), RunRecord>,
}

impl TrendRuns {
    fn get(&mut self, method: Method, epochs: usize, seed: u64) -> &RunRecord {
        self.cache.entry((method, epochs, seed)).or_insert_with(|| {
            let cfg = ExperimentConfig::parse(&format!(
                "num_tasks = {TREND_TASKS}\nlearning_rate = {TREND_LR}\nmethod = {method}\n\
                 epochs_per_task = {epochs}\nglobal_seed = {seed}\n\
                 alpha_kd = 0.1\nlambda_mas = 1\nalpha_ctx = 0.3"
            ))
            .unwrap();
            run_with_source(&cfg, &SyntheticSource::build(&cfg).unwrap(), None).unwrap()
        })
    }

    fn mean_bwt(&mut self, method: Method, epochs: usize, seeds: &[u64]) -> f64 {
        let sum: f64 = seeds
            .iter()
            .map(|&s| self.get(method, epochs, s).final_bwt(TREND_CHANNEL).unwrap())
            .sum();
        sum / seeds.len() as f64
    }

    fn mean_current_wer(&mut self, method: Method, epochs: usize, seeds: &[u64]) -> f64 {
        let mut sum = 0.0;
        for &s in seeds {
            let r = self.get(method, epochs, s);
            for k in 1..=TREND_TASKS {
                sum += r.matrix.get(k, k, TREND_CHANNEL).unwrap();
            }
        }
        sum / (seeds.len() * TREND_TASKS) as f64
    }
}

fn criterion_7(runs: &mut TrendRuns) -> Outcome {
    let started = Instant::now();
    let seeds = [0, 1, 2, 3, 4];
    let naive = runs.mean_bwt(Method::Naive, 10, &seeds);
    let lwf = runs.mean_bwt(Method::Lwf, 10, &seeds);
    let mas = runs.mean_bwt(Method::Mas, 10, &seeds);
    let elapsed = started.elapsed();
    outcome(
        lwf > naive && mas > naive && within(elapsed, 600),
        format!("mean BWT({}) naive {naive:+.4}, lwf {lwf:+.4}, mas {mas:+.4}, {elapsed:.2?}", TREND_CHANNEL.name()),
    )
}

fn criterion_8(runs: &mut TrendRuns) -> Outcome {
    let started = Instant::now();
    let seeds = [0, 1, 2];
    let budgets = [1, 2, 5, 10];
    let mut pass = true;
    let mut parts = Vec::new();
    for method in Method::ALL {
        let w: Vec<f64> = budgets.iter().map(|&e| runs.mean_current_wer(method, e, &seeds)).collect();
        let b: Vec<f64> = budgets.iter().map(|&e| runs.mean_bwt(method, e, &seeds)).collect();
        let (wi, bi) = (common::inversions(&w), common::inversions(&b));
        pass &= wi <= 1 && bi <= 1;
        let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:+.3}")).collect::<Vec<_>>().join(" ");
        parts.push(format!("{method}: W_kk [{}] ({wi} inv), BWT [{}] ({bi} inv)", fmt(&w), fmt(&b)));
    }
    let elapsed = started.elapsed();
    outcome(
        pass && within(elapsed, 1800),
        format!("{}; {elapsed:.2?}", parts.join("; ")),
    )
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.conf");
    std::fs::write(
        &config,
        "num_tasks = 2\nepochs_per_task = 1\nhidden_dim = 16\nlearning_rate = 3e-3\nmethod = lwf\nglobal_seed = 9\n",
    )
    .unwrap();
    let mut matrices = Vec::new();
    for attempt in 0..2 {
        let root = dir.path().join(format!("out{attempt}"));
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_clasr"))
            .args(["run", "--config"])
            .arg(&config)
            .env("CLASR_OUTPUT_ROOT", &root)
            .output()
            .unwrap();
        if !status.status.success() {
            return outcome(false, format!("run failed: {}", String::from_utf8_lossy(&status.stderr)));
        }
        let record = RunRecord::load(&root.join("lwf_e1_s9").join("results.json")).unwrap();
        matrices.push(record.matrix);
    }
    let same = matrices[0] == matrices[1];
    let text = |m: &ResultsMatrix| serde_json::to_string(m).unwrap();
    outcome(
        same && text(&matrices[0]) == text(&matrices[1]),
        format!("two CLI runs, matrices identical {same}"),
    )
}

fn criterion_10() -> Outcome {
    let cfg = ExperimentConfig::parse("num_tasks = 5\nepochs_per_task = 1\nmethod = mas\nlearning_rate = 3e-3").unwrap();
    let source = AuditedSource::new(SyntheticSource::build(&cfg).unwrap());
    run_with_source(&cfg, &source, None).unwrap();
    let violations = source.violations();
    let counts = source.counts();
    let trained: Vec<usize> = (1..=5)
        .map(|k| {
            counts
                .iter()
                .filter(|((phase, task), _)| phase.allowed_task() == Some(k) && *task == k)
                .map(|(_, n)| n)
                .sum()
        })
        .collect();
    outcome(
        violations.is_empty() && trained.iter().all(|&n| n > 0),
        format!("{} cross-task accesses, own-task accesses per task {trained:?}", violations.len()),
    )
}

fn main() {
    let runs = RefCell::new(TrendRuns::default());
    let criteria: Vec<(&str, Box<dyn FnMut() -> Outcome + '_>)> = vec![
        ("CTC oracle equivalence", Box::new(criterion_1)),
        ("transducer oracle equivalence", Box::new(criterion_2)),
        ("gradient checks", Box::new(criterion_3)),
        ("formula identities", Box::new(criterion_4)),
        ("metric oracles", Box::new(criterion_5)),
        ("overfit smoke test", Box::new(criterion_6)),
        ("forgetting mitigation trend", Box::new(|| criterion_7(&mut runs.borrow_mut()))),
        ("stability-plasticity trend", Box::new(|| criterion_8(&mut runs.borrow_mut()))),
        ("determinism", Box::new(criterion_9)),
        ("no-replay audit", Box::new(criterion_10)),
    ];
    let mut failed = 0;
    for (n, (name, mut check)) in criteria.into_iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(&mut check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let tag = if result.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] criterion {}: {name} -- {}", n + 1, result.detail);
        failed += usize::from(!result.pass);
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

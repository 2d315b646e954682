//! Experiment configuration.
//!
//! The file format is one `key = value` pair per line. Values are JSON
//! scalars or arrays (`0.3`, `true`, `[1, 2]`, `"lwf"`); a value that is not
//! valid JSON is taken as a bare string. `#` starts a comment. Unknown and
//! repeated keys are rejected.

use std::path::{Path, PathBuf};

use clasr_core::losses::LossWeights;
use clasr_core::strategies::{ClHyper, DistillKind, Method};
use clasr_core::synth::SynthConfig;
use clasr_core::ModelConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{HarnessError, Result};

/// Environment variable that, when set, replaces `output_dir`.
pub const OUTPUT_ROOT_ENV: &str = "CLASR_OUTPUT_ROOT";

pub const MAX_TASKS: usize = 9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub global_seed: u64,
    pub num_tasks: usize,
    pub epochs_per_task: usize,
    pub method: Method,

    pub lambda_ewc: f64,
    pub gamma: f64,
    pub lambda_mas: f64,
    pub alpha_ctx: f64,
    pub alpha_kd: f64,
    pub distill_kind: DistillKind,

    pub hidden_dim: usize,
    pub conv_kernel: usize,

    pub num_symbols: usize,
    pub feat_dim: usize,
    pub u_min: usize,
    pub u_max: usize,
    pub d_min: usize,
    pub d_max: usize,
    pub clean_sigma: f64,
    pub noise_sigma: f64,
    pub train_clean: usize,
    pub train_noisy: usize,
    pub val_clean: usize,
    pub val_noisy: usize,
    pub test_clean: usize,
    pub test_noisy: usize,
    pub difficulty: Vec<f64>,

    pub w_ctc: f64,
    pub skip_infeasible_ctc: bool,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_symbols_per_frame: usize,
    pub wer_clip: bool,

    pub output_dir: PathBuf,
    /// Training order as language ids; position `k` of the stream trains
    /// language `task_permutation[k - 1]`.
    pub task_permutation: Option<Vec<usize>>,
    /// Seeds for `sweep`; empty means `[global_seed]`.
    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let synth = SynthConfig::default();
        let model = ModelConfig::default();
        let hyper = ClHyper::default();
        let weights = LossWeights::default();
        Self {
            global_seed: 0,
            num_tasks: 5,
            epochs_per_task: 1,
            method: Method::Naive,
            lambda_ewc: hyper.lambda_ewc,
            gamma: hyper.gamma,
            lambda_mas: hyper.lambda_mas,
            alpha_ctx: hyper.alpha_ctx,
            alpha_kd: hyper.alpha_kd,
            distill_kind: hyper.distill_kind,
            hidden_dim: model.hidden_dim,
            conv_kernel: model.conv_kernel,
            num_symbols: synth.num_symbols,
            feat_dim: synth.feat_dim,
            u_min: synth.u_min,
            u_max: synth.u_max,
            d_min: synth.d_min,
            d_max: synth.d_max,
            clean_sigma: synth.clean_sigma,
            noise_sigma: synth.noise_sigma,
            train_clean: synth.train_clean,
            train_noisy: synth.train_noisy,
            val_clean: synth.val_clean,
            val_noisy: synth.val_noisy,
            test_clean: synth.test_clean,
            test_noisy: synth.test_noisy,
            difficulty: synth.difficulty,
            w_ctc: weights.w_ctc,
            skip_infeasible_ctc: weights.skip_infeasible_ctc,
            learning_rate: 1e-4,
            batch_size: 8,
            max_symbols_per_frame: clasr_core::decoding::DEFAULT_MAX_SYMBOLS_PER_FRAME,
            wer_clip: false,
            output_dir: PathBuf::from("runs"),
            task_permutation: None,
            seeds: Vec::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = Map::new();
        for (n, raw) in text.lines().enumerate() {
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(HarnessError::Config(format!("line {}: empty key", n + 1)));
            }
            let value = value.trim();
            let parsed = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
            if map.insert(key.to_string(), parsed).is_some() {
                return Err(HarnessError::Config(format!("line {}: duplicate key {key:?}", n + 1)));
            }
        }
        let cfg: Self = serde_json::from_value(Value::Object(map)).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Applies [`OUTPUT_ROOT_ENV`] if set.
    pub fn with_env_overrides(mut self) -> Self {
        if let Some(root) = std::env::var_os(OUTPUT_ROOT_ENV) {
            self.output_dir = PathBuf::from(root);
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(HarnessError::Config(m));
        if self.num_tasks == 0 || self.num_tasks > MAX_TASKS {
            return fail(format!("num_tasks must be in 1..={MAX_TASKS}, got {}", self.num_tasks));
        }
        if self.epochs_per_task == 0 {
            return fail("epochs_per_task must be >= 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        if self.max_symbols_per_frame == 0 {
            return fail("max_symbols_per_frame must be >= 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return fail(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(0.0..=1.0).contains(&self.w_ctc) {
            return fail(format!("w_ctc must lie in [0, 1], got {}", self.w_ctc));
        }
        if self.train_clean + self.train_noisy == 0 {
            return fail("training split is empty".into());
        }
        if self.test_clean == 0 || self.test_noisy == 0 {
            return fail("both test halves need at least one utterance".into());
        }
        if let Some(p) = &self.task_permutation {
            let mut sorted = p.clone();
            sorted.sort_unstable();
            if sorted != (1..=self.num_tasks).collect::<Vec<_>>() {
                return fail(format!("task_permutation must permute 1..={}", self.num_tasks));
            }
        }
        self.hyper().validate().map_err(core_config)?;
        self.model_config().validate().map_err(core_config)?;
        self.synth_config().validate().map_err(core_config)?;
        Ok(())
    }

    pub fn hyper(&self) -> ClHyper {
        ClHyper {
            lambda_ewc: self.lambda_ewc,
            gamma: self.gamma,
            lambda_mas: self.lambda_mas,
            alpha_ctx: self.alpha_ctx,
            alpha_kd: self.alpha_kd,
            distill_kind: self.distill_kind,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            feat_dim: self.feat_dim,
            hidden_dim: self.hidden_dim,
            vocab_size: self.num_symbols + 1,
            conv_kernel: self.conv_kernel,
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            num_symbols: self.num_symbols,
            feat_dim: self.feat_dim,
            u_min: self.u_min,
            u_max: self.u_max,
            d_min: self.d_min,
            d_max: self.d_max,
            clean_sigma: self.clean_sigma,
            noise_sigma: self.noise_sigma,
            train_clean: self.train_clean,
            train_noisy: self.train_noisy,
            val_clean: self.val_clean,
            val_noisy: self.val_noisy,
            test_clean: self.test_clean,
            test_noisy: self.test_noisy,
            difficulty: self.difficulty.clone(),
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            w_ctc: self.w_ctc,
            skip_infeasible_ctc: self.skip_infeasible_ctc,
        }
    }

    /// Language id trained at 1-based stream position `k`.
    pub fn task_at(&self, k: usize) -> usize {
        match &self.task_permutation {
            Some(p) => p[k - 1],
            None => k,
        }
    }

    /// Directory name for one run: `{method}_e{epochs}_s{seed}`.
    pub fn run_name(&self) -> String {
        format!("{}_e{}_s{}", self.method, self.epochs_per_task, self.global_seed)
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(self.run_name())
    }
}

fn core_config(e: clasr_core::Error) -> HarnessError {
    HarnessError::Config(e.to_string())
}

fn strip_comment(line: &str) -> &str {
    // `#` inside a quoted string is kept.
    let mut in_str = false;
    let mut escaped = false;
    for (i, c) in line.char_indices() {
        if escaped {
            escaped = false;
            continue;
        }
        match c {
            '\\' if in_str => escaped = true,
            '"' => in_str = !in_str,
            '#' if !in_str => return &line[..i],
            _ => {}
        }
    }
    line
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = ExperimentConfig::parse("").unwrap();
        assert_eq!(c.num_tasks, 5);
        assert_eq!(c.w_ctc, 0.3);
        assert_eq!(c.learning_rate, 1e-4);
        assert_eq!(c.batch_size, 8);
        assert_eq!(c.gamma, 1.0);
        assert_eq!(c.lambda_ewc, 10.0);
        assert_eq!(c.lambda_mas, 1.0);
        assert_eq!(c.alpha_kd, 0.1);
        assert_eq!(c.method, Method::Naive);
    }

    #[test]
    fn values_and_comments() {
        let text = r#"
            # a comment
            method = lwf
            distill_kind = "mse"   # trailing
            epochs_per_task = 5
            task_permutation = [2, 1, 3]
            num_tasks = 3
            output_dir = "out#1"
        "#;
        let c = ExperimentConfig::parse(text).unwrap();
        assert_eq!(c.method, Method::Lwf);
        assert_eq!(c.distill_kind, DistillKind::Mse);
        assert_eq!(c.epochs_per_task, 5);
        assert_eq!(c.task_at(1), 2);
        assert_eq!(c.output_dir, PathBuf::from("out#1"));
    }

    #[test]
    fn rejects_unknown_duplicate_and_bad_values() {
        for bad in [
            "lamda_ewc = 5",
            "method = ewc\nmethod = mas",
            "method = si",
            "num_tasks = 10",
            "alpha_kd = 2",
            "num_tasks = 3\ntask_permutation = [1, 1, 2]",
            "epochs_per_task",
            "conv_kernel = 4",
        ] {
            assert!(matches!(ExperimentConfig::parse(bad), Err(HarnessError::Config(_))), "{bad}");
        }
    }

    #[test]
    fn run_naming() {
        let c = ExperimentConfig::parse("method = mas\nepochs_per_task = 2\nglobal_seed = 7").unwrap();
        assert_eq!(c.run_name(), "mas_e2_s7");
    }
}

use std::collections::BTreeMap;
use std::path::Path;

use clasr_core::metrics::{avg_wer, bwt, Channel, ResultsMatrix};
use clasr_core::strategies::Method;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};

pub const RESULTS_FILE: &str = "results.json";
pub const MODEL_FILE: &str = "model.bin";
pub const CL_STATE_FILE: &str = "cl_state.bin";

/// Everything one run produced, in stream-position order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub version: String,
    pub config: ExperimentConfig,
    pub complete: bool,
    /// Language id trained at each position.
    pub tasks: Vec<usize>,
    /// Mean minibatch objective per epoch, per task.
    pub train_loss: Vec<Vec<f64>>,
    /// Mean hybrid loss on the task's validation split after each epoch.
    pub val_loss: Vec<Vec<f64>>,
    /// Training utterances whose CTC term was dropped as infeasible, per task.
    pub ctc_skipped: Vec<usize>,
    pub matrix: ResultsMatrix,
    /// `avg_wer[ch][k - 1]` for every completed row `k`.
    pub avg_wer: BTreeMap<Channel, Vec<f64>>,
    /// `bwt[ch][k - 2]` for completed rows `k >= 2`.
    pub bwt: BTreeMap<Channel, Vec<f64>>,
    pub wall_clock_secs: Vec<f64>,
}

impl RunRecord {
    pub fn new(config: ExperimentConfig) -> Self {
        let k = config.num_tasks;
        Self {
            version: format!("clasr-harness {}", env!("CARGO_PKG_VERSION")),
            tasks: (1..=k).map(|p| config.task_at(p)).collect(),
            config,
            complete: false,
            train_loss: Vec::new(),
            val_loss: Vec::new(),
            ctc_skipped: Vec::new(),
            matrix: ResultsMatrix::new(k),
            avg_wer: BTreeMap::new(),
            bwt: BTreeMap::new(),
            wall_clock_secs: Vec::new(),
        }
    }

    pub fn method(&self) -> Method {
        self.config.method
    }

    pub fn epochs(&self) -> usize {
        self.config.epochs_per_task
    }

    pub fn seed(&self) -> u64 {
        self.config.global_seed
    }

    pub fn num_tasks(&self) -> usize {
        self.config.num_tasks
    }

    /// Recomputes the AvgWER and BWT series from the matrix.
    pub fn refresh_summaries(&mut self) -> Result<()> {
        let rows = self.matrix.completed_rows();
        self.avg_wer.clear();
        self.bwt.clear();
        for ch in Channel::ALL {
            let a = (1..=rows).map(|k| avg_wer(&self.matrix, k, ch)).collect::<clasr_core::Result<_>>()?;
            let b = (2..=rows).map(|k| bwt(&self.matrix, k, ch)).collect::<clasr_core::Result<_>>()?;
            self.avg_wer.insert(ch, a);
            self.bwt.insert(ch, b);
        }
        Ok(())
    }

    /// Final-row BWT, `None` for a single task.
    pub fn final_bwt(&self, ch: Channel) -> Option<f64> {
        self.bwt.get(&ch).and_then(|v| v.last().copied())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| HarnessError::Report(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| HarnessError::Report(e.to_string()))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        let path = dir.join(RESULTS_FILE);
        clasr_core::checkpoint::write_atomic(&path, self.to_json()?.as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_json(&text)
    }
}

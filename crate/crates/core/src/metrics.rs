//! Word error rate and the continual-learning summary metrics.

use serde::{Deserialize, Serialize};

use crate::decoding::DecodePath;
use crate::error::{contract, Result};

/// Unit-cost Levenshtein distance.
pub fn edit_distance<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=hypothesis.len()).collect();
    let mut cur = vec![0; hypothesis.len() + 1];
    for (i, r) in reference.iter().enumerate() {
        cur[0] = i + 1;
        for (j, h) in hypothesis.iter().enumerate() {
            let sub = prev[j] + usize::from(r != h);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[hypothesis.len()]
}

/// Corpus-level WER: total edits over total reference tokens.
///
/// Insertions can push the value above 1; `clip` caps it at 1.
pub fn wer<R, H>(refs: &[R], hyps: &[H], clip: bool) -> Result<f64>
where
    R: AsRef<[usize]>,
    H: AsRef<[usize]>,
{
    if refs.len() != hyps.len() {
        return Err(contract(format!(
            "wer: {} references vs {} hypotheses",
            refs.len(),
            hyps.len()
        )));
    }
    let total: usize = refs.iter().map(|r| r.as_ref().len()).sum();
    if total == 0 {
        return Err(contract("wer: references contain no tokens"));
    }
    let edits: usize = refs
        .iter()
        .zip(hyps)
        .map(|(r, h)| edit_distance(r.as_ref(), h.as_ref()))
        .sum();
    let w = edits as f64 / total as f64;
    Ok(if clip { w.min(1.0) } else { w })
}

/// Recording condition of a test half.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Clean,
    Noisy,
}

/// Decode path x condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    RnntClean,
    RnntNoisy,
    CtcClean,
    CtcNoisy,
}

impl Channel {
    pub const ALL: [Channel; 4] = [
        Channel::RnntClean,
        Channel::RnntNoisy,
        Channel::CtcClean,
        Channel::CtcNoisy,
    ];

    pub fn new(path: DecodePath, condition: Condition) -> Self {
        match (path, condition) {
            (DecodePath::Rnnt, Condition::Clean) => Channel::RnntClean,
            (DecodePath::Rnnt, Condition::Noisy) => Channel::RnntNoisy,
            (DecodePath::Ctc, Condition::Clean) => Channel::CtcClean,
            (DecodePath::Ctc, Condition::Noisy) => Channel::CtcNoisy,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Channel::RnntClean => "rnnt_clean",
            Channel::RnntNoisy => "rnnt_noisy",
            Channel::CtcClean => "ctc_clean",
            Channel::CtcNoisy => "ctc_noisy",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }
}

/// WER for each channel of one (k, i) cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WerCell {
    pub wer_rnnt_clean: f64,
    pub wer_rnnt_noisy: f64,
    pub wer_ctc_clean: f64,
    pub wer_ctc_noisy: f64,
}

impl WerCell {
    pub fn get(&self, ch: Channel) -> f64 {
        match ch {
            Channel::RnntClean => self.wer_rnnt_clean,
            Channel::RnntNoisy => self.wer_rnnt_noisy,
            Channel::CtcClean => self.wer_ctc_clean,
            Channel::CtcNoisy => self.wer_ctc_noisy,
        }
    }

    pub fn uniform(w: f64) -> Self {
        Self {
            wer_rnnt_clean: w,
            wer_rnnt_noisy: w,
            wer_ctc_clean: w,
            wer_ctc_noisy: w,
        }
    }
}

/// Lower-triangular `W[k][i]` (1-based, `i <= k`): WER on task `i` measured
/// right after training on task `k`. Each cell is written exactly once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsMatrix {
    num_tasks: usize,
    rows: Vec<Vec<Option<WerCell>>>,
}

impl ResultsMatrix {
    pub fn new(num_tasks: usize) -> Self {
        Self {
            num_tasks,
            rows: (1..=num_tasks).map(|k| vec![None; k]).collect(),
        }
    }

    pub fn num_tasks(&self) -> usize {
        self.num_tasks
    }

    fn check_index(&self, k: usize, i: usize) -> Result<()> {
        if k == 0 || k > self.num_tasks || i == 0 || i > k {
            return Err(contract(format!(
                "cell ({k}, {i}) outside the lower triangle of a {}-task matrix",
                self.num_tasks
            )));
        }
        Ok(())
    }

    pub fn set(&mut self, k: usize, i: usize, cell: WerCell) -> Result<()> {
        self.check_index(k, i)?;
        if Channel::ALL.iter().any(|&c| !(cell.get(c) >= 0.0)) {
            return Err(contract(format!("cell ({k}, {i}) has a negative or NaN WER")));
        }
        let slot = &mut self.rows[k - 1][i - 1];
        if slot.is_some() {
            return Err(contract(format!("cell ({k}, {i}) already written")));
        }
        *slot = Some(cell);
        Ok(())
    }

    pub fn cell(&self, k: usize, i: usize) -> Option<&WerCell> {
        self.check_index(k, i).ok()?;
        self.rows[k - 1][i - 1].as_ref()
    }

    pub fn get(&self, k: usize, i: usize, ch: Channel) -> Result<f64> {
        self.check_index(k, i)?;
        self.rows[k - 1][i - 1]
            .map(|c| c.get(ch))
            .ok_or_else(|| contract(format!("cell ({k}, {i}) not populated")))
    }

    pub fn row_complete(&self, k: usize) -> bool {
        k >= 1 && k <= self.num_tasks && self.rows[k - 1].iter().all(Option::is_some)
    }

    /// Rows `1..=k` populated for every `k` up to the last one written.
    pub fn completed_rows(&self) -> usize {
        (1..=self.num_tasks).take_while(|&k| self.row_complete(k)).count()
    }

    pub fn is_complete(&self) -> bool {
        self.completed_rows() == self.num_tasks
    }
}

/// Mean of `W[k][1..=k]`.
pub fn avg_wer(m: &ResultsMatrix, k: usize, ch: Channel) -> Result<f64> {
    if k == 0 || k > m.num_tasks() {
        return Err(contract(format!("avg_wer: k = {k} out of range")));
    }
    let mut sum = 0.0;
    for i in 1..=k {
        sum += m.get(k, i, ch)?;
    }
    Ok(sum / k as f64)
}

/// Backward transfer after task `k`: mean over `i < k` of
/// `Acc[k][i] - Acc[i][i]` with `Acc = 1 - W` (unclamped).
pub fn bwt(m: &ResultsMatrix, k: usize, ch: Channel) -> Result<f64> {
    if k < 2 {
        return Err(contract("bwt is undefined before the second task"));
    }
    if k > m.num_tasks() {
        return Err(contract(format!("bwt: k = {k} out of range")));
    }
    let mut sum = 0.0;
    for i in 1..k {
        let acc_now = 1.0 - m.get(k, i, ch)?;
        let acc_then = 1.0 - m.get(i, i, ch)?;
        sum += acc_now - acc_then;
    }
    Ok(sum / (k - 1) as f64)
}

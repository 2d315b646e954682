//! Where the training loop gets its data from.
//!
//! The loop announces each phase before touching data, which lets
//! [`AuditedSource`] attribute every access to the task being trained.

use std::cell::RefCell;
use std::collections::BTreeMap;

use clasr_core::synth::{build_task, TaskDataset, Utterance};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Phase {
    /// Minibatch training at stream position `position` on language `task_id`.
    Train { position: usize, task_id: usize },
    /// Importance estimation / snapshotting right after training.
    EndOfTask { position: usize, task_id: usize },
    /// Test-set evaluation after `position` tasks.
    Eval { position: usize },
}

impl Phase {
    /// The only language a phase may read, if it is restricted.
    pub fn allowed_task(&self) -> Option<usize> {
        match *self {
            Phase::Train { task_id, .. } | Phase::EndOfTask { task_id, .. } => Some(task_id),
            Phase::Eval { .. } => None,
        }
    }
}

pub trait TaskSource {
    fn train(&self, task_id: usize) -> Result<&[Utterance]>;
    fn val(&self, task_id: usize) -> Result<&[Utterance]>;
    fn test(&self, task_id: usize) -> Result<&[Utterance]>;
    fn enter(&self, _phase: Phase) {}
}

/// Synthetic languages generated up front from the experiment seed.
#[derive(Debug, Clone)]
pub struct SyntheticSource {
    tasks: BTreeMap<usize, TaskDataset>,
}

impl SyntheticSource {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        let synth = cfg.synth_config();
        let tasks = (1..=cfg.num_tasks)
            .map(|id| Ok((id, build_task(id, cfg.global_seed, &synth)?)))
            .collect::<Result<_>>()?;
        Ok(Self { tasks })
    }

    pub fn from_tasks(tasks: impl IntoIterator<Item = TaskDataset>) -> Self {
        Self {
            tasks: tasks.into_iter().map(|t| (t.task_id, t)).collect(),
        }
    }

    pub fn task(&self, task_id: usize) -> Result<&TaskDataset> {
        self.tasks
            .get(&task_id)
            .ok_or_else(|| HarnessError::Config(format!("no data for task {task_id}")))
    }

    pub fn tasks(&self) -> impl Iterator<Item = &TaskDataset> {
        self.tasks.values()
    }
}

impl TaskSource for SyntheticSource {
    fn train(&self, task_id: usize) -> Result<&[Utterance]> {
        Ok(&self.task(task_id)?.train)
    }

    fn val(&self, task_id: usize) -> Result<&[Utterance]> {
        Ok(&self.task(task_id)?.val)
    }

    fn test(&self, task_id: usize) -> Result<&[Utterance]> {
        Ok(&self.task(task_id)?.test)
    }
}

/// Counts utterance accesses per phase, keyed by the utterances' own task ids.
pub struct AuditedSource<S> {
    inner: S,
    phase: RefCell<Option<Phase>>,
    counts: RefCell<BTreeMap<(Phase, usize), usize>>,
}

impl<S: TaskSource> AuditedSource<S> {
    pub fn new(inner: S) -> Self {
        Self {
            inner,
            phase: RefCell::new(None),
            counts: RefCell::new(BTreeMap::new()),
        }
    }

    fn record(&self, utts: &[Utterance]) {
        let Some(phase) = *self.phase.borrow() else { return };
        let mut counts = self.counts.borrow_mut();
        for u in utts {
            *counts.entry((phase, u.task_id)).or_default() += 1;
        }
    }

    /// Accesses to `(phase, task_id)` pairs.
    pub fn counts(&self) -> BTreeMap<(Phase, usize), usize> {
        self.counts.borrow().clone()
    }

    /// Accesses made during a restricted phase to a different task's data.
    pub fn violations(&self) -> Vec<(Phase, usize, usize)> {
        self.counts
            .borrow()
            .iter()
            .filter(|((phase, task), _)| phase.allowed_task().is_some_and(|t| t != *task))
            .map(|(&(phase, task), &n)| (phase, task, n))
            .collect()
    }

    pub fn into_inner(self) -> S {
        self.inner
    }
}

impl<S: TaskSource> TaskSource for AuditedSource<S> {
    fn train(&self, task_id: usize) -> Result<&[Utterance]> {
        let u = self.inner.train(task_id)?;
        self.record(u);
        Ok(u)
    }

    fn val(&self, task_id: usize) -> Result<&[Utterance]> {
        let u = self.inner.val(task_id)?;
        self.record(u);
        Ok(u)
    }

    fn test(&self, task_id: usize) -> Result<&[Utterance]> {
        let u = self.inner.test(task_id)?;
        self.record(u);
        Ok(u)
    }

    fn enter(&self, phase: Phase) {
        *self.phase.borrow_mut() = Some(phase);
        self.inner.enter(phase);
    }
}

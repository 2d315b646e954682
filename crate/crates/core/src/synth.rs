//! Synthetic "languages": each task draws its own symbol prototypes and
//! bigram chain, then renders utterances as noisy prototype frames.

use std::io::{BufRead, Write};
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::{SeedStreams, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Non-blank symbols; vocabulary ids are `1..=num_symbols`.
    pub num_symbols: usize,
    pub feat_dim: usize,
    pub u_min: usize,
    pub u_max: usize,
    pub d_min: usize,
    pub d_max: usize,
    /// Noise present on every frame.
    pub clean_sigma: f64,
    /// Extra noise on utterances from the noisy condition.
    pub noise_sigma: f64,
    pub train_clean: usize,
    pub train_noisy: usize,
    pub val_clean: usize,
    pub val_noisy: usize,
    pub test_clean: usize,
    pub test_noisy: usize,
    /// Per-task noise multiplier, indexed by `task_id - 1`; missing entries are 1.
    pub difficulty: Vec<f64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_symbols: 12,
            feat_dim: 8,
            u_min: 2,
            u_max: 8,
            d_min: 1,
            d_max: 3,
            clean_sigma: 0.1,
            noise_sigma: 0.5,
            train_clean: 80,
            train_noisy: 40,
            val_clean: 20,
            val_noisy: 20,
            test_clean: 20,
            test_noisy: 20,
            difficulty: Vec::new(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.num_symbols == 0 || self.feat_dim == 0 {
            return bad("num_symbols and feat_dim must be >= 1");
        }
        if self.u_min == 0 || self.u_min > self.u_max {
            return bad("utterance length range must satisfy 1 <= u_min <= u_max");
        }
        if self.d_min == 0 || self.d_min > self.d_max {
            return bad("frames-per-symbol range must satisfy 1 <= d_min <= d_max");
        }
        if !(self.clean_sigma >= 0.0) || !(self.noise_sigma >= 0.0) {
            return bad("noise levels must be >= 0");
        }
        if self.difficulty.iter().any(|d| !(*d >= 0.0)) {
            return bad("difficulty multipliers must be >= 0");
        }
        if self.train_clean + self.train_noisy == 0 || self.test_clean == 0 || self.test_noisy == 0 {
            return bad("train split and both test halves must be non-empty");
        }
        Ok(())
    }

    pub fn difficulty_for(&self, task_id: usize) -> f64 {
        task_id
            .checked_sub(1)
            .and_then(|i| self.difficulty.get(i))
            .copied()
            .unwrap_or(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageSpec {
    pub task_id: usize,
    /// `[num_symbols x feat_dim]`, row `s` renders vocabulary id `s + 1`.
    pub prototypes: Tensor,
    /// Row-stochastic `[num_symbols x num_symbols]` bigram chain.
    pub transitions: Tensor,
    /// Stationary distribution of the chain; first symbols are drawn from it.
    pub initial: Vec<f64>,
    pub u_range: (usize, usize),
    pub d_range: (usize, usize),
    pub clean_sigma: f64,
    pub noise_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub features: Tensor,
    pub targets: Vec<usize>,
    pub noisy: bool,
    pub task_id: usize,
}

impl Utterance {
    pub fn frames(&self) -> usize {
        self.features.dim(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDataset {
    pub task_id: usize,
    pub train: Vec<Utterance>,
    pub val: Vec<Utterance>,
    pub test: Vec<Utterance>,
}

impl TaskDataset {
    pub fn split(&self, split: Split) -> &[Utterance] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    /// `(clean, noisy)` counts for a split.
    pub fn counts(&self, split: Split) -> (usize, usize) {
        let s = self.split(split);
        let noisy = s.iter().filter(|u| u.noisy).count();
        (s.len() - noisy, noisy)
    }

    pub fn test_half(&self, noisy: bool) -> impl Iterator<Item = &Utterance> {
        self.test.iter().filter(move |u| u.noisy == noisy)
    }
}

/// Stationary distribution of a row-stochastic matrix by power iteration.
pub fn stationary_distribution(transitions: &Tensor) -> Vec<f64> {
    let n = transitions.dim(0);
    let mut pi = vec![1.0 / n as f64; n];
    for _ in 0..10_000 {
        let mut next = vec![0.0; n];
        for (i, &p) in pi.iter().enumerate() {
            for (j, nj) in next.iter_mut().enumerate() {
                *nj += p * transitions.get2(i, j);
            }
        }
        let s: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= s);
        let delta: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        pi = next;
        if delta < 1e-15 {
            break;
        }
    }
    pi
}

pub fn make_language(task_id: usize, global_seed: u64, cfg: &SynthConfig) -> Result<LanguageSpec> {
    if task_id == 0 {
        return Err(Error::Contract("task ids start at 1".into()));
    }
    cfg.validate()?;
    let (s, f) = (cfg.num_symbols, cfg.feat_dim);
    let mut rng = SeedStreams::new(global_seed).stream(&format!("lang/{task_id}"));
    let protos: Vec<f64> = (0..s * f).map(|_| rng.sample(StandardNormal)).collect();
    let mut trans: Vec<f64> = (0..s * s).map(|_| rng.random_range(0.05..1.0)).collect();
    for row in trans.chunks_mut(s) {
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= total);
    }
    let transitions = Tensor::from_vec(&[s, s], trans)?;
    let initial = stationary_distribution(&transitions);
    let mult = cfg.difficulty_for(task_id);
    Ok(LanguageSpec {
        task_id,
        prototypes: Tensor::from_vec(&[s, f], protos)?,
        transitions,
        initial,
        u_range: (cfg.u_min, cfg.u_max),
        d_range: (cfg.d_min, cfg.d_max),
        clean_sigma: cfg.clean_sigma * mult,
        noise_sigma: cfg.noise_sigma * mult,
    })
}

fn categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    WeightedIndex::new(weights)
        .expect("language weights are positive")
        .sample(rng)
}

/// Draws one utterance. Both noise terms are always sampled so that the
/// clean and noisy conditions consume the stream identically.
pub fn sample_utterance<R: Rng + ?Sized>(spec: &LanguageSpec, noisy: bool, rng: &mut R) -> Utterance {
    let f = spec.prototypes.dim(1);
    let u_len = rng.random_range(spec.u_range.0..=spec.u_range.1);
    let mut targets = Vec::with_capacity(u_len);
    let mut sym = categorical(&spec.initial, rng);
    targets.push(sym + 1);
    for _ in 1..u_len {
        sym = categorical(spec.transitions.row(sym), rng);
        targets.push(sym + 1);
    }

    let extra = if noisy { spec.noise_sigma } else { 0.0 };
    let mut frames: Vec<f64> = Vec::new();
    let mut push_frame = |mean: Option<&[f64]>, rng: &mut R| {
        for j in 0..f {
            let base: f64 = rng.sample(StandardNormal);
            let more: f64 = rng.sample(StandardNormal);
            let mu = mean.map_or(0.0, |m| m[j]);
            frames.push(mu + spec.clean_sigma * base + extra * more);
        }
    };
    let mut prev = None;
    for &label in &targets {
        // a gap frame separates adjacent repeats so CTC stays feasible
        if prev == Some(label) {
            push_frame(None, rng);
        }
        let d = rng.random_range(spec.d_range.0..=spec.d_range.1);
        for _ in 0..d {
            push_frame(Some(spec.prototypes.row(label - 1)), rng);
        }
        prev = Some(label);
    }
    let t_len = frames.len() / f;
    Utterance {
        features: Tensor::from_vec(&[t_len, f], frames).expect("whole frames"),
        targets,
        noisy,
        task_id: spec.task_id,
    }
}

fn sample_split(
    spec: &LanguageSpec,
    streams: &SeedStreams,
    split: Split,
    clean: usize,
    noisy: usize,
) -> Vec<Utterance> {
    let mut out = Vec::with_capacity(clean + noisy);
    for (is_noisy, n) in [(false, clean), (true, noisy)] {
        let cond = if is_noisy { "noisy" } else { "clean" };
        let mut rng = streams.stream(&format!("data/{}/{}/{cond}", spec.task_id, split.name()));
        out.extend((0..n).map(|_| sample_utterance(spec, is_noisy, &mut rng)));
    }
    out
}

pub fn build_task(task_id: usize, global_seed: u64, cfg: &SynthConfig) -> Result<TaskDataset> {
    let spec = make_language(task_id, global_seed, cfg)?;
    let streams = SeedStreams::new(global_seed);
    Ok(TaskDataset {
        task_id,
        train: sample_split(&spec, &streams, Split::Train, cfg.train_clean, cfg.train_noisy),
        val: sample_split(&spec, &streams, Split::Val, cfg.val_clean, cfg.val_noisy),
        test: sample_split(&spec, &streams, Split::Test, cfg.test_clean, cfg.test_noisy),
    })
}

/// Tasks `1..=num_tasks`, each from its own named streams.
pub fn build_task_stream(cfg: &SynthConfig, global_seed: u64, num_tasks: usize) -> Result<Vec<TaskDataset>> {
    if num_tasks == 0 {
        return Err(Error::Config("need at least one task".into()));
    }
    (1..=num_tasks).map(|k| build_task(k, global_seed, cfg)).collect()
}

#[derive(Serialize, Deserialize)]
struct DumpRecord {
    task_id: usize,
    split: Split,
    noisy: bool,
    targets: Vec<usize>,
    #[serde(rename = "T")]
    frames: usize,
    /// Little-endian f64 bytes, base64.
    features: String,
}

pub fn write_task_dump<W: Write>(mut w: W, task: &TaskDataset) -> Result<()> {
    for split in [Split::Train, Split::Val, Split::Test] {
        for u in task.split(split) {
            let bytes: Vec<u8> = u.features.data().iter().flat_map(|x| x.to_le_bytes()).collect();
            let rec = DumpRecord {
                task_id: u.task_id,
                split,
                noisy: u.noisy,
                targets: u.targets.clone(),
                frames: u.frames(),
                features: B64.encode(bytes),
            };
            serde_json::to_writer(&mut w, &rec).map_err(|e| Error::Format(e.to_string()))?;
            w.write_all(b"\n")?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_task_dump<R: BufRead>(r: R) -> Result<TaskDataset> {
    let mut task: Option<TaskDataset> = None;
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fmt = |m: String| Error::Format(format!("line {}: {m}", lineno + 1));
        let rec: DumpRecord = serde_json::from_str(&line).map_err(|e| fmt(e.to_string()))?;
        let bytes = B64.decode(&rec.features).map_err(|e| fmt(e.to_string()))?;
        if bytes.len() % 8 != 0 || rec.frames == 0 || (bytes.len() / 8) % rec.frames != 0 {
            return Err(fmt("feature payload does not match T".into()));
        }
        let data: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let f = data.len() / rec.frames;
        let u = Utterance {
            features: Tensor::from_vec(&[rec.frames, f], data)?,
            targets: rec.targets,
            noisy: rec.noisy,
            task_id: rec.task_id,
        };
        let t = task.get_or_insert_with(|| TaskDataset {
            task_id: rec.task_id,
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
        });
        if t.task_id != rec.task_id {
            return Err(fmt("mixed task ids in one dump".into()));
        }
        match rec.split {
            Split::Train => t.train.push(u),
            Split::Val => t.val.push(u),
            Split::Test => t.test.push(u),
        }
    }
    task.ok_or_else(|| Error::Format("empty dataset dump".into()))
}

pub fn save_task_dump(path: &Path, task: &TaskDataset) -> Result<()> {
    let mut buf = Vec::new();
    write_task_dump(&mut buf, task)?;
    crate::checkpoint::write_atomic(path, &buf)
}

pub fn load_task_dump(path: &Path) -> Result<TaskDataset> {
    read_task_dump(std::io::BufReader::new(std::fs::File::open(path)?))
}

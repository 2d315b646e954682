//! Long-format CSV export of run records for plotting.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clasr_core::metrics::Channel;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::record::{RunRecord, RESULTS_FILE};

pub const PLOT_HEADER: [&str; 8] = ["method", "epochs", "seed", "k", "i_or_null", "channel", "metric", "value"];

/// One datum of the plot CSV. `i` is `None` for per-row summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub method: String,
    pub epochs: usize,
    pub seed: u64,
    pub k: usize,
    pub i_or_null: Option<usize>,
    pub channel: String,
    pub metric: String,
    pub value: f64,
}

/// Rows for one record: WER cells by `(k, i, channel)`, then AvgWER by
/// `(k, channel)`, then BWT by `(k >= 2, channel)`.
pub fn plot_rows(record: &RunRecord) -> Result<Vec<PlotRow>> {
    let row = |k, i, ch: Channel, metric: &str, value| PlotRow {
        method: record.method().to_string(),
        epochs: record.epochs(),
        seed: record.seed(),
        k,
        i_or_null: i,
        channel: ch.name().to_string(),
        metric: metric.to_string(),
        value,
    };
    let rows = record.matrix.completed_rows();
    let mut out = Vec::new();
    for k in 1..=rows {
        for i in 1..=k {
            for ch in Channel::ALL {
                out.push(row(k, Some(i), ch, "wer", record.matrix.get(k, i, ch)?));
            }
        }
    }
    let series = |metric: &str, map: &BTreeMap<Channel, Vec<f64>>, first_k: usize| -> Result<Vec<PlotRow>> {
        let mut v = Vec::new();
        for k in first_k..=rows {
            for ch in Channel::ALL {
                let value = map
                    .get(&ch)
                    .and_then(|s| s.get(k - first_k))
                    .ok_or_else(|| HarnessError::Report(format!("record lacks {metric} for k = {k}")))?;
                v.push(row(k, None, ch, metric, *value));
            }
        }
        Ok(v)
    };
    out.extend(series("avg_wer", &record.avg_wer, 1)?);
    out.extend(series("bwt", &record.bwt, 2)?);
    Ok(out)
}

fn check_same_k(records: &[RunRecord]) -> Result<()> {
    if let Some(first) = records.first() {
        if let Some(r) = records.iter().find(|r| r.num_tasks() != first.num_tasks()) {
            return Err(HarnessError::Report(format!(
                "records mix task counts {} and {}",
                first.num_tasks(),
                r.num_tasks()
            )));
        }
    }
    Ok(())
}

fn csv_err(e: csv::Error) -> HarnessError {
    HarnessError::Report(e.to_string())
}

/// Writes the plot CSV. An empty `records` gives a header-only file.
pub fn emit_plot_data(records: &[RunRecord], path: &Path) -> Result<()> {
    check_same_k(records)?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(csv_err)?;
    w.write_record(PLOT_HEADER).map_err(csv_err)?;
    for r in records {
        for row in plot_rows(r)? {
            w.serialize(row).map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn read_plot_data(path: &Path) -> Result<Vec<PlotRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub epochs: usize,
    pub k: usize,
    pub i_or_null: Option<usize>,
    pub channel: String,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

/// Mean and min/max envelope over seeds for every plot datum.
pub fn summarize(records: &[RunRecord]) -> Result<Vec<SummaryRow>> {
    check_same_k(records)?;
    type Key = (String, usize, usize, Option<usize>, String, String);
    let mut groups: BTreeMap<Key, Vec<f64>> = BTreeMap::new();
    for r in records {
        for p in plot_rows(r)? {
            let key = (p.method, p.epochs, p.k, p.i_or_null, p.channel, p.metric);
            groups.entry(key).or_default().push(p.value);
        }
    }
    Ok(groups
        .into_iter()
        .map(|((method, epochs, k, i_or_null, channel, metric), v)| SummaryRow {
            method,
            epochs,
            k,
            i_or_null,
            channel,
            metric,
            n: v.len(),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
        .collect())
}

pub fn emit_summary(records: &[RunRecord], path: &Path) -> Result<()> {
    let rows = summarize(records)?;
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// Every `results.json` under `dir`, in path order.
pub fn collect_records(dir: &Path) -> Result<Vec<(PathBuf, RunRecord)>> {
    let mut paths: Vec<PathBuf> = walkdir::WalkDir::new(dir)
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file() && e.file_name() == RESULTS_FILE)
        .map(|e| e.into_path())
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| RunRecord::load(&p).map(|r| (p, r)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;
    use clasr_core::metrics::WerCell;

    fn record(k: usize, seed: u64) -> RunRecord {
        let cfg = ExperimentConfig::parse(&format!("num_tasks = {k}\nglobal_seed = {seed}")).unwrap();
        let mut r = RunRecord::new(cfg);
        for row in 1..=k {
            for i in 1..=row {
                let w = (row * 10 + i) as f64 / 97.0 + seed as f64 * 0.1;
                r.matrix.set(row, i, WerCell::uniform(w)).unwrap();
            }
        }
        r.refresh_summaries().unwrap();
        r.complete = true;
        r
    }

    #[test]
    fn two_task_record_has_24_rows() {
        let rows = plot_rows(&record(2, 0)).unwrap();
        assert_eq!(rows.len(), 24);
        assert_eq!(rows.iter().filter(|r| r.metric == "wer").count(), 12);
        assert_eq!(rows.iter().filter(|r| r.metric == "avg_wer").count(), 8);
        assert_eq!(rows.iter().filter(|r| r.metric == "bwt").count(), 4);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plot.csv");
        let records = vec![record(3, 0), record(3, 1)];
        emit_plot_data(&records, &path).unwrap();
        let back = read_plot_data(&path).unwrap();
        let expected: Vec<PlotRow> = records.iter().flat_map(|r| plot_rows(r).unwrap()).collect();
        assert_eq!(back, expected);
    }

    #[test]
    fn empty_input_gives_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plot.csv");
        emit_plot_data(&[], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.trim_end(), PLOT_HEADER.join(","));
    }

    #[test]
    fn mixed_task_counts_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let err = emit_plot_data(&[record(2, 0), record(3, 0)], &dir.path().join("x.csv"));
        assert!(matches!(err, Err(HarnessError::Report(_))));
    }

    #[test]
    fn summary_envelopes() {
        let s = summarize(&[record(2, 0), record(2, 1)]).unwrap();
        let cell = s
            .iter()
            .find(|r| r.metric == "wer" && r.k == 1 && r.channel == "ctc_clean")
            .unwrap();
        assert_eq!(cell.n, 2);
        assert_eq!(cell.min, 11.0 / 97.0);
        assert_eq!(cell.max, 11.0 / 97.0 + 0.1);
    }
}

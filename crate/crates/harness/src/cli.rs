//! Command-line entry point.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use clasr_core::strategies::Method;
use clasr_core::synth::save_task_dump;
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::report::{collect_records, emit_plot_data, emit_summary};
use crate::run::run_experiment;
use crate::source::SyntheticSource;

#[derive(Debug, Parser)]
#[command(name = "clasr", version, about = "Continual learning for hybrid CTC/transducer models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train on the task stream once and write results.json plus checkpoints.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Run every method x epochs x seed combination, one directory each.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',')]
        methods: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        epochs: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Collect every results.json under a directory into one plot CSV.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Optional mean/min/max table over seeds.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Write the synthetic task datasets as JSON lines.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_method(s: &str) -> Result<Method> {
    s.parse().map_err(|e: clasr_core::Error| HarnessError::Config(e.to_string()))
}

fn load_config(path: &std::path::Path) -> Result<ExperimentConfig> {
    Ok(ExperimentConfig::load(path)?.with_env_overrides())
}

/// Every configuration a sweep will run, in (method, epochs, seed) order.
pub fn sweep_configs(
    base: &ExperimentConfig,
    methods: &[String],
    epochs: &[usize],
    seeds: &[u64],
) -> Result<Vec<ExperimentConfig>> {
    let methods = if methods.is_empty() {
        vec![base.method]
    } else {
        methods.iter().map(|m| parse_method(m)).collect::<Result<_>>()?
    };
    let epochs = if epochs.is_empty() { vec![base.epochs_per_task] } else { epochs.to_vec() };
    let seeds = match (seeds.is_empty(), base.seeds.is_empty()) {
        (false, _) => seeds.to_vec(),
        (true, false) => base.seeds.clone(),
        (true, true) => vec![base.global_seed],
    };
    let mut out = Vec::new();
    for &method in &methods {
        for &e in &epochs {
            for &seed in &seeds {
                let cfg = ExperimentConfig {
                    method,
                    epochs_per_task: e,
                    global_seed: seed,
                    ..base.clone()
                };
                cfg.validate()?;
                out.push(cfg);
            }
        }
    }
    Ok(out)
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            seed,
            method,
            epochs,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.global_seed = s;
            }
            if let Some(m) = method {
                cfg.method = parse_method(&m)?;
            }
            if let Some(e) = epochs {
                cfg.epochs_per_task = e;
            }
            cfg.validate()?;
            run_experiment(&cfg)?;
            println!("{}", cfg.run_dir().display());
        }
        Command::Sweep {
            config,
            methods,
            epochs,
            seeds,
        } => {
            let cfgs = sweep_configs(&load_config(&config)?, &methods, &epochs, &seeds)?;
            let failures: Vec<String> = cfgs
                .par_iter()
                .filter_map(|c| run_experiment(c).err().map(|e| format!("{}: {e}", c.run_name())))
                .collect();
            if !failures.is_empty() {
                return Err(HarnessError::Report(format!(
                    "{} of {} runs failed:\n{}",
                    failures.len(),
                    cfgs.len(),
                    failures.join("\n")
                )));
            }
            println!("{} runs in {}", cfgs.len(), cfgs[0].output_dir.display());
        }
        Command::Report { input, out, summary } => {
            let records: Vec<_> = collect_records(&input)?.into_iter().map(|(_, r)| r).collect();
            emit_plot_data(&records, &out)?;
            if let Some(s) = summary {
                emit_summary(&records, &s)?;
            }
            println!("{} records -> {}", records.len(), out.display());
        }
        Command::GenData { config, out } => {
            let cfg = load_config(&config)?;
            std::fs::create_dir_all(&out).map_err(|e| HarnessError::io(&out, e))?;
            for task in SyntheticSource::build(&cfg)?.tasks() {
                save_task_dump(&out.join(format!("task_{}.jsonl", task.task_id)), task)?;
            }
        }
    }
    Ok(())
}

/// Parses `args` and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_is_a_cartesian_product() {
        let base = ExperimentConfig::default();
        let methods: Vec<String> = ["naive", "ewc", "mas", "lwf"].map(String::from).to_vec();
        let cfgs = sweep_configs(&base, &methods, &[1, 2, 5, 10], &[0, 1, 2]).unwrap();
        assert_eq!(cfgs.len(), 48);
        let mut names: Vec<String> = cfgs.iter().map(|c| c.run_name()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), 48);
    }

    #[test]
    fn unknown_method_is_a_config_error() {
        let err = sweep_configs(&ExperimentConfig::default(), &["si".into()], &[], &[]).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn missing_config_exits_1() {
        assert_eq!(main_with_args(["clasr", "run", "--config", "/nonexistent/x.conf"]), 1);
        assert_eq!(main_with_args(["clasr", "frobnicate"]), 1);
    }
}

//! `narval` subcommands over [`PipelineConfig`].
//!
//! Successful stages print a JSON summary on stdout. Failures print
//! `{"error": {"kind": ..., "message": ...}}` on stderr and exit nonzero.

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::models::{run_stub_worker, StubMode};
use crate::pipeline::{self, PipelineConfig};
use crate::{Clock, Error, Result};

#[derive(Debug, Parser)]
#[command(name = "narval", version, about = "Narrative generation, review, classification and ensemble labeling")]
pub struct Cli {
    /// Pipeline config (JSON; `${VAR}` is replaced from the environment).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Artifact directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Pin timestamps and zero recorded durations for byte-identical output.
    #[arg(long, global = true)]
    pub frozen_time: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate narratives from the prompt templates.
    Generate {
        /// Use the offline mock generator.
        #[arg(long)]
        mock: bool,
        /// Planted defect rate for the mock.
        #[arg(long)]
        invalid_rate: Option<f64>,
        /// Total narratives.
        #[arg(long)]
        size: Option<usize>,
    },
    /// Split the corpus into tagged and untagged parts.
    Sample {
        #[arg(long)]
        fraction: Option<f64>,
    },
    /// Assign two reviewers to each tagged narrative.
    Assign,
    /// Serve the tagging API (and a static UI directory when configured).
    Serve {
        #[arg(long)]
        addr: Option<String>,
        #[arg(long)]
        ui: Option<PathBuf>,
    },
    /// Turn the decision log into final labels.
    Aggregate {
        /// Use scripted reviewers voting the mock's planted truth.
        #[arg(long)]
        simulate: bool,
        /// Disagreement rate for scripted reviewers.
        #[arg(long)]
        disagreement: Option<f64>,
    },
    /// Cross-validate and fit every configured model.
    Train {
        #[arg(long)]
        k: Option<usize>,
    },
    /// Confusion, precision, Fisher and agreement on out-of-fold predictions.
    Evaluate,
    /// Label the untagged narratives with every trained model.
    Predict,
    /// Thresholded vote over model predictions.
    Ensemble {
        #[arg(long)]
        threshold: Option<usize>,
    },
    /// Write table and figure data.
    Report,
    /// Time training and prediction of the native models.
    Bench {
        #[arg(long)]
        repetitions: Option<usize>,
    },
    /// Run every stage against the mock generator.
    E2eMock {
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        invalid_rate: Option<f64>,
        #[arg(long)]
        fraction: Option<f64>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        threshold: Option<usize>,
    },
    /// Protocol test worker.
    #[command(hide = true)]
    StubWorker {
        #[arg(long, default_value = "yes")]
        mode: String,
    },
}

fn print<T: Serialize>(value: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out).map_err(|e| Error::io("<stdout>", e))
}

fn base_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match (&cli.config, &cli.command) {
        (Some(path), _) => PipelineConfig::load(path)?,
        (None, Command::E2eMock { .. }) => PipelineConfig::e2e_mock(42, "out"),
        (None, _) => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn set_threshold(cfg: &mut PipelineConfig, threshold: Option<usize>) {
    if let Some(t) = threshold {
        let mut e = cfg.ensemble_config();
        e.threshold = Some(t);
        cfg.ensemble = Some(e);
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    if let Command::StubWorker { mode } = &cli.command {
        let mode: StubMode = mode.parse()?;
        return run_stub_worker(mode, std::io::stdin().lock(), std::io::stdout().lock());
    }
    let clock = if cli.frozen_time { Clock::frozen() } else { Clock::System };
    let mut cfg = base_config(&cli)?;
    match cli.command {
        Command::Generate { mock, invalid_rate, size } => {
            if mock {
                cfg.generation.mock_mode = true;
            }
            if let Some(r) = invalid_rate {
                cfg.generation.mock_invalid_rate = r;
            }
            if let Some(n) = size {
                cfg.corpus_size = n;
            }
            print(&pipeline::generate_stage(&cfg, clock)?)
        }
        Command::Sample { fraction } => {
            if let Some(f) = fraction {
                cfg.sample_fraction = f;
            }
            let (tagged, untagged) = pipeline::sample_stage(&cfg)?;
            print(&json!({"tagged": tagged, "untagged": untagged}))
        }
        Command::Assign => {
            let a = pipeline::assign_stage(&cfg)?;
            print(&json!({"assigned": a.len()}))
        }
        Command::Serve { addr, ui } => {
            if let Some(a) = addr {
                cfg.serve_addr = a;
            }
            if ui.is_some() {
                cfg.ui_dir = ui;
            }
            pipeline::serve_stage(&cfg, clock)
        }
        Command::Aggregate { simulate, disagreement } => {
            if let Some(r) = disagreement {
                cfg.review.disagreement_rate = r;
            }
            print(&pipeline::aggregate_stage(&cfg, clock, simulate)?)
        }
        Command::Train { k } => {
            if let Some(k) = k {
                cfg.cv.k = k;
            }
            let m = pipeline::train_stage(&cfg, clock)?;
            print(&json!({"groups": m.groups, "models": m.models, "k": m.k}))
        }
        Command::Evaluate => {
            let e = pipeline::evaluate_stage(&cfg)?;
            print(&json!({"evaluations": e.evaluations.len(), "slices": e.agreement.keys().collect::<Vec<_>>()}))
        }
        Command::Predict => {
            let sets = pipeline::predict_stage(&cfg, clock)?;
            let counts: Vec<_> = sets
                .iter()
                .map(|s| json!({"model": s.model, "predictions": s.len(), "yes": s.yes_count()}))
                .collect();
            print(&counts)
        }
        Command::Ensemble { threshold } => {
            set_threshold(&mut cfg, threshold);
            let s = pipeline::ensemble_stage(&cfg)?;
            print(&json!({"threshold": s.threshold, "members": s.members, "labeled": s.labeled, "yes": s.yes}))
        }
        Command::Report => {
            let r = pipeline::report_stage(&cfg)?;
            print(&json!({"table": r.table, "fisher": r.fisher, "mcnemar_truth": r.mcnemar_truth}))
        }
        Command::Bench { repetitions } => {
            if let Some(r) = repetitions {
                cfg.bench.repetitions = r;
            }
            print(&pipeline::bench_stage(&cfg)?)
        }
        Command::E2eMock {
            size,
            invalid_rate,
            fraction,
            k,
            threshold,
        } => {
            if let Some(n) = size {
                cfg.corpus_size = n;
            }
            if let Some(r) = invalid_rate {
                cfg.generation.mock_invalid_rate = r;
            }
            if let Some(f) = fraction {
                cfg.sample_fraction = f;
            }
            if let Some(k) = k {
                cfg.cv.k = k;
            }
            set_threshold(&mut cfg, threshold);
            print(&pipeline::e2e_mock(&cfg, clock)?)
        }
        Command::StubWorker { .. } => unreachable!("handled above"),
    }
}

/// Parses `args` and runs; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            eprintln!("{}", json!({"error": {"kind": "usage", "message": e.to_string().trim()}}));
            return 2;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", json!({"error": {"kind": e.kind(), "message": e.to_string()}}));
            1
        }
    }
}

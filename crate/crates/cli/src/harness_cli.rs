//! `harness`: scenario runs, suite generation and chunked evaluation.

use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use duplex_core::backends::{GeneratorBackend, ScriptedBackend, ScriptedRule};
use duplex_core::harness::{
    concat_eval_file, idle_suite, latency_suite, load_suite, run_scenarios, save_suite,
    termination_suite,
};
use duplex_core::session::GenConfig;

use crate::RemoteArgs;

#[derive(Parser)]
#[command(
    name = "harness",
    version,
    about = "Scripted-user evaluation of duplex sessions"
)]
pub struct HarnessArgs {
    #[command(subcommand)]
    pub command: HarnessCommand,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    Scripted,
    Remote,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SuiteKind {
    Idle,
    Termination,
    Latency,
}

#[derive(Subcommand)]
pub enum HarnessCommand {
    /// Run every scenario in a suite directory and write a metrics report.
    Run {
        #[arg(long)]
        suite: PathBuf,
        #[arg(long, value_enum, default_value_t = BackendKind::Scripted)]
        backend: BackendKind,
        #[arg(long)]
        report: PathBuf,
        /// Shard scenarios across threads.
        #[arg(long)]
        parallel: bool,
        #[command(flatten)]
        remote: RemoteArgs,
    },
    /// Feed each instruction slice by slice and write the joined answers.
    ConcatEval {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = BackendKind::Scripted)]
        backend: BackendKind,
        /// JSON scripted-backend rule; the default rule otherwise.
        #[arg(long)]
        rule: Option<PathBuf>,
        #[arg(long, default_value_t = 2000)]
        max_ticks: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        remote: RemoteArgs,
    },
    /// Write a generated scenario suite as one JSON file.
    GenSuite {
        #[arg(long, value_enum)]
        kind: SuiteKind,
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn run(args: HarnessArgs, out: &mut dyn Write) -> anyhow::Result<bool> {
    match args.command {
        HarnessCommand::Run {
            suite,
            backend,
            report,
            parallel,
            remote,
        } => {
            let scenarios = load_suite(&suite)?;
            let metrics = match backend {
                BackendKind::Scripted => run_scenarios(
                    &scenarios,
                    |s| Arc::new(ScriptedBackend::new(s.rule.clone())) as Arc<dyn GeneratorBackend>,
                    parallel,
                ),
                BackendKind::Remote => {
                    let shared: Arc<dyn GeneratorBackend> = Arc::new(remote.backend()?);
                    run_scenarios(&scenarios, |_| shared.clone(), parallel)
                }
            };
            std::fs::write(&report, serde_json::to_string_pretty(&metrics)?)
                .with_context(|| format!("writing {}", report.display()))?;
            let rate = |r: Option<f64>| r.map_or("n/a".to_string(), |v| format!("{:.4}", v));
            writeln!(
                out,
                "scenarios: {} passed, {} failed",
                metrics.passed, metrics.failed
            )?;
            writeln!(out, "idle compliance: {}", rate(metrics.idle_compliance))?;
            writeln!(
                out,
                "termination compliance: {}",
                rate(metrics.termination_compliance)
            )?;
            writeln!(
                out,
                "latency (ticks): mean {} p50 {} p90 {} no-response {}",
                rate(metrics.latency.mean),
                metrics.latency.p50.map_or("n/a".into(), |v| v.to_string()),
                metrics.latency.p90.map_or("n/a".into(), |v| v.to_string()),
                metrics.latency.missing
            )?;
            for r in metrics.results.iter().filter(|r| !r.passed) {
                writeln!(out, "FAILED {}: {}", r.name, r.failures.join("; "))?;
            }
            Ok(metrics.failed == 0)
        }
        HarnessCommand::ConcatEval {
            input,
            out: path,
            backend,
            rule,
            max_ticks,
            seed,
            remote,
        } => {
            let mut cfg = GenConfig::default();
            cfg.slicer.rng_seed = seed;
            let b: Box<dyn GeneratorBackend> = match backend {
                BackendKind::Scripted => {
                    let rule: ScriptedRule = match rule {
                        Some(p) => serde_json::from_str(
                            &std::fs::read_to_string(&p)
                                .with_context(|| format!("reading {}", p.display()))?,
                        )?,
                        None => ScriptedRule::default(),
                    };
                    Box::new(ScriptedBackend::new(rule))
                }
                BackendKind::Remote => Box::new(remote.backend()?),
            };
            let summary = concat_eval_file(&input, &path, b.as_ref(), &cfg, max_ticks)?;
            writeln!(
                out,
                "{} instructions: {} written, {} skipped, {} failed",
                summary.total,
                summary.written,
                summary.skipped.len(),
                summary.failed.len()
            )?;
            for (id, reason) in &summary.failed {
                writeln!(out, "FAILED {id}: {reason}")?;
            }
            Ok(summary.failed.is_empty())
        }
        HarnessCommand::GenSuite {
            kind,
            count,
            seed,
            out: path,
        } => {
            let suite = match kind {
                SuiteKind::Idle => idle_suite(count, seed),
                SuiteKind::Termination => termination_suite(count, seed),
                SuiteKind::Latency => latency_suite(count, seed),
            };
            save_suite(&path, &suite)?;
            writeln!(out, "wrote {} scenarios to {}", suite.len(), path.display())?;
            Ok(true)
        }
    }
}

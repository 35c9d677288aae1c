//! `forge`: build, validate and summarize duplex corpora.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use duplex_core::forge::{
    build_corpus, check_replay, read_jsonl, read_sources, validate_dialogue, write_jsonl,
    Annotator, CorpusConfig, CorpusStats, DuplexDialogue, Forge, IdentityRewriter, Mix,
    RemoteAnnotator, RemoteRewriter, Rewriter, SourceDialogue, TemplateAnnotator, TransitionBank,
};
use duplex_core::slicer::{SlicerConfig, WhitespaceTokenizer};

use crate::RemoteArgs;

#[derive(Parser)]
#[command(
    name = "forge",
    version,
    about = "Build, validate and summarize duplex dialogue corpora"
)]
pub struct ForgeArgs {
    #[command(subcommand)]
    pub command: ForgeCommand,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RewriterKind {
    Identity,
    Remote,
}

#[derive(Subcommand)]
pub enum ForgeCommand {
    /// Generate a corpus from turn-based source dialogues.
    Build {
        /// Source file or directory of JSON / JSONL dialogues.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Category weights, e.g. `basic=0.3,term=0.3`. Defaults to the
        /// reference proportions.
        #[arg(long)]
        mix: Option<Mix>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = RewriterKind::Identity)]
        rewriter: RewriterKind,
        /// Examples to attempt; defaults to the number of sources.
        #[arg(long)]
        count: Option<usize>,
        /// Generate on one thread.
        #[arg(long)]
        sequential: bool,
        #[command(flatten)]
        remote: RemoteArgs,
    },
    /// Check every example's structure; exits non-zero on any failure.
    Validate {
        file: PathBuf,
        /// Also rebuild each example from these sources and compare.
        #[arg(long)]
        sources: Option<PathBuf>,
    },
    /// Per-category counts and averages.
    Stats {
        file: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

pub fn run(args: ForgeArgs, out: &mut dyn Write) -> anyhow::Result<bool> {
    match args.command {
        ForgeCommand::Build {
            input,
            out: path,
            mix,
            seed,
            rewriter,
            count,
            sequential,
            remote,
        } => {
            let sources = read_sources(&input)?;
            if sources.is_empty() {
                bail!("no usable dialogues in {}", input.display());
            }
            let (rw, an): (Box<dyn Rewriter>, Box<dyn Annotator>) = match rewriter {
                RewriterKind::Identity => (Box::new(IdentityRewriter), Box::new(TemplateAnnotator)),
                RewriterKind::Remote => (
                    Box::new(RemoteRewriter::new(remote.backend()?, remote.gen_config())),
                    Box::new(RemoteAnnotator::new(remote.backend()?, remote.gen_config())),
                ),
            };
            let slicer = SlicerConfig::default();
            let bank = TransitionBank::default();
            let forge = Forge {
                slicer: &slicer,
                tokenizer: &WhitespaceTokenizer,
                bank: &bank,
                rewriter: rw.as_ref(),
                annotator: an.as_ref(),
            };
            let cfg = CorpusConfig {
                seed,
                count: count.unwrap_or(sources.len()),
                mix: mix.unwrap_or_default(),
                parallel: !sequential,
            };
            let corpus = build_corpus(&forge, &sources, &cfg)?;
            write_jsonl(&path, corpus.dialogues.iter())?;
            writeln!(
                out,
                "wrote {} dialogues to {}",
                corpus.dialogues.len(),
                path.display()
            )?;
            write!(out, "{}", corpus.stats.report())?;
            for (c, n) in &corpus.stats.skipped {
                writeln!(out, "skipped {n} {c} attempts")?;
            }
            Ok(true)
        }
        ForgeCommand::Validate { file, sources } => validate(&file, sources.as_deref(), out),
        ForgeCommand::Stats { file, json } => {
            let ds = read_jsonl(&file, &WhitespaceTokenizer)?;
            let report = CorpusStats::from_dialogues(&ds, &WhitespaceTokenizer).report();
            if json {
                writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
            } else {
                write!(out, "{report}")?;
            }
            Ok(true)
        }
    }
}

fn validate(file: &Path, sources: Option<&Path>, out: &mut dyn Write) -> anyhow::Result<bool> {
    let by_id: Option<HashMap<String, SourceDialogue>> = match sources {
        Some(p) => Some(
            read_sources(p)?
                .into_iter()
                .map(|s| (s.id().to_owned(), s))
                .collect(),
        ),
        None => None,
    };
    let slicer = SlicerConfig::default();
    let tok = WhitespaceTokenizer;
    let reader =
        BufReader::new(File::open(file).with_context(|| format!("opening {}", file.display()))?);
    let (mut total, mut passed) = (0usize, 0usize);
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        total += 1;
        let result = DuplexDialogue::from_json_line(&line, &tok).and_then(|d| {
            validate_dialogue(&d, &slicer, &tok).map_err(|e| format!("{}: {e}", d.id))?;
            if let Some(map) = &by_id {
                let srcs = d
                    .injection_meta
                    .source_ids
                    .iter()
                    .map(|id| {
                        map.get(id)
                            .ok_or_else(|| format!("{}: unknown source {id}", d.id))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                check_replay(&d, &srcs, &slicer, &tok).map_err(|e| format!("{}: {e}", d.id))?;
            }
            Ok(())
        });
        match result {
            Ok(()) => passed += 1,
            Err(reason) => writeln!(out, "line {}: {reason}", n + 1)?,
        }
    }
    writeln!(out, "{passed}/{total} passed")?;
    Ok(passed == total)
}

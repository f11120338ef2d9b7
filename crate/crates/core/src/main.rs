//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 config error, 2 partial cell failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};

use polyglot_abstain::corpus;
use polyglot_abstain::harness::{
    self, load_records, overlap_from_records, recompute_reports, HarnessError, QualityKind,
    RunConfig, RunOutcome, SimulateSpec,
};
use polyglot_abstain::langspace::{Attribute, LanguageCode, LanguageSpace, RelatednessMode};
use polyglot_abstain::strategies::PromptSet;

#[derive(Parser)]
#[command(
    name = "polyglot-abstain",
    version,
    about = "Multilingual abstention harness: feedback pipelines, relatedness selection, and reliability metrics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print typology distances from one language, ascending.
    Distances {
        #[arg(long)]
        from: String,
        /// Attribute subset (comma-separated); default: all six.
        #[arg(long, value_delimiter = ',')]
        attrs: Vec<String>,
    },
    /// Print the feedback languages a relatedness mode selects.
    Select {
        #[arg(long)]
        lang: String,
        #[arg(long, default_value = "default")]
        mode: String,
        #[arg(short, long, default_value_t = 3)]
        k: usize,
    },
    /// Execute a full experiment from a run config.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Recompute metric reports offline from a records file.
    Metrics {
        #[arg(long)]
        records: PathBuf,
        #[arg(long, default_value = "unknown")]
        model: String,
        #[arg(long, default_value = "mixed")]
        dataset: String,
        /// Write reports under this directory instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Three-language abstain-overlap analysis over a finished run.
    Overlap {
        /// Exactly three language codes, comma-separated.
        #[arg(long, value_delimiter = ',')]
        langs: Vec<String>,
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value = "multi_related")]
        strategy: String,
    },
    /// Judge-based feedback analysis over a finished run.
    Judge {
        #[arg(long)]
        run: PathBuf,
        /// quality | role
        #[arg(long)]
        mode: String,
        /// Left strategy for quality mode.
        #[arg(long)]
        left: Option<String>,
        /// Right strategy for quality mode.
        #[arg(long)]
        right: Option<String>,
        /// relevance | informativeness
        #[arg(long, default_value = "relevance")]
        kind: String,
        /// Strategy for role mode.
        #[arg(long)]
        strategy: Option<String>,
        /// Cap on judged items per cell.
        #[arg(long, default_value_t = 100)]
        limit: usize,
    },
    /// Synthetic-oracle pipeline validation.
    Simulate {
        #[arg(long)]
        oracle: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Distances { from, attrs } => distances(&from, &attrs),
        Command::Select { lang, mode, k } => select(&lang, &mode, k),
        Command::Run { config } => {
            let config = RunConfig::load(&config)?;
            let outcome = harness::run(&config, Path::new("."))?;
            report_outcome(outcome)
        }
        Command::Metrics {
            records,
            model,
            dataset,
            out,
        } => metrics(&records, &model, &dataset, out.as_deref()),
        Command::Overlap { langs, run, strategy } => overlap(&langs, &run, &strategy),
        Command::Judge {
            run,
            mode,
            left,
            right,
            kind,
            strategy,
            limit,
        } => judge(&run, &mode, left, right, &kind, strategy, limit),
        Command::Simulate { oracle } => {
            let spec = SimulateSpec::load(&oracle)?;
            let outcome = harness::simulate(&spec.oracle, &spec.scenario, Path::new("."))?;
            report_outcome(outcome)
        }
    }
}

fn report_outcome(outcome: RunOutcome) -> Result<ExitCode> {
    println!("run directory: {}", outcome.run_dir.display());
    for cell in &outcome.resumed {
        emit(format_args!("resumed  {cell}"));
    }
    for cell in &outcome.completed {
        emit(format_args!("complete {cell}"));
    }
    for (cell, reason) in &outcome.failed {
        emit(format_args!("FAILED   {cell}: {reason}"));
    }
    println!(
        "{} completed, {} resumed, {} failed",
        outcome.completed.len(),
        outcome.resumed.len(),
        outcome.failed.len()
    );
    Ok(if outcome.fully_succeeded() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn parse_lang(s: &str) -> Result<LanguageCode> {
    s.parse::<LanguageCode>().map_err(|e| anyhow!("{e}"))
}

/// Prints without panicking when stdout is a closed pipe (e.g. `| head`).
fn emit(line: std::fmt::Arguments<'_>) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout(), "{line}");
}

fn distances(from: &str, attrs: &[String]) -> Result<ExitCode> {
    let space = LanguageSpace::bundled().map_err(|e| anyhow!("{e}"))?;
    let from = parse_lang(from)?;
    let attrs: Vec<Attribute> = if attrs.is_empty() {
        Attribute::ALL.to_vec()
    } else {
        attrs
            .iter()
            .map(|a| a.parse::<Attribute>().map_err(|e| anyhow!("{e}")))
            .collect::<Result<_>>()?
    };
    let ranked = space.distances_from(from, &attrs).map_err(|e| anyhow!("{e}"))?;
    emit(format_args!(
        "distances from {from} over {}:",
        attrs.iter().map(|a| a.as_str()).collect::<Vec<_>>().join(",")
    ));
    for (code, distance) in ranked {
        let name = space
            .profile(code)
            .map(|p| p.display_name.clone())
            .unwrap_or_default();
        let skipped = if distance.skipped.is_empty() {
            String::new()
        } else {
            format!(
                "  (skipped: {})",
                distance
                    .skipped
                    .iter()
                    .map(|a| a.as_str())
                    .collect::<Vec<_>>()
                    .join(",")
            )
        };
        emit(format_args!("{code}  {name:<12} {:.6}{skipped}", distance.value));
    }
    Ok(ExitCode::SUCCESS)
}

fn select(lang: &str, mode: &str, k: usize) -> Result<ExitCode> {
    let space = LanguageSpace::bundled().map_err(|e| anyhow!("{e}"))?;
    let lang = parse_lang(lang)?;
    let mode: RelatednessMode = mode.parse().map_err(|e| anyhow!("{e}"))?;
    let selected = space
        .select_feedback_languages(lang, mode, k)
        .map_err(|e| anyhow!("{e}"))?;
    for entry in selected {
        match entry.code {
            Some(code) => emit(format_args!("{code}  {}", entry.name)),
            None => emit(format_args!("--  {}", entry.name)),
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn metrics(records_path: &Path, model: &str, dataset: &str, out: Option<&Path>) -> Result<ExitCode> {
    let records = load_records(records_path)?;
    if records.is_empty() {
        bail!("no records in {}", records_path.display());
    }
    let reports = recompute_reports(&records, model, dataset);
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir).context("create output dir")?;
            for report in &reports {
                let name = format!("{}.{}.json", report.cell.strategy, report.cell.language);
                let body = serde_json::to_string_pretty(report)?;
                std::fs::write(dir.join(name), body)?;
            }
            println!("wrote {} reports to {}", reports.len(), dir.display());
        }
        None => println!("{}", serde_json::to_string_pretty(&reports)?),
    }
    Ok(ExitCode::SUCCESS)
}

fn overlap(langs: &[String], run_dir: &Path, strategy: &str) -> Result<ExitCode> {
    if langs.len() != 3 {
        bail!("--langs needs exactly three comma-separated codes, got {}", langs.len());
    }
    let languages = [
        parse_lang(&langs[0])?,
        parse_lang(&langs[1])?,
        parse_lang(&langs[2])?,
    ];
    let records = load_records(&run_dir.join("records.jsonl"))?;
    let report = overlap_from_records(&records, strategy, languages)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(ExitCode::SUCCESS)
}

fn load_run_items(config: &RunConfig) -> Result<BTreeMap<(LanguageCode, String), corpus::QAItem>> {
    let mut items = BTreeMap::new();
    for entry in config.active_datasets() {
        let loaded = corpus::load_dataset(&entry.path, entry.format, entry.dataset, entry.language)?;
        for item in loaded {
            items.insert((item.language, item.item_id.clone()), item);
        }
    }
    Ok(items)
}

fn judge(
    run_dir: &Path,
    mode: &str,
    left: Option<String>,
    right: Option<String>,
    kind: &str,
    strategy: Option<String>,
    limit: usize,
) -> Result<ExitCode> {
    let config = RunConfig::load(&run_dir.join("config.json"))?;
    let judge_spec = config
        .judge
        .as_ref()
        .ok_or_else(|| anyhow!("run config has no judge backend"))?;
    let cache_dir = config.cache_dir();
    let judge_backend = judge_spec.build(&cache_dir, config.concurrency, Path::new("."))?;
    let prompts = PromptSet::bundled();
    let items = load_run_items(&config)?;
    let records = load_records(&run_dir.join("records.jsonl"))?;
    std::fs::create_dir_all(run_dir.join("judge")).context("create judge dir")?;

    match mode {
        "quality" => {
            let left = left.ok_or_else(|| anyhow!("--left required for quality mode"))?;
            let right = right.ok_or_else(|| anyhow!("--right required for quality mode"))?;
            let kind: QualityKind = kind.parse().map_err(|e: HarnessError| anyhow!("{e}"))?;
            let take = |name: &str| -> Vec<_> {
                records
                    .iter()
                    .filter(|r| r.strategy == name && r.feedback.is_some())
                    .take(limit)
                    .cloned()
                    .collect()
            };
            let left_records = take(&left);
            let right_records = take(&right);
            if left_records.is_empty() || right_records.is_empty() {
                bail!("no feedback-bearing records for {left} / {right}");
            }
            let summary = harness::quality_summary(
                &items,
                &left_records,
                &right_records,
                kind,
                judge_backend.as_ref(),
                &prompts,
            );
            let body = serde_json::to_string_pretty(&summary)?;
            std::fs::write(run_dir.join("judge").join("quality.json"), &body)?;
            println!("{body}");
        }
        "role" => {
            let strategy = strategy.ok_or_else(|| anyhow!("--strategy required for role mode"))?;
            let strategy_records: Vec<_> = records
                .iter()
                .filter(|r| r.strategy == strategy && r.feedback.is_some())
                .take(limit)
                .cloned()
                .collect();
            if strategy_records.is_empty() {
                bail!("no feedback-bearing records for {strategy}");
            }
            let summary =
                harness::role_summary(&items, &strategy_records, judge_backend.as_ref(), &prompts);
            let body = serde_json::to_string_pretty(&summary)?;
            std::fs::write(run_dir.join("judge").join("role.json"), &body)?;
            println!("{body}");
        }
        other => bail!("unknown judge mode {other} (expected quality or role)"),
    }
    Ok(ExitCode::SUCCESS)
}

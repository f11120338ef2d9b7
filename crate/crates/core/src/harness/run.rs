//! Cell-by-cell experiment execution with resumable manifests.
//!
//! A cell is one (strategy, dataset, language) triple. Cells execute in a
//! deterministic order (config strategy order, then dataset, then language);
//! per-item parallelism lives inside each cell. Every completed cell writes
//! its records and report atomically and stamps the manifest, so an
//! interrupted run resumes exactly where it stopped and replays finished
//! work from the response cache.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::config::{DatasetEntry, RunConfig};
use super::HarnessError;
use crate::backend::CachedBackend;
use crate::corpus::{self, DatasetKind, QAItem, Split};
use crate::langspace::{LanguageCode, LanguageSpace};
use crate::metrics::{
    overlap_analysis, Cell, MetricsReport, OverlapReport, UtilityReport,
};
use crate::strategies::{
    run_strategy, AbstainRecord, PromptSet, StrategyContext, StrategySpec, ThresholdConfig,
};

#[derive(Debug, Clone)]
pub struct CellPlan {
    pub spec: StrategySpec,
    pub dataset: DatasetKind,
    pub language: LanguageCode,
    pub validation: Vec<QAItem>,
    pub test: Vec<QAItem>,
}

impl CellPlan {
    pub fn id(&self) -> String {
        format!("{}.{}.{}", self.spec.id(), self.dataset, self.language)
    }
}

/// Everything `execute` needs, already loaded and validated.
pub struct ResolvedRun {
    pub run_id: String,
    pub seed: u64,
    pub run_dir: PathBuf,
    pub model_label: String,
    pub answerer: Arc<CachedBackend>,
    pub feedback: Arc<CachedBackend>,
    pub space: LanguageSpace,
    pub prompts: PromptSet,
    pub cells: Vec<CellPlan>,
    pub splits: Vec<Split>,
    /// Original configuration, written into the run directory.
    pub provenance: serde_json::Value,
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default)]
    pub completed: BTreeMap<String, CellStamp>,
    #[serde(default)]
    pub failed: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellStamp {
    pub records: usize,
    pub failures: usize,
    pub a_acc: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellReport {
    pub metrics: MetricsReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<ThresholdConfig>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub run_dir: PathBuf,
    pub completed: Vec<String>,
    pub resumed: Vec<String>,
    pub failed: Vec<(String, String)>,
    pub reports: Vec<CellReport>,
}

impl RunOutcome {
    pub fn fully_succeeded(&self) -> bool {
        self.failed.is_empty()
    }
}

/// Loads datasets, builds splits, and plans cells from a run config.
pub fn resolve(config: &RunConfig, base_dir: &Path) -> Result<ResolvedRun, HarnessError> {
    config.validate()?;
    let space = LanguageSpace::bundled().map_err(|e| HarnessError::Config(e.to_string()))?;
    let prompts = match &config.prompts_dir {
        Some(dir) => PromptSet::from_dir(&abs(base_dir, dir))
            .map_err(|e| HarnessError::Config(e.to_string()))?,
        None => PromptSet::bundled(),
    };
    let cache_dir = abs(base_dir, &config.cache_dir());
    let answerer = config.answerer.build(&cache_dir, config.concurrency, base_dir)?;
    let feedback = match &config.feedback {
        Some(spec) => spec.build(&cache_dir, config.concurrency, base_dir)?,
        None => answerer.clone(),
    };

    let mut splits = Vec::new();
    let mut corpora: BTreeMap<(DatasetKind, LanguageCode), Vec<QAItem>> = BTreeMap::new();
    for entry in config.active_datasets() {
        let items = corpus::load_dataset(
            &abs(base_dir, &entry.path),
            entry.format,
            entry.dataset,
            entry.language,
        )?;
        let split = corpus::make_split(&items, config.seed)?;
        splits.push(split);
        corpora.insert((entry.dataset, entry.language), items);
    }

    let mut entries: Vec<&DatasetEntry> = config.active_datasets();
    entries.sort_by_key(|e| (e.dataset, e.language));

    let mut cells = Vec::new();
    for spec in &config.strategies {
        for entry in &entries {
            let items = &corpora[&(entry.dataset, entry.language)];
            let split = splits
                .iter()
                .find(|s| s.dataset == entry.dataset && s.language == entry.language)
                .expect("split built above");
            let by_id: BTreeMap<&str, &QAItem> =
                items.iter().map(|i| (i.item_id.as_str(), i)).collect();
            let pick = |ids: &[String]| -> Vec<QAItem> {
                ids.iter()
                    .filter_map(|id| by_id.get(id.as_str()).map(|i| (*i).clone()))
                    .collect()
            };
            cells.push(CellPlan {
                spec: spec.clone(),
                dataset: entry.dataset,
                language: entry.language,
                validation: pick(&split.validation),
                test: pick(&split.test),
            });
        }
    }

    Ok(ResolvedRun {
        run_id: config.run_id.clone(),
        seed: config.seed,
        run_dir: abs(base_dir, &config.output_dir).join(&config.run_id),
        model_label: config.answerer.model_label(),
        answerer,
        feedback,
        space,
        prompts,
        cells,
        splits,
        provenance: serde_json::to_value(config).expect("config serializes"),
    })
}

fn abs(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

fn io_err(context: &str, e: std::io::Error) -> HarnessError {
    HarnessError::Io(format!("{context}: {e}"))
}

fn write_atomic(path: &Path, content: &str) -> Result<(), HarnessError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, content).map_err(|e| io_err(&tmp.display().to_string(), e))?;
    std::fs::rename(&tmp, path).map_err(|e| io_err(&path.display().to_string(), e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let mut body = serde_json::to_string_pretty(value)
        .map_err(|e| HarnessError::Io(format!("serialize {}: {e}", path.display())))?;
    body.push('\n');
    write_atomic(path, &body)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, HarnessError> {
    let content =
        std::fs::read_to_string(path).map_err(|e| io_err(&path.display().to_string(), e))?;
    serde_json::from_str(&content)
        .map_err(|e| HarnessError::Io(format!("parse {}: {e}", path.display())))
}

/// Runs all cells, resuming from the manifest, and finalizes reports.
pub fn execute(resolved: &ResolvedRun) -> Result<RunOutcome, HarnessError> {
    let run_dir = &resolved.run_dir;
    for sub in ["records", "reports", "failures", "splits", "utility"] {
        std::fs::create_dir_all(run_dir.join(sub))
            .map_err(|e| io_err(&run_dir.join(sub).display().to_string(), e))?;
    }

    // provenance: a run id maps to exactly one configuration
    let config_path = run_dir.join("config.json");
    if config_path.exists() {
        let existing: serde_json::Value = read_json(&config_path)?;
        if existing != resolved.provenance {
            return Err(HarnessError::Config(format!(
                "run directory {} already holds a different config; pick a new run_id",
                run_dir.display()
            )));
        }
    } else {
        write_json(&config_path, &resolved.provenance)?;
    }

    for split in &resolved.splits {
        let name = format!("{}.{}.{}.json", split.dataset, split.language, split.seed);
        write_json(&run_dir.join("splits").join(name), split)?;
    }

    let request_log = run_dir.join("requests.log");
    resolved
        .answerer
        .set_request_log(&request_log)
        .map_err(|e| HarnessError::Io(e.to_string()))?;
    if !Arc::ptr_eq(&resolved.answerer, &resolved.feedback) {
        resolved
            .feedback
            .set_request_log(&request_log)
            .map_err(|e| HarnessError::Io(e.to_string()))?;
    }

    let manifest_path = run_dir.join("manifest.json");
    let mut manifest: Manifest = if manifest_path.exists() {
        read_json(&manifest_path)?
    } else {
        Manifest::default()
    };
    manifest.failed.clear();

    let shared_decisions = Mutex::new(BTreeMap::new());
    let mut completed = Vec::new();
    let mut resumed = Vec::new();
    let mut failed = Vec::new();

    for cell in &resolved.cells {
        let cell_id = cell.id();
        let report_path = run_dir.join("reports").join(format!("{cell_id}.json"));
        if manifest.completed.contains_key(&cell_id) && report_path.exists() {
            resumed.push(cell_id);
            continue;
        }

        let ctx = StrategyContext {
            space: &resolved.space,
            prompts: &resolved.prompts,
            answerer: resolved.answerer.as_ref(),
            feedback: resolved.feedback.as_ref(),
            seed: resolved.seed,
            split_label: format!("{}.{}.{}.validation", cell.dataset, cell.language, resolved.seed),
            shared_decisions: &shared_decisions,
        };
        let outcome = run_strategy(&cell.spec, &cell.validation, &cell.test, &ctx);
        match outcome {
            Ok(output) => {
                let cell_meta = Cell {
                    strategy: cell.spec.id(),
                    model: resolved.model_label.clone(),
                    dataset: cell.dataset.to_string(),
                    language: cell.language,
                };
                let metrics = MetricsReport::from_records(
                    cell_meta,
                    &output.records,
                    output.failures.len(),
                    output.verdict_unparseable,
                );
                match metrics {
                    Ok(metrics) => {
                        let records_lines: String = output
                            .records
                            .iter()
                            .map(|r| serde_json::to_string(r).expect("record serializes"))
                            .collect::<Vec<_>>()
                            .join("\n");
                        write_atomic(
                            &run_dir.join("records").join(format!("{cell_id}.jsonl")),
                            &format!("{records_lines}\n"),
                        )?;
                        if !output.failures.is_empty() {
                            let failure_lines: String = output
                                .failures
                                .iter()
                                .map(|f| serde_json::to_string(f).expect("failure serializes"))
                                .collect::<Vec<_>>()
                                .join("\n");
                            write_atomic(
                                &run_dir.join("failures").join(format!("{cell_id}.jsonl")),
                                &format!("{failure_lines}\n"),
                            )?;
                        }
                        let stamp = CellStamp {
                            records: output.records.len(),
                            failures: output.failures.len(),
                            a_acc: metrics.a_acc,
                        };
                        write_json(&report_path, &CellReport {
                            metrics,
                            threshold: output.threshold,
                        })?;
                        manifest.completed.insert(cell_id.clone(), stamp);
                        write_json(&manifest_path, &manifest)?;
                        completed.push(cell_id);
                    }
                    Err(e) => {
                        manifest.failed.insert(cell_id.clone(), e.to_string());
                        write_json(&manifest_path, &manifest)?;
                        failed.push((cell_id, e.to_string()));
                    }
                }
            }
            Err(e) => {
                manifest.failed.insert(cell_id.clone(), e.to_string());
                write_json(&manifest_path, &manifest)?;
                failed.push((cell_id, e.to_string()));
            }
        }
    }

    let reports = finalize(resolved, &manifest)?;
    Ok(RunOutcome {
        run_dir: run_dir.clone(),
        completed,
        resumed,
        failed,
        reports,
    })
}

/// Rebuilds the combined records file, summary CSVs, and utility reports
/// from the per-cell artifacts. Idempotent: safe to re-run any time.
fn finalize(resolved: &ResolvedRun, manifest: &Manifest) -> Result<Vec<CellReport>, HarnessError> {
    let run_dir = &resolved.run_dir;

    let mut reports = Vec::new();
    for cell in &resolved.cells {
        let cell_id = cell.id();
        if !manifest.completed.contains_key(&cell_id) {
            continue;
        }
        let report: CellReport = read_json(&run_dir.join("reports").join(format!("{cell_id}.json")))?;
        reports.push(report);
    }

    // combined records ledger, in cell order
    let combined_path = run_dir.join("records.jsonl");
    let mut combined = std::fs::File::create(&combined_path)
        .map_err(|e| io_err(&combined_path.display().to_string(), e))?;
    for cell in &resolved.cells {
        let cell_id = cell.id();
        if !manifest.completed.contains_key(&cell_id) {
            continue;
        }
        let path = run_dir.join("records").join(format!("{cell_id}.jsonl"));
        if path.exists() {
            let content = std::fs::read_to_string(&path)
                .map_err(|e| io_err(&path.display().to_string(), e))?;
            combined
                .write_all(content.as_bytes())
                .map_err(|e| io_err("records.jsonl", e))?;
        }
    }

    write_cells_csv(resolved, &reports)?;
    let utility_rows = write_utility_reports(resolved, &reports)?;
    write_summary_csv(resolved, &utility_rows)?;
    Ok(reports)
}

struct UtilityRow {
    strategy: String,
    dataset: String,
    report: UtilityReport,
}

fn write_utility_reports(
    resolved: &ResolvedRun,
    reports: &[CellReport],
) -> Result<Vec<UtilityRow>, HarnessError> {
    let mut groups: BTreeMap<(String, String), BTreeMap<LanguageCode, f64>> = BTreeMap::new();
    for report in reports {
        groups
            .entry((report.metrics.cell.strategy.clone(), report.metrics.cell.dataset.clone()))
            .or_default()
            .insert(report.metrics.cell.language, report.metrics.a_acc);
    }
    let mut rows = Vec::new();
    for ((strategy, dataset), per_language) in groups {
        match UtilityReport::build(per_language, &resolved.space) {
            Ok(report) => {
                write_json(
                    &resolved
                        .run_dir
                        .join("utility")
                        .join(format!("{strategy}.{dataset}.json")),
                    &report,
                )?;
                rows.push(UtilityRow {
                    strategy,
                    dataset,
                    report,
                });
            }
            Err(_) => continue, // degenerate utilities (e.g. all zero) carry no equity signal
        }
    }
    Ok(rows)
}

fn fmt_opt(value: Option<f64>) -> String {
    value.map(|v| format!("{v:.6}")).unwrap_or_default()
}

fn write_summary_csv(resolved: &ResolvedRun, rows: &[UtilityRow]) -> Result<(), HarnessError> {
    let mut csv = String::from(
        "strategy,dataset,model,languages,avg_high,avg_mid,avg_low,demographic_m1,linguistic_m0,gini\n",
    );
    for row in rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{:.6},{:.6},{:.6}\n",
            row.strategy,
            row.dataset,
            resolved.model_label,
            row.report.per_language.len(),
            fmt_opt(row.report.avg_high),
            fmt_opt(row.report.avg_mid),
            fmt_opt(row.report.avg_low),
            row.report.m1,
            row.report.m0,
            row.report.gini,
        ));
    }
    write_atomic(&resolved.run_dir.join("summary.csv"), &csv)
}

fn write_cells_csv(resolved: &ResolvedRun, reports: &[CellReport]) -> Result<(), HarnessError> {
    let mut csv = String::from(
        "strategy,dataset,language,tier,records,a_acc,r_acc,er,abstain_ece,tp,tn,fp,fn,fp_rate,fn_rate,unparseable,verdict_defaulted\n",
    );
    for report in reports {
        let m = &report.metrics;
        let tier = resolved
            .space
            .profile(m.cell.language)
            .map(|p| p.resource_tier.to_string())
            .unwrap_or_default();
        csv.push_str(&format!(
            "{},{},{},{},{},{:.6},{},{:.6},{},{},{},{},{},{:.6},{:.6},{},{}\n",
            m.cell.strategy,
            m.cell.dataset,
            m.cell.language,
            tier,
            m.record_count,
            m.a_acc,
            fmt_opt(m.r_acc),
            m.er,
            fmt_opt(m.abstain_ece),
            m.confusion.tp,
            m.confusion.tn,
            m.confusion.fp,
            m.confusion.r#fn,
            m.fp_rate,
            m.fn_rate,
            m.unparseable_count,
            m.verdict_defaulted,
        ));
    }
    write_atomic(&resolved.run_dir.join("cells.csv"), &csv)
}

/// Convenience: load config, resolve, execute.
pub fn run(config: &RunConfig, base_dir: &Path) -> Result<RunOutcome, HarnessError> {
    let resolved = resolve(config, base_dir)?;
    execute(&resolved)
}

/// Reads a combined records file back.
pub fn load_records(path: &Path) -> Result<Vec<AbstainRecord>, HarnessError> {
    let content =
        std::fs::read_to_string(path).map_err(|e| io_err(&path.display().to_string(), e))?;
    let mut records = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: AbstainRecord = serde_json::from_str(line)
            .map_err(|e| HarnessError::Io(format!("{} line {}: {e}", path.display(), idx + 1)))?;
        records.push(record);
    }
    Ok(records)
}

/// Offline metric recomputation: groups records by (strategy, language)
/// and rebuilds one report per cell.
pub fn recompute_reports(
    records: &[AbstainRecord],
    model: &str,
    dataset: &str,
) -> Vec<MetricsReport> {
    let mut groups: BTreeMap<(String, LanguageCode), Vec<AbstainRecord>> = BTreeMap::new();
    for record in records {
        groups
            .entry((record.strategy.clone(), record.language))
            .or_default()
            .push(record.clone());
    }
    let mut reports = Vec::new();
    for ((strategy, language), mut cell_records) in groups {
        cell_records.sort_by(|a, b| a.item_id.cmp(&b.item_id));
        let cell = Cell {
            strategy,
            model: model.to_string(),
            dataset: dataset.to_string(),
            language,
        };
        if let Ok(report) = MetricsReport::from_records(cell, &cell_records, 0, 0) {
            reports.push(report);
        }
    }
    reports
}

/// Fig. 6-style overlap over a finished run's records: one strategy, three
/// languages, universe = parallel test items present in all three.
pub fn overlap_from_records(
    records: &[AbstainRecord],
    strategy: &str,
    languages: [LanguageCode; 3],
) -> Result<OverlapReport, HarnessError> {
    let mut per_lang_items: BTreeMap<LanguageCode, BTreeSet<String>> = BTreeMap::new();
    let mut per_lang_abstain: BTreeMap<LanguageCode, BTreeSet<String>> = BTreeMap::new();
    for record in records.iter().filter(|r| r.strategy == strategy) {
        if !languages.contains(&record.language) {
            continue;
        }
        per_lang_items
            .entry(record.language)
            .or_default()
            .insert(record.item_id.clone());
        if record.abstain {
            per_lang_abstain
                .entry(record.language)
                .or_default()
                .insert(record.item_id.clone());
        }
    }
    for language in languages {
        if !per_lang_items.contains_key(&language) {
            return Err(HarnessError::Config(format!(
                "no records for strategy {strategy} in language {language}"
            )));
        }
    }
    let mut universe: BTreeSet<String> = per_lang_items[&languages[0]].clone();
    for language in &languages[1..] {
        universe = universe
            .intersection(&per_lang_items[language])
            .cloned()
            .collect();
    }
    let universe: Vec<String> = universe.into_iter().collect();
    let sets = [
        (languages[0], per_lang_abstain.remove(&languages[0]).unwrap_or_default()),
        (languages[1], per_lang_abstain.remove(&languages[1]).unwrap_or_default()),
        (languages[2], per_lang_abstain.remove(&languages[2]).unwrap_or_default()),
    ];
    Ok(overlap_analysis(&universe, &sets))
}

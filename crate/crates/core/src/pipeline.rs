//! File-to-file pipeline stages: parse, fetch, analyze, stats and export.
//!
//! Stages exchange newline-delimited JSON files. Each stage is a plain
//! function so the command line front end and the tests drive the same code.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::corpus::{fetch_entity_articles, Cache, CachedSource, EntityArticles, EntityResolution, PageSource};
use crate::listparse::{dedupe_chains_with_warnings, load_curated_changes, parse_list_page_with_warnings};
use crate::model::{EvolutionChain, ExcerptRecord, StatsReport, Year};
use crate::segment::SentenceSplitter;
use crate::stats::aggregate;
use crate::window::analyze_entity;

/// Failure class, one per process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Malformed or inconsistent input files.
    Input,
    /// Cache, filesystem or network trouble, including offline misses.
    Environment,
    /// A broken internal invariant; a defect.
    Invariant,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelineError {
    pub kind: ErrorKind,
    pub message: String,
}

impl PipelineError {
    pub fn input(message: impl Into<String>) -> Self {
        PipelineError { kind: ErrorKind::Input, message: message.into() }
    }

    pub fn environment(message: impl Into<String>) -> Self {
        PipelineError { kind: ErrorKind::Environment, message: message.into() }
    }

    pub fn invariant(message: impl Into<String>) -> Self {
        PipelineError { kind: ErrorKind::Invariant, message: message.into() }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Input => 2,
            ErrorKind::Environment => 3,
            ErrorKind::Invariant => 4,
        }
    }
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for PipelineError {}

pub type Result<T> = std::result::Result<T, PipelineError>;

pub fn read_input(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| PipelineError::input(format!("{}: {e}", path.display())))
}

pub fn write_output(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)
            .map_err(|e| PipelineError::environment(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, contents).map_err(|e| PipelineError::environment(format!("{}: {e}", path.display())))
}

/// Parses one JSON value per non-blank line.
pub fn parse_jsonl<T: DeserializeOwned>(text: &str, origin: &str) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l)
                .map_err(|e| PipelineError::input(format!("{origin}: line {}: {e}", n + 1)))
        })
        .collect()
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    parse_jsonl(&read_input(path)?, &path.display().to_string())
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// Makes entity ids unique by suffixing repeats with `#2`, `#3`, ...
pub fn assign_entity_ids(chains: &mut [EvolutionChain]) {
    let mut seen: HashMap<String, usize> = HashMap::new();
    for chain in chains {
        let base = chain.current_name().canonical.clone();
        let n = seen.entry(base.clone()).or_insert(0);
        *n += 1;
        chain.entity_id = if *n == 1 { base } else { format!("{base}#{n}") };
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParseOutput {
    pub chains: Vec<EvolutionChain>,
    pub warnings: Vec<String>,
}

/// Reads list pages and curated record files (`.jsonl`), then merges
/// duplicate chains across all of them.
pub fn parse_inputs(paths: &[PathBuf]) -> Result<ParseOutput> {
    let mut chains = Vec::new();
    let mut warnings = Vec::new();
    for path in paths {
        let text = read_input(path)?;
        let shown = path.display();
        if path.extension().is_some_and(|e| e == "jsonl") {
            let loaded = load_curated_changes(&text).map_err(|e| PipelineError::input(format!("{shown}: {e}")))?;
            chains.extend(loaded);
        } else {
            let source = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let page = parse_list_page_with_warnings(&text, &source)
                .map_err(|e| PipelineError::input(format!("{shown}: {e}")))?;
            chains.extend(page.chains);
            warnings.extend(page.warnings);
        }
    }
    let (mut chains, dup_warnings) = dedupe_chains_with_warnings(chains);
    warnings.extend(dup_warnings);
    assign_entity_ids(&mut chains);
    Ok(ParseOutput { chains, warnings })
}

/// Loads a chain file written by the parse stage.
pub fn load_chains(path: &Path) -> Result<Vec<EvolutionChain>> {
    let text = read_input(path)?;
    let mut chains =
        load_curated_changes(&text).map_err(|e| PipelineError::input(format!("{}: {e}", path.display())))?;
    assign_entity_ids(&mut chains);
    Ok(chains)
}

fn with_pool<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| PipelineError::environment(format!("worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// Resolves every chain's articles, in chain order.
pub fn fetch_corpus(chains: &[EvolutionChain], source: &dyn PageSource, workers: usize) -> Result<Vec<EntityArticles>> {
    with_pool(workers, || chains.par_iter().map(|c| fetch_entity_articles(c, source)).collect())
}

fn offline_misses(misses: Vec<String>) -> Result<()> {
    if misses.is_empty() {
        return Ok(());
    }
    let shown: Vec<&str> = misses.iter().take(10).map(String::as_str).collect();
    Err(PipelineError::environment(format!(
        "offline mode: {} title(s) missing from the cache: {}{}",
        misses.len(),
        shown.join(", "),
        if misses.len() > shown.len() { ", ..." } else { "" }
    )))
}

/// Fetch stage: warms `cache` from `upstream` (none means offline) and
/// returns one resolution log record per chain.
pub fn run_fetch(
    chains: &[EvolutionChain],
    cache: &Cache,
    upstream: Option<&dyn PageSource>,
    workers: usize,
) -> Result<Vec<EntityResolution>> {
    let source = CachedSource::new(cache, upstream);
    let entities = fetch_corpus(chains, &source, workers)?;
    offline_misses(source.misses())?;
    Ok(entities.iter().map(EntityResolution::from).collect())
}

/// Analyze stage: best excerpt per mentioned change, ordered by entity id
/// and change position.
pub fn run_analyze(
    chains: &[EvolutionChain],
    cache: &Cache,
    upstream: Option<&dyn PageSource>,
    splitter: &dyn SentenceSplitter,
    workers: usize,
) -> Result<Vec<ExcerptRecord>> {
    let source = CachedSource::new(cache, upstream);
    let per_entity: Vec<Vec<ExcerptRecord>> = with_pool(workers, || {
        chains
            .par_iter()
            .map(|chain| {
                let entity = fetch_entity_articles(chain, &source);
                let split: Vec<_> = entity.articles.iter().map(|a| splitter.split(&a.body)).collect();
                analyze_entity(chain, &entity, &split)
            })
            .collect()
    })?;
    offline_misses(source.misses())?;
    let mut records: Vec<ExcerptRecord> = per_entity.into_iter().flatten().collect();
    records.sort_by(|a, b| (&a.entity_id, a.change_index).cmp(&(&b.entity_id, b.change_index)));
    Ok(records)
}

/// Rejects resolution and excerpt records that do not belong to `chains`.
pub fn check_consistency(
    chains: &[EvolutionChain],
    resolutions: &[EntityResolution],
    records: &[ExcerptRecord],
) -> Result<()> {
    let by_id: HashMap<&str, &EvolutionChain> = chains.iter().map(|c| (c.entity_id.as_str(), c)).collect();
    for r in resolutions {
        if !by_id.contains_key(r.entity_id.as_str()) {
            return Err(PipelineError::input(format!("resolution log references unknown entity {:?}", r.entity_id)));
        }
    }
    let mut seen = std::collections::HashSet::new();
    for r in records {
        let Some(chain) = by_id.get(r.entity_id.as_str()) else {
            return Err(PipelineError::input(format!("excerpt references unknown entity {:?}", r.entity_id)));
        };
        let Some(change) = chain.changes.get(r.change_index) else {
            return Err(PipelineError::input(format!(
                "excerpt references change {} of {:?}, which has {}",
                r.change_index,
                r.entity_id,
                chain.changes.len()
            )));
        };
        if change.preceding.key() != r.change.preceding.key()
            || change.succeeding.key() != r.change.succeeding.key()
            || change.year != r.change.year
            || change.year.is_none()
        {
            return Err(PipelineError::input(format!(
                "excerpt for {:?} change {} does not match the chain",
                r.entity_id, r.change_index
            )));
        }
        if r.from > r.to || r.distance != r.to - r.from {
            return Err(PipelineError::input(format!(
                "excerpt for {:?} change {} has an inconsistent window",
                r.entity_id, r.change_index
            )));
        }
        if !seen.insert((r.entity_id.as_str(), r.change_index)) {
            return Err(PipelineError::input(format!(
                "duplicate excerpt for {:?} change {}",
                r.entity_id, r.change_index
            )));
        }
    }
    Ok(())
}

/// Nesting and sum invariants every report must satisfy.
pub fn check_report(report: &StatsReport) -> Result<()> {
    let x = &report.excerpt_counts;
    let c = &report.change_counts;
    let e = &report.entity_counts;
    let hist_total: u64 = report.distance_histogram.values().sum();
    let checks = [
        (x.dist_eq_0 + x.dist_eq_1 + x.dist_eq_2 == x.dist_lt_3, "distance 0/1/2 counts sum to distance < 3"),
        (x.dist_lt_3 <= x.dist_lt_10 && x.dist_lt_10 <= x.total, "excerpt counts are nested"),
        (hist_total == x.total, "histogram total equals excerpt total"),
        (c.mentioned_in_current_article <= c.mentioned, "current-article mentions within mentions"),
        (c.mentioned <= c.with_articles_and_dates, "mentions within changes with articles and dates"),
        (e.resolvable <= e.total && e.current_name_resolvable <= e.resolvable, "entity counts are nested"),
    ];
    match checks.iter().find(|(ok, _)| !ok) {
        Some((_, what)) => Err(PipelineError::invariant(format!("report invariant violated: {what}"))),
        None => Ok(()),
    }
}

/// Stats stage.
pub fn run_stats(
    chains: &[EvolutionChain],
    resolutions: &[EntityResolution],
    records: &[ExcerptRecord],
) -> Result<StatsReport> {
    check_consistency(chains, resolutions, records)?;
    let report = aggregate(chains, resolutions, records);
    check_report(&report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KbName {
    pub name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aliases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KbExcerpt {
    pub article: String,
    pub distance: usize,
    pub from: usize,
    pub to: usize,
    pub text: String,
    pub from_current_name_article: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KbChange {
    pub from: String,
    pub to: String,
    pub year: Option<Year>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub excerpt: Option<KbExcerpt>,
}

/// Knowledge base entry for one entity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KbEntity {
    pub entity_id: String,
    pub source_list: String,
    pub names: Vec<KbName>,
    pub changes: Vec<KbChange>,
}

/// Export stage: one entry per entity, sorted by entity id.
pub fn build_knowledge_base(chains: &[EvolutionChain], records: &[ExcerptRecord]) -> Vec<KbEntity> {
    let by_change: HashMap<(&str, usize), &ExcerptRecord> =
        records.iter().map(|r| ((r.entity_id.as_str(), r.change_index), r)).collect();
    let mut out: Vec<KbEntity> = chains
        .iter()
        .map(|chain| KbEntity {
            entity_id: chain.entity_id.clone(),
            source_list: chain.source_list.clone(),
            names: chain
                .names
                .iter()
                .map(|n| KbName { name: n.canonical.clone(), aliases: n.aliases.clone() })
                .collect(),
            changes: chain
                .changes
                .iter()
                .enumerate()
                .map(|(i, ch)| KbChange {
                    from: ch.preceding.canonical.clone(),
                    to: ch.succeeding.canonical.clone(),
                    year: ch.year,
                    excerpt: by_change.get(&(chain.entity_id.as_str(), i)).map(|r| KbExcerpt {
                        article: r.article.clone(),
                        distance: r.distance,
                        from: r.from,
                        to: r.to,
                        text: r.text.clone(),
                        from_current_name_article: r.from_current_name_article,
                    }),
                })
                .collect(),
        })
        .collect();
    out.sort_by(|a, b| a.entity_id.cmp(&b.entity_id));
    out
}

pub fn run_export(chains: &[EvolutionChain], records: &[ExcerptRecord]) -> Result<String> {
    check_consistency(chains, &[], records)?;
    Ok(to_jsonl(&build_knowledge_base(chains, records)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EntityName;

    fn chain(names: &[&str], years: Vec<Option<Year>>) -> EvolutionChain {
        let names = names.iter().map(|n| EntityName::new(n).unwrap()).collect();
        EvolutionChain::new(names, years, "t").unwrap()
    }

    #[test]
    fn duplicate_ids_get_suffixes() {
        let mut chains = vec![
            chain(&["A", "X"], vec![None]),
            chain(&["B", "X"], vec![None]),
            chain(&["C", "X"], vec![None]),
            chain(&["D", "Y"], vec![None]),
        ];
        assign_entity_ids(&mut chains);
        let ids: Vec<_> = chains.iter().map(|c| c.entity_id.as_str()).collect();
        assert_eq!(ids, ["X", "X#2", "X#3", "Y"]);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(PipelineError::input("x").exit_code(), 2);
        assert_eq!(PipelineError::environment("x").exit_code(), 3);
        assert_eq!(PipelineError::invariant("x").exit_code(), 4);
    }

    #[test]
    fn jsonl_reports_line_numbers() {
        let err = parse_jsonl::<serde_json::Value>("{}\n\nnot json\n", "f").unwrap_err();
        assert_eq!(err.kind, ErrorKind::Input);
        assert!(err.message.starts_with("f: line 3:"), "{}", err.message);
    }

    #[test]
    fn unknown_entity_is_input_error() {
        let chains = vec![chain(&["Nyasaland", "Malawi"], vec![Some(1964)])];
        let record = ExcerptRecord {
            entity_id: "Ghost".into(),
            change_index: 0,
            change: chains[0].changes[0].clone(),
            article: "Malawi".into(),
            from: 0,
            to: 0,
            distance: 0,
            text: String::new(),
            from_current_name_article: true,
            mentioned_in_current_article: true,
        };
        let err = run_stats(&chains, &[], std::slice::from_ref(&record)).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let bad_index = ExcerptRecord { entity_id: "Malawi".into(), change_index: 3, ..record };
        assert_eq!(run_stats(&chains, &[], &[bad_index]).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn export_without_excerpts_keeps_changes() {
        let chains = vec![chain(&["Philipopolis", "Plovdiv"], vec![None])];
        let kb = build_knowledge_base(&chains, &[]);
        assert_eq!(kb.len(), 1);
        assert_eq!(kb[0].changes.len(), 1);
        assert!(kb[0].changes[0].excerpt.is_none());
    }
}

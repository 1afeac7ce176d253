//! Domain types shared by every stage of the pipeline.
//!
//! Nothing in here performs I/O. All types are plain data, `Send + Sync`, and
//! treated as immutable once built.

use std::collections::BTreeMap;
use std::fmt;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

/// Calendar year of a name change. Only the year is ever kept.
pub type Year = u16;

pub const MIN_YEAR: Year = 1;
pub const MAX_YEAR: Year = 9999;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("name is empty")]
    EmptyName,
    #[error("year {0} is outside 1..=9999")]
    YearOutOfRange(u32),
    #[error("a chain needs at least two names, got {0}")]
    ChainTooShort(usize),
    #[error("expected {expected} change years, got {got}")]
    YearCount { expected: usize, got: usize },
    #[error("self-rename: {0:?} -> {1:?}")]
    SelfRename(String, String),
}

/// NFC-normalizes and trims a name, collapsing internal whitespace runs.
pub fn normalize_name(raw: &str) -> String {
    let nfc: String = raw.nfc().collect();
    nfc.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Comparison key for names: normalized and lower-cased.
pub fn name_key(raw: &str) -> String {
    normalize_name(raw).to_lowercase()
}

pub fn names_equal(a: &str, b: &str) -> bool {
    name_key(a) == name_key(b)
}

/// A name as it appears on a list, with the variants found next to it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EntityName {
    pub canonical: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aliases: Vec<String>,
    /// Article title the list linked this name to, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub link: Option<String>,
}

impl EntityName {
    pub fn new(canonical: &str) -> Result<Self, ModelError> {
        let canonical = normalize_name(canonical);
        if canonical.is_empty() {
            return Err(ModelError::EmptyName);
        }
        Ok(EntityName {
            canonical,
            aliases: Vec::new(),
            link: None,
        })
    }

    /// Adds an alias unless it is empty, equals the canonical name, or is
    /// already present (all case-insensitively). Returns whether it was added.
    pub fn add_alias(&mut self, alias: &str) -> bool {
        let alias = normalize_name(alias);
        if alias.is_empty() {
            return false;
        }
        let key = alias.to_lowercase();
        if name_key(&self.canonical) == key || self.aliases.iter().any(|a| name_key(a) == key) {
            return false;
        }
        self.aliases.push(alias);
        true
    }

    pub fn with_aliases<I, S>(mut self, aliases: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        for a in aliases {
            self.add_alias(a.as_ref());
        }
        self
    }

    pub fn with_link(mut self, link: Option<String>) -> Self {
        self.link = link.map(|l| normalize_name(&l)).filter(|l| !l.is_empty());
        self
    }

    /// Canonical name followed by every alias.
    pub fn variants(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.canonical.as_str()).chain(self.aliases.iter().map(String::as_str))
    }

    pub fn key(&self) -> String {
        name_key(&self.canonical)
    }
}

impl fmt::Display for EntityName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical)
    }
}

/// One transition between two consecutive names of an entity.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NameChange {
    pub preceding: EntityName,
    pub succeeding: EntityName,
    pub year: Option<Year>,
}

impl NameChange {
    pub fn new(
        preceding: EntityName,
        succeeding: EntityName,
        year: Option<Year>,
    ) -> Result<Self, ModelError> {
        if preceding.key() == succeeding.key() {
            return Err(ModelError::SelfRename(
                preceding.canonical,
                succeeding.canonical,
            ));
        }
        if let Some(y) = year {
            check_year(u32::from(y))?;
        }
        Ok(NameChange {
            preceding,
            succeeding,
            year,
        })
    }

    pub fn is_dated(&self) -> bool {
        self.year.is_some()
    }
}

pub fn check_year(year: u32) -> Result<Year, ModelError> {
    if (u32::from(MIN_YEAR)..=u32::from(MAX_YEAR)).contains(&year) {
        Ok(year as Year)
    } else {
        Err(ModelError::YearOutOfRange(year))
    }
}

/// All known names of one entity, oldest first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvolutionChain {
    pub entity_id: String,
    pub names: Vec<EntityName>,
    pub changes: Vec<NameChange>,
    pub source_list: String,
}

impl EvolutionChain {
    /// Builds a chain from its names and one optional year per transition.
    pub fn new(
        names: Vec<EntityName>,
        years: Vec<Option<Year>>,
        source_list: &str,
    ) -> Result<Self, ModelError> {
        if names.len() < 2 {
            return Err(ModelError::ChainTooShort(names.len()));
        }
        if years.len() != names.len() - 1 {
            return Err(ModelError::YearCount {
                expected: names.len() - 1,
                got: years.len(),
            });
        }
        let changes = names
            .windows(2)
            .zip(years)
            .map(|(pair, year)| NameChange::new(pair[0].clone(), pair[1].clone(), year))
            .collect::<Result<Vec<_>, _>>()?;
        let entity_id = names.last().map(|n| n.canonical.clone()).unwrap_or_default();
        Ok(EvolutionChain {
            entity_id,
            names,
            changes,
            source_list: source_list.to_string(),
        })
    }

    pub fn current_name(&self) -> &EntityName {
        self.names.last().expect("chain has at least two names")
    }

    pub fn years(&self) -> Vec<Option<Year>> {
        self.changes.iter().map(|c| c.year).collect()
    }

    pub fn has_dated_change(&self) -> bool {
        self.changes.iter().any(NameChange::is_dated)
    }

    /// Case-insensitive name sequence, used to detect duplicate chains.
    pub fn sequence_key(&self) -> Vec<String> {
        self.names.iter().map(EntityName::key).collect()
    }

    /// Rebuilds `changes` from `names`, keeping the given years.
    pub(crate) fn relink(&mut self, years: &[Option<Year>]) {
        self.changes = self
            .names
            .windows(2)
            .zip(years)
            .map(|(pair, &year)| NameChange {
                preceding: pair[0].clone(),
                succeeding: pair[1].clone(),
                year,
            })
            .collect();
    }
}

/// Checks every invariant of a chain and its names. Never fails; an empty
/// result means the chain is valid.
pub fn validate_chain(chain: &EvolutionChain) -> Vec<String> {
    let mut violations = Vec::new();
    if chain.names.len() < 2 {
        violations.push(format!(
            "chain must have at least 2 names, has {}",
            chain.names.len()
        ));
    }
    if chain.changes.len() + 1 != chain.names.len() {
        violations.push(format!(
            "chain has {} names but {} changes",
            chain.names.len(),
            chain.changes.len()
        ));
    }
    if let Some(last) = chain.names.last() {
        if chain.entity_id != last.canonical {
            violations.push(format!(
                "entity id {:?} is not the current name {:?}",
                chain.entity_id, last.canonical
            ));
        }
    }
    for (i, name) in chain.names.iter().enumerate() {
        violations.extend(
            validate_name(name)
                .into_iter()
                .map(|v| format!("name {i}: {v}")),
        );
    }
    for (i, change) in chain.changes.iter().enumerate() {
        if chain.names.get(i) != Some(&change.preceding) {
            violations.push(format!("change {i}: preceding name does not match names[{i}]"));
        }
        if chain.names.get(i + 1) != Some(&change.succeeding) {
            violations.push(format!(
                "change {i}: succeeding name does not match names[{}]",
                i + 1
            ));
        }
        if change.preceding.key() == change.succeeding.key() {
            violations.push(format!("change {i}: self-rename of {:?}", change.preceding.canonical));
        }
        if let Some(y) = change.year {
            if !(MIN_YEAR..=MAX_YEAR).contains(&y) {
                violations.push(format!("change {i}: year {y} out of range"));
            }
        }
    }
    violations
}

fn validate_name(name: &EntityName) -> Vec<String> {
    let mut out = Vec::new();
    if name.canonical.trim().is_empty() {
        out.push("canonical name is empty".to_string());
    } else if name.canonical != normalize_name(&name.canonical) {
        out.push(format!("canonical name {:?} is not normalized", name.canonical));
    }
    let canonical = name.key();
    let mut seen = Vec::new();
    for alias in &name.aliases {
        let key = name_key(alias);
        if alias.trim().is_empty() {
            out.push("empty alias".to_string());
            continue;
        }
        if !alias.chars().next().is_some_and(char::is_uppercase) {
            out.push(format!("alias {alias:?} does not start with a capital letter"));
        }
        if key == canonical {
            out.push(format!("alias {alias:?} repeats the canonical name"));
        }
        if seen.contains(&key) {
            out.push(format!("duplicate alias {alias:?}"));
        }
        seen.push(key);
    }
    out
}

/// A resolved article reduced to plain text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Article {
    pub requested_title: String,
    pub resolved_title: String,
    pub redirected: bool,
    pub body: String,
    /// Unix seconds.
    pub fetched_at: u64,
}

impl Article {
    pub fn new(requested_title: &str, resolved_title: &str, body: String, fetched_at: u64) -> Self {
        Article {
            requested_title: requested_title.to_string(),
            resolved_title: resolved_title.to_string(),
            redirected: crate::corpus::normalize_title(requested_title)
                != crate::corpus::normalize_title(resolved_title),
            body,
            fetched_at,
        }
    }
}

/// Sentence indices at which each component of a change is mentioned.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MentionIndex {
    pub preceding_idx: Vec<usize>,
    pub succeeding_idx: Vec<usize>,
    pub date_idx: Vec<usize>,
}

impl MentionIndex {
    pub fn components(&self) -> [&[usize]; 3] {
        [&self.preceding_idx, &self.succeeding_idx, &self.date_idx]
    }

    pub fn is_complete(&self) -> bool {
        self.components().iter().all(|c| !c.is_empty())
    }
}

/// The minimal excerpt found for one mentioned change.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExcerptRecord {
    pub entity_id: String,
    /// Position of the change inside its chain.
    pub change_index: usize,
    pub change: NameChange,
    /// Resolved title of the article the excerpt comes from.
    pub article: String,
    pub from: usize,
    pub to: usize,
    pub distance: usize,
    pub text: String,
    pub from_current_name_article: bool,
    /// The change is completely mentioned in the current-name article, even
    /// if the excerpt kept here comes from another article.
    pub mentioned_in_current_article: bool,
}

/// Counts over entities, in the order the report prints them.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityCounts {
    pub total: u64,
    pub with_dates: u64,
    pub resolvable: u64,
    pub current_name_resolvable: u64,
    pub linked_on_list: u64,
    pub multi_article: u64,
    pub resolvable_and_dated: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeCounts {
    pub total: u64,
    pub of_entities_with_articles: u64,
    pub with_dates: u64,
    pub with_articles_and_dates: u64,
    pub mentioned: u64,
    pub mentioned_in_current_article: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExcerptCounts {
    pub total: u64,
    pub dist_lt_10: u64,
    pub dist_lt_3: u64,
    pub dist_eq_2: u64,
    pub dist_eq_1: u64,
    pub dist_eq_0: u64,
}

/// Aggregated statistics of one pipeline run.
///
/// Mean and median are exact and derived from the histogram, so merging two
/// reports only needs to add counts.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StatsReport {
    pub entity_counts: EntityCounts,
    pub change_counts: ChangeCounts,
    pub excerpt_counts: ExcerptCounts,
    pub distance_histogram: BTreeMap<usize, u64>,
    pub mean_distance: Option<Ratio<u64>>,
    pub median_distance: Option<Ratio<u64>>,
}

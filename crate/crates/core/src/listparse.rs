//! Parsing of name-change list pages and curated change records.
//!
//! A list item looks like `Edo → Tokyo (1868)`: names separated by arrows,
//! each optionally followed by bracketed annotations. Brackets holding a
//! three- or four-digit number date the change that ends at that name; the
//! remaining capital-initial, digit-free bracket tokens become aliases.

use std::collections::HashMap;

use once_cell::sync::Lazy;
use regex::Regex;
use serde_json::{Map, Value};
use thiserror::Error;

use crate::model::{check_year, normalize_name, EntityName, EvolutionChain, ModelError, Year};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ListParseError {
    #[error("{}malformed list line: {reason}: {text:?}", line_prefix(.line))]
    MalformedLine {
        line: Option<usize>,
        text: String,
        reason: String,
    },
}

fn line_prefix(line: &Option<usize>) -> String {
    line.map(|l| format!("line {l}: ")).unwrap_or_default()
}

impl ListParseError {
    fn malformed(text: &str, reason: impl Into<String>) -> Self {
        ListParseError::MalformedLine {
            line: None,
            text: text.to_string(),
            reason: reason.into(),
        }
    }

    fn at_line(self, n: usize) -> Self {
        match self {
            ListParseError::MalformedLine { text, reason, .. } => ListParseError::MalformedLine {
                line: Some(n),
                text,
                reason,
            },
        }
    }

    pub fn line(&self) -> Option<usize> {
        match self {
            ListParseError::MalformedLine { line, .. } => *line,
        }
    }
}

/// A curated record that does not follow the record schema.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("record {record}: field `{field}`: {message}")]
pub struct SchemaError {
    /// 1-based line number of the record.
    pub record: usize,
    pub field: String,
    pub message: String,
}

/// What one bracket pair contributed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Annotation {
    pub years: Vec<Year>,
    pub aliases: Vec<String>,
    pub discarded: Vec<String>,
}

/// A list item split into names and the bracket texts following each.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ListLine {
    pub raw: String,
    pub names_with_annotations: Vec<(String, Vec<String>)>,
    /// Link target per name, when the list linked it.
    pub links: Vec<Option<String>>,
}

static YEAR_RUN: Lazy<Regex> = Lazy::new(|| Regex::new(r"[0-9]+").unwrap());
static REF_TAGS: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"(?s)<ref[^>]*/>|<ref[^>]*>.*?</ref>").unwrap());
static TEMPLATES: Lazy<Regex> = Lazy::new(|| Regex::new(r"\{\{[^{}]*\}\}").unwrap());
static CITATIONS: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"\[(?:\d+|citation needed|note \d+)\]").unwrap());
static EMPHASIS: Lazy<Regex> = Lazy::new(|| Regex::new(r"'{2,}").unwrap());
static NUMBERED: Lazy<Regex> = Lazy::new(|| Regex::new(r"^\d+[.)]\s+").unwrap());

/// Splits one bracket's content into years, aliases and noise.
pub fn parse_annotation(bracket_text: &str) -> Annotation {
    let mut ann = Annotation::default();
    for token in bracket_text.split(['/', ',', ';']) {
        let token = token.trim();
        if token.is_empty() {
            continue;
        }
        if token.chars().any(char::is_numeric) {
            match first_year(token) {
                Some(y) => ann.years.push(y),
                None => ann.discarded.push(token.to_string()),
            }
        } else if token.chars().next().is_some_and(char::is_uppercase) {
            ann.aliases.push(token.to_string());
        } else {
            ann.discarded.push(token.to_string());
        }
    }
    ann
}

/// First standalone run of three or four ASCII digits, as a year.
fn first_year(token: &str) -> Option<Year> {
    YEAR_RUN
        .find_iter(token)
        .filter(|m| (3..=4).contains(&m.as_str().len()))
        .find_map(|m| m.as_str().parse::<u32>().ok().and_then(|y| check_year(y).ok()))
}

/// Removes a leading bullet marker (`*`, `-`, `#`, `1.`, `1)`), if any.
/// Returns `None` when the line carries no bullet.
pub fn strip_bullet(line: &str) -> Option<&str> {
    let trimmed = line.trim_start();
    if let Some(m) = NUMBERED.find(trimmed) {
        return Some(&trimmed[m.end()..]);
    }
    let first = trimmed.chars().next()?;
    match first {
        '*' | '#' => Some(trimmed.trim_start_matches(['*', '#', ':'])),
        '-' if !trimmed.starts_with("->") => Some(&trimmed[1..]),
        _ => None,
    }
}

fn clean_inline_markup(text: &str) -> String {
    let text = REF_TAGS.replace_all(text, "");
    let mut text = text.into_owned();
    // templates may nest; strip innermost first
    loop {
        let next = TEMPLATES.replace_all(&text, "").into_owned();
        if next == text {
            break;
        }
        text = next;
    }
    let text = CITATIONS.replace_all(&text, "");
    EMPHASIS.replace_all(&text, "").into_owned()
}

fn is_arrow_at(chars: &[char], i: usize) -> Option<usize> {
    match chars[i] {
        '→' => Some(1),
        '-' if chars.get(i + 1) == Some(&'>') => Some(2),
        _ => None,
    }
}

/// Replaces `[[Target|Label]]` by `Label` inside bracket text.
fn unlink(text: &str) -> String {
    static LINK: Lazy<Regex> = Lazy::new(|| Regex::new(r"\[\[([^\]|]*)(?:\|([^\]]*))?\]\]").unwrap());
    LINK.replace_all(text, |c: &regex::Captures| {
        c.get(2).or(c.get(1)).map(|m| m.as_str().to_string()).unwrap_or_default()
    })
    .into_owned()
}

/// Splits an item into arrow-separated names and their bracket texts.
/// Returns `Ok(None)` if the item has no arrow.
pub fn split_list_line(line: &str) -> Result<Option<ListLine>, ListParseError> {
    let body = strip_bullet(line).unwrap_or(line);
    let cleaned = clean_inline_markup(body);
    let chars: Vec<char> = cleaned.chars().collect();

    let mut tokens: Vec<(String, Vec<String>, Option<String>)> = Vec::new();
    let mut text = String::new();
    let mut brackets: Vec<String> = Vec::new();
    let mut link: Option<String> = None;
    let mut bracket = String::new();
    let mut depth = 0usize;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if depth == 0 {
            if c == '[' && chars.get(i + 1) == Some(&'[') {
                let rest: String = chars[i + 2..].iter().collect();
                if let Some(end) = rest.find("]]") {
                    let inner = &rest[..end];
                    let (target, label) = match inner.split_once('|') {
                        Some((t, l)) => (t, l),
                        None => (inner, inner),
                    };
                    text.push_str(label);
                    if link.is_none() && !target.trim().is_empty() {
                        link = Some(target.trim().to_string());
                    }
                    i += 2 + inner.chars().count() + 2;
                    continue;
                }
            }
            if let Some(width) = is_arrow_at(&chars, i) {
                tokens.push((std::mem::take(&mut text), std::mem::take(&mut brackets), link.take()));
                i += width;
                continue;
            }
            match c {
                '(' => depth = 1,
                ')' => return Err(ListParseError::malformed(line, "unbalanced ')'")),
                _ => text.push(c),
            }
        } else {
            match c {
                '(' => {
                    depth += 1;
                    bracket.push(c);
                }
                ')' => {
                    depth -= 1;
                    if depth == 0 {
                        brackets.push(unlink(std::mem::take(&mut bracket).trim()));
                    } else {
                        bracket.push(c);
                    }
                }
                _ => bracket.push(c),
            }
        }
        i += 1;
    }
    if depth != 0 {
        return Err(ListParseError::malformed(line, "unbalanced '('"));
    }
    if tokens.is_empty() {
        return Ok(None);
    }
    tokens.push((text, brackets, link));

    let mut names_with_annotations = Vec::with_capacity(tokens.len());
    let mut links = Vec::with_capacity(tokens.len());
    for (pos, (text, brackets, link)) in tokens.into_iter().enumerate() {
        let name = normalize_name(&text);
        if name.is_empty() {
            return Err(ListParseError::malformed(
                line,
                format!("empty name at position {}", pos + 1),
            ));
        }
        names_with_annotations.push((name, brackets));
        links.push(link);
    }
    Ok(Some(ListLine {
        raw: line.to_string(),
        names_with_annotations,
        links,
    }))
}

/// Parses one list item into a chain. Warnings (ignored brackets, extra
/// years) are appended to `warnings`.
pub fn parse_list_line_with_warnings(
    line: &str,
    source_list: &str,
    warnings: &mut Vec<String>,
) -> Result<Option<EvolutionChain>, ListParseError> {
    let Some(parsed) = split_list_line(line)? else {
        return Ok(None);
    };
    let mut names = Vec::new();
    let mut years: Vec<Option<Year>> = Vec::new();
    for (pos, ((text, brackets), link)) in parsed
        .names_with_annotations
        .iter()
        .zip(parsed.links)
        .enumerate()
    {
        let mut name = EntityName::new(text)
            .map_err(|e| ListParseError::malformed(line, e.to_string()))?
            .with_link(link);
        // "Paldin/Ploudin": keep verbatim, the later parts are aliases too
        for part in text.split('/').skip(1) {
            name.add_alias(part);
        }
        let mut name_years = Vec::new();
        for b in brackets {
            let ann = parse_annotation(b);
            if ann.years.is_empty() && ann.aliases.is_empty() && !b.trim().is_empty() {
                warnings.push(format!("ignored bracket ({b}) after {text:?}"));
            }
            name_years.extend(ann.years);
            for a in &ann.aliases {
                name.add_alias(a);
            }
        }
        if pos == 0 {
            if !name_years.is_empty() {
                warnings.push(format!("year on first name {text:?} ignored"));
            }
        } else {
            if name_years.len() > 1 {
                warnings.push(format!(
                    "several years for change to {text:?}, keeping {}",
                    name_years[0]
                ));
            }
            years.push(name_years.first().copied());
        }
        names.push(name);
    }
    EvolutionChain::new(names, years, source_list)
        .map(Some)
        .map_err(|e| match e {
            ModelError::SelfRename(a, b) => {
                ListParseError::malformed(line, format!("self-rename {a:?} -> {b:?}"))
            }
            other => ListParseError::malformed(line, other.to_string()),
        })
}

/// Parses one list item; `None` if it contains no arrow.
pub fn parse_list_line(
    line: &str,
    source_list: &str,
) -> Result<Option<EvolutionChain>, ListParseError> {
    parse_list_line_with_warnings(line, source_list, &mut Vec::new())
}

/// Chains and diagnostics of one parsed page.
#[derive(Debug, Clone, Default)]
pub struct ParsedPage {
    pub chains: Vec<EvolutionChain>,
    pub warnings: Vec<String>,
}

/// Parses every bullet item of a list page, in order.
pub fn parse_list_page_with_warnings(
    document: &str,
    source_list: &str,
) -> Result<ParsedPage, ListParseError> {
    let mut page = ParsedPage::default();
    for (n, line) in document.lines().enumerate() {
        if strip_bullet(line).is_none() {
            continue;
        }
        let mut warnings = Vec::new();
        let chain = parse_list_line_with_warnings(line, source_list, &mut warnings)
            .map_err(|e| e.at_line(n + 1))?;
        page.warnings.extend(
            warnings
                .into_iter()
                .map(|w| format!("{source_list}:{}: {w}", n + 1)),
        );
        page.chains.extend(chain);
    }
    Ok(page)
}

pub fn parse_list_page(
    document: &str,
    source_list: &str,
) -> Result<Vec<EvolutionChain>, ListParseError> {
    parse_list_page_with_warnings(document, source_list).map(|p| p.chains)
}

/// Merges chains with the same case-insensitive name sequence. The first
/// occurrence survives and absorbs the others' years, aliases and links.
pub fn dedupe_chains_with_warnings(chains: Vec<EvolutionChain>) -> (Vec<EvolutionChain>, Vec<String>) {
    let mut out: Vec<EvolutionChain> = Vec::new();
    let mut by_key: HashMap<Vec<String>, usize> = HashMap::new();
    let mut warnings = Vec::new();
    for chain in chains {
        let key = chain.sequence_key();
        let Some(&idx) = by_key.get(&key) else {
            by_key.insert(key, out.len());
            out.push(chain);
            continue;
        };
        let survivor = &mut out[idx];
        for (kept, other) in survivor.names.iter_mut().zip(&chain.names) {
            for alias in &other.aliases {
                kept.add_alias(alias);
            }
            if kept.link.is_none() {
                kept.link = other.link.clone();
            }
        }
        let mut years = survivor.years();
        for (i, (kept, other)) in years.iter_mut().zip(chain.years()).enumerate() {
            match (*kept, other) {
                (None, Some(y)) => *kept = Some(y),
                (Some(a), Some(b)) if a != b => warnings.push(format!(
                    "{}: conflicting years {a} and {b} for change {} (from {}), keeping {a}",
                    survivor.entity_id, i, chain.source_list
                )),
                _ => {}
            }
        }
        survivor.relink(&years);
    }
    (out, warnings)
}

pub fn dedupe_chains(chains: Vec<EvolutionChain>) -> Vec<EvolutionChain> {
    dedupe_chains_with_warnings(chains).0
}

fn render_name(name: &EntityName) -> String {
    match &name.link {
        Some(link) if link == &name.canonical => format!("[[{link}]]"),
        Some(link) => format!("[[{link}|{}]]", name.canonical),
        None => name.canonical.clone(),
    }
}

/// Renders a chain as a list item that parses back to the same chain.
pub fn normalize_chain_line(chain: &EvolutionChain) -> String {
    let mut parts = Vec::with_capacity(chain.names.len());
    for (i, name) in chain.names.iter().enumerate() {
        let mut part = render_name(name);
        if !name.aliases.is_empty() {
            part.push_str(&format!(" ({})", name.aliases.join("/")));
        }
        if let Some(y) = i.checked_sub(1).and_then(|c| chain.changes[c].year) {
            part.push_str(&format!(" ({y})"));
        }
        parts.push(part);
    }
    parts.join(" → ")
}

fn schema_err(record: usize, field: impl Into<String>, message: impl Into<String>) -> SchemaError {
    SchemaError {
        record,
        field: field.into(),
        message: message.into(),
    }
}

fn string_array(
    obj: &Map<String, Value>,
    field: &str,
    record: usize,
) -> Result<Vec<String>, SchemaError> {
    let arr = obj
        .get(field)
        .ok_or_else(|| schema_err(record, field, "missing"))?
        .as_array()
        .ok_or_else(|| schema_err(record, field, "expected an array"))?;
    arr.iter()
        .enumerate()
        .map(|(i, v)| {
            v.as_str()
                .map(str::to_string)
                .ok_or_else(|| schema_err(record, format!("{field}[{i}]"), "expected text"))
        })
        .collect()
}

fn parse_record(line: &str, record: usize) -> Result<EvolutionChain, SchemaError> {
    let value: Value = serde_json::from_str(line)
        .map_err(|e| schema_err(record, "<record>", format!("invalid JSON: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| schema_err(record, "<record>", "expected an object"))?;
    for key in obj.keys() {
        if !matches!(key.as_str(), "names" | "years" | "aliases" | "source" | "links") {
            return Err(schema_err(record, key.as_str(), "unknown field"));
        }
    }

    let names = string_array(obj, "names", record)?;
    if names.len() < 2 {
        return Err(schema_err(
            record,
            "names",
            format!("needs at least 2 names, got {}", names.len()),
        ));
    }

    let years_val = obj
        .get("years")
        .ok_or_else(|| schema_err(record, "years", "missing"))?
        .as_array()
        .ok_or_else(|| schema_err(record, "years", "expected an array"))?;
    if years_val.len() != names.len() - 1 {
        return Err(schema_err(
            record,
            "years",
            format!("expected {} entries, got {}", names.len() - 1, years_val.len()),
        ));
    }
    let mut years = Vec::with_capacity(years_val.len());
    for (i, y) in years_val.iter().enumerate() {
        let field = format!("years[{i}]");
        years.push(match y {
            Value::Null => None,
            Value::Number(n) => {
                let y = n
                    .as_u64()
                    .ok_or_else(|| schema_err(record, &field, "expected a positive integer"))?;
                let y = u32::try_from(y)
                    .ok()
                    .and_then(|y| check_year(y).ok())
                    .ok_or_else(|| schema_err(record, &field, format!("year {y} out of range")))?;
                Some(y)
            }
            _ => return Err(schema_err(record, field, "expected an integer or null")),
        });
    }

    let aliases_val = obj
        .get("aliases")
        .ok_or_else(|| schema_err(record, "aliases", "missing"))?
        .as_array()
        .ok_or_else(|| schema_err(record, "aliases", "expected an array"))?;
    if aliases_val.len() != names.len() {
        return Err(schema_err(
            record,
            "aliases",
            format!("expected {} entries, got {}", names.len(), aliases_val.len()),
        ));
    }

    let source = obj
        .get("source")
        .ok_or_else(|| schema_err(record, "source", "missing"))?
        .as_str()
        .ok_or_else(|| schema_err(record, "source", "expected text"))?;

    let links: Vec<Option<String>> = match obj.get("links") {
        None | Some(Value::Null) => vec![None; names.len()],
        Some(Value::Array(arr)) if arr.len() == names.len() => arr
            .iter()
            .enumerate()
            .map(|(i, v)| match v {
                Value::Null => Ok(None),
                Value::String(s) => Ok(Some(s.clone())),
                _ => Err(schema_err(record, format!("links[{i}]"), "expected text or null")),
            })
            .collect::<Result<_, _>>()?,
        Some(_) => {
            return Err(schema_err(
                record,
                "links",
                format!("expected an array of {} entries", names.len()),
            ))
        }
    };

    let mut entity_names = Vec::with_capacity(names.len());
    for (i, ((name, alias_val), link)) in names.iter().zip(aliases_val).zip(links).enumerate() {
        let mut entity = EntityName::new(name)
            .map_err(|e| schema_err(record, format!("names[{i}]"), e.to_string()))?
            .with_link(link);
        let alias_arr = alias_val
            .as_array()
            .ok_or_else(|| schema_err(record, format!("aliases[{i}]"), "expected an array"))?;
        for (j, a) in alias_arr.iter().enumerate() {
            let field = format!("aliases[{i}][{j}]");
            let a = a
                .as_str()
                .ok_or_else(|| schema_err(record, &field, "expected text"))?;
            let a = normalize_name(a);
            if !a.chars().next().is_some_and(char::is_uppercase) {
                return Err(schema_err(record, field, format!("alias {a:?} must start with a capital letter")));
            }
            if a.chars().any(char::is_numeric) {
                return Err(schema_err(record, field, format!("alias {a:?} contains a digit")));
            }
            entity.add_alias(&a);
        }
        entity_names.push(entity);
    }

    EvolutionChain::new(entity_names, years, source)
        .map_err(|e| schema_err(record, "names", e.to_string()))
}

/// Loads newline-delimited curated change records, one chain per record.
/// Blank lines are skipped.
pub fn load_curated_changes(document: &str) -> Result<Vec<EvolutionChain>, SchemaError> {
    document
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| parse_record(l, n + 1))
        .collect()
}

/// Serializes one chain in the curated record format.
pub fn chain_record(chain: &EvolutionChain) -> Value {
    let mut obj = Map::new();
    obj.insert(
        "names".into(),
        chain.names.iter().map(|n| Value::from(n.canonical.clone())).collect(),
    );
    obj.insert(
        "years".into(),
        chain
            .changes
            .iter()
            .map(|c| c.year.map(Value::from).unwrap_or(Value::Null))
            .collect(),
    );
    obj.insert(
        "aliases".into(),
        chain
            .names
            .iter()
            .map(|n| n.aliases.iter().cloned().map(Value::from).collect::<Value>())
            .collect(),
    );
    obj.insert("source".into(), Value::from(chain.source_list.clone()));
    if chain.names.iter().any(|n| n.link.is_some()) {
        obj.insert(
            "links".into(),
            chain
                .names
                .iter()
                .map(|n| n.link.clone().map(Value::from).unwrap_or(Value::Null))
                .collect(),
        );
    }
    Value::Object(obj)
}

/// Writes chains as newline-delimited curated records.
pub fn write_curated_changes(chains: &[EvolutionChain]) -> String {
    let mut out = String::new();
    for chain in chains {
        out.push_str(&chain_record(chain).to_string());
        out.push('\n');
    }
    out
}

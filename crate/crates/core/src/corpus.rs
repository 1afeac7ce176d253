//! Resolving entity names to articles.
//!
//! Pages come from a [`PageSource`]: the live wiki API, a directory of saved
//! pages, or the on-disk [`Cache`] wrapped around either of them. Whatever the
//! source, bodies are reduced to plain text by [`strip_markup`].

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, RwLock};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use once_cell::sync::Lazy;
use percent_encoding::{utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::model::{Article, EntityName, EvolutionChain};

/// Redirect hops followed before giving up.
pub const MAX_REDIRECTS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FetchError {
    #[error("transport error: {detail}")]
    Transport { detail: String, retryable: bool },
    #[error("offline: {title:?} is not cached")]
    Offline { title: String },
    #[error("redirect loop: {detail}")]
    RedirectLoop { detail: String },
    #[error("cache: {detail}")]
    Storage { detail: String },
}

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {detail}", .path.display())]
    Corrupt {
        path: PathBuf,
        line: usize,
        detail: String,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CacheError + '_ {
    move |source| CacheError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// What a page source answers for one title.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PageResponse {
    /// A page. `title` may differ from the request when the source followed
    /// a redirect itself.
    Page {
        title: String,
        markup: String,
        fetched_at: u64,
    },
    Redirect {
        target: String,
    },
    Missing,
}

/// Anything that can answer title lookups.
pub trait PageSource: Send + Sync {
    fn fetch(&self, title: &str) -> Result<PageResponse, FetchError>;
}

impl<S: PageSource + ?Sized> PageSource for &S {
    fn fetch(&self, title: &str) -> Result<PageResponse, FetchError> {
        (**self).fetch(title)
    }
}

impl<S: PageSource + ?Sized> PageSource for Box<S> {
    fn fetch(&self, title: &str) -> Result<PageResponse, FetchError> {
        (**self).fetch(title)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FetchStatus {
    Resolved,
    Redirected,
    Missing,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FetchOutcome {
    pub status: FetchStatus,
    pub article: Option<Article>,
    pub error_detail: Option<String>,
    /// Error outcomes only: a later attempt may succeed.
    pub retryable: bool,
}

impl FetchOutcome {
    pub fn found(article: Article) -> Self {
        let status = if article.redirected {
            FetchStatus::Redirected
        } else {
            FetchStatus::Resolved
        };
        FetchOutcome {
            status,
            article: Some(article),
            error_detail: None,
            retryable: false,
        }
    }

    pub fn missing() -> Self {
        FetchOutcome {
            status: FetchStatus::Missing,
            article: None,
            error_detail: None,
            retryable: false,
        }
    }

    pub fn error(err: &FetchError) -> Self {
        let retryable = match err {
            FetchError::Transport { retryable, .. } => *retryable,
            FetchError::Offline { .. } | FetchError::Storage { .. } => true,
            FetchError::RedirectLoop { .. } => false,
        };
        FetchOutcome {
            status: FetchStatus::Error,
            article: None,
            error_detail: Some(err.to_string()),
            retryable,
        }
    }

    pub fn is_found(&self) -> bool {
        matches!(self.status, FetchStatus::Resolved | FetchStatus::Redirected)
    }
}

/// Wiki title key: NFC, single underscores for whitespace, first letter
/// upper-cased.
pub fn normalize_title(title: &str) -> String {
    let nfc: String = title.nfc().collect();
    let spaced = nfc.replace('_', " ");
    let joined = spaced.split_whitespace().collect::<Vec<_>>().join("_");
    let mut chars = joined.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Human form of a title key.
pub fn display_title(title: &str) -> String {
    normalize_title(title).replace('_', " ")
}

const FILE_KEY_SAFE: &AsciiSet = &NON_ALPHANUMERIC
    .remove(b'_')
    .remove(b'-')
    .remove(b'.')
    .remove(b',')
    .remove(b'(')
    .remove(b')');

/// File name stem for a title. Injective over normalized titles.
pub fn file_key(title: &str) -> String {
    let key = normalize_title(title);
    let encoded = utf8_percent_encode(&key, FILE_KEY_SAFE).to_string();
    // keep "." and ".." from meaning anything to the filesystem
    match encoded.strip_prefix('.') {
        Some(rest) => format!("%2E{rest}"),
        None => encoded,
    }
}

// ---------------------------------------------------------------------------
// markup stripping

const SKIP_TAGS: &[&str] = &[
    "script", "style", "table", "sup", "nav", "noscript", "head", "figure", "math", "h1", "h2",
    "h3", "h4", "h5", "h6", "footer", "aside",
];
const SKIP_CLASSES: &[&str] = &[
    "navbox",
    "reflist",
    "references",
    "mw-references-wrap",
    "mw-editsection",
    "hatnote",
    "toc",
    "infobox",
    "thumb",
    "metadata",
    "sistersitebox",
    "noprint",
];
const BLOCK_TAGS: &[&str] = &[
    "p", "div", "li", "ul", "ol", "dl", "dd", "dt", "blockquote", "section", "article", "pre", "tr",
    "body", "html", "center", "main",
];
const VOID_TAGS: &[&str] = &[
    "br", "hr", "img", "meta", "link", "input", "wbr", "area", "base", "col", "embed", "source",
    "track", "param",
];

static CLASS_ATTR: Lazy<Regex> =
    Lazy::new(|| Regex::new(r#"(?i)\b(?:class|id)\s*=\s*["']([^"']*)["']"#).unwrap());
static CITATION: Lazy<Regex> = Lazy::new(|| {
    Regex::new(r"[ \t]*\[(?:\d+|citation needed|edit|note \d+|nb \d+|clarification needed)\]")
        .unwrap()
});
static ENTITY_LIKE: Lazy<Regex> = Lazy::new(|| Regex::new(r"&#?[A-Za-z0-9]+;?").unwrap());
static TAG_START: Lazy<Regex> = Lazy::new(|| Regex::new(r"<([A-Za-z/!?])").unwrap());
static PARAGRAPH_BREAK: Lazy<Regex> = Lazy::new(|| Regex::new(r"\n[ \t\r]*\n").unwrap());

struct Tag<'a> {
    name: String,
    closing: bool,
    self_closing: bool,
    attrs: &'a str,
}

fn parse_tag(inner: &str) -> Option<Tag<'_>> {
    let (closing, rest) = match inner.strip_prefix('/') {
        Some(r) => (true, r),
        None => (false, inner),
    };
    let name_len = rest
        .find(|c: char| !c.is_ascii_alphanumeric())
        .unwrap_or(rest.len());
    if name_len == 0 {
        return None;
    }
    Some(Tag {
        name: rest[..name_len].to_ascii_lowercase(),
        closing,
        self_closing: rest.trim_end().ends_with('/'),
        attrs: &rest[name_len..],
    })
}

fn is_skipped(tag: &Tag<'_>) -> bool {
    if SKIP_TAGS.contains(&tag.name.as_str()) {
        return true;
    }
    CLASS_ATTR.captures_iter(tag.attrs).any(|c| {
        c[1].split_whitespace()
            .any(|class| SKIP_CLASSES.contains(&class) || class == "reference")
    })
}

fn remove_tags(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut skip: Option<(String, usize)> = None;
    let mut rest = raw;
    while let Some(pos) = rest.find('<') {
        let (text, tail) = rest.split_at(pos);
        if skip.is_none() {
            out.push_str(text);
        }
        if let Some(after) = tail.strip_prefix("<!--") {
            rest = after.find("-->").map_or("", |end| &after[end + 3..]);
            continue;
        }
        let next = tail[1..].chars().next();
        let looks_like_tag =
            next.is_some_and(|c| c.is_ascii_alphabetic() || c == '/' || c == '!' || c == '?');
        let Some(end) = tail.find('>').filter(|_| looks_like_tag) else {
            if skip.is_none() {
                out.push('<');
            }
            rest = &tail[1..];
            continue;
        };
        let inner = &tail[1..end];
        rest = &tail[end + 1..];
        let Some(tag) = parse_tag(inner) else {
            continue;
        };
        let void = VOID_TAGS.contains(&tag.name.as_str()) || tag.self_closing;
        if let Some((name, depth)) = skip.as_mut() {
            if *name == tag.name && !void {
                if tag.closing {
                    *depth -= 1;
                    if *depth == 0 {
                        skip = None;
                    }
                } else {
                    *depth += 1;
                }
            }
            continue;
        }
        if !tag.closing && !void && is_skipped(&tag) {
            skip = Some((tag.name, 1));
            continue;
        }
        if tag.name == "br" {
            out.push('\n');
        } else if BLOCK_TAGS.contains(&tag.name.as_str()) {
            out.push_str("\n\n");
        }
    }
    if skip.is_none() {
        out.push_str(rest);
    }
    out
}

fn clean_text(text: &str) -> String {
    let decoded = html_escape::decode_html_entities(text);
    // anything that would still decode or look like a tag gets a space, so a
    // second pass leaves the text alone
    let protected = ENTITY_LIKE.replace_all(&decoded, |c: &regex::Captures| {
        let m = &c[0];
        if html_escape::decode_html_entities(m) == m {
            m.to_string()
        } else {
            format!("& {}", &m[1..])
        }
    });
    let protected = TAG_START.replace_all(&protected, "< $1");
    let mut text = protected.into_owned();
    loop {
        let next = CITATION.replace_all(&text, "").into_owned();
        if next == text {
            break;
        }
        text = next;
    }
    PARAGRAPH_BREAK
        .split(&text)
        .map(|p| p.split_whitespace().collect::<Vec<_>>().join(" "))
        .filter(|p| !p.is_empty())
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Reduces page markup to the article's running text.
///
/// Tables, references, headings and navigation boxes are dropped, entities
/// are decoded and paragraphs are separated by one blank line. Idempotent.
pub fn strip_markup(raw: &str) -> String {
    let mut text = clean_text(&remove_tags(raw));
    for _ in 0..8 {
        let next = clean_text(&text);
        if next == text {
            break;
        }
        text = next;
    }
    text
}

// ---------------------------------------------------------------------------
// resolution

/// Looks one title up, following redirects.
pub fn resolve_title(title: &str, source: &dyn PageSource) -> FetchOutcome {
    let mut current = title.to_string();
    let mut seen = vec![normalize_title(title)];
    for _ in 0..=MAX_REDIRECTS {
        match source.fetch(&current) {
            Ok(PageResponse::Page {
                title: resolved,
                markup,
                fetched_at,
            }) => {
                let article = Article::new(
                    &display_title(title),
                    &display_title(&resolved),
                    strip_markup(&markup),
                    fetched_at,
                );
                return FetchOutcome::found(article);
            }
            Ok(PageResponse::Redirect { target }) => {
                let key = normalize_title(&target);
                if seen.contains(&key) {
                    return FetchOutcome::error(&FetchError::RedirectLoop {
                        detail: format!("{title:?} cycles through {target:?}"),
                    });
                }
                seen.push(key);
                current = target;
            }
            Ok(PageResponse::Missing) => return FetchOutcome::missing(),
            Err(e) => return FetchOutcome::error(&e),
        }
    }
    FetchOutcome::error(&FetchError::RedirectLoop {
        detail: format!("{title:?} needs more than {MAX_REDIRECTS} redirects"),
    })
}

/// Which spelling of a name led to its article.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Via {
    Link,
    Name,
    Alias,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NameResolution {
    pub name: String,
    pub via: Option<Via>,
    pub outcome: FetchOutcome,
}

/// Resolves a name to an article: the list link first, then the canonical
/// name, then each alias. The first title that resolves wins.
pub fn resolve_article(name: &EntityName, source: &dyn PageSource) -> NameResolution {
    let mut candidates: Vec<(&str, Via)> = Vec::new();
    if let Some(link) = &name.link {
        candidates.push((link, Via::Link));
    }
    candidates.push((&name.canonical, Via::Name));
    candidates.extend(name.aliases.iter().map(|a| (a.as_str(), Via::Alias)));

    let mut tried = Vec::new();
    let mut loop_error = None;
    for (title, via) in candidates {
        let key = normalize_title(title);
        if key.is_empty() || tried.contains(&key) {
            continue;
        }
        tried.push(key);
        let outcome = resolve_title(title, source);
        match outcome.status {
            FetchStatus::Resolved | FetchStatus::Redirected => {
                return NameResolution {
                    name: name.canonical.clone(),
                    via: Some(via),
                    outcome,
                }
            }
            FetchStatus::Missing => {}
            FetchStatus::Error if !outcome.retryable => {
                loop_error.get_or_insert(outcome);
            }
            FetchStatus::Error => {
                return NameResolution {
                    name: name.canonical.clone(),
                    via: None,
                    outcome,
                }
            }
        }
    }
    NameResolution {
        name: name.canonical.clone(),
        via: None,
        outcome: loop_error.unwrap_or_else(FetchOutcome::missing),
    }
}

/// Every article an entity's names lead to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityArticles {
    pub entity_id: String,
    /// One per chain name, in chain order.
    pub resolutions: Vec<NameResolution>,
    /// Distinct articles in order of first appearance.
    pub articles: Vec<Article>,
    /// Index into `articles` of the current name's article.
    pub current: Option<usize>,
}

impl EntityArticles {
    pub fn current_article(&self) -> Option<&Article> {
        self.current.map(|i| &self.articles[i])
    }

    pub fn is_resolvable(&self) -> bool {
        !self.articles.is_empty()
    }
}

pub fn fetch_entity_articles(chain: &EvolutionChain, source: &dyn PageSource) -> EntityArticles {
    let mut articles: Vec<Article> = Vec::new();
    let mut resolutions = Vec::with_capacity(chain.names.len());
    let mut current = None;
    let last = chain.names.len() - 1;
    for (i, name) in chain.names.iter().enumerate() {
        let res = resolve_article(name, source);
        if let Some(article) = &res.outcome.article {
            let key = normalize_title(&article.resolved_title);
            let idx = match articles
                .iter()
                .position(|a| normalize_title(&a.resolved_title) == key)
            {
                Some(idx) => idx,
                None => {
                    articles.push(article.clone());
                    articles.len() - 1
                }
            };
            if i == last {
                current = Some(idx);
            }
        }
        resolutions.push(res);
    }
    EntityArticles {
        entity_id: chain.entity_id.clone(),
        resolutions,
        articles,
        current,
    }
}

/// Per-name line of the resolution log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NameResolutionRecord {
    pub name: String,
    pub status: FetchStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub via: Option<Via>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub requested_title: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolved_title: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Resolution log record: how one entity's names resolved.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityResolution {
    pub entity_id: String,
    pub names: Vec<NameResolutionRecord>,
    pub articles: Vec<String>,
    #[serde(default)]
    pub current_article: Option<String>,
}

impl EntityResolution {
    pub fn is_resolvable(&self) -> bool {
        !self.articles.is_empty()
    }

    pub fn current_name_resolvable(&self) -> bool {
        self.current_article.is_some()
    }

    /// Resolved through a link on a list page.
    pub fn linked_on_list(&self) -> bool {
        self.names
            .iter()
            .any(|n| n.via == Some(Via::Link) && matches!(n.status, FetchStatus::Resolved | FetchStatus::Redirected))
    }

    pub fn multi_article(&self) -> bool {
        self.articles.len() > 1
    }

    pub fn has_errors(&self) -> bool {
        self.names.iter().any(|n| n.status == FetchStatus::Error)
    }
}

impl From<&EntityArticles> for EntityResolution {
    fn from(e: &EntityArticles) -> Self {
        EntityResolution {
            entity_id: e.entity_id.clone(),
            names: e
                .resolutions
                .iter()
                .map(|r| NameResolutionRecord {
                    name: r.name.clone(),
                    status: r.outcome.status,
                    via: r.via,
                    requested_title: r.outcome.article.as_ref().map(|a| a.requested_title.clone()),
                    resolved_title: r.outcome.article.as_ref().map(|a| a.resolved_title.clone()),
                    error: r.outcome.error_detail.clone(),
                })
                .collect(),
            articles: e.articles.iter().map(|a| a.resolved_title.clone()).collect(),
            current_article: e.current_article().map(|a| a.resolved_title.clone()),
        }
    }
}

// ---------------------------------------------------------------------------
// sources

/// In-memory page source, mostly for tests.
#[derive(Debug, Default)]
pub struct MemorySource {
    pages: HashMap<String, (String, String)>,
    redirects: HashMap<String, String>,
    calls: AtomicUsize,
}

impl MemorySource {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn page(mut self, title: &str, markup: &str) -> Self {
        self.pages
            .insert(normalize_title(title), (display_title(title), markup.to_string()));
        self
    }

    pub fn redirect(mut self, from: &str, to: &str) -> Self {
        self.redirects.insert(normalize_title(from), to.to_string());
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

impl PageSource for MemorySource {
    fn fetch(&self, title: &str) -> Result<PageResponse, FetchError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let key = normalize_title(title);
        if let Some(target) = self.redirects.get(&key) {
            return Ok(PageResponse::Redirect {
                target: target.clone(),
            });
        }
        Ok(match self.pages.get(&key) {
            Some((title, markup)) => PageResponse::Page {
                title: title.clone(),
                markup: markup.clone(),
                fetched_at: 0,
            },
            None => PageResponse::Missing,
        })
    }
}

/// Saved pages on disk: `<dir>/<file key>.html` per page plus an optional
/// `<dir>/redirects.tsv` of `From<TAB>To` lines.
#[derive(Debug)]
pub struct DirectorySource {
    dir: PathBuf,
    redirects: HashMap<String, String>,
    calls: AtomicUsize,
}

impl DirectorySource {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, CacheError> {
        let dir = dir.into();
        if !dir.is_dir() {
            return Err(CacheError::Io {
                path: dir,
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "not a directory"),
            });
        }
        let mut redirects = HashMap::new();
        let path = dir.join("redirects.tsv");
        if path.exists() {
            let text = fs::read_to_string(&path).map_err(io_err(&path))?;
            for (n, line) in text.lines().enumerate() {
                if line.trim().is_empty() || line.starts_with('#') {
                    continue;
                }
                let (from, to) = line.split_once('\t').ok_or_else(|| CacheError::Corrupt {
                    path: path.clone(),
                    line: n + 1,
                    detail: "expected From<TAB>To".into(),
                })?;
                redirects.insert(normalize_title(from), to.trim().to_string());
            }
        }
        Ok(DirectorySource {
            dir,
            redirects,
            calls: AtomicUsize::new(0),
        })
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

impl PageSource for DirectorySource {
    fn fetch(&self, title: &str) -> Result<PageResponse, FetchError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let key = normalize_title(title);
        if let Some(target) = self.redirects.get(&key) {
            return Ok(PageResponse::Redirect {
                target: target.clone(),
            });
        }
        let path = self.dir.join(format!("{}.html", file_key(title)));
        match fs::read_to_string(&path) {
            Ok(markup) => Ok(PageResponse::Page {
                title: display_title(&key),
                markup,
                fetched_at: 0,
            }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(PageResponse::Missing),
            Err(e) => Err(FetchError::Storage {
                detail: format!("{}: {e}", path.display()),
            }),
        }
    }
}

/// Spaces requests at least `interval` apart across threads.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Duration,
    next: Mutex<Instant>,
}

impl RateLimiter {
    pub fn per_second(rate: f64) -> Self {
        let interval = if rate > 0.0 {
            Duration::from_secs_f64(1.0 / rate)
        } else {
            Duration::ZERO
        };
        RateLimiter {
            interval,
            next: Mutex::new(Instant::now()),
        }
    }

    pub fn wait(&self) {
        let slot = {
            let mut next = self.next.lock().unwrap();
            let now = Instant::now();
            let slot = (*next).max(now);
            *next = slot + self.interval;
            slot
        };
        let now = Instant::now();
        if slot > now {
            std::thread::sleep(slot - now);
        }
    }
}

/// Wiki API client using `action=parse` with server-side redirects.
#[derive(Debug)]
pub struct LiveSource {
    client: reqwest::blocking::Client,
    api_base: String,
    limiter: RateLimiter,
    max_retries: u32,
    backoff: Duration,
}

impl LiveSource {
    pub fn new(api_base: &str, user_agent: &str, rate_limit: f64) -> Result<Self, FetchError> {
        let client = reqwest::blocking::Client::builder()
            .user_agent(user_agent)
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| FetchError::Transport {
                detail: e.to_string(),
                retryable: false,
            })?;
        Ok(LiveSource {
            client,
            api_base: api_base.to_string(),
            limiter: RateLimiter::per_second(rate_limit),
            max_retries: 5,
            backoff: Duration::from_secs(2),
        })
    }

    pub fn request_params(title: &str) -> Vec<(&'static str, String)> {
        vec![
            ("action", "parse".into()),
            ("page", display_title(title)),
            ("prop", "text".into()),
            ("redirects", "1".into()),
            ("disableeditsection", "1".into()),
            ("disabletoc", "1".into()),
            ("format", "json".into()),
            ("formatversion", "2".into()),
        ]
    }
}

/// Interprets an `action=parse` response body.
pub fn parse_api_response(body: &Value) -> Result<PageResponse, FetchError> {
    if let Some(err) = body.get("error") {
        let code = err.get("code").and_then(Value::as_str).unwrap_or("");
        return match code {
            "missingtitle" | "invalidtitle" | "nosuchpageid" => Ok(PageResponse::Missing),
            "maxlag" | "ratelimited" => Err(FetchError::Transport {
                detail: format!("api error {code}"),
                retryable: true,
            }),
            _ => Err(FetchError::Transport {
                detail: format!("api error {code}: {}", err.get("info").and_then(Value::as_str).unwrap_or("")),
                retryable: false,
            }),
        };
    }
    let parse = body.get("parse").ok_or_else(|| FetchError::Transport {
        detail: "response has no `parse` member".into(),
        retryable: false,
    })?;
    let title = parse
        .get("title")
        .and_then(Value::as_str)
        .ok_or_else(|| FetchError::Transport {
            detail: "response has no title".into(),
            retryable: false,
        })?;
    // formatversion=2 gives a string, version 1 wraps it in {"*": ...}
    let text = match parse.get("text") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Object(o)) => o.get("*").and_then(Value::as_str).unwrap_or("").to_string(),
        _ => String::new(),
    };
    Ok(PageResponse::Page {
        title: title.to_string(),
        markup: text,
        fetched_at: unix_now(),
    })
}

impl PageSource for LiveSource {
    fn fetch(&self, title: &str) -> Result<PageResponse, FetchError> {
        let params = Self::request_params(title);
        let mut attempt = 0;
        loop {
            self.limiter.wait();
            let result = self
                .client
                .get(&self.api_base)
                .query(&params)
                .send()
                .map_err(|e| FetchError::Transport {
                    detail: e.to_string(),
                    retryable: e.is_timeout() || e.is_connect(),
                })
                .and_then(|resp| {
                    let status = resp.status();
                    if status.as_u16() == 429 || status.is_server_error() {
                        return Err(FetchError::Transport {
                            detail: format!("HTTP {status}"),
                            retryable: true,
                        });
                    }
                    if !status.is_success() {
                        return Err(FetchError::Transport {
                            detail: format!("HTTP {status}"),
                            retryable: false,
                        });
                    }
                    let body = resp.text().map_err(|e| FetchError::Transport {
                        detail: e.to_string(),
                        retryable: true,
                    })?;
                    let json: Value = serde_json::from_str(&body).map_err(|e| FetchError::Transport {
                        detail: format!("invalid JSON: {e}"),
                        retryable: false,
                    })?;
                    parse_api_response(&json)
                });
            match result {
                Err(FetchError::Transport { retryable: true, detail }) if attempt < self.max_retries => {
                    log::warn!("{title}: {detail}, retrying");
                    std::thread::sleep(self.backoff * 2u32.pow(attempt));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

// ---------------------------------------------------------------------------
// cache

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheEntry {
    pub key: String,
    pub outcome: FetchOutcome,
    pub stored_at: u64,
}

impl CacheEntry {
    pub fn new(title: &str, outcome: FetchOutcome) -> Self {
        CacheEntry {
            key: normalize_title(title),
            outcome,
            stored_at: unix_now(),
        }
    }
}

/// One manifest line.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestRecord {
    key: String,
    status: FetchStatus,
    #[serde(default)]
    resolved_title: Option<String>,
    stored_at: u64,
    #[serde(default)]
    requested_title: Option<String>,
    #[serde(default)]
    fetched_at: u64,
    #[serde(default)]
    error: Option<String>,
}

/// Outcomes by normalized title, persisted as `<dir>/manifest` (JSON lines,
/// last record per key wins) plus `<dir>/pages/<file key>.txt` bodies.
#[derive(Debug)]
pub struct Cache {
    dir: PathBuf,
    index: RwLock<HashMap<String, ManifestRecord>>,
    writer: Mutex<()>,
}

impl Cache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, CacheError> {
        let dir = dir.into();
        let pages = dir.join("pages");
        fs::create_dir_all(&pages).map_err(io_err(&pages))?;
        let manifest = dir.join("manifest");
        let mut index = HashMap::new();
        if manifest.exists() {
            let file = File::open(&manifest).map_err(io_err(&manifest))?;
            for (n, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(io_err(&manifest))?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: ManifestRecord =
                    serde_json::from_str(&line).map_err(|e| CacheError::Corrupt {
                        path: manifest.clone(),
                        line: n + 1,
                        detail: e.to_string(),
                    })?;
                index.insert(rec.key.clone(), rec);
            }
        }
        Ok(Cache {
            dir,
            index: RwLock::new(index),
            writer: Mutex::new(()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn len(&self) -> usize {
        self.index.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn keys(&self) -> Vec<String> {
        let mut keys: Vec<_> = self.index.read().unwrap().keys().cloned().collect();
        keys.sort();
        keys
    }

    fn page_path(&self, key: &str) -> PathBuf {
        self.dir.join("pages").join(format!("{}.txt", file_key(key)))
    }

    pub fn get(&self, title: &str) -> Result<Option<CacheEntry>, CacheError> {
        let key = normalize_title(title);
        let Some(rec) = self.index.read().unwrap().get(&key).cloned() else {
            return Ok(None);
        };
        let outcome = match rec.status {
            FetchStatus::Resolved | FetchStatus::Redirected => {
                let path = self.page_path(&key);
                let body = fs::read_to_string(&path).map_err(io_err(&path))?;
                let resolved = rec.resolved_title.clone().unwrap_or_else(|| display_title(&key));
                let requested = rec.requested_title.clone().unwrap_or_else(|| display_title(&key));
                FetchOutcome::found(Article::new(&requested, &resolved, body, rec.fetched_at))
            }
            FetchStatus::Missing => FetchOutcome::missing(),
            FetchStatus::Error => FetchOutcome {
                status: FetchStatus::Error,
                article: None,
                error_detail: rec.error.clone(),
                retryable: false,
            },
        };
        Ok(Some(CacheEntry {
            key,
            outcome,
            stored_at: rec.stored_at,
        }))
    }

    pub fn put(&self, entry: &CacheEntry) -> Result<(), CacheError> {
        let key = normalize_title(&entry.key);
        let article = entry.outcome.article.as_ref();
        let rec = ManifestRecord {
            key: key.clone(),
            status: entry.outcome.status,
            resolved_title: article.map(|a| a.resolved_title.clone()),
            stored_at: entry.stored_at,
            requested_title: article.map(|a| a.requested_title.clone()),
            fetched_at: article.map_or(0, |a| a.fetched_at),
            error: entry.outcome.error_detail.clone(),
        };
        let _guard = self.writer.lock().unwrap();
        if let Some(a) = article {
            let path = self.page_path(&key);
            fs::write(&path, &a.body).map_err(io_err(&path))?;
        }
        let manifest = self.dir.join("manifest");
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&manifest)
            .map_err(io_err(&manifest))?;
        let line = serde_json::to_string(&rec).expect("manifest record serializes");
        writeln!(file, "{line}").map_err(io_err(&manifest))?;
        self.index.write().unwrap().insert(key, rec);
        Ok(())
    }
}

/// Serves lookups from the cache, filling it from `upstream` on a miss.
/// Without an upstream every miss is an [`FetchError::Offline`] error and is
/// remembered in [`CachedSource::misses`].
pub struct CachedSource<'a> {
    cache: &'a Cache,
    upstream: Option<&'a dyn PageSource>,
    misses: Mutex<Vec<String>>,
}

impl<'a> CachedSource<'a> {
    pub fn new(cache: &'a Cache, upstream: Option<&'a dyn PageSource>) -> Self {
        CachedSource {
            cache,
            upstream,
            misses: Mutex::new(Vec::new()),
        }
    }

    pub fn offline(cache: &'a Cache) -> Self {
        Self::new(cache, None)
    }

    pub fn misses(&self) -> Vec<String> {
        let mut m = self.misses.lock().unwrap().clone();
        m.sort();
        m.dedup();
        m
    }

    fn respond(outcome: &FetchOutcome) -> Result<PageResponse, FetchError> {
        match (&outcome.status, &outcome.article) {
            (FetchStatus::Resolved | FetchStatus::Redirected, Some(a)) => Ok(PageResponse::Page {
                title: a.resolved_title.clone(),
                markup: a.body.clone(),
                fetched_at: a.fetched_at,
            }),
            (FetchStatus::Missing, _) => Ok(PageResponse::Missing),
            _ => {
                let detail = outcome.error_detail.clone().unwrap_or_default();
                if outcome.retryable {
                    Err(FetchError::Transport {
                        detail,
                        retryable: true,
                    })
                } else {
                    let detail = detail.strip_prefix("redirect loop: ").map(str::to_string).unwrap_or(detail);
                    Err(FetchError::RedirectLoop { detail })
                }
            }
        }
    }
}

impl PageSource for CachedSource<'_> {
    fn fetch(&self, title: &str) -> Result<PageResponse, FetchError> {
        let storage = |e: CacheError| FetchError::Storage {
            detail: e.to_string(),
        };
        if let Some(entry) = self.cache.get(title).map_err(storage)? {
            return Self::respond(&entry.outcome);
        }
        let Some(upstream) = self.upstream else {
            self.misses.lock().unwrap().push(normalize_title(title));
            return Err(FetchError::Offline {
                title: title.to_string(),
            });
        };
        let outcome = resolve_title(title, upstream);
        if !outcome.retryable {
            self.cache
                .put(&CacheEntry::new(title, outcome.clone()))
                .map_err(storage)?;
        }
        Self::respond(&outcome)
    }
}

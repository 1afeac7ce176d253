//! Sentence splitting and per-sentence mention lookup.

use std::collections::HashSet;
use std::path::Path;

use once_cell::sync::Lazy;
use unicode_normalization::UnicodeNormalization;

use crate::model::{Article, EntityName, MentionIndex, NameChange, Year};

const DEFAULT_ABBREVIATIONS: &str = include_str!("../resources/abbreviations.txt");

static DEFAULT_SPLITTER: Lazy<RuleSplitter> = Lazy::new(RuleSplitter::default);

const TERMINALS: &[char] = &['.', '!', '?'];
const CLOSERS: &[char] = &['"', '\'', '”', '’', ')', ']', '»'];
const OPENERS: &[char] = &['"', '\'', '“', '‘', '(', '[', '«'];

/// Sentences of a text with their byte ranges in it.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SentenceList {
    pub sentences: Vec<String>,
    /// `(start, end)` byte offsets; `text[start..end] == sentences[i]`.
    pub offsets: Vec<(usize, usize)>,
}

impl SentenceList {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    fn push(&mut self, text: &str, start: usize, end: usize) {
        let slice = &text[start..end];
        let trimmed = slice.trim_start();
        let start = start + (slice.len() - trimmed.len());
        let trimmed = trimmed.trim_end();
        if !trimmed.is_empty() {
            self.sentences.push(trimmed.to_string());
            self.offsets.push((start, start + trimmed.len()));
        }
    }
}

pub trait SentenceSplitter: Send + Sync {
    fn split(&self, text: &str) -> SentenceList;
}

/// Punctuation-driven splitter with an abbreviation table.
///
/// A sentence ends at `.`, `!` or `?` (plus closing quotes/brackets) when
/// whitespace follows and the next word starts with an uppercase letter or an
/// opening quote, unless the word before a single period is a known
/// abbreviation or an initial. A blank line always ends a sentence.
#[derive(Debug, Clone)]
pub struct RuleSplitter {
    abbreviations: HashSet<String>,
}

impl Default for RuleSplitter {
    fn default() -> Self {
        Self::from_table(DEFAULT_ABBREVIATIONS)
    }
}

impl RuleSplitter {
    /// One abbreviation per line; `#` starts a comment line.
    pub fn from_table(table: &str) -> Self {
        let abbreviations = table
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_string)
            .collect();
        RuleSplitter { abbreviations }
    }

    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        Ok(Self::from_table(&std::fs::read_to_string(path)?))
    }

    fn is_abbreviation(&self, word: &str) -> bool {
        let word = word.trim_start_matches(OPENERS);
        if self.abbreviations.contains(word) {
            return true;
        }
        let mut chars = word.chars();
        matches!((chars.next(), chars.next(), chars.next()), (Some(c), Some('.'), None) if c.is_uppercase())
    }
}

impl SentenceSplitter for RuleSplitter {
    fn split(&self, text: &str) -> SentenceList {
        let chars: Vec<(usize, char)> = text.char_indices().collect();
        let len = chars.len();
        let byte_at = |i: usize| chars.get(i).map_or(text.len(), |&(b, _)| b);
        let mut list = SentenceList::default();
        let mut start = 0;
        let mut i = 0;
        while i < len {
            let (pos, c) = chars[i];
            if c == '\n' {
                let mut j = i + 1;
                while j < len && chars[j].1.is_whitespace() && chars[j].1 != '\n' {
                    j += 1;
                }
                if j < len && chars[j].1 == '\n' {
                    list.push(text, start, pos);
                    start = byte_at(j);
                    i = j;
                    continue;
                }
                i += 1;
                continue;
            }
            if !TERMINALS.contains(&c) {
                i += 1;
                continue;
            }
            let mut j = i + 1;
            while j < len && TERMINALS.contains(&chars[j].1) {
                j += 1;
            }
            let single_period = c == '.' && j == i + 1;
            while j < len && CLOSERS.contains(&chars[j].1) {
                j += 1;
            }
            if j < len && chars[j].1.is_whitespace() {
                let mut k = j;
                while k < len && chars[k].1.is_whitespace() {
                    k += 1;
                }
                let gap = &text[byte_at(j)..byte_at(k)];
                let blank_line = gap.matches('\n').count() >= 2;
                let next_starts = k < len && (chars[k].1.is_uppercase() || OPENERS.contains(&chars[k].1));
                let abbreviated = single_period && {
                    let word_start = text[..pos]
                        .rfind(char::is_whitespace)
                        .map_or(0, |w| w + text[w..].chars().next().map_or(1, char::len_utf8));
                    self.is_abbreviation(&text[word_start..pos + 1])
                };
                if blank_line || (next_starts && !abbreviated) {
                    let end = byte_at(j);
                    list.push(text, start, end);
                    start = end;
                    i = k;
                    continue;
                }
            }
            i = j;
        }
        list.push(text, start, text.len());
        list
    }
}

/// Splits with the built-in abbreviation table.
pub fn split_sentences(text: &str) -> SentenceList {
    DEFAULT_SPLITTER.split(text)
}

fn fold(s: &str) -> String {
    s.nfc().collect::<String>().to_lowercase()
}

/// Whether `needle` occurs in `hay` without touching other letters or digits
/// at its alphanumeric ends. Both arguments must already be folded.
fn contains_token(hay: &str, needle: &str) -> bool {
    let Some(first) = needle.chars().next() else {
        return false;
    };
    let last = needle.chars().next_back().unwrap_or(first);
    let mut from = 0;
    while let Some(p) = hay[from..].find(needle) {
        let pos = from + p;
        let before_ok = !first.is_alphanumeric()
            || hay[..pos].chars().next_back().is_none_or(|c| !c.is_alphanumeric());
        let after_ok = !last.is_alphanumeric()
            || hay[pos + needle.len()..]
                .chars()
                .next()
                .is_none_or(|c| !c.is_alphanumeric());
        if before_ok && after_ok {
            return true;
        }
        from = pos + first.len_utf8();
    }
    false
}

/// Indices of sentences mentioning the name or one of its aliases.
pub fn index_name_mentions(sentences: &SentenceList, name: &EntityName) -> Vec<usize> {
    let variants: Vec<String> = name
        .variants()
        .map(fold)
        .filter(|v| !v.trim().is_empty())
        .collect();
    sentences
        .sentences
        .iter()
        .enumerate()
        .filter(|(_, s)| {
            let s = fold(s);
            variants.iter().any(|v| contains_token(&s, v))
        })
        .map(|(i, _)| i)
        .collect()
}

fn contains_number(hay: &str, digits: &str) -> bool {
    let mut from = 0;
    while let Some(p) = hay[from..].find(digits) {
        let pos = from + p;
        let before = hay[..pos].chars().next_back();
        let after = hay[pos + digits.len()..].chars().next();
        if !before.is_some_and(|c| c.is_ascii_digit()) && !after.is_some_and(|c| c.is_ascii_digit()) {
            return true;
        }
        from = pos + 1;
    }
    false
}

/// Indices of sentences containing the year as a standalone number.
pub fn index_year_mentions(sentences: &SentenceList, year: Year) -> Vec<usize> {
    let digits = year.to_string();
    sentences
        .sentences
        .iter()
        .enumerate()
        .filter(|(_, s)| contains_number(s, &digits))
        .map(|(i, _)| i)
        .collect()
}

/// Mention index of a change over already split sentences. An undated change
/// gets an empty date list.
pub fn mention_index(sentences: &SentenceList, change: &NameChange) -> MentionIndex {
    MentionIndex {
        preceding_idx: index_name_mentions(sentences, &change.preceding),
        succeeding_idx: index_name_mentions(sentences, &change.succeeding),
        date_idx: change
            .year
            .map(|y| index_year_mentions(sentences, y))
            .unwrap_or_default(),
    }
}

pub fn build_mention_index(article: &Article, change: &NameChange) -> MentionIndex {
    mention_index(&split_sentences(&article.body), change)
}

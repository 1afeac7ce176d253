//! Minimum sentence window covering every component of a name change.
//!
//! Given one sorted list of sentence indices per component (preceding name,
//! succeeding name, year), the sweep repeatedly takes the smallest head among
//! the lists and measures the span up to the largest head. The smallest span
//! seen is the minimum sentence distance.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::corpus::{normalize_title, EntityArticles};
use crate::model::{Article, EvolutionChain, ExcerptRecord, NameChange};
use crate::segment::{mention_index, split_sentences, SentenceList};

/// Inclusive range of sentence indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Window {
    pub from: usize,
    pub to: usize,
}

impl Window {
    pub fn new(from: usize, to: usize) -> Self {
        assert!(from <= to, "window {from}..={to} is reversed");
        Window { from, to }
    }

    pub fn distance(&self) -> usize {
        self.to - self.from
    }

    pub fn contains(&self, idx: usize) -> bool {
        (self.from..=self.to).contains(&idx)
    }
}

/// Result of a sweep, with the number of indices it consumed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sweep {
    pub window: Option<Window>,
    pub shifts: usize,
}

/// Runs the sweep over `components`, each strictly increasing.
///
/// Among windows of equal minimal distance the one with the smallest `from`
/// is kept: windows are visited in non-decreasing `from` order and only a
/// strictly shorter one replaces the current best.
pub fn sweep<L: AsRef<[usize]>>(components: &[L]) -> Sweep {
    let lists: Vec<&[usize]> = components.iter().map(AsRef::as_ref).collect();
    if lists.is_empty() || lists.iter().any(|l| l.is_empty()) {
        return Sweep {
            window: None,
            shifts: 0,
        };
    }
    debug_assert!(lists.iter().all(|l| l.windows(2).all(|w| w[0] < w[1])));

    // (value, list) min-heap; cursor[list] is the position of its head
    let mut heap: BinaryHeap<Reverse<(usize, usize)>> =
        lists.iter().enumerate().map(|(k, l)| Reverse((l[0], k))).collect();
    let mut cursor = vec![0usize; lists.len()];
    let mut max_head = lists.iter().map(|l| l[0]).max().unwrap_or(0);
    let mut best: Option<Window> = None;
    let mut shifts = 0;

    while let Some(Reverse((from, k))) = heap.pop() {
        shifts += 1;
        let candidate = Window::new(from, max_head);
        if best.is_none_or(|b| candidate.distance() < b.distance()) {
            best = Some(candidate);
        }
        cursor[k] += 1;
        let Some(&next) = lists[k].get(cursor[k]) else {
            break;
        };
        max_head = max_head.max(next);
        heap.push(Reverse((next, k)));
    }
    Sweep {
        window: best,
        shifts,
    }
}

/// Smallest window holding at least one index from every list; `None` if
/// any list is empty.
pub fn min_window<L: AsRef<[usize]>>(components: &[L]) -> Option<Window> {
    sweep(components).window
}

pub fn min_distance<L: AsRef<[usize]>>(components: &[L]) -> Option<usize> {
    min_window(components).map(|w| w.distance())
}

/// Sentences `window.from..=window.to` joined by single spaces.
pub fn extract_excerpt(sentences: &SentenceList, window: Window) -> String {
    sentences.sentences[window.from..=window.to].join(" ")
}

/// Window and excerpt of one change inside one already split article.
fn analyze_sentences(sentences: &SentenceList, change: &NameChange) -> Option<(Window, String)> {
    change.year?;
    let idx = mention_index(sentences, change);
    let window = min_window(&idx.components())?;
    Some((window, extract_excerpt(sentences, window)))
}

/// Looks for a complete mention of a dated change in one article.
pub fn analyze_change(article: &Article, change: &NameChange) -> Option<ExcerptRecord> {
    let sentences = split_sentences(&article.body);
    let (window, text) = analyze_sentences(&sentences, change)?;
    Some(ExcerptRecord {
        entity_id: String::new(),
        change_index: 0,
        change: change.clone(),
        article: article.resolved_title.clone(),
        from: window.from,
        to: window.to,
        distance: window.distance(),
        text,
        from_current_name_article: false,
        mentioned_in_current_article: false,
    })
}

/// Best excerpt per dated change across all of an entity's articles.
///
/// Ties on distance go to the current-name article, then to the smallest
/// resolved title.
pub fn analyze_entity(
    chain: &EvolutionChain,
    entity: &EntityArticles,
    sentences: &[SentenceList],
) -> Vec<ExcerptRecord> {
    debug_assert_eq!(entity.articles.len(), sentences.len());
    let mut records = Vec::new();
    for (change_index, change) in chain.changes.iter().enumerate() {
        if change.year.is_none() {
            continue;
        }
        let mut best: Option<(usize, (bool, Reverse<String>), ExcerptRecord)> = None;
        let mut in_current = false;
        for (i, (article, split)) in entity.articles.iter().zip(sentences).enumerate() {
            let Some((window, text)) = analyze_sentences(split, change) else {
                continue;
            };
            let is_current = entity.current == Some(i);
            in_current |= is_current;
            let rank = (is_current, Reverse(normalize_title(&article.resolved_title)));
            let better = match &best {
                None => true,
                Some((d, r, _)) => window.distance() < *d || (window.distance() == *d && rank > *r),
            };
            if better {
                let record = ExcerptRecord {
                    entity_id: chain.entity_id.clone(),
                    change_index,
                    change: change.clone(),
                    article: article.resolved_title.clone(),
                    from: window.from,
                    to: window.to,
                    distance: window.distance(),
                    text,
                    from_current_name_article: is_current,
                    mentioned_in_current_article: false,
                };
                best = Some((window.distance(), rank, record));
            }
        }
        if let Some((_, _, mut record)) = best {
            record.mentioned_in_current_article = in_current;
            records.push(record);
        }
    }
    records
}

/// Splits every article of an entity, in order.
pub fn split_articles(entity: &EntityArticles) -> Vec<SentenceList> {
    entity.articles.iter().map(|a| split_sentences(&a.body)).collect()
}

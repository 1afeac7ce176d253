#![allow(dead_code)]

use std::path::{Path, PathBuf};

use namevo::corpus::{Cache, DirectorySource, EntityResolution, FetchStatus, NameResolutionRecord, Via};
use namevo::model::{EntityName, EvolutionChain, ExcerptRecord};
use namevo::pipeline;
use namevo::segment::RuleSplitter;
use namevo::stats::{histogram_csv, report_json, report_text};

pub fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(rel)
}

pub fn geo_lists() -> Vec<PathBuf> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(fixture("geo/lists"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    paths.sort();
    paths
}

/// Minimum window distance by trying every element as the window start.
pub fn brute_min_distance(lists: &[Vec<usize>]) -> Option<usize> {
    if lists.is_empty() || lists.iter().any(Vec::is_empty) {
        return None;
    }
    let mut best: Option<usize> = None;
    for start in lists.iter().flatten().copied() {
        let mut end = start;
        let mut ok = true;
        for l in lists {
            match l.iter().copied().filter(|&v| v >= start).min() {
                Some(v) => end = end.max(v),
                None => ok = false,
            }
        }
        if ok {
            best = Some(best.map_or(end - start, |b| b.min(end - start)));
        }
    }
    best
}

/// A block of identical synthetic entities.
#[derive(Debug, Clone, Copy)]
pub struct Group {
    pub count: usize,
    pub changes: usize,
    pub dated: usize,
    pub resolvable: bool,
}

/// Shape of a synthetic run. Flags apply to the first `n` resolvable
/// entities; excerpts go to dated changes of resolvable entities in order.
#[derive(Debug, Clone)]
pub struct Synthetic {
    pub groups: Vec<Group>,
    pub current: usize,
    pub linked: usize,
    pub multi: usize,
    pub distances: Vec<usize>,
    pub in_current: usize,
}

pub struct Run {
    pub chains: Vec<EvolutionChain>,
    pub resolutions: Vec<EntityResolution>,
    pub records: Vec<ExcerptRecord>,
}

fn name_record(name: &str, status: FetchStatus, via: Option<Via>, title: Option<&str>) -> NameResolutionRecord {
    NameResolutionRecord {
        name: name.to_string(),
        status,
        via,
        requested_title: title.map(str::to_string),
        resolved_title: title.map(str::to_string),
        error: None,
    }
}

pub fn synthesize(spec: &Synthetic) -> Run {
    let mut chains = Vec::new();
    let mut resolutions = Vec::new();
    let mut records = Vec::new();
    let mut n_resolvable = 0;
    for group in &spec.groups {
        for _ in 0..group.count {
            let id = chains.len();
            let names: Vec<EntityName> = (0..=group.changes)
                .map(|k| EntityName::new(&format!("Entity {id} name {k}")).unwrap())
                .collect();
            let years = (0..group.changes)
                .map(|k| (k < group.dated).then_some(1900 + k as u16))
                .collect();
            let chain = EvolutionChain::new(names, years, "synthetic").unwrap();
            let first = chain.names[0].canonical.clone();
            let last = chain.current_name().canonical.clone();

            let mut resolution = EntityResolution {
                entity_id: chain.entity_id.clone(),
                names: vec![
                    name_record(&first, FetchStatus::Missing, None, None),
                    name_record(&last, FetchStatus::Missing, None, None),
                ],
                articles: vec![],
                current_article: None,
            };
            if group.resolvable {
                let i = n_resolvable;
                n_resolvable += 1;
                let via = if i < spec.linked { Via::Link } else { Via::Name };
                let title = format!("Article {id}");
                if i < spec.current {
                    resolution.names[1] = name_record(&last, FetchStatus::Resolved, Some(via), Some(&title));
                    resolution.current_article = Some(title.clone());
                } else {
                    let via = if i < spec.linked { Via::Link } else { Via::Alias };
                    resolution.names[0] = name_record(&first, FetchStatus::Redirected, Some(via), Some(&title));
                }
                resolution.articles.push(title);
                if i < spec.multi {
                    resolution.articles.push(format!("Former article {id}"));
                }
                for (k, change) in chain.changes.iter().enumerate() {
                    if change.year.is_none() || records.len() >= spec.distances.len() {
                        continue;
                    }
                    let d = spec.distances[records.len()];
                    records.push(ExcerptRecord {
                        entity_id: chain.entity_id.clone(),
                        change_index: k,
                        change: change.clone(),
                        article: format!("Article {id}"),
                        from: 0,
                        to: d,
                        distance: d,
                        text: String::new(),
                        from_current_name_article: records.len() < spec.in_current,
                        mentioned_in_current_article: records.len() < spec.in_current,
                    });
                }
            }
            resolutions.push(resolution);
            chains.push(chain);
        }
    }
    assert_eq!(records.len(), spec.distances.len(), "not enough dated changes for the excerpts");
    Run { chains, resolutions, records }
}

fn repeat(pairs: &[(usize, usize)]) -> Vec<usize> {
    pairs.iter().flat_map(|&(d, n)| std::iter::repeat_n(d, n)).collect()
}

/// Counts engineered to the geographic statistics table.
pub fn table1() -> Synthetic {
    let g = |count, changes, dated, resolvable| Group { count, changes, dated, resolvable };
    Synthetic {
        groups: vec![
            g(222, 2, 2, true),
            g(474, 1, 1, true),
            g(690, 2, 0, true),
            g(512, 1, 0, true),
            g(3, 2, 2, false),
            g(9, 1, 1, false),
            g(11, 2, 0, false),
            g(5, 1, 0, false),
        ],
        current: 1829,
        linked: 1786,
        multi: 766,
        distances: repeat(&[(0, 226), (1, 118), (2, 45), (5, 99), (127, 83), (139, 1)]),
        in_current: 551,
    }
}

/// Counts engineered to the product statistics table.
pub fn table2() -> Synthetic {
    let g = |count, changes, dated, resolvable| Group { count, changes, dated, resolvable };
    Synthetic {
        groups: vec![
            g(9, 2, 2, true),
            g(27, 1, 1, true),
            g(5, 2, 0, true),
            g(4, 1, 0, true),
            g(1, 2, 2, false),
            g(1, 1, 1, false),
            g(1, 1, 0, false),
        ],
        current: 45,
        linked: 0,
        multi: 0,
        distances: repeat(&[(0, 14), (1, 6), (2, 2), (4, 11), (12, 3)]),
        in_current: 36,
    }
}

/// Every stage output of one offline-capable run over the geo fixture.
#[derive(Debug, PartialEq, Eq)]
pub struct PipelineOutputs {
    pub chains: String,
    pub resolutions: String,
    pub excerpts: String,
    pub report_json: String,
    pub report_text: String,
    pub histogram_csv: String,
    pub export: String,
}

/// Parses the fixture lists, warms a fresh cache from the fixture pages,
/// then analyzes offline.
pub fn run_geo_pipeline(cache_dir: &Path, workers: usize) -> PipelineOutputs {
    let parsed = pipeline::parse_inputs(&geo_lists()).unwrap();
    let chains_text = namevo::listparse::write_curated_changes(&parsed.chains);
    let chains_path = cache_dir.join("chains.jsonl");
    std::fs::create_dir_all(cache_dir).unwrap();
    std::fs::write(&chains_path, &chains_text).unwrap();
    let chains = pipeline::load_chains(&chains_path).unwrap();

    let cache = Cache::open(cache_dir.join("cache")).unwrap();
    let source = DirectorySource::open(fixture("geo/pages")).unwrap();
    let resolutions = pipeline::run_fetch(&chains, &cache, Some(&source), workers).unwrap();
    let records = pipeline::run_analyze(&chains, &cache, None, &RuleSplitter::default(), workers).unwrap();
    let report = pipeline::run_stats(&chains, &resolutions, &records).unwrap();
    PipelineOutputs {
        chains: chains_text,
        resolutions: pipeline::to_jsonl(&resolutions),
        excerpts: pipeline::to_jsonl(&records),
        report_json: report_json(&report),
        report_text: report_text(&report),
        histogram_csv: histogram_csv(&report),
        export: pipeline::run_export(&chains, &records).unwrap(),
    }
}

use rand::Rng;

const SYLLABLES: &[&str] = &["ka", "lo", "mi", "ner", "sa", "to", "vi", "dan", "el", "or", "qu", "zu"];

fn word(rng: &mut impl Rng) -> String {
    let n = rng.gen_range(1..=3);
    let mut w: String = (0..n).map(|_| SYLLABLES[rng.gen_range(0..SYLLABLES.len())]).collect();
    w[..1].make_ascii_uppercase();
    w
}

fn random_name(rng: &mut impl Rng) -> String {
    let n = rng.gen_range(1..=3);
    (0..n).map(|_| word(rng)).collect::<Vec<_>>().join(" ")
}

/// A valid chain with random names, aliases, links and years.
pub fn random_chain(rng: &mut impl Rng) -> EvolutionChain {
    let len = rng.gen_range(2..=6);
    let mut names: Vec<EntityName> = Vec::with_capacity(len);
    while names.len() < len {
        let canonical = random_name(rng);
        if names.last().is_some_and(|p: &EntityName| p.key() == canonical.to_lowercase()) {
            continue;
        }
        let mut name = EntityName::new(&canonical).unwrap();
        for _ in 0..rng.gen_range(0..=2) {
            name.add_alias(&word(rng));
        }
        if rng.gen_bool(0.2) {
            name = name.with_link(Some(format!("{canonical} {}", word(rng))));
        }
        names.push(name);
    }
    let years = (1..len)
        .map(|_| rng.gen_bool(0.6).then(|| rng.gen_range(100..=2020)))
        .collect();
    EvolutionChain::new(names, years, "random").unwrap()
}

/// Random run shape whose excerpts fit the dated changes available.
pub fn random_synthetic(rng: &mut impl Rng) -> Synthetic {
    let groups: Vec<Group> = (0..rng.gen_range(0..6))
        .map(|_| {
            let changes = rng.gen_range(1..=3);
            Group {
                count: rng.gen_range(0..8),
                changes,
                dated: rng.gen_range(0..=changes),
                resolvable: rng.gen_bool(0.8),
            }
        })
        .collect();
    let resolvable: usize = groups.iter().filter(|g| g.resolvable).map(|g| g.count).sum();
    let capacity: usize = groups.iter().filter(|g| g.resolvable).map(|g| g.count * g.dated).sum();
    let n = rng.gen_range(0..=capacity);
    let distances = (0..n)
        .map(|_| match rng.gen_range(0..4) {
            0 => 0,
            1 => rng.gen_range(0..3),
            2 => rng.gen_range(0..10),
            _ => rng.gen_range(0..200),
        })
        .collect();
    Synthetic {
        groups,
        current: rng.gen_range(0..=resolvable),
        linked: rng.gen_range(0..=resolvable),
        multi: rng.gen_range(0..=resolvable),
        distances,
        in_current: rng.gen_range(0..=n),
    }
}

/// The part of a run belonging to the given entities.
pub fn restrict(run: &Run, keep: &dyn Fn(&str) -> bool) -> Run {
    Run {
        chains: run.chains.iter().filter(|c| keep(&c.entity_id)).cloned().collect(),
        resolutions: run.resolutions.iter().filter(|r| keep(&r.entity_id)).cloned().collect(),
        records: run.records.iter().filter(|r| keep(&r.entity_id)).cloned().collect(),
    }
}

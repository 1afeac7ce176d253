//! Statistics over one pipeline run: the entity/change/excerpt count ladder,
//! the distance histogram and its moments, and the coverage estimate.
//!
//! Every percentage is kept as an exact fraction and rounded half-up to one
//! decimal only when printed.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use num_rational::Ratio;
use serde::Serialize;
use thiserror::Error;

use crate::corpus::EntityResolution;
use crate::model::{
    ChangeCounts, EntityCounts, EvolutionChain, ExcerptCounts, ExcerptRecord, StatsReport,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StatsError {
    #[error("no distances to summarize")]
    EmptyInput,
    #[error("rate `{0}` is undefined (zero base)")]
    UndefinedRate(&'static str),
}

/// Exact count of records per distance.
pub fn distance_histogram(records: &[ExcerptRecord]) -> BTreeMap<usize, u64> {
    histogram_of(records.iter().map(|r| r.distance))
}

fn histogram_of(distances: impl IntoIterator<Item = usize>) -> BTreeMap<usize, u64> {
    let mut hist = BTreeMap::new();
    for d in distances {
        *hist.entry(d).or_insert(0) += 1;
    }
    hist
}

/// Distance at 0-based `rank` in sorted order.
fn nth_in_histogram(hist: &BTreeMap<usize, u64>, rank: u64) -> usize {
    let mut seen = 0;
    for (&d, &c) in hist {
        seen += c;
        if rank < seen {
            return d;
        }
    }
    unreachable!("rank {rank} beyond histogram total {seen}")
}

/// Exact mean and median (midpoint for even counts) of a histogram.
pub fn histogram_moments(
    hist: &BTreeMap<usize, u64>,
) -> Result<(Ratio<u64>, Ratio<u64>), StatsError> {
    let n: u64 = hist.values().sum();
    if n == 0 {
        return Err(StatsError::EmptyInput);
    }
    let sum: u64 = hist.iter().map(|(&d, &c)| d as u64 * c).sum();
    let mean = Ratio::new(sum, n);
    let median = if n % 2 == 1 {
        Ratio::from_integer(nth_in_histogram(hist, n / 2) as u64)
    } else {
        let lo = nth_in_histogram(hist, n / 2 - 1) as u64;
        let hi = nth_in_histogram(hist, n / 2) as u64;
        Ratio::new(lo + hi, 2)
    };
    Ok((mean, median))
}

/// Mean and median distance of the records.
pub fn summary_moments(records: &[ExcerptRecord]) -> Result<(Ratio<u64>, Ratio<u64>), StatsError> {
    histogram_moments(&distance_histogram(records))
}

/// Same as [`summary_moments`] over bare distances.
pub fn distance_moments(distances: &[usize]) -> Result<(Ratio<u64>, Ratio<u64>), StatsError> {
    histogram_moments(&histogram_of(distances.iter().copied()))
}

pub fn excerpt_counts(hist: &BTreeMap<usize, u64>) -> ExcerptCounts {
    let count = |pred: &dyn Fn(usize) -> bool| -> u64 {
        hist.iter().filter(|(&d, _)| pred(d)).map(|(_, &c)| c).sum()
    };
    ExcerptCounts {
        total: hist.values().sum(),
        dist_lt_10: count(&|d| d < 10),
        dist_lt_3: count(&|d| d < 3),
        dist_eq_2: count(&|d| d == 2),
        dist_eq_1: count(&|d| d == 1),
        dist_eq_0: count(&|d| d == 0),
    }
}

impl StatsReport {
    /// Builds a report from counts and a histogram; excerpt counts and
    /// moments are derived from the histogram.
    pub fn from_parts(
        entity_counts: EntityCounts,
        change_counts: ChangeCounts,
        distance_histogram: BTreeMap<usize, u64>,
    ) -> Self {
        let moments = histogram_moments(&distance_histogram).ok();
        StatsReport {
            entity_counts,
            change_counts,
            excerpt_counts: excerpt_counts(&distance_histogram),
            mean_distance: moments.map(|m| m.0),
            median_distance: moments.map(|m| m.1),
            distance_histogram,
        }
    }

    /// Report of the union of two disjoint runs.
    pub fn merge(&self, other: &StatsReport) -> StatsReport {
        let e = (&self.entity_counts, &other.entity_counts);
        let c = (&self.change_counts, &other.change_counts);
        let mut hist = self.distance_histogram.clone();
        for (&d, &n) in &other.distance_histogram {
            *hist.entry(d).or_insert(0) += n;
        }
        StatsReport::from_parts(
            EntityCounts {
                total: e.0.total + e.1.total,
                with_dates: e.0.with_dates + e.1.with_dates,
                resolvable: e.0.resolvable + e.1.resolvable,
                current_name_resolvable: e.0.current_name_resolvable + e.1.current_name_resolvable,
                linked_on_list: e.0.linked_on_list + e.1.linked_on_list,
                multi_article: e.0.multi_article + e.1.multi_article,
                resolvable_and_dated: e.0.resolvable_and_dated + e.1.resolvable_and_dated,
            },
            ChangeCounts {
                total: c.0.total + c.1.total,
                of_entities_with_articles: c.0.of_entities_with_articles
                    + c.1.of_entities_with_articles,
                with_dates: c.0.with_dates + c.1.with_dates,
                with_articles_and_dates: c.0.with_articles_and_dates + c.1.with_articles_and_dates,
                mentioned: c.0.mentioned + c.1.mentioned,
                mentioned_in_current_article: c.0.mentioned_in_current_article
                    + c.1.mentioned_in_current_article,
            },
            hist,
        )
    }
}

/// Aggregates one run. Chains without a resolution record count as
/// unresolvable. Each excerpt record stands for one mentioned change.
pub fn aggregate(
    chains: &[EvolutionChain],
    resolutions: &[EntityResolution],
    records: &[ExcerptRecord],
) -> StatsReport {
    let by_id: HashMap<&str, &EntityResolution> =
        resolutions.iter().map(|r| (r.entity_id.as_str(), r)).collect();
    let mut e = EntityCounts::default();
    let mut c = ChangeCounts::default();
    for chain in chains {
        let res = by_id.get(chain.entity_id.as_str());
        let resolvable = res.is_some_and(|r| r.is_resolvable());
        let dated = chain.has_dated_change();
        let n_changes = chain.changes.len() as u64;
        let n_dated = chain.changes.iter().filter(|ch| ch.is_dated()).count() as u64;

        e.total += 1;
        e.with_dates += u64::from(dated);
        c.total += n_changes;
        c.with_dates += n_dated;
        if resolvable {
            let r = res.expect("resolvable implies a record");
            e.resolvable += 1;
            e.current_name_resolvable += u64::from(r.current_name_resolvable());
            e.linked_on_list += u64::from(r.linked_on_list());
            e.multi_article += u64::from(r.multi_article());
            e.resolvable_and_dated += u64::from(dated);
            c.of_entities_with_articles += n_changes;
            c.with_articles_and_dates += n_dated;
        }
    }
    c.mentioned = records.len() as u64;
    c.mentioned_in_current_article =
        records.iter().filter(|r| r.mentioned_in_current_article).count() as u64;
    StatsReport::from_parts(e, c, distance_histogram(records))
}

/// Fraction of changes recoverable from short excerpts: entities with
/// articles × completely mentioned changes × excerpts with distance < 3.
pub fn coverage_estimate(report: &StatsReport) -> Result<Ratio<u64>, StatsError> {
    let rate = |num: u64, den: u64, name: &'static str| {
        if den == 0 {
            Err(StatsError::UndefinedRate(name))
        } else {
            Ok(Ratio::new(num, den))
        }
    };
    let e = &report.entity_counts;
    let c = &report.change_counts;
    let x = &report.excerpt_counts;
    Ok(rate(e.resolvable, e.total, "entities with articles")?
        * rate(c.mentioned, c.with_articles_and_dates, "mentioned changes")?
        * rate(x.dist_lt_3, x.total, "excerpts with distance < 3")?)
}

/// The same product over already computed rates.
pub fn coverage_from_rates(with_articles: f64, mentioned: f64, short_excerpts: f64) -> f64 {
    with_articles * mentioned * short_excerpts
}

/// `count / base` as a percentage in tenths, rounded half up.
pub fn percent_tenths(count: u64, base: u64) -> Option<u64> {
    if base == 0 {
        return None;
    }
    let (count, base) = (u128::from(count), u128::from(base));
    Some(((count * 2000 + base) / (2 * base)) as u64)
}

/// Percentage rounded to one decimal.
pub fn percent(count: u64, base: u64) -> Option<f64> {
    percent_tenths(count, base).map(|t| t as f64 / 10.0)
}

fn ratio_f64(r: &Ratio<u64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// One printed line of the report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub label: &'static str,
    pub depth: u8,
    pub count: u64,
    /// Percentage of the section total.
    pub percent: Option<f64>,
    /// Percentage of the nested base (the row marked 100% above it).
    pub nested_percent: Option<f64>,
    #[serde(skip)]
    pub base: u64,
    #[serde(skip)]
    pub nested_base: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportSection {
    pub title: &'static str,
    pub rows: Vec<ReportRow>,
}

fn row(label: &'static str, depth: u8, count: u64, base: u64, nested_base: Option<u64>) -> ReportRow {
    ReportRow {
        label,
        depth,
        count,
        percent: percent(count, base),
        nested_percent: nested_base.and_then(|b| percent(count, b)),
        base,
        nested_base,
    }
}

impl StatsReport {
    /// The report rows, labelled and nested like the published tables.
    pub fn sections(&self) -> Vec<ReportSection> {
        let e = &self.entity_counts;
        let c = &self.change_counts;
        let x = &self.excerpt_counts;
        let r = Some(e.resolvable);
        let wad = Some(c.with_articles_and_dates);
        let lt10 = Some(x.dist_lt_10);
        vec![
            ReportSection {
                title: "Entities",
                rows: vec![
                    row("Entities", 0, e.total, e.total, None),
                    row("annotated with change dates", 1, e.with_dates, e.total, None),
                    row("resolvable to articles", 1, e.resolvable, e.total, r),
                    row("most current name resolvable", 2, e.current_name_resolvable, e.total, r),
                    row("linked on a list", 2, e.linked_on_list, e.total, r),
                    row("with multiple articles", 2, e.multi_article, e.total, r),
                    row("annotated with change dates", 2, e.resolvable_and_dated, e.total, r),
                ],
            },
            ReportSection {
                title: "Name changes",
                rows: vec![
                    row("Name changes", 0, c.total, c.total, None),
                    row("of entities with articles", 1, c.of_entities_with_articles, c.total, None),
                    row("annotated with dates", 1, c.with_dates, c.total, None),
                    row(
                        "of entities with articles, annotated with dates",
                        1,
                        c.with_articles_and_dates,
                        c.total,
                        wad,
                    ),
                    row("mentioned in an article", 2, c.mentioned, c.total, wad),
                    row(
                        "mentioned in the most current name's article",
                        2,
                        c.mentioned_in_current_article,
                        c.total,
                        wad,
                    ),
                ],
            },
            ReportSection {
                title: "Extracted excerpts",
                rows: vec![
                    row("Extracted excerpts", 0, x.total, x.total, None),
                    row("sentence distance less than 10", 1, x.dist_lt_10, x.total, lt10),
                    row("sentence distance less than 3", 2, x.dist_lt_3, x.total, lt10),
                    row("sentence distance 2", 2, x.dist_eq_2, x.total, lt10),
                    row("sentence distance 1", 2, x.dist_eq_1, x.total, lt10),
                    row("sentence distance 0", 2, x.dist_eq_0, x.total, lt10),
                ],
            },
        ]
    }

    pub fn find_row(&self, section: &str, label: &str, depth: u8) -> Option<ReportRow> {
        self.sections()
            .into_iter()
            .filter(|s| s.title == section)
            .flat_map(|s| s.rows)
            .find(|r| r.label == label && r.depth == depth)
    }
}

#[derive(Serialize)]
struct ExactValue {
    exact: String,
    value: f64,
}

impl From<&Ratio<u64>> for ExactValue {
    fn from(r: &Ratio<u64>) -> Self {
        ExactValue {
            exact: r.to_string(),
            value: (ratio_f64(r) * 1000.0).round() / 1000.0,
        }
    }
}

#[derive(Serialize)]
struct ReportDocument<'a> {
    sections: Vec<ReportSection>,
    histogram: Vec<(usize, u64)>,
    mean_distance: Option<ExactValue>,
    median_distance: Option<ExactValue>,
    coverage_estimate: Option<ExactValue>,
    #[serde(skip)]
    _report: &'a StatsReport,
}

/// Structured report: table rows, histogram pairs, moments and coverage.
pub fn report_json(report: &StatsReport) -> String {
    let doc = ReportDocument {
        sections: report.sections(),
        histogram: report.distance_histogram.iter().map(|(&d, &c)| (d, c)).collect(),
        mean_distance: report.mean_distance.as_ref().map(ExactValue::from),
        median_distance: report.median_distance.as_ref().map(ExactValue::from),
        coverage_estimate: coverage_estimate(report).ok().as_ref().map(ExactValue::from),
        _report: report,
    };
    let mut out = serde_json::to_string_pretty(&doc).expect("report serializes");
    out.push('\n');
    out
}

fn fmt_percent(p: Option<f64>) -> String {
    p.map(|p| format!("{p:.1}%")).unwrap_or_else(|| "n/a".into())
}

/// Aligned plain-text table for terminals.
pub fn report_text(report: &StatsReport) -> String {
    let mut out = String::new();
    let width = 56;
    let _ = writeln!(out, "{:<width$} {:>8} {:>8} {:>8}", "Subject", "Count", "%", "nested %");
    for section in report.sections() {
        let _ = writeln!(out, "{}", "-".repeat(width + 27));
        for r in &section.rows {
            let label = match r.depth {
                0 => r.label.to_string(),
                d => format!("{}- {}", "  ".repeat(d as usize), r.label),
            };
            let nested = match r.nested_base {
                Some(_) => fmt_percent(r.nested_percent),
                None => String::new(),
            };
            let _ = writeln!(
                out,
                "{label:<width$} {:>8} {:>8} {:>8}",
                r.count,
                fmt_percent(r.percent),
                nested
            );
        }
    }
    let _ = writeln!(out, "{}", "-".repeat(width + 27));
    let fmt_ratio = |r: &Option<Ratio<u64>>| {
        r.as_ref()
            .map(|r| format!("{:.1} ({r})", ratio_f64(r)))
            .unwrap_or_else(|| "n/a".into())
    };
    let _ = writeln!(out, "mean sentence distance:   {}", fmt_ratio(&report.mean_distance));
    let _ = writeln!(out, "median sentence distance: {}", fmt_ratio(&report.median_distance));
    let coverage = coverage_estimate(report)
        .map(|c| format!("{:.1}%", ratio_f64(&c) * 100.0))
        .unwrap_or_else(|_| "n/a".into());
    let _ = writeln!(out, "coverage estimate:        {coverage}");
    out
}

/// `distance,count` lines for plotting the distribution.
pub fn histogram_csv(report: &StatsReport) -> String {
    let mut out = String::from("distance,count\n");
    for (d, c) in &report.distance_histogram {
        let _ = writeln!(out, "{d},{c}");
    }
    out
}

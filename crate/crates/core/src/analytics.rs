//! Article scoring, ranking, filtering and aggregate statistics.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use chrono::{DateTime, TimeDelta, Utc};
use serde::{Deserialize, Serialize};

use crate::model::{AnalyzedArticle, FilterSpec, Fragment, MediaSource, ModelError, Orientation};
use crate::technique::TechniqueLabel;

/// Upper bound on the number of buckets a single series may span.
pub const MAX_BUCKETS: i64 = 100_000;

#[derive(Debug, thiserror::Error)]
pub enum AnalyticsError {
    #[error("bucket width must be at least one second")]
    BadBucket,
    #[error("series would need {0} buckets (limit {MAX_BUCKETS})")]
    TooManyBuckets(i64),
    #[error(transparent)]
    Filter(#[from] ModelError),
    #[error("csv export failed: {0}")]
    Csv(#[from] csv::Error),
}

/// Number of distinct token indices covered by at least one fragment.
pub fn covered_token_count(fragments: &[Fragment]) -> usize {
    let mut spans: Vec<(usize, usize)> = fragments
        .iter()
        .map(|f| (f.token_begin, f.token_end))
        .collect();
    spans.sort_unstable();
    let mut covered = 0;
    let mut current: Option<(usize, usize)> = None;
    for (b, e) in spans {
        match current {
            Some((cb, ce)) if b <= ce + 1 => current = Some((cb, ce.max(e))),
            Some((cb, ce)) => {
                covered += ce - cb + 1;
                current = Some((b, e));
            }
            None => current = Some((b, e)),
        }
    }
    if let Some((cb, ce)) = current {
        covered += ce - cb + 1;
    }
    covered
}

/// Share of the article's tokens covered by the union of its fragments,
/// regardless of technique.
pub fn propaganda_score(article: &AnalyzedArticle) -> Result<f64, ModelError> {
    let total = article.text.token_count();
    if total == 0 {
        return Err(ModelError::EmptyArticle);
    }
    Ok(covered_token_count(&article.fragments) as f64 / total as f64)
}

fn rank_order(a: &AnalyzedArticle, b: &AnalyzedArticle) -> Ordering {
    b.propaganda_score
        .total_cmp(&a.propaganda_score)
        .then_with(|| b.published_at.cmp(&a.published_at))
        .then_with(|| a.article_id.cmp(&b.article_id))
}

/// Highest score first; ties go to the newer article, then the smaller id.
pub fn rank_articles<'a, I>(articles: I) -> Vec<&'a AnalyzedArticle>
where
    I: IntoIterator<Item = &'a AnalyzedArticle>,
{
    let mut ranked: Vec<_> = articles.into_iter().collect();
    ranked.sort_by(|a, b| rank_order(a, b));
    ranked
}

/// Maps source ids to their orientation; unknown sources map to
/// [`Orientation::Unknown`].
#[derive(Debug, Clone, Default)]
pub struct SourceDirectory {
    sources: HashMap<String, MediaSource>,
}

impl SourceDirectory {
    pub fn new<'a>(sources: impl IntoIterator<Item = &'a MediaSource>) -> Self {
        SourceDirectory {
            sources: sources
                .into_iter()
                .map(|s| (s.source_id.clone(), s.clone()))
                .collect(),
        }
    }

    pub fn get(&self, source_id: &str) -> Option<&MediaSource> {
        self.sources.get(source_id)
    }

    pub fn orientation(&self, source_id: &str) -> Orientation {
        self.get(source_id).map_or(Orientation::Unknown, |s| s.orientation)
    }
}

/// A filter with the keyword pre-lowercased.
#[derive(Debug, Clone)]
pub struct CompiledFilter<'s> {
    spec: &'s FilterSpec,
    keyword: Option<String>,
}

impl<'s> CompiledFilter<'s> {
    pub fn new(spec: &'s FilterSpec) -> Result<Self, ModelError> {
        spec.validate()?;
        Ok(CompiledFilter {
            spec,
            keyword: spec
                .keyword
                .as_deref()
                .map(str::trim)
                .filter(|k| !k.is_empty())
                .map(str::to_lowercase),
        })
    }

    pub fn matches(&self, article: &AnalyzedArticle, sources: &SourceDirectory) -> bool {
        let spec = self.spec;
        if spec.time_from.is_some_and(|from| article.published_at < from) {
            return false;
        }
        if spec.time_to.is_some_and(|to| article.published_at > to) {
            return false;
        }
        if spec.source_id.as_ref().is_some_and(|s| *s != article.source_id) {
            return false;
        }
        if spec.topic_id.as_ref().is_some_and(|t| !article.topics.contains(t)) {
            return false;
        }
        if spec
            .orientation
            .is_some_and(|o| sources.orientation(&article.source_id) != o)
        {
            return false;
        }
        if let Some(keyword) = &self.keyword {
            let hit = article.title.to_lowercase().contains(keyword)
                || article.text.raw_text().to_lowercase().contains(keyword);
            if !hit {
                return false;
            }
        }
        true
    }
}

/// Articles satisfying every criterion present in `spec`, in input order.
pub fn filter_articles<'a, I>(
    articles: I,
    sources: &SourceDirectory,
    spec: &FilterSpec,
) -> Result<Vec<&'a AnalyzedArticle>, ModelError>
where
    I: IntoIterator<Item = &'a AnalyzedArticle>,
{
    let filter = CompiledFilter::new(spec)?;
    Ok(articles
        .into_iter()
        .filter(|a| filter.matches(a, sources))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeBucket {
    pub bucket_start: DateTime<Utc>,
    pub article_count: usize,
    pub fragment_count: usize,
    pub avg_techniques_per_article: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArticleScore {
    pub article_id: String,
    pub published_at: DateTime<Utc>,
    pub propaganda_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateStats {
    pub article_count: usize,
    pub fragment_count: usize,
    /// Fragments per technique, all 18 techniques present.
    pub technique_counts: BTreeMap<TechniqueLabel, usize>,
    /// `technique_counts` normalized to sum to 1 (all zero when there are
    /// no fragments).
    pub technique_shares: BTreeMap<TechniqueLabel, f64>,
    pub avg_techniques_per_article: f64,
    pub bucket_seconds: i64,
    pub time_series: Vec<TimeBucket>,
    /// Ordered by publication time, then id.
    pub per_article_scores: Vec<ArticleScore>,
}

fn bucket_index(t: DateTime<Utc>, width: i64) -> i64 {
    t.timestamp().div_euclid(width)
}

fn per_article(count: usize, articles: usize) -> f64 {
    if articles == 0 {
        0.0
    } else {
        count as f64 / articles as f64
    }
}

/// Technique distribution, per-bucket volume and per-article scores for a
/// set of articles. Buckets are aligned to multiples of `bucket` since the
/// Unix epoch (UTC) and run contiguously from the earliest to the latest
/// article, empty buckets included.
pub fn aggregate<'a, I>(articles: I, bucket: TimeDelta) -> Result<AggregateStats, AnalyticsError>
where
    I: IntoIterator<Item = &'a AnalyzedArticle>,
{
    let width = bucket.num_seconds();
    if width < 1 {
        return Err(AnalyticsError::BadBucket);
    }
    let articles: Vec<&AnalyzedArticle> = articles.into_iter().collect();

    let mut counts: BTreeMap<TechniqueLabel, usize> =
        TechniqueLabel::techniques().map(|t| (t, 0)).collect();
    let mut per_bucket: BTreeMap<i64, (usize, usize)> = BTreeMap::new();
    let mut scores = Vec::with_capacity(articles.len());
    let mut total = 0;
    for article in &articles {
        for f in &article.fragments {
            *counts.entry(f.technique).or_default() += 1;
        }
        total += article.fragments.len();
        let slot = per_bucket
            .entry(bucket_index(article.published_at, width))
            .or_default();
        slot.0 += 1;
        slot.1 += article.fragments.len();
        scores.push(ArticleScore {
            article_id: article.article_id.clone(),
            published_at: article.published_at,
            propaganda_score: article.propaganda_score,
        });
    }
    scores.sort_by(|a, b| {
        a.published_at
            .cmp(&b.published_at)
            .then_with(|| a.article_id.cmp(&b.article_id))
    });

    let shares = counts
        .iter()
        .map(|(t, c)| (*t, if total == 0 { 0.0 } else { *c as f64 / total as f64 }))
        .collect();

    let mut time_series = Vec::new();
    if let (Some((&first, _)), Some((&last, _))) =
        (per_bucket.first_key_value(), per_bucket.last_key_value())
    {
        let span = last - first + 1;
        if span > MAX_BUCKETS {
            return Err(AnalyticsError::TooManyBuckets(span));
        }
        for idx in first..=last {
            let (n, frags) = per_bucket.get(&idx).copied().unwrap_or_default();
            time_series.push(TimeBucket {
                bucket_start: DateTime::from_timestamp(idx * width, 0)
                    .expect("bucket start derived from a valid timestamp"),
                article_count: n,
                fragment_count: frags,
                avg_techniques_per_article: per_article(frags, n),
            });
        }
    }

    Ok(AggregateStats {
        article_count: articles.len(),
        fragment_count: total,
        technique_counts: counts,
        technique_shares: shares,
        avg_techniques_per_article: per_article(total, articles.len()),
        bucket_seconds: width,
        time_series,
        per_article_scores: scores,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MediaCount {
    pub source_id: String,
    pub name: String,
    pub orientation: Orientation,
    pub article_count: usize,
}

/// Media represented in `articles`, most articles first (ties by id).
pub fn media_counts<'a, I>(articles: I, sources: &SourceDirectory) -> Vec<MediaCount>
where
    I: IntoIterator<Item = &'a AnalyzedArticle>,
{
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for a in articles {
        *counts.entry(a.source_id.as_str()).or_default() += 1;
    }
    let mut media: Vec<MediaCount> = counts
        .into_iter()
        .map(|(id, n)| {
            let source = sources.get(id);
            MediaCount {
                source_id: id.to_string(),
                name: source.map_or_else(|| id.to_string(), |s| s.name.clone()),
                orientation: source.map_or(Orientation::Unknown, |s| s.orientation),
                article_count: n,
            }
        })
        .collect();
    media.sort_by(|a, b| {
        b.article_count
            .cmp(&a.article_count)
            .then_with(|| a.source_id.cmp(&b.source_id))
    });
    media
}

/// One row per technique: `technique,count,share`.
pub fn write_technique_csv<W: Write>(stats: &AggregateStats, out: W) -> Result<(), AnalyticsError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["technique", "count", "share"])?;
    for (t, c) in &stats.technique_counts {
        let share = stats.technique_shares.get(t).copied().unwrap_or(0.0);
        w.write_record([t.id().to_string(), c.to_string(), format!("{share:.6}")])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// One row per bucket: `bucket_start,article_count,fragment_count,avg_techniques_per_article`.
pub fn write_series_csv<W: Write>(stats: &AggregateStats, out: W) -> Result<(), AnalyticsError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "bucket_start",
        "article_count",
        "fragment_count",
        "avg_techniques_per_article",
    ])?;
    for b in &stats.time_series {
        w.write_record([
            b.bucket_start.to_rfc3339(),
            b.article_count.to_string(),
            b.fragment_count.to_string(),
            format!("{:.6}", b.avg_techniques_per_article),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ArticleParts;
    use crate::text::tokenize;
    use proptest::prelude::*;
    use std::collections::{BTreeSet, HashSet};

    fn article(id: &str, n_tokens: usize, spans: &[(TechniqueLabel, usize, usize)], ts: i64) -> AnalyzedArticle {
        let raw = (0..n_tokens).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        let text = tokenize(&raw);
        let fragments = spans
            .iter()
            .map(|&(t, b, e)| Fragment::over_tokens(&text, t, b, e, 1.0).unwrap())
            .collect();
        AnalyzedArticle::new(ArticleParts {
            article_id: id.into(),
            source_id: "src".into(),
            url: format!("https://example.com/{id}"),
            title: id.into(),
            published_at: DateTime::from_timestamp(ts, 0).unwrap(),
            text,
            fragments,
            sentence_flags: vec![],
            topics: BTreeSet::new(),
            content_hash: id.into(),
        })
        .unwrap()
    }

    fn brute_force_union(spans: &[(usize, usize)]) -> usize {
        let mut set = HashSet::new();
        for &(b, e) in spans {
            for i in b..=e {
                set.insert(i);
            }
        }
        set.len()
    }

    #[test]
    fn score_examples() {
        use TechniqueLabel::*;
        assert_eq!(article("a", 10, &[], 0).propaganda_score, 0.0);
        assert_eq!(article("a", 4, &[(Doubt, 0, 3)], 0).propaganda_score, 1.0);
        let a = article("a", 10, &[(Doubt, 2, 4), (Slogans, 3, 6)], 0);
        assert_eq!(brute_force_union(&[(2, 4), (3, 6)]), 5);
        assert_eq!(a.propaganda_score, 0.5);
    }

    #[test]
    fn adjacent_and_nested_spans() {
        use TechniqueLabel::*;
        let a = article("a", 10, &[(Doubt, 0, 1), (Doubt, 2, 3), (Slogans, 1, 1), (Repetition, 8, 9)], 0);
        assert_eq!(covered_token_count(&a.fragments), 6);
    }

    #[test]
    fn ranking_order() {
        use TechniqueLabel::*;
        let low = article("low", 10, &[(Doubt, 0, 0)], 100);
        let high = article("high", 10, &[(Doubt, 0, 4)], 100);
        let mid = article("mid", 10, &[(Doubt, 0, 2)], 100);
        let ids: Vec<_> = rank_articles([&low, &high, &mid]).iter().map(|a| a.article_id.as_str()).collect();
        assert_eq!(ids, ["high", "mid", "low"]);

        let old = article("old", 10, &[(Doubt, 0, 0)], 100);
        let new = article("new", 10, &[(Doubt, 0, 0)], 200);
        let same_b = article("b", 10, &[(Doubt, 0, 0)], 200);
        let ids: Vec<_> = rank_articles([&old, &same_b, &new]).iter().map(|a| a.article_id.as_str()).collect();
        assert_eq!(ids, ["b", "new", "old"]);

        assert!(rank_articles(std::iter::empty()).is_empty());
    }

    #[test]
    fn aggregate_basics() {
        use TechniqueLabel::*;
        let a = article("a", 10, &[(Doubt, 0, 0), (Doubt, 1, 1), (Doubt, 2, 2)], 0);
        let b = article("b", 10, &[(Doubt, 5, 5)], 0);
        let stats = aggregate([&a, &b], TimeDelta::days(1)).unwrap();
        assert_eq!(stats.avg_techniques_per_article, 2.0);
        assert_eq!(stats.technique_counts[&Doubt], 4);
        assert_eq!(stats.technique_shares[&Doubt], 1.0);
        assert_eq!(stats.technique_counts.len(), 18);
        assert!(!stats.technique_counts.contains_key(&NoTechnique));
    }

    #[test]
    fn aggregate_empty_and_bad_bucket() {
        let stats = aggregate(std::iter::empty(), TimeDelta::days(1)).unwrap();
        assert_eq!(stats.article_count, 0);
        assert!(stats.time_series.is_empty());
        assert!(stats.technique_shares.values().all(|s| *s == 0.0));
        assert!(matches!(
            aggregate(std::iter::empty(), TimeDelta::zero()),
            Err(AnalyticsError::BadBucket)
        ));
    }

    #[test]
    fn daily_series_matches_hand_count() {
        use TechniqueLabel::*;
        const DAY: i64 = 86_400;
        let base = 19_700 * DAY; // a midnight, UTC
        // day 0: two articles with 2 + 1 fragments; day 1: none; day 2: one article, 3 fragments
        let arts = [
            article("a", 10, &[(Doubt, 0, 0), (Slogans, 2, 3)], base + 10),
            article("b", 10, &[(FlagWaving, 1, 1)], base + DAY - 1),
            article("c", 10, &[(Doubt, 0, 0), (Doubt, 2, 2), (Bandwagon, 4, 5)], base + 2 * DAY + 3600),
        ];
        let stats = aggregate(arts.iter(), TimeDelta::days(1)).unwrap();
        let table: Vec<(i64, usize, usize, f64)> = stats
            .time_series
            .iter()
            .map(|b| (b.bucket_start.timestamp(), b.article_count, b.fragment_count, b.avg_techniques_per_article))
            .collect();
        assert_eq!(
            table,
            vec![
                (base, 2, 3, 1.5),
                (base + DAY, 0, 0, 0.0),
                (base + 2 * DAY, 1, 3, 3.0),
            ]
        );
        let ids: Vec<_> = stats.per_article_scores.iter().map(|s| s.article_id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
    }

    #[test]
    fn pre_epoch_buckets_align_down() {
        let a = article("a", 3, &[], -1);
        let stats = aggregate([&a], TimeDelta::days(1)).unwrap();
        assert_eq!(stats.time_series[0].bucket_start.timestamp(), -86_400);
    }

    #[test]
    fn csv_export() {
        use TechniqueLabel::*;
        let a = article("a", 10, &[(Doubt, 0, 0)], 0);
        let stats = aggregate([&a], TimeDelta::days(1)).unwrap();
        let mut buf = Vec::new();
        write_technique_csv(&stats, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 19);
        assert!(text.contains("doubt,1,1.000000"));
        let mut buf = Vec::new();
        write_series_csv(&stats, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().nth(1).unwrap(), "1970-01-01T00:00:00+00:00,1,1,1.000000");
    }

    #[test]
    fn media_sorted_by_count() {
        let mut arts = vec![];
        for (i, src) in ["x", "y", "y", "z", "y", "z"].iter().enumerate() {
            let mut a = article(&format!("a{i}"), 3, &[], 0);
            a.source_id = src.to_string();
            arts.push(a);
        }
        let dir = SourceDirectory::new(&[MediaSource {
            source_id: "y".into(),
            name: "Why News".into(),
            feed_urls: vec![],
            orientation: Orientation::Left,
        }]);
        let media = media_counts(&arts, &dir);
        let rows: Vec<_> = media.iter().map(|m| (m.source_id.as_str(), m.article_count)).collect();
        assert_eq!(rows, [("y", 3), ("z", 2), ("x", 1)]);
        assert_eq!(media[0].name, "Why News");
        assert_eq!(media[1].orientation, Orientation::Unknown);
    }

    fn arb_article() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
        (1usize..=60).prop_flat_map(|n| {
            let span = (0..n, 0..n).prop_map(|(a, b)| (a.min(b), a.max(b)));
            (Just(n), prop::collection::vec(span, 0..8))
        })
    }

    proptest! {
        #[test]
        fn score_matches_set_union((n, spans) in arb_article()) {
            let labelled: Vec<_> = spans.iter().map(|&(b, e)| (TechniqueLabel::Doubt, b, e)).collect();
            let a = article("p", n, &labelled, 0);
            prop_assert_eq!(covered_token_count(&a.fragments), brute_force_union(&spans));
            prop_assert!((0.0..=1.0).contains(&a.propaganda_score));
        }

        #[test]
        fn adding_a_fragment_never_lowers_score((n, spans) in arb_article(), extra in any::<(usize, usize)>()) {
            let labelled: Vec<_> = spans.iter().map(|&(b, e)| (TechniqueLabel::Doubt, b, e)).collect();
            let before = article("p", n, &labelled, 0);
            let (b, e) = (extra.0 % n, extra.1 % n);
            let mut more = labelled.clone();
            more.push((TechniqueLabel::Slogans, b.min(e), b.max(e)));
            let after = article("p", n, &more, 0);
            prop_assert!(after.propaganda_score >= before.propaganda_score);
        }

        #[test]
        fn aggregation_is_additive(split in 0usize..6, stamps in prop::collection::vec(0i64..1_000_000, 6)) {
            use TechniqueLabel::*;
            let arts: Vec<_> = stamps
                .iter()
                .enumerate()
                .map(|(i, ts)| {
                    let spans: Vec<_> = (0..i % 3).map(|k| ([Doubt, Slogans, Bandwagon][k], k, k)).collect();
                    article(&format!("a{i}"), 5, &spans, *ts)
                })
                .collect();
            let whole = aggregate(&arts, TimeDelta::hours(6)).unwrap();
            let left = aggregate(&arts[..split], TimeDelta::hours(6)).unwrap();
            let right = aggregate(&arts[split..], TimeDelta::hours(6)).unwrap();
            prop_assert_eq!(left.article_count + right.article_count, whole.article_count);
            for t in TechniqueLabel::techniques() {
                prop_assert_eq!(left.technique_counts[&t] + right.technique_counts[&t], whole.technique_counts[&t]);
            }
            let series_total: usize = whole.time_series.iter().map(|b| b.article_count).sum();
            prop_assert_eq!(series_total, whole.article_count);
        }
    }
}

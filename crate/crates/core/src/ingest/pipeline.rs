use std::time::Duration;

use super::dedup::{content_hash, DedupIndex, Duplicate};
use super::fetch::{fetch_all, RawDocument};
use super::topics::{assign_topics, MatchMode};
use super::transport::Transport;
use crate::detector::Detector;
use crate::model::{AnalyzedArticle, ArticleParts, MediaSource, Topic};
use crate::store::ArticleStore;
use crate::text::tokenize;

/// Length of the content-hash prefix used as article id.
pub const ARTICLE_ID_LEN: usize = 16;

#[derive(Debug, Clone)]
pub struct IngestConfig {
    pub workers: usize,
    /// Pause between consecutive requests of one source.
    pub politeness_delay: Duration,
    pub topic_mode: MatchMode,
    /// Fragments below this confidence are not stored.
    pub threshold: f64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            workers: 4,
            politeness_delay: Duration::from_millis(500),
            topic_mode: MatchMode::WordBoundary,
            threshold: 0.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub persisted: Vec<String>,
    pub url_duplicates: usize,
    pub content_duplicates: usize,
    /// Non-2xx pages, empty or undecodable bodies.
    pub skipped: usize,
    pub errors: Vec<String>,
}

impl IngestReport {
    pub fn duplicates(&self) -> usize {
        self.url_duplicates + self.content_duplicates
    }
}

pub struct Ingestor<'a> {
    pub store: &'a ArticleStore,
    pub detector: &'a dyn Detector,
    pub topics: &'a [Topic],
    pub config: IngestConfig,
}

impl Ingestor<'_> {
    /// Dedup keys of everything already in the store.
    pub fn dedup_index(&self) -> DedupIndex {
        let articles = self.store.articles();
        DedupIndex::from_entries(
            articles
                .iter()
                .map(|a| (a.url.as_str(), a.content_hash.as_str())),
        )
    }

    /// Fetches every source, then runs the documents through [`Self::ingest`].
    pub fn run(&self, sources: &[MediaSource], transport: &dyn Transport) -> IngestReport {
        let fetched = fetch_all(sources, transport, self.config.workers, self.config.politeness_delay);
        let mut docs = Vec::new();
        let mut skipped = 0;
        let mut errors = Vec::new();
        for f in fetched {
            for e in &f.errors {
                log::warn!("source {}: {e}", f.source_id);
            }
            errors.extend(f.errors.into_iter().map(|e| format!("{}: {e}", f.source_id)));
            skipped += f.skipped;
            docs.extend(f.documents);
        }
        let mut report = self.ingest(docs);
        report.skipped += skipped;
        errors.append(&mut report.errors);
        report.errors = errors;
        report
    }

    /// Extract, dedup, tokenize, detect, score and persist, in document
    /// order. A failing document is logged and skipped.
    pub fn ingest(&self, docs: Vec<RawDocument>) -> IngestReport {
        let mut index = self.dedup_index();
        let mut report = IngestReport::default();
        for doc in docs {
            let extracted = match doc.extract() {
                Ok(e) => e,
                Err(e) => {
                    log::info!("{}: skipped: {e}", doc.url);
                    report.skipped += 1;
                    continue;
                }
            };
            let hash = content_hash(&extracted.text);
            match index.check_and_insert(&doc.url, &hash) {
                Some(Duplicate::Url) => {
                    report.url_duplicates += 1;
                    continue;
                }
                Some(Duplicate::Content) => {
                    report.content_duplicates += 1;
                    continue;
                }
                None => {}
            }
            let text = tokenize(&extracted.text);
            if text.is_empty() {
                report.skipped += 1;
                continue;
            }
            let detection = self.detector.analyze(&text).with_threshold(self.config.threshold);
            let topics = assign_topics(&extracted.title, &extracted.text, self.topics, self.config.topic_mode);
            let built = AnalyzedArticle::new(ArticleParts {
                article_id: hash[..ARTICLE_ID_LEN].to_string(),
                source_id: doc.source_id.clone(),
                url: doc.url.clone(),
                title: extracted.title,
                published_at: doc.published_at.unwrap_or(doc.fetched_at),
                text,
                fragments: detection.fragments,
                sentence_flags: detection.sentence_flags,
                topics,
                content_hash: hash,
            });
            let result = built
                .map_err(|e| e.to_string())
                .and_then(|a| self.store.append(a).map_err(|e| e.to_string()));
            match result {
                Ok(a) => report.persisted.push(a.article_id.clone()),
                Err(e) => {
                    log::warn!("{}: {e}", doc.url);
                    report.errors.push(format!("{}: {e}", doc.url));
                }
            }
        }
        report
    }
}

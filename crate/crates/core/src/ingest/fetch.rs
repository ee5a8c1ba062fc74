use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use chrono::{DateTime, Utc};

use super::extract::{extract_text, ExtractError, Extracted};
use super::transport::{Response, Transport, TransportError};
use crate::model::MediaSource;

#[derive(Debug, Clone, PartialEq)]
pub struct RawDocument {
    pub source_id: String,
    pub url: String,
    pub fetched_at: DateTime<Utc>,
    /// Publication time announced by the feed, if any.
    pub published_at: Option<DateTime<Utc>>,
    pub http_status: u16,
    pub content_type: Option<String>,
    pub raw_body: Vec<u8>,
}

impl RawDocument {
    pub fn extract(&self) -> Result<Extracted, ExtractError> {
        extract_text(&self.raw_body, self.content_type.as_deref())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FetchError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("{url}: HTTP status {status}")]
    Status { url: String, status: u16 },
    #[error("{url}: not a feed: {reason}")]
    Feed { url: String, reason: String },
    #[error(transparent)]
    Extract(#[from] ExtractError),
}

/// One lock per host so that at most one request per host is in flight.
#[derive(Debug, Default)]
pub struct HostLocks {
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl HostLocks {
    pub fn get(&self, transport: &dyn Transport, url: &str) -> Result<Response, TransportError> {
        let host = url::Url::parse(url)
            .ok()
            .and_then(|u| u.host_str().map(str::to_lowercase))
            .unwrap_or_default();
        let lock = Arc::clone(self.locks.lock().expect("host map poisoned").entry(host).or_default());
        let _held = lock.lock().expect("host lock poisoned");
        transport.get(url)
    }
}

#[derive(Debug, Default)]
pub struct SourceFetch {
    pub source_id: String,
    pub documents: Vec<RawDocument>,
    /// Entries whose page answered with a non-2xx status.
    pub skipped: usize,
    pub errors: Vec<String>,
}

fn ok(status: u16) -> bool {
    (200..300).contains(&status)
}

/// Fetches every feed of `source` and then every linked entry page.
/// Failures are recorded per feed or per entry and never abort the source.
pub fn fetch_source(
    source: &MediaSource,
    transport: &dyn Transport,
    hosts: &HostLocks,
    delay: Duration,
) -> SourceFetch {
    let mut out = SourceFetch {
        source_id: source.source_id.clone(),
        ..SourceFetch::default()
    };
    let mut first = true;
    let mut polite_get = |url: &str| {
        if !first && !delay.is_zero() {
            std::thread::sleep(delay);
        }
        first = false;
        hosts.get(transport, url)
    };
    for feed_url in &source.feed_urls {
        let entries = match polite_get(feed_url) {
            Ok(r) if ok(r.status) => match feed_rs::parser::parse(&r.body[..]) {
                Ok(feed) => feed.entries,
                Err(e) => {
                    out.errors.push(FetchError::Feed { url: feed_url.clone(), reason: e.to_string() }.to_string());
                    continue;
                }
            },
            Ok(r) => {
                out.errors.push(FetchError::Status { url: feed_url.clone(), status: r.status }.to_string());
                continue;
            }
            Err(e) => {
                out.errors.push(e.to_string());
                continue;
            }
        };
        for entry in entries {
            let Some(link) = entry.links.first().map(|l| l.href.trim().to_string()) else {
                log::debug!("{feed_url}: entry {} has no link", entry.id);
                continue;
            };
            match polite_get(&link) {
                Ok(r) if ok(r.status) => out.documents.push(RawDocument {
                    source_id: source.source_id.clone(),
                    url: link,
                    fetched_at: Utc::now(),
                    published_at: entry.published.or(entry.updated),
                    http_status: r.status,
                    content_type: r.content_type,
                    raw_body: r.body,
                }),
                Ok(r) => {
                    log::info!("{link}: skipped, HTTP {}", r.status);
                    out.skipped += 1;
                }
                Err(e) => out.errors.push(e.to_string()),
            }
        }
    }
    out
}

/// Fetches all sources on a pool of `workers` threads. Results come back
/// in source order.
pub fn fetch_all(
    sources: &[MediaSource],
    transport: &dyn Transport,
    workers: usize,
    delay: Duration,
) -> Vec<SourceFetch> {
    let hosts = HostLocks::default();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<SourceFetch>>> = Mutex::new((0..sources.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, sources.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(source) = sources.get(i) else { break };
                let fetched = fetch_source(source, transport, &hosts, delay);
                results.lock().expect("results poisoned")[i] = Some(fetched);
            });
        }
    });
    results
        .into_inner()
        .expect("results poisoned")
        .into_iter()
        .map(|r| r.expect("every source fetched"))
        .collect()
}

/// Fetches and extracts a single page.
pub fn fetch_page(transport: &dyn Transport, url: &str) -> Result<Extracted, FetchError> {
    let r = transport.get(url)?;
    if !ok(r.status) {
        return Err(FetchError::Status {
            url: url.to_string(),
            status: r.status,
        });
    }
    Ok(extract_text(&r.body, r.content_type.as_deref())?)
}

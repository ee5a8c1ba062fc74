//! News ingestion: feed crawling through a pluggable transport, text
//! extraction, duplicate removal, topic assignment and the pipeline that
//! feeds detected articles into the store.

pub mod dedup;
pub mod extract;
pub mod fetch;
pub mod pipeline;
pub mod topics;
pub mod transport;

pub use dedup::{content_hash, normalize_url, DedupIndex, Duplicate};
pub use extract::{extract_text, ExtractError, Extracted};
pub use fetch::{fetch_all, fetch_page, fetch_source, FetchError, HostLocks, RawDocument, SourceFetch};
pub use pipeline::{IngestConfig, IngestReport, Ingestor};
pub use topics::{assign_topics, MatchMode};
pub use transport::{FixtureTransport, HttpTransport, Response, Transport, TransportError};

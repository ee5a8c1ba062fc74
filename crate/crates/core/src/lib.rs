//! Propaganda technique detection over news articles: tokenization, span
//! detectors, ingestion of news feeds, a durable article store and
//! aggregate analytics.

pub mod analytics;
pub mod detector;
pub mod ingest;
pub mod model;
pub mod store;
pub mod technique;
pub mod text;

pub use detector::{Detection, Detector, DetectorInfo};
pub use model::{AnalyzedArticle, FilterSpec, Fragment, MediaSource, Orientation, SentenceFlag, Topic};
pub use technique::{TechniqueLabel, NUM_CLASSES};
pub use text::{tokenize, TokenizedText};

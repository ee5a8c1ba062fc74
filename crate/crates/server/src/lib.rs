//! HTTP API over the article store and detectors, plus the shared setup
//! used by the `propscope` command-line tool.

pub mod api;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use propscope::analytics::SourceDirectory;
use propscope::detector::{Lexicon, LexiconDetector, LexiconError, MgnDetector, MgnError, MgnParameters};
use propscope::ingest::Transport;
use propscope::store::ArticleStore;
use propscope::{Detector, MediaSource, Topic};

pub use api::router;

/// Longest text accepted by the analysis endpoint, in characters.
pub const MAX_TEXT_CHARS: usize = 4096;

#[derive(Debug, thiserror::Error)]
pub enum SetupError {
    #[error("unknown detector `{0}` (expected `lexicon` or `mgn`)")]
    UnknownDetector(String),
    #[error("the mgn detector needs a model file")]
    MissingModel,
    #[error("loading model: {0}")]
    Model(#[from] MgnError),
    #[error("loading lexicon: {0}")]
    Lexicon(#[from] LexiconError),
}

/// Named detectors; one of them answers requests that do not pick one.
#[derive(Clone)]
pub struct Detectors {
    default: String,
    by_name: BTreeMap<String, Arc<dyn Detector>>,
}

impl Detectors {
    /// The lexicon detector is always available; `mgn` is added when a
    /// model file is given.
    pub fn load(default: &str, model: Option<&Path>, lexicon: Option<&Path>) -> Result<Self, SetupError> {
        let lexicon = match lexicon {
            Some(p) => Lexicon::load(p)?,
            None => Lexicon::builtin(),
        };
        let mut by_name: BTreeMap<String, Arc<dyn Detector>> = BTreeMap::new();
        by_name.insert("lexicon".into(), Arc::new(LexiconDetector::new(lexicon)));
        if let Some(path) = model {
            let params = MgnParameters::load(path)?;
            by_name.insert("mgn".into(), Arc::new(MgnDetector::new(params)?));
        }
        match default {
            "lexicon" => {}
            "mgn" if by_name.contains_key("mgn") => {}
            "mgn" => return Err(SetupError::MissingModel),
            other => return Err(SetupError::UnknownDetector(other.to_string())),
        }
        Ok(Detectors {
            default: default.to_string(),
            by_name,
        })
    }

    pub fn single(name: &str, detector: Arc<dyn Detector>) -> Self {
        Detectors {
            default: name.to_string(),
            by_name: BTreeMap::from([(name.to_string(), detector)]),
        }
    }

    pub fn get(&self, name: Option<&str>) -> Option<&Arc<dyn Detector>> {
        self.by_name.get(name.unwrap_or(&self.default))
    }

    pub fn default_name(&self) -> &str {
        &self.default
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.by_name.keys().map(String::as_str)
    }
}

pub struct AppState {
    pub store: Arc<ArticleStore>,
    pub sources: Vec<MediaSource>,
    pub directory: SourceDirectory,
    pub topics: Vec<Topic>,
    pub detectors: Detectors,
    /// Used by the analysis endpoint to fetch URLs.
    pub transport: Arc<dyn Transport>,
}

impl AppState {
    pub fn new(
        store: Arc<ArticleStore>,
        sources: Vec<MediaSource>,
        topics: Vec<Topic>,
        detectors: Detectors,
        transport: Arc<dyn Transport>,
    ) -> Self {
        let directory = SourceDirectory::new(&sources);
        AppState {
            store,
            sources,
            directory,
            topics,
            detectors,
            transport,
        }
    }

    pub fn topic(&self, topic_id: &str) -> Option<&Topic> {
        self.topics.iter().find(|t| t.topic_id == topic_id)
    }
}

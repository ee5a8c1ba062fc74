//! Durable article store and registry files.
//!
//! Articles live in an append-only log, one record per line:
//! `<crc32 as 8 hex digits> <json>\n`. A record counts as committed once its
//! trailing newline is on disk. On open, a final line without a newline is
//! the remains of an interrupted append and is truncated away; a complete
//! line whose checksum or content does not verify means the log is corrupt
//! and the store refuses to open.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use crate::model::{AnalyzedArticle, MediaSource, Topic};

pub const ARTICLE_LOG: &str = "articles.log";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("store corrupt at {path} line {line}: {reason}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("article {0} already stored")]
    DuplicateId(String),
    #[error("invalid article: {0}")]
    Invalid(#[from] crate::model::ModelError),
    #[error("registry {path}: {reason}")]
    Registry { path: PathBuf, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Default)]
struct Snapshot {
    articles: Vec<Arc<AnalyzedArticle>>,
    by_id: HashMap<String, usize>,
}

/// Single-writer, many-reader article store.
pub struct ArticleStore {
    dir: PathBuf,
    snapshot: RwLock<Snapshot>,
    writer: Mutex<File>,
}

fn encode_record(article: &AnalyzedArticle) -> Result<Vec<u8>, StoreError> {
    let json = serde_json::to_vec(article).map_err(io::Error::from)?;
    let mut line = format!("{:08x} ", crc32fast::hash(&json)).into_bytes();
    line.extend_from_slice(&json);
    line.push(b'\n');
    Ok(line)
}

fn decode_record(line: &[u8]) -> Result<AnalyzedArticle, String> {
    if line.len() < 9 || line[8] != b' ' {
        return Err("missing checksum prefix".into());
    }
    let crc = std::str::from_utf8(&line[..8])
        .ok()
        .and_then(|h| u32::from_str_radix(h, 16).ok())
        .ok_or("malformed checksum")?;
    let json = &line[9..];
    if crc32fast::hash(json) != crc {
        return Err("checksum mismatch".into());
    }
    let article: AnalyzedArticle = serde_json::from_slice(json).map_err(|e| e.to_string())?;
    article.validate().map_err(|e| e.to_string())?;
    Ok(article)
}

impl ArticleStore {
    /// Opens (creating if needed) the store in `dir`.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let path = dir.join(ARTICLE_LOG);
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;

        let mut snapshot = Snapshot::default();
        let mut committed = 0;
        let mut line_no = 0;
        while let Some(nl) = bytes[committed..].iter().position(|b| *b == b'\n') {
            line_no += 1;
            let line = &bytes[committed..committed + nl];
            let corrupt = |reason: String| StoreError::Corrupt {
                path: path.clone(),
                line: line_no,
                reason,
            };
            let article = decode_record(line).map_err(corrupt)?;
            if snapshot.by_id.contains_key(&article.article_id) {
                return Err(corrupt(format!("duplicate article id {}", article.article_id)));
            }
            snapshot
                .by_id
                .insert(article.article_id.clone(), snapshot.articles.len());
            snapshot.articles.push(Arc::new(article));
            committed += nl + 1;
        }
        if committed < bytes.len() {
            log::warn!(
                "{}: dropping {} bytes of an interrupted append",
                path.display(),
                bytes.len() - committed
            );
            file.set_len(committed as u64)?;
            file.sync_all()?;
        }
        Ok(ArticleStore {
            dir,
            snapshot: RwLock::new(snapshot),
            writer: Mutex::new(file),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Appends and fsyncs one article; readers see it only afterwards.
    pub fn append(&self, article: AnalyzedArticle) -> Result<Arc<AnalyzedArticle>, StoreError> {
        article.validate()?;
        let record = encode_record(&article)?;
        let mut file = self.writer.lock().expect("store writer poisoned");
        if self.get(&article.article_id).is_some() {
            return Err(StoreError::DuplicateId(article.article_id));
        }
        file.write_all(&record)?;
        file.sync_data()?;
        let article = Arc::new(article);
        let mut snap = self.snapshot.write().expect("store snapshot poisoned");
        let at = snap.articles.len();
        snap.by_id.insert(article.article_id.clone(), at);
        snap.articles.push(Arc::clone(&article));
        Ok(article)
    }

    /// Committed articles in append order.
    pub fn articles(&self) -> Vec<Arc<AnalyzedArticle>> {
        self.snapshot.read().expect("store snapshot poisoned").articles.clone()
    }

    pub fn get(&self, article_id: &str) -> Option<Arc<AnalyzedArticle>> {
        let snap = self.snapshot.read().expect("store snapshot poisoned");
        snap.by_id.get(article_id).map(|&i| Arc::clone(&snap.articles[i]))
    }

    pub fn len(&self) -> usize {
        self.snapshot.read().expect("store snapshot poisoned").articles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct SourceFile {
    #[serde(default, rename = "source")]
    sources: Vec<MediaSource>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct TopicFile {
    #[serde(default, rename = "topic")]
    topics: Vec<Topic>,
}

fn registry_error(path: &Path, reason: impl ToString) -> StoreError {
    StoreError::Registry {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

fn read_registry<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, StoreError> {
    let text = fs::read_to_string(path).map_err(|e| registry_error(path, e))?;
    toml::from_str(&text).map_err(|e| registry_error(path, e))
}

fn write_atomic(path: &Path, contents: &str) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(contents.as_bytes())?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads a TOML file of `[[source]]` tables. Source ids must be unique.
pub fn load_sources(path: &Path) -> Result<Vec<MediaSource>, StoreError> {
    let file: SourceFile = read_registry(path)?;
    let mut seen = std::collections::HashSet::new();
    for s in &file.sources {
        if !seen.insert(&s.source_id) {
            return Err(registry_error(path, format!("duplicate source id {}", s.source_id)));
        }
    }
    Ok(file.sources)
}

/// Reads a TOML file of `[[topic]]` tables. Topic ids must be unique and
/// every topic needs a non-blank keyword.
pub fn load_topics(path: &Path) -> Result<Vec<Topic>, StoreError> {
    let file: TopicFile = read_registry(path)?;
    let mut seen = std::collections::HashSet::new();
    for t in &file.topics {
        if !seen.insert(&t.topic_id) {
            return Err(registry_error(path, format!("duplicate topic id {}", t.topic_id)));
        }
        if t.keywords.iter().all(|k| k.trim().is_empty()) {
            return Err(registry_error(path, format!("topic {} has no keywords", t.topic_id)));
        }
    }
    Ok(file.topics)
}

pub fn save_sources(path: &Path, sources: &[MediaSource]) -> Result<(), StoreError> {
    let file = SourceFile {
        sources: sources.to_vec(),
    };
    write_atomic(path, &toml::to_string(&file).map_err(|e| registry_error(path, e))?)
}

pub fn save_topics(path: &Path, topics: &[Topic]) -> Result<(), StoreError> {
    let file = TopicFile {
        topics: topics.to_vec(),
    };
    write_atomic(path, &toml::to_string(&file).map_err(|e| registry_error(path, e))?)
}

use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Response {
    pub status: u16,
    pub content_type: Option<String>,
    pub body: Vec<u8>,
}

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error("{url}: unreachable: {reason}")]
    Unreachable { url: String, reason: String },
    #[error("{url}: body exceeds {limit} bytes")]
    TooLarge { url: String, limit: u64 },
}

/// A blocking GET. Non-2xx statuses are returned as responses, not errors.
pub trait Transport: Send + Sync {
    fn get(&self, url: &str) -> Result<Response, TransportError>;
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Recorded responses in a directory. The body for `url` is in
/// `<sha256(url)>.body`; an optional `<sha256(url)>.meta` TOML file sets
/// `status` (default 200) and `content_type`. A missing body file behaves
/// like an unreachable host.
#[derive(Debug, Clone)]
pub struct FixtureTransport {
    dir: PathBuf,
}

#[derive(Debug, Deserialize)]
struct FixtureMeta {
    #[serde(default = "ok_status")]
    status: u16,
    content_type: Option<String>,
}

fn ok_status() -> u16 {
    200
}

impl FixtureTransport {
    pub fn new(dir: impl AsRef<Path>) -> Self {
        FixtureTransport {
            dir: dir.as_ref().to_path_buf(),
        }
    }

    pub fn body_path(&self, url: &str) -> PathBuf {
        self.dir.join(format!("{}.body", sha256_hex(url.as_bytes())))
    }

    pub fn meta_path(&self, url: &str) -> PathBuf {
        self.dir.join(format!("{}.meta", sha256_hex(url.as_bytes())))
    }

    /// Records a response; used to build fixture directories.
    pub fn record(&self, url: &str, status: u16, content_type: Option<&str>, body: &[u8]) -> std::io::Result<()> {
        std::fs::create_dir_all(&self.dir)?;
        std::fs::write(self.body_path(url), body)?;
        let mut meta = format!("# {url}\nstatus = {status}\n");
        if let Some(ct) = content_type {
            meta.push_str(&format!("content_type = {:?}\n", ct));
        }
        std::fs::write(self.meta_path(url), meta)
    }
}

impl Transport for FixtureTransport {
    fn get(&self, url: &str) -> Result<Response, TransportError> {
        let unreachable = |reason: String| TransportError::Unreachable {
            url: url.to_string(),
            reason,
        };
        let body = std::fs::read(self.body_path(url)).map_err(|e| unreachable(e.to_string()))?;
        let meta = match std::fs::read_to_string(self.meta_path(url)) {
            Ok(text) => toml::from_str(&text).map_err(|e| unreachable(format!("bad fixture meta: {e}")))?,
            Err(_) => FixtureMeta {
                status: 200,
                content_type: None,
            },
        };
        Ok(Response {
            status: meta.status,
            content_type: meta.content_type,
            body,
        })
    }
}

/// Blocking HTTP(S) client.
pub struct HttpTransport {
    agent: ureq::Agent,
    max_body: u64,
}

impl HttpTransport {
    pub fn new(timeout: Duration, max_body: u64) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(timeout)
            .user_agent(concat!("propscope/", env!("CARGO_PKG_VERSION")))
            .build();
        HttpTransport { agent, max_body }
    }
}

impl Default for HttpTransport {
    fn default() -> Self {
        Self::new(Duration::from_secs(20), 8 << 20)
    }
}

impl Transport for HttpTransport {
    fn get(&self, url: &str) -> Result<Response, TransportError> {
        let response = match self.agent.get(url).call() {
            Ok(r) => r,
            Err(ureq::Error::Status(_, r)) => r,
            Err(e) => {
                return Err(TransportError::Unreachable {
                    url: url.to_string(),
                    reason: e.to_string(),
                })
            }
        };
        let status = response.status();
        let content_type = response.header("content-type").map(str::to_string);
        let mut body = Vec::new();
        response
            .into_reader()
            .take(self.max_body + 1)
            .read_to_end(&mut body)
            .map_err(|e| TransportError::Unreachable {
                url: url.to_string(),
                reason: e.to_string(),
            })?;
        if body.len() as u64 > self.max_body {
            return Err(TransportError::TooLarge {
                url: url.to_string(),
                limit: self.max_body,
            });
        }
        Ok(Response {
            status,
            content_type,
            body,
        })
    }
}

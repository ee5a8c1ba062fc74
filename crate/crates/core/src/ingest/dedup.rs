use std::collections::HashSet;

use url::Url;

use super::transport::sha256_hex;

/// Canonical form used for URL matching: lowercase host without a leading
/// `www.`, port if non-default, and path without trailing slashes. Scheme,
/// credentials, query and fragment are dropped.
pub fn normalize_url(raw: &str) -> String {
    let raw = raw.trim();
    let parsed = Url::parse(raw).or_else(|_| Url::parse(&format!("http://{raw}")));
    match parsed {
        Ok(u) if u.host_str().is_some() => {
            let host = u.host_str().unwrap_or_default().to_lowercase();
            let host = host.strip_prefix("www.").unwrap_or(&host);
            let port = u.port().map(|p| format!(":{p}")).unwrap_or_default();
            format!("{host}{port}{}", u.path().trim_end_matches('/'))
        }
        _ => raw
            .split(['?', '#'])
            .next()
            .unwrap_or_default()
            .trim_end_matches('/')
            .to_lowercase(),
    }
}

/// Lowercased text with every whitespace run replaced by one space.
pub fn normalize_text(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// SHA-256 hex digest of [`normalize_text`].
pub fn content_hash(text: &str) -> String {
    sha256_hex(normalize_text(text).as_bytes())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Duplicate {
    Url,
    Content,
}

/// Exact-membership sets of seen normalized URLs and content hashes.
#[derive(Debug, Clone, Default)]
pub struct DedupIndex {
    urls: HashSet<String>,
    hashes: HashSet<String>,
}

impl DedupIndex {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds the index from already persisted `(url, content_hash)` pairs.
    pub fn from_entries<'a>(entries: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        let mut index = Self::new();
        for (url, hash) in entries {
            index.urls.insert(normalize_url(url));
            index.hashes.insert(hash.to_string());
        }
        index
    }

    /// Which key, if any, is already present. The URL is checked first.
    pub fn lookup(&self, url: &str, hash: &str) -> Option<Duplicate> {
        if self.urls.contains(&normalize_url(url)) {
            Some(Duplicate::Url)
        } else if self.hashes.contains(hash) {
            Some(Duplicate::Content)
        } else {
            None
        }
    }

    /// Returns true when the document was already seen; otherwise records
    /// both its keys and returns false.
    pub fn is_duplicate(&mut self, url: &str, text: &str) -> bool {
        self.check_and_insert(url, &content_hash(text)).is_some()
    }

    pub fn check_and_insert(&mut self, url: &str, hash: &str) -> Option<Duplicate> {
        let dup = self.lookup(url, hash);
        if dup.is_none() {
            self.urls.insert(normalize_url(url));
            self.hashes.insert(hash.to_string());
        }
        dup
    }

    pub fn len(&self) -> usize {
        self.hashes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hashes.is_empty()
    }
}

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::model::Topic;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    /// The keyword must not be flanked by letters or digits.
    #[default]
    WordBoundary,
    Substring,
}

fn occurs(haystack: &str, needle: &str, mode: MatchMode) -> bool {
    if needle.is_empty() {
        return false;
    }
    match mode {
        MatchMode::Substring => haystack.contains(needle),
        MatchMode::WordBoundary => haystack.match_indices(needle).any(|(at, m)| {
            let before = haystack[..at].chars().next_back();
            let after = haystack[at + m.len()..].chars().next();
            !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric)
        }),
    }
}

/// Ids of every topic with a keyword occurring case-insensitively in the
/// title or the body.
pub fn assign_topics(title: &str, text: &str, topics: &[Topic], mode: MatchMode) -> BTreeSet<String> {
    let title = title.to_lowercase();
    let text = text.to_lowercase();
    topics
        .iter()
        .filter(|t| {
            t.keywords.iter().any(|k| {
                let k = k.trim().to_lowercase();
                occurs(&title, &k, mode) || occurs(&text, &k, mode)
            })
        })
        .map(|t| t.topic_id.clone())
        .collect()
}

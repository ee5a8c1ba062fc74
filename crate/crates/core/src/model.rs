//! Domain records shared by the detector, ingestion, analytics and the store.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::analytics;
use crate::technique::TechniqueLabel;
use crate::text::TokenizedText;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("a fragment cannot carry the no-technique label")]
    NoTechniqueFragment,
    #[error("fragment token range {begin}..={end} is invalid for a text of {len} tokens")]
    TokenRange { begin: usize, end: usize, len: usize },
    #[error("fragment confidence {0} outside [0, 1]")]
    Confidence(f64),
    #[error("fragment char span {begin}..{end} does not match its tokens")]
    CharSpan { begin: usize, end: usize },
    #[error("stored propaganda score {stored} differs from recomputed {computed}")]
    Score { stored: f64, computed: f64 },
    #[error("sentence flag refers to missing sentence {0}")]
    SentenceFlag(usize),
    #[error("article has no tokens")]
    EmptyArticle,
    #[error("time_from is after time_to")]
    TimeRange,
    #[error("unknown orientation `{0}`")]
    Orientation(String),
    #[error("span line {line}: {reason}")]
    SpanLine { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// A contiguous run of tokens flagged with one technique.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fragment {
    pub technique: TechniqueLabel,
    pub token_begin: usize,
    /// Inclusive.
    pub token_end: usize,
    pub char_begin: usize,
    /// Exclusive.
    pub char_end: usize,
    pub confidence: f64,
}

impl Fragment {
    /// Builds a fragment over tokens `token_begin..=token_end` of `text`,
    /// deriving the char span from the tokens.
    pub fn over_tokens(
        text: &TokenizedText,
        technique: TechniqueLabel,
        token_begin: usize,
        token_end: usize,
        confidence: f64,
    ) -> Result<Self, ModelError> {
        if !technique.is_technique() {
            return Err(ModelError::NoTechniqueFragment);
        }
        if token_begin > token_end || token_end >= text.token_count() {
            return Err(ModelError::TokenRange {
                begin: token_begin,
                end: token_end,
                len: text.token_count(),
            });
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(ModelError::Confidence(confidence));
        }
        let (char_begin, char_end) = text.char_span(token_begin, token_end);
        Ok(Fragment {
            technique,
            token_begin,
            token_end,
            char_begin,
            char_end,
            confidence,
        })
    }

    pub fn token_len(&self) -> usize {
        self.token_end - self.token_begin + 1
    }

    pub fn validate(&self, text: &TokenizedText) -> Result<(), ModelError> {
        let rebuilt = Fragment::over_tokens(
            text,
            self.technique,
            self.token_begin,
            self.token_end,
            self.confidence,
        )?;
        if (rebuilt.char_begin, rebuilt.char_end) != (self.char_begin, self.char_end) {
            return Err(ModelError::CharSpan {
                begin: self.char_begin,
                end: self.char_end,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SentenceFlag {
    pub sentence_index: usize,
    pub propaganda_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzedArticle {
    pub article_id: String,
    pub source_id: String,
    pub url: String,
    pub title: String,
    pub published_at: DateTime<Utc>,
    pub text: TokenizedText,
    pub fragments: Vec<Fragment>,
    pub sentence_flags: Vec<SentenceFlag>,
    pub propaganda_score: f64,
    pub topics: BTreeSet<String>,
    pub content_hash: String,
}

/// Everything needed to assemble an [`AnalyzedArticle`] except the score,
/// which is always derived.
#[derive(Debug, Clone)]
pub struct ArticleParts {
    pub article_id: String,
    pub source_id: String,
    pub url: String,
    pub title: String,
    pub published_at: DateTime<Utc>,
    pub text: TokenizedText,
    pub fragments: Vec<Fragment>,
    pub sentence_flags: Vec<SentenceFlag>,
    pub topics: BTreeSet<String>,
    pub content_hash: String,
}

impl AnalyzedArticle {
    pub fn new(parts: ArticleParts) -> Result<Self, ModelError> {
        let mut article = AnalyzedArticle {
            article_id: parts.article_id,
            source_id: parts.source_id,
            url: parts.url,
            title: parts.title,
            published_at: parts.published_at,
            text: parts.text,
            fragments: parts.fragments,
            sentence_flags: parts.sentence_flags,
            propaganda_score: 0.0,
            topics: parts.topics,
            content_hash: parts.content_hash,
        };
        article.propaganda_score = analytics::propaganda_score(&article)?;
        article.validate()?;
        Ok(article)
    }

    /// Checks every structural invariant, including that the stored score
    /// equals the recomputed coverage ratio exactly.
    pub fn validate(&self) -> Result<(), ModelError> {
        for f in &self.fragments {
            f.validate(&self.text)?;
        }
        let n_sentences = self.text.sentences().len();
        for flag in &self.sentence_flags {
            if flag.sentence_index >= n_sentences {
                return Err(ModelError::SentenceFlag(flag.sentence_index));
            }
            if !(0.0..=1.0).contains(&flag.propaganda_probability) {
                return Err(ModelError::Confidence(flag.propaganda_probability));
            }
        }
        let computed = analytics::propaganda_score(self)?;
        if computed != self.propaganda_score {
            return Err(ModelError::Score {
                stored: self.propaganda_score,
                computed,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Left,
    Center,
    Right,
    #[default]
    Unknown,
}

impl Orientation {
    pub fn as_str(self) -> &'static str {
        match self {
            Orientation::Left => "left",
            Orientation::Center => "center",
            Orientation::Right => "right",
            Orientation::Unknown => "unknown",
        }
    }
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Orientation {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "left" => Ok(Orientation::Left),
            "center" | "centre" => Ok(Orientation::Center),
            "right" => Ok(Orientation::Right),
            "unknown" => Ok(Orientation::Unknown),
            other => Err(ModelError::Orientation(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MediaSource {
    pub source_id: String,
    pub name: String,
    #[serde(default)]
    pub feed_urls: Vec<String>,
    #[serde(default)]
    pub orientation: Orientation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topic {
    pub topic_id: String,
    pub display_name: String,
    pub keywords: Vec<String>,
}

/// Article selection criteria; every present field must match.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub time_from: Option<DateTime<Utc>>,
    pub time_to: Option<DateTime<Utc>>,
    pub keyword: Option<String>,
    pub orientation: Option<Orientation>,
    pub source_id: Option<String>,
    pub topic_id: Option<String>,
}

impl FilterSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        match (self.time_from, self.time_to) {
            (Some(from), Some(to)) if from > to => Err(ModelError::TimeRange),
            _ => Ok(()),
        }
    }
}

/// One line of the tab-separated span format:
/// `article_id <TAB> technique_id <TAB> char_begin <TAB> char_end`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpanRecord {
    pub article_id: String,
    pub technique: TechniqueLabel,
    pub char_begin: usize,
    pub char_end: usize,
}

pub fn write_spans<W: Write>(
    mut out: W,
    article_id: &str,
    fragments: &[Fragment],
) -> io::Result<()> {
    for f in fragments {
        writeln!(
            out,
            "{}\t{}\t{}\t{}",
            article_id, f.technique, f.char_begin, f.char_end
        )?;
    }
    Ok(())
}

pub fn read_spans<R: BufRead>(input: R) -> Result<Vec<SpanRecord>, ModelError> {
    let mut records = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: &str| ModelError::SpanLine {
            line: n + 1,
            reason: reason.to_string(),
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(bad("expected 4 tab-separated columns"));
        }
        let technique: TechniqueLabel = cols[1].parse().map_err(|_| bad("unknown technique"))?;
        if !technique.is_technique() {
            return Err(bad("no_technique is not a span label"));
        }
        let char_begin: usize = cols[2].trim().parse().map_err(|_| bad("bad begin offset"))?;
        let char_end: usize = cols[3].trim().parse().map_err(|_| bad("bad end offset"))?;
        if char_begin >= char_end {
            return Err(bad("empty span"));
        }
        records.push(SpanRecord {
            article_id: cols[0].to_string(),
            technique,
            char_begin,
            char_end,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::tokenize;

    fn parts(text: &str, fragments: Vec<Fragment>) -> ArticleParts {
        ArticleParts {
            article_id: "a1".into(),
            source_id: "s1".into(),
            url: "https://example.com/a".into(),
            title: "t".into(),
            published_at: DateTime::from_timestamp(1_700_000_000, 0).unwrap(),
            text: tokenize(text),
            fragments,
            sentence_flags: vec![],
            topics: BTreeSet::new(),
            content_hash: "00".into(),
        }
    }

    #[test]
    fn fragment_derives_char_span() {
        let text = tokenize("\"BUILD THE WALL!\" Trump tweeted.");
        let f = Fragment::over_tokens(&text, TechniqueLabel::Slogans, 1, 3, 1.0).unwrap();
        assert_eq!((f.char_begin, f.char_end), (1, 15));
        assert_eq!(&text.raw_text()[1..15], "BUILD THE WALL");
    }

    #[test]
    fn fragment_rejections() {
        let text = tokenize("one two three");
        assert!(matches!(
            Fragment::over_tokens(&text, TechniqueLabel::NoTechnique, 0, 0, 0.5),
            Err(ModelError::NoTechniqueFragment)
        ));
        assert!(Fragment::over_tokens(&text, TechniqueLabel::Doubt, 2, 1, 0.5).is_err());
        assert!(Fragment::over_tokens(&text, TechniqueLabel::Doubt, 0, 3, 0.5).is_err());
        assert!(Fragment::over_tokens(&text, TechniqueLabel::Doubt, 0, 0, 1.5).is_err());
        assert!(Fragment::over_tokens(&text, TechniqueLabel::Doubt, 0, 0, f64::NAN).is_err());
    }

    #[test]
    fn article_score_is_derived_and_checked() {
        let text = tokenize("a b c d");
        let f = Fragment::over_tokens(&text, TechniqueLabel::Doubt, 1, 2, 0.9).unwrap();
        let mut article = AnalyzedArticle::new(parts("a b c d", vec![f])).unwrap();
        assert_eq!(article.propaganda_score, 0.5);
        article.propaganda_score = 0.25;
        assert!(matches!(article.validate(), Err(ModelError::Score { .. })));
    }

    #[test]
    fn article_json_round_trip() {
        let text = tokenize("Outrage as he spoke.");
        let f = Fragment::over_tokens(&text, TechniqueLabel::LoadedLanguage, 0, 0, 0.75).unwrap();
        let article = AnalyzedArticle::new(parts("Outrage as he spoke.", vec![f])).unwrap();
        let json = serde_json::to_string(&article).unwrap();
        assert!(json.contains("\"technique\":\"loaded_language\""));
        let back: AnalyzedArticle = serde_json::from_str(&json).unwrap();
        assert_eq!(back, article);
        back.validate().unwrap();
    }

    #[test]
    fn empty_article_rejected() {
        assert!(matches!(
            AnalyzedArticle::new(parts("  ", vec![])),
            Err(ModelError::EmptyArticle)
        ));
    }

    #[test]
    fn filter_spec_time_order() {
        let t0 = DateTime::from_timestamp(0, 0).unwrap();
        let t1 = DateTime::from_timestamp(10, 0).unwrap();
        let ok = FilterSpec { time_from: Some(t0), time_to: Some(t1), ..Default::default() };
        assert!(ok.validate().is_ok());
        let bad = FilterSpec { time_from: Some(t1), time_to: Some(t0), ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn orientation_parsing() {
        assert_eq!("Left".parse::<Orientation>().unwrap(), Orientation::Left);
        assert_eq!("centre".parse::<Orientation>().unwrap(), Orientation::Center);
        assert!("far-left".parse::<Orientation>().is_err());
    }

    #[test]
    fn span_tsv_round_trip() {
        let text = tokenize("BUILD THE WALL! Outrage.");
        let frags = vec![
            Fragment::over_tokens(&text, TechniqueLabel::Slogans, 0, 2, 1.0).unwrap(),
            Fragment::over_tokens(&text, TechniqueLabel::LoadedLanguage, 4, 4, 1.0).unwrap(),
        ];
        let mut buf = Vec::new();
        write_spans(&mut buf, "doc7", &frags).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "doc7\tslogans\t0\t14\ndoc7\tloaded_language\t16\t23\n"
        );
        let records = read_spans(&buf[..]).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[1].technique, TechniqueLabel::LoadedLanguage);
        assert!(read_spans("x\tslogans\t3\n".as_bytes()).is_err());
        assert!(read_spans("x\tnope\t0\t3\n".as_bytes()).is_err());
    }
}

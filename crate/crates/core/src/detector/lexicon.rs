//! Pattern-lexicon baseline detector.
//!
//! Lexicon files hold one pattern per line, `technique_id <TAB> pattern`.
//! A pattern is either a literal token sequence, matched case-insensitively
//! against token surfaces, or a regex prefixed with `re:`, matched
//! case-insensitively against each sentence's text. Blank lines and lines
//! starting with `#` are ignored.

use std::collections::BTreeSet;
use std::path::Path;

use regex::{Regex, RegexBuilder};

use super::{Detection, Detector, DetectorInfo};
use crate::model::{Fragment, SentenceFlag};
use crate::technique::TechniqueLabel;
use crate::text::{tokenize, TokenizedText};

const BUILTIN: &str = include_str!("../../assets/lexicon.tsv");

#[derive(Debug, thiserror::Error)]
pub enum LexiconError {
    #[error("lexicon line {line}: {reason}")]
    Line { line: usize, reason: String },
    #[error("reading lexicon: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub enum Pattern {
    /// Lowercased token surfaces.
    Literal(Vec<String>),
    Regex(Regex),
}

#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    entries: Vec<(TechniqueLabel, Pattern)>,
}

impl Lexicon {
    pub fn parse(source: &str) -> Result<Self, LexiconError> {
        let mut entries = Vec::new();
        for (n, line) in source.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let bad = |reason: String| LexiconError::Line { line: n + 1, reason };
            let (id, pattern) = line
                .split_once('\t')
                .ok_or_else(|| bad("expected `technique_id<TAB>pattern`".into()))?;
            let technique: TechniqueLabel = id.parse().map_err(|e| bad(format!("{e}")))?;
            if !technique.is_technique() {
                return Err(bad("no_technique cannot be a lexicon label".into()));
            }
            let pattern = pattern.trim();
            let pattern = match pattern.strip_prefix("re:") {
                Some(expr) => Pattern::Regex(
                    RegexBuilder::new(expr)
                        .case_insensitive(true)
                        .build()
                        .map_err(|e| bad(format!("invalid regex: {e}")))?,
                ),
                None => {
                    let tokens = tokenize(pattern);
                    if tokens.is_empty() {
                        return Err(bad("empty pattern".into()));
                    }
                    Pattern::Literal(
                        (0..tokens.token_count())
                            .map(|i| tokens.surface(i).to_lowercase())
                            .collect(),
                    )
                }
            };
            entries.push((technique, pattern));
        }
        Ok(Lexicon { entries })
    }

    pub fn load(path: &Path) -> Result<Self, LexiconError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// The lexicon shipped with the crate.
    pub fn builtin() -> Self {
        Self::parse(BUILTIN).expect("built-in lexicon parses")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(TechniqueLabel, Pattern)] {
        &self.entries
    }
}

/// Every pattern match becomes a fragment with confidence 1.0; a sentence
/// is flagged (1.0) exactly when it contains a fragment. Matches never
/// cross sentence boundaries; overlapping matches are all kept.
pub fn lexicon_detect(text: &TokenizedText, lexicon: &Lexicon) -> Detection {
    let mut spans: BTreeSet<(usize, usize, TechniqueLabel)> = BTreeSet::new();
    let mut sentence_flags = Vec::with_capacity(text.sentences().len());
    for sentence in text.sentences() {
        let lowered: Vec<String> = text
            .sentence_surfaces(sentence)
            .map(str::to_lowercase)
            .collect();
        let before = spans.len();
        for (technique, pattern) in &lexicon.entries {
            match pattern {
                Pattern::Literal(words) => {
                    if words.len() > lowered.len() {
                        continue;
                    }
                    for start in 0..=lowered.len() - words.len() {
                        if lowered[start..start + words.len()] == words[..] {
                            let b = sentence.first_token + start;
                            spans.insert((b, b + words.len() - 1, *technique));
                        }
                    }
                }
                Pattern::Regex(re) => {
                    let (offset, _) = text.byte_span(sentence.first_token, sentence.last_token);
                    for m in re.find_iter(text.sentence_text(sentence)) {
                        if m.is_empty() {
                            continue;
                        }
                        let (ms, me) = (offset + m.start(), offset + m.end());
                        let covered: Vec<usize> = sentence
                            .token_range()
                            .filter(|&i| {
                                let (tb, te) = text.byte_span(i, i);
                                tb < me && ms < te
                            })
                            .collect();
                        if let (Some(&b), Some(&e)) = (covered.first(), covered.last()) {
                            spans.insert((b, e, *technique));
                        }
                    }
                }
            }
        }
        let hit = spans.len() > before;
        sentence_flags.push(SentenceFlag {
            sentence_index: sentence.index,
            propaganda_probability: if hit { 1.0 } else { 0.0 },
        });
    }
    let fragments = spans
        .into_iter()
        .map(|(b, e, t)| Fragment::over_tokens(text, t, b, e, 1.0).expect("match lies inside the text"))
        .collect();
    Detection {
        sentence_flags,
        fragments,
    }
}

#[derive(Debug, Clone)]
pub struct LexiconDetector {
    lexicon: Lexicon,
}

impl LexiconDetector {
    pub fn new(lexicon: Lexicon) -> Self {
        LexiconDetector { lexicon }
    }

    pub fn builtin() -> Self {
        Self::new(Lexicon::builtin())
    }
}

impl Detector for LexiconDetector {
    fn info(&self) -> DetectorInfo {
        DetectorInfo {
            name: "lexicon".into(),
            version: format!("{}+{}", env!("CARGO_PKG_VERSION"), self.lexicon.len()),
        }
    }

    fn analyze(&self, text: &TokenizedText) -> Detection {
        lexicon_detect(text, &self.lexicon)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use TechniqueLabel::*;

    #[test]
    fn slogan_from_builtin() {
        let text = tokenize("BUILD THE WALL!");
        let det = lexicon_detect(&text, &Lexicon::builtin());
        let slogans: Vec<_> = det.fragments.iter().filter(|f| f.technique == Slogans).collect();
        assert_eq!(slogans.len(), 1);
        assert_eq!((slogans[0].token_begin, slogans[0].token_end), (0, 2));
        assert_eq!((slogans[0].char_begin, slogans[0].char_end), (0, 14));
        assert_eq!(det.sentence_flags[0].propaganda_probability, 1.0);
    }

    #[test]
    fn empty_lexicon_flags_nothing() {
        let text = tokenize("BUILD THE WALL! Nothing else. Really.");
        let det = lexicon_detect(&text, &Lexicon::default());
        assert!(det.fragments.is_empty());
        assert_eq!(det.sentence_flags.len(), 3);
        assert!(det.sentence_flags.iter().all(|f| f.propaganda_probability == 0.0));
    }

    #[test]
    fn overlapping_matches_both_kept() {
        let lex = Lexicon::parse("slogans\tbuild the wall\nloaded_language\tre:\\bwall\\b!*\n").unwrap();
        let text = tokenize("They chant build the wall!!");
        let det = lexicon_detect(&text, &lex);
        let spans: Vec<_> = det.fragments.iter().map(|f| (f.technique, f.token_begin, f.token_end)).collect();
        assert_eq!(spans, [(Slogans, 2, 4), (LoadedLanguage, 4, 6)]);
    }

    #[test]
    fn regex_match_snaps_to_tokens_within_sentence() {
        let lex = Lexicon::parse("doubt\tre:can the same be said").unwrap();
        let text = tokenize("Fine. Can the same be said for them? No.");
        let det = lexicon_detect(&text, &lex);
        assert_eq!(det.fragments.len(), 1);
        let f = det.fragments[0];
        assert_eq!(&text.raw_text()[f.char_begin..f.char_end], "Can the same be said");
        let flags: Vec<_> = det.sentence_flags.iter().map(|f| f.propaganda_probability).collect();
        assert_eq!(flags, [0.0, 1.0, 0.0]);
    }

    #[test]
    fn literal_does_not_cross_sentences() {
        let lex = Lexicon::parse("slogans\tstop . Now").unwrap();
        let det = lexicon_detect(&tokenize("We must stop. Now we go."), &lex);
        assert!(det.fragments.is_empty());
    }

    #[test]
    fn malformed_lines_rejected() {
        assert!(matches!(Lexicon::parse("slogans build the wall"), Err(LexiconError::Line { line: 1, .. })));
        assert!(Lexicon::parse("# c\n\nfoo\tbar").is_err());
        assert!(Lexicon::parse("doubt\tre:(unclosed").is_err());
        assert!(Lexicon::parse("no_technique\tx").is_err());
        assert!(Lexicon::parse("doubt\t   ").is_err());
    }

    #[test]
    fn builtin_covers_every_technique() {
        let lex = Lexicon::builtin();
        for t in TechniqueLabel::techniques() {
            assert!(lex.entries().iter().any(|(l, _)| *l == t), "{t} missing");
        }
    }

    proptest! {
        #[test]
        fn fragments_and_flags_agree(s in "[a-zA-Z !.?]{0,120}") {
            let lex = Lexicon::parse("doubt\tre:\\b[aeiou]+\\b\nslogans\tx y\nloaded_language\tre:!+").unwrap();
            let text = tokenize(&s);
            let det = lexicon_detect(&text, &lex);
            prop_assert_eq!(det.sentence_flags.len(), text.sentences().len());
            for f in &det.fragments {
                prop_assert!(f.token_end < text.token_count());
                prop_assert!(f.char_end <= text.char_len());
            }
            for (sent, flag) in text.sentences().iter().zip(&det.sentence_flags) {
                let has = det.fragments.iter().any(|f| sent.token_range().contains(&f.token_begin));
                prop_assert_eq!(has, flag.propaganda_probability == 1.0);
            }
        }
    }
}

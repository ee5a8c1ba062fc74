//! Rule-based tokenization with explicit character offsets.
//!
//! Offsets are counted in Unicode scalar values (Rust `char`s), not bytes.
//! Byte offsets are kept alongside for slicing and are rebuilt when a
//! `TokenizedText` is deserialized.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Token {
    pub index: usize,
    pub char_begin: usize,
    pub char_end: usize,
    #[serde(skip)]
    byte_begin: usize,
    #[serde(skip)]
    byte_end: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub index: usize,
    pub first_token: usize,
    /// Inclusive.
    pub last_token: usize,
}

impl Sentence {
    pub fn token_range(&self) -> std::ops::RangeInclusive<usize> {
        self.first_token..=self.last_token
    }

    pub fn len(&self) -> usize {
        self.last_token - self.first_token + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawTokenizedText")]
pub struct TokenizedText {
    raw_text: String,
    tokens: Vec<Token>,
    sentences: Vec<Sentence>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TextError {
    #[error("token {index} has an invalid span {begin}..{end} (text has {len} chars)")]
    BadToken {
        index: usize,
        begin: usize,
        end: usize,
        len: usize,
    },
    #[error("token {0} overlaps or precedes its predecessor")]
    Unordered(usize),
    #[error("token {0} is stored at the wrong position")]
    BadIndex(usize),
    #[error("sentences do not partition the token list (at sentence {0})")]
    BadSentences(usize),
}

impl TokenizedText {
    pub fn raw_text(&self) -> &str {
        &self.raw_text
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn sentences(&self) -> &[Sentence] {
        &self.sentences
    }

    pub fn token_count(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Length of the raw text in chars.
    pub fn char_len(&self) -> usize {
        self.raw_text.chars().count()
    }

    /// Surface form of token `index`.
    pub fn surface(&self, index: usize) -> &str {
        let t = &self.tokens[index];
        &self.raw_text[t.byte_begin..t.byte_end]
    }

    /// Surface forms of a sentence's tokens.
    pub fn sentence_surfaces(&self, sentence: &Sentence) -> impl Iterator<Item = &str> + '_ {
        sentence.token_range().map(move |i| self.surface(i))
    }

    /// Char span covering tokens `first..=last`.
    pub fn char_span(&self, first: usize, last: usize) -> (usize, usize) {
        (self.tokens[first].char_begin, self.tokens[last].char_end)
    }

    /// Byte span covering tokens `first..=last`.
    pub fn byte_span(&self, first: usize, last: usize) -> (usize, usize) {
        (self.tokens[first].byte_begin, self.tokens[last].byte_end)
    }

    /// Raw text of a sentence, from its first token to its last.
    pub fn sentence_text(&self, sentence: &Sentence) -> &str {
        let (b, e) = self.byte_span(sentence.first_token, sentence.last_token);
        &self.raw_text[b..e]
    }

    /// Index of the sentence containing `token`.
    pub fn sentence_of(&self, token: usize) -> Option<usize> {
        let pos = self
            .sentences
            .partition_point(|s| s.last_token < token);
        self.sentences
            .get(pos)
            .filter(|s| s.first_token <= token)
            .map(|s| s.index)
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

fn is_joiner(c: char) -> bool {
    matches!(c, '\'' | '\u{2019}' | '-')
}

fn is_terminal(surface: &str) -> bool {
    matches!(surface, "." | "!" | "?" | "\u{2026}")
}

/// Splits `raw_text` into word and punctuation tokens, then groups them
/// into sentences.
///
/// A word is a maximal run of alphanumeric chars, allowing a single
/// apostrophe or hyphen between two alphanumerics ("don't", "COVID-19").
/// Every other non-whitespace char is a token on its own. A sentence ends
/// after `.`, `!`, `?` or `…` when the next token is separated by a newline,
/// or by whitespace and begins with an uppercase letter.
pub fn tokenize(raw_text: &str) -> TokenizedText {
    let chars: Vec<(usize, char)> = raw_text.char_indices().collect();
    let byte_at = |ci: usize| chars.get(ci).map_or(raw_text.len(), |(b, _)| *b);
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i].1;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let begin = i;
        if is_word_char(c) {
            i += 1;
            while i < chars.len() {
                let c = chars[i].1;
                if is_word_char(c) {
                    i += 1;
                } else if is_joiner(c) && chars.get(i + 1).is_some_and(|(_, n)| is_word_char(*n)) {
                    i += 2;
                } else {
                    break;
                }
            }
        } else {
            i += 1;
        }
        tokens.push(Token {
            index: tokens.len(),
            char_begin: begin,
            char_end: i,
            byte_begin: byte_at(begin),
            byte_end: byte_at(i),
        });
    }

    let mut sentences = Vec::new();
    let mut first = 0;
    for k in 0..tokens.len() {
        let t = &tokens[k];
        let ends = match tokens.get(k + 1) {
            None => true,
            Some(next) => {
                is_terminal(&raw_text[t.byte_begin..t.byte_end]) && {
                    let gap = &raw_text[t.byte_end..next.byte_begin];
                    gap.contains('\n')
                        || (!gap.is_empty()
                            && raw_text[next.byte_begin..]
                                .chars()
                                .next()
                                .is_some_and(char::is_uppercase))
                }
            }
        };
        if ends {
            sentences.push(Sentence {
                index: sentences.len(),
                first_token: first,
                last_token: k,
            });
            first = k + 1;
        }
    }

    TokenizedText {
        raw_text: raw_text.to_string(),
        tokens,
        sentences,
    }
}

#[derive(Deserialize)]
struct RawToken {
    index: usize,
    char_begin: usize,
    char_end: usize,
}

#[derive(Deserialize)]
struct RawTokenizedText {
    raw_text: String,
    tokens: Vec<RawToken>,
    sentences: Vec<Sentence>,
}

impl TryFrom<RawTokenizedText> for TokenizedText {
    type Error = TextError;

    fn try_from(raw: RawTokenizedText) -> Result<Self, Self::Error> {
        let offsets: Vec<usize> = raw
            .raw_text
            .char_indices()
            .map(|(b, _)| b)
            .chain(std::iter::once(raw.raw_text.len()))
            .collect();
        let len = offsets.len() - 1;
        let mut tokens = Vec::with_capacity(raw.tokens.len());
        let mut prev_end = 0;
        for (pos, t) in raw.tokens.iter().enumerate() {
            if t.index != pos {
                return Err(TextError::BadIndex(pos));
            }
            if t.char_begin >= t.char_end || t.char_end > len {
                return Err(TextError::BadToken {
                    index: pos,
                    begin: t.char_begin,
                    end: t.char_end,
                    len,
                });
            }
            if pos > 0 && t.char_begin < prev_end {
                return Err(TextError::Unordered(pos));
            }
            prev_end = t.char_end;
            tokens.push(Token {
                index: pos,
                char_begin: t.char_begin,
                char_end: t.char_end,
                byte_begin: offsets[t.char_begin],
                byte_end: offsets[t.char_end],
            });
        }
        let mut next = 0;
        for (pos, s) in raw.sentences.iter().enumerate() {
            if s.index != pos || s.first_token != next || s.last_token < s.first_token {
                return Err(TextError::BadSentences(pos));
            }
            next = s.last_token + 1;
        }
        if next != tokens.len() {
            return Err(TextError::BadSentences(raw.sentences.len()));
        }
        Ok(TokenizedText {
            raw_text: raw.raw_text,
            tokens,
            sentences: raw.sentences,
        })
    }
}

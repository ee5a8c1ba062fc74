//! Plain-text extraction from fetched pages.
//!
//! HTML is reduced to its paragraphs: the first `<article>` (else `<main>`,
//! else `<body>`) is searched for `<p>` elements that are not inside
//! navigation, header, footer, aside or form blocks and are not mostly link
//! text. Paragraphs are joined with blank lines.

use encoding_rs::Encoding;
use scraper::{ElementRef, Html, Selector};

/// Paragraphs whose link text exceeds this share of their text are dropped.
pub const MAX_LINK_DENSITY: f64 = 0.5;

const BOILERPLATE: [&str; 8] = ["nav", "header", "footer", "aside", "form", "script", "style", "noscript"];

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ExtractError {
    #[error("body does not decode as {0}")]
    Decode(String),
    #[error("unsupported content type {0}")]
    Unsupported(String),
    #[error("no article text found")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Extracted {
    pub title: String,
    pub text: String,
}

fn collapse(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn charset_param(content_type: &str) -> Option<&str> {
    content_type.split(';').skip(1).find_map(|p| {
        let (k, v) = p.split_once('=')?;
        k.trim()
            .eq_ignore_ascii_case("charset")
            .then(|| v.trim().trim_matches('"'))
    })
}

/// `<meta charset=..>` or `<meta http-equiv content="..; charset=..">` in
/// the first KiB of the body.
fn sniff_meta_charset(body: &[u8]) -> Option<&'static Encoding> {
    let head = String::from_utf8_lossy(&body[..body.len().min(1024)]).to_ascii_lowercase();
    let at = head.find("charset=")? + "charset=".len();
    let rest = head[at..].trim_start_matches(['"', '\'']);
    let end = rest
        .find(|c: char| !(c.is_ascii_alphanumeric() || c == '-' || c == '_'))
        .unwrap_or(rest.len());
    Encoding::for_label(rest[..end].as_bytes())
}

/// Decodes with, in order of precedence, a byte-order mark, the declared
/// charset, a `<meta>` charset (HTML only), or UTF-8. Malformed input is an
/// error rather than being replaced.
pub fn decode_body(body: &[u8], content_type: Option<&str>, is_html: bool) -> Result<String, ExtractError> {
    let declared = content_type.and_then(charset_param).and_then(|l| Encoding::for_label(l.as_bytes()));
    let encoding = Encoding::for_bom(body)
        .map(|(e, _)| e)
        .or(declared)
        .or_else(|| if is_html { sniff_meta_charset(body) } else { None })
        .unwrap_or(encoding_rs::UTF_8);
    let (text, _, had_errors) = encoding.decode(body);
    if had_errors {
        return Err(ExtractError::Decode(encoding.name().to_string()));
    }
    Ok(text.into_owned())
}

enum Kind {
    Html,
    Plain,
}

fn kind(content_type: Option<&str>, body: &[u8]) -> Result<Kind, ExtractError> {
    let mime = content_type
        .map(|ct| ct.split(';').next().unwrap_or("").trim().to_ascii_lowercase())
        .unwrap_or_default();
    match mime.as_str() {
        "text/html" | "application/xhtml+xml" => Ok(Kind::Html),
        "text/plain" => Ok(Kind::Plain),
        "" => {
            let start = body.iter().position(|b| !b.is_ascii_whitespace()).unwrap_or(body.len());
            if body[start..].starts_with(b"<") {
                Ok(Kind::Html)
            } else {
                Ok(Kind::Plain)
            }
        }
        other => Err(ExtractError::Unsupported(other.to_string())),
    }
}

fn in_boilerplate(el: ElementRef, root: ElementRef) -> bool {
    el.ancestors()
        .take_while(|n| n.id() != root.id())
        .filter_map(ElementRef::wrap)
        .any(|a| BOILERPLATE.contains(&a.value().name()))
}

fn link_text_len(el: ElementRef, links: &Selector) -> usize {
    el.select(links)
        .map(|a| collapse(&a.text().collect::<String>()).chars().count())
        .sum()
}

/// Returns the page title and its paragraph text. Plain text is returned
/// unchanged with an empty title.
pub fn extract_text(body: &[u8], content_type: Option<&str>) -> Result<Extracted, ExtractError> {
    match kind(content_type, body)? {
        Kind::Plain => {
            let text = decode_body(body, content_type, false)?;
            if text.trim().is_empty() {
                return Err(ExtractError::Empty);
            }
            Ok(Extracted {
                title: String::new(),
                text,
            })
        }
        Kind::Html => extract_html(&decode_body(body, content_type, true)?),
    }
}

fn selector(s: &str) -> Selector {
    Selector::parse(s).expect("static selector")
}

pub fn extract_html(html: &str) -> Result<Extracted, ExtractError> {
    let doc = Html::parse_document(html);
    let (title_sel, h1, p, a) = (selector("title"), selector("h1"), selector("p"), selector("a"));

    let title = doc
        .select(&title_sel)
        .chain(doc.select(&h1))
        .map(|e| collapse(&e.text().collect::<String>()))
        .find(|t| !t.is_empty())
        .unwrap_or_default();

    let root = ["article", "main", "body"]
        .iter()
        .find_map(|name| doc.select(&selector(name)).next())
        .unwrap_or_else(|| doc.root_element());

    let mut paragraphs = Vec::new();
    for para in root.select(&p) {
        if in_boilerplate(para, root) {
            continue;
        }
        let text = collapse(&para.text().collect::<String>());
        let len = text.chars().count();
        if len == 0 {
            continue;
        }
        if link_text_len(para, &a) as f64 > MAX_LINK_DENSITY * len as f64 {
            continue;
        }
        paragraphs.push(text);
    }
    if paragraphs.is_empty() {
        return Err(ExtractError::Empty);
    }
    Ok(Extracted {
        title,
        text: paragraphs.join("\n\n"),
    })
}

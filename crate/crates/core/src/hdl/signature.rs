//! Hardware signature extraction: map RTL identifiers onto a configurable
//! keyword lexicon.
//!
//! The extractor deliberately stays lexical. Identifiers in real designs are
//! compounds (`jtag_unlock_state`, `aes_key_sched`), so each lexicon entry
//! carries substring patterns; a canonical keyword is reported when any
//! pattern occurs case-insensitively inside any identifier token. Comments
//! and string literals never contribute.

use std::path::Path;

use crate::error::{Error, Result};
use crate::hdl::lexer::{tokenize, TokenKind};
use crate::model::{HardwareSignature, RtlDesign};

/// Shipped default lexicon; see `assets/default_lexicon.txt`.
pub const DEFAULT_LEXICON_TEXT: &str = include_str!("../../assets/default_lexicon.txt");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexiconEntry {
    pub canonical: String,
    pub patterns: Vec<String>,
}

/// Ordered list of canonical keywords and the substrings that trigger them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignatureLexicon {
    entries: Vec<LexiconEntry>,
}

impl Default for SignatureLexicon {
    fn default() -> Self {
        Self::parse(DEFAULT_LEXICON_TEXT).expect("default lexicon must parse")
    }
}

impl SignatureLexicon {
    /// Parses lexicon text: one `canonical: pattern1,pattern2,...` entry per
    /// line, `#` comments and blank lines ignored, bare words match
    /// themselves.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<LexiconEntry> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (canonical, patterns) = match line.split_once(':') {
                Some((c, p)) => {
                    let patterns: Vec<String> = p
                        .split(',')
                        .map(|s| s.trim().to_lowercase())
                        .filter(|s| !s.is_empty())
                        .collect();
                    (c.trim().to_lowercase(), patterns)
                }
                None => (line.to_lowercase(), vec![line.to_lowercase()]),
            };
            if canonical.is_empty() || canonical.contains(char::is_whitespace) {
                return Err(Error::parse(format!(
                    "lexicon line {}: canonical keyword must be a single token",
                    lineno + 1
                )));
            }
            if patterns.is_empty() {
                return Err(Error::parse(format!(
                    "lexicon line {}: entry '{canonical}' lists no patterns",
                    lineno + 1
                )));
            }
            if entries.iter().any(|e| e.canonical == canonical) {
                return Err(Error::validation(format!(
                    "lexicon line {}: duplicate canonical keyword '{canonical}'",
                    lineno + 1
                )));
            }
            entries.push(LexiconEntry { canonical, patterns });
        }
        Ok(Self { entries })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::missing_file(format!("lexicon file {}", path.display())));
        }
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io_at(path, &e))?;
        Self::parse(&text)
    }

    pub fn entries(&self) -> &[LexiconEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Canonical keywords triggered by a single identifier.
    fn matches_for<'a>(&'a self, lowered_identifier: &'a str) -> impl Iterator<Item = &'a str> {
        self.entries.iter().filter_map(move |entry| {
            entry
                .patterns
                .iter()
                .any(|p| lowered_identifier.contains(p.as_str()))
                .then_some(entry.canonical.as_str())
        })
    }
}

/// Extracts the hardware signature keyword set from a design's source.
///
/// Scans the source, lowercases every identifier token, and reports each
/// canonical lexicon keyword whose pattern occurs as a substring of at least
/// one identifier. Comments and string literals are excluded by the scanner;
/// unterminated constructs do not abort extraction. The result is sorted and
/// deduplicated.
pub fn extract_signature(design: &RtlDesign, lexicon: &SignatureLexicon) -> HardwareSignature {
    extract_signature_from_source(&design.source_text, lexicon)
}

/// Same as [`extract_signature`] but over bare source text.
pub fn extract_signature_from_source(
    source: &str,
    lexicon: &SignatureLexicon,
) -> HardwareSignature {
    let outcome = tokenize(source);
    let mut keywords: Vec<String> = Vec::new();
    for token in &outcome.tokens {
        if token.kind != TokenKind::Identifier {
            continue;
        }
        let lowered = token.text.to_lowercase();
        for canonical in lexicon.matches_for(&lowered) {
            if !keywords.iter().any(|k| k == canonical) {
                keywords.push(canonical.to_string());
            }
        }
    }
    HardwareSignature::from_keywords(keywords)
}

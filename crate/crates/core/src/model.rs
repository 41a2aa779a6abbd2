//! Shared domain types.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util;

/// One HDL source unit plus the artifacts derived from it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RtlDesign {
    pub design_id: String,
    pub source_text: String,
    /// Natural-language summary, absent until the summarizer agent ran.
    pub summary: Option<String>,
    /// Hardware signature, absent until the lexical parser ran.
    pub signature: Option<HardwareSignature>,
}

impl RtlDesign {
    pub fn new(design_id: impl Into<String>, source_text: impl Into<String>) -> Result<Self> {
        let design_id = design_id.into();
        let source_text = source_text.into();
        if source_text.is_empty() {
            return Err(Error::validation(format!("design '{design_id}' has empty source")));
        }
        if design_id.is_empty() {
            return Err(Error::validation("design_id must be non-empty"));
        }
        Ok(Self { design_id, source_text, summary: None, signature: None })
    }
}

/// The set of security-salient keywords extracted from RTL identifiers.
/// Sorted lexicographically and deduplicated for deterministic serialization.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct HardwareSignature {
    pub keywords: Vec<String>,
}

impl HardwareSignature {
    /// Builds a signature from arbitrary keyword candidates: lowercases,
    /// deduplicates, and sorts.
    pub fn from_keywords<I, S>(keywords: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut kws: Vec<String> =
            keywords.into_iter().map(|k| k.as_ref().to_lowercase()).collect();
        kws.sort();
        kws.dedup();
        Self { keywords: kws }
    }

    pub fn is_empty(&self) -> bool {
        self.keywords.is_empty()
    }

    /// Space-joined form used as embedding input.
    pub fn joined(&self) -> String {
        self.keywords.join(" ")
    }
}

/// One benchmark entry: a buggy design, the gold vulnerable snippet, the
/// optional corrected design, and the gold CWE label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkCase {
    pub case_id: String,
    pub buggy_design: RtlDesign,
    pub gold_snippet: String,
    pub fixed_design: Option<String>,
    pub gold_cwe_id: String,
    pub description: String,
}

impl BenchmarkCase {
    pub fn validate(&self) -> Result<()> {
        if self.gold_snippet.trim().is_empty() {
            return Err(Error::validation(format!(
                "case '{}': gold snippet is empty",
                self.case_id
            )));
        }
        if !util::is_valid_cwe_id(&self.gold_cwe_id) {
            return Err(Error::schema(format!(
                "case '{}': gold_cwe_id '{}' does not match CWE-<digits>",
                self.case_id, self.gold_cwe_id
            )));
        }
        if self.buggy_design.source_text.is_empty() {
            return Err(Error::validation(format!("case '{}': empty design", self.case_id)));
        }
        Ok(())
    }
}

//! The two LLM agent roles and their structured-output contracts.
//!
//! The Summarizer Agent produces RTL design summaries (prompt `p_s`), CWE
//! search summaries and keywords (`p_sk`), and vulnerable/secure snippet
//! pairs (`p_vs`). The Detection Agent judges, per retrieved CWE, whether a
//! design exhibits the weakness (`p_det`) and answers in a machine-parseable
//! VERDICT/CWE/fenced-snippet shape.
//!
//! All prompt text ships as editable template files; the versions compiled
//! into the binary are the same files, so out-of-the-box behavior and the
//! on-disk templates cannot drift.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::config::DetectionMode;
use crate::error::{Error, ErrorKind, Result};
use crate::kb::{EnrichedCweRecord, RawCweEntry};
use crate::llm::{estimate_tokens, ChatRequest, LlmClient, ModelProfile};
use crate::model::RtlDesign;
use crate::retrieval::RankedCwe;
use crate::util::normalize_whitespace;

/// Re-issue budget when an agent response violates its output contract.
pub const MALFORMED_RETRY_BUDGET: u32 = 2;

/// Headroom subtracted from the context window when sizing summary chunks,
/// covering estimate slack and the final merge framing.
const CHUNK_TOKEN_MARGIN: u64 = 64;

// ---------------------------------------------------------------------------
// Prompt templates
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PromptName {
    PS,
    PSK,
    PVS,
    PDet,
}

impl PromptName {
    pub fn file_name(self) -> &'static str {
        match self {
            PromptName::PS => "p_s.txt",
            PromptName::PSK => "p_sk.txt",
            PromptName::PVS => "p_vs.txt",
            PromptName::PDet => "p_det.txt",
        }
    }
}

impl fmt::Display for PromptName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.file_name())
    }
}

/// A two-part prompt: system text, `---` separator line, user template with
/// `{{placeholder}}` slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: PromptName,
    pub system_text: String,
    pub user_template: String,
}

impl PromptTemplate {
    pub fn parse(name: PromptName, text: &str) -> Result<Self> {
        let mut system = String::new();
        let mut user = String::new();
        let mut in_user = false;
        for line in text.lines() {
            if !in_user && line.trim() == "---" {
                in_user = true;
                continue;
            }
            let target = if in_user { &mut user } else { &mut system };
            target.push_str(line);
            target.push('\n');
        }
        let system_text = system.trim().to_string();
        let user_template = user.trim().to_string();
        if !in_user {
            return Err(Error::template(format!(
                "{name}: missing `---` separator between system and user sections"
            )));
        }
        if system_text.is_empty() || user_template.is_empty() {
            return Err(Error::template(format!("{name}: system and user sections must be non-empty")));
        }
        Ok(Self { name, system_text, user_template })
    }

    /// Placeholder names appearing in the user template.
    pub fn placeholders(&self) -> Vec<String> {
        let mut names = Vec::new();
        let bytes = self.user_template.as_bytes();
        let mut i = 0;
        while i + 1 < bytes.len() {
            if bytes[i] == b'{' && bytes[i + 1] == b'{' {
                if let Some(rel) = self.user_template[i + 2..].find("}}") {
                    let inner = &self.user_template[i + 2..i + 2 + rel];
                    if is_placeholder_name(inner) {
                        if !names.iter().any(|n| n == inner) {
                            names.push(inner.to_string());
                        }
                        i += 2 + rel + 2;
                        continue;
                    }
                }
            }
            i += 1;
        }
        names
    }

    /// Substitutes every placeholder; an unbound placeholder is an error.
    ///
    /// The template is scanned for placeholders before substitution, so
    /// brace runs inside substituted values (Verilog concatenations like
    /// `{{a,b},c}`) can never be misread as template slots.
    pub fn render(&self, bindings: &BTreeMap<&str, String>) -> Result<String> {
        let mut rendered = self.user_template.clone();
        for name in self.placeholders() {
            let value = bindings.get(name.as_str()).ok_or_else(|| {
                Error::template(format!("{}: placeholder {{{{{name}}}}} is unbound", self.name))
            })?;
            rendered = rendered.replace(&format!("{{{{{name}}}}}"), value);
        }
        if rendered.trim().is_empty() {
            return Err(Error::template(format!("{}: rendered prompt is empty", self.name)));
        }
        Ok(rendered)
    }
}

fn is_placeholder_name(s: &str) -> bool {
    !s.is_empty()
        && s.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// The four agent prompts. `Default` yields the compiled-in templates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub p_s: PromptTemplate,
    pub p_sk: PromptTemplate,
    pub p_vs: PromptTemplate,
    pub p_det: PromptTemplate,
}

pub const DEFAULT_P_S: &str = include_str!("../../../prompts/p_s.txt");
pub const DEFAULT_P_SK: &str = include_str!("../../../prompts/p_sk.txt");
pub const DEFAULT_P_VS: &str = include_str!("../../../prompts/p_vs.txt");
pub const DEFAULT_P_DET: &str = include_str!("../../../prompts/p_det.txt");

impl Default for PromptSet {
    fn default() -> Self {
        Self {
            p_s: PromptTemplate::parse(PromptName::PS, DEFAULT_P_S)
                .expect("embedded p_s template must parse"),
            p_sk: PromptTemplate::parse(PromptName::PSK, DEFAULT_P_SK)
                .expect("embedded p_sk template must parse"),
            p_vs: PromptTemplate::parse(PromptName::PVS, DEFAULT_P_VS)
                .expect("embedded p_vs template must parse"),
            p_det: PromptTemplate::parse(PromptName::PDet, DEFAULT_P_DET)
                .expect("embedded p_det template must parse"),
        }
    }
}

impl PromptSet {
    /// Loads all four templates from a directory; every file must exist —
    /// a prompt override is all-or-nothing so runs stay reproducible.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let load = |name: PromptName| -> Result<PromptTemplate> {
            let path = dir.join(name.file_name());
            if !path.is_file() {
                return Err(Error::missing_file(format!("prompt template {}", path.display())));
            }
            let text =
                std::fs::read_to_string(&path).map_err(|e| Error::io_at(&path, &e))?;
            PromptTemplate::parse(name, &text)
        };
        Ok(Self {
            p_s: load(PromptName::PS)?,
            p_sk: load(PromptName::PSK)?,
            p_vs: load(PromptName::PVS)?,
            p_det: load(PromptName::PDet)?,
        })
    }

    pub fn get(&self, name: PromptName) -> &PromptTemplate {
        match name {
            PromptName::PS => &self.p_s,
            PromptName::PSK => &self.p_sk,
            PromptName::PVS => &self.p_vs,
            PromptName::PDet => &self.p_det,
        }
    }
}

// ---------------------------------------------------------------------------
// Detection findings and response parsing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Found,
    NotFound,
    Indeterminate,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Found => "found",
            Verdict::NotFound => "not_found",
            Verdict::Indeterminate => "indeterminate",
        })
    }
}

/// One per-CWE judgment for one design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionFinding {
    pub design_id: String,
    pub cwe_id: String,
    pub verdict: Verdict,
    /// Vulnerable lines quoted by the agent; empty unless verdict is found.
    pub snippet: String,
    pub rationale: String,
    pub raw_response: String,
    /// 1-based rank of this CWE in the retrieval result.
    pub retrieval_rank: u32,
    /// For found verdicts: whether the snippet occurs in the design source
    /// modulo whitespace. The snippet itself is reported verbatim.
    pub snippet_in_source: Option<bool>,
}

impl DetectionFinding {
    pub fn validate(&self) -> Result<()> {
        match self.verdict {
            Verdict::Found if self.snippet.trim().is_empty() => {
                Err(Error::validation("found finding must carry a snippet"))
            }
            Verdict::NotFound | Verdict::Indeterminate if !self.snippet.is_empty() => {
                Err(Error::validation("only found findings may carry a snippet"))
            }
            _ => Ok(()),
        }
    }
}

/// Parser output for a single verdict block (never `Indeterminate`; that
/// verdict is assigned by the orchestrator when parsing/provider attempts
/// are exhausted).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedVerdict {
    pub found: bool,
    pub cwe_id: String,
    pub snippet: String,
    pub rationale: String,
}

fn malformed(detail: impl Into<String>) -> Error {
    Error::malformed_output(detail)
}

/// Parses one verdict block:
///
/// ```text
/// VERDICT: FOUND | NOT_FOUND
/// CWE: CWE-<n>
/// ```` ... ````  (fenced snippet, required for FOUND)
/// <remaining prose = rationale>
/// ```
///
/// Total on arbitrary input: returns a value or a
/// `MalformedAgentOutputError`, never panics.
pub fn parse_detection_response(text: &str) -> Result<ParsedVerdict> {
    let lines: Vec<&str> = text.lines().collect();

    let verdict_idx = lines
        .iter()
        .position(|l| l.trim_start().starts_with("VERDICT:"))
        .ok_or_else(|| malformed("no VERDICT line in response"))?;
    let verdict_value = lines[verdict_idx].trim_start()["VERDICT:".len()..].trim();
    let found = match verdict_value {
        "FOUND" => true,
        "NOT_FOUND" => false,
        other => {
            return Err(malformed(format!(
                "VERDICT must be FOUND or NOT_FOUND, got {other:?}"
            )))
        }
    };

    let cwe_idx = lines
        .iter()
        .enumerate()
        .skip(verdict_idx + 1)
        .find(|(_, l)| l.trim_start().starts_with("CWE:"))
        .map(|(i, _)| i)
        .ok_or_else(|| malformed("no CWE line after VERDICT"))?;
    let cwe_id = lines[cwe_idx].trim_start()["CWE:".len()..].trim().to_string();
    if !crate::util::is_valid_cwe_id(&cwe_id) {
        return Err(malformed(format!("CWE line does not name a CWE-<n> id: {cwe_id:?}")));
    }

    // First complete fenced block after the CWE line.
    let mut snippet = String::new();
    let mut fence: Option<(usize, usize)> = None;
    if found {
        let open = lines
            .iter()
            .enumerate()
            .skip(cwe_idx + 1)
            .find(|(_, l)| l.trim_start().starts_with("```"))
            .map(|(i, _)| i)
            .ok_or_else(|| malformed("FOUND verdict without a fenced snippet block"))?;
        let close = lines
            .iter()
            .enumerate()
            .skip(open + 1)
            .find(|(_, l)| l.trim_start().starts_with("```"))
            .map(|(i, _)| i)
            .ok_or_else(|| malformed("unterminated fenced snippet block"))?;
        snippet = lines[open + 1..close].join("\n");
        if snippet.trim().is_empty() {
            return Err(malformed("FOUND verdict with an empty snippet block"));
        }
        fence = Some((open, close));
    }

    let rationale = lines
        .iter()
        .enumerate()
        .filter(|(i, _)| {
            *i != verdict_idx
                && *i != cwe_idx
                && fence.is_none_or(|(open, close)| *i < open || *i > close)
        })
        .map(|(_, l)| *l)
        .collect::<Vec<_>>()
        .join("\n")
        .trim()
        .to_string();

    Ok(ParsedVerdict { found, cwe_id, snippet, rationale })
}

/// Parses a batch response into one verdict per expected CWE, reordered to
/// match `expected`. Blocks start at each VERDICT line; preamble prose
/// before the first block is ignored.
pub fn parse_detection_batch(text: &str, expected: &[String]) -> Result<Vec<ParsedVerdict>> {
    let mut block_starts: Vec<usize> = Vec::new();
    let lines: Vec<&str> = text.lines().collect();
    for (i, l) in lines.iter().enumerate() {
        if l.trim_start().starts_with("VERDICT:") {
            block_starts.push(i);
        }
    }
    if block_starts.is_empty() {
        return Err(malformed("batch response contains no VERDICT blocks"));
    }

    let mut parsed: Vec<ParsedVerdict> = Vec::new();
    for (bi, &start) in block_starts.iter().enumerate() {
        let end = block_starts.get(bi + 1).copied().unwrap_or(lines.len());
        let block = lines[start..end].join("\n");
        parsed.push(parse_detection_response(&block)?);
    }

    if parsed.len() != expected.len() {
        return Err(malformed(format!(
            "batch response has {} verdict blocks, expected {}",
            parsed.len(),
            expected.len()
        )));
    }
    let mut ordered = Vec::with_capacity(expected.len());
    for want in expected {
        let hits: Vec<usize> = parsed
            .iter()
            .enumerate()
            .filter(|(_, p)| &p.cwe_id == want)
            .map(|(i, _)| i)
            .collect();
        match hits.as_slice() {
            [one] => ordered.push(parsed[*one].clone()),
            [] => return Err(malformed(format!("batch response missing a verdict for {want}"))),
            _ => {
                return Err(malformed(format!("batch response has duplicate verdicts for {want}")))
            }
        }
    }
    Ok(ordered)
}

// ---------------------------------------------------------------------------
// Summarizer Agent
// ---------------------------------------------------------------------------

/// Everything produced by CWE enrichment prompts, before embedding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnrichedFields {
    pub summary: String,
    pub keywords: Vec<String>,
    pub vulnerable_snippet: String,
    pub secure_snippet: String,
}

pub struct Summarizer {
    llm: Arc<LlmClient>,
    profile: ModelProfile,
    prompts: Arc<PromptSet>,
}

impl Summarizer {
    pub fn new(llm: Arc<LlmClient>, profile: ModelProfile, prompts: Arc<PromptSet>) -> Self {
        Self { llm, profile, prompts }
    }

    pub fn profile(&self) -> &ModelProfile {
        &self.profile
    }

    /// Summarizes a design (prompt `p_s`). Designs that exceed the context
    /// window are split into chunks — preferentially at `module` boundaries
    /// — summarized independently, then merged with one final call, so the
    /// caller never sees a ContextOverflowError for large inputs.
    pub async fn summarize(&self, design: &RtlDesign) -> Result<String> {
        if design.source_text.trim().is_empty() {
            return Err(Error::validation("cannot summarize an empty design"));
        }
        let template = self.prompts.get(PromptName::PS);
        let overhead = estimate_tokens(&template.system_text)
            + estimate_tokens(&self.render_summary_user(template, &design.design_id, "")?);
        let budget = self
            .profile
            .context_window_tokens
            .saturating_sub(overhead + CHUNK_TOKEN_MARGIN)
            .max(1);

        if estimate_tokens(&design.source_text) <= budget {
            let user = self.render_summary_user(template, &design.design_id, &design.source_text)?;
            return self.non_empty_completion(&template.system_text, &user, "summary").await;
        }

        let chunks = chunk_source(&design.source_text, budget);
        let mut partials = Vec::with_capacity(chunks.len());
        for (i, chunk) in chunks.iter().enumerate() {
            let chunk_id = format!("{} (part {}/{})", design.design_id, i + 1, chunks.len());
            let user = self.render_summary_user(template, &chunk_id, chunk)?;
            partials
                .push(self.non_empty_completion(&template.system_text, &user, "summary").await?);
        }

        let merged_input = partials
            .iter()
            .enumerate()
            .map(|(i, s)| format!("Part {} of {}:\n{s}", i + 1, partials.len()))
            .collect::<Vec<_>>()
            .join("\n\n");
        let merge_user = format!(
            "The RTL design '{}' was too large for one pass and was summarized in \
             {} parts. Merge the partial summaries below into a single coherent \
             summary of the whole design, under 300 words of plain prose, \
             preserving concrete signal names.\n\n{merged_input}",
            design.design_id,
            partials.len(),
        );
        self.non_empty_completion(&template.system_text, &merge_user, "merged summary").await
    }

    fn render_summary_user(
        &self,
        template: &PromptTemplate,
        design_id: &str,
        source: &str,
    ) -> Result<String> {
        let mut bindings = BTreeMap::new();
        bindings.insert("design_id", design_id.to_string());
        bindings.insert("rtl_source", source.to_string());
        template.render(&bindings)
    }

    async fn non_empty_completion(
        &self,
        system: &str,
        user: &str,
        what: &str,
    ) -> Result<String> {
        let request = ChatRequest::new(&self.profile.model_name, system, user)?;
        let response = self.llm.complete(&request, &self.profile).await?;
        let text = response.text.trim().to_string();
        if text.is_empty() {
            return Err(Error::agent(format!("provider returned an empty {what}")));
        }
        Ok(text)
    }

    /// Enriches one raw CWE entry: summary + keywords via `p_sk`, the
    /// vulnerable/secure snippet pair via `p_vs`. Malformed responses are
    /// retried up to [`MALFORMED_RETRY_BUDGET`] times, then surfaced.
    pub async fn enrich_cwe(&self, entry: &RawCweEntry) -> Result<EnrichedFields> {
        let bindings = cwe_bindings(entry);

        let sk_user = self.prompts.get(PromptName::PSK).render(&bindings)?;
        let sk_system = self.prompts.get(PromptName::PSK).system_text.clone();
        let (summary, keywords) = self
            .with_malformed_retries(&sk_system, &sk_user, parse_summary_keywords)
            .await?;

        let vs_user = self.prompts.get(PromptName::PVS).render(&bindings)?;
        let vs_system = self.prompts.get(PromptName::PVS).system_text.clone();
        let (vulnerable_snippet, secure_snippet) = self
            .with_malformed_retries(&vs_system, &vs_user, parse_snippet_pair)
            .await?;

        Ok(EnrichedFields { summary, keywords, vulnerable_snippet, secure_snippet })
    }

    /// Issues the same request until the parser accepts the response or the
    /// retry budget is exhausted. The request is byte-identical on each
    /// attempt, so cached (record/replay) responses short-circuit the loop.
    async fn with_malformed_retries<T>(
        &self,
        system: &str,
        user: &str,
        parse: impl Fn(&str) -> Result<T>,
    ) -> Result<T> {
        let request = ChatRequest::new(&self.profile.model_name, system, user)?;
        let mut last_err = None;
        for _ in 0..=MALFORMED_RETRY_BUDGET {
            let response = self.llm.complete(&request, &self.profile).await?;
            match parse(&response.text) {
                Ok(value) => return Ok(value),
                Err(e) if e.kind == ErrorKind::MalformedAgentOutput => last_err = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(last_err.expect("loop ran at least once"))
    }
}

fn cwe_bindings(entry: &RawCweEntry) -> BTreeMap<&'static str, String> {
    let mut bindings = BTreeMap::new();
    bindings.insert("cwe_id", entry.cwe_id.clone());
    bindings.insert("title", entry.title.clone());
    bindings.insert("description", entry.description.clone());
    bindings.insert(
        "extended_description",
        if entry.extended_description.is_empty() {
            "(none)".to_string()
        } else {
            entry.extended_description.clone()
        },
    );
    bindings.insert("mitigations", join_or_none(&entry.mitigations));
    bindings.insert("modes_of_introduction", join_or_none(&entry.modes_of_introduction));
    bindings
}

fn join_or_none(items: &[String]) -> String {
    if items.is_empty() {
        "(none)".to_string()
    } else {
        items.join("; ")
    }
}

/// Parses the `p_sk` contract: a `SUMMARY:` section followed by a
/// `KEYWORDS:` section of comma-separated lowercase terms.
pub fn parse_summary_keywords(text: &str) -> Result<(String, Vec<String>)> {
    let lines: Vec<&str> = text.lines().collect();
    let summary_idx = lines
        .iter()
        .position(|l| l.trim_start().starts_with("SUMMARY:"))
        .ok_or_else(|| malformed("no SUMMARY: section"))?;
    let keywords_idx = lines
        .iter()
        .enumerate()
        .skip(summary_idx)
        .find(|(_, l)| l.trim_start().starts_with("KEYWORDS:"))
        .map(|(i, _)| i)
        .ok_or_else(|| malformed("no KEYWORDS: section after SUMMARY:"))?;

    let mut summary = lines[summary_idx].trim_start()["SUMMARY:".len()..].trim().to_string();
    let rest = lines[summary_idx + 1..keywords_idx].join("\n");
    if !rest.trim().is_empty() {
        if !summary.is_empty() {
            summary.push(' ');
        }
        summary.push_str(normalize_whitespace(&rest).as_str());
    }
    if summary.is_empty() {
        return Err(malformed("SUMMARY: section is empty"));
    }

    let mut keyword_text =
        lines[keywords_idx].trim_start()["KEYWORDS:".len()..].trim().to_string();
    let tail = lines[keywords_idx + 1..].join(" ");
    if !tail.trim().is_empty() {
        keyword_text.push(' ');
        keyword_text.push_str(tail.trim());
    }
    let mut keywords: Vec<String> = keyword_text
        .split([',', '\n'])
        .map(|k| k.trim().to_lowercase())
        .filter(|k| !k.is_empty())
        .collect();
    keywords.dedup();
    if keywords.is_empty() {
        return Err(malformed("KEYWORDS: section lists no terms"));
    }
    Ok((summary, keywords))
}

/// Parses the `p_vs` contract: `VULNERABLE:` and `SECURE:` labels, each
/// followed by a fenced code block.
pub fn parse_snippet_pair(text: &str) -> Result<(String, String)> {
    let vulnerable = fenced_block_after_label(text, "VULNERABLE:")?;
    let secure = fenced_block_after_label(text, "SECURE:")?;
    Ok((vulnerable, secure))
}

fn fenced_block_after_label(text: &str, label: &str) -> Result<String> {
    let lines: Vec<&str> = text.lines().collect();
    let label_idx = lines
        .iter()
        .position(|l| l.trim_start().starts_with(label))
        .ok_or_else(|| malformed(format!("no {label} section")))?;
    let open = lines
        .iter()
        .enumerate()
        .skip(label_idx + 1)
        .find(|(_, l)| l.trim_start().starts_with("```"))
        .map(|(i, _)| i)
        .ok_or_else(|| malformed(format!("{label} not followed by a fenced block")))?;
    let close = lines
        .iter()
        .enumerate()
        .skip(open + 1)
        .find(|(_, l)| l.trim_start().starts_with("```"))
        .map(|(i, _)| i)
        .ok_or_else(|| malformed(format!("{label} block is unterminated")))?;
    let body = lines[open + 1..close].join("\n");
    if body.trim().is_empty() {
        return Err(malformed(format!("{label} block is empty")));
    }
    Ok(body)
}

/// Greedy line-wise chunking with preferred breaks at `module` starts.
/// `budget_tokens` bounds each chunk by the bytes/3 estimate; a single
/// oversized line is hard-split at character boundaries. Concatenating the
/// chunks reproduces the input exactly.
fn chunk_source(source: &str, budget_tokens: u64) -> Vec<String> {
    let budget_bytes = (budget_tokens.saturating_mul(3)).max(1) as usize;
    let mut chunks: Vec<String> = Vec::new();
    let mut current = String::new();

    for line in source.split_inclusive('\n') {
        let starts_module = {
            let lower = line.trim_start().to_ascii_lowercase();
            lower.starts_with("module")
                && lower.chars().nth(6).is_none_or(|c| !c.is_ascii_alphanumeric() && c != '_')
        };
        if !current.is_empty() && (current.len() + line.len() > budget_bytes || starts_module) {
            chunks.push(std::mem::take(&mut current));
        }
        if line.len() > budget_bytes {
            // A single line larger than the whole budget: split it raw.
            let mut rest = line;
            while rest.len() > budget_bytes {
                let mut cut = budget_bytes;
                while !rest.is_char_boundary(cut) {
                    cut -= 1;
                }
                if cut == 0 {
                    // Budget smaller than one character: emit that character.
                    cut = rest.chars().next().map_or(rest.len(), char::len_utf8);
                }
                chunks.push(rest[..cut].to_string());
                rest = &rest[cut..];
            }
            current.push_str(rest);
            continue;
        }
        current.push_str(line);
    }
    if !current.is_empty() {
        chunks.push(current);
    }
    if chunks.is_empty() {
        chunks.push(source.to_string());
    }
    chunks
}

// ---------------------------------------------------------------------------
// Detection Agent
// ---------------------------------------------------------------------------

/// The mode actually used after auto-selection and fallback.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UsedMode {
    Iterative,
    Batch,
}

impl fmt::Display for UsedMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UsedMode::Iterative => "iterative",
            UsedMode::Batch => "batch",
        })
    }
}

/// How detection mode was chosen, recorded in run manifests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeReport {
    pub requested: DetectionMode,
    pub used: UsedMode,
    /// Present when the used mode differs from a requested/attempted batch.
    pub fallback_reason: Option<String>,
}

/// Detection output for one design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionOutcome {
    pub findings: Vec<DetectionFinding>,
    pub mode: ModeReport,
}

/// Formats one CWE's knowledge-base context for the detection prompt.
fn cwe_context_block(record: &EnrichedCweRecord) -> String {
    format!(
        "CWE: {id}\nTitle: {title}\nSummary: {summary}\nKeywords: {keywords}\n\
         Vulnerable pattern:\n```verilog\n{vuln}\n```\nSecure pattern:\n```verilog\n{secure}\n```",
        id = record.cwe_id,
        title = record.title,
        summary = record.summary,
        keywords = record.keywords.join(", "),
        vuln = record.vulnerable_snippet,
        secure = record.secure_snippet,
    )
}

/// Renders detection requests: one per CWE in iterative mode, a single
/// combined request in batch mode. For a single CWE the two modes render
/// identical requests.
pub fn render_detection_prompt(
    design: &RtlDesign,
    summary: &str,
    cwes: &[&EnrichedCweRecord],
    mode: UsedMode,
    prompts: &PromptSet,
    profile: &ModelProfile,
) -> Result<Vec<ChatRequest>> {
    if cwes.is_empty() {
        return Err(Error::validation("detection needs at least one candidate CWE"));
    }
    let template = prompts.get(PromptName::PDet);
    let render_with_context = |context: String| -> Result<ChatRequest> {
        let mut bindings = BTreeMap::new();
        bindings.insert("design_id", design.design_id.clone());
        bindings.insert("rtl_source", design.source_text.clone());
        bindings.insert("rtl_summary", summary.to_string());
        bindings.insert("cwe_context", context);
        let user = template.render(&bindings)?;
        ChatRequest::new(&profile.model_name, &template.system_text, &user)
    };

    match mode {
        UsedMode::Iterative => {
            cwes.iter().map(|r| render_with_context(cwe_context_block(r))).collect()
        }
        UsedMode::Batch => {
            let context = cwes
                .iter()
                .map(|r| cwe_context_block(r))
                .collect::<Vec<_>>()
                .join("\n\n");
            let request = render_with_context(context)?;
            let estimated = request.estimated_input_tokens();
            if estimated > profile.context_window_tokens {
                return Err(Error::new(
                    ErrorKind::ContextOverflow,
                    format!(
                        "batch prompt for {} CWEs estimated at {estimated} tokens exceeds \
                         window of {} tokens",
                        cwes.len(),
                        profile.context_window_tokens
                    ),
                ));
            }
            Ok(vec![request])
        }
    }
}

/// Runs the Detection Agent for one design over its retrieved CWEs.
///
/// Mode selection: `iterative` and `batch` honor the request (batch falls
/// back to iterative when the combined prompt overflows or the batch
/// response stays malformed through the retry budget); `auto` picks batch
/// only when the profile's window clears `context_window_threshold` and the
/// prompt fits. Provider failures never abort the design — the affected
/// CWEs come back as `indeterminate` findings.
#[allow(clippy::too_many_arguments)]
pub async fn detect(
    llm: &LlmClient,
    profile: &ModelProfile,
    prompts: &PromptSet,
    design: &RtlDesign,
    summary: &str,
    ranked: &[RankedCwe],
    kb: &crate::kb::CweKnowledgeBase,
    requested_mode: DetectionMode,
    context_window_threshold: u64,
) -> Result<DetectionOutcome> {
    if ranked.is_empty() {
        return Err(Error::config(
            "retrieval returned no CWEs — is the knowledge base empty?",
        ));
    }
    let cwes: Vec<&EnrichedCweRecord> = ranked
        .iter()
        .map(|r| {
            kb.get(&r.cwe_id).ok_or_else(|| {
                Error::internal(format!("retrieved {} missing from knowledge base", r.cwe_id))
            })
        })
        .collect::<Result<_>>()?;

    let mut fallback_reason: Option<String> = None;
    let attempt_batch = match requested_mode {
        DetectionMode::Iterative => false,
        DetectionMode::Batch => true,
        // Auto picking iterative by threshold is a choice, not a fallback;
        // `requested: auto, used: iterative` already records it.
        DetectionMode::Auto => profile.supports_batch_cwe(context_window_threshold),
    };

    if attempt_batch {
        match render_detection_prompt(design, summary, &cwes, UsedMode::Batch, prompts, profile) {
            Ok(requests) => {
                let request = &requests[0];
                match run_batch(llm, profile, request, ranked).await {
                    Ok(parsed) => {
                        let findings = parsed
                            .into_iter()
                            .zip(ranked)
                            .enumerate()
                            .map(|(i, ((verdict, raw), _))| {
                                finding_from_parsed(design, verdict, raw, i as u32 + 1)
                            })
                            .collect();
                        return Ok(DetectionOutcome {
                            findings,
                            mode: ModeReport {
                                requested: requested_mode,
                                used: UsedMode::Batch,
                                fallback_reason: None,
                            },
                        });
                    }
                    Err(e) => {
                        fallback_reason = Some(format!("batch attempt failed ({e}); fell back to iterative"));
                    }
                }
            }
            Err(e) if e.kind == ErrorKind::ContextOverflow => {
                fallback_reason = Some(format!("{e}; fell back to iterative"));
            }
            Err(e) => return Err(e),
        }
    }

    let requests =
        render_detection_prompt(design, summary, &cwes, UsedMode::Iterative, prompts, profile)?;
    let mut findings = Vec::with_capacity(requests.len());
    for (i, (request, ranked_cwe)) in requests.iter().zip(ranked).enumerate() {
        let rank = i as u32 + 1;
        let finding =
            run_iterative_one(llm, profile, request, &ranked_cwe.cwe_id, design, rank).await;
        findings.push(finding);
    }
    Ok(DetectionOutcome {
        findings,
        mode: ModeReport {
            requested: requested_mode,
            used: UsedMode::Iterative,
            fallback_reason,
        },
    })
}

/// One batch attempt cycle with malformed-response retries. Returns per-CWE
/// parsed verdicts paired with the raw response text.
async fn run_batch(
    llm: &LlmClient,
    profile: &ModelProfile,
    request: &ChatRequest,
    ranked: &[RankedCwe],
) -> Result<Vec<(ParsedVerdict, String)>> {
    let expected: Vec<String> = ranked.iter().map(|r| r.cwe_id.clone()).collect();
    let mut last_err = Error::internal("batch loop did not run");
    for _ in 0..=MALFORMED_RETRY_BUDGET {
        let response = llm.complete(request, profile).await?;
        match parse_detection_batch(&response.text, &expected) {
            Ok(parsed) => {
                return Ok(parsed
                    .into_iter()
                    .map(|p| (p, response.text.clone()))
                    .collect());
            }
            Err(e) if e.kind == ErrorKind::MalformedAgentOutput => last_err = e,
            Err(e) => return Err(e),
        }
    }
    Err(last_err)
}

/// One iterative CWE judgment; provider failures and exhausted retries
/// produce an indeterminate finding instead of an error.
async fn run_iterative_one(
    llm: &LlmClient,
    profile: &ModelProfile,
    request: &ChatRequest,
    expected_cwe: &str,
    design: &RtlDesign,
    rank: u32,
) -> DetectionFinding {
    let mut failure = String::new();
    let mut raw = String::new();
    for _ in 0..=MALFORMED_RETRY_BUDGET {
        match llm.complete(request, profile).await {
            Ok(response) => {
                raw = response.text.clone();
                match parse_detection_response(&response.text) {
                    Ok(parsed) if parsed.cwe_id == expected_cwe => {
                        return finding_from_parsed(design, parsed, raw, rank);
                    }
                    Ok(parsed) => {
                        failure = format!(
                            "agent answered for {} while {} was asked",
                            parsed.cwe_id, expected_cwe
                        );
                    }
                    Err(e) => failure = e.to_string(),
                }
            }
            Err(e) => {
                // complete() already ran its own transport retries.
                return indeterminate_finding(design, expected_cwe, e.to_string(), raw, rank);
            }
        }
    }
    indeterminate_finding(design, expected_cwe, failure, raw, rank)
}

fn finding_from_parsed(
    design: &RtlDesign,
    parsed: ParsedVerdict,
    raw_response: String,
    rank: u32,
) -> DetectionFinding {
    let snippet_in_source = parsed.found.then(|| {
        normalize_whitespace(&design.source_text).contains(&normalize_whitespace(&parsed.snippet))
    });
    DetectionFinding {
        design_id: design.design_id.clone(),
        cwe_id: parsed.cwe_id,
        verdict: if parsed.found { Verdict::Found } else { Verdict::NotFound },
        snippet: if parsed.found { parsed.snippet } else { String::new() },
        rationale: parsed.rationale,
        raw_response,
        retrieval_rank: rank,
        snippet_in_source,
    }
}

fn indeterminate_finding(
    design: &RtlDesign,
    cwe_id: &str,
    reason: String,
    raw_response: String,
    rank: u32,
) -> DetectionFinding {
    DetectionFinding {
        design_id: design.design_id.clone(),
        cwe_id: cwe_id.to_string(),
        verdict: Verdict::Indeterminate,
        snippet: String::new(),
        rationale: reason,
        raw_response,
        retrieval_rank: rank,
        snippet_in_source: None,
    }
}

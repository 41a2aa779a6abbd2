//! Benchmark metrics: ROUGE-L snippet localization, detection accuracy,
//! retrieval hit counts, and report assembly/rendering.
//!
//! Everything here is a pure computation over findings produced elsewhere;
//! reports are assembled deterministically (cases sorted by id) so equal
//! inputs produce byte-identical output.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::agents::{DetectionFinding, Verdict};
use crate::error::{Error, ErrorKind, Result};
use crate::model::BenchmarkCase;
use crate::retrieval::RetrievalResult;
use crate::util::format_percent;

/// ROUGE-L similarity between two token sequences.
///
/// With the longest common subsequence `lcs`, precision is `lcs/|candidate|`,
/// recall is `lcs/|reference|`, and
/// `f = (1 + β²)·P·R / (R + β²·P)`, defined as 0 when both P and R are 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f_lcs: f64,
    pub lcs_length: u64,
    pub beta_weight: f64,
}

/// Whitespace-split tokens of a raw text fragment. Indentation and line
/// breaks never affect the score.
pub fn tokenize_snippet(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}

/// Longest common subsequence length via two-row dynamic programming.
fn lcs_length<T: AsRef<str>>(reference: &[T], candidate: &[T]) -> u64 {
    if reference.is_empty() || candidate.is_empty() {
        return 0;
    }
    let mut prev = vec![0u64; candidate.len() + 1];
    let mut curr = vec![0u64; candidate.len() + 1];
    for r in reference {
        for (j, c) in candidate.iter().enumerate() {
            curr[j + 1] = if r.as_ref() == c.as_ref() {
                prev[j] + 1
            } else {
                prev[j + 1].max(curr[j])
            };
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[candidate.len()]
}

/// ROUGE-L over token sequences. Degenerate inputs (either side empty, no
/// overlap) score zero rather than erroring; only a non-positive or
/// non-finite β is rejected.
pub fn rouge_l<T: AsRef<str>>(
    reference: &[T],
    candidate: &[T],
    beta_weight: f64,
) -> Result<RougeScore> {
    if !beta_weight.is_finite() || beta_weight <= 0.0 {
        return Err(Error::validation(format!(
            "rouge beta weight must be a positive finite number, got {beta_weight}"
        )));
    }
    let lcs = lcs_length(reference, candidate);
    let precision = if candidate.is_empty() { 0.0 } else { lcs as f64 / candidate.len() as f64 };
    let recall = if reference.is_empty() { 0.0 } else { lcs as f64 / reference.len() as f64 };
    let beta_sq = beta_weight * beta_weight;
    let denom = recall + beta_sq * precision;
    let f_lcs = if denom == 0.0 { 0.0 } else { (1.0 + beta_sq) * precision * recall / denom };
    Ok(RougeScore { precision, recall, f_lcs, lcs_length: lcs, beta_weight })
}

/// Per-case evaluation row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerCaseRecord {
    pub case_id: String,
    pub gold_cwe_id: String,
    /// True iff some finding reported the gold CWE as found.
    pub detected: bool,
    /// 1-based rank of the gold CWE in the retrieval result, if retrieved.
    pub matched_cwe_rank: Option<u32>,
    /// ROUGE-L of the matching finding's snippet against the gold snippet;
    /// absent when the case was not detected.
    pub rouge: Option<RougeScore>,
    /// CWE ids reported as found that differ from the gold label.
    pub other_found_cwe_ids: Vec<String>,
}

/// Scores one case against its findings. When several findings report the
/// gold CWE, the one at the best (lowest) retrieval rank is scored.
pub fn score_case(
    case: &BenchmarkCase,
    findings: &[DetectionFinding],
    retrieval: &RetrievalResult,
) -> Result<PerCaseRecord> {
    let matching = findings
        .iter()
        .filter(|f| f.verdict == Verdict::Found && f.cwe_id == case.gold_cwe_id)
        .min_by_key(|f| f.retrieval_rank);
    let rouge = match matching {
        Some(finding) => Some(rouge_l(
            &tokenize_snippet(&case.gold_snippet),
            &tokenize_snippet(&finding.snippet),
            1.0,
        )?),
        None => None,
    };
    let mut other_found: Vec<String> = findings
        .iter()
        .filter(|f| f.verdict == Verdict::Found && f.cwe_id != case.gold_cwe_id)
        .map(|f| f.cwe_id.clone())
        .collect();
    other_found.sort();
    other_found.dedup();
    Ok(PerCaseRecord {
        case_id: case.case_id.clone(),
        gold_cwe_id: case.gold_cwe_id.clone(),
        detected: matching.is_some(),
        matched_cwe_rank: retrieval.rank_of(&case.gold_cwe_id),
        rouge,
        other_found_cwe_ids: other_found,
    })
}

/// Fraction of cases detected, in [0,1].
pub fn detection_accuracy(per_case: &[PerCaseRecord]) -> Result<f64> {
    if per_case.is_empty() {
        return Err(Error::new(
            ErrorKind::EmptyDataset,
            "cannot compute detection accuracy over zero cases",
        ));
    }
    let detected = per_case.iter().filter(|r| r.detected).count();
    Ok(detected as f64 / per_case.len() as f64)
}

/// Counts of cases whose gold CWE was retrieved within the top 1/5/10.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RetrievalHits {
    pub t1: u64,
    pub t5: u64,
    pub t10: u64,
}

pub fn retrieval_hits(per_case: &[PerCaseRecord]) -> RetrievalHits {
    let within = |n: u32| {
        per_case.iter().filter(|r| r.matched_cwe_rank.is_some_and(|rank| rank <= n)).count() as u64
    };
    RetrievalHits { t1: within(1), t5: within(5), t10: within(10) }
}

/// Run context carried into every report.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub detection_model: String,
    pub enrichment_model: String,
    pub embedding_provider: String,
    pub detection_mode: String,
    pub field_combiner: String,
    pub top_k: usize,
    pub config_hash: String,
    pub generated_at: String,
}

/// Full benchmark evaluation, serialized as `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub metadata: ReportMetadata,
    pub per_case: Vec<PerCaseRecord>,
    pub case_count: u64,
    pub detected_count: u64,
    /// Detected fraction in [0,1]; rendered as a two-decimal percentage.
    pub detection_accuracy: f64,
    pub detection_accuracy_percent: String,
    pub retrieval_hits: RetrievalHits,
    /// Mean ROUGE-L F over detected cases only; absent when nothing was
    /// detected.
    pub mean_rouge_f_detected: Option<f64>,
    /// Mean ROUGE-L F over all cases, counting undetected cases as 0.
    pub mean_rouge_f_zero_filled: f64,
}

impl EvaluationReport {
    /// Assembles a report from per-case rows, sorting by case id so the
    /// output is independent of scoring order.
    pub fn assemble(mut per_case: Vec<PerCaseRecord>, metadata: ReportMetadata) -> Result<Self> {
        per_case.sort_by(|a, b| a.case_id.cmp(&b.case_id));
        let accuracy = detection_accuracy(&per_case)?;
        let hits = retrieval_hits(&per_case);
        let detected: Vec<f64> =
            per_case.iter().filter_map(|r| r.rouge.as_ref().map(|s| s.f_lcs)).collect();
        let mean_detected = if detected.is_empty() {
            None
        } else {
            Some(detected.iter().sum::<f64>() / detected.len() as f64)
        };
        let zero_filled = per_case
            .iter()
            .map(|r| r.rouge.as_ref().map_or(0.0, |s| s.f_lcs))
            .sum::<f64>()
            / per_case.len() as f64;
        Ok(EvaluationReport {
            metadata,
            case_count: per_case.len() as u64,
            detected_count: per_case.iter().filter(|r| r.detected).count() as u64,
            detection_accuracy: accuracy,
            detection_accuracy_percent: format_percent(accuracy),
            retrieval_hits: hits,
            mean_rouge_f_detected: mean_detected,
            mean_rouge_f_zero_filled: zero_filled,
            per_case,
        })
    }

    /// Renders the human-readable `report.md` companion.
    pub fn render_markdown(&self) -> String {
        let mut out = String::new();
        out.push_str("# Benchmark report\n\n");
        out.push_str(&format!(
            "- Detection model: `{}` (mode: {})\n",
            self.metadata.detection_model, self.metadata.detection_mode
        ));
        out.push_str(&format!(
            "- Knowledge base: `{}` enriched, `{}` embeddings, top-{} retrieval ({} combiner)\n",
            self.metadata.enrichment_model,
            self.metadata.embedding_provider,
            self.metadata.top_k,
            self.metadata.field_combiner
        ));
        out.push_str(&format!("- Config hash: `{}`\n", self.metadata.config_hash));
        out.push_str(&format!("- Generated at: {}\n\n", self.metadata.generated_at));

        out.push_str("| Case | Gold CWE | Detected | Retrieval rank | ROUGE-L |\n");
        out.push_str("|---|---|---|---|---|\n");
        for row in &self.per_case {
            let rank = row.matched_cwe_rank.map_or("—".to_string(), |r| r.to_string());
            let rouge = row.rouge.as_ref().map_or("—".to_string(), |s| format_percent(s.f_lcs));
            out.push_str(&format!(
                "| {} | {} | {} | {} | {} |\n",
                row.case_id,
                row.gold_cwe_id,
                if row.detected { "yes" } else { "no" },
                rank,
                rouge
            ));
        }

        out.push_str(&format!(
            "\nDetection accuracy: **{}** ({} of {} cases)\n\n",
            self.detection_accuracy_percent, self.detected_count, self.case_count
        ));
        out.push_str("| T1 | T5 | T10 |\n|---|---|---|\n");
        out.push_str(&format!(
            "| {} | {} | {} |\n",
            self.retrieval_hits.t1, self.retrieval_hits.t5, self.retrieval_hits.t10
        ));
        if let Some(mean) = self.mean_rouge_f_detected {
            out.push_str(&format!(
                "\nMean ROUGE-L over detected cases: {} (zero-filled over all cases: {})\n",
                format_percent(mean),
                format_percent(self.mean_rouge_f_zero_filled)
            ));
        } else {
            out.push_str("\nMean ROUGE-L: — (no case was detected)\n");
        }
        out
    }
}

/// Side-by-side before/after comparison of two runs over the same cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub before: EvaluationReport,
    pub after: EvaluationReport,
}

impl ComparisonReport {
    pub fn new(before: EvaluationReport, after: EvaluationReport) -> Result<Self> {
        let before_ids: Vec<&str> = before.per_case.iter().map(|r| r.case_id.as_str()).collect();
        let after_ids: Vec<&str> = after.per_case.iter().map(|r| r.case_id.as_str()).collect();
        if before_ids != after_ids {
            return Err(Error::validation(
                "comparison requires both runs to cover the same cases",
            ));
        }
        Ok(ComparisonReport { before, after })
    }

    pub fn render_markdown(&self) -> String {
        let mut out = String::new();
        out.push_str("# Before/after comparison\n\n");
        out.push_str("| Case | Gold CWE | Detected (before) | Detected (after) | ROUGE-L (before) | ROUGE-L (after) |\n");
        out.push_str("|---|---|---|---|---|---|\n");
        let after_by_id: BTreeMap<&str, &PerCaseRecord> =
            self.after.per_case.iter().map(|r| (r.case_id.as_str(), r)).collect();
        for b in &self.before.per_case {
            let a = after_by_id[b.case_id.as_str()];
            let fmt_detected = |d: bool| if d { "yes" } else { "no" };
            let fmt_rouge = |r: &Option<RougeScore>| {
                r.as_ref().map_or("—".to_string(), |s| format_percent(s.f_lcs))
            };
            out.push_str(&format!(
                "| {} | {} | {} | {} | {} | {} |\n",
                b.case_id,
                b.gold_cwe_id,
                fmt_detected(b.detected),
                fmt_detected(a.detected),
                fmt_rouge(&b.rouge),
                fmt_rouge(&a.rouge)
            ));
        }
        out.push_str(&format!(
            "\nDetection accuracy: {} before → {} after\n",
            self.before.detection_accuracy_percent, self.after.detection_accuracy_percent
        ));
        out
    }
}

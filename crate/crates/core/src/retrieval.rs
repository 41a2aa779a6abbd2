//! Vector math and top-k CWE retrieval.
//!
//! A design's query embedding is the weighted sum of its summary and
//! signature embeddings (defaults α=0.7, β=0.3). Each knowledge-base record
//! is scored by combining the cosine similarities of its three searchable
//! fields — max by default, so one strongly matching field is enough; mean
//! is available for comparison. The scan is exhaustive and exact: at
//! knowledge-base scale (tens of records) an approximate index would only
//! add error.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingVector;
use crate::error::{Error, ErrorKind, Result};
use crate::kb::CweKnowledgeBase;
use crate::model::HardwareSignature;
use crate::util::cwe_numeric;

/// How per-field cosine scores collapse into one record score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldCombiner {
    #[default]
    Max,
    Mean,
}

impl fmt::Display for FieldCombiner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FieldCombiner::Max => "max",
            FieldCombiner::Mean => "mean",
        })
    }
}

impl FromStr for FieldCombiner {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "max" => Ok(FieldCombiner::Max),
            "mean" => Ok(FieldCombiner::Mean),
            other => Err(Error::config(format!(
                "unknown field combiner '{other}' (expected max or mean)"
            ))),
        }
    }
}

/// One retrieval hit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCwe {
    pub cwe_id: String,
    /// Combined score in [-1, 1].
    pub score: f64,
    /// Field with the highest cosine against the query.
    pub best_field: String,
}

/// Ranked retrieval output, best first.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub ranked: Vec<RankedCwe>,
}

impl RetrievalResult {
    pub fn len(&self) -> usize {
        self.ranked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranked.is_empty()
    }

    /// 1-based rank of a CWE, if retrieved.
    pub fn rank_of(&self, cwe_id: &str) -> Option<u32> {
        self.ranked.iter().position(|r| r.cwe_id == cwe_id).map(|i| i as u32 + 1)
    }
}

/// Cosine similarity, clamped into [-1, 1] to absorb rounding.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dimension() != b.dimension() {
        return Err(Error::dimension_mismatch(a.dimension(), b.dimension()));
    }
    let norm_a = a.l2_norm();
    let norm_b = b.l2_norm();
    if norm_a == 0.0 || norm_b == 0.0 {
        return Err(Error::new(
            ErrorKind::ZeroVector,
            "cosine similarity of a zero vector is undefined",
        ));
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    Ok((dot / (norm_a * norm_b)).clamp(-1.0, 1.0))
}

/// Composes the retrieval query Q = α·summary + β·signature.
///
/// A design with no hardware signature falls back to the summary embedding
/// alone — regardless of β — since a zero signature vector is meaningless.
/// With α=1 and β=0 the summary embedding is returned bit-identically.
pub fn compose_query(
    summary_emb: &EmbeddingVector,
    signature_emb: Option<&EmbeddingVector>,
    alpha: f64,
    beta: f64,
) -> Result<EmbeddingVector> {
    if !(alpha.is_finite() && beta.is_finite()) || alpha + beta <= 0.0 {
        return Err(Error::validation(format!(
            "query weights must be finite with alpha + beta > 0, got α={alpha}, β={beta}"
        )));
    }
    let Some(signature_emb) = signature_emb else {
        return Ok(summary_emb.clone().with_field("query"));
    };
    if summary_emb.dimension() != signature_emb.dimension() {
        return Err(Error::dimension_mismatch(
            summary_emb.dimension(),
            signature_emb.dimension(),
        ));
    }
    if alpha == 1.0 && beta == 0.0 {
        // Cloned verbatim: `1.0*s + 0.0*k` would flip the sign of a negative
        // zero, and the identity weights promise bit-exact output.
        return Ok(summary_emb.clone().with_field("query"));
    }
    let values = summary_emb
        .values
        .iter()
        .zip(&signature_emb.values)
        .map(|(s, k)| alpha * s + beta * k)
        .collect();
    EmbeddingVector::new(values, "query")
}

/// Signature embedding input for [`compose_query`]: `None` when the design
/// has an empty signature.
pub fn signature_for_query<'a>(
    signature: &HardwareSignature,
    embedding: &'a EmbeddingVector,
) -> Option<&'a EmbeddingVector> {
    if signature.is_empty() {
        None
    } else {
        Some(embedding)
    }
}

/// Exhaustively scores every record against the query and returns the top
/// `k`, ties broken by ascending numeric CWE id.
pub fn retrieve_top_k(
    kb: &CweKnowledgeBase,
    query: &EmbeddingVector,
    k: usize,
    combiner: FieldCombiner,
) -> Result<RetrievalResult> {
    if k == 0 {
        return Err(Error::validation("top_k must be at least 1"));
    }
    if !kb.is_empty() && query.dimension() != kb.embedding_dimension {
        return Err(Error::dimension_mismatch(kb.embedding_dimension, query.dimension()));
    }

    let mut scored: Vec<RankedCwe> = Vec::with_capacity(kb.len());
    for record in &kb.records {
        let mut best: Option<(&str, f64)> = None;
        let mut sum = 0.0;
        for (field, vector) in &record.field_embeddings {
            let score = cosine(query, vector)?;
            sum += score;
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((field, score));
            }
        }
        let (best_field, best_score) =
            best.ok_or_else(|| Error::internal(format!("{} has no embeddings", record.cwe_id)))?;
        let combined = match combiner {
            FieldCombiner::Max => best_score,
            FieldCombiner::Mean => sum / record.field_embeddings.len() as f64,
        };
        scored.push(RankedCwe {
            cwe_id: record.cwe_id.clone(),
            score: combined,
            best_field: best_field.to_string(),
        });
    }

    scored.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("cosine scores are finite")
            .then_with(|| cwe_numeric(&a.cwe_id).cmp(&cwe_numeric(&b.cwe_id)))
    });
    scored.truncate(k);
    Ok(RetrievalResult { ranked: scored })
}

//! The CWE knowledge base: ingest raw entries, enrich them into
//! multi-field metadata via the Summarizer Agent, attach per-field
//! embeddings, and persist the result.
//!
//! A built knowledge base is immutable. On disk it is a directory holding
//! `manifest.json` (format version, dimension, provenance, record count)
//! and `records.jsonl` (one enriched record per line, embeddings as decimal
//! floats that round-trip bit-exactly).

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agents::Summarizer;
use crate::embedding::{Embedder, EmbeddingVector};
use crate::error::{Error, ErrorKind, Result};
use crate::util::{cwe_numeric, is_valid_cwe_id};

pub const KB_FORMAT_VERSION: u32 = 1;
pub const KB_MANIFEST_FILE: &str = "manifest.json";
pub const KB_RECORDS_FILE: &str = "records.jsonl";

/// The three searchable fields every record embeds.
pub const FIELD_SUMMARY: &str = "summary";
pub const FIELD_KEYWORDS: &str = "keywords";
pub const FIELD_VULNERABLE: &str = "vulnerable_snippet";
pub const SEARCHABLE_FIELDS: [&str; 3] = [FIELD_SUMMARY, FIELD_KEYWORDS, FIELD_VULNERABLE];

/// One CWE entry as exported from the catalog, before enrichment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawCweEntry {
    pub cwe_id: String,
    pub title: String,
    pub description: String,
    #[serde(default)]
    pub extended_description: String,
    #[serde(default)]
    pub mitigations: Vec<String>,
    #[serde(default)]
    pub modes_of_introduction: Vec<String>,
}

impl RawCweEntry {
    pub fn validate(&self) -> Result<()> {
        if !is_valid_cwe_id(&self.cwe_id) {
            return Err(Error::schema(format!(
                "cwe_id must look like CWE-<n>, got {:?}",
                self.cwe_id
            )));
        }
        if self.title.trim().is_empty() || self.description.trim().is_empty() {
            return Err(Error::schema(format!(
                "{}: title and description must be non-empty",
                self.cwe_id
            )));
        }
        Ok(())
    }
}

/// A CWE record after Summarizer enrichment and (optionally) embedding.
///
/// `field_embeddings` maps each searchable field name to its vector; it is
/// empty between enrichment and embedding. The secure snippet is stored for
/// the Detection Agent's context but never embedded or searched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrichedCweRecord {
    pub cwe_id: String,
    pub title: String,
    pub summary: String,
    pub keywords: Vec<String>,
    pub vulnerable_snippet: String,
    pub secure_snippet: String,
    #[serde(default)]
    pub field_embeddings: std::collections::BTreeMap<String, EmbeddingVector>,
}

impl EnrichedCweRecord {
    fn validate_fields(&self) -> Result<()> {
        if !is_valid_cwe_id(&self.cwe_id) {
            return Err(Error::schema(format!("bad cwe_id {:?}", self.cwe_id)));
        }
        for (name, value) in [
            ("title", &self.title),
            ("summary", &self.summary),
            ("vulnerable_snippet", &self.vulnerable_snippet),
            ("secure_snippet", &self.secure_snippet),
        ] {
            if value.trim().is_empty() {
                return Err(Error::schema(format!("{}: {name} is empty", self.cwe_id)));
            }
        }
        if self.keywords.is_empty() {
            return Err(Error::schema(format!("{}: keywords are empty", self.cwe_id)));
        }
        if let Some(k) = self.keywords.iter().find(|k| k.chars().any(|c| c.is_uppercase())) {
            return Err(Error::schema(format!("{}: keyword {k:?} is not lowercase", self.cwe_id)));
        }
        Ok(())
    }

    fn validate_embedded(&self, dimension: usize) -> Result<()> {
        self.validate_fields()?;
        let fields: BTreeSet<&str> =
            self.field_embeddings.keys().map(String::as_str).collect();
        let expected: BTreeSet<&str> = SEARCHABLE_FIELDS.into_iter().collect();
        if fields != expected {
            return Err(Error::schema(format!(
                "{}: embedded fields {fields:?} differ from {expected:?}",
                self.cwe_id
            )));
        }
        for (field, vector) in &self.field_embeddings {
            if vector.dimension() != dimension {
                return Err(Error::dimension_mismatch(dimension, vector.dimension()));
            }
            let norm = vector.l2_norm();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(Error::validation(format!(
                    "{} {field}: embedding norm {norm} is not unit",
                    self.cwe_id
                )));
            }
        }
        Ok(())
    }

    /// Space-joined keywords, the text actually embedded for this field.
    pub fn keywords_text(&self) -> String {
        self.keywords.join(" ")
    }
}

/// Who/what built the knowledge base.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KbProvenance {
    pub enrichment_model: String,
    pub embedding_provider: String,
    pub built_at: String,
}

/// Immutable, fully embedded knowledge base, sorted by numeric CWE id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CweKnowledgeBase {
    pub records: Vec<EnrichedCweRecord>,
    pub embedding_dimension: usize,
    pub provenance: KbProvenance,
}

impl CweKnowledgeBase {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, cwe_id: &str) -> Option<&EnrichedCweRecord> {
        self.records.iter().find(|r| r.cwe_id == cwe_id)
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding_dimension == 0 {
            return Err(Error::validation("knowledge base dimension must be positive"));
        }
        let mut seen: Option<u64> = None;
        for record in &self.records {
            record.validate_embedded(self.embedding_dimension)?;
            let numeric = cwe_numeric(&record.cwe_id)
                .ok_or_else(|| Error::schema(format!("bad cwe_id {:?}", record.cwe_id)))?;
            match seen {
                Some(prev) if prev == numeric => {
                    return Err(Error::new(
                        ErrorKind::DuplicateId,
                        format!("duplicate {} in knowledge base", record.cwe_id),
                    ))
                }
                Some(prev) if prev > numeric => {
                    return Err(Error::validation(format!(
                        "records out of order at {}",
                        record.cwe_id
                    )))
                }
                _ => seen = Some(numeric),
            }
        }
        Ok(())
    }
}

/// Reads and validates a raw CWE export: a JSON array of entries, returned
/// sorted by numeric CWE id.
pub fn ingest_raw(path: &Path) -> Result<Vec<RawCweEntry>> {
    if !path.is_file() {
        return Err(Error::missing_file(format!("raw CWE input {}", path.display())));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io_at(path, &e))?;
    let mut entries: Vec<RawCweEntry> = serde_json::from_str(&text)
        .map_err(|e| Error::schema(format!("{} is not a raw-CWE array: {e}", path.display())))?;
    for entry in &entries {
        entry.validate()?;
    }
    entries.sort_by_key(|e| cwe_numeric(&e.cwe_id).expect("validated above"));
    for pair in entries.windows(2) {
        if pair[0].cwe_id == pair[1].cwe_id {
            return Err(Error::new(
                ErrorKind::DuplicateId,
                format!("duplicate entry for {}", pair[0].cwe_id),
            ));
        }
    }
    Ok(entries)
}

/// Enriches one raw entry via the Summarizer Agent (prompts `p_sk` and
/// `p_vs`). Identity is preserved: cwe_id and title are copied verbatim.
/// The returned record carries no embeddings yet.
pub async fn enrich(entry: &RawCweEntry, summarizer: &Summarizer) -> Result<EnrichedCweRecord> {
    entry.validate()?;
    let fields = summarizer.enrich_cwe(entry).await?;
    let record = EnrichedCweRecord {
        cwe_id: entry.cwe_id.clone(),
        title: entry.title.clone(),
        summary: fields.summary,
        keywords: fields.keywords,
        vulnerable_snippet: fields.vulnerable_snippet,
        secure_snippet: fields.secure_snippet,
        field_embeddings: Default::default(),
    };
    record.validate_fields()?;
    Ok(record)
}

/// Attaches unit-normalized embeddings for the three searchable fields and
/// assembles the final knowledge base.
pub async fn embed_records(
    mut records: Vec<EnrichedCweRecord>,
    embedder: &Arc<Embedder>,
    enrichment_model: &str,
    built_at: &str,
) -> Result<CweKnowledgeBase> {
    records.sort_by_key(|r| cwe_numeric(&r.cwe_id));
    for record in &mut records {
        record.validate_fields()?;
        let texts = vec![
            record.summary.clone(),
            record.keywords_text(),
            record.vulnerable_snippet.clone(),
        ];
        let vectors = embedder.embed_many(&texts, "kb").await?;
        let mut iter = vectors.into_iter();
        for field in SEARCHABLE_FIELDS {
            let vector = iter.next().expect("three vectors for three fields");
            record
                .field_embeddings
                .insert(field.to_string(), vector.with_field(field));
        }
    }
    let kb = CweKnowledgeBase {
        records,
        embedding_dimension: embedder.dimension(),
        provenance: KbProvenance {
            enrichment_model: enrichment_model.to_string(),
            embedding_provider: embedder.provider_name().to_string(),
            built_at: built_at.to_string(),
        },
    };
    kb.validate()?;
    Ok(kb)
}

#[derive(Debug, Serialize, Deserialize)]
struct KbManifest {
    version: u32,
    embedding_dimension: usize,
    record_count: usize,
    provenance: KbProvenance,
}

/// Persists the knowledge base into `dir` (created if needed).
pub fn save_kb(kb: &CweKnowledgeBase, dir: &Path) -> Result<()> {
    kb.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io_at(dir, &e))?;
    let manifest = KbManifest {
        version: KB_FORMAT_VERSION,
        embedding_dimension: kb.embedding_dimension,
        record_count: kb.records.len(),
        provenance: kb.provenance.clone(),
    };
    let manifest_path = dir.join(KB_MANIFEST_FILE);
    let manifest_body = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::internal(format!("manifest serialization: {e}")))?;
    std::fs::write(&manifest_path, manifest_body + "\n")
        .map_err(|e| Error::io_at(&manifest_path, &e))?;

    let mut lines = String::new();
    for record in &kb.records {
        lines.push_str(
            &serde_json::to_string(record)
                .map_err(|e| Error::internal(format!("record serialization: {e}")))?,
        );
        lines.push('\n');
    }
    let records_path = dir.join(KB_RECORDS_FILE);
    std::fs::write(&records_path, lines).map_err(|e| Error::io_at(&records_path, &e))?;
    Ok(())
}

/// Loads a knowledge base persisted by [`save_kb`]; the round trip is an
/// exact identity, including bit-exact embedding values.
pub fn load_kb(dir: &Path) -> Result<CweKnowledgeBase> {
    let manifest_path = dir.join(KB_MANIFEST_FILE);
    if !manifest_path.is_file() {
        return Err(Error::missing_file(format!(
            "knowledge base manifest {}",
            manifest_path.display()
        )));
    }
    let manifest_text =
        std::fs::read_to_string(&manifest_path).map_err(|e| Error::io_at(&manifest_path, &e))?;
    let manifest: KbManifest = serde_json::from_str(&manifest_text)
        .map_err(|e| Error::schema(format!("{}: {e}", manifest_path.display())))?;
    if manifest.version != KB_FORMAT_VERSION {
        return Err(Error::new(
            ErrorKind::Version,
            format!(
                "knowledge base format version {} unsupported (expected {})",
                manifest.version, KB_FORMAT_VERSION
            ),
        ));
    }

    let records_path = dir.join(KB_RECORDS_FILE);
    if !records_path.is_file() {
        return Err(Error::missing_file(format!(
            "knowledge base records {}",
            records_path.display()
        )));
    }
    let text =
        std::fs::read_to_string(&records_path).map_err(|e| Error::io_at(&records_path, &e))?;
    let mut records = Vec::with_capacity(manifest.record_count);
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: EnrichedCweRecord = serde_json::from_str(line).map_err(|e| {
            Error::schema(format!("{} line {}: {e}", records_path.display(), lineno + 1))
        })?;
        records.push(record);
    }
    if records.len() != manifest.record_count {
        return Err(Error::schema(format!(
            "manifest promises {} records, file holds {}",
            manifest.record_count,
            records.len()
        )));
    }
    let kb = CweKnowledgeBase {
        records,
        embedding_dimension: manifest.embedding_dimension,
        provenance: manifest.provenance,
    };
    kb.validate()?;
    Ok(kb)
}

/// Fixture builders shared by unit, integration, and acceptance tests.
#[doc(hidden)]
pub mod test_support {
    use super::*;

    /// A valid enriched record with deterministic hashing embeddings.
    pub fn record(cwe_id: &str, keywords: &[&str]) -> EnrichedCweRecord {
        let embedder = Embedder::hashing(32);
        let mut record = EnrichedCweRecord {
            cwe_id: cwe_id.to_string(),
            title: format!("Title for {cwe_id}"),
            summary: format!("Summary text about {} issues.", keywords.join(" and ")),
            keywords: keywords.iter().map(|k| k.to_string()).collect(),
            vulnerable_snippet: format!("assign {}_bad = 1'b1;", keywords[0]),
            secure_snippet: format!("assign {}_ok = gated;", keywords[0]),
            field_embeddings: Default::default(),
        };
        for field in SEARCHABLE_FIELDS {
            let text = match field {
                FIELD_SUMMARY => record.summary.clone(),
                FIELD_KEYWORDS => record.keywords_text(),
                _ => record.vulnerable_snippet.clone(),
            };
            // The hashing embedder is pure, so blocking on it is safe even
            // inside an async test.
            let vector = futures::executor::block_on(embedder.embed_text(&text, field)).unwrap();
            record.field_embeddings.insert(field.to_string(), vector);
        }
        record
    }

    /// A small valid KB over the given (id, keywords) pairs.
    pub fn kb(entries: &[(&str, &[&str])]) -> CweKnowledgeBase {
        let kb = CweKnowledgeBase {
            records: entries.iter().map(|(id, kws)| record(id, kws)).collect(),
            embedding_dimension: 32,
            provenance: KbProvenance {
                enrichment_model: "test-model".into(),
                embedding_provider: "hashing-mock".into(),
                built_at: "1970-01-01T00:00:00Z".into(),
            },
        };
        kb.validate().unwrap();
        kb
    }
}

//! Benchmark dataset loader.
//!
//! On-disk layout, one directory per case:
//!
//! ```text
//! <root>/<case_id>/design.v         buggy HDL (required)
//! <root>/<case_id>/gold_snippet.v   gold vulnerable snippet (required)
//! <root>/<case_id>/fixed.v          corrected design (optional)
//! <root>/<case_id>/meta.json        {"case_id", "gold_cwe_id", "description"}
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BenchmarkCase, RtlDesign};

pub const DESIGN_FILE: &str = "design.v";
pub const GOLD_SNIPPET_FILE: &str = "gold_snippet.v";
pub const FIXED_FILE: &str = "fixed.v";
pub const META_FILE: &str = "meta.json";

#[derive(Debug, Serialize, Deserialize)]
struct CaseMeta {
    case_id: String,
    gold_cwe_id: String,
    #[serde(default)]
    description: String,
}

/// Loads every case under `root`, sorted by `case_id`.
///
/// Two loads of the same directory yield identical, identically ordered lists.
pub fn load_dataset(root: &Path) -> Result<Vec<BenchmarkCase>> {
    if !root.is_dir() {
        return Err(Error::missing_file(format!("dataset root {}", root.display())));
    }
    let mut case_dirs: Vec<_> = std::fs::read_dir(root)
        .map_err(|e| Error::io_at(root, &e))?
        .filter_map(|entry| entry.ok())
        .filter(|entry| entry.path().is_dir())
        .map(|entry| entry.path())
        .collect();
    case_dirs.sort();

    let mut cases = Vec::with_capacity(case_dirs.len());
    for dir in case_dirs {
        cases.push(load_case(&dir)?);
    }
    cases.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    Ok(cases)
}

fn load_case(dir: &Path) -> Result<BenchmarkCase> {
    let dir_name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();

    let read_required = |file: &str| -> Result<String> {
        let path = dir.join(file);
        std::fs::read_to_string(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::missing_file(format!("case '{dir_name}': missing {file}"))
            } else {
                Error::io_at(&path, &e)
            }
        })
    };

    let design_text = read_required(DESIGN_FILE)?;
    let gold_snippet = read_required(GOLD_SNIPPET_FILE)?;
    let meta_text = read_required(META_FILE)?;
    let meta: CaseMeta = serde_json::from_str(&meta_text)
        .map_err(|e| Error::schema(format!("case '{dir_name}': {}: {e}", META_FILE)))?;

    if meta.case_id != dir_name {
        return Err(Error::schema(format!(
            "case '{dir_name}': meta.json case_id '{}' does not match directory name",
            meta.case_id
        )));
    }

    let fixed_path = dir.join(FIXED_FILE);
    let fixed_design = if fixed_path.exists() {
        Some(std::fs::read_to_string(&fixed_path).map_err(|e| Error::io_at(&fixed_path, &e))?)
    } else {
        None
    };

    let case = BenchmarkCase {
        case_id: meta.case_id,
        buggy_design: RtlDesign::new(dir_name.clone(), design_text)?,
        gold_snippet,
        fixed_design,
        gold_cwe_id: meta.gold_cwe_id,
        description: meta.description,
    };
    case.validate()?;
    Ok(case)
}

/// Writes a case back out in the on-disk schema. Round-trips with
/// [`load_dataset`].
pub fn save_case(case: &BenchmarkCase, root: &Path) -> Result<()> {
    let dir = root.join(&case.case_id);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io_at(&dir, &e))?;
    let write = |file: &str, text: &str| -> Result<()> {
        let path = dir.join(file);
        std::fs::write(&path, text).map_err(|e| Error::io_at(&path, &e))
    };
    write(DESIGN_FILE, &case.buggy_design.source_text)?;
    write(GOLD_SNIPPET_FILE, &case.gold_snippet)?;
    if let Some(fixed) = &case.fixed_design {
        write(FIXED_FILE, fixed)?;
    }
    let meta = CaseMeta {
        case_id: case.case_id.clone(),
        gold_cwe_id: case.gold_cwe_id.clone(),
        description: case.description.clone(),
    };
    let meta_json = serde_json::to_string_pretty(&meta)
        .map_err(|e| Error::internal(format!("meta serialize: {e}")))?;
    write(META_FILE, &meta_json)
}

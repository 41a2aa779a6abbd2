//! Small shared helpers.

use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Collapses every whitespace run to a single space and trims the ends.
/// Used for "snippet occurs in source modulo whitespace" checks.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Renders a ratio in `[0,1]` as a percentage with two decimals, e.g. `64.29%`.
pub fn format_percent(ratio: f64) -> String {
    format!("{:.2}%", ratio * 100.0)
}

/// Numeric part of a `CWE-<n>` identifier, used for deterministic ordering.
pub fn cwe_numeric(cwe_id: &str) -> Option<u64> {
    cwe_id.strip_prefix("CWE-")?.parse().ok()
}

/// `CWE-<digits>` with a non-empty digit run.
pub fn is_valid_cwe_id(cwe_id: &str) -> bool {
    match cwe_id.strip_prefix("CWE-") {
        Some(rest) => !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()),
        None => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percent_rendering_matches_reporting_rules() {
        assert_eq!(format_percent(9.0 / 14.0), "64.29%");
        assert_eq!(format_percent(7.0 / 14.0), "50.00%");
        assert_eq!(format_percent(1.0), "100.00%");
        assert_eq!(format_percent(0.0), "0.00%");
        assert_eq!(format_percent(2.0 / 3.0), "66.67%");
    }

    #[test]
    fn cwe_id_validation() {
        assert!(is_valid_cwe_id("CWE-1234"));
        assert!(!is_valid_cwe_id("CWE-"));
        assert!(!is_valid_cwe_id("cwe-1234"));
        assert!(!is_valid_cwe_id("CWE-12x4"));
        assert_eq!(cwe_numeric("CWE-1244"), Some(1244));
    }

    #[test]
    fn whitespace_normalization() {
        assert_eq!(normalize_whitespace("  a\t b\n\nc "), "a b c");
    }
}

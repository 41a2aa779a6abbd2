//! Release acceptance checklist for the scanner workspace.
//!
//! This crate carries no library code. Its single integration suite,
//! `tests/acceptance.rs`, encodes the eight release criteria — metric
//! oracle equivalence, retrieval correctness, query composition, accuracy
//! arithmetic, signature extraction, end-to-end replay determinism, KB
//! persistence, and parser totality — as one test per criterion. Run it
//! with:
//!
//! ```text
//! cargo test -p srr-acceptance --test acceptance -- --nocapture
//! ```
//!
//! Each test prints one `PASS criterion N` line; a failing criterion fails
//! its test. Every check is verified against an oracle implemented
//! independently of the library code under test.

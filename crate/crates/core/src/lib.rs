//! Core library for an RTL hardware-vulnerability scanner built on
//! retrieval-augmented generation.
//!
//! The pipeline has two phases. The *retrieval* phase builds a knowledge
//! base of hardware CWEs — each entry enriched by an LLM into a summary,
//! keyword list, and vulnerable/secure Verilog patterns, then embedded
//! per field — and matches a design against it: the design is summarized,
//! its security-salient identifier keywords are extracted, and the weighted
//! combination of both embeddings queries the knowledge base for the top-k
//! closest CWEs. The *detection* phase presents those candidates to an LLM
//! detection agent (one per prompt, or all in one prompt when the model's
//! context window allows) and parses structured verdicts with vulnerable
//! snippets. Evaluation scores findings against gold labels with detection
//! accuracy, retrieval hit counts, and ROUGE-L snippet overlap.
//!
//! Determinism is a design constraint throughout: LLM and embedding calls
//! go through record/replay caches, the mock embedder is a pure function,
//! reports serialize with stable ordering, and a frozen clock removes
//! timestamps — so end-to-end runs are byte-reproducible.

pub mod agents;
pub mod config;
pub mod dataset;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod hdl;
pub mod kb;
pub mod llm;
pub mod model;
pub mod pipeline;
pub mod provider;
pub mod retrieval;
pub mod util;

pub use config::{load_config, DetectionMode, PipelineConfig};
pub use error::{Error, ErrorKind, Result};
pub use model::{BenchmarkCase, HardwareSignature, RtlDesign};

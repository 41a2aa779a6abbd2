//! HDL lexical analysis and hardware-signature extraction.

pub mod lexer;
pub mod signature;

pub use lexer::{tokenize, HdlToken, ScanError, ScanOutcome, TokenKind};
pub use signature::{
    extract_signature, extract_signature_from_source, LexiconEntry, SignatureLexicon,
    DEFAULT_LEXICON_TEXT,
};

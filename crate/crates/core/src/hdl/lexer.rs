//! Lossless lexical scanner for Verilog-2005 source.
//!
//! The scanner recovers from unterminated constructs instead of aborting:
//! an unclosed string ends at the newline, an unclosed block comment swallows
//! the rest of the input, and both are reported with their start position.
//! Concatenating the emitted token texts always reproduces the input
//! byte-for-byte.
//!
//! Keyword recognition is case-insensitive (`MODULE` scans as a keyword even
//! though strict Verilog would treat it as an identifier): signature
//! extraction must be invariant under case changes, and an upper-cased
//! keyword leaking into the identifier stream would break that.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenKind {
    Identifier,
    Keyword,
    Number,
    Operator,
    StringLiteral,
    Comment,
    Whitespace,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HdlToken {
    pub kind: TokenKind,
    pub text: String,
    /// 1-based line of the token start.
    pub line: u32,
    /// 1-based column (in characters) of the token start.
    pub column: u32,
}

/// Unterminated block comment or string literal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanError {
    pub construct: &'static str,
    pub line: u32,
    pub column: u32,
}

impl std::fmt::Display for ScanError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "unterminated {} at {}:{}", self.construct, self.line, self.column)
    }
}

impl From<ScanError> for crate::error::Error {
    fn from(e: ScanError) -> Self {
        crate::error::Error::new(crate::error::ErrorKind::UnterminatedConstruct, e.to_string())
    }
}

/// Every token scanned plus any unterminated-construct errors encountered.
#[derive(Debug, Clone, Default)]
pub struct ScanOutcome {
    pub tokens: Vec<HdlToken>,
    pub errors: Vec<ScanError>,
}

impl ScanOutcome {
    pub fn identifiers(&self) -> impl Iterator<Item = &str> {
        self.tokens
            .iter()
            .filter(|t| t.kind == TokenKind::Identifier)
            .map(|t| t.text.as_str())
    }
}

/// Verilog-2005 reserved words (Annex B), lowercase.
pub const VERILOG_KEYWORDS: &[&str] = &[
    "always", "and", "assign", "automatic", "begin", "buf", "bufif0", "bufif1", "case", "casex",
    "casez", "cell", "cmos", "config", "deassign", "default", "defparam", "design", "disable",
    "edge", "else", "end", "endcase", "endconfig", "endfunction", "endgenerate", "endmodule",
    "endprimitive", "endspecify", "endtable", "endtask", "event", "for", "force", "forever",
    "fork", "function", "generate", "genvar", "highz0", "highz1", "if", "ifnone", "incdir",
    "include", "initial", "inout", "input", "instance", "integer", "join", "large", "liblist",
    "library", "localparam", "macromodule", "medium", "module", "nand", "negedge", "nmos", "nor",
    "noshowcancelled", "not", "notif0", "notif1", "or", "output", "parameter", "pmos", "posedge",
    "primitive", "pull0", "pull1", "pulldown", "pullup", "pulsestyle_ondetect",
    "pulsestyle_onevent", "rcmos", "real", "realtime", "reg", "release", "repeat", "rnmos",
    "rpmos", "rtran", "rtranif0", "rtranif1", "scalared", "showcancelled", "signed", "small",
    "specify", "specparam", "strong0", "strong1", "supply0", "supply1", "table", "task", "time",
    "tran", "tranif0", "tranif1", "tri", "tri0", "tri1", "triand", "trior", "trireg", "unsigned",
    "use", "uwire", "vectored", "wait", "wand", "weak0", "weak1", "while", "wire", "wor", "xnor",
    "xor",
];

pub fn is_verilog_keyword(word: &str) -> bool {
    let lower = word.to_ascii_lowercase();
    VERILOG_KEYWORDS.binary_search(&lower.as_str()).is_ok()
}

struct Scanner<'a> {
    src: &'a str,
    chars: Vec<(usize, char)>,
    pos: usize,
    line: u32,
    column: u32,
}

impl<'a> Scanner<'a> {
    fn new(src: &'a str) -> Self {
        Self { src, chars: src.char_indices().collect(), pos: 0, line: 1, column: 1 }
    }

    fn peek(&self, offset: usize) -> Option<char> {
        self.chars.get(self.pos + offset).map(|&(_, c)| c)
    }

    fn byte_at(&self, idx: usize) -> usize {
        self.chars.get(idx).map(|&(b, _)| b).unwrap_or(self.src.len())
    }

    fn advance(&mut self, count: usize) {
        for _ in 0..count {
            if let Some(&(_, c)) = self.chars.get(self.pos) {
                self.pos += 1;
                if c == '\n' {
                    self.line += 1;
                    self.column = 1;
                } else {
                    self.column += 1;
                }
            }
        }
    }

    fn text_from(&self, start_idx: usize) -> String {
        self.src[self.byte_at(start_idx)..self.byte_at(self.pos)].to_string()
    }
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_' || c == '$'
}

fn is_ident_continue(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '$'
}

fn is_base_char(c: char) -> bool {
    matches!(c, 'b' | 'B' | 'o' | 'O' | 'd' | 'D' | 'h' | 'H')
}

fn is_base_value_char(c: char) -> bool {
    c.is_ascii_hexdigit() || matches!(c, '_' | 'x' | 'X' | 'z' | 'Z' | '?')
}

/// Scans HDL text into a lossless token stream.
pub fn tokenize(source: &str) -> ScanOutcome {
    let mut sc = Scanner::new(source);
    let mut out = ScanOutcome::default();

    while let Some(c) = sc.peek(0) {
        let start_idx = sc.pos;
        let (line, column) = (sc.line, sc.column);

        let kind = match c {
            _ if c.is_whitespace() => {
                while sc.peek(0).is_some_and(|c| c.is_whitespace()) {
                    sc.advance(1);
                }
                TokenKind::Whitespace
            }
            '/' if sc.peek(1) == Some('/') => {
                while sc.peek(0).is_some_and(|c| c != '\n') {
                    sc.advance(1);
                }
                TokenKind::Comment
            }
            '/' if sc.peek(1) == Some('*') => {
                sc.advance(2);
                let mut closed = false;
                while let Some(c) = sc.peek(0) {
                    if c == '*' && sc.peek(1) == Some('/') {
                        sc.advance(2);
                        closed = true;
                        break;
                    }
                    sc.advance(1);
                }
                if !closed {
                    out.errors.push(ScanError { construct: "block comment", line, column });
                }
                TokenKind::Comment
            }
            '"' => {
                sc.advance(1);
                let mut closed = false;
                while let Some(c) = sc.peek(0) {
                    match c {
                        '"' => {
                            sc.advance(1);
                            closed = true;
                            break;
                        }
                        // Unescaped newline: strings are single-line.
                        '\n' => break,
                        '\\' => sc.advance(if sc.peek(1).is_some() { 2 } else { 1 }),
                        _ => sc.advance(1),
                    }
                }
                if !closed {
                    out.errors.push(ScanError { construct: "string literal", line, column });
                }
                TokenKind::StringLiteral
            }
            _ if c.is_ascii_digit() => {
                scan_number(&mut sc);
                TokenKind::Number
            }
            '\'' => {
                // Standalone based literal like 'hFF / 'sb01; otherwise a bare operator.
                let based = match sc.peek(1) {
                    Some('s' | 'S') => sc.peek(2).is_some_and(is_base_char),
                    Some(b) => is_base_char(b),
                    None => false,
                };
                if based {
                    sc.advance(if matches!(sc.peek(1), Some('s') | Some('S')) { 3 } else { 2 });
                    while sc.peek(0).is_some_and(is_base_value_char) {
                        sc.advance(1);
                    }
                    TokenKind::Number
                } else {
                    sc.advance(1);
                    TokenKind::Operator
                }
            }
            _ if is_ident_start(c) => {
                while sc.peek(0).is_some_and(is_ident_continue) {
                    sc.advance(1);
                }
                let text = sc.text_from(start_idx);
                if is_verilog_keyword(&text) {
                    TokenKind::Keyword
                } else {
                    TokenKind::Identifier
                }
            }
            '\\' if sc.peek(1).is_some_and(|c| !c.is_whitespace()) => {
                // Escaped identifier: backslash up to the next whitespace.
                sc.advance(1);
                while sc.peek(0).is_some_and(|c| !c.is_whitespace()) {
                    sc.advance(1);
                }
                TokenKind::Identifier
            }
            _ => {
                sc.advance(1);
                TokenKind::Operator
            }
        };

        out.tokens.push(HdlToken { kind, text: sc.text_from(start_idx), line, column });
    }

    out
}

fn scan_number(sc: &mut Scanner<'_>) {
    while sc.peek(0).is_some_and(|c| c.is_ascii_digit() || c == '_') {
        sc.advance(1);
    }
    // Sized based literal: 8'hFF / 4'b10xz / 12'sd7.
    let based = match sc.peek(0) {
        Some('\'') => match sc.peek(1) {
            Some('s' | 'S') => sc.peek(2).is_some_and(is_base_char),
            Some(b) => is_base_char(b),
            None => false,
        },
        _ => false,
    };
    if based {
        sc.advance(if matches!(sc.peek(1), Some('s') | Some('S')) { 3 } else { 2 });
        while sc.peek(0).is_some_and(is_base_value_char) {
            sc.advance(1);
        }
        return;
    }
    // Fractional part, only when at least one digit/underscore follows the dot.
    if sc.peek(0) == Some('.') && sc.peek(1).is_some_and(|c| c.is_ascii_digit() || c == '_') {
        sc.advance(2);
        while sc.peek(0).is_some_and(|c| c.is_ascii_digit() || c == '_') {
            sc.advance(1);
        }
    }
    // Exponent, only when digits follow.
    if matches!(sc.peek(0), Some('e') | Some('E')) {
        let sign = matches!(sc.peek(1), Some('+') | Some('-'));
        let digits_at = if sign { 2 } else { 1 };
        if sc.peek(digits_at).is_some_and(|c| c.is_ascii_digit() || c == '_') {
            sc.advance(digits_at + 1);
            while sc.peek(0).is_some_and(|c| c.is_ascii_digit() || c == '_') {
                sc.advance(1);
            }
        }
    }
}

//! Emitter and parser for the QASM-3 subset that carries qubit preparation
//! frames.
//!
//! The grammar is deliberately tiny: a version header, a single qubit
//! register declaration, and `x`/`h` gates on single indices, with `//`
//! line comments and free inter-token whitespace. Per qubit the gate
//! sequence must be one of ``, `x`, `h` or `x` then `h`, which makes the
//! decoding unambiguous:
//!
//! | gates   | decodes to        |
//! |---------|-------------------|
//! | (none)  | bit 0, rectilinear|
//! | `x`     | bit 1, rectilinear|
//! | `h`     | bit 0, diagonal   |
//! | `x;h`   | bit 1, diagonal   |
//!
//! Measurement statements, classical registers and every other gate are
//! rejected: the document describes preparation only. The version literal
//! is exactly `3.0`.

use std::fmt;

use thiserror::Error;

use crate::bb84::{Basis, PreparedFrame, QubitPrep};

/// Gates expressible in a preparation program.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrepGate {
    X,
    H,
}

impl fmt::Display for PrepGate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PrepGate::X => "x",
            PrepGate::H => "h",
        })
    }
}

/// A preparation program: the document text plus its decoded gate list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrepProgram {
    text: String,
    qubit_count: usize,
    gates: Vec<(PrepGate, usize)>,
}

impl PrepProgram {
    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn qubit_count(&self) -> usize {
        self.qubit_count
    }

    pub fn gates(&self) -> &[(PrepGate, usize)] {
        &self.gates
    }

    /// Decodes the per-qubit gate sequences back into a frame.
    pub fn to_frame(&self) -> PreparedFrame {
        let mut preps = vec![
            QubitPrep {
                bit: false,
                basis: Basis::Rectilinear
            };
            self.qubit_count
        ];
        for &(gate, target) in &self.gates {
            match gate {
                PrepGate::X => preps[target].bit = true,
                PrepGate::H => preps[target].basis = Basis::Diagonal,
            }
        }
        PreparedFrame::from_preps(preps).expect("parsed programs declare at least one qubit")
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QasmError {
    #[error("line {line}: missing or incorrect version header")]
    Header { line: usize },
    #[error("line {line}: unsupported statement `{statement}`")]
    Unsupported { line: usize, statement: String },
    #[error("line {line}: reference to undeclared register `{name}`")]
    UndeclaredRegister { line: usize, name: String },
    #[error("line {line}: qubit index {index} out of range for register of size {size}")]
    IndexOutOfRange {
        line: usize,
        index: usize,
        size: usize,
    },
    #[error(
        "line {line}: non-canonical gate sequence on qubit {qubit} (allowed: none, x, h, x;h)"
    )]
    GateOrder { line: usize, qubit: usize },
    #[error("line {line}: {detail}")]
    Syntax { line: usize, detail: String },
}

impl QasmError {
    /// Line of the first offending statement, 1-based.
    pub fn line(&self) -> usize {
        match self {
            QasmError::Header { line }
            | QasmError::Unsupported { line, .. }
            | QasmError::UndeclaredRegister { line, .. }
            | QasmError::IndexOutOfRange { line, .. }
            | QasmError::GateOrder { line, .. }
            | QasmError::Syntax { line, .. } => *line,
        }
    }
}

/// Emits the canonical document for a frame.
///
/// Layout: `OPENQASM 3.0;`, then `qubit[n] q;`, then per qubit `x q[i];`
/// iff the bit is 1 followed by `h q[i];` iff the basis is diagonal. One
/// statement per line, no measurement statements.
pub fn emit_prep(frame: &PreparedFrame) -> PrepProgram {
    let mut text = String::with_capacity(32 + frame.len() * 8);
    let mut gates = Vec::new();
    text.push_str("OPENQASM 3.0;\n");
    text.push_str(&format!("qubit[{}] q;\n", frame.len()));
    for (i, prep) in frame.iter().enumerate() {
        if prep.bit {
            text.push_str(&format!("x q[{i}];\n"));
            gates.push((PrepGate::X, i));
        }
        if prep.basis == Basis::Diagonal {
            text.push_str(&format!("h q[{i}];\n"));
            gates.push((PrepGate::H, i));
        }
    }
    PrepProgram {
        text,
        qubit_count: frame.len(),
        gates,
    }
}

/// Parses a preparation document into a frame. Inverse of [`emit_prep`] and
/// tolerant of arbitrary inter-token whitespace and `//` comments.
pub fn parse_prep(text: &str) -> Result<PreparedFrame, QasmError> {
    Ok(parse_program(text)?.to_frame())
}

/// Parses a preparation document, keeping the decoded gate list.
pub fn parse_program(text: &str) -> Result<PrepProgram, QasmError> {
    let tokens = lex(text)?;
    let mut p = Parser {
        tokens: &tokens,
        pos: 0,
    };

    // Version header.
    let line = p.peek_line();
    let header_ok = matches!(p.next_token(), Some(Token { kind: TokenKind::Ident(w), .. }) if w == "OPENQASM")
        && matches!(p.next_token(), Some(Token { kind: TokenKind::Number(v), .. }) if v == "3.0")
        && matches!(
            p.next_token(),
            Some(Token {
                kind: TokenKind::Semi,
                ..
            })
        );
    if !header_ok {
        return Err(QasmError::Header { line });
    }

    // Register declaration.
    let decl_line = p.peek_line();
    let (qubit_count, register) = match p.next_token() {
        Some(Token {
            kind: TokenKind::Ident(w),
            line,
        }) if w == "qubit" => {
            let line = *line;
            p.expect(TokenKind::LBracket, line, "expected `[` after `qubit`")?;
            let size = p.expect_index(line)?;
            p.expect(
                TokenKind::RBracket,
                line,
                "expected `]` after register size",
            )?;
            let name = p.expect_ident(line, "expected register name")?;
            p.expect(TokenKind::Semi, line, "expected `;` after declaration")?;
            if size == 0 {
                return Err(QasmError::Syntax {
                    line,
                    detail: "register size must be at least 1".into(),
                });
            }
            (size, name)
        }
        Some(Token {
            kind: TokenKind::Ident(w),
            line,
        }) if w == "x" || w == "h" => {
            // A gate before any declaration references an undeclared register.
            let line = *line;
            let name = match p.next_token() {
                Some(Token {
                    kind: TokenKind::Ident(n),
                    ..
                }) => n.clone(),
                _ => String::from("?"),
            };
            return Err(QasmError::UndeclaredRegister { line, name });
        }
        Some(Token {
            kind: TokenKind::Ident(w),
            line,
        }) => {
            return Err(QasmError::Unsupported {
                line: *line,
                statement: w.clone(),
            });
        }
        Some(Token { line, .. }) => {
            return Err(QasmError::Syntax {
                line: *line,
                detail: "expected a statement".into(),
            });
        }
        None => {
            return Err(QasmError::Syntax {
                line: decl_line,
                detail: "missing qubit register declaration".into(),
            });
        }
    };

    // Gate statements.
    let mut gates = Vec::new();
    let mut seq = vec![GateSeq::None; qubit_count];
    while let Some(token) = p.next_token() {
        let line = token.line;
        let gate = match &token.kind {
            TokenKind::Ident(w) if w == "x" => PrepGate::X,
            TokenKind::Ident(w) if w == "h" => PrepGate::H,
            TokenKind::Ident(w) => {
                return Err(QasmError::Unsupported {
                    line,
                    statement: w.clone(),
                });
            }
            _ => {
                return Err(QasmError::Syntax {
                    line,
                    detail: "expected a statement".into(),
                });
            }
        };
        let name = p.expect_ident(line, "expected register name after gate")?;
        if name != register {
            return Err(QasmError::UndeclaredRegister { line, name });
        }
        p.expect(
            TokenKind::LBracket,
            line,
            "expected `[` after register name",
        )?;
        let index = p.expect_index(line)?;
        p.expect(TokenKind::RBracket, line, "expected `]` after qubit index")?;
        p.expect(TokenKind::Semi, line, "expected `;` after gate")?;
        if index >= qubit_count {
            return Err(QasmError::IndexOutOfRange {
                line,
                index,
                size: qubit_count,
            });
        }
        seq[index] = match (seq[index], gate) {
            (GateSeq::None, PrepGate::X) => GateSeq::X,
            (GateSeq::None, PrepGate::H) => GateSeq::H,
            (GateSeq::X, PrepGate::H) => GateSeq::XH,
            // Covers h-before-x and every duplicate.
            _ => return Err(QasmError::GateOrder { line, qubit: index }),
        };
        gates.push((gate, index));
    }

    Ok(PrepProgram {
        text: text.to_string(),
        qubit_count,
        gates,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum GateSeq {
    None,
    X,
    H,
    XH,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum TokenKind {
    Ident(String),
    Number(String),
    LBracket,
    RBracket,
    Semi,
    Comma,
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokenKind,
    line: usize,
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn next_token(&mut self) -> Option<&'a Token> {
        let t = self.tokens.get(self.pos);
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn peek_line(&self) -> usize {
        self.tokens
            .get(self.pos)
            .map_or_else(|| self.tokens.last().map_or(1, |t| t.line), |t| t.line)
    }

    fn expect(&mut self, kind: TokenKind, line: usize, detail: &str) -> Result<(), QasmError> {
        match self.next_token() {
            Some(t) if t.kind == kind => Ok(()),
            Some(t) => Err(QasmError::Syntax {
                line: t.line,
                detail: detail.into(),
            }),
            None => Err(QasmError::Syntax {
                line,
                detail: detail.into(),
            }),
        }
    }

    fn expect_ident(&mut self, line: usize, detail: &str) -> Result<String, QasmError> {
        match self.next_token() {
            Some(Token {
                kind: TokenKind::Ident(w),
                ..
            }) => Ok(w.clone()),
            Some(t) => Err(QasmError::Syntax {
                line: t.line,
                detail: detail.into(),
            }),
            None => Err(QasmError::Syntax {
                line,
                detail: detail.into(),
            }),
        }
    }

    /// A canonical decimal index: digits only, no leading zeros.
    fn expect_index(&mut self, line: usize) -> Result<usize, QasmError> {
        match self.next_token() {
            Some(Token {
                kind: TokenKind::Number(raw),
                line,
            }) => {
                if raw.contains('.') || (raw.len() > 1 && raw.starts_with('0')) {
                    return Err(QasmError::Syntax {
                        line: *line,
                        detail: format!("non-canonical integer literal `{raw}`"),
                    });
                }
                raw.parse().map_err(|_| QasmError::Syntax {
                    line: *line,
                    detail: format!("integer literal `{raw}` out of range"),
                })
            }
            Some(t) => Err(QasmError::Syntax {
                line: t.line,
                detail: "expected an integer literal".into(),
            }),
            None => Err(QasmError::Syntax {
                line,
                detail: "expected an integer literal".into(),
            }),
        }
    }
}

fn lex(text: &str) -> Result<Vec<Token>, QasmError> {
    let mut tokens = Vec::new();
    let mut line = 1usize;
    let mut chars = text.chars().peekable();
    while let Some(&c) = chars.peek() {
        match c {
            '\n' => {
                line += 1;
                chars.next();
            }
            c if c.is_whitespace() => {
                chars.next();
            }
            '/' => {
                chars.next();
                if chars.peek() == Some(&'/') {
                    for c in chars.by_ref() {
                        if c == '\n' {
                            line += 1;
                            break;
                        }
                    }
                } else {
                    return Err(QasmError::Syntax {
                        line,
                        detail: "unexpected character `/`".into(),
                    });
                }
            }
            '[' => {
                tokens.push(Token {
                    kind: TokenKind::LBracket,
                    line,
                });
                chars.next();
            }
            ']' => {
                tokens.push(Token {
                    kind: TokenKind::RBracket,
                    line,
                });
                chars.next();
            }
            ';' => {
                tokens.push(Token {
                    kind: TokenKind::Semi,
                    line,
                });
                chars.next();
            }
            ',' => {
                tokens.push(Token {
                    kind: TokenKind::Comma,
                    line,
                });
                chars.next();
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut word = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_ascii_alphanumeric() || c == '_' {
                        word.push(c);
                        chars.next();
                    } else {
                        break;
                    }
                }
                tokens.push(Token {
                    kind: TokenKind::Ident(word),
                    line,
                });
            }
            c if c.is_ascii_digit() => {
                let mut raw = String::new();
                let mut seen_dot = false;
                while let Some(&c) = chars.peek() {
                    if c.is_ascii_digit() || (c == '.' && !seen_dot) {
                        seen_dot |= c == '.';
                        raw.push(c);
                        chars.next();
                    } else {
                        break;
                    }
                }
                tokens.push(Token {
                    kind: TokenKind::Number(raw),
                    line,
                });
            }
            other => {
                return Err(QasmError::Syntax {
                    line,
                    detail: format!("unexpected character `{other}`"),
                });
            }
        }
    }
    Ok(tokens)
}

//! A small SQL lexer: just enough structure for class detection and for
//! finding top-level clauses without a full parser.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenKind {
    /// Bare word. Keywords are matched case-insensitively through [`Token::is_kw`].
    Word,
    /// Quoted identifier (`"x"`, `` `x` ``, `[x]`).
    QuotedIdent,
    StringLit,
    Number,
    LParen,
    RParen,
    Comma,
    Semicolon,
    /// Any other operator or punctuation.
    Symbol,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    pub text: String,
    /// Parenthesis depth at which the token sits (parens themselves carry the
    /// depth outside them).
    pub depth: usize,
    /// Byte offset into the source.
    pub offset: usize,
}

impl Token {
    pub fn is_kw(&self, kw: &str) -> bool {
        self.kind == TokenKind::Word && self.text.eq_ignore_ascii_case(kw)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LexError {
    #[error("unterminated quoted text starting at byte {0}")]
    Unterminated(usize),
    #[error("unbalanced parentheses")]
    Unbalanced,
}

/// Tokenize `sql`. Comments are skipped.
pub fn tokenize(sql: &str) -> Result<Vec<Token>, LexError> {
    let bytes = sql.as_bytes();
    let mut tokens = Vec::new();
    let mut depth = 0usize;
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if c == b'-' && bytes.get(i + 1) == Some(&b'-') {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        if c == b'/' && bytes.get(i + 1) == Some(&b'*') {
            let end = sql[i + 2..].find("*/").ok_or(LexError::Unterminated(i))?;
            i += 2 + end + 2;
            continue;
        }
        let start = i;
        let (kind, end) = match c {
            b'\'' => (TokenKind::StringLit, scan_quoted(bytes, i, b'\'')?),
            b'"' => (TokenKind::QuotedIdent, scan_quoted(bytes, i, b'"')?),
            b'`' => (TokenKind::QuotedIdent, scan_quoted(bytes, i, b'`')?),
            b'[' => {
                let close = sql[i..].find(']').ok_or(LexError::Unterminated(i))?;
                (TokenKind::QuotedIdent, i + close + 1)
            }
            b'(' => (TokenKind::LParen, i + 1),
            b')' => (TokenKind::RParen, i + 1),
            b',' => (TokenKind::Comma, i + 1),
            b';' => (TokenKind::Semicolon, i + 1),
            b'0'..=b'9' => {
                let mut j = i;
                while j < bytes.len() && (bytes[j].is_ascii_alphanumeric() || bytes[j] == b'.') {
                    j += 1;
                }
                (TokenKind::Number, j)
            }
            _ if is_word_byte(c) => {
                let mut j = i;
                while j < bytes.len() && is_word_byte(bytes[j]) {
                    j += 1;
                }
                (TokenKind::Word, j)
            }
            _ => {
                // Step over one full UTF-8 scalar.
                let width = sql[i..].chars().next().map_or(1, char::len_utf8);
                (TokenKind::Symbol, i + width)
            }
        };
        if kind == TokenKind::RParen {
            depth = depth.checked_sub(1).ok_or(LexError::Unbalanced)?;
        }
        tokens.push(Token {
            kind: kind.clone(),
            text: sql[start..end].to_string(),
            depth,
            offset: start,
        });
        if kind == TokenKind::LParen {
            depth += 1;
        }
        i = end;
    }
    if depth != 0 {
        return Err(LexError::Unbalanced);
    }
    Ok(tokens)
}

fn is_word_byte(c: u8) -> bool {
    c.is_ascii_alphanumeric() || c == b'_' || c == b'$' || c >= 0x80
}

/// Returns the index one past the closing quote. Doubled quotes escape.
fn scan_quoted(bytes: &[u8], start: usize, quote: u8) -> Result<usize, LexError> {
    let mut j = start + 1;
    while j < bytes.len() {
        if bytes[j] == quote {
            if bytes.get(j + 1) == Some(&quote) {
                j += 2;
                continue;
            }
            return Ok(j + 1);
        }
        j += 1;
    }
    Err(LexError::Unterminated(start))
}

/// True when `ORDER BY` occurs outside every parenthesis.
pub fn has_top_level_order_by(sql: &str) -> bool {
    match tokenize(sql) {
        Ok(tokens) => tokens
            .windows(2)
            .any(|w| w[0].depth == 0 && w[0].is_kw("ORDER") && w[1].is_kw("BY")),
        // Fall back to a plain text scan on lexically broken input.
        Err(_) => sql.to_ascii_uppercase().contains("ORDER BY"),
    }
}

/// Byte offset of the first `;` outside quotes, if any.
pub fn first_statement_end(sql: &str) -> Option<usize> {
    let bytes = sql.as_bytes();
    let mut quote: Option<u8> = None;
    for (i, &c) in bytes.iter().enumerate() {
        match quote {
            Some(q) if c == q => quote = None,
            Some(_) => {}
            None if c == b'\'' || c == b'"' || c == b'`' => quote = Some(c),
            None if c == b';' => return Some(i),
            None => {}
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_tracks_parentheses() {
        let toks = tokenize("SELECT a FROM t WHERE x IN (SELECT x FROM u)").unwrap();
        let inner = toks
            .iter()
            .filter(|t| t.is_kw("select"))
            .map(|t| t.depth)
            .collect::<Vec<_>>();
        assert_eq!(inner, vec![0, 1]);
    }

    #[test]
    fn strings_hide_keywords() {
        let toks = tokenize("SELECT name FROM t WHERE note = 'order by (x'").unwrap();
        assert!(!toks.iter().any(|t| t.is_kw("ORDER")));
        assert!(!has_top_level_order_by("SELECT name FROM t WHERE note = 'order by'"));
    }

    #[test]
    fn order_by_inside_subquery_is_not_top_level() {
        assert!(!has_top_level_order_by(
            "SELECT a FROM t WHERE b = (SELECT b FROM u ORDER BY c LIMIT 1)"
        ));
        assert!(has_top_level_order_by("SELECT a FROM t ORDER BY a DESC"));
        assert!(has_top_level_order_by("select a from t order\n by a"));
    }

    #[test]
    fn unbalanced_and_unterminated_are_errors() {
        assert_eq!(tokenize("SELECT (a FROM t"), Err(LexError::Unbalanced));
        assert_eq!(tokenize("SELECT a) FROM t"), Err(LexError::Unbalanced));
        assert!(matches!(tokenize("SELECT 'abc"), Err(LexError::Unterminated(7))));
    }

    #[test]
    fn doubled_quotes_escape() {
        let toks = tokenize("SELECT 'it''s' FROM t").unwrap();
        assert_eq!(toks[1].kind, TokenKind::StringLit);
        assert_eq!(toks[1].text, "'it''s'");
    }

    #[test]
    fn statement_end_ignores_quoted_semicolons() {
        assert_eq!(first_statement_end("SELECT ';' FROM t; junk"), Some(17));
        assert_eq!(first_statement_end("SELECT 1"), None);
    }
}

//! Hand-written recursive-descent parser for the supported CQL subset.

use super::{Projection, QueryAst, QueryError, QueryOp};

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok<'a> {
    Ident(&'a str),
    Str(String),
    LParen,
    RParen,
    Comma,
    Eq,
    Star,
    Semi,
    /// Comparison operators and anything else the grammar does not accept in a
    /// predicate; kept so WHERE clauses can report an unsupported predicate.
    Op(&'a str),
}

#[derive(Debug, Clone)]
struct Token<'a> {
    tok: Tok<'a>,
    offset: usize,
}

fn syntax(offset: usize, message: impl Into<String>) -> QueryError {
    QueryError::Syntax {
        offset,
        message: message.into(),
    }
}

fn tokenize(text: &str) -> Result<Vec<Token<'_>>, QueryError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        let start = i;
        let tok = match b {
            b' ' | b'\t' | b'\r' | b'\n' => {
                i += 1;
                continue;
            }
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b',' => Tok::Comma,
            b'=' => Tok::Eq,
            b'*' => Tok::Star,
            b';' => Tok::Semi,
            b'<' | b'>' | b'!' => {
                let len = if matches!(bytes.get(i + 1), Some(b'=') | Some(b'>')) {
                    2
                } else {
                    1
                };
                i += len;
                out.push(Token {
                    tok: Tok::Op(&text[start..i]),
                    offset: start,
                });
                continue;
            }
            b'\'' => {
                let mut value = String::new();
                let mut j = i + 1;
                let mut seg = j;
                loop {
                    match bytes.get(j) {
                        None => return Err(syntax(start, "unterminated string literal")),
                        Some(b'\'') if bytes.get(j + 1) == Some(&b'\'') => {
                            value.push_str(&text[seg..=j]);
                            j += 2;
                            seg = j;
                        }
                        Some(b'\'') => {
                            value.push_str(&text[seg..j]);
                            break;
                        }
                        Some(_) => j += 1,
                    }
                }
                i = j + 1;
                out.push(Token {
                    tok: Tok::Str(value),
                    offset: start,
                });
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let mut j = i + 1;
                while j < bytes.len() && (bytes[j].is_ascii_alphanumeric() || bytes[j] == b'_') {
                    j += 1;
                }
                i = j;
                out.push(Token {
                    tok: Tok::Ident(&text[start..j]),
                    offset: start,
                });
                continue;
            }
            _ => return Err(syntax(start, "unexpected character")),
        };
        i += 1;
        out.push(Token { tok, offset: start });
    }
    Ok(out)
}

const RESERVED: &[&str] = &[
    "SELECT", "INSERT", "UPDATE", "DELETE", "CREATE", "TABLE", "FROM", "WHERE", "SET", "VALUES",
    "INTO", "AND", "OR", "IN",
];

struct Parser<'a> {
    toks: Vec<Token<'a>>,
    pos: usize,
    end: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok<'a>> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |t| t.offset)
    }

    fn next(&mut self) -> Option<Tok<'a>> {
        let t = self.toks.get(self.pos).map(|t| t.tok.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn keyword(&mut self, kw: &str) -> Result<(), QueryError> {
        let at = self.offset();
        match self.next() {
            Some(Tok::Ident(w)) if w.eq_ignore_ascii_case(kw) => Ok(()),
            _ => Err(syntax(at, format!("expected {kw}"))),
        }
    }

    fn is_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(w)) if w.eq_ignore_ascii_case(kw))
    }

    fn punct(&mut self, want: Tok<'static>, what: &str) -> Result<(), QueryError> {
        let at = self.offset();
        match self.next() {
            Some(t) if t == want => Ok(()),
            _ => Err(syntax(at, format!("expected {what}"))),
        }
    }

    fn ident(&mut self) -> Result<String, QueryError> {
        let at = self.offset();
        match self.next() {
            Some(Tok::Ident(w)) if RESERVED.iter().any(|r| w.eq_ignore_ascii_case(r)) => {
                Err(syntax(at, format!("reserved word {w} used as identifier")))
            }
            Some(Tok::Ident(w)) => Ok(w.to_string()),
            _ => Err(syntax(at, "expected identifier")),
        }
    }

    fn string(&mut self) -> Result<String, QueryError> {
        let at = self.offset();
        match self.next() {
            Some(Tok::Str(s)) => Ok(s),
            _ => Err(syntax(at, "expected string literal")),
        }
    }

    fn comma_list<T>(
        &mut self,
        mut item: impl FnMut(&mut Self) -> Result<T, QueryError>,
    ) -> Result<Vec<T>, QueryError> {
        let mut items = vec![item(self)?];
        while self.peek() == Some(&Tok::Comma) {
            self.pos += 1;
            items.push(item(self)?);
        }
        Ok(items)
    }

    /// `WHERE col = 'value'`, the only predicate shape supported.
    fn where_clause(&mut self) -> Result<(String, String), QueryError> {
        self.keyword("WHERE")?;
        let column = self.ident()?;
        let at = self.offset();
        match self.next() {
            Some(Tok::Eq) => {}
            Some(Tok::Op(op)) => {
                return Err(QueryError::UnsupportedPredicate(format!(
                    "operator {op} at offset {at}; only partition-key equality is supported"
                )))
            }
            Some(Tok::Ident(w)) if w.eq_ignore_ascii_case("IN") => {
                return Err(QueryError::UnsupportedPredicate(format!(
                    "IN at offset {at}; only partition-key equality is supported"
                )))
            }
            _ => return Err(syntax(at, "expected =")),
        }
        let value = self.string()?;
        if self.is_keyword("AND") || self.is_keyword("OR") {
            return Err(QueryError::UnsupportedPredicate(format!(
                "compound predicate at offset {}",
                self.offset()
            )));
        }
        Ok((column, value))
    }

    fn finish(&mut self) -> Result<(), QueryError> {
        if self.peek() == Some(&Tok::Semi) {
            self.pos += 1;
        }
        if self.pos < self.toks.len() {
            return Err(syntax(self.offset(), "unexpected trailing input"));
        }
        Ok(())
    }

    fn statement(&mut self) -> Result<QueryAst, QueryError> {
        let at = self.offset();
        let head = match self.peek() {
            Some(Tok::Ident(w)) => w.to_ascii_uppercase(),
            _ => return Err(syntax(at, "expected a statement")),
        };
        self.pos += 1;
        let ast = match head.as_str() {
            "CREATE" => {
                self.keyword("TABLE")?;
                let table = self.ident()?;
                self.punct(Tok::LParen, "(")?;
                let columns = self.comma_list(Self::ident)?;
                self.punct(Tok::RParen, ")")?;
                QueryAst {
                    op: QueryOp::CreateTable,
                    table,
                    key_column: None,
                    key_value: None,
                    assignments: Vec::new(),
                    projection: Projection::Columns(columns),
                }
            }
            "INSERT" => {
                self.keyword("INTO")?;
                let table = self.ident()?;
                self.punct(Tok::LParen, "(")?;
                let columns = self.comma_list(Self::ident)?;
                self.punct(Tok::RParen, ")")?;
                self.keyword("VALUES")?;
                let vat = self.offset();
                self.punct(Tok::LParen, "(")?;
                let values = self.comma_list(Self::string)?;
                self.punct(Tok::RParen, ")")?;
                if values.len() != columns.len() {
                    return Err(syntax(
                        vat,
                        format!("{} columns but {} values", columns.len(), values.len()),
                    ));
                }
                let mut pairs = columns.into_iter().zip(values);
                let (key_column, key_value) = pairs.next().expect("non-empty list");
                QueryAst {
                    op: QueryOp::Insert,
                    table,
                    key_column: Some(key_column),
                    key_value: Some(key_value),
                    assignments: pairs.collect(),
                    projection: Projection::Columns(Vec::new()),
                }
            }
            "SELECT" => {
                let projection = if self.peek() == Some(&Tok::Star) {
                    self.pos += 1;
                    Projection::All
                } else {
                    Projection::Columns(self.comma_list(Self::ident)?)
                };
                self.keyword("FROM")?;
                let table = self.ident()?;
                let (k, v) = self.where_clause()?;
                QueryAst {
                    op: QueryOp::Select,
                    table,
                    key_column: Some(k),
                    key_value: Some(v),
                    assignments: Vec::new(),
                    projection,
                }
            }
            "UPDATE" => {
                let table = self.ident()?;
                self.keyword("SET")?;
                let assignments = self.comma_list(|p| {
                    let c = p.ident()?;
                    p.punct(Tok::Eq, "=")?;
                    Ok((c, p.string()?))
                })?;
                let (k, v) = self.where_clause()?;
                QueryAst {
                    op: QueryOp::Update,
                    table,
                    key_column: Some(k),
                    key_value: Some(v),
                    assignments,
                    projection: Projection::Columns(Vec::new()),
                }
            }
            "DELETE" => {
                self.keyword("FROM")?;
                let table = self.ident()?;
                let (k, v) = self.where_clause()?;
                QueryAst {
                    op: QueryOp::Delete,
                    table,
                    key_column: Some(k),
                    key_value: Some(v),
                    assignments: Vec::new(),
                    projection: Projection::Columns(Vec::new()),
                }
            }
            _ => return Err(syntax(at, format!("unsupported statement {head}"))),
        };
        self.finish()?;
        Ok(ast)
    }
}

pub fn parse(text: &str) -> Result<QueryAst, QueryError> {
    if text.trim().is_empty() {
        return Err(syntax(0, "empty query"));
    }
    let toks = tokenize(text)?;
    Parser {
        toks,
        pos: 0,
        end: text.len(),
    }
    .statement()
}

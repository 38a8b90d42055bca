//! Recursive-descent parser for the query dialect:
//!
//! ```text
//! query    := "select" targets "from" ident [ "where" conj ] [ "with" NUMBER ] [";"]
//! targets  := "*" | ident { "," ident } | ("count"|"sum"|"avg") "(" ident ")"
//! conj     := pred { "and" pred }
//! pred     := ident ("="|"<"|"<="|">"|">=") literal
//! ```
//!
//! Keywords are case-insensitive. Literals are integers, decimals, ISO dates
//! (`2024-01-31`) or single-quoted strings (`'it''s'`).

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tablespace::{Predicate, PredicateOp, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Aggregate {
    Count,
    Sum,
    Avg,
}

impl fmt::Display for Aggregate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregate::Count => "count",
            Aggregate::Sum => "sum",
            Aggregate::Avg => "avg",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Targets {
    All,
    Columns(Vec<String>),
    Aggregate { func: Aggregate, attribute: String },
}

/// A parsed query. Attribute names are not resolved against a schema yet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySpec {
    pub table: String,
    pub targets: Targets,
    pub predicates: Vec<Predicate>,
    /// Requested lower bound on the probability of completeness, in `(0, 1]`.
    pub confidence: f64,
}

impl QuerySpec {
    pub fn new(
        table: impl Into<String>,
        targets: Targets,
        predicates: Vec<Predicate>,
        confidence: f64,
    ) -> Result<Self> {
        check_confidence(confidence)?;
        if let Targets::Columns(c) = &targets {
            if c.is_empty() {
                return Err(Error::InvalidArgument("no target columns".into()));
            }
        }
        Ok(QuerySpec {
            table: table.into(),
            targets,
            predicates,
            confidence,
        })
    }

    pub fn with_confidence(mut self, confidence: f64) -> Result<Self> {
        check_confidence(confidence)?;
        self.confidence = confidence;
        Ok(self)
    }
}

fn check_confidence(c: f64) -> Result<()> {
    if c > 0.0 && c <= 1.0 {
        Ok(())
    } else {
        Err(Error::ConfidenceRange(c))
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Number(String),
    Date(String),
    Str(String),
    Star,
    Comma,
    LParen,
    RParen,
    Semi,
    Op(&'static str),
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Word(w) => write!(f, "`{w}`"),
            Tok::Number(n) | Tok::Date(n) => write!(f, "`{n}`"),
            Tok::Str(s) => write!(f, "'{s}'"),
            Tok::Star => f.write_str("`*`"),
            Tok::Comma => f.write_str("`,`"),
            Tok::LParen => f.write_str("`(`"),
            Tok::RParen => f.write_str("`)`"),
            Tok::Semi => f.write_str("`;`"),
            Tok::Op(o) => write!(f, "`{o}`"),
        }
    }
}

fn syntax(pos: usize, msg: impl Into<String>) -> Error {
    Error::Syntax {
        pos,
        msg: msg.into(),
    }
}

fn is_date_at(b: &[u8], i: usize) -> bool {
    let d = |k: usize| b.get(i + k).is_some_and(u8::is_ascii_digit);
    (0..4).all(d)
        && b.get(i + 4) == Some(&b'-')
        && (5..7).all(d)
        && b.get(i + 7) == Some(&b'-')
        && (8..10).all(d)
        && !b.get(i + 10).is_some_and(|c| c.is_ascii_alphanumeric())
}

fn lex(text: &str) -> Result<Vec<(usize, Tok)>> {
    let b = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < b.len() {
        let c = b[i];
        let start = i;
        match c {
            c if c.is_ascii_whitespace() => {
                i += 1;
                continue;
            }
            b'*' => {
                out.push((start, Tok::Star));
                i += 1;
            }
            b',' => {
                out.push((start, Tok::Comma));
                i += 1;
            }
            b'(' => {
                out.push((start, Tok::LParen));
                i += 1;
            }
            b')' => {
                out.push((start, Tok::RParen));
                i += 1;
            }
            b';' => {
                out.push((start, Tok::Semi));
                i += 1;
            }
            b'=' => {
                out.push((start, Tok::Op("=")));
                i += 1;
            }
            b'<' | b'>' => {
                let eq = b.get(i + 1) == Some(&b'=');
                let op = match (c, eq) {
                    (b'<', true) => "<=",
                    (b'<', false) => "<",
                    (_, true) => ">=",
                    (_, false) => ">",
                };
                out.push((start, Tok::Op(op)));
                i += 1 + usize::from(eq);
            }
            b'\'' => {
                let mut s = String::new();
                i += 1;
                loop {
                    let Some(rest) = text.get(i..) else {
                        return Err(syntax(start, "unterminated string literal"));
                    };
                    let Some(q) = rest.find('\'') else {
                        return Err(syntax(start, "unterminated string literal"));
                    };
                    s.push_str(&rest[..q]);
                    i += q + 1;
                    if b.get(i) == Some(&b'\'') {
                        s.push('\'');
                        i += 1;
                    } else {
                        break;
                    }
                }
                out.push((start, Tok::Str(s)));
            }
            c if c.is_ascii_digit() && is_date_at(b, i) => {
                out.push((start, Tok::Date(text[i..i + 10].to_string())));
                i += 10;
            }
            c if c.is_ascii_digit() || c == b'-' || c == b'+' || c == b'.' => {
                i += 1;
                while i < b.len() {
                    let d = b[i];
                    let exp_sign = (d == b'-' || d == b'+') && matches!(b[i - 1], b'e' | b'E');
                    if d.is_ascii_digit() || d == b'.' || d == b'e' || d == b'E' || exp_sign {
                        i += 1;
                    } else {
                        break;
                    }
                }
                out.push((start, Tok::Number(text[start..i].to_string())));
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < b.len() && (b[i].is_ascii_alphanumeric() || b[i] == b'_') {
                    i += 1;
                }
                out.push((start, Tok::Word(text[start..i].to_string())));
            }
            _ => {
                let ch = text[i..].chars().next().unwrap_or('?');
                return Err(syntax(start, format!("unexpected character {ch:?}")));
            }
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    at: usize,
    end: usize,
}

impl Parser {
    fn pos(&self) -> usize {
        self.toks.get(self.at).map_or(self.end, |(p, _)| *p)
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.at).map(|(_, t)| t)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.at).map(|(_, t)| t.clone());
        self.at += 1;
        t
    }

    fn peek_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Word(w)) if w.eq_ignore_ascii_case(kw))
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<()> {
        if self.peek_keyword(kw) {
            self.at += 1;
            Ok(())
        } else {
            Err(self.unexpected(&format!("`{kw}`")))
        }
    }

    fn unexpected(&self, wanted: &str) -> Error {
        match self.peek() {
            Some(t) => syntax(self.pos(), format!("expected {wanted}, found {t}")),
            None => syntax(self.pos(), format!("expected {wanted}, found end of query")),
        }
    }

    fn ident(&mut self) -> Result<String> {
        match self.peek() {
            Some(Tok::Word(w)) if !is_reserved(w) => {
                let w = w.clone();
                self.at += 1;
                Ok(w)
            }
            _ => Err(self.unexpected("an identifier")),
        }
    }

    fn expect(&mut self, tok: Tok) -> Result<()> {
        if self.peek() == Some(&tok) {
            self.at += 1;
            Ok(())
        } else {
            Err(self.unexpected(&tok.to_string()))
        }
    }

    fn targets(&mut self) -> Result<Targets> {
        if self.peek() == Some(&Tok::Star) {
            self.at += 1;
            return Ok(Targets::All);
        }
        let func = match self.peek() {
            Some(Tok::Word(w)) if matches!(self.toks.get(self.at + 1), Some((_, Tok::LParen))) => {
                match w.to_ascii_lowercase().as_str() {
                    "count" => Some(Aggregate::Count),
                    "sum" => Some(Aggregate::Sum),
                    "avg" => Some(Aggregate::Avg),
                    _ => return Err(syntax(self.pos(), format!("unknown aggregate `{w}`"))),
                }
            }
            _ => None,
        };
        if let Some(func) = func {
            self.at += 2;
            let attribute = self.ident()?;
            self.expect(Tok::RParen)?;
            return Ok(Targets::Aggregate { func, attribute });
        }
        let mut cols = vec![self.ident()?];
        while self.peek() == Some(&Tok::Comma) {
            self.at += 1;
            cols.push(self.ident()?);
        }
        Ok(Targets::Columns(cols))
    }

    fn literal(&mut self) -> Result<Value> {
        let pos = self.pos();
        match self.bump() {
            Some(Tok::Number(n)) => {
                parse_number(&n).ok_or_else(|| syntax(pos, format!("bad number `{n}`")))
            }
            Some(Tok::Date(d)) => chrono::NaiveDate::parse_from_str(&d, "%Y-%m-%d")
                .map(Value::Date)
                .map_err(|_| syntax(pos, format!("bad date `{d}`"))),
            Some(Tok::Str(s)) => Ok(Value::Str(s)),
            Some(t) => Err(syntax(pos, format!("expected a literal, found {t}"))),
            None => Err(syntax(pos, "expected a literal, found end of query")),
        }
    }

    fn predicate(&mut self) -> Result<Predicate> {
        let attribute = self.ident()?;
        let op = match self.bump() {
            Some(Tok::Op(op)) => op,
            _ => {
                self.at -= 1;
                return Err(self.unexpected("a comparison operator"));
            }
        };
        let v = self.literal()?;
        let op = match op {
            "=" => PredicateOp::Eq(v),
            "<" => PredicateOp::Lt(v),
            "<=" => PredicateOp::Le(v),
            ">" => PredicateOp::Gt(v),
            _ => PredicateOp::Ge(v),
        };
        Ok(Predicate { attribute, op })
    }
}

fn is_reserved(w: &str) -> bool {
    ["select", "from", "where", "and", "with"]
        .iter()
        .any(|k| w.eq_ignore_ascii_case(k))
}

fn parse_number(n: &str) -> Option<Value> {
    if n.contains(['.', 'e', 'E']) {
        n.parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .map(Value::Float)
    } else {
        n.parse::<i64>().ok().map(Value::Int)
    }
}

/// Folds `x >= lo and x < hi` pairs into half-open ranges.
fn fold_ranges(preds: Vec<Predicate>) -> Vec<Predicate> {
    let mut out: Vec<Predicate> = Vec::with_capacity(preds.len());
    let mut used = vec![false; preds.len()];
    for i in 0..preds.len() {
        if used[i] {
            continue;
        }
        if let PredicateOp::Ge(lo) = &preds[i].op {
            let partner = (0..preds.len()).find(|&j| {
                !used[j]
                    && j != i
                    && preds[j].attribute == preds[i].attribute
                    && matches!(&preds[j].op, PredicateOp::Lt(hi) if lo < hi && lo.kind() == hi.kind())
            });
            if let Some(j) = partner {
                let PredicateOp::Lt(hi) = &preds[j].op else {
                    unreachable!()
                };
                used[i] = true;
                used[j] = true;
                out.push(Predicate {
                    attribute: preds[i].attribute.clone(),
                    op: PredicateOp::Range {
                        lo: lo.clone(),
                        hi: hi.clone(),
                    },
                });
                continue;
            }
        }
        used[i] = true;
        out.push(preds[i].clone());
    }
    out
}

pub fn parse_query(text: &str) -> Result<QuerySpec> {
    let mut p = Parser {
        toks: lex(text)?,
        at: 0,
        end: text.len(),
    };
    p.expect_keyword("select")?;
    let targets = p.targets()?;
    p.expect_keyword("from")?;
    let table = p.ident()?;
    let mut predicates = Vec::new();
    if p.peek_keyword("where") {
        p.at += 1;
        predicates.push(p.predicate()?);
        while p.peek_keyword("and") {
            p.at += 1;
            predicates.push(p.predicate()?);
        }
    }
    let mut confidence = 1.0;
    if p.peek_keyword("with") {
        p.at += 1;
        let pos = p.pos();
        confidence = match p.bump() {
            Some(Tok::Number(n)) => n
                .parse::<f64>()
                .map_err(|_| syntax(pos, format!("bad confidence `{n}`")))?,
            Some(t) => return Err(syntax(pos, format!("expected a confidence, found {t}"))),
            None => return Err(syntax(pos, "expected a confidence, found end of query")),
        };
        check_confidence(confidence)?;
    }
    if p.peek() == Some(&Tok::Semi) {
        p.at += 1;
    }
    if p.peek().is_some() {
        return Err(p.unexpected("end of query"));
    }
    Ok(QuerySpec {
        table,
        targets,
        predicates: fold_ranges(predicates),
        confidence,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    #[test]
    fn range_with_confidence() {
        let q = parse_query("select a from t where b >= 10 and b < 20 with 0.8").unwrap();
        assert_eq!(q.table, "t");
        assert_eq!(q.targets, Targets::Columns(vec!["a".into()]));
        assert_eq!(
            q.predicates,
            vec![Predicate::range("b", Value::Int(10), Value::Int(20)).unwrap()]
        );
        assert_eq!(q.confidence, 0.8);
    }

    #[test]
    fn star_without_clauses() {
        let q = parse_query("select * from t").unwrap();
        assert_eq!(q.targets, Targets::All);
        assert!(q.predicates.is_empty());
        assert_eq!(q.confidence, 1.0);
    }

    #[test]
    fn confidence_out_of_range() {
        assert!(matches!(
            parse_query("select a from t with 1.5"),
            Err(Error::ConfidenceRange(c)) if c == 1.5
        ));
        assert!(matches!(
            parse_query("select a from t with 0"),
            Err(Error::ConfidenceRange(_))
        ));
        assert!(matches!(
            parse_query("select a from t with -0.5"),
            Err(Error::ConfidenceRange(_))
        ));
        assert_eq!(
            parse_query("select a from t with 1").unwrap().confidence,
            1.0
        );
    }

    #[test]
    fn keywords_are_case_insensitive() {
        let q = parse_query(
            "SELECT Count(x) FROM tbl WHERE y = 'O''Brien' AND z <= 2024-02-29 With .5;",
        )
        .unwrap();
        assert_eq!(
            q.targets,
            Targets::Aggregate {
                func: Aggregate::Count,
                attribute: "x".into()
            }
        );
        assert_eq!(
            q.predicates[0].op,
            PredicateOp::Eq(Value::Str("O'Brien".into()))
        );
        assert_eq!(
            q.predicates[1].op,
            PredicateOp::Le(Value::Date(NaiveDate::from_ymd_opt(2024, 2, 29).unwrap()))
        );
        assert_eq!(q.confidence, 0.5);
    }

    #[test]
    fn literals() {
        let q = parse_query("select a, b from t where a > -3 and b < 1.5e3 and c >= 7 and c < 7")
            .unwrap();
        assert_eq!(q.predicates[0].op, PredicateOp::Gt(Value::Int(-3)));
        assert_eq!(q.predicates[1].op, PredicateOp::Lt(Value::Float(1500.0)));
        // lo >= hi is not folded into a range
        assert_eq!(q.predicates.len(), 4);
    }

    #[test]
    fn syntax_errors_carry_position() {
        let cases = [
            ("select from t", 7),
            ("select a t", 9),
            ("select a from t where", 21),
            ("select a from t where b 3", 24),
            ("select a from t where b = ", 26),
            ("select a from t with", 20),
            ("select a from t extra", 16),
            ("select a from t where b = 'open", 26),
            ("select a from t where b = #", 26),
            ("select median(a) from t", 7),
            ("select a, from t", 10),
        ];
        for (text, pos) in cases {
            match parse_query(text) {
                Err(Error::Syntax { pos: p, .. }) => assert_eq!(p, pos, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn reserved_words_are_not_identifiers() {
        assert!(parse_query("select from from t").is_err());
        assert!(parse_query("select a from where").is_err());
    }
}

//! Trunk line format: `<cell>\t<field_1>\t...\t<field_K>\n`.
//!
//! Fields are escaped so raw tabs and newlines only ever delimit: `\\`, `\t`,
//! `\n` and `\r` are backslash sequences and an empty value is `\N`.

use crate::error::{Error, Result};
use crate::tablespace::{Attribute, Value};

const EMPTY: &str = "\\N";

fn escape_into(out: &mut String, s: &str) {
    for ch in s.chars() {
        match ch {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
}

fn unescape(s: &str) -> Result<String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(ch) = chars.next() {
        if ch != '\\' {
            out.push(ch);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            other => {
                return Err(Error::Input(format!(
                    "bad escape sequence \\{other:?} in {s:?}"
                )));
            }
        }
    }
    Ok(out)
}

/// Appends one encoded line, including the trailing newline, to `out`.
pub fn encode_line(out: &mut String, cell: usize, record: &[Value]) {
    use std::fmt::Write;
    write!(out, "{cell}").expect("write to String");
    out.push('\t');
    encode_fields(out, record);
    out.push('\n');
}

/// Appends the tab-separated, escaped fields of `record` without a header or
/// newline.
pub fn encode_fields(out: &mut String, record: &[Value]) {
    use std::fmt::Write;
    for (i, v) in record.iter().enumerate() {
        if i > 0 {
            out.push('\t');
        }
        match v {
            Value::Empty => out.push_str(EMPTY),
            Value::Str(s) => escape_into(out, s),
            other => write!(out, "{other}").expect("write to String"),
        }
    }
}

/// Cell index from the line header, without touching the fields.
pub fn line_cell(line: &[u8]) -> Option<usize> {
    let end = line.iter().position(|&b| b == b'\t').unwrap_or(line.len());
    let digits = &line[..end];
    if digits.is_empty() || digits.len() > 19 {
        return None;
    }
    let mut cell = 0usize;
    for &d in digits {
        if !d.is_ascii_digit() {
            return None;
        }
        cell = cell * 10 + usize::from(d - b'0');
    }
    Some(cell)
}

/// Decodes a line (without its newline) into its header and record.
pub fn decode_line(line: &str, attributes: &[Attribute]) -> Result<(usize, Vec<Value>)> {
    let mut parts = line.split('\t');
    let header = parts.next().unwrap_or_default();
    let cell = line_cell(header.as_bytes())
        .ok_or_else(|| Error::Input(format!("bad line header {header:?}")))?;
    let mut record = Vec::with_capacity(attributes.len());
    for attr in attributes {
        let field = parts
            .next()
            .ok_or_else(|| Error::Input(format!("line has too few fields for `{}`", attr.name)))?;
        let value = if field == EMPTY {
            Value::Empty
        } else if field.contains('\\') {
            Value::parse(attr.kind, &unescape(field)?)?
        } else {
            Value::parse(attr.kind, field)?
        };
        record.push(value);
    }
    if parts.next().is_some() {
        return Err(Error::Input("line has too many fields".into()));
    }
    Ok((cell, record))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tablespace::ValueKind;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn attrs() -> Vec<Attribute> {
        [
            ("i", ValueKind::Integer),
            ("f", ValueKind::Float),
            ("s", ValueKind::String),
            ("d", ValueKind::Date),
        ]
        .into_iter()
        .map(|(n, k)| Attribute {
            name: n.into(),
            kind: k,
        })
        .collect()
    }

    #[test]
    fn exact_line_format() {
        let rec = vec![
            Value::Int(-3),
            Value::Float(0.25),
            Value::Str("a\tb\\c\nd".into()),
            Value::Date(NaiveDate::from_ymd_opt(2020, 2, 29).unwrap()),
        ];
        let mut line = String::new();
        encode_line(&mut line, 51, &rec);
        assert_eq!(line, "51\t-3\t0.25\ta\\tb\\\\c\\nd\t2020-02-29\n");
        let (cell, back) = decode_line(line.trim_end_matches('\n'), &attrs()).unwrap();
        assert_eq!(cell, 51);
        assert_eq!(back, rec);
    }

    #[test]
    fn empty_and_empty_string_are_distinct() {
        let rec = vec![
            Value::Empty,
            Value::Empty,
            Value::Str(String::new()),
            Value::Empty,
        ];
        let mut line = String::new();
        encode_line(&mut line, 0, &rec);
        assert_eq!(line, "0\t\\N\t\\N\t\t\\N\n");
        let (_, back) = decode_line(line.trim_end(), &attrs()).unwrap();
        assert!(matches!(back[2], Value::Str(ref s) if s.is_empty()));
        assert!(back[0].is_empty() && back[3].is_empty());
    }

    #[test]
    fn malformed_lines() {
        assert!(decode_line("x\t1\t2\ta\t2020-01-01", &attrs()).is_err());
        assert!(decode_line("1\t1\t2", &attrs()).is_err());
        assert!(decode_line("1\t1\t2\ta\t2020-01-01\textra", &attrs()).is_err());
        assert!(decode_line("1\t1\t2\ta\\q\t2020-01-01", &attrs()).is_err());
        assert_eq!(line_cell(b"123\tabc"), Some(123));
        assert_eq!(line_cell(b"\tabc"), None);
    }

    proptest! {
        #[test]
        fn lines_round_trip(
            cell in 0usize..1_000_000,
            i in any::<i64>(),
            f in any::<f64>().prop_filter("not nan", |x| !x.is_nan()),
            s in "\\PC*",
            days in 0i32..100_000,
        ) {
            let rec = vec![
                Value::Int(i),
                Value::Float(f),
                Value::Str(s),
                Value::Date(NaiveDate::from_num_days_from_ce_opt(days + 1).unwrap()),
            ];
            let mut line = String::new();
            encode_line(&mut line, cell, &rec);
            prop_assert_eq!(line.matches('\n').count(), 1);
            let (c, back) = decode_line(line.strip_suffix('\n').unwrap(), &attrs()).unwrap();
            prop_assert_eq!(c, cell);
            prop_assert_eq!(back, rec);
        }
    }
}

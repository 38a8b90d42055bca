use std::io::Read;

use crate::error::{Error, Result};
use crate::tablespace::{Record, TableSchema, Value};

/// Reads delimiter-separated records whose header row names schema
/// attributes. Columns may appear in any order; unknown columns are ignored
/// and attributes without a column are empty.
pub fn read_delimited<R: Read>(
    schema: &TableSchema,
    reader: R,
    delimiter: u8,
) -> Result<Vec<Record>> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Input(e.to_string()))?
        .clone();
    let columns: Vec<Option<usize>> = schema
        .attributes()
        .iter()
        .map(|a| headers.iter().position(|h| h.trim() == a.name))
        .collect();
    if columns.iter().all(Option::is_none) {
        return Err(Error::Input("header row names no schema attribute".into()));
    }
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Input(e.to_string()))?;
        let values = schema
            .attributes()
            .iter()
            .zip(&columns)
            .map(|(a, col)| match col.and_then(|c| rec.get(c)) {
                Some(text) => Value::parse(a.kind, text)
                    .map_err(|e| Error::Input(format!("row {}: {e}", row + 2))),
                None => Ok(Value::Empty),
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(values);
    }
    Ok(out)
}

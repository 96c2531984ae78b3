//! Reading the `#`-commented CSV tables shared by every artifact.

use std::io::Read;

use csv::{ReaderBuilder, StringRecord, Trim};

/// A data row with its 1-based line number.
#[derive(Debug, Clone)]
pub struct Row {
    pub line: u64,
    pub fields: StringRecord,
}

impl Row {
    /// Trimmed field `i`, empty when absent.
    pub fn get(&self, i: usize) -> &str {
        self.fields.get(i).unwrap_or("")
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn f64(&self, i: usize) -> Result<f64, String> {
        let s = self.get(i);
        s.parse().map_err(|e| format!("'{s}': {e}"))
    }

    /// Empty fields read as `None`.
    pub fn opt_f64(&self, i: usize) -> Result<Option<f64>, String> {
        match self.get(i) {
            "" => Ok(None),
            _ => self.f64(i).map(Some),
        }
    }
}

/// Rows of a table whose header begins with `expected` (and equals it
/// unless `extra_columns`). Lines starting with `#` and blank lines are
/// skipped; row lengths are not checked.
pub fn read_rows<R: Read>(mut reader: R, expected: &[&str], extra_columns: bool) -> Result<Vec<Row>, String> {
    // the reader's own line count skips blank and comment lines, so lines
    // are counted from byte offsets instead
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes).map_err(|e| e.to_string())?;
    let mut rdr =
        ReaderBuilder::new().comment(Some(b'#')).trim(Trim::All).flexible(true).from_reader(bytes.as_slice());
    let header = rdr.headers().map_err(|e| e.to_string())?.clone();
    if header.is_empty() {
        return Err("empty input: missing header".into());
    }
    let matches = header.len() >= expected.len()
        && (extra_columns || header.len() == expected.len())
        && header.iter().zip(expected).all(|(a, b)| a == *b);
    if !matches {
        let got: Vec<&str> = header.iter().collect();
        return Err(format!("malformed header '{}': expected '{}'", got.join(","), expected.join(",")));
    }
    let mut rows = Vec::new();
    for record in rdr.records() {
        let fields = record.map_err(|e| e.to_string())?;
        let mut start = fields.position().map_or(0, |p| p.byte() as usize);
        // the offset points at any skipped blank or comment lines
        while let Some(&b) = bytes.get(start) {
            match b {
                b'\n' | b'\r' => start += 1,
                b'#' => start += bytes[start..].iter().position(|&c| c == b'\n').map_or(bytes.len() - start, |p| p + 1),
                _ => break,
            }
        }
        let line = 1 + bytes[..start].iter().filter(|&&b| b == b'\n').count() as u64;
        rows.push(Row { line, fields });
    }
    Ok(rows)
}

//! CSV form of a trace: header `t,event,<columns...>`, one row per sample.
//! Event annotations of a sample are joined with `;` in the `event` field.
//! Numbers use Rust's shortest round-trip formatting, so reading a file and
//! writing it back reproduces it byte for byte.

use std::fmt::Write as _;
use std::io::Write;

use crate::error::{InputError, Issue};

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub event: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TraceTable {
    pub columns: Vec<String>,
    pub rows: Vec<TraceRow>,
}

impl TraceTable {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Samples of one column.
    pub fn series(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.column(name)?;
        Some(self.rows.iter().map(|r| r.values[k]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,event");
        for c in &self.columns {
            s.push(',');
            s.push_str(c);
        }
        s.push('\n');
        for r in &self.rows {
            write!(s, "{},{}", r.t, r.event).unwrap();
            for v in &r.values {
                write!(s, ",{v}").unwrap();
            }
            s.push('\n');
        }
        s
    }
}

/// Makes an annotation safe for the `event` field.
pub fn sanitize_event(text: &str) -> String {
    text.chars()
        .map(|c| match c {
            ',' | '\n' | '\r' => ' ',
            c => c,
        })
        .collect()
}

pub fn write_trace(table: &TraceTable, mut target: impl Write) -> Result<(), InputError> {
    if table.rows.is_empty() {
        return Err(InputError::Invalid(vec![Issue::new("trace", "no samples to write")]));
    }
    target.write_all(table.to_csv().as_bytes())?;
    target.flush()?;
    Ok(())
}

pub fn write_trace_file(table: &TraceTable, path: &std::path::Path) -> Result<(), InputError> {
    let f = std::fs::File::create(path)?;
    write_trace(table, std::io::BufWriter::new(f))
}

pub fn read_trace(text: &str) -> Result<TraceTable, InputError> {
    let mut lines = text.split_terminator('\n');
    let header = lines.next().ok_or_else(|| InputError::Syntax("empty trace".into()))?;
    let mut cols = header.split(',');
    if cols.next() != Some("t") || cols.next() != Some("event") {
        return Err(InputError::Syntax("header must start with t,event".into()));
    }
    let columns: Vec<String> = cols.map(str::to_string).collect();
    if columns.iter().any(String::is_empty) {
        return Err(InputError::Syntax("empty column name".into()));
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let line_no = n + 2;
        let mut fields = line.split(',');
        let t = parse_num(fields.next(), line_no)?;
        let event = fields
            .next()
            .ok_or_else(|| InputError::Syntax(format!("line {line_no}: missing event field")))?
            .to_string();
        let values = fields.map(|f| parse_num(Some(f), line_no)).collect::<Result<Vec<_>, _>>()?;
        if values.len() != columns.len() {
            return Err(InputError::Syntax(format!(
                "line {line_no}: {} values for {} columns",
                values.len(),
                columns.len()
            )));
        }
        rows.push(TraceRow { t, event, values });
    }
    Ok(TraceTable { columns, rows })
}

fn parse_num(f: Option<&str>, line: usize) -> Result<f64, InputError> {
    let f = f.ok_or_else(|| InputError::Syntax(format!("line {line}: missing field")))?;
    let v: f64 = f
        .parse()
        .map_err(|_| InputError::Syntax(format!("line {line}: bad number {f:?}")))?;
    // only canonical spellings, so re-serialization is byte-identical
    if v.to_string() != f {
        return Err(InputError::Syntax(format!("line {line}: non-canonical number {f:?}")));
    }
    Ok(v)
}

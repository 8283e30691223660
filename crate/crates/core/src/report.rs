//! Byte-stable report output as JSON, CSV or Markdown.
//!
//! Floats are rounded to 12 significant digits before they are written and
//! JSON object keys come out sorted, so identical results always produce
//! identical bytes.

use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Json,
    Csv,
    Md,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            "md" | "markdown" => Ok(Format::Md),
            other => Err(Error::InvalidParameter(format!(
                "unknown format `{other}`; expected json, csv or md"
            ))),
        }
    }
}

/// A command's results: a summary object plus one table.
///
/// JSON output is the summary with the table under `rows` (one object per
/// row); CSV output is the table alone; Markdown shows both.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub kind: String,
    pub summary: Map<String, Value>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl Report {
    pub fn new(kind: impl Into<String>, columns: &[&str]) -> Self {
        Report {
            kind: kind.into(),
            summary: Map::new(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    /// Adds a summary entry. Panics only if `value` cannot be represented as
    /// JSON, which no type in this crate does.
    pub fn set(&mut self, key: &str, value: impl Serialize) -> &mut Self {
        let v = serde_json::to_value(value).expect("report values serialize");
        self.summary.insert(key.to_string(), v);
        self
    }

    /// Merges the fields of a serializable struct into the summary.
    pub fn extend_from(&mut self, value: impl Serialize) -> &mut Self {
        if let Value::Object(m) = serde_json::to_value(value).expect("report values serialize") {
            self.summary.extend(m);
        }
        self
    }

    pub fn push_row(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

/// Rounds to 12 significant digits; non-finite values pass through.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        // Also folds -0.0 into 0.0.
        return if x == 0.0 { 0.0 } else { x };
    }
    format!("{x:.11e}").parse().unwrap_or(x)
}

fn normalize(v: &Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = round_sig(n.as_f64().unwrap_or(f64::NAN));
            serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
        }
        Value::Array(a) => Value::Array(a.iter().map(normalize).collect()),
        Value::Object(m) => Value::Object(m.iter().map(|(k, v)| (k.clone(), normalize(v))).collect()),
        other => other.clone(),
    }
}

fn cell(v: &Value) -> String {
    match normalize(v) {
        Value::Null => String::new(),
        Value::String(s) => s,
        Value::Number(n) => n.to_string(),
        Value::Bool(b) => b.to_string(),
        // Flat vectors go into one cell, space separated; nested ones as JSON.
        Value::Array(a) if a.iter().all(|v| !v.is_array() && !v.is_object()) => {
            a.iter().map(cell).collect::<Vec<_>>().join(" ")
        }
        other => other.to_string(),
    }
}

pub fn render(report: &Report, format: Format) -> Result<String> {
    match format {
        Format::Json => {
            let mut doc = report.summary.clone();
            doc.insert("kind".into(), Value::String(report.kind.clone()));
            doc.insert(
                "columns".into(),
                Value::Array(report.columns.iter().cloned().map(Value::String).collect()),
            );
            let rows = report
                .rows
                .iter()
                .map(|r| {
                    Value::Object(
                        report
                            .columns
                            .iter()
                            .cloned()
                            .zip(r.iter().cloned())
                            .collect(),
                    )
                })
                .collect();
            doc.insert("rows".into(), Value::Array(rows));
            let mut s = serde_json::to_string_pretty(&normalize(&Value::Object(doc)))
                .map_err(|e| Error::InvalidParameter(e.to_string()))?;
            s.push('\n');
            Ok(s)
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let io = |e: csv::Error| Error::InvalidParameter(format!("csv output: {e}"));
            w.write_record(&report.columns).map_err(io)?;
            for r in &report.rows {
                w.write_record(r.iter().map(cell)).map_err(io)?;
            }
            let bytes = w
                .into_inner()
                .map_err(|e| Error::InvalidParameter(format!("csv output: {e}")))?;
            Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
        }
        Format::Md => {
            let mut s = format!("# {}\n\n", report.kind);
            for (k, v) in &report.summary {
                let shown = match normalize(v) {
                    Value::Object(_) => serde_json::to_string(&normalize(v)).unwrap_or_default(),
                    other => cell(&other),
                };
                s.push_str(&format!("- **{k}**: {shown}\n"));
            }
            if !report.summary.is_empty() {
                s.push('\n');
            }
            s.push_str(&format!("| {} |\n", report.columns.join(" | ")));
            s.push_str(&format!(
                "|{}\n",
                report.columns.iter().map(|_| "---|").collect::<String>()
            ));
            for r in &report.rows {
                let cells: Vec<String> = r.iter().map(|c| cell(c).replace('|', "\\|")).collect();
                s.push_str(&format!("| {} |\n", cells.join(" | ")));
            }
            Ok(s)
        }
    }
}

/// Writes the rendered report to `path`, or to stdout when `path` is `None`.
pub fn write_report(report: &Report, format: Format, path: Option<&Path>) -> Result<()> {
    let text = render(report, format)?;
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => std::io::stdout()
            .lock()
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

//! CSV and JSON emission with a stable column order.
//!
//! Floats are written in scientific notation with 17 significant digits,
//! which round-trips every `f64`; the same string is used in both formats.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;
use serde_json::value::RawValue;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::InvalidConfig(format!(
                "unknown report format {other:?}"
            ))),
        }
    }
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        })
    }
}

pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// One cell of a report row.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(u64),
    Float(f64),
    Text(String),
}

impl Cell {
    fn csv_text(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => format_f64(*v),
            Cell::Text(s) => s.clone(),
        }
    }

    fn json(&self) -> Box<RawValue> {
        let text = match self {
            Cell::Float(v) if !v.is_finite() => {
                serde_json::to_string(&format_f64(*v)).expect("string encodes")
            }
            Cell::Int(_) | Cell::Float(_) => self.csv_text(),
            Cell::Text(s) => serde_json::to_string(s).expect("string encodes"),
        };
        RawValue::from_string(text).expect("valid json literal")
    }
}

/// Named cells of one JSON object.
pub type JsonObject = Vec<(&'static str, Cell)>;

/// Anything that can be laid out as a header plus rows of cells.
pub trait Tabular {
    fn columns(&self) -> Vec<&'static str>;
    fn records(&self) -> Vec<Vec<Cell>>;
    /// Additional top-level JSON members written after `rows`.
    fn json_extras(&self) -> Vec<(&'static str, Vec<JsonObject>)> {
        Vec::new()
    }
}

pub fn to_csv(report: &impl Tabular) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(report.columns())?;
    for rec in report.records() {
        w.write_record(rec.iter().map(Cell::csv_text))?;
    }
    w.into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

#[derive(Serialize)]
struct JsonRow(#[serde(serialize_with = "ser_row")] Vec<(&'static str, Box<RawValue>)>);

fn ser_row<S: serde::Serializer>(
    row: &[(&'static str, Box<RawValue>)],
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeMap;
    let mut m = s.serialize_map(Some(row.len()))?;
    for (k, v) in row {
        m.serialize_entry(k, v)?;
    }
    m.end()
}

struct JsonDoc(Vec<(&'static str, Vec<JsonRow>)>);

impl Serialize for JsonDoc {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut m = s.serialize_map(Some(self.0.len()))?;
        for (k, v) in &self.0 {
            m.serialize_entry(k, v)?;
        }
        m.end()
    }
}

pub fn to_json(report: &impl Tabular) -> Result<Vec<u8>> {
    let cols = report.columns();
    let rows = report
        .records()
        .into_iter()
        .map(|rec| {
            JsonRow(
                cols.iter()
                    .copied()
                    .zip(rec.iter().map(Cell::json))
                    .collect(),
            )
        })
        .collect();
    let mut doc = vec![("rows", rows)];
    for (name, entries) in report.json_extras() {
        doc.push((
            name,
            entries
                .into_iter()
                .map(|pairs| JsonRow(pairs.into_iter().map(|(k, c)| (k, c.json())).collect()))
                .collect(),
        ));
    }
    let mut out = serde_json::to_vec_pretty(&JsonDoc(doc))?;
    out.push(b'\n');
    Ok(out)
}

pub fn render(report: &impl Tabular, format: ReportFormat) -> Result<Vec<u8>> {
    match format {
        ReportFormat::Csv => to_csv(report),
        ReportFormat::Json => to_json(report),
    }
}

/// Writes the report to `path`.
pub fn emit_report(report: &impl Tabular, format: ReportFormat, path: &Path) -> Result<()> {
    std::fs::write(path, render(report, format)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Demo(Vec<(u64, f64, &'static str)>);

    impl Tabular for Demo {
        fn columns(&self) -> Vec<&'static str> {
            vec!["id", "value", "label"]
        }

        fn records(&self) -> Vec<Vec<Cell>> {
            self.0
                .iter()
                .map(|(i, v, l)| vec![Cell::Int(*i), Cell::Float(*v), Cell::Text(l.to_string())])
                .collect()
        }
    }

    #[test]
    fn seventeen_digits_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0] {
            let s = format_f64(v);
            assert_eq!(s.parse::<f64>().unwrap(), v);
            let mantissa = s.split('e').next().unwrap().trim_start_matches('-');
            assert_eq!(mantissa.chars().filter(char::is_ascii_digit).count(), 17);
        }
    }

    #[test]
    fn empty_report_is_header_only() {
        assert_eq!(to_csv(&Demo(vec![])).unwrap(), b"id,value,label\n");
    }

    #[test]
    fn csv_and_json_agree() {
        let d = Demo(vec![(1, 0.1, "a"), (2, 2.0 / 3.0, "b,c")]);
        let csv = String::from_utf8(to_csv(&d).unwrap()).unwrap();
        let json: serde_json::Value = serde_json::from_slice(&to_json(&d).unwrap()).unwrap();
        let mut rdr = csv::Reader::from_reader(csv.as_bytes());
        for (rec, row) in rdr.records().zip(json["rows"].as_array().unwrap()) {
            let rec = rec.unwrap();
            assert_eq!(rec[0].parse::<u64>().unwrap(), row["id"].as_u64().unwrap());
            assert_eq!(
                rec[1].parse::<f64>().unwrap(),
                row["value"].as_f64().unwrap()
            );
            assert_eq!(&rec[2], row["label"].as_str().unwrap());
        }
        assert_eq!(to_json(&d).unwrap(), to_json(&d).unwrap());
    }
}

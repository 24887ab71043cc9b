//! CSV result tables with a `# metadata:` header block.
//!
//! Layout: `# metadata: key=value` lines, one `# units:` line, then a header row and data rows.
//! Infinite values are written as `inf`; numbers use the shortest round-trip representation,
//! so identical inputs give identical bytes.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Text(String),
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Num(v) if v.is_infinite() => f.write_str(if *v > 0.0 { "inf" } else { "-inf" }),
            Cell::Num(v) => write!(f, "{v}"),
            Cell::Text(s) => f.write_str(s),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Num(v as f64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl Cell {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Num(v) => Some(*v),
            Cell::Text(_) => None,
        }
    }

    fn parse(s: &str) -> Self {
        match s {
            "inf" => Cell::Num(f64::INFINITY),
            "-inf" => Cell::Num(f64::NEG_INFINITY),
            _ => s
                .parse()
                .map(Cell::Num)
                .unwrap_or_else(|_| Cell::Text(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub name: String,
    /// `(column name, unit)`.
    pub schema: Vec<(String, String)>,
    pub rows: Vec<Vec<Cell>>,
    pub metadata: BTreeMap<String, String>,
}

impl ResultTable {
    pub fn new(name: &str, schema: &[(&str, &str)]) -> Self {
        Self {
            name: name.to_string(),
            schema: schema
                .iter()
                .map(|(n, u)| (n.to_string(), u.to_string()))
                .collect(),
            rows: Vec::new(),
            metadata: BTreeMap::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) -> Result<()> {
        if row.len() != self.schema.len() {
            return Err(Error::DimensionMismatch(format!(
                "row has {} cells, table `{}` has {} columns",
                row.len(),
                self.name,
                self.schema.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        self.metadata.insert(key.to_string(), value.to_string());
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.schema
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| {
                Error::InvalidParameter(format!("table `{}` has no column `{name}`", self.name))
            })
    }

    /// Numeric values of a column (text cells are skipped).
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let i = self.column_index(name)?;
        Ok(self.rows.iter().filter_map(|r| r[i].as_f64()).collect())
    }

    /// Rows whose text column `name` equals `value`.
    pub fn filter_text(&self, name: &str, value: &str) -> Result<Self> {
        let i = self.column_index(name)?;
        let mut out = self.clone();
        out.rows
            .retain(|r| matches!(&r[i], Cell::Text(s) if s == value));
        Ok(out)
    }

    /// Rows whose numeric column `name` equals `value`.
    pub fn filter_num(&self, name: &str, value: f64) -> Result<Self> {
        let i = self.column_index(name)?;
        let mut out = self.clone();
        out.rows.retain(|r| r[i].as_f64() == Some(value));
        Ok(out)
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut out = Vec::new();
        writeln!(out, "# metadata: table={}", self.name)?;
        for (k, v) in &self.metadata {
            writeln!(out, "# metadata: {k}={v}")?;
        }
        let units: Vec<String> = self
            .schema
            .iter()
            .map(|(n, u)| format!("{n}={u}"))
            .collect();
        writeln!(out, "# units: {}", units.join(","))?;
        {
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record(self.schema.iter().map(|(n, _)| n.as_str()))?;
            for r in &self.rows {
                w.write_record(r.iter().map(|c| c.to_string()))?;
            }
            w.flush()?;
        }
        Ok(String::from_utf8(out).expect("csv output is UTF-8"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()?)?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut metadata = BTreeMap::new();
        let mut units = BTreeMap::new();
        let mut body = String::new();
        for line in BufReader::new(file).lines() {
            let line = line?;
            if let Some(m) = line.strip_prefix("# metadata: ") {
                if let Some((k, v)) = m.split_once('=') {
                    metadata.insert(k.to_string(), v.to_string());
                }
            } else if let Some(u) = line.strip_prefix("# units: ") {
                for pair in u.split(',') {
                    if let Some((k, v)) = pair.split_once('=') {
                        units.insert(k.to_string(), v.to_string());
                    }
                }
            } else {
                body.push_str(&line);
                body.push('\n');
            }
        }
        let name = metadata.remove("table").unwrap_or_default();
        let mut rdr = csv::Reader::from_reader(body.as_bytes());
        let schema = rdr
            .headers()?
            .iter()
            .map(|h| (h.to_string(), units.get(h).cloned().unwrap_or_default()))
            .collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            rows.push(rec?.iter().map(Cell::parse).collect());
        }
        Ok(Self {
            name,
            schema,
            rows,
            metadata,
        })
    }
}

/// Hex SHA-256 of a string (used to fingerprint configurations).
pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

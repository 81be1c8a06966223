//! Result tables: header row, units row, data rows; CSV or JSON.

use std::io::Write;

use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Cell {
    Text(String),
    Num(f64),
}

impl Cell {
    fn csv_text(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Num(x) => format!("{x:e}"),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Tolerances {
    pub rel_tol: f64,
    pub matsubara_rel_tol: f64,
    pub psd_tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metadata {
    pub command: String,
    pub scenario_hash: String,
    pub tool_version: String,
    pub tolerances: Tolerances,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultTable {
    pub columns: Vec<String>,
    pub units: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl ResultTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn column(&mut self, name: impl Into<String>, unit: impl Into<String>) {
        self.columns.push(name.into());
        self.units.push(unit.into());
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width must match the header");
        self.rows.push(row);
    }

    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.columns)?;
        w.write_record(&self.units)?;
        for r in &self.rows {
            w.write_record(r.iter().map(Cell::csv_text))?;
        }
        w.flush()
    }

    pub fn write_json<W: Write>(&self, mut out: W, metadata: &Metadata) -> std::io::Result<()> {
        #[derive(Serialize)]
        struct Doc<'a> {
            metadata: &'a Metadata,
            columns: &'a [String],
            units: &'a [String],
            rows: &'a [Vec<Cell>],
        }
        let doc = Doc { metadata, columns: &self.columns, units: &self.units, rows: &self.rows };
        serde_json::to_writer_pretty(&mut out, &doc)?;
        writeln!(out)
    }
}

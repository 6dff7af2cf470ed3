use std::io::Read;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kind of a raw tabular field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FieldKind {
    Continuous,
    /// Two levels, written `0` and `1`.
    Binary,
    Categorical { levels: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Field {
    pub name: String,
    #[serde(flatten)]
    pub kind: FieldKind,
}

impl Field {
    pub fn continuous(name: impl Into<String>) -> Self {
        Field { name: name.into(), kind: FieldKind::Continuous }
    }

    pub fn binary(name: impl Into<String>) -> Self {
        Field { name: name.into(), kind: FieldKind::Binary }
    }

    pub fn categorical(name: impl Into<String>, levels: &[&str]) -> Self {
        Field { name: name.into(), kind: FieldKind::Categorical { levels: levels.iter().map(|s| s.to_string()).collect() } }
    }

    /// Number of encoded columns.
    pub fn width(&self) -> usize {
        match &self.kind {
            FieldKind::Continuous => 1,
            FieldKind::Binary => 2,
            FieldKind::Categorical { levels } => levels.len(),
        }
    }

    fn levels(&self) -> Vec<&str> {
        match &self.kind {
            FieldKind::Continuous => Vec::new(),
            FieldKind::Binary => vec!["0", "1"],
            FieldKind::Categorical { levels } => levels.iter().map(|s| s.as_str()).collect(),
        }
    }
}

/// One raw cell; `None` is missing.
pub type RawCell = Option<String>;

/// Row-major matrix whose cells may be missing.
#[derive(Debug, Clone, PartialEq)]
pub struct TableMatrix {
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<Option<f64>>,
}

impl TableMatrix {
    pub fn new(rows: usize, cols: usize, cells: Vec<Option<f64>>) -> Result<Self> {
        if cells.len() != rows * cols {
            return Err(Error::shape("table", format!("{} cells for {rows}×{cols}", cells.len())));
        }
        Ok(TableMatrix { rows, cols, cells })
    }

    pub fn get(&self, r: usize, c: usize) -> Option<f64> {
        self.cells[r * self.cols + c]
    }

    pub fn select_rows(&self, idx: &[usize]) -> TableMatrix {
        let mut cells = Vec::with_capacity(idx.len() * self.cols);
        for &r in idx {
            cells.extend_from_slice(&self.cells[r * self.cols..(r + 1) * self.cols]);
        }
        TableMatrix { rows: idx.len(), cols: self.cols, cells }
    }

    pub fn missing_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_none()).count()
    }
}

/// Field layout plus z-score statistics fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularSchema {
    pub fields: Vec<Field>,
    /// `(mean, std)` per field; `None` for non-continuous fields.
    #[serde(default)]
    pub stats: Vec<Option<(f64, f64)>>,
}

impl TabularSchema {
    pub fn new(fields: Vec<Field>) -> Self {
        TabularSchema { stats: vec![None; fields.len()], fields }
    }

    pub fn encoded_width(&self) -> usize {
        self.fields.iter().map(Field::width).sum()
    }

    /// Encoded column names: the field name, or `field=level` for one-hot
    /// columns.
    pub fn column_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for f in &self.fields {
            match f.kind {
                FieldKind::Continuous => out.push(f.name.clone()),
                _ => out.extend(f.levels().iter().map(|l| format!("{}={l}", f.name))),
            }
        }
        out
    }

    fn check_width(&self, row: &[RawCell], r: usize) -> Result<()> {
        if row.len() != self.fields.len() {
            return Err(Error::Data(format!("row {r} has {} cells, schema has {} fields", row.len(), self.fields.len())));
        }
        Ok(())
    }

    /// Fits population mean and std of each continuous field on `rows`.
    /// A constant column gets std 1 so it encodes to 0.
    pub fn fit(&mut self, rows: &[Vec<RawCell>]) -> Result<()> {
        for (r, row) in rows.iter().enumerate() {
            self.check_width(row, r)?;
        }
        self.stats = Vec::with_capacity(self.fields.len());
        for (j, f) in self.fields.iter().enumerate() {
            if f.kind != FieldKind::Continuous {
                self.stats.push(None);
                continue;
            }
            let mut xs = Vec::new();
            for (r, row) in rows.iter().enumerate() {
                if let Some(s) = &row[j] {
                    xs.push(parse_number(s, r, &f.name)?);
                }
            }
            if xs.is_empty() {
                warn!("field {} has no observed training values", f.name);
                self.stats.push(Some((0.0, 1.0)));
                continue;
            }
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let std = if var > 0.0 { var.sqrt() } else { 1.0 };
            self.stats.push(Some((mean, std)));
        }
        Ok(())
    }

    /// Encodes raw rows: continuous fields z-scored with the fitted stats,
    /// binary and categorical fields one-hot. Missing cells stay missing
    /// across their whole block; an unseen category gives an all-zero block.
    pub fn encode(&self, rows: &[Vec<RawCell>]) -> Result<TableMatrix> {
        if self.stats.len() != self.fields.len() {
            return Err(Error::Data("schema statistics not fitted".into()));
        }
        let width = self.encoded_width();
        let mut cells = Vec::with_capacity(rows.len() * width);
        for (r, row) in rows.iter().enumerate() {
            self.check_width(row, r)?;
            for (j, f) in self.fields.iter().enumerate() {
                let cell = row[j].as_deref();
                match (&f.kind, cell) {
                    (FieldKind::Continuous, None) => cells.push(None),
                    (FieldKind::Continuous, Some(s)) => {
                        let (mean, std) = self.stats[j].expect("continuous stats");
                        cells.push(Some((parse_number(s, r, &f.name)? - mean) / std));
                    }
                    (_, None) => cells.extend(std::iter::repeat_n(None, f.width())),
                    (_, Some(s)) => {
                        let levels = f.levels();
                        let hit = levels.iter().position(|l| *l == s);
                        if hit.is_none() {
                            warn!("row {r}: unseen level {s:?} for field {}", f.name);
                        }
                        cells.extend((0..levels.len()).map(|k| Some(if Some(k) == hit { 1.0 } else { 0.0 })));
                    }
                }
            }
        }
        TableMatrix::new(rows.len(), width, cells)
    }
}

fn parse_number(s: &str, r: usize, field: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Data(format!("row {r}: field {field}: {s:?} is not a finite number")))
}

/// Raw table read from CSV: header plus string cells, with empty cells and
/// `NA` mapped to missing.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<RawCell>>,
}

impl RawTable {
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header = rdr.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(csv_err)?;
            rows.push(rec.iter().map(|c| if c.is_empty() || c == "NA" { None } else { Some(c.to_string()) }).collect());
        }
        Ok(RawTable { header, rows })
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.header.iter().position(|h| h == name).ok_or_else(|| Error::Data(format!("missing column {name:?}")))
    }

    /// Cells of the named columns, in the given order.
    pub fn project(&self, names: &[&str]) -> Result<Vec<Vec<RawCell>>> {
        let idx: Vec<usize> = names.iter().map(|n| self.column(n)).collect::<Result<_>>()?;
        Ok(self.rows.iter().map(|r| idx.iter().map(|&i| r[i].clone()).collect()).collect())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Data(format!("csv: {e}"))
}

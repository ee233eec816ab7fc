//! Sample matrices and their CSV representation.
//!
//! A CSV file holds one header row of variable names followed by one row per
//! sample. The numerical case names its variables `x1..x8`.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// N x m matrix: samples in rows, process variables in columns.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix(DMatrix<f64>);

impl DataMatrix {
    pub fn new(matrix: DMatrix<f64>) -> Self {
        DataMatrix(matrix)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != m) {
            return Err(Error::DimensionMismatch(format!(
                "row {bad} has {} entries, expected {m}",
                rows[bad].len()
            )));
        }
        Ok(DataMatrix(DMatrix::from_fn(n, m, |i, j| rows[i][j])))
    }

    pub fn n_samples(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_vars(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn as_matrix_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Rows `start..end` as a new matrix.
    pub fn rows_range(&self, start: usize, end: usize) -> DataMatrix {
        DataMatrix(self.0.rows(start, end - start).into_owned())
    }

    /// Default variable names `x1..xm`.
    pub fn default_header(m: usize) -> Vec<String> {
        (1..=m).map(|i| format!("x{i}")).collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W, header: &[String]) -> Result<()> {
        if header.len() != self.n_vars() {
            return Err(Error::DimensionMismatch(format!(
                "header has {} names for {} columns",
                header.len(),
                self.n_vars()
            )));
        }
        let mut w = csv::Writer::from_writer(writer);
        let to_err = |e: csv::Error| Error::io("<csv>", std::io::Error::other(e));
        w.write_record(header).map_err(to_err)?;
        for row in self.0.row_iter() {
            w.write_record(row.iter().map(|v| format!("{v:e}")))
                .map_err(to_err)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(file, &Self::default_header(self.n_vars()))
            .map_err(|e| relabel_io(e, path))
    }

    /// Reads a headered CSV. Parse failures name the 1-based file line.
    pub fn read_csv<R: Read>(reader: R) -> Result<(Vec<String>, DataMatrix)> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| Error::Parse {
                line: 1,
                message: e.to_string(),
            })?
            .iter()
            .map(str::to_owned)
            .collect();
        if header.is_empty() || header.iter().all(String::is_empty) {
            return Err(Error::Parse {
                line: 1,
                message: "missing header row".into(),
            });
        }
        let mut rows = Vec::new();
        for (idx, record) in rdr.records().enumerate() {
            let line = idx + 2;
            let record = record.map_err(|e| Error::Parse {
                line: e.position().map_or(line, |p| p.line() as usize),
                message: e.to_string(),
            })?;
            if record.len() != header.len() {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {} fields, found {}", header.len(), record.len()),
                });
            }
            let row = record
                .iter()
                .map(|field| {
                    field.parse::<f64>().map_err(|_| Error::Parse {
                        line,
                        message: format!("not a number: {field:?}"),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Parse {
                    line,
                    message: "non-finite value".into(),
                });
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::Parse {
                line: 2,
                message: "no data rows".into(),
            });
        }
        Ok((header, DataMatrix::from_rows(&rows)?))
    }

    pub fn load_csv(path: &Path) -> Result<DataMatrix> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::read_csv(file)?.1)
    }
}

fn relabel_io(err: Error, path: &Path) -> Error {
    match err {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    }
}

impl From<DMatrix<f64>> for DataMatrix {
    fn from(m: DMatrix<f64>) -> Self {
        DataMatrix(m)
    }
}

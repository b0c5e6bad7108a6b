//! Row-major numeric data matrix shared by the estimator, the baselines,
//! and the pipelines. Rows are observations, columns are variables.

use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct DataMatrix {
    n: usize,
    p: usize,
    values: Vec<f64>,
    column_names: Option<Vec<String>>,
}

impl DataMatrix {
    /// Wraps row-major values. Every entry must be finite; `n = 0` is a
    /// valid empty matrix with `p` columns.
    pub fn new(n: usize, p: usize, values: Vec<f64>) -> Result<Self> {
        assert!(p > 0, "need at least one column");
        if values.len() != n * p {
            return Err(Error::DimensionMismatch {
                left: n * p,
                right: values.len(),
            });
        }
        for (idx, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    row: idx / p,
                    column: idx % p,
                });
            }
        }
        Ok(DataMatrix {
            n,
            p,
            values,
            column_names: None,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map(|r| r.len()).unwrap_or(0);
        for row in rows {
            if row.len() != p {
                return Err(Error::DimensionMismatch {
                    left: p,
                    right: row.len(),
                });
            }
        }
        DataMatrix::new(n, p, rows.iter().flatten().copied().collect())
    }

    pub fn with_column_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.p {
            return Err(Error::DimensionMismatch {
                left: self.p,
                right: names.len(),
            });
        }
        self.column_names = Some(names);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.p + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.p..(i + 1) * self.p]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, j)).collect()
    }

    pub fn column_names(&self) -> Option<&[String]> {
        self.column_names.as_deref()
    }

    /// Name of column `j`, falling back to `x<j>` when the matrix carries
    /// no header.
    pub fn column_label(&self, j: usize) -> String {
        match &self.column_names {
            Some(names) => names[j].clone(),
            None => format!("x{j}"),
        }
    }

    /// Returns a copy with each column shifted to mean zero.
    pub fn centered(&self) -> DataMatrix {
        let mut means = vec![0.0; self.p];
        for i in 0..self.n {
            for j in 0..self.p {
                means[j] += self.get(i, j);
            }
        }
        for m in means.iter_mut() {
            *m /= self.n.max(1) as f64;
        }
        let mut values = self.values.clone();
        for i in 0..self.n {
            for j in 0..self.p {
                values[i * self.p + j] -= means[j];
            }
        }
        DataMatrix {
            n: self.n,
            p: self.p,
            values,
            column_names: self.column_names.clone(),
        }
    }

    /// Matrix restricted to the given columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> DataMatrix {
        for &j in cols {
            assert!(j < self.p, "column {j} out of range for width {}", self.p);
        }
        let mut values = Vec::with_capacity(self.n * cols.len());
        for i in 0..self.n {
            for &j in cols {
                values.push(self.get(i, j));
            }
        }
        DataMatrix {
            n: self.n,
            p: cols.len(),
            values,
            column_names: self
                .column_names
                .as_ref()
                .map(|names| cols.iter().map(|&j| names[j].clone()).collect()),
        }
    }

    /// Parses a numeric CSV: one header row of column names, then one row
    /// of reals per observation.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let names: Vec<String> = rdr
            .headers()?
            .iter()
            .map(|s| s.to_string())
            .collect();
        if names.is_empty() {
            return Err(Error::MalformedInput("empty header row".into()));
        }
        let p = names.len();
        let mut values = Vec::new();
        let mut n = 0usize;
        for (i, record) in rdr.records().enumerate() {
            let record = record?;
            if record.len() != p {
                return Err(Error::MalformedInput(format!(
                    "row {} has {} fields, expected {p}",
                    i + 1,
                    record.len()
                )));
            }
            for (j, field) in record.iter().enumerate() {
                let v: f64 = field.parse().map_err(|_| {
                    Error::MalformedInput(format!(
                        "row {}, column {} ({}): cannot parse {field:?} as a number",
                        i + 1,
                        j + 1,
                        names[j]
                    ))
                })?;
                if !v.is_finite() {
                    return Err(Error::NonFinite { row: i, column: j });
                }
                values.push(v);
            }
            n += 1;
        }
        DataMatrix::new(n, p, values)?.with_column_names(names)
    }

    pub fn read_csv_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        DataMatrix::read_csv(file)
    }
}

//! Datasets and CSV ingestion.

use std::io::Read;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{C3Error, Result};

/// A response vector together with named predictors.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub response_name: String,
    pub y: Vec<f64>,
    pub names: Vec<String>,
    /// `n x p` predictor matrix in original units.
    pub x: DMatrix<f64>,
}

impl Dataset {
    pub fn new(response_name: impl Into<String>, y: Vec<f64>, names: Vec<String>, x: DMatrix<f64>) -> Result<Self> {
        if x.nrows() != y.len() || x.ncols() != names.len() {
            return Err(C3Error::DimensionMismatch(format!(
                "{} responses, {}x{} predictors, {} names",
                y.len(),
                x.nrows(),
                x.ncols(),
                names.len()
            )));
        }
        Ok(Self {
            response_name: response_name.into(),
            y,
            names,
            x,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Writes the dataset as CSV with the response in the first column.
    pub fn to_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| C3Error::Data(e.to_string());
        let mut header = vec![self.response_name.clone()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header).map_err(io)?;
        for i in 0..self.n() {
            let mut row = vec![format!("{:?}", self.y[i])];
            row.extend((0..self.p()).map(|j| format!("{:?}", self.x[(i, j)])));
            w.write_record(&row).map_err(io)?;
        }
        w.flush().map_err(|e| C3Error::Data(e.to_string()))
    }
}

/// Reads a comma-separated file with a header row. The response is the
/// column named `response`, or the first column when `None`.
pub fn load_csv(path: impl AsRef<Path>, response: Option<&str>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|e| C3Error::Data(format!("cannot open {}: {e}", path.display())))?;
    read_csv(file, response)
}

/// Data rows are numbered from 1, the header excluded.
pub fn read_csv<R: Read>(reader: R, response: Option<&str>) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| C3Error::Data(format!("cannot read header: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.len() < 2 {
        return Err(C3Error::Data("need a response and at least one predictor column".into()));
    }
    let resp = match response {
        None => 0,
        Some(name) => header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| C3Error::Data(format!("response column '{name}' not found")))?,
    };

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut bad: Vec<usize> = Vec::new();
    for (k, record) in rdr.records().enumerate() {
        let row = k + 1;
        let record = record.map_err(|e| C3Error::Data(format!("row {row}: {e}")))?;
        if record.len() != header.len() {
            return Err(C3Error::Data(format!(
                "row {row}: expected {} fields, found {}",
                header.len(),
                record.len()
            )));
        }
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(v) if v.iter().all(|x| x.is_finite()) => rows.push(v),
            _ => bad.push(row),
        }
    }
    if !bad.is_empty() {
        let list: Vec<String> = bad.iter().map(usize::to_string).collect();
        return Err(C3Error::Data(format!("non-numeric values in row(s) {}", list.join(", "))));
    }
    if rows.len() < 2 {
        return Err(C3Error::Data(format!("need at least 2 rows, found {}", rows.len())));
    }

    let n = rows.len();
    let predictors: Vec<usize> = (0..header.len()).filter(|&j| j != resp).collect();
    let y = rows.iter().map(|r| r[resp]).collect();
    let x = DMatrix::from_fn(n, predictors.len(), |i, k| rows[i][predictors[k]]);
    let names = predictors.iter().map(|&j| header[j].clone()).collect();
    Dataset::new(header[resp].clone(), y, names, x)
}

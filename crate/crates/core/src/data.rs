//! Tabular datasets: CSV ingestion and per-feature normalisation.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Per-feature `(x - mean) / scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalization {
    /// Column means and standard deviations; constant columns get scale 1.
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map(Vec::len).ok_or_else(|| Error::Data("cannot normalise an empty dataset".into()))?;
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            check_dim("row length", d, r.len())?;
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let scale = var.into_iter().map(|v| if v > 0.0 { v.sqrt() } else { 1.0 }).collect();
        Ok(Self { mean, scale })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect()
    }

    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| v * s + m).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub target_name: Option<String>,
    pub target: Option<Vec<f64>>,
    pub normalization: Option<Normalization>,
    /// Rows dropped at ingestion because of missing values.
    #[serde(default)]
    pub dropped_rows: usize,
}

impl Dataset {
    pub fn new(feature_names: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let ds = Self {
            feature_names,
            rows,
            target_name: None,
            target: None,
            normalization: None,
            dropped_rows: 0,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, r) in self.rows.iter().enumerate() {
            if r.len() != self.features() {
                return Err(Error::Data(format!("row {i} has {} values, expected {}", r.len(), self.features())));
            }
            if let Some(j) = r.iter().position(|v| !v.is_finite()) {
                return Err(Error::Data(format!("row {i} column '{}' is not finite", self.feature_names[j])));
            }
        }
        if let Some(t) = &self.target {
            check_dim("target length", self.rows.len(), t.len())?;
        }
        Ok(())
    }

    /// Fits and applies normalisation in place; the statistics are kept so
    /// the transform can be undone.
    pub fn normalize(&mut self) -> Result<()> {
        if self.normalization.is_some() {
            return Err(Error::Usage("dataset is already normalised".into()));
        }
        let norm = Normalization::fit(&self.rows)?;
        for r in &mut self.rows {
            *r = norm.apply(r);
        }
        self.normalization = Some(norm);
        Ok(())
    }

    /// Per-feature mean of the rows.
    pub fn column_means(&self) -> Vec<f64> {
        let n = self.rows.len().max(1) as f64;
        let mut m = vec![0.0; self.features()];
        for r in &self.rows {
            for (a, v) in m.iter_mut().zip(r) {
                *a += v / n;
            }
        }
        m
    }

    /// First `floor(frac * n)` rows and the rest.
    pub fn split(&self, frac: f64) -> Result<(Dataset, Dataset)> {
        if !(0.0..=1.0).contains(&frac) {
            return Err(Error::Usage(format!("split fraction {frac} outside [0, 1]")));
        }
        let cut = (frac * self.len() as f64).floor() as usize;
        let part = |lo: usize, hi: usize| Dataset {
            feature_names: self.feature_names.clone(),
            rows: self.rows[lo..hi].to_vec(),
            target_name: self.target_name.clone(),
            target: self.target.as_ref().map(|t| t[lo..hi].to_vec()),
            normalization: self.normalization.clone(),
            dropped_rows: 0,
        };
        Ok((part(0, cut), part(cut, self.len())))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestOptions {
    /// Column to split off as the target.
    pub target: Option<String>,
    /// Cell contents treated as missing (compared after trimming).
    pub missing_markers: Vec<String>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            target: None,
            missing_markers: ["", "NA", "NaN", "nan", "?", "null"].iter().map(|s| s.to_string()).collect(),
        }
    }
}

pub fn ingest_csv(path: impl AsRef<Path>, opts: &IngestOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    ingest_reader(file, opts)
}

/// CSV with a header row. Rows with a missing cell are dropped and counted;
/// any other unparseable cell is an error naming its line and column.
pub fn ingest_reader<R: Read>(reader: R, opts: &IngestOptions) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Data(format!("cannot read header: {e}")))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(Error::Data("empty file: no header row".into()));
    }
    let target_col = match &opts.target {
        Some(name) => Some(
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Data(format!("target column '{name}' not in header")))?,
        ),
        None => None,
    };
    let feature_names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|(j, _)| Some(*j) != target_col)
        .map(|(_, h)| h.clone())
        .collect();

    let mut rows = Vec::new();
    let mut target = Vec::new();
    let mut dropped = 0;
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Data(format!("malformed csv: {e}")))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != header.len() {
            return Err(Error::Data(format!(
                "line {line}: {} fields, header has {}",
                record.len(),
                header.len()
            )));
        }
        let mut values = Vec::with_capacity(header.len());
        let mut missing = false;
        for (j, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            if opts.missing_markers.iter().any(|m| m == cell) {
                missing = true;
                continue;
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| Error::Data(format!("line {line} column '{}': cannot parse '{cell}'", header[j])))?;
            if !v.is_finite() {
                return Err(Error::Data(format!("line {line} column '{}': non-finite value", header[j])));
            }
            values.push(v);
        }
        if missing {
            dropped += 1;
            continue;
        }
        if let Some(t) = target_col {
            target.push(values.remove(t));
        }
        rows.push(values);
    }
    if rows.is_empty() {
        return Err(Error::Data(if dropped == 0 {
            "empty file: no data rows".into()
        } else {
            format!("all {dropped} data rows have missing values")
        }));
    }
    let ds = Dataset {
        feature_names,
        rows,
        target_name: opts.target.clone(),
        target: target_col.map(|_| target),
        normalization: None,
        dropped_rows: dropped,
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(s: &str) -> Result<Dataset> {
        ingest_reader(s.as_bytes(), &IngestOptions::default())
    }

    #[test]
    fn two_by_three() {
        let ds = read("a,b,c\n1,2,3\n4,5,6\n").unwrap();
        assert_eq!((ds.len(), ds.features()), (2, 3));
        assert_eq!(ds.rows[1], vec![4.0, 5.0, 6.0]);
    }

    #[test]
    fn bad_cell_names_line_and_column() {
        let err = read("a,b,c\n1,2,3\n4,x5,6\n").unwrap_err().to_string();
        assert!(err.contains("line 3") && err.contains("'b'"), "{err}");
    }

    #[test]
    fn missing_rows_are_counted() {
        let ds = read("a,b\n1,2\nNA,3\n4,\n5,6\n?,?\n").unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dropped_rows, 3);
    }

    #[test]
    fn empty_inputs() {
        assert!(read("").is_err());
        assert!(read("a,b\n").is_err());
    }

    #[test]
    fn target_column() {
        let opts = IngestOptions {
            target: Some("y".into()),
            ..IngestOptions::default()
        };
        let ds = ingest_reader("a,y,b\n1,9,2\n3,8,4\n".as_bytes(), &opts).unwrap();
        assert_eq!(ds.feature_names, vec!["a", "b"]);
        assert_eq!(ds.target, Some(vec![9.0, 8.0]));
        assert_eq!(ds.rows[0], vec![1.0, 2.0]);
    }

    #[test]
    fn normalization_round_trip() {
        let mut ds = read("a,b\n1,5\n3,5\n5,5\n").unwrap();
        let raw = ds.rows.clone();
        ds.normalize().unwrap();
        let norm = ds.normalization.clone().unwrap();
        assert_eq!(norm.scale[1], 1.0);
        for (z, x) in ds.rows.iter().zip(&raw) {
            for (a, b) in norm.invert(z).iter().zip(x) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

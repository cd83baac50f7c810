use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

/// Column-aligned time series keyed by step (or row) index.
///
/// Written as CSV with columns `step`, then `loss` when present, then the rest sorted.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Series {
    pub steps: Vec<usize>,
    pub columns: BTreeMap<String, Vec<f64>>,
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Config(format!("{}: {other:?}", path.display())),
    }
}

impl Series {
    pub fn new(steps: Vec<usize>) -> Self {
        Series { steps, columns: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<()> {
        crate::error::check_dim(self.steps.len(), values.len())?;
        self.columns.insert(name.into(), values);
        Ok(())
    }

    fn header(&self) -> Vec<&str> {
        let mut h: Vec<&str> = self.columns.keys().filter(|k| *k == "loss").map(String::as_str).collect();
        h.extend(self.columns.keys().filter(|k| *k != "loss").map(String::as_str));
        h
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        let names = self.header();
        let mut head = vec!["step"];
        head.extend(&names);
        w.write_record(&head).map_err(|e| csv_err(path, e))?;
        for (r, step) in self.steps.iter().enumerate() {
            let mut row = vec![step.to_string()];
            row.extend(names.iter().map(|n| format!("{:e}", self.columns[*n][r])));
            w.write_record(&row).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        let head: Vec<String> = r.headers().map_err(|e| csv_err(path, e))?.iter().map(str::to_string).collect();
        if head.first().map(String::as_str) != Some("step") {
            return Err(Error::Config(format!("{}: first column must be 'step'", path.display())));
        }
        let mut steps = Vec::new();
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); head.len() - 1];
        let bad = |v: &str| Error::Config(format!("{}: cannot parse '{v}'", path.display()));
        for rec in r.records() {
            let rec = rec.map_err(|e| csv_err(path, e))?;
            steps.push(rec[0].parse().map_err(|_| bad(&rec[0]))?);
            for (c, v) in cols.iter_mut().zip(rec.iter().skip(1)) {
                c.push(v.parse().map_err(|_| bad(v))?);
            }
        }
        Ok(Series { steps, columns: head.into_iter().skip(1).zip(cols).collect() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_roundtrip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let mut s = Series::new(vec![1, 5, 9]);
        s.insert("loss", vec![0.1, 1.0 / 3.0, 1e-300]).unwrap();
        s.insert("alpha", vec![-2.5, f64::MAX, std::f64::consts::PI]).unwrap();
        s.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("step,loss,alpha"));
        assert_eq!(Series::read_csv(&path).unwrap(), s);
        assert!(s.insert("short", vec![1.0]).is_err());
    }
}

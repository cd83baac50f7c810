//! Synthetic datasets with CSV + JSON sidecar export.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{ModelKind, Params};
use crate::error::{Error, Result};
use crate::linalg::{from_row_major, to_row_major};

/// Row-major dense array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Array2 {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Array2 {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "array shape does not match data");
        Self { rows, cols, data }
    }
    pub fn vector(data: Vec<f64>) -> Self {
        Self { rows: data.len(), cols: 1, data }
    }
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        Self { rows: m.nrows(), cols: m.ncols(), data: to_row_major(m) }
    }
    pub fn to_matrix(&self) -> DMatrix<f64> {
        from_row_major(self.rows, self.cols, &self.data)
    }
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// Kind-matched synthetic data: inputs, targets, masks and teacher parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub kind: ModelKind,
    pub seed: u64,
    pub params: Params,
    pub arrays: BTreeMap<String, Array2>,
}

#[derive(Serialize, Deserialize)]
struct ArrayMeta {
    rows: usize,
    cols: usize,
    file: String,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    kind: ModelKind,
    seed: u64,
    params: Params,
    arrays: BTreeMap<String, ArrayMeta>,
}

impl Dataset {
    pub fn new(kind: ModelKind, seed: u64, params: Params) -> Self {
        Self { kind, seed, params, arrays: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: &str, a: Array2) {
        self.arrays.insert(name.to_string(), a);
    }

    pub fn array(&self, name: &str) -> Result<&Array2> {
        self.arrays
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("dataset has no array '{name}'")))
    }

    /// Writes `dataset.json` and one `<name>.csv` per array into `dir`.
    pub fn export(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut metas = BTreeMap::new();
        for (name, a) in &self.arrays {
            let file = format!("{name}.csv");
            let path = dir.join(&file);
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record((0..a.cols).map(|j| format!("c{j}")))?;
            for i in 0..a.rows {
                w.write_record(a.row(i).iter().map(|v| format!("{v:e}")))?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
            metas.insert(name.clone(), ArrayMeta { rows: a.rows, cols: a.cols, file });
        }
        let side = Sidecar { kind: self.kind, seed: self.seed, params: self.params.clone(), arrays: metas };
        let path = dir.join("dataset.json");
        fs::write(&path, serde_json::to_string_pretty(&side)?).map_err(|e| Error::io(&path, e))?;
        Ok(())
    }

    pub fn import(dir: &Path) -> Result<Self> {
        let path = dir.join("dataset.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let side: Sidecar = serde_json::from_str(&text)?;
        let mut ds = Dataset::new(side.kind, side.seed, side.params);
        for (name, meta) in side.arrays {
            let mut r = csv::Reader::from_path(dir.join(&meta.file))?;
            let mut data = Vec::with_capacity(meta.rows * meta.cols);
            for rec in r.records() {
                for field in rec?.iter() {
                    data.push(field.parse::<f64>().map_err(|e| {
                        Error::InvalidArgument(format!("bad number '{field}' in {}: {e}", meta.file))
                    })?);
                }
            }
            if data.len() != meta.rows * meta.cols {
                return Err(Error::DimensionMismatch { expected: meta.rows * meta.cols, got: data.len() });
            }
            ds.insert(&name, Array2::new(meta.rows, meta.cols, data));
        }
        Ok(ds)
    }
}

//! Linear autoencoder `L(W) = mean |x - W W^T x|^2` with right `O(r)` symmetry.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{Array2, Batch, Dataset, Model, ModelKind, NamedValues, Params, DATA_STREAM, INIT_STREAM};
use crate::error::{Error, Result};
use crate::linalg::{from_row_major, sym_eigen, to_row_major};
use crate::rng::{normal_vec, stream};
use crate::symmetry::{BlockAction, FactorBlock, GeneratorSet, MatrixGenerators};

pub(super) const KEYS: &[&str] = &["d", "r", "n_train", "spectrum", "init_scale"];

pub(super) fn make_dataset(params: &Params, seed: u64) -> Result<Dataset> {
    let spectrum = params.f64_list("spectrum", &[5.0, 3.0, 1.0, 0.5, 0.2, 0.1])?;
    let d = params.usize("d", spectrum.len())?;
    let n = params.usize("n_train", 200)?;
    if d != spectrum.len() || spectrum.iter().any(|&s| s < 0.0) || n == 0 {
        return Err(Error::InvalidArgument("spectrum must list d nonnegative variances".into()));
    }
    let mut rng = stream(seed, DATA_STREAM);
    let basis = from_row_major(d, d, &normal_vec(&mut rng, d * d, 1.0)).qr().q();
    let scale = DMatrix::from_diagonal(&DVector::from_iterator(d, spectrum.iter().map(|s| s.sqrt())));
    let z = from_row_major(n, d, &normal_vec(&mut rng, n * d, 1.0));
    let x = z * scale * basis.transpose();
    let mut ds = Dataset::new(ModelKind::Pca, seed, params.clone());
    ds.insert("x", Array2::from_matrix(&x));
    Ok(ds)
}

pub struct PcaModel {
    d: usize,
    r: usize,
    x: Array2,
    init: Vec<f64>,
    gens: Arc<MatrixGenerators>,
}

impl PcaModel {
    pub fn from_dataset(ds: &Dataset, params: &Params) -> Result<Self> {
        let x = ds.array("x")?.clone();
        let d = x.cols;
        let r = params.usize("r", 2)?;
        if r == 0 || r > d {
            return Err(Error::InvalidArgument(format!("need 0 < r <= d, got r={r}")));
        }
        let blocks = vec![FactorBlock { offset: 0, rows: d, cols: r, action: BlockAction::Right }];
        Ok(Self {
            d,
            r,
            x,
            init: normal_vec(&mut stream(ds.seed, INIT_STREAM), d * r, params.f64("init_scale", 0.3)?),
            gens: Arc::new(MatrixGenerators::orthogonal("O(r)", d * r, r, blocks)),
        })
    }

    /// Second-moment matrix `S = mean x x^T`.
    pub fn second_moment(&self) -> DMatrix<f64> {
        let x = self.x.to_matrix();
        x.transpose() * &x / self.x.rows as f64
    }
}

impl Model for PcaModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Pca
    }
    fn param_dim(&self) -> usize {
        self.d * self.r
    }
    fn n_samples(&self) -> usize {
        self.x.rows
    }
    fn init(&self) -> Vec<f64> {
        self.init.clone()
    }
    fn loss(&self, theta: &[f64], batch: Batch) -> f64 {
        self.loss_grad(theta, batch).0
    }
    fn loss_grad(&self, theta: &[f64], batch: Batch) -> (f64, Vec<f64>) {
        let w = from_row_major(self.d, self.r, theta);
        let nb = batch.len(self.x.rows) as f64;
        let mut g = DMatrix::<f64>::zeros(self.d, self.r);
        let mut acc = 0.0;
        batch.for_each(self.x.rows, |i| {
            let x = DVector::from_column_slice(self.x.row(i));
            let wx = w.transpose() * &x;
            let e = &x - &w * &wx;
            acc += e.norm_squared();
            let we = w.transpose() * &e;
            g -= (&e * wx.transpose() + &x * we.transpose()) * (2.0 / nb);
        });
        (acc / nb, to_row_major(&g))
    }
    fn generators(&self) -> Arc<dyn GeneratorSet> {
        self.gens.clone()
    }
    fn invariants(&self, theta: &[f64]) -> NamedValues {
        let w = from_row_major(self.d, self.r, theta);
        let (mut lambda, _) = sym_eigen(&(w.transpose() * &w));
        lambda.reverse();
        NamedValues::from([("P".to_string(), to_row_major(&(&w * w.transpose()))), ("lambda".to_string(), lambda)])
    }
    fn observable_names(&self) -> Vec<&'static str> {
        vec![]
    }
    fn observable(&self, _name: &str, _theta: &[f64]) -> Option<f64> {
        None
    }
}

//! Multi-output linear regression `Y ~ X W` with a shared low-rank latent subspace.

use std::sync::Arc;

use nalgebra::DMatrix;

use super::{parse_variant, Array2, Batch, Dataset, Model, ModelKind, NamedValues, Params, DATA_STREAM, INIT_STREAM};
use crate::error::{Error, Result};
use crate::linalg::{from_row_major, singular_values, to_row_major};
use crate::rng::{normal_vec, stream};
use crate::symmetry::{
    BlockAction, FactorBlock, GaugeMap, GeneratorSet, MatrixGenerators, NoGenerators, QuadraticGauge,
    ScalingGenerators,
};

pub(super) const KEYS: &[&str] = &[
    "variant",
    "init_scale",
    "d",
    "c",
    "r",
    "inner",
    "n_train",
    "n_test",
    "noise_var",
    "signal_std",
];

pub(super) fn make_dataset(params: &Params, seed: u64) -> Result<Dataset> {
    let d = params.usize("d", 30)?;
    let c = params.usize("c", 20)?;
    let r = params.usize("r", 2)?;
    let n = params.usize("n_train", 200)?;
    let n_test = params.usize("n_test", 2000)?;
    let noise_std = params.f64("noise_var", 0.04)?.max(0.0).sqrt();
    let signal_std = params.f64("signal_std", 0.25)?;
    if r == 0 || r > d.min(c) || n == 0 {
        return Err(Error::InvalidArgument(format!("need 0 < r <= min(d, c), got r={r}")));
    }
    let mut rng = stream(seed, DATA_STREAM);
    let p = from_row_major(d, r, &normal_vec(&mut rng, d * r, signal_std));
    let q = from_row_major(r, c, &normal_vec(&mut rng, r * c, signal_std));
    let w = p * q;
    let x = from_row_major(n, d, &normal_vec(&mut rng, n * d, 1.0));
    let y = &x * &w + from_row_major(n, c, &normal_vec(&mut rng, n * c, noise_std));
    let xt = from_row_major(n_test, d, &normal_vec(&mut rng, n_test * d, 1.0));
    let yt = &xt * &w;
    let mut ds = Dataset::new(ModelKind::Multichannel, seed, params.clone());
    ds.insert("x", Array2::from_matrix(&x));
    ds.insert("y", Array2::from_matrix(&y));
    ds.insert("x_test", Array2::from_matrix(&xt));
    ds.insert("y_test", Array2::from_matrix(&yt));
    ds.insert("w_true", Array2::from_matrix(&w));
    Ok(ds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Naive,
    Scalar,
    Matrix,
}

pub struct MultichannelModel {
    variant: Variant,
    d: usize,
    c: usize,
    k: usize,
    x: Array2,
    y: Array2,
    x_test: DMatrix<f64>,
    y_test: DMatrix<f64>,
    w_true: DMatrix<f64>,
    init: Vec<f64>,
    gens: Arc<dyn GeneratorSet>,
    gauge_gens: Option<Arc<dyn GeneratorSet>>,
}

impl MultichannelModel {
    pub fn from_dataset(ds: &Dataset, params: &Params) -> Result<Self> {
        let variant = match parse_variant(params, &["naive", "scalar", "matrix"], "matrix")? {
            "naive" => Variant::Naive,
            "scalar" => Variant::Scalar,
            _ => Variant::Matrix,
        };
        let x = ds.array("x")?.clone();
        let y = ds.array("y")?.clone();
        let (d, c) = (x.cols, y.cols);
        let k = params.usize("inner", d.min(c))?;
        let default_init = match variant {
            Variant::Naive => 0.01,
            Variant::Scalar => 0.1,
            Variant::Matrix => 1e-3,
        };
        let init_scale = params.f64("init_scale", default_init)?;
        let mut rng = stream(ds.seed, INIT_STREAM);
        let (dim, gens, gauge_gens): (usize, Arc<dyn GeneratorSet>, Option<Arc<dyn GeneratorSet>>) = match variant {
            Variant::Naive => (d * c, Arc::new(NoGenerators { dim: d * c }), None),
            Variant::Scalar => {
                let pairs: Vec<(usize, usize)> = (0..d * c).map(|i| (i, d * c + i)).collect();
                let g: Arc<dyn GeneratorSet> =
                    Arc::new(ScalingGenerators::hadamard("(R>0)^(DC) coordinate scaling", 2 * d * c, &pairs));
                (2 * d * c, g.clone(), Some(g))
            }
            Variant::Matrix => {
                let dim = d * k + k * c;
                let blocks = vec![
                    FactorBlock { offset: 0, rows: d, cols: k, action: BlockAction::Right },
                    FactorBlock { offset: d * k, rows: k, cols: c, action: BlockAction::LeftInv },
                ];
                let full = Arc::new(MatrixGenerators::general_linear("GL(k)", dim, k, blocks.clone()));
                let diag = Arc::new(MatrixGenerators::diagonal("GL(k) diagonal subalgebra", dim, k, blocks));
                (dim, full, Some(diag))
            }
        };
        Ok(Self {
            variant,
            d,
            c,
            k,
            x_test: ds.array("x_test")?.to_matrix(),
            y_test: ds.array("y_test")?.to_matrix(),
            w_true: ds.array("w_true")?.to_matrix(),
            x,
            y,
            init: normal_vec(&mut rng, dim, init_scale),
            gens,
            gauge_gens,
        })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn w_true(&self) -> &DMatrix<f64> {
        &self.w_true
    }

    /// Effective weight matrix `W(theta)` (d x c).
    pub fn weights(&self, theta: &[f64]) -> DMatrix<f64> {
        let (d, c, k) = (self.d, self.c, self.k);
        match self.variant {
            Variant::Naive => from_row_major(d, c, theta),
            Variant::Scalar => DMatrix::from_fn(d, c, |i, j| theta[i * c + j] * theta[d * c + i * c + j]),
            Variant::Matrix => from_row_major(d, k, &theta[..d * k]) * from_row_major(k, c, &theta[d * k..]),
        }
    }

    pub fn test_mse(&self, theta: &[f64]) -> f64 {
        let w = self.weights(theta);
        let e = &self.x_test * w - &self.y_test;
        e.norm_squared() / e.len() as f64
    }
}

impl Model for MultichannelModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Multichannel
    }
    fn param_dim(&self) -> usize {
        self.init.len()
    }
    fn n_samples(&self) -> usize {
        self.x.rows
    }
    fn init(&self) -> Vec<f64> {
        self.init.clone()
    }
    fn loss(&self, theta: &[f64], batch: Batch) -> f64 {
        let w = self.weights(theta);
        let mut acc = 0.0;
        batch.for_each(self.x.rows, |b| {
            let xb = self.x.row(b);
            for j in 0..self.c {
                let pred: f64 = (0..self.d).map(|i| xb[i] * w[(i, j)]).sum();
                acc += (pred - self.y.row(b)[j]).powi(2);
            }
        });
        acc / (batch.len(self.x.rows) * self.c) as f64
    }
    fn loss_grad(&self, theta: &[f64], batch: Batch) -> (f64, Vec<f64>) {
        let (d, c, k) = (self.d, self.c, self.k);
        let w = self.weights(theta);
        let norm = (batch.len(self.x.rows) * c) as f64;
        let mut gw = DMatrix::<f64>::zeros(d, c);
        let mut acc = 0.0;
        let mut r = vec![0.0; c];
        batch.for_each(self.x.rows, |b| {
            let xb = self.x.row(b);
            for (j, rj) in r.iter_mut().enumerate() {
                let pred: f64 = (0..d).map(|i| xb[i] * w[(i, j)]).sum();
                *rj = pred - self.y.row(b)[j];
                acc += *rj * *rj;
            }
            for i in 0..d {
                for j in 0..c {
                    gw[(i, j)] += 2.0 * xb[i] * r[j] / norm;
                }
            }
        });
        let grad = match self.variant {
            Variant::Naive => to_row_major(&gw),
            Variant::Scalar => {
                let mut g = vec![0.0; 2 * d * c];
                for i in 0..d {
                    for j in 0..c {
                        g[i * c + j] = gw[(i, j)] * theta[d * c + i * c + j];
                        g[d * c + i * c + j] = gw[(i, j)] * theta[i * c + j];
                    }
                }
                g
            }
            Variant::Matrix => {
                let p = from_row_major(d, k, &theta[..d * k]);
                let q = from_row_major(k, c, &theta[d * k..]);
                let mut g = to_row_major(&(&gw * q.transpose()));
                g.extend(to_row_major(&(p.transpose() * &gw)));
                g
            }
        };
        (acc / norm, grad)
    }
    fn generators(&self) -> Arc<dyn GeneratorSet> {
        self.gens.clone()
    }
    fn gauge(&self) -> Option<(Arc<dyn GeneratorSet>, GaugeMap)> {
        self.gauge_gens
            .as_ref()
            .map(|g| (g.clone(), GaugeMap::explicit(Arc::new(QuadraticGauge::new(g.clone())))))
    }
    fn invariants(&self, theta: &[f64]) -> NamedValues {
        NamedValues::from([("W".to_string(), to_row_major(&self.weights(theta)))])
    }
    fn observable_names(&self) -> Vec<&'static str> {
        vec!["test_mse", "effective_rank", "nuclear"]
    }
    fn observable(&self, name: &str, theta: &[f64]) -> Option<f64> {
        match name {
            "test_mse" => Some(self.test_mse(theta)),
            "effective_rank" => Some(crate::stats::effective_rank(&singular_values(&self.weights(theta))) as f64),
            "nuclear" => Some(singular_values(&self.weights(theta)).iter().sum()),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{make_dataset, model_from_dataset, checks::check_model};

    fn small() -> Params {
        Params::new().with("d", 6).with("c", 5).with("r", 2).with("n_train", 20).with("n_test", 10)
    }

    #[test]
    fn variants_pass_model_checks() {
        let ds = make_dataset(ModelKind::Multichannel, &small(), 2).unwrap();
        for v in ["naive", "scalar", "matrix"] {
            let mut p = small();
            p.set("variant", v);
            p.set("init_scale", 0.3);
            let m = model_from_dataset(&ds, &p).unwrap();
            check_model(m.as_ref(), 3);
        }
    }

    #[test]
    fn truth_is_exactly_rank_r() {
        let ds = make_dataset(ModelKind::Multichannel, &Params::new(), 0).unwrap();
        let s = singular_values(&ds.array("w_true").unwrap().to_matrix());
        assert!(s[2] < 1e-12 * s[0]);
        assert!(s[1] * s[1] > 100.0 * s[2] * s[2]);
    }
}

//! Matrix completion with a rank-`r` factorisation `M = U V^T`.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::seq::index;

use super::{Array2, Batch, Dataset, Model, ModelKind, NamedValues, Params, DATA_STREAM, INIT_STREAM};
use crate::error::{Error, Result};
use crate::linalg::{from_row_major, to_row_major};
use crate::rng::{normal_vec, stream};
use crate::symmetry::{BlockAction, FactorBlock, GaugeMap, GeneratorSet, MatrixGenerators, QuadraticGauge};

pub(super) const KEYS: &[&str] = &["n", "m", "sigma", "mask_fraction", "rank", "init_scale"];

fn orthonormal_columns(rows: usize, cols: usize, seed_rng: &mut crate::rng::Rng) -> DMatrix<f64> {
    let g = from_row_major(rows, cols, &normal_vec(seed_rng, rows * cols, 1.0));
    g.qr().q()
}

pub(super) fn make_dataset(params: &Params, seed: u64) -> Result<Dataset> {
    let n = params.usize("n", 20)?;
    let m = params.usize("m", 20)?;
    let sigma = params.f64_list("sigma", &[3.0, 1.0])?;
    let frac = params.f64("mask_fraction", 0.4)?;
    let k = sigma.len();
    if k == 0 || k > n.min(m) || !(0.0..=1.0).contains(&frac) {
        return Err(Error::InvalidArgument("invalid completion dimensions".into()));
    }
    let mut rng = stream(seed, DATA_STREAM);
    let q = orthonormal_columns(n, k, &mut rng);
    let p = orthonormal_columns(m, k, &mut rng);
    let s = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(sigma.clone()));
    let target = &q * s * p.transpose();
    let count = (frac * (n * m) as f64).round() as usize;
    let mut obs: Vec<usize> = index::sample(&mut rng, n * m, count).into_vec();
    obs.sort_unstable();
    let mut mask = Vec::with_capacity(2 * count);
    let mut values = Vec::with_capacity(count);
    for &e in &obs {
        let (i, j) = (e / m, e % m);
        mask.extend([i as f64, j as f64]);
        values.push(target[(i, j)]);
    }
    let mut ds = Dataset::new(ModelKind::Rank2Completion, seed, params.clone());
    ds.insert("m_star", Array2::from_matrix(&target));
    ds.insert("sigma_star", Array2::vector(sigma));
    ds.insert("mask", Array2::new(count, 2, mask));
    ds.insert("values", Array2::vector(values));
    Ok(ds)
}

pub struct CompletionModel {
    n: usize,
    m: usize,
    r: usize,
    entries: Vec<(usize, usize)>,
    values: Vec<f64>,
    target: DMatrix<f64>,
    sigma_star: Vec<f64>,
    init: Vec<f64>,
    gens: Arc<MatrixGenerators>,
    diag: Arc<MatrixGenerators>,
}

impl CompletionModel {
    pub fn from_dataset(ds: &Dataset, params: &Params) -> Result<Self> {
        let target = ds.array("m_star")?.to_matrix();
        let (n, m) = (target.nrows(), target.ncols());
        let r = params.usize("rank", 2)?;
        let init_scale = params.f64("init_scale", 0.1)?;
        let mask = ds.array("mask")?;
        let entries = (0..mask.rows).map(|e| (mask.row(e)[0] as usize, mask.row(e)[1] as usize)).collect();
        let dim = (n + m) * r;
        let blocks = vec![
            FactorBlock { offset: 0, rows: n, cols: r, action: BlockAction::Right },
            FactorBlock { offset: n * r, rows: m, cols: r, action: BlockAction::RightInvTranspose },
        ];
        Ok(Self {
            n,
            m,
            r,
            entries,
            values: ds.array("values")?.data.clone(),
            sigma_star: ds.array("sigma_star")?.data.clone(),
            target,
            init: normal_vec(&mut stream(ds.seed, INIT_STREAM), dim, init_scale),
            gens: Arc::new(MatrixGenerators::general_linear("GL(r)", dim, r, blocks.clone())),
            diag: Arc::new(MatrixGenerators::diagonal("GL(r) diagonal subalgebra", dim, r, blocks)),
        })
    }

    pub fn factors(&self, theta: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        let split = self.n * self.r;
        (from_row_major(self.n, self.r, &theta[..split]), from_row_major(self.m, self.r, &theta[split..]))
    }

    pub fn sigma_star(&self) -> &[f64] {
        &self.sigma_star
    }

    pub fn observed(&self) -> usize {
        self.entries.len()
    }

    /// Relative Frobenius error of `U V^T` against the full target.
    pub fn full_error(&self, theta: &[f64]) -> f64 {
        let (u, v) = self.factors(theta);
        (u * v.transpose() - &self.target).norm() / self.target.norm()
    }

    fn entry(&self, theta: &[f64], i: usize, j: usize) -> f64 {
        let r = self.r;
        let off = self.n * r;
        (0..r).map(|a| theta[i * r + a] * theta[off + j * r + a]).sum()
    }
}

impl Model for CompletionModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Rank2Completion
    }
    fn param_dim(&self) -> usize {
        (self.n + self.m) * self.r
    }
    fn n_samples(&self) -> usize {
        self.entries.len()
    }
    fn init(&self) -> Vec<f64> {
        self.init.clone()
    }
    fn loss(&self, theta: &[f64], batch: Batch) -> f64 {
        let mut acc = 0.0;
        batch.for_each(self.entries.len(), |e| {
            let (i, j) = self.entries[e];
            acc += (self.entry(theta, i, j) - self.values[e]).powi(2);
        });
        acc / batch.len(self.entries.len()) as f64
    }
    fn loss_grad(&self, theta: &[f64], batch: Batch) -> (f64, Vec<f64>) {
        let r = self.r;
        let off = self.n * r;
        let nb = batch.len(self.entries.len()) as f64;
        let mut g = vec![0.0; theta.len()];
        let mut acc = 0.0;
        batch.for_each(self.entries.len(), |e| {
            let (i, j) = self.entries[e];
            let res = self.entry(theta, i, j) - self.values[e];
            acc += res * res;
            let f = 2.0 * res / nb;
            for a in 0..r {
                g[i * r + a] += f * theta[off + j * r + a];
                g[off + j * r + a] += f * theta[i * r + a];
            }
        });
        (acc / nb, g)
    }
    fn generators(&self) -> Arc<dyn GeneratorSet> {
        self.gens.clone()
    }
    fn gauge(&self) -> Option<(Arc<dyn GeneratorSet>, GaugeMap)> {
        let g: Arc<dyn GeneratorSet> = self.diag.clone();
        Some((g.clone(), GaugeMap::explicit(Arc::new(QuadraticGauge::new(g)))))
    }
    fn invariants(&self, theta: &[f64]) -> NamedValues {
        let (u, v) = self.factors(theta);
        NamedValues::from([("Z".to_string(), to_row_major(&(u * v.transpose())))])
    }
    fn observable_names(&self) -> Vec<&'static str> {
        vec!["energy_1", "energy_2", "full_error"]
    }
    fn observable(&self, name: &str, theta: &[f64]) -> Option<f64> {
        let mode = match name {
            "energy_1" => 0,
            "energy_2" => 1,
            "full_error" => return Some(self.full_error(theta)),
            _ => return None,
        };
        let (u, v) = self.factors(theta);
        crate::stats::gauge_energy_modes(&u, &v).ok()?.energies.get(mode).copied().flatten()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_model, checks::check_model};
    use approx::assert_relative_eq;

    #[test]
    fn mask_has_exact_size() {
        let (m, ds) = build_model(ModelKind::Rank2Completion, &Params::new().with("n", 20).with("m", 20), 0).unwrap();
        assert_eq!(ds.array("mask").unwrap().rows, 160);
        assert_eq!(m.n_samples(), 160);
        let s = crate::linalg::singular_values(&ds.array("m_star").unwrap().to_matrix());
        assert_relative_eq!(s[0], 3.0, epsilon = 1e-12);
        assert_relative_eq!(s[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn gl_action_preserves_product() {
        let (m, _) = build_model(ModelKind::Rank2Completion, &Params::new(), 3).unwrap();
        let gens = MatrixGenerators::general_linear(
            "GL(2)",
            m.param_dim(),
            2,
            vec![
                FactorBlock { offset: 0, rows: 20, cols: 2, action: BlockAction::Right },
                FactorBlock { offset: 40, rows: 20, cols: 2, action: BlockAction::RightInvTranspose },
            ],
        );
        let theta = crate::models::checks::random_point(m.as_ref(), 1, 1.0);
        let a = DMatrix::from_row_slice(2, 2, &[1.3, -0.4, 0.7, 0.9]);
        let moved = gens.apply_group(&a, &theta).unwrap();
        let z0 = &m.invariants(&theta)["Z"];
        let z1 = &m.invariants(&moved)["Z"];
        let err: f64 = z0.iter().zip(z1).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-12);
    }

    #[test]
    fn model_checks() {
        let (m, _) = build_model(ModelKind::Rank2Completion, &Params::new(), 1).unwrap();
        check_model(m.as_ref(), 4);
    }
}

//! Two-layer ReLU classifier `f(x) = v^T ReLU(W x)` with BCE loss.

use std::sync::Arc;

use super::{Array2, Batch, Dataset, Model, ModelKind, NamedValues, Params, DATA_STREAM, INIT_STREAM};
use crate::error::{Error, Result};
use crate::rng::{normal, normal_vec, stream};
use crate::symmetry::{GaugeMap, GeneratorSet, QuadraticGauge, ScalingGenerator, ScalingGenerators};

pub(super) const KEYS: &[&str] = &["width", "n_train", "init_scale", "cluster_mean"];

/// Fraction of training points with positive pre-activation for a neuron to count as active.
pub const ACTIVE_FRACTION: f64 = 0.1;

pub(super) fn make_dataset(params: &Params, seed: u64) -> Result<Dataset> {
    let n = params.usize("n_train", 200)?;
    let mu = params.f64("cluster_mean", 2.0)?;
    if n < 2 {
        return Err(Error::InvalidArgument("need at least two samples".into()));
    }
    let mut rng = stream(seed, DATA_STREAM);
    let mut x = Vec::with_capacity(2 * n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let label = if i % 2 == 0 { 1.0 } else { 0.0 };
        let c = if label == 1.0 { mu } else { -mu };
        loop {
            let p = [c + normal(&mut rng), c + normal(&mut rng)];
            if (p[0] + p[1]) * c > 0.0 {
                x.extend(p);
                break;
            }
        }
        y.push(label);
    }
    let mut ds = Dataset::new(ModelKind::Relu2, seed, params.clone());
    ds.insert("x", Array2::new(n, 2, x));
    ds.insert("y", Array2::vector(y));
    Ok(ds)
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub struct ReluModel {
    p: usize,
    x: Array2,
    y: Vec<f64>,
    init: Vec<f64>,
    gens: Arc<ScalingGenerators>,
}

impl ReluModel {
    pub fn from_dataset(ds: &Dataset, params: &Params) -> Result<Self> {
        let p = params.usize("width", 32)?;
        if p == 0 {
            return Err(Error::InvalidArgument("width must be positive".into()));
        }
        let init_scale = params.f64("init_scale", 0.1)?;
        let gens = (0..p)
            .map(|j| ScalingGenerator { up: vec![2 * j, 2 * j + 1], down: vec![2 * p + j], power: 1.0 })
            .collect();
        Ok(Self {
            p,
            x: ds.array("x")?.clone(),
            y: ds.array("y")?.data.clone(),
            init: normal_vec(&mut stream(ds.seed, INIT_STREAM), 3 * p, init_scale),
            gens: Arc::new(ScalingGenerators::new("(R>0)^p neuron scaling", 3 * p, gens)),
        })
    }

    pub fn width(&self) -> usize {
        self.p
    }

    /// Neuron-wise scalings, also for negative factors.
    pub fn scalings(&self) -> Arc<ScalingGenerators> {
        self.gens.clone()
    }

    fn logit(&self, theta: &[f64], x: &[f64]) -> f64 {
        let p = self.p;
        (0..p).map(|j| theta[2 * p + j] * (theta[2 * j] * x[0] + theta[2 * j + 1] * x[1]).max(0.0)).sum()
    }

    /// `rho_j = |w_j| / |v_j|`.
    pub fn balance_ratios(&self, theta: &[f64]) -> Vec<f64> {
        let p = self.p;
        (0..p).map(|j| theta[2 * j].hypot(theta[2 * j + 1]) / theta[2 * p + j].abs()).collect()
    }

    /// Neurons whose pre-activation is positive on at least `ACTIVE_FRACTION` of the training set.
    pub fn active(&self, theta: &[f64]) -> Vec<bool> {
        let n = self.y.len();
        (0..self.p)
            .map(|j| {
                let pos = (0..n)
                    .filter(|&i| {
                        let x = self.x.row(i);
                        theta[2 * j] * x[0] + theta[2 * j + 1] * x[1] > 0.0
                    })
                    .count();
                pos as f64 >= ACTIVE_FRACTION * n as f64
            })
            .collect()
    }

    /// Median balance ratio over active neurons with `v_j != 0`.
    pub fn median_active_ratio(&self, theta: &[f64]) -> Option<f64> {
        let rho = self.balance_ratios(theta);
        let mut vals: Vec<f64> = self
            .active(theta)
            .iter()
            .zip(&rho)
            .filter(|(a, r)| **a && r.is_finite())
            .map(|(_, r)| *r)
            .collect();
        crate::stats::median(&mut vals)
    }
}

impl Model for ReluModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Relu2
    }
    fn param_dim(&self) -> usize {
        3 * self.p
    }
    fn n_samples(&self) -> usize {
        self.y.len()
    }
    fn init(&self) -> Vec<f64> {
        self.init.clone()
    }
    fn loss(&self, theta: &[f64], batch: Batch) -> f64 {
        let mut acc = 0.0;
        batch.for_each(self.y.len(), |i| {
            let f = self.logit(theta, self.x.row(i));
            acc += softplus(f) - self.y[i] * f;
        });
        acc / batch.len(self.y.len()) as f64
    }
    fn loss_grad(&self, theta: &[f64], batch: Batch) -> (f64, Vec<f64>) {
        let p = self.p;
        let nb = batch.len(self.y.len()) as f64;
        let mut g = vec![0.0; 3 * p];
        let mut acc = 0.0;
        batch.for_each(self.y.len(), |i| {
            let x = self.x.row(i);
            let f = self.logit(theta, x);
            acc += softplus(f) - self.y[i] * f;
            let df = (sigmoid(f) - self.y[i]) / nb;
            for j in 0..p {
                let z = theta[2 * j] * x[0] + theta[2 * j + 1] * x[1];
                if z > 0.0 {
                    let v = theta[2 * p + j];
                    g[2 * p + j] += df * z;
                    g[2 * j] += df * v * x[0];
                    g[2 * j + 1] += df * v * x[1];
                }
            }
        });
        (acc / nb, g)
    }
    fn generators(&self) -> Arc<dyn GeneratorSet> {
        self.gens.clone()
    }
    fn gauge(&self) -> Option<(Arc<dyn GeneratorSet>, GaugeMap)> {
        let g: Arc<dyn GeneratorSet> = self.gens.clone();
        Some((g.clone(), GaugeMap::explicit(Arc::new(QuadraticGauge::new(g)))))
    }
    fn invariants(&self, theta: &[f64]) -> NamedValues {
        let p = self.p;
        let logits = (0..self.y.len()).map(|i| self.logit(theta, self.x.row(i))).collect();
        let path = (0..p).map(|j| theta[2 * p + j] * theta[2 * j].hypot(theta[2 * j + 1])).collect();
        NamedValues::from([("logits".to_string(), logits), ("neuron_path".to_string(), path)])
    }
    fn observable_names(&self) -> Vec<&'static str> {
        vec!["median_rho_active", "active_count"]
    }
    fn observable(&self, name: &str, theta: &[f64]) -> Option<f64> {
        match name {
            "median_rho_active" => Some(self.median_active_ratio(theta).unwrap_or(f64::NAN)),
            "active_count" => Some(self.active(theta).iter().filter(|&&a| a).count() as f64),
            _ => None,
        }
    }
    fn balance_metrics(&self, theta: &[f64]) -> Result<NamedValues> {
        let p = self.p;
        let rho = self.balance_ratios(theta);
        let active = self.active(theta);
        let kept: Vec<usize> = (0..p).filter(|&j| theta[2 * p + j].abs() >= 1e-8).collect();
        Ok(NamedValues::from([
            ("rho".to_string(), kept.iter().map(|&j| rho[j]).collect()),
            ("neuron".to_string(), kept.iter().map(|&j| j as f64).collect()),
            ("active".to_string(), kept.iter().map(|&j| if active[j] { 1.0 } else { 0.0 }).collect()),
            ("excluded".to_string(), vec![(p - kept.len()) as f64]),
        ]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_model, checks::check_model};

    #[test]
    fn model_checks() {
        let (m, _) = build_model(ModelKind::Relu2, &Params::new().with("width", 6).with("n_train", 40), 0).unwrap();
        check_model(m.as_ref(), 5);
    }

    #[test]
    fn negative_scaling_breaks_invariance() {
        let p = Params::new().with("width", 6).with("n_train", 40);
        let (m, ds) = build_model(ModelKind::Relu2, &p, 0).unwrap();
        let rm = ReluModel::from_dataset(&ds, &p).unwrap();
        let theta = crate::models::checks::random_point(m.as_ref(), 3, 1.0);
        let base = m.loss(&theta, Batch::Full);
        let mut worst = 0.0_f64;
        for j in 0..6 {
            let moved = rm.scalings().apply_factor(j, -1.0, &theta).unwrap();
            worst = worst.max((m.loss(&moved, Batch::Full) - base).abs());
        }
        assert!(worst > 1e-6);
        for alpha in [0.5, 2.0] {
            for j in 0..6 {
                let moved = rm.scalings().apply_factor(j, alpha, &theta).unwrap();
                assert!((m.loss(&moved, Batch::Full) - base).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn balanced_neuron_ratio_is_one() {
        let p = Params::new().with("width", 1).with("n_train", 4);
        let (_, ds) = build_model(ModelKind::Relu2, &p, 0).unwrap();
        let rm = ReluModel::from_dataset(&ds, &p).unwrap();
        let s = 2.0 / 2f64.sqrt();
        assert!((rm.balance_ratios(&[s, s, 2.0])[0] - 1.0).abs() < 1e-12);
        let b = rm.balance_metrics(&[s, s, 0.0]).unwrap();
        assert!(b["rho"].is_empty());
        assert_eq!(b["excluded"], vec![1.0]);
    }

    #[test]
    fn data_is_separable() {
        let ds = make_dataset(&Params::new(), 9).unwrap();
        let (x, y) = (ds.array("x").unwrap(), &ds.array("y").unwrap().data);
        for (i, &label) in y.iter().enumerate() {
            let s = x.row(i)[0] + x.row(i)[1];
            assert_eq!(s > 0.0, label == 1.0);
        }
    }
}

//! Rotation-invariant loss `l(w) = (|w| - 1)^2 / 2`.

use std::sync::Arc;

use super::{Batch, Dataset, Model, ModelKind, NamedValues, Params, INIT_STREAM};
use crate::error::{Error, Result};
use crate::linalg::norm;
use crate::rng::{normal_vec, stream};
use crate::symmetry::{AngleGauge, GaugeMap, GeneratorSet, RotationGenerators};

pub(super) const KEYS: &[&str] = &["d", "init_radius"];

pub(super) fn make_dataset(params: &Params, seed: u64) -> Result<Dataset> {
    let d = params.usize("d", 10)?;
    if d == 0 {
        return Err(Error::InvalidArgument("d must be positive".into()));
    }
    Ok(Dataset::new(ModelKind::Radial, seed, params.clone()))
}

pub struct RadialModel {
    d: usize,
    init: Vec<f64>,
    gens: Arc<RotationGenerators>,
}

impl RadialModel {
    pub fn from_dataset(ds: &Dataset, params: &Params) -> Result<Self> {
        let d = params.usize("d", 10)?;
        let radius = params.f64("init_radius", 1.0)?;
        let mut init = normal_vec(&mut stream(ds.seed, INIT_STREAM), d, 1.0);
        let r = norm(&init);
        init.iter_mut().for_each(|x| *x *= radius / r);
        Ok(Self { d, init, gens: Arc::new(RotationGenerators::new(d)) })
    }

    pub fn dim(&self) -> usize {
        self.d
    }
}

impl Model for RadialModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Radial
    }
    fn param_dim(&self) -> usize {
        self.d
    }
    fn n_samples(&self) -> usize {
        1
    }
    fn init(&self) -> Vec<f64> {
        self.init.clone()
    }
    fn loss(&self, theta: &[f64], _batch: Batch) -> f64 {
        0.5 * (norm(theta) - 1.0).powi(2)
    }
    fn loss_grad(&self, theta: &[f64], batch: Batch) -> (f64, Vec<f64>) {
        let r = norm(theta);
        let f = if r > 0.0 { 1.0 - 1.0 / r } else { 0.0 };
        (self.loss(theta, batch), theta.iter().map(|x| f * x).collect())
    }
    fn generators(&self) -> Arc<dyn GeneratorSet> {
        self.gens.clone()
    }
    fn gauge(&self) -> Option<(Arc<dyn GeneratorSet>, GaugeMap)> {
        (self.d == 2).then(|| (self.gens.clone() as Arc<dyn GeneratorSet>, GaugeMap::explicit(Arc::new(AngleGauge))))
    }
    fn invariants(&self, theta: &[f64]) -> NamedValues {
        NamedValues::from([("r".to_string(), vec![norm(theta)])])
    }
    fn observable_names(&self) -> Vec<&'static str> {
        vec!["r"]
    }
    fn observable(&self, name: &str, theta: &[f64]) -> Option<f64> {
        (name == "r").then(|| norm(theta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_model, checks::check_model};

    #[test]
    fn radial_basics() {
        let (m, _) = build_model(ModelKind::Radial, &Params::new().with("d", 10), 0).unwrap();
        assert_eq!(m.param_dim(), 10);
        assert_eq!(m.observable_names(), vec!["r"]);
        assert!((norm(&m.init()) - 1.0).abs() < 1e-12);
        let mut theta = vec![0.0; 10];
        theta[3] = 1.5;
        assert_eq!(m.invariants(&theta)["r"], vec![1.5]);
        check_model(m.as_ref(), 10);
    }
}

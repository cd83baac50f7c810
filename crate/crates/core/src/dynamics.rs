//! Euler-Maruyama Langevin dynamics and mini-batch SGD in the ambient parameter space.

use std::collections::BTreeMap;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Batch, Model};
use crate::rng::{self, Rng};

/// First stream index used for trajectory noise, clear of data and init streams.
pub const TRAJECTORY_STREAMS: u64 = 1 << 32;

/// Losses beyond this magnitude abort a run.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// Full-batch gradient plus isotropic Gaussian noise.
    Langevin,
    /// Noise from mini-batch sampling only.
    Minibatch,
    MinibatchPlusLangevin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsConfig {
    pub eta: f64,
    pub beta: f64,
    pub noise_scale: f64,
    pub total_steps: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in_fraction: f64,
    #[serde(default = "default_thinning")]
    pub thinning: usize,
    #[serde(default)]
    pub seed: u64,
    pub noise_mode: NoiseMode,
    /// Mini-batch size; ignored in Langevin mode.
    #[serde(default)]
    pub batch_size: Option<usize>,
}

fn default_burn_in() -> f64 {
    0.1
}

fn default_thinning() -> usize {
    1
}

impl DynamicsConfig {
    pub fn langevin(eta: f64, beta: f64, noise_scale: f64, total_steps: usize) -> Self {
        DynamicsConfig {
            eta,
            beta,
            noise_scale,
            total_steps,
            burn_in_fraction: default_burn_in(),
            thinning: 1,
            seed: 0,
            noise_mode: NoiseMode::Langevin,
            batch_size: None,
        }
    }

    pub fn minibatch(eta: f64, batch_size: usize, total_steps: usize) -> Self {
        DynamicsConfig {
            noise_mode: NoiseMode::Minibatch,
            batch_size: Some(batch_size),
            noise_scale: 0.0,
            ..Self::langevin(eta, 1.0, 0.0, total_steps)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad("eta must be positive");
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad("beta must be positive");
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return bad("noise_scale must be nonnegative");
        }
        if self.total_steps == 0 {
            return bad("total_steps must be at least 1");
        }
        if !(0.0..1.0).contains(&self.burn_in_fraction) {
            return bad("burn_in_fraction must lie in [0, 1)");
        }
        if self.thinning == 0 {
            return bad("thinning must be at least 1");
        }
        if self.noise_mode != NoiseMode::Langevin && self.batch_size.is_none_or(|b| b == 0) {
            return bad("mini-batch modes need a positive batch_size");
        }
        Ok(())
    }

    pub fn burn_in(&self) -> usize {
        (self.total_steps as f64 * self.burn_in_fraction).floor() as usize
    }

    /// Per-step noise standard deviation `sigma sqrt(2 eta / beta)`.
    pub fn diffusion(&self) -> f64 {
        self.noise_scale * (2.0 * self.eta / self.beta).sqrt()
    }

    fn injects_noise(&self) -> bool {
        self.noise_mode != NoiseMode::Minibatch && self.noise_scale > 0.0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub snapshots: Vec<Vec<f64>>,
    pub step_indices: Vec<usize>,
    /// Always contains `loss` (full-batch) plus the requested observables.
    pub observables: BTreeMap<String, Vec<f64>>,
    /// Parameters after the last step, recorded or not.
    pub final_state: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.step_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.step_indices.is_empty()
    }

    pub fn series(&self, name: &str) -> Option<&[f64]> {
        self.observables.get(name).map(Vec::as_slice)
    }

    pub fn last(&self) -> Option<&[f64]> {
        self.snapshots.last().map(Vec::as_slice)
    }

    /// One row per record: `step`, observables, then parameters when `with_params`.
    pub fn write_csv(&self, path: &std::path::Path, with_params: bool) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Config(format!("{other:?}")),
        })?;
        let dim = self.snapshots.first().map_or(0, Vec::len);
        let mut header = vec!["step".to_string()];
        header.extend(self.observables.keys().cloned());
        if with_params {
            header.extend((0..dim).map(|i| format!("theta_{i}")));
        }
        w.write_record(&header)?;
        for (r, step) in self.step_indices.iter().enumerate() {
            let mut row = vec![step.to_string()];
            row.extend(self.observables.values().map(|v| format!("{:e}", v[r])));
            if with_params {
                row.extend(self.snapshots[r].iter().map(|x| format!("{x:e}")));
            }
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

fn check_finite(grad: &[f64], step: usize) -> Result<()> {
    if grad.iter().all(|g| g.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteGradient { step })
    }
}

fn add_noise(theta: &mut [f64], config: &DynamicsConfig, rng: &mut Rng) {
    let s = config.diffusion();
    for x in theta.iter_mut() {
        *x += s * rng::normal(rng);
    }
}

/// `theta - eta grad + sigma sqrt(2 eta / beta) xi`.
pub fn langevin_step(
    theta: &[f64],
    grad: &[f64],
    config: &DynamicsConfig,
    rng: &mut Rng,
    step: usize,
) -> Result<Vec<f64>> {
    crate::error::check_dim(theta.len(), grad.len())?;
    check_finite(grad, step)?;
    let mut out: Vec<f64> = theta.iter().zip(grad).map(|(t, g)| t - config.eta * g).collect();
    if config.noise_scale > 0.0 {
        add_noise(&mut out, config, rng);
    }
    Ok(out)
}

/// One SGD step on `batch`, plus Langevin noise in `MinibatchPlusLangevin` mode.
pub fn sgd_step(
    theta: &[f64],
    model: &dyn Model,
    batch: &[usize],
    config: &DynamicsConfig,
    rng: &mut Rng,
    step: usize,
) -> Result<Vec<f64>> {
    Ok(sgd_step_with_loss(theta, model, batch, config, rng, step)?.0)
}

fn sgd_step_with_loss(
    theta: &[f64],
    model: &dyn Model,
    batch: &[usize],
    config: &DynamicsConfig,
    rng: &mut Rng,
    step: usize,
) -> Result<(Vec<f64>, f64)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty mini-batch".into()));
    }
    let n = model.n_samples();
    if let Some(&bad) = batch.iter().find(|&&i| i >= n) {
        return Err(Error::InvalidArgument(format!("batch index {bad} out of range for {n} samples")));
    }
    let (loss, grad) = model.loss_grad(theta, Batch::Indices(batch));
    check_finite(&grad, step)?;
    let mut out: Vec<f64> = theta.iter().zip(&grad).map(|(t, g)| t - config.eta * g).collect();
    if config.injects_noise() {
        add_noise(&mut out, config, rng);
    }
    Ok((out, loss))
}

/// Runs `config.total_steps` steps from `model.init()`.
pub fn simulate(model: &dyn Model, config: &DynamicsConfig, observables: &[&str]) -> Result<Trajectory> {
    simulate_from(model, config, model.init(), observables)
}

/// Runs the dynamics from `theta0`, recording thinned post-burn-in snapshots.
pub fn simulate_from(
    model: &dyn Model,
    config: &DynamicsConfig,
    theta0: Vec<f64>,
    observables: &[&str],
) -> Result<Trajectory> {
    simulate_trajectory(model, config, 0, theta0, observables)
}

/// Like [`simulate_from`], drawing noise from the independent stream `trajectory` of `config.seed`.
pub fn simulate_trajectory(
    model: &dyn Model,
    config: &DynamicsConfig,
    trajectory: u64,
    theta0: Vec<f64>,
    observables: &[&str],
) -> Result<Trajectory> {
    config.validate()?;
    crate::error::check_dim(model.param_dim(), theta0.len())?;
    let known = model.observable_names();
    if let Some(bad) = observables.iter().find(|o| !known.contains(o)) {
        return Err(Error::Config(format!("unknown observable '{bad}' for {}", model.kind())));
    }
    let n = model.n_samples();
    let batch_size = match config.noise_mode {
        NoiseMode::Langevin => None,
        _ => Some(config.batch_size.unwrap_or(0).min(n)),
    };
    if batch_size == Some(0) {
        return Err(Error::InvalidArgument("model has no samples for mini-batching".into()));
    }
    let mut rng = rng::stream(config.seed, TRAJECTORY_STREAMS + trajectory);
    let burn = config.burn_in();
    let mut traj = Trajectory::default();
    traj.observables.insert("loss".into(), Vec::new());
    for o in observables {
        traj.observables.insert(o.to_string(), Vec::new());
    }
    let mut theta = theta0;
    for step in 1..=config.total_steps {
        let loss;
        (theta, loss) = match batch_size {
            None => {
                let (l, g) = model.loss_grad(&theta, Batch::Full);
                (langevin_step(&theta, &g, config, &mut rng, step)?, l)
            }
            Some(b) => {
                let batch = index::sample(&mut rng, n, b).into_vec();
                sgd_step_with_loss(&theta, model, &batch, config, &mut rng, step)?
            }
        };
        if !loss.is_finite() || loss.abs() > DIVERGENCE_THRESHOLD {
            return Err(Error::Divergence { step, loss });
        }
        if step > burn && (step - burn).is_multiple_of(config.thinning) {
            let full = model.loss(&theta, Batch::Full);
            if !full.is_finite() || full.abs() > DIVERGENCE_THRESHOLD {
                return Err(Error::Divergence { step, loss: full });
            }
            traj.observables.get_mut("loss").expect("loss series").push(full);
            for o in observables {
                let v = model.observable(o, &theta).unwrap_or(f64::NAN);
                traj.observables.get_mut(*o).expect("registered series").push(v);
            }
            traj.snapshots.push(theta.clone());
            traj.step_indices.push(step);
        }
    }
    traj.final_state = theta;
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_model, ModelKind, Params};
    use crate::rng::stream;

    #[test]
    fn pure_gradient_step() {
        let cfg = DynamicsConfig::langevin(0.1, 1.0, 0.0, 1);
        let mut rng = stream(0, 0);
        assert_eq!(langevin_step(&[1.0], &[2.0], &cfg, &mut rng, 1).unwrap(), vec![0.8]);
        assert_eq!(langevin_step(&[1.5], &[0.0], &cfg, &mut rng, 1).unwrap(), vec![1.5]);
    }

    #[test]
    fn non_finite_gradient_reports_step() {
        let cfg = DynamicsConfig::langevin(0.1, 1.0, 0.0, 1);
        let err = langevin_step(&[1.0], &[f64::NAN], &cfg, &mut stream(0, 0), 42).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { step: 42 }));
    }

    #[test]
    fn ou_stationary_variance() {
        let cfg = DynamicsConfig::langevin(0.01, 4.0, 1.0, 1_000_000);
        let mut rng = stream(11, 0);
        let mut theta = vec![0.0];
        let (mut sum, mut sq, mut n) = (0.0, 0.0, 0.0);
        for step in 1..=cfg.total_steps {
            let g = theta.clone();
            theta = langevin_step(&theta, &g, &cfg, &mut rng, step).unwrap();
            if step > 10_000 {
                sum += theta[0];
                sq += theta[0] * theta[0];
                n += 1.0;
            }
        }
        let var = sq / n - (sum / n).powi(2);
        assert!((var / 0.25 - 1.0).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn config_validation() {
        let mut cfg = DynamicsConfig::langevin(0.1, 1.0, 1.0, 10);
        assert!(cfg.validate().is_ok());
        cfg.thinning = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = DynamicsConfig::minibatch(0.1, 4, 10);
        cfg.batch_size = None;
        assert!(cfg.validate().is_err());
        let json = r#"{"eta":0.1,"beta":1,"noise_scale":0,"total_steps":3,"noise_mode":"langevin","typo":1}"#;
        assert!(serde_json::from_str::<DynamicsConfig>(json).is_err());
    }

    #[test]
    fn snapshot_count_and_burn_in_boundary() {
        let (model, _) = build_model(ModelKind::Radial, &Params::new().with("d", 3), 1).unwrap();
        let mut cfg = DynamicsConfig::langevin(1e-3, 10.0, 1.0, 103);
        cfg.burn_in_fraction = 0.1;
        cfg.thinning = 4;
        let t = simulate(model.as_ref(), &cfg, &["r"]).unwrap();
        assert_eq!(t.len(), (103 - 10) / 4);
        assert_eq!(t.series("r").unwrap().len(), t.len());
        cfg.total_steps = 1;
        cfg.burn_in_fraction = 0.5;
        assert_eq!(cfg.burn_in(), 0);
        let mut cfg = DynamicsConfig::langevin(1e-3, 10.0, 1.0, 10);
        cfg.burn_in_fraction = 0.99;
        cfg.thinning = 100;
        assert!(simulate(model.as_ref(), &cfg, &[]).unwrap().is_empty());
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let (model, _) = build_model(ModelKind::L1Hadamard, &Params::new(), 3).unwrap();
        let mut cfg = DynamicsConfig::minibatch(1e-3, 5, 200);
        cfg.noise_mode = NoiseMode::MinibatchPlusLangevin;
        cfg.noise_scale = 0.1;
        cfg.seed = 9;
        let a = simulate(model.as_ref(), &cfg, &[]).unwrap();
        let b = simulate(model.as_ref(), &cfg, &[]).unwrap();
        assert_eq!(a, b);
        let c = simulate_trajectory(model.as_ref(), &cfg, 1, model.init(), &[]).unwrap();
        assert_ne!(a.final_state, c.final_state);
        cfg.seed = 10;
        assert_ne!(a.snapshots, simulate(model.as_ref(), &cfg, &[]).unwrap().snapshots);
    }

    #[test]
    fn noiseless_descent_is_monotone() {
        for kind in [ModelKind::Radial, ModelKind::L1Hadamard] {
            let (model, _) = build_model(kind, &Params::new(), 5).unwrap();
            let mut cfg = DynamicsConfig::langevin(1e-3, 1.0, 0.0, 2000);
            cfg.burn_in_fraction = 0.0;
            let t = simulate(model.as_ref(), &cfg, &[]).unwrap();
            let loss = t.series("loss").unwrap();
            assert!(loss.windows(2).all(|w| w[1] <= w[0] + 1e-15), "{kind}");
        }
    }

    #[test]
    fn partition_batches_average_to_full_gradient() {
        let (model, _) = build_model(ModelKind::L1Hadamard, &Params::new(), 2).unwrap();
        let theta = model.init();
        let n = model.n_samples();
        let half = n / 2;
        let first: Vec<usize> = (0..half).collect();
        let second: Vec<usize> = (half..n).collect();
        let g1 = model.grad(&theta, Batch::Indices(&first));
        let g2 = model.grad(&theta, Batch::Indices(&second));
        let full = model.grad(&theta, Batch::Full);
        for i in 0..theta.len() {
            let avg = (half as f64 * g1[i] + (n - half) as f64 * g2[i]) / n as f64;
            assert!((avg - full[i]).abs() <= 1e-12 * (1.0 + full[i].abs()));
        }
    }

    #[test]
    fn full_batch_sgd_matches_gradient_step() {
        let (model, _) = build_model(ModelKind::L1Hadamard, &Params::new(), 2).unwrap();
        let theta = model.init();
        let all: Vec<usize> = (0..model.n_samples()).collect();
        let cfg = DynamicsConfig::minibatch(1e-2, all.len(), 1);
        let a = sgd_step(&theta, model.as_ref(), &all, &cfg, &mut stream(0, 0), 1).unwrap();
        let g = model.grad(&theta, Batch::Full);
        let b = langevin_step(&theta, &g, &DynamicsConfig::langevin(1e-2, 1.0, 0.0, 1), &mut stream(0, 0), 1).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-14);
        }
        assert!(sgd_step(&theta, model.as_ref(), &[], &cfg, &mut stream(0, 0), 1).is_err());
    }

    #[test]
    fn single_sample_step_from_origin() {
        let params = Params::new().with("variant", "vanilla");
        let (model, ds) = build_model(ModelKind::L1Hadamard, &params, 6).unwrap();
        let cfg = DynamicsConfig::minibatch(0.05, 1, 1);
        let theta = vec![0.0; model.param_dim()];
        let next = sgd_step(&theta, model.as_ref(), &[3], &cfg, &mut stream(0, 0), 1).unwrap();
        let x = ds.array("x").unwrap().row(3);
        let y = ds.array("y").unwrap().data[3];
        for (t, xi) in next.iter().zip(x) {
            assert!((t - 2.0 * 0.05 * y * xi).abs() < 1e-12);
        }
    }

    #[test]
    fn minibatch_gradient_is_unbiased() {
        let (model, _) = build_model(ModelKind::L1Hadamard, &Params::new(), 4).unwrap();
        let theta = model.init();
        let n = model.n_samples();
        let full = model.grad(&theta, Batch::Full);
        let mut rng = stream(1, 0);
        let draws = 10_000;
        let dir: Vec<f64> = full.iter().map(|g| g / full.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
        let (mut mean, mut sq) = (0.0, 0.0);
        for _ in 0..draws {
            let b = index::sample(&mut rng, n, n / 2).into_vec();
            let g = model.grad(&theta, Batch::Indices(&b));
            let p: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
            mean += p;
            sq += p * p;
        }
        let m = mean / draws as f64;
        let se = ((sq / draws as f64 - m * m).max(0.0) / draws as f64).sqrt();
        let target: f64 = full.iter().zip(&dir).map(|(a, b)| a * b).sum();
        assert!((m - target).abs() <= 3.0 * se, "{m} vs {target} (se {se})");
    }
}

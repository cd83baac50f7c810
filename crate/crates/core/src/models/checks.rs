//! Numerical consistency checks shared by tests and the verifier.

use super::{Batch, Model, NamedValues};
use crate::error::Result;
use crate::rng::{normal, stream};
use crate::symmetry::{check_drift_orthogonality, check_invariance};

/// Central finite-difference gradient check; returns the relative error norm.
pub fn fd_check(model: &dyn Model, theta: &[f64]) -> f64 {
    let (_, g) = model.loss_grad(theta, Batch::Full);
    let mut num = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let h = 1e-6 * (1.0 + theta[i].abs());
        let mut p = theta.to_vec();
        p[i] += h;
        let mut m = theta.to_vec();
        m[i] -= h;
        num.push((model.loss(&p, Batch::Full) - model.loss(&m, Batch::Full)) / (2.0 * h));
    }
    let diff: f64 = g.iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = num.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-8);
    diff / scale
}

/// Model initialisation perturbed by Gaussian noise of size `std`.
pub fn random_point(model: &dyn Model, seed: u64, std: f64) -> Vec<f64> {
    let mut rng = stream(seed, 99);
    model.init().iter().map(|x| x + std * normal(&mut rng)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointCheck {
    pub fd_error: f64,
    pub invariance: f64,
    pub orthogonality: f64,
    /// Largest relative change of any orbit invariant under the generator flows.
    pub invariant_drift: f64,
}

/// Runs every check at `theta`, moving along each generator by `t`.
pub fn check_point(model: &dyn Model, theta: &[f64], t: f64) -> Result<PointCheck> {
    let gens = model.generators();
    let invariance = check_invariance(model, gens.as_ref(), theta, t)?;
    let orthogonality = check_drift_orthogonality(model, gens.as_ref(), theta)?;
    let before = model.invariants(theta);
    let mut drift = 0.0_f64;
    for a in 0..gens.count() {
        drift = drift.max(invariant_change(&before, &model.invariants(&gens.act(a, t, theta)?)));
    }
    Ok(PointCheck { fd_error: fd_check(model, theta), invariance, orthogonality, invariant_drift: drift })
}

fn invariant_change(before: &NamedValues, after: &NamedValues) -> f64 {
    let mut worst = 0.0_f64;
    for (k, v) in before {
        let scale = v.iter().map(|x| x.abs()).fold(1e-300_f64, f64::max);
        for (x, y) in v.iter().zip(&after[k]) {
            worst = worst.max((x - y).abs() / scale);
        }
    }
    worst
}

#[cfg(test)]
pub(crate) fn check_model(model: &dyn Model, points: usize) {
    for s in 0..points as u64 {
        let theta = random_point(model, s, 0.3);
        let c = check_point(model, &theta, 0.2).unwrap();
        assert!(c.fd_error < 1e-5, "{}: fd error {}", model.kind(), c.fd_error);
        assert!(c.invariance < 1e-10, "{}: invariance {}", model.kind(), c.invariance);
        assert!(c.orthogonality < 1e-8, "{}: orthogonality {}", model.kind(), c.orthogonality);
        assert!(c.invariant_drift < 1e-10, "{}: invariant drift {}", model.kind(), c.invariant_drift);
    }
}

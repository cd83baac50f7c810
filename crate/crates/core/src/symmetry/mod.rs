//! Symmetry generators, gauge maps and the orbit/constraint Gram machinery.

mod generators;

use std::sync::Arc;

use nalgebra::DMatrix;

pub use generators::{
    frequency_projector, BlockAction, FactorBlock, FourierGenerator, FourierScalingGenerators, MatrixGenerators,
    NoGenerators, RotationGenerators, ScalingGenerator, ScalingGenerators,
};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{dot, inv_sym, logdet_spd, norm, singular_values, REL_CUTOFF};
use crate::models::{Batch, Model};

/// A family of infinitesimal symmetry generators on parameter space.
pub trait GeneratorSet: Send + Sync {
    fn label(&self) -> &str;
    /// Parameter dimension `n`.
    fn dim(&self) -> usize;
    /// Number of generators `m`.
    fn count(&self) -> usize;
    /// Tangent vector `xi_a(theta)`.
    fn tangent(&self, a: usize, theta: &[f64]) -> Result<Vec<f64>>;
    /// Finite group action `exp(t X_a) . theta`.
    fn act(&self, a: usize, t: f64, theta: &[f64]) -> Result<Vec<f64>>;
}

/// Tangents as columns of an `n x m` matrix.
pub fn tangent_matrix(gens: &dyn GeneratorSet, theta: &[f64]) -> Result<DMatrix<f64>> {
    check_dim(gens.dim(), theta.len())?;
    let (n, m) = (gens.dim(), gens.count());
    let mut xi = DMatrix::zeros(n, m);
    for a in 0..m {
        let t = gens.tangent(a, theta)?;
        xi.set_column(a, &nalgebra::DVector::from_vec(t));
    }
    Ok(xi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GaugeMode {
    /// Orthogonal gauge given by explicit constraint functions.
    Explicit,
    /// Metric-dual gauge, `M = H`, `G = H`.
    Balanced,
    /// Unit Faddeev-Popov normalisation, `M = I`, `G = H^{-1}`.
    UnitFp,
}

/// Constraint functions `chi: R^n -> R^m` with Jacobian.
pub trait GaugeFunction: Send + Sync {
    fn count(&self) -> usize;
    fn value(&self, theta: &[f64]) -> Vec<f64>;
    /// `m x n` Jacobian whose rows are `grad chi^i`.
    fn jacobian(&self, theta: &[f64]) -> DMatrix<f64>;
}

#[derive(Clone)]
pub struct GaugeMap {
    pub mode: GaugeMode,
    pub function: Option<Arc<dyn GaugeFunction>>,
}

impl std::fmt::Debug for GaugeMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GaugeMap").field("mode", &self.mode).finish()
    }
}

impl GaugeMap {
    pub fn balanced() -> Self {
        Self { mode: GaugeMode::Balanced, function: None }
    }
    pub fn unit_fp() -> Self {
        Self { mode: GaugeMode::UnitFp, function: None }
    }
    pub fn explicit(function: Arc<dyn GaugeFunction>) -> Self {
        Self { mode: GaugeMode::Explicit, function: Some(function) }
    }
}

/// `chi_a = <theta, xi_a(theta)> / 2`, so `grad chi_a = xi_a`.
///
/// Valid when every generator acts linearly and self-adjointly (scalings,
/// diagonal matrix subalgebras).
pub struct QuadraticGauge {
    gens: Arc<dyn GeneratorSet>,
}

impl QuadraticGauge {
    pub fn new(gens: Arc<dyn GeneratorSet>) -> Self {
        Self { gens }
    }
}

impl GaugeFunction for QuadraticGauge {
    fn count(&self) -> usize {
        self.gens.count()
    }
    fn value(&self, theta: &[f64]) -> Vec<f64> {
        (0..self.gens.count())
            .map(|a| 0.5 * dot(theta, &self.gens.tangent(a, theta).expect("index in range")))
            .collect()
    }
    fn jacobian(&self, theta: &[f64]) -> DMatrix<f64> {
        let m = self.gens.count();
        let mut j = DMatrix::zeros(m, theta.len());
        for a in 0..m {
            let xi = self.gens.tangent(a, theta).expect("index in range");
            j.set_row(a, &nalgebra::RowDVector::from_vec(xi));
        }
        j
    }
}

/// Polar angle `atan2(theta_2, theta_1)` in two dimensions.
pub struct AngleGauge;

impl GaugeFunction for AngleGauge {
    fn count(&self) -> usize {
        1
    }
    fn value(&self, theta: &[f64]) -> Vec<f64> {
        vec![theta[1].atan2(theta[0])]
    }
    fn jacobian(&self, theta: &[f64]) -> DMatrix<f64> {
        let r2 = theta[0] * theta[0] + theta[1] * theta[1];
        DMatrix::from_row_slice(1, 2, &[-theta[1] / r2, theta[0] / r2])
    }
}

/// Orbit Gram `H_ab = <xi_a, xi_b>`.
pub fn orbit_gram(gens: &dyn GeneratorSet, theta: &[f64]) -> Result<DMatrix<f64>> {
    let xi = tangent_matrix(gens, theta)?;
    Ok(xi.transpose() * xi)
}

/// Faddeev-Popov matrix `M_ia = <grad chi^i, xi_a>`.
pub fn fp_matrix(gens: &dyn GeneratorSet, gauge: &GaugeMap, theta: &[f64]) -> Result<DMatrix<f64>> {
    match gauge.mode {
        GaugeMode::Balanced => orbit_gram(gens, theta),
        GaugeMode::UnitFp => {
            check_dim(gens.dim(), theta.len())?;
            Ok(DMatrix::identity(gens.count(), gens.count()))
        }
        GaugeMode::Explicit => {
            let f = explicit_function(gauge)?;
            check_dim(gens.count(), f.count())?;
            let xi = tangent_matrix(gens, theta)?;
            Ok(f.jacobian(theta) * xi)
        }
    }
}

fn explicit_function(gauge: &GaugeMap) -> Result<&Arc<dyn GaugeFunction>> {
    gauge
        .function
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("explicit gauge without constraint functions".into()))
}

/// Constraint Gram `G = M H^{-1} M^T`, with the direct Gram when available.
#[derive(Debug, Clone)]
pub struct ConstraintGram {
    pub g: DMatrix<f64>,
    /// `G_ij = <grad chi^i, grad chi^j>` for explicit gauges.
    pub direct: Option<DMatrix<f64>>,
    /// Relative Frobenius discrepancy between `g` and `direct`.
    pub discrepancy: Option<f64>,
}

pub fn constraint_gram(gens: &dyn GeneratorSet, gauge: &GaugeMap, theta: &[f64]) -> Result<ConstraintGram> {
    let h = orbit_gram(gens, theta)?;
    let h_inv = inv_sym(&h)?;
    match gauge.mode {
        GaugeMode::Balanced => Ok(ConstraintGram { g: h, direct: None, discrepancy: None }),
        GaugeMode::UnitFp => Ok(ConstraintGram { g: h_inv, direct: None, discrepancy: None }),
        GaugeMode::Explicit => {
            let f = explicit_function(gauge)?;
            check_dim(gens.count(), f.count())?;
            let jac = f.jacobian(theta);
            let xi = tangent_matrix(gens, theta)?;
            let m = &jac * xi;
            let sv = singular_values(&m);
            let (max, min) = (sv.first().copied().unwrap_or(0.0), sv.last().copied().unwrap_or(0.0));
            if !(min > REL_CUTOFF * max) {
                return Err(Error::NonTransversal { min_sv: min });
            }
            let g = &m * h_inv * m.transpose();
            let direct = &jac * jac.transpose();
            let disc = (&g - &direct).norm() / direct.norm().max(f64::MIN_POSITIVE);
            Ok(ConstraintGram { g, direct: Some(direct), discrepancy: Some(disc) })
        }
    }
}

/// Entropic gauge correction `(sigma^2 / 2 beta) log det G`.
pub fn gauge_correction(
    gens: &dyn GeneratorSet,
    gauge: &GaugeMap,
    theta: &[f64],
    sigma: f64,
    beta: f64,
) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(Error::InvalidArgument(format!("beta must be positive, got {beta}")));
    }
    let logdet = match gauge.mode {
        GaugeMode::Balanced => logdet_spd(&orbit_gram(gens, theta)?)?,
        _ => logdet_spd(&constraint_gram(gens, gauge, theta)?.g)?,
    };
    Ok(sigma * sigma / (2.0 * beta) * logdet)
}

/// Largest relative loss change under the finite action `exp(t X_a)`.
pub fn check_invariance(model: &dyn Model, gens: &dyn GeneratorSet, theta: &[f64], t: f64) -> Result<f64> {
    check_dim(model.param_dim(), theta.len())?;
    let base = model.loss(theta, Batch::Full);
    let scale = base.abs().max(1.0);
    let mut worst = 0.0_f64;
    for a in 0..gens.count() {
        let moved = gens.act(a, t, theta)?;
        worst = worst.max((model.loss(&moved, Batch::Full) - base).abs() / scale);
    }
    Ok(worst)
}

/// Largest normalised overlap `|<grad L, xi_a>| / (|grad L| |xi_a|)`.
pub fn check_drift_orthogonality(model: &dyn Model, gens: &dyn GeneratorSet, theta: &[f64]) -> Result<f64> {
    check_dim(model.param_dim(), theta.len())?;
    let g = model.grad(theta, Batch::Full);
    let gn = norm(&g);
    let mut worst = 0.0_f64;
    for a in 0..gens.count() {
        let xi = gens.tangent(a, theta)?;
        let denom = gn * norm(&xi);
        if denom > 0.0 {
            worst = worst.max(dot(&g, &xi).abs() / denom);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn hadamard2() -> Arc<dyn GeneratorSet> {
        Arc::new(ScalingGenerators::hadamard("hadamard", 2, &[(0, 1)]))
    }

    #[test]
    fn rotation_gram_is_r_squared() {
        let g = RotationGenerators::new(2);
        let h = orbit_gram(&g, &[0.6, 0.8]).unwrap();
        assert_relative_eq!(h[(0, 0)], 1.0, epsilon = 1e-14);
        let h = orbit_gram(&g, &[3.0, 4.0]).unwrap();
        assert_relative_eq!(h[(0, 0)], 25.0, epsilon = 1e-12);
    }

    #[test]
    fn hadamard_gram_and_balanced_gauge() {
        let gens = hadamard2();
        let theta = [2.0, 0.5];
        let h = orbit_gram(gens.as_ref(), &theta).unwrap();
        assert_relative_eq!(h[(0, 0)], 4.25, epsilon = 1e-14);
        let gauge = GaugeMap::explicit(Arc::new(QuadraticGauge::new(gens.clone())));
        let m = fp_matrix(gens.as_ref(), &gauge, &theta).unwrap();
        assert_relative_eq!(m[(0, 0)], 4.25, epsilon = 1e-14);
        let cg = constraint_gram(gens.as_ref(), &gauge, &theta).unwrap();
        assert_relative_eq!(cg.g[(0, 0)], 4.25, epsilon = 1e-12);
        assert!(cg.discrepancy.unwrap() < 1e-12);
    }

    #[test]
    fn angle_gauge_gram() {
        let gens = RotationGenerators::new(2);
        let gauge = GaugeMap::explicit(Arc::new(AngleGauge));
        let theta = [1.5, -2.0];
        let cg = constraint_gram(&gens, &gauge, &theta).unwrap();
        assert_relative_eq!(cg.g[(0, 0)], 1.0 / 6.25, epsilon = 1e-12);
        assert!(cg.discrepancy.unwrap() < 1e-12);
        let m = fp_matrix(&gens, &gauge, &theta).unwrap();
        assert_relative_eq!(m[(0, 0)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn modes_and_corrections() {
        let gens = hadamard2();
        let theta = [2.0, 0.5];
        let unit = constraint_gram(gens.as_ref(), &GaugeMap::unit_fp(), &theta).unwrap();
        assert_relative_eq!(unit.g[(0, 0)], 1.0 / 4.25, epsilon = 1e-12);
        let c = gauge_correction(gens.as_ref(), &GaugeMap::balanced(), &theta, 1.0, 0.5).unwrap();
        assert_relative_eq!(c, 4.25_f64.ln(), epsilon = 1e-12);
        let c = gauge_correction(gens.as_ref(), &GaugeMap::unit_fp(), &theta, 1.0, 0.5).unwrap();
        assert_relative_eq!(c, -4.25_f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn degenerate_orbit_is_rejected() {
        let gens = hadamard2();
        assert!(matches!(
            constraint_gram(gens.as_ref(), &GaugeMap::balanced(), &[0.0, 0.0]),
            Err(Error::OrbitDegenerate { .. })
        ));
        assert!(matches!(
            gauge_correction(gens.as_ref(), &GaugeMap::balanced(), &[0.0, 0.0], 1.0, 1.0),
            Err(Error::SingularGram { .. })
        ));
    }

    struct Constant;
    impl GaugeFunction for Constant {
        fn count(&self) -> usize {
            1
        }
        fn value(&self, _theta: &[f64]) -> Vec<f64> {
            vec![0.0]
        }
        fn jacobian(&self, _theta: &[f64]) -> DMatrix<f64> {
            DMatrix::zeros(1, 2)
        }
    }

    #[test]
    fn constant_gauge_is_not_transversal() {
        let gens = hadamard2();
        let gauge = GaugeMap::explicit(Arc::new(Constant));
        assert!(matches!(
            constraint_gram(gens.as_ref(), &gauge, &[1.0, 1.0]),
            Err(Error::NonTransversal { .. })
        ));
    }

    #[test]
    fn so3_is_not_free() {
        let gens = RotationGenerators::new(3);
        let h = orbit_gram(&gens, &[0.0, 0.0, 2.0]).unwrap();
        let (vals, _) = crate::linalg::sym_eigen(&h);
        assert!(vals[0].abs() < 1e-12);
        assert_relative_eq!(vals[1], 4.0, epsilon = 1e-12);
        assert_relative_eq!(vals[2], 4.0, epsilon = 1e-12);
    }

    #[test]
    fn wrong_dimension() {
        let gens = hadamard2();
        assert!(matches!(orbit_gram(gens.as_ref(), &[1.0]), Err(Error::DimensionMismatch { .. })));
    }
}

//! Closed-form orbit reductions: balanced representatives and reduced biases.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{spd_power, svd, sym_eigen};

/// `(u, v, cost)` with `u = sqrt|z|`, `v = sign(z) sqrt|z|`, `cost = 2|z|`.
pub fn balanced_scalar(z: f64) -> (f64, f64, f64) {
    let u = z.abs().sqrt();
    let v = if z < 0.0 { -u } else { u };
    (u, v, u * u + v * v)
}

/// Feature operator applied before the reduced bias.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureOp {
    Identity,
    ForwardDifference,
    Custom(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReducedBias {
    Finite(f64),
    /// Features vanish at these indices, so the logarithmic bias is singular.
    Singular(Vec<usize>),
}

/// `sum_i log |(A w)_i|`, or the indices where `(A w)_i = 0`.
pub fn reduced_scalar_bias(w: &[f64], op: &FeatureOp) -> Result<ReducedBias> {
    let feats: Vec<f64> = match op {
        FeatureOp::Identity => w.to_vec(),
        FeatureOp::ForwardDifference => w.windows(2).map(|p| p[1] - p[0]).collect(),
        FeatureOp::Custom(a) => {
            if a.ncols() != w.len() {
                return Err(Error::DimensionMismatch { expected: a.ncols(), got: w.len() });
            }
            (a * DVector::from_column_slice(w)).iter().copied().collect()
        }
    };
    let zeros: Vec<usize> = (0..feats.len()).filter(|&i| feats[i] == 0.0).collect();
    if zeros.is_empty() {
        Ok(ReducedBias::Finite(feats.iter().map(|f| f.abs().ln()).sum()))
    } else {
        Ok(ReducedBias::Singular(zeros))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BalancedFactorization {
    pub u_star: DMatrix<f64>,
    pub v_star: DMatrix<f64>,
    /// `|U|_F^2 + |V|_F^2`.
    pub cost: f64,
    pub nuclear_norm: f64,
}

/// Frobenius-minimal factorisation `Z = U V^T` with inner dimension `r`.
pub fn balanced_matrix(z: &DMatrix<f64>, r: usize) -> Result<BalancedFactorization> {
    let dec = svd(z);
    let top = dec.s.first().copied().unwrap_or(0.0);
    let rank = dec.s.iter().filter(|&&s| s > 1e-10 * top).count();
    if r < rank {
        return Err(Error::InvalidArgument(format!("rank bound {r} below numerical rank {rank}")));
    }
    let mut u = DMatrix::zeros(z.nrows(), r);
    let mut v = DMatrix::zeros(z.ncols(), r);
    for i in 0..rank {
        let s = dec.s[i].sqrt();
        u.set_column(i, &(dec.u.column(i) * s));
        v.set_column(i, &(dec.v.column(i) * s));
    }
    let nuclear: f64 = dec.s.iter().sum();
    Ok(BalancedFactorization { cost: u.norm_squared() + v.norm_squared(), u_star: u, v_star: v, nuclear_norm: nuclear })
}

fn check_spectrum(sigma: &[f64]) -> Result<()> {
    if sigma.is_empty() || sigma.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::InvalidArgument("spectrum must be nonempty and positive".into()));
    }
    Ok(())
}

/// `sum_ij log(sigma_i + sigma_j)` over the full `gl(r)` generator space.
pub fn gl_logdet_full(sigma: &[f64]) -> Result<f64> {
    check_spectrum(sigma)?;
    Ok(sigma.iter().flat_map(|a| sigma.iter().map(move |b| (a + b).ln())).sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaFamily {
    /// `prod_ij (a_i + b_j)`.
    pub det: f64,
    /// `(sigma_1 + sigma_2) gamma^2`.
    pub lambda_12: f64,
}

/// Orbit Gram determinant along the family `R_gamma` of the full `GL(r)` gauge.
pub fn gl_det_gamma_family(sigma: &[f64], gamma: f64) -> Result<GammaFamily> {
    check_spectrum(sigma)?;
    if sigma.len() < 2 || !(gamma > 0.0) {
        return Err(Error::InvalidArgument("need r >= 2 and gamma > 0".into()));
    }
    let g2 = gamma * gamma;
    let mut a = sigma.to_vec();
    let mut b = sigma.to_vec();
    a[0] = sigma[0] * g2;
    a[1] = sigma[1] / g2;
    b[0] = sigma[0] / g2;
    b[1] = sigma[1] * g2;
    let det = a.iter().flat_map(|x| b.iter().map(move |y| x + y)).product();
    Ok(GammaFamily { det, lambda_12: (sigma[0] + sigma[1]) * g2 })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerBalance {
    /// Per-layer Fourier magnitude.
    pub magnitude: f64,
    /// Its square `t`, the minimiser of `t^L + C L / t` with `C = |c|^2` (readout case).
    pub squared: f64,
}

/// Frequency-wise balanced magnitude across `L` layers (plus readout if present).
pub fn deep_conv_balance(c_mag: f64, layers: usize, with_readout: bool) -> Result<LayerBalance> {
    if layers == 0 || c_mag < 0.0 {
        return Err(Error::InvalidArgument("need L >= 1 and |c| >= 0".into()));
    }
    let factors = if with_readout { layers + 1 } else { layers };
    let magnitude = c_mag.powf(1.0 / factors as f64);
    Ok(LayerBalance { magnitude, squared: magnitude * magnitude })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CpBalance {
    pub squared_norm: f64,
    pub norm: f64,
}

/// Balanced per-mode norms of an order-`k` rank-one CP term with `S = prod |u_i|^2`.
pub fn cp_balance(s: f64, k: usize) -> Result<CpBalance> {
    if !(s > 0.0) || k < 2 {
        return Err(Error::InvalidArgument("need S > 0 and k >= 2".into()));
    }
    let sq = s.powf(1.0 / k as f64);
    Ok(CpBalance { squared_norm: sq, norm: sq.sqrt() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TtBalance {
    pub a: DMatrix<f64>,
    /// `|(U1 A)^T (U1 A) - (A^-1 U2)(A^-1 U2)^T|_F` after the transform.
    pub residual: f64,
}

/// Bond transform equalising `C1 = U1^T U1` and `C2 = U2 U2^T`.
pub fn tt_balance(u1: &DMatrix<f64>, u2: &DMatrix<f64>) -> Result<TtBalance> {
    if u1.ncols() != u2.nrows() {
        return Err(Error::DimensionMismatch { expected: u1.ncols(), got: u2.nrows() });
    }
    let c1 = u1.transpose() * u1;
    let c2 = u2 * u2.transpose();
    for c in [&c1, &c2] {
        let (vals, _) = sym_eigen(c);
        let max = vals.last().copied().unwrap_or(0.0);
        if !(vals[0] > 1e-12 * max) {
            return Err(Error::InvalidArgument("core Gram matrix is rank deficient".into()));
        }
    }
    let h = spd_power(&c1, 0.5);
    let m = &h * &c2 * &h;
    let a = spd_power(&c1, -0.5) * spd_power(&m, 0.25);
    let inv = a.clone().try_inverse().ok_or_else(|| Error::InvalidArgument("bond transform is singular".into()))?;
    let left = u1 * &a;
    let right = &inv * u2;
    let residual = (left.transpose() * &left - &right * right.transpose()).norm();
    Ok(TtBalance { a, residual })
}

/// Solves `2(l_i - 1) s_i + kappa sum_{j != i} 1/(l_i + l_j) = 0` by damped Newton.
///
/// Coordinates with `s_i = 0` and `kappa > 0` are pinned at `0`; pinned
/// coordinates leave the pair sums only when at least two coordinates remain active.
pub fn pca_lambda_solve(s: &[f64], kappa: f64) -> Result<Vec<f64>> {
    if s.is_empty() || s.iter().any(|&x| x < 0.0) || kappa < 0.0 {
        return Err(Error::InvalidArgument("need nonnegative s (nonempty) and kappa".into()));
    }
    let r = s.len();
    let pinned: Vec<bool> = s.iter().map(|&x| x == 0.0 && kappa > 0.0).collect();
    let active: Vec<usize> = (0..r).filter(|&i| !pinned[i]).collect();
    let mut lambda: Vec<f64> = pinned.iter().map(|&p| if p { 0.0 } else { 1.0 }).collect();
    if kappa == 0.0 || active.is_empty() {
        return Ok(lambda);
    }
    let partners: Vec<usize> = if active.len() >= 2 { active.clone() } else { (0..r).collect() };
    let residual = |l: &[f64]| -> Vec<f64> {
        active
            .iter()
            .map(|&i| {
                let pair: f64 = partners.iter().filter(|&&j| j != i).map(|&j| 1.0 / (l[i] + l[j])).sum();
                2.0 * (l[i] - 1.0) * s[i] + kappa * pair
            })
            .collect()
    };
    let norm = |f: &[f64]| f.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut f = residual(&lambda);
    for _ in 0..200 {
        if norm(&f) < 1e-12 {
            break;
        }
        let k = active.len();
        let mut jac = DMatrix::zeros(k, k);
        for (a, &i) in active.iter().enumerate() {
            let mut diag = 2.0 * s[i];
            for &j in partners.iter().filter(|&&j| j != i) {
                let d = -kappa / (lambda[i] + lambda[j]).powi(2);
                diag += d;
                if let Some(b) = active.iter().position(|&x| x == j) {
                    jac[(a, b)] += d;
                }
            }
            jac[(a, a)] += diag;
        }
        let step = jac
            .lu()
            .solve(&DVector::from_vec(f.clone()))
            .ok_or_else(|| Error::NoConvergence(format!("singular Newton system, residual {:e}", norm(&f))))?;
        let mut t = 1.0;
        loop {
            let mut trial = lambda.clone();
            for (a, &i) in active.iter().enumerate() {
                trial[i] -= t * step[a];
            }
            let ok = active.iter().all(|&i| trial[i] > 0.0);
            if ok {
                let ft = residual(&trial);
                if norm(&ft) < norm(&f) || t < 1e-8 {
                    lambda = trial;
                    f = ft;
                    break;
                }
            }
            t *= 0.5;
            if t < 1e-12 {
                return Err(Error::NoConvergence(format!("line search failed, residual {:e}", norm(&f))));
            }
        }
    }
    let res = norm(&f);
    if res >= 1e-10 {
        return Err(Error::NoConvergence(format!("200 Newton iterations, residual {res:e}")));
    }
    Ok(lambda)
}

/// Stationarity residual of [`pca_lambda_solve`] over active coordinates.
pub fn pca_lambda_residual(s: &[f64], kappa: f64, lambda: &[f64]) -> f64 {
    let r = s.len();
    let active: Vec<usize> = (0..r).filter(|&i| !(s[i] == 0.0 && kappa > 0.0)).collect();
    let partners: Vec<usize> = if active.len() >= 2 { active.clone() } else { (0..r).collect() };
    active
        .iter()
        .map(|&i| {
            let pair: f64 = partners.iter().filter(|&&j| j != i).map(|&j| 1.0 / (lambda[i] + lambda[j])).sum();
            (2.0 * (lambda[i] - 1.0) * s[i] + kappa * pair).powi(2)
        })
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockBalance {
    pub s_star: f64,
    pub value: f64,
    /// `w_g = 0`, where the minimum sits on the boundary `s = 0`.
    pub boundary: bool,
}

/// Minimiser of `s^2 + |w_g|^2 / s^2`.
pub fn block_balance(w_g: &[f64]) -> BlockBalance {
    let n = w_g.iter().map(|x| x * x).sum::<f64>().sqrt();
    BlockBalance { s_star: n.sqrt(), value: 2.0 * n, boundary: n == 0.0 }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiscreteOrbit {
    pub orbit_size: u128,
    pub stabilizer_size: u128,
}

fn factorial(n: usize) -> u128 {
    (1..=n as u128).product()
}

/// Size of the hidden-unit permutation orbit of `(W1, W2)`.
///
/// Neuron `i` is row `i` of `W1` together with column `i` of `W2`.
pub fn discrete_orbit_size(w1: &DMatrix<f64>, w2: &DMatrix<f64>, tol: f64) -> Result<DiscreteOrbit> {
    let m = w1.nrows();
    if w2.ncols() != m {
        return Err(Error::DimensionMismatch { expected: m, got: w2.ncols() });
    }
    if m > 34 {
        return Err(Error::InvalidArgument("orbit size overflows for more than 34 neurons".into()));
    }
    let same = |i: usize, j: usize| {
        let d1 = (w1.row(i) - w1.row(j)).amax();
        let d2 = (w2.column(i) - w2.column(j)).amax();
        d1.max(d2) <= tol
    };
    let mut class: Vec<Option<usize>> = vec![None; m];
    let mut sizes = Vec::new();
    for i in 0..m {
        if class[i].is_some() {
            continue;
        }
        let c = sizes.len();
        class[i] = Some(c);
        let mut count = 1;
        for (j, slot) in class.iter_mut().enumerate().skip(i + 1) {
            if slot.is_none() && same(i, j) {
                *slot = Some(c);
                count += 1;
            }
        }
        sizes.push(count);
    }
    let stabilizer: u128 = sizes.iter().map(|&s| factorial(s)).product();
    Ok(DiscreteOrbit { orbit_size: factorial(m) / stabilizer, stabilizer_size: stabilizer })
}

/// Balanced norm ratio `|w_j| / |v_j| = k^{3/2}` for a degree-`k` homogeneous activation.
pub fn homogeneity_balance_ratio(k: f64) -> Result<f64> {
    if !(k > 0.0) {
        return Err(Error::InvalidArgument("homogeneity degree must be positive".into()));
    }
    Ok(k.powf(1.5))
}

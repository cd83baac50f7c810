//! Concrete generator families.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use super::GeneratorSet;
use crate::error::{Error, Result};
use crate::linalg::{expm, from_row_major, write_row_major};

fn check_index(a: usize, count: usize) -> Result<()> {
    if a < count {
        Ok(())
    } else {
        Err(Error::GeneratorIndex { index: a, count })
    }
}

/// Rescales `up` coordinates by `alpha` and `down` coordinates by `alpha^-power`.
#[derive(Debug, Clone)]
pub struct ScalingGenerator {
    pub up: Vec<usize>,
    pub down: Vec<usize>,
    pub power: f64,
}

/// A commuting family of coordinate rescalings.
#[derive(Debug, Clone)]
pub struct ScalingGenerators {
    label: String,
    dim: usize,
    gens: Vec<ScalingGenerator>,
}

impl ScalingGenerators {
    pub fn new(label: impl Into<String>, dim: usize, gens: Vec<ScalingGenerator>) -> Self {
        for g in &gens {
            assert!(g.up.iter().chain(&g.down).all(|&i| i < dim), "scaling index out of range");
        }
        Self { label: label.into(), dim, gens }
    }

    /// Pairs `(p_i, q_i)` with `p_i -> a p_i`, `q_i -> q_i / a`.
    pub fn hadamard(label: impl Into<String>, dim: usize, pairs: &[(usize, usize)]) -> Self {
        let gens = pairs
            .iter()
            .map(|&(p, q)| ScalingGenerator { up: vec![p], down: vec![q], power: 1.0 })
            .collect();
        Self::new(label, dim, gens)
    }

    pub fn generator(&self, a: usize) -> &ScalingGenerator {
        &self.gens[a]
    }

    /// Applies a finite (possibly negative) factor `alpha` along generator `a`.
    pub fn apply_factor(&self, a: usize, alpha: f64, theta: &[f64]) -> Result<Vec<f64>> {
        check_index(a, self.gens.len())?;
        let g = &self.gens[a];
        let mut out = theta.to_vec();
        let inv = alpha.powf(-g.power);
        for &i in &g.up {
            out[i] *= alpha;
        }
        for &i in &g.down {
            out[i] *= inv;
        }
        Ok(out)
    }
}

impl GeneratorSet for ScalingGenerators {
    fn label(&self) -> &str {
        &self.label
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn count(&self) -> usize {
        self.gens.len()
    }
    fn tangent(&self, a: usize, theta: &[f64]) -> Result<Vec<f64>> {
        check_index(a, self.gens.len())?;
        let g = &self.gens[a];
        let mut xi = vec![0.0; self.dim];
        for &i in &g.up {
            xi[i] += theta[i];
        }
        for &i in &g.down {
            xi[i] -= g.power * theta[i];
        }
        Ok(xi)
    }
    fn act(&self, a: usize, t: f64, theta: &[f64]) -> Result<Vec<f64>> {
        self.apply_factor(a, t.exp(), theta)
    }
}

/// How a matrix group element `A` acts on one factor block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockAction {
    /// `B -> B A` for a `rows x r` block.
    Right,
    /// `B -> B A^{-T}` for a `rows x r` block.
    RightInvTranspose,
    /// `B -> A^{-1} B` for an `r x cols` block.
    LeftInv,
}

/// A row-major matrix block inside the parameter vector.
#[derive(Debug, Clone)]
pub struct FactorBlock {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub action: BlockAction,
}

/// Generators of a matrix Lie group acting jointly on several factor blocks.
#[derive(Debug, Clone)]
pub struct MatrixGenerators {
    label: String,
    dim: usize,
    r: usize,
    basis: Vec<DMatrix<f64>>,
    blocks: Vec<FactorBlock>,
}

impl MatrixGenerators {
    pub fn new(
        label: impl Into<String>,
        dim: usize,
        r: usize,
        basis: Vec<DMatrix<f64>>,
        blocks: Vec<FactorBlock>,
    ) -> Self {
        for b in &blocks {
            let inner = match b.action {
                BlockAction::Right | BlockAction::RightInvTranspose => b.cols,
                BlockAction::LeftInv => b.rows,
            };
            assert_eq!(inner, r, "block does not match group dimension");
            assert!(b.offset + b.rows * b.cols <= dim, "block exceeds parameter vector");
        }
        Self { label: label.into(), dim, r, basis, blocks }
    }

    /// Full `gl(r)` with basis `E_ij`.
    pub fn general_linear(label: impl Into<String>, dim: usize, r: usize, blocks: Vec<FactorBlock>) -> Self {
        let mut basis = Vec::with_capacity(r * r);
        for i in 0..r {
            for j in 0..r {
                let mut e = DMatrix::zeros(r, r);
                e[(i, j)] = 1.0;
                basis.push(e);
            }
        }
        Self::new(label, dim, r, basis, blocks)
    }

    /// Diagonal subalgebra with basis `E_ii`.
    pub fn diagonal(label: impl Into<String>, dim: usize, r: usize, blocks: Vec<FactorBlock>) -> Self {
        let basis = (0..r)
            .map(|i| {
                let mut e = DMatrix::zeros(r, r);
                e[(i, i)] = 1.0;
                e
            })
            .collect();
        Self::new(label, dim, r, basis, blocks)
    }

    /// `o(r)` with orthonormal basis `(E_ij - E_ji)/sqrt(2)`.
    pub fn orthogonal(label: impl Into<String>, dim: usize, r: usize, blocks: Vec<FactorBlock>) -> Self {
        let mut basis = Vec::new();
        for i in 0..r {
            for j in (i + 1)..r {
                let mut e = DMatrix::zeros(r, r);
                e[(i, j)] = std::f64::consts::FRAC_1_SQRT_2;
                e[(j, i)] = -std::f64::consts::FRAC_1_SQRT_2;
                basis.push(e);
            }
        }
        Self::new(label, dim, r, basis, blocks)
    }

    pub fn group_dim(&self) -> usize {
        self.r
    }

    pub fn basis(&self) -> &[DMatrix<f64>] {
        &self.basis
    }

    /// Applies an arbitrary invertible `r x r` matrix `A` to all blocks.
    pub fn apply_group(&self, a: &DMatrix<f64>, theta: &[f64]) -> Result<Vec<f64>> {
        if a.nrows() != self.r || a.ncols() != self.r {
            return Err(Error::DimensionMismatch { expected: self.r, got: a.nrows() });
        }
        let inv = a
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InvalidArgument("group element is not invertible".into()))?;
        let inv_t = inv.transpose();
        let mut out = theta.to_vec();
        for b in &self.blocks {
            let len = b.rows * b.cols;
            let m = from_row_major(b.rows, b.cols, &theta[b.offset..b.offset + len]);
            let moved = match b.action {
                BlockAction::Right => m * a,
                BlockAction::RightInvTranspose => m * &inv_t,
                BlockAction::LeftInv => &inv * m,
            };
            write_row_major(&moved, &mut out[b.offset..b.offset + len]);
        }
        Ok(out)
    }
}

impl GeneratorSet for MatrixGenerators {
    fn label(&self) -> &str {
        &self.label
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn count(&self) -> usize {
        self.basis.len()
    }
    fn tangent(&self, a: usize, theta: &[f64]) -> Result<Vec<f64>> {
        check_index(a, self.basis.len())?;
        let x = &self.basis[a];
        let mut xi = vec![0.0; self.dim];
        for b in &self.blocks {
            let len = b.rows * b.cols;
            let m = from_row_major(b.rows, b.cols, &theta[b.offset..b.offset + len]);
            let d = match b.action {
                BlockAction::Right => m * x,
                BlockAction::RightInvTranspose => -(m * x.transpose()),
                BlockAction::LeftInv => -(x * m),
            };
            write_row_major(&d, &mut xi[b.offset..b.offset + len]);
        }
        Ok(xi)
    }
    fn act(&self, a: usize, t: f64, theta: &[f64]) -> Result<Vec<f64>> {
        check_index(a, self.basis.len())?;
        let g = expm(&(&self.basis[a] * t));
        self.apply_group(&g, theta)
    }
}

/// Plane rotations `so(d)` acting on the whole parameter vector.
#[derive(Debug, Clone)]
pub struct RotationGenerators {
    dim: usize,
    planes: Vec<(usize, usize)>,
}

impl RotationGenerators {
    pub fn new(dim: usize) -> Self {
        let mut planes = Vec::new();
        for i in 0..dim {
            for j in (i + 1)..dim {
                planes.push((i, j));
            }
        }
        Self { dim, planes }
    }
}

impl GeneratorSet for RotationGenerators {
    fn label(&self) -> &str {
        "SO(d)"
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn count(&self) -> usize {
        self.planes.len()
    }
    fn tangent(&self, a: usize, theta: &[f64]) -> Result<Vec<f64>> {
        check_index(a, self.planes.len())?;
        let (i, j) = self.planes[a];
        let mut xi = vec![0.0; self.dim];
        xi[i] = -theta[j];
        xi[j] = theta[i];
        Ok(xi)
    }
    fn act(&self, a: usize, t: f64, theta: &[f64]) -> Result<Vec<f64>> {
        check_index(a, self.planes.len())?;
        let (i, j) = self.planes[a];
        let (s, c) = t.sin_cos();
        let mut out = theta.to_vec();
        out[i] = c * theta[i] - s * theta[j];
        out[j] = s * theta[i] + c * theta[j];
        Ok(out)
    }
}

/// One Fourier-pair scaling: each term `(offset, c)` moves the length-`n`
/// block at `offset` by `c P_k`, where `P_k` projects onto frequencies `{k, n-k}`.
#[derive(Debug, Clone)]
pub struct FourierGenerator {
    pub freq: usize,
    pub terms: Vec<(usize, f64)>,
}

/// Per-frequency rescalings of circular convolution kernels.
#[derive(Debug, Clone)]
pub struct FourierScalingGenerators {
    label: String,
    dim: usize,
    n: usize,
    projectors: Vec<DMatrix<f64>>,
    gens: Vec<FourierGenerator>,
}

/// Orthogonal projector onto the real span of frequency pair `{k, n-k}`.
pub fn frequency_projector(n: usize, k: usize) -> DMatrix<f64> {
    let c = nalgebra::DVector::from_iterator(n, (0..n).map(|j| (2.0 * PI * (k * j) as f64 / n as f64).cos()));
    let s = nalgebra::DVector::from_iterator(n, (0..n).map(|j| (2.0 * PI * (k * j) as f64 / n as f64).sin()));
    let mut p = DMatrix::zeros(n, n);
    for v in [c, s] {
        let nn = v.norm_squared();
        if nn > 1e-9 {
            p += &v * v.transpose() / nn;
        }
    }
    p
}

impl FourierScalingGenerators {
    pub fn new(label: impl Into<String>, dim: usize, n: usize, gens: Vec<FourierGenerator>) -> Self {
        let projectors = (0..=n / 2).map(|k| frequency_projector(n, k)).collect();
        for g in &gens {
            assert!(g.freq <= n / 2, "frequency index out of range");
            assert!(g.terms.iter().all(|&(o, _)| o + n <= dim), "block exceeds parameter vector");
        }
        Self { label: label.into(), dim, n, projectors, gens }
    }
}

impl GeneratorSet for FourierScalingGenerators {
    fn label(&self) -> &str {
        &self.label
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn count(&self) -> usize {
        self.gens.len()
    }
    fn tangent(&self, a: usize, theta: &[f64]) -> Result<Vec<f64>> {
        check_index(a, self.gens.len())?;
        let g = &self.gens[a];
        let p = &self.projectors[g.freq];
        let mut xi = vec![0.0; self.dim];
        for &(o, c) in &g.terms {
            let x = nalgebra::DVector::from_column_slice(&theta[o..o + self.n]);
            let px = p * x;
            for i in 0..self.n {
                xi[o + i] += c * px[i];
            }
        }
        Ok(xi)
    }
    fn act(&self, a: usize, t: f64, theta: &[f64]) -> Result<Vec<f64>> {
        check_index(a, self.gens.len())?;
        let g = &self.gens[a];
        let p = &self.projectors[g.freq];
        let mut out = theta.to_vec();
        for &(o, c) in &g.terms {
            let x = nalgebra::DVector::from_column_slice(&theta[o..o + self.n]);
            let px = p * x;
            let f = (c * t).exp() - 1.0;
            for i in 0..self.n {
                out[o + i] += f * px[i];
            }
        }
        Ok(out)
    }
}

/// The empty generator set for models without continuous symmetry.
#[derive(Debug, Clone)]
pub struct NoGenerators {
    pub dim: usize,
}

impl GeneratorSet for NoGenerators {
    fn label(&self) -> &str {
        "trivial"
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn count(&self) -> usize {
        0
    }
    fn tangent(&self, a: usize, _theta: &[f64]) -> Result<Vec<f64>> {
        Err(Error::GeneratorIndex { index: a, count: 0 })
    }
    fn act(&self, a: usize, _t: f64, _theta: &[f64]) -> Result<Vec<f64>> {
        Err(Error::GeneratorIndex { index: a, count: 0 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn fd_tangent(g: &dyn GeneratorSet, a: usize, theta: &[f64]) -> Vec<f64> {
        let h = 1e-6;
        let p = g.act(a, h, theta).unwrap();
        let m = g.act(a, -h, theta).unwrap();
        p.iter().zip(&m).map(|(x, y)| (x - y) / (2.0 * h)).collect()
    }

    fn check_tangents(g: &dyn GeneratorSet, theta: &[f64]) {
        for a in 0..g.count() {
            let xi = g.tangent(a, theta).unwrap();
            let fd = fd_tangent(g, a, theta);
            for (x, y) in xi.iter().zip(&fd) {
                assert_relative_eq!(x, y, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn scaling_tangent_matches_action() {
        let g = ScalingGenerators::new(
            "cp",
            6,
            vec![
                ScalingGenerator { up: vec![0, 1], down: vec![4, 5], power: 1.0 },
                ScalingGenerator { up: vec![2, 3], down: vec![4, 5], power: 2.0 },
            ],
        );
        check_tangents(&g, &[0.3, -1.2, 0.7, 2.0, -0.4, 0.9]);
    }

    #[test]
    fn negative_factor_flips_both_sides() {
        let g = ScalingGenerators::hadamard("h", 2, &[(0, 1)]);
        let out = g.apply_factor(0, -2.0, &[1.0, 3.0]).unwrap();
        assert_eq!(out, vec![-2.0, -1.5]);
    }

    #[test]
    fn matrix_tangent_matches_action() {
        let blocks = vec![
            FactorBlock { offset: 0, rows: 3, cols: 2, action: BlockAction::Right },
            FactorBlock { offset: 6, rows: 2, cols: 2, action: BlockAction::RightInvTranspose },
            FactorBlock { offset: 10, rows: 2, cols: 3, action: BlockAction::LeftInv },
        ];
        let g = MatrixGenerators::general_linear("gl", 16, 2, blocks);
        let theta: Vec<f64> = (0..16).map(|i| ((i * 7 % 11) as f64 - 5.0) / 3.0).collect();
        check_tangents(&g, &theta);
    }

    #[test]
    fn rotation_tangent_in_plane() {
        let g = RotationGenerators::new(2);
        assert_eq!(g.tangent(0, &[1.0, 2.0]).unwrap(), vec![-2.0, 1.0]);
        check_tangents(&RotationGenerators::new(4), &[0.1, 0.5, -0.3, 1.0]);
    }

    #[test]
    fn fourier_projectors_are_idempotent_and_complete() {
        let n = 8;
        let mut sum = DMatrix::zeros(n, n);
        for k in 0..=n / 2 {
            let p = frequency_projector(n, k);
            assert_relative_eq!(&p * &p, p.clone(), epsilon = 1e-12);
            sum += p;
        }
        assert_relative_eq!(sum, DMatrix::identity(n, n), epsilon = 1e-12);
        let g = FourierScalingGenerators::new(
            "fourier",
            16,
            8,
            vec![FourierGenerator { freq: 2, terms: vec![(0, 1.0), (8, -1.0)] }],
        );
        let theta: Vec<f64> = (0..16).map(|i| (i as f64 * 0.37).sin()).collect();
        check_tangents(&g, &theta);
    }

    #[test]
    fn index_out_of_range() {
        let g = RotationGenerators::new(3);
        assert!(matches!(g.tangent(3, &[0.0; 3]), Err(Error::GeneratorIndex { index: 3, count: 3 })));
    }
}

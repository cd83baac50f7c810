//! Dense linear-algebra helpers on top of nalgebra.
//!
//! Parameter vectors store matrix blocks in row-major order; the helpers here
//! convert between that layout and `DMatrix`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Relative eigenvalue cutoff for treating an orbit Gram as invertible.
pub const REL_CUTOFF: f64 = 1e-12;

/// Builds a matrix from a row-major slice.
pub fn from_row_major(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, data)
}

/// Flattens a matrix into row-major order.
pub fn to_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Writes a matrix into `dst` in row-major order.
pub fn write_row_major(m: &DMatrix<f64>, dst: &mut [f64]) {
    let c = m.ncols();
    for i in 0..m.nrows() {
        for j in 0..c {
            dst[i * c + j] = m[(i, j)];
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Symmetric eigendecomposition with eigenvalues sorted ascending.
pub fn sym_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = DMatrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        vecs.set_column(k, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

/// Inverse of a symmetric positive semidefinite matrix, rejecting near-singular input.
pub fn inv_sym(h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (vals, vecs) = sym_eigen(h);
    let max = vals.iter().cloned().fold(0.0_f64, |a, b| a.max(b.abs()));
    let min = vals.first().copied().unwrap_or(0.0);
    if vals.is_empty() {
        return Ok(DMatrix::zeros(0, 0));
    }
    if !(max > 0.0) || min <= REL_CUTOFF * max {
        return Err(Error::OrbitDegenerate { min_eig: min, max_eig: max });
    }
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        vals.len(),
        vals.iter().map(|v| 1.0 / v),
    ));
    Ok(&vecs * d * vecs.transpose())
}

/// Log-determinant of a symmetric positive definite matrix as a sum of log eigenvalues.
pub fn logdet_spd(m: &DMatrix<f64>) -> Result<f64> {
    let (vals, _) = sym_eigen(m);
    let max = vals.iter().cloned().fold(0.0_f64, |a, b| a.max(b.abs()));
    let mut acc = 0.0;
    for &v in &vals {
        if !(v > REL_CUTOFF * max) {
            return Err(Error::SingularGram { min_eig: v });
        }
        acc += v.ln();
    }
    Ok(acc)
}

/// Power of a symmetric positive semidefinite matrix via its eigendecomposition.
pub fn spd_power(m: &DMatrix<f64>, p: f64) -> DMatrix<f64> {
    let (vals, vecs) = sym_eigen(m);
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        vals.len(),
        vals.iter().map(|v| v.max(0.0).powf(p)),
    ));
    &vecs * d * vecs.transpose()
}

/// Thin SVD with singular values sorted descending.
///
/// Each left singular vector is signed so its largest-magnitude entry is positive;
/// the matching right vector flips with it.
pub struct Svd {
    pub u: DMatrix<f64>,
    pub s: Vec<f64>,
    pub v: DMatrix<f64>,
}

/// One-sided Jacobi SVD of a matrix with at least as many rows as columns.
///
/// Returns `(u, s, v)` unsorted; columns of `u` for zero singular values are
/// completed to an orthonormal set.
fn jacobi_svd(a: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let n = a.ncols();
    let mut w = a.clone();
    let mut v = DMatrix::identity(n, n);
    for _ in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = w.column(p).norm_squared();
                let beta = w.column(q).norm_squared();
                let gamma = w.column(p).dot(&w.column(q));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let sn = c * t;
                for mat in [&mut w, &mut v] {
                    for r in 0..mat.nrows() {
                        let (x, y) = (mat[(r, p)], mat[(r, q)]);
                        mat[(r, p)] = c * x - sn * y;
                        mat[(r, q)] = sn * x + c * y;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let s: Vec<f64> = (0..n).map(|j| w.column(j).norm()).collect();
    let top = s.iter().copied().fold(0.0, f64::max);
    let tiny = top * f64::EPSILON * a.nrows().max(n) as f64;
    let mut u = DMatrix::zeros(a.nrows(), n);
    let mut missing = Vec::new();
    for (j, &sj) in s.iter().enumerate() {
        if sj > tiny {
            u.set_column(j, &(w.column(j) / sj));
        } else {
            missing.push(j);
        }
    }
    let mut e = 0;
    for j in missing {
        while e < a.nrows() {
            let mut cand = nalgebra::DVector::zeros(a.nrows());
            cand[e] = 1.0;
            e += 1;
            for k in 0..n {
                let proj = u.column(k).dot(&cand);
                cand -= u.column(k) * proj;
            }
            let nrm = cand.norm();
            if nrm > 1e-8 {
                u.set_column(j, &(cand / nrm));
                break;
            }
        }
    }
    (u, s, v)
}

pub fn svd(m: &DMatrix<f64>) -> Svd {
    let wide = m.nrows() < m.ncols();
    let (u0, s0, v0) = if wide {
        let (u, s, v) = jacobi_svd(&m.transpose());
        (v, s, u)
    } else {
        jacobi_svd(m)
    };
    let k = s0.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| s0[b].total_cmp(&s0[a]));
    let mut u = DMatrix::zeros(m.nrows(), k);
    let mut v = DMatrix::zeros(m.ncols(), k);
    let mut s = Vec::with_capacity(k);
    for (c, &i) in order.iter().enumerate() {
        let mut ucol = u0.column(i).into_owned();
        let mut vcol = v0.column(i).into_owned();
        let lead = ucol
            .iter()
            .cloned()
            .fold(0.0_f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if lead < 0.0 {
            ucol = -ucol;
            vcol = -vcol;
        }
        u.set_column(c, &ucol);
        v.set_column(c, &vcol);
        s.push(s0[i]);
    }
    Svd { u, s, v }
}

pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    svd(m).s
}

/// Matrix exponential.
pub fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().exp()
}

pub fn nuclear_norm(m: &DMatrix<f64>) -> f64 {
    singular_values(m).iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn row_major_roundtrip() {
        let data = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let m = from_row_major(2, 3, &data);
        assert_eq!(m[(0, 2)], 3.0);
        assert_eq!(m[(1, 0)], 4.0);
        assert_eq!(to_row_major(&m), data.to_vec());
    }

    #[test]
    fn expm_of_rotation_generator() {
        let x = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let r = expm(&(x * 0.3));
        assert_relative_eq!(r[(0, 0)], 0.3_f64.cos(), epsilon = 1e-14);
        assert_relative_eq!(r[(1, 0)], 0.3_f64.sin(), epsilon = 1e-14);
    }

    #[test]
    fn svd_sign_convention_and_order() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 3.0, 0.0]);
        let d = svd(&m);
        assert_relative_eq!(d.s[0], 3.0, epsilon = 1e-12);
        assert_relative_eq!(d.s[1], 1.0, epsilon = 1e-12);
        for c in 0..2 {
            let col = d.u.column(c);
            let lead = col.iter().cloned().fold(0.0_f64, |a, x| if x.abs() > a.abs() { x } else { a });
            assert!(lead > 0.0);
        }
        let rec = &d.u * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(d.s.clone())) * d.v.transpose();
        assert_relative_eq!(rec, m, epsilon = 1e-12);
    }

    fn assert_valid_svd(m: &DMatrix<f64>) {
        let d = svd(m);
        let k = m.nrows().min(m.ncols());
        let rec = &d.u * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(d.s.clone())) * d.v.transpose();
        assert!((rec - m).norm() < 1e-13 * (1.0 + m.norm()));
        assert!((d.u.transpose() * &d.u - DMatrix::identity(k, k)).norm() < 1e-12);
        assert!((d.v.transpose() * &d.v - DMatrix::identity(k, k)).norm() < 1e-12);
        let mut eig: Vec<f64> = (m.transpose() * m).symmetric_eigen().eigenvalues.iter().copied().collect();
        eig.sort_by(|a, b| b.total_cmp(a));
        for (s, e) in d.s.iter().zip(&eig) {
            assert!((s * s - e.max(0.0)).abs() < 1e-12 * (1.0 + eig[0]));
        }
        assert!(d.s.windows(2).all(|p| p[0] >= p[1]));
    }

    #[test]
    fn svd_of_rank_deficient_product() {
        let v = [
            1.218371278551039,
            -0.6209624379245879,
            1.3188474061097244,
            1.209561938222378,
            -1.2256780420601496,
            1.037241870874028,
            0.4219148807463756,
            1.2824961786983424,
            -0.31357071245363416,
            1.7812689908330912,
            -1.3685751872120553,
            -0.7700824864626046,
        ];
        let a = DMatrix::from_row_slice(4, 2, &v[..8]);
        let b = DMatrix::from_row_slice(3, 2, &[v[8], v[9], v[10], v[11], v[0], v[1]]);
        let z = &a * b.transpose();
        assert_valid_svd(&z);
        assert_valid_svd(&z.transpose());
        assert!(svd(&z).s[2] < 1e-14);
    }

    #[test]
    fn svd_of_random_shapes() {
        let mut rng = crate::rng::stream(11, 0);
        for (r, c, rank) in [(5, 3, 3), (3, 7, 3), (6, 6, 2), (1, 4, 1), (8, 5, 0), (10, 10, 10)] {
            let l = DMatrix::from_vec(r, rank, crate::rng::normal_vec(&mut rng, r * rank, 1.0));
            let rt = DMatrix::from_vec(rank, c, crate::rng::normal_vec(&mut rng, rank * c, 1.0));
            assert_valid_svd(&(l * rt));
        }
    }

    #[test]
    fn inverse_and_logdet() {
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let hi = inv_sym(&h).unwrap();
        assert_relative_eq!(&h * hi, DMatrix::identity(2, 2), epsilon = 1e-12);
        assert_relative_eq!(logdet_spd(&h).unwrap(), 3.0_f64.ln(), epsilon = 1e-12);
        let sing = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(inv_sym(&sing), Err(Error::OrbitDegenerate { .. })));
        assert!(matches!(logdet_spd(&sing), Err(Error::SingularGram { .. })));
    }

    #[test]
    fn spd_power_square_root() {
        let m = DMatrix::from_row_slice(2, 2, &[5.0, 2.0, 2.0, 2.0]);
        let r = spd_power(&m, 0.5);
        assert_relative_eq!(&r * &r, m, epsilon = 1e-12);
    }
}

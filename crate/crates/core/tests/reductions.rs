use std::collections::BTreeSet;

use approx::assert_relative_eq;
use gaugelab::reductions::*;
use nalgebra::DMatrix;
use proptest::prelude::*;

/// Golden-section minimum of a unimodal function on `[lo, hi]`.
fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - g * (hi - lo);
    let mut b = lo + g * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    for _ in 0..200 {
        if fa < fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - g * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + g * (hi - lo);
            fb = f(b);
        }
    }
    (lo + hi) / 2.0
}

fn matrix(rows: usize, cols: usize, vals: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, &vals[..rows * cols])
}

#[test]
fn scalar_balance_matches_grid_search() {
    for z in [-4.0, -0.3, 0.02, 1.0, 9.0] {
        let (u, v, cost) = balanced_scalar(z);
        let best = golden_min(|t: f64| (t * t + (z / t).powi(2)).ln(), 1e-4, 1e4);
        assert_relative_eq!(u, best, max_relative = 1e-6);
        assert_relative_eq!(cost, best * best + (z / best).powi(2), max_relative = 1e-9);
        assert_relative_eq!(u * v, z, max_relative = 1e-12);
    }
    assert_eq!(balanced_scalar(0.0), (0.0, 0.0, 0.0));
}

#[test]
fn block_balance_matches_grid_search() {
    let w = [0.3, -1.2, 2.0];
    let b = block_balance(&w);
    let n2: f64 = w.iter().map(|x| x * x).sum();
    let s = golden_min(|s| s * s + n2 / (s * s), 1e-3, 1e3);
    assert_relative_eq!(b.s_star, s, max_relative = 1e-6);
    assert_relative_eq!(b.value, s * s + n2 / (s * s), max_relative = 1e-9);
    assert!(!b.boundary);
    assert!(block_balance(&[0.0, 0.0]).boundary);
}

#[test]
fn reduced_bias_operators_agree_with_explicit_matrices() {
    let w = [1.0, 3.0, -2.0, 0.5];
    let mut d = DMatrix::zeros(3, 4);
    for i in 0..3 {
        d[(i, i)] = -1.0;
        d[(i, i + 1)] = 1.0;
    }
    let fd = reduced_scalar_bias(&w, &FeatureOp::ForwardDifference).unwrap();
    assert_eq!(fd, reduced_scalar_bias(&w, &FeatureOp::Custom(d)).unwrap());
    assert_eq!(fd, ReducedBias::Finite(2f64.ln() + 5f64.ln() + 2.5f64.ln()));
    let id = reduced_scalar_bias(&w, &FeatureOp::Identity).unwrap();
    assert_eq!(id, reduced_scalar_bias(&w, &FeatureOp::Custom(DMatrix::identity(4, 4))).unwrap());
    assert_eq!(
        reduced_scalar_bias(&[1.0, 1.0, 4.0, 4.0], &FeatureOp::ForwardDifference).unwrap(),
        ReducedBias::Singular(vec![0, 2])
    );
    assert!(reduced_scalar_bias(&w, &FeatureOp::Custom(DMatrix::identity(3, 3))).is_err());
}

#[test]
fn gl_logdet_with_constant_spectrum() {
    for (r, s) in [(1, 0.5), (2, 3.0), (4, 1.7)] {
        let sigma = vec![s; r];
        assert_relative_eq!(gl_logdet_full(&sigma).unwrap(), (r * r) as f64 * (2.0 * s).ln(), max_relative = 1e-12);
    }
}

#[test]
fn gamma_family_is_minimised_at_identity() {
    let sigma = [3.0, 1.0];
    let at_one = gl_det_gamma_family(&sigma, 1.0).unwrap();
    assert_relative_eq!(at_one.det.ln(), gl_logdet_full(&sigma).unwrap(), max_relative = 1e-12);
    let g = golden_min(|g| gl_det_gamma_family(&sigma, g).unwrap().det, 0.2, 5.0);
    assert_relative_eq!(g, 1.0, epsilon = 1e-6);
}

#[test]
fn deep_conv_balance_matches_numeric_minimiser() {
    for (c, l) in [(8.0, 2usize), (0.5, 3), (20.0, 5)] {
        let bal = deep_conv_balance(c, l, true).unwrap();
        let cc = c * c;
        let t = golden_min(|t| t.powi(l as i32) + cc * l as f64 / t, 1e-3, 1e3);
        assert_relative_eq!(bal.squared, t, max_relative = 1e-6);
        assert_relative_eq!(bal.magnitude.powi(l as i32 + 1), c, max_relative = 1e-12);
    }
    assert_relative_eq!(deep_conv_balance(8.0, 2, true).unwrap().magnitude, 2.0, max_relative = 1e-12);
    assert_relative_eq!(deep_conv_balance(8.0, 3, false).unwrap().magnitude, 2.0, max_relative = 1e-12);
}

#[test]
fn homogeneity_ratio_matches_alpha_scan() {
    for k in [1.0, 2.0, 3.0] {
        let (w, v) = (0.7f64, 1.9f64);
        let gram = |a: f64| a * a * w * w + k * k * a.powf(-2.0 * k) * v * v;
        let a = golden_min(gram, 1e-3, 1e3);
        let ratio = (a * w) / (a.powf(-k) * v);
        assert!((ratio - homogeneity_balance_ratio(k).unwrap()).abs() < 1e-6 * ratio, "k = {k}: {ratio}");
    }
}

#[test]
fn pca_symmetric_pair_has_closed_form() {
    for (s, kappa) in [(1.0, 0.5), (2.0, 0.1), (0.8, 0.7)] {
        let l = pca_lambda_solve(&[s, s], kappa).unwrap();
        let root = (1.0 + (1.0 - kappa / s).sqrt()) / 2.0;
        assert_relative_eq!(l[0], root, max_relative = 1e-9);
        assert_relative_eq!(l[1], root, max_relative = 1e-9);
    }
    assert_eq!(pca_lambda_solve(&[2.5], 0.3).unwrap(), vec![1.0]);
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..n {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn brute_orbit(w1: &DMatrix<f64>, w2: &DMatrix<f64>) -> usize {
    let m = w1.nrows();
    let mut seen = BTreeSet::new();
    for p in permutations(m) {
        let key: Vec<u64> = p
            .iter()
            .flat_map(|&i| w1.row(i).iter().chain(w2.column(i).iter()).map(|x| x.to_bits()).collect::<Vec<_>>())
            .collect();
        seen.insert(key);
    }
    seen.len()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn balanced_matrix_is_minimal_and_balanced(
        vals in prop::collection::vec(-2.0f64..2.0, 12),
        mix in prop::collection::vec(-1.0f64..1.0, 4),
    ) {
        let u0 = matrix(4, 2, &vals);
        let v0 = matrix(3, 2, &vals[8..].iter().chain(&vals[..2]).copied().collect::<Vec<_>>());
        let z = &u0 * v0.transpose();
        let f = balanced_matrix(&z, 2).unwrap();
        prop_assert!((&f.u_star * f.v_star.transpose() - &z).norm() < 1e-10 * (1.0 + z.norm()));
        let gu = f.u_star.transpose() * &f.u_star;
        let gv = f.v_star.transpose() * &f.v_star;
        prop_assert!((&gu - &gv).norm() < 1e-9 * (1.0 + gu.norm()));
        let mut eig: Vec<f64> = (z.transpose() * &z).symmetric_eigen().eigenvalues.iter().copied().collect();
        eig.sort_by(|a, b| b.total_cmp(a));
        let nuclear: f64 = eig[..2].iter().map(|e| e.max(0.0).sqrt()).sum();
        prop_assert!((f.cost - 2.0 * nuclear).abs() < 1e-9 * (1.0 + nuclear));
        let a = DMatrix::identity(2, 2) + 0.5 * matrix(2, 2, &mix);
        if let Some(inv) = a.clone().try_inverse() {
            let u = &f.u_star * &a;
            let v = &f.v_star * inv.transpose();
            prop_assert!(u.norm_squared() + v.norm_squared() >= f.cost - 1e-9 * (1.0 + f.cost));
        }
    }

    #[test]
    fn cp_balance_meets_am_gm(norms in prop::collection::vec(0.1f64..3.0, 2..6)) {
        let k = norms.len();
        let sq: Vec<f64> = norms.iter().map(|n| n * n).collect();
        let s: f64 = sq.iter().product();
        let bal = cp_balance(s, k).unwrap();
        prop_assert!((bal.squared_norm.powi(k as i32) - s).abs() < 1e-9 * s);
        prop_assert!(k as f64 * bal.squared_norm <= sq.iter().sum::<f64>() * (1.0 + 1e-12));
        prop_assert!((bal.norm * bal.norm - bal.squared_norm).abs() < 1e-12 * bal.squared_norm);
    }

    #[test]
    fn tt_balance_preserves_the_product(vals in prop::collection::vec(-2.0f64..2.0, 24)) {
        let u1 = matrix(4, 3, &vals);
        let u2 = matrix(3, 4, &vals[12..]);
        if let Ok(b) = tt_balance(&u1, &u2) {
            let inv = b.a.clone().try_inverse().unwrap();
            let before = &u1 * &u2;
            let after = (&u1 * &b.a) * (inv * &u2);
            prop_assert!((after - &before).norm() < 1e-8 * (1.0 + before.norm()));
            prop_assert!(b.residual < 1e-8 * (1.0 + u1.norm_squared() + u2.norm_squared()));
        }
    }

    #[test]
    fn pca_solution_is_stationary(s in prop::collection::vec(0.05f64..3.0, 1..6), frac in 0.0f64..1.0) {
        let smin = s.iter().copied().fold(f64::INFINITY, f64::min);
        let kappa = frac * smin / s.len() as f64;
        let l = pca_lambda_solve(&s, kappa).unwrap();
        prop_assert!(pca_lambda_residual(&s, kappa, &l) < 1e-10);
        if kappa > 0.0 && s.len() > 1 {
            prop_assert!(l.iter().all(|&x| x > 0.0 && x < 1.0));
        }
    }

    #[test]
    fn pca_without_interior_root_reports_failure(s in 0.05f64..2.0, excess in 1.01f64..3.0) {
        let err = pca_lambda_solve(&[s, s], excess * s).unwrap_err();
        prop_assert!(matches!(err, gaugelab::Error::NoConvergence(_)));
    }

    #[test]
    fn discrete_orbit_matches_enumeration(pattern in prop::collection::vec(0u8..3, 1..6)) {
        let m = pattern.len();
        let w1 = DMatrix::from_fn(m, 2, |i, j| pattern[i] as f64 + j as f64);
        let w2 = DMatrix::from_fn(1, m, |_, i| 2.0 * pattern[i] as f64);
        let o = discrete_orbit_size(&w1, &w2, 1e-12).unwrap();
        prop_assert_eq!(o.orbit_size as usize, brute_orbit(&w1, &w2));
        prop_assert_eq!(o.orbit_size * o.stabilizer_size, (1..=m as u128).product::<u128>());
    }
}

//! Acceptance criteria shared by the `verify` command and the test suite.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng as _;

use super::{find, run_experiment};
use crate::error::{Error, Result};
use crate::models::checks::{check_point, fd_check, random_point};
use crate::models::{build_model, Model, ModelKind, Params};
use crate::reductions::{
    balanced_matrix, balanced_scalar, block_balance, cp_balance, deep_conv_balance, discrete_orbit_size,
    pca_lambda_residual, pca_lambda_solve, tt_balance,
};
use crate::rng::{normal, normal_vec, stream, Rng};
use crate::symmetry::constraint_gram;

/// Total budget for the whole suite, in seconds.
pub const SUITE_BUDGET_S: f64 = 600.0;

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionResult {
    pub id: u32,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        format!(
            "[{}] {:>2} {:<28} {} ({:.1}s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.seconds
        )
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Criterion {
    pub id: u32,
    pub name: &'static str,
    /// Experiment whose run the criterion checks, if any.
    pub experiment: Option<&'static str>,
    /// Runtime limit for that run, in seconds.
    budget_s: Option<f64>,
}

pub const CRITERIA: [Criterion; 17] = [
    Criterion { id: 1, name: "radial gauge law", experiment: Some("radial"), budget_s: Some(60.0) },
    Criterion { id: 2, name: "gram relation", experiment: None, budget_s: None },
    Criterion { id: 3, name: "gradient correctness", experiment: None, budget_s: None },
    Criterion { id: 4, name: "invariance and orthogonality", experiment: None, budget_s: None },
    Criterion { id: 5, name: "rank-2 completion", experiment: Some("rank2_completion"), budget_s: Some(180.0) },
    Criterion { id: 6, name: "attention balancing", experiment: Some("attention_ts"), budget_s: None },
    Criterion { id: 7, name: "relu balance", experiment: Some("relu_balance"), budget_s: None },
    Criterion { id: 8, name: "l1 inverse design", experiment: Some("l1_hadamard"), budget_s: None },
    Criterion { id: 9, name: "group lasso", experiment: Some("group_lasso"), budget_s: None },
    Criterion { id: 10, name: "fourier sparsity", experiment: Some("fourier_sparse"), budget_s: None },
    Criterion { id: 11, name: "tv inverse design", experiment: Some("tv_recon"), budget_s: None },
    Criterion { id: 12, name: "multichannel rank", experiment: Some("multichannel"), budget_s: None },
    Criterion { id: 13, name: "oracle equivalences", experiment: None, budget_s: None },
    Criterion { id: 14, name: "tt balancing", experiment: None, budget_s: None },
    Criterion { id: 15, name: "pca stationarity", experiment: None, budget_s: None },
    Criterion { id: 16, name: "discrete orbit counting", experiment: None, budget_s: None },
    Criterion { id: 17, name: "suite runtime", experiment: None, budget_s: None },
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Selector {
    All,
    Experiment(String),
}

/// Runs the selected criteria serially. Criterion 17 is the wall time of the others.
pub fn verify(selector: &Selector, tol_scale: f64) -> Result<Vec<CriterionResult>> {
    if !(tol_scale > 0.0) {
        return Err(Error::InvalidArgument("tol_scale must be positive".into()));
    }
    let chosen: Vec<&Criterion> = match selector {
        Selector::All => CRITERIA.iter().collect(),
        Selector::Experiment(name) => {
            find(name)?;
            CRITERIA.iter().filter(|c| c.experiment == Some(name.as_str())).collect()
        }
    };
    let start = Instant::now();
    let mut out = Vec::new();
    for c in chosen {
        if c.id == 17 {
            let total = start.elapsed().as_secs_f64();
            out.push(CriterionResult {
                id: 17,
                name: c.name,
                passed: total < SUITE_BUDGET_S * tol_scale,
                detail: format!("criteria 1-16 took {total:.1}s, budget {:.0}s", SUITE_BUDGET_S * tol_scale),
                seconds: total,
            });
        } else {
            let t = Instant::now();
            out.push(run_criterion(c.id, tol_scale).unwrap_or_else(|e| CriterionResult {
                id: c.id,
                name: c.name,
                passed: false,
                detail: format!("error: {e}"),
                seconds: t.elapsed().as_secs_f64(),
            }));
        }
    }
    Ok(out)
}

pub fn run_criterion(id: u32, tol_scale: f64) -> Result<CriterionResult> {
    let c = CRITERIA
        .iter()
        .find(|c| c.id == id && id != 17)
        .ok_or_else(|| Error::InvalidArgument(format!("no standalone criterion {id}")))?;
    let start = Instant::now();
    let (passed, detail) = match c.experiment {
        Some(name) => experiment_criterion(name, c.budget_s, tol_scale)?,
        None => {
            let (ok, detail) = match id {
                2 => gram_relation(tol_scale)?,
                3 => gradient_correctness(tol_scale)?,
                4 => invariance_orthogonality(tol_scale)?,
                13 => oracle_equivalences(tol_scale)?,
                14 => tt_balancing(tol_scale)?,
                15 => pca_stationarity(tol_scale)?,
                16 => discrete_orbits()?,
                _ => unreachable!("criterion table and dispatch disagree"),
            };
            (ok, detail)
        }
    };
    Ok(CriterionResult { id, name: c.name, passed, detail, seconds: start.elapsed().as_secs_f64() })
}

fn experiment_criterion(name: &str, budget: Option<f64>, tol_scale: f64) -> Result<(bool, String)> {
    let report = run_experiment(&find(name)?.default_config())?;
    let mut passed = report.passed_at(tol_scale);
    let mut parts: Vec<String> = report
        .comparisons
        .iter()
        .map(|c| format!("{}{}", if c.evaluate(tol_scale) { "" } else { "!" }, c.describe()))
        .collect();
    if let Some(f) = &report.failure {
        parts.push(format!("run failed: {f}"));
    }
    if let Some(b) = budget {
        let ok = report.wall_clock_s < b * tol_scale;
        passed &= ok;
        parts.push(format!("{}runtime {:.1}s < {:.0}s", if ok { "" } else { "!" }, report.wall_clock_s, b * tol_scale));
    }
    Ok((passed, parts.join("; ")))
}

fn small(kind: ModelKind) -> Params {
    match kind {
        ModelKind::AttentionTs => {
            Params::new().with("seq_len", 4).with("d_model", 6).with("d_head", 3).with("n_train", 12)
        }
        ModelKind::Multichannel => Params::new().with("d", 8).with("c", 5).with("inner", 4).with("n_train", 30),
        _ => Params::new(),
    }
}

/// Every catalog model and variant, at a size suited to exhaustive checks.
pub fn catalog() -> Result<Vec<(String, Box<dyn Model>)>> {
    let mut out = Vec::new();
    for kind in ModelKind::ALL {
        let variants: &[&str] = match kind {
            ModelKind::FourierSparse => &["naive", "pq"],
            ModelKind::TvRecon => &["naive", "biased"],
            ModelKind::L1Hadamard | ModelKind::BlockGroup => &["vanilla", "factorized"],
            ModelKind::Multichannel => &["naive", "scalar", "matrix"],
            _ => &[""],
        };
        for v in variants {
            let mut p = small(kind);
            if !v.is_empty() {
                p.set("variant", *v);
            }
            let label = if v.is_empty() { kind.to_string() } else { format!("{kind}/{v}") };
            out.push((label, build_model(kind, &p, 17)?.0));
        }
    }
    Ok(out)
}

fn gram_relation(tol_scale: f64) -> Result<(bool, String)> {
    let models: Vec<(ModelKind, Params)> = vec![
        (ModelKind::Radial, Params::new().with("d", 2)),
        (ModelKind::L1Hadamard, Params::new()),
        (ModelKind::FourierSparse, Params::new()),
        (ModelKind::Multichannel, small(ModelKind::Multichannel)),
        (ModelKind::Rank2Completion, Params::new()),
        (ModelKind::AttentionTs, small(ModelKind::AttentionTs)),
    ];
    let total = 100;
    let mut worst = 0.0_f64;
    let mut count = 0;
    for (i, (kind, p)) in models.iter().enumerate() {
        let (model, _) = build_model(*kind, p, 3)?;
        let (gens, gauge) = model.gauge().ok_or_else(|| Error::Unsupported(format!("{kind} has no gauge")))?;
        let share = total / models.len() + usize::from(i < total % models.len());
        for s in 0..share {
            let theta = random_point(model.as_ref(), 1000 + s as u64, 0.5);
            let cg = constraint_gram(gens.as_ref(), &gauge, &theta)?;
            worst = worst.max(cg.discrepancy.unwrap_or(f64::INFINITY));
            count += 1;
        }
    }
    let bound = 1e-8 * tol_scale;
    Ok((worst < bound, format!("{count} points over {} models, worst relative gap {worst:.2e} < {bound:.0e}", models.len())))
}

fn gradient_correctness(tol_scale: f64) -> Result<(bool, String)> {
    let bound = 1e-5 * tol_scale;
    let mut worst = (0.0_f64, String::new());
    let cat = catalog()?;
    for (label, model) in &cat {
        for s in 0..10 {
            let e = fd_check(model.as_ref(), &random_point(model.as_ref(), s, 0.3));
            if e > worst.0 {
                worst = (e, label.clone());
            }
        }
    }
    Ok((worst.0 < bound, format!("{} models x 10 points, worst {:.2e} ({}) < {bound:.0e}", cat.len(), worst.0, worst.1)))
}

fn invariance_orthogonality(tol_scale: f64) -> Result<(bool, String)> {
    let (ib, ob) = (1e-10 * tol_scale, 1e-8 * tol_scale);
    let (mut inv, mut orth) = (0.0_f64, 0.0_f64);
    let cat = catalog()?;
    for (_, model) in &cat {
        for s in 0..20 {
            let c = check_point(model.as_ref(), &random_point(model.as_ref(), 100 + s, 0.3), 0.3)?;
            inv = inv.max(c.invariance);
            orth = orth.max(c.orthogonality);
        }
    }
    Ok((
        inv < ib && orth < ob,
        format!("{} models x 20 points, invariance {inv:.2e} < {ib:.0e}, orthogonality {orth:.2e} < {ob:.0e}", cat.len()),
    ))
}

fn random_matrix(rng: &mut Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| normal(rng))
}

/// Random invertible matrix with condition number at most `cond`.
fn conditioned(rng: &mut Rng, n: usize, cond: f64) -> DMatrix<f64> {
    let q1 = random_matrix(rng, n, n).qr().q();
    let q2 = random_matrix(rng, n, n).qr().q();
    let s: Vec<f64> = (0..n).map(|_| cond.powf(rng.random::<f64>())).collect();
    let lo = s.iter().copied().fold(f64::INFINITY, f64::min);
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(n, s.iter().map(|x| x / lo)));
    q1 * d * q2
}

fn grid_min(lo: f64, hi: f64, step: f64, f: impl Fn(f64) -> f64) -> (f64, f64) {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|i| lo + i as f64 * step).map(|x| (x, f(x))).fold((f64::NAN, f64::INFINITY), |b, p| if p.1 < b.1 { p } else { b })
}

fn oracle_equivalences(tol_scale: f64) -> Result<(bool, String)> {
    let mut rng = stream(13, 0);
    // (check, worst value, bound)
    let mut checks: Vec<(&str, f64, f64)> = Vec::new();

    let mut worst = 0.0_f64;
    for z in [0.5, 1.0, 4.0] {
        let (_, best) = grid_min(-5.0, 5.0, 1e-3, |u| if u == 0.0 { f64::INFINITY } else { u * u + (z / u).powi(2) });
        worst = worst.max((best - balanced_scalar(z).2).abs());
    }
    checks.push(("scalar grid", worst, 1e-6));

    let z = random_matrix(&mut rng, 3, 2);
    let bal = balanced_matrix(&z, 2)?;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..2000 {
        let r = conditioned(&mut rng, 2, 1e2);
        let rinv_t = r.clone().try_inverse().expect("well conditioned").transpose();
        let cost = (&bal.u_star * &r).norm_squared() + (&bal.v_star * rinv_t).norm_squared();
        worst = worst.max(bal.cost - cost);
    }
    checks.push(("matrix orbit search", worst, 1e-6));
    let mut worst = 0.0_f64;
    for _ in 0..100 {
        let (m, n) = (rng.random_range(1..=8), rng.random_range(1..=6));
        let k = rng.random_range(1..=m.min(n).min(4));
        let z = random_matrix(&mut rng, m, k) * random_matrix(&mut rng, k, n);
        let b = balanced_matrix(&z, k)?;
        let gram_gap = (b.u_star.transpose() * &b.u_star - b.v_star.transpose() * &b.v_star).norm();
        let cost_gap = (b.cost - 2.0 * b.nuclear_norm).abs() / b.nuclear_norm;
        worst = worst.max(gram_gap).max(cost_gap);
    }
    checks.push(("matrix balance", worst, 1e-10));

    let target = 3.0 * cp_balance(27.0, 3)?.squared_norm.powi(2);
    let mut worst = 0.0_f64;
    for _ in 0..50 {
        let (a, b) = minimise_cp(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let (x, y) = (a.exp(), b.exp());
        let zc = 27.0 / (x * y);
        worst = worst.max((x * y + x * zc + y * zc - target).abs());
    }
    checks.push(("cp starts", worst, 1e-6));

    let (c, l) = (2.0_f64, 3i32);
    let big_c = c * c;
    let t = deep_conv_balance(c, l as usize, true)?;
    let f = |t: f64| t.powi(l) + big_c * f64::from(l) / t;
    let (tg, fg) = grid_min(1e-4, 10.0, 1e-4, f);
    checks.push(("deep conv grid value", (fg - f(t.squared)).abs(), 1e-6));
    checks.push(("deep conv grid argmin", (tg - t.squared).abs(), 1e-3));
    let mut worst = 0.0_f64;
    for _ in 0..20 {
        let c = rng.random_range(0.1..10.0);
        let l = rng.random_range(1..6);
        let t = deep_conv_balance(c, l as usize, true)?;
        worst = worst.max((t.squared.powi(l + 1) - c * c).abs() / (c * c));
    }
    checks.push(("deep conv power", worst, 1e-12));

    let mut worst = 0.0_f64;
    for w in [vec![1.0, 0.0], vec![3.0, 4.0]] {
        let n2: f64 = w.iter().map(|x| x * x).sum();
        let (_, best) = grid_min(1e-4, 10.0, 1e-4, |s| s * s + n2 / (s * s));
        worst = worst.max((best - block_balance(&w).value).abs());
    }
    checks.push(("block grid", worst, 1e-6));

    let passed = checks.iter().all(|(_, v, b)| *v < b * tol_scale);
    let detail = checks.iter().map(|(n, v, b)| format!("{n} {v:.1e}<{:.0e}", b * tol_scale)).collect::<Vec<_>>().join(", ");
    Ok((passed, detail))
}

/// Gradient descent on `e^{a+b} + 27 e^{-a} + 27 e^{-b}`, the CP objective with `z = 27 / (x y)`.
fn minimise_cp(mut a: f64, mut b: f64) -> (f64, f64) {
    let f = |a: f64, b: f64| (a + b).exp() + 27.0 * (-a).exp() + 27.0 * (-b).exp();
    for _ in 0..10_000 {
        let ga = (a + b).exp() - 27.0 * (-a).exp();
        let gb = (a + b).exp() - 27.0 * (-b).exp();
        if ga.hypot(gb) < 1e-12 {
            break;
        }
        let haa = (a + b).exp() + 27.0 * (-a).exp();
        let hbb = (a + b).exp() + 27.0 * (-b).exp();
        let hab = (a + b).exp();
        let det = haa * hbb - hab * hab;
        let (mut da, mut db) = if det > 0.0 && haa > 0.0 {
            ((hbb * ga - hab * gb) / det, (haa * gb - hab * ga) / det)
        } else {
            (ga, gb)
        };
        let f0 = f(a, b);
        while f(a - da, b - db) > f0 && da.hypot(db) > 1e-16 {
            da *= 0.5;
            db *= 0.5;
        }
        a -= da;
        b -= db;
    }
    (a, b)
}

fn tt_balancing(tol_scale: f64) -> Result<(bool, String)> {
    let mut rng = stream(14, 0);
    let (mut res, mut inv) = (0.0_f64, 0.0_f64);
    for _ in 0..50 {
        let u1 = random_matrix(&mut rng, 6, 2);
        let u2 = random_matrix(&mut rng, 2, 12);
        let b = tt_balance(&u1, &u2)?;
        let a_inv = b.a.clone().try_inverse().ok_or_else(|| Error::InvalidArgument("singular".into()))?;
        let before = &u1 * &u2;
        let after = (&u1 * &b.a) * (a_inv * &u2);
        res = res.max(b.residual);
        inv = inv.max((after - &before).norm() / before.norm());
    }
    let (rb, ib) = (1e-10 * tol_scale, 1e-12 * tol_scale);
    Ok((res < rb && inv < ib, format!("50 core pairs, residual {res:.2e} < {rb:.0e}, tensor change {inv:.2e} < {ib:.0e}")))
}

fn pca_stationarity(tol_scale: f64) -> Result<(bool, String)> {
    let mut rng = stream(15, 0);
    let bound = 1e-10 * tol_scale;
    let (mut worst, mut ones, mut interior) = (0.0_f64, true, true);
    for i in 0..200 {
        let r = rng.random_range(1..=6);
        let mut s: Vec<f64> = (0..r).map(|_| rng.random_range(0.05..5.0)).collect();
        if i % 4 == 3 && r > 1 {
            s[rng.random_range(0..r)] = 0.0;
        }
        let smin = s.iter().copied().filter(|&x| x > 0.0).fold(f64::INFINITY, f64::min);
        let kappa = if i % 5 == 0 { 0.0 } else { rng.random_range(0.01..1.0) * smin / (2 * r) as f64 };
        let l = pca_lambda_solve(&s, kappa)?;
        worst = worst.max(pca_lambda_residual(&s, kappa, &l));
        for (si, li) in s.iter().zip(&l) {
            if kappa == 0.0 && *si > 0.0 {
                ones &= *li == 1.0;
            }
            if kappa > 0.0 && *si > 0.0 && r > 1 {
                interior &= *li > 0.0 && *li < 1.0;
            }
        }
    }
    Ok((
        worst < bound && ones && interior,
        format!("200 systems, residual {worst:.2e} < {bound:.0e}, kappa=0 exact ones {ones}, interior in (0,1) {interior}"),
    ))
}

fn factorial(n: usize) -> u128 {
    (1..=n as u128).product()
}

fn permutations(m: usize) -> Vec<Vec<usize>> {
    if m == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(m - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, m - 1);
            out.push(q);
        }
    }
    out
}

fn discrete_orbits() -> Result<(bool, String)> {
    let mut rng = stream(16, 0);
    let (mut cases, mut enumerated, mut ok) = (0, 0, true);
    for _ in 0..200 {
        let m = rng.random_range(1..=8);
        let distinct = rng.random_range(1..=m);
        let protos: Vec<Vec<f64>> = (0..distinct).map(|_| normal_vec(&mut rng, 5, 1.0)).collect();
        let mut assign: Vec<usize> = (0..m).map(|i| if i < distinct { i } else { rng.random_range(0..distinct) }).collect();
        assign.shuffle(&mut rng);
        let w1 = DMatrix::from_fn(m, 3, |i, j| protos[assign[i]][j]);
        let w2 = DMatrix::from_fn(2, m, |i, j| protos[assign[j]][3 + i]);
        let o = discrete_orbit_size(&w1, &w2, 1e-12)?;
        ok &= o.orbit_size * o.stabilizer_size == factorial(m);
        if m <= 5 {
            let perms = permutations(m);
            let mut seen: Vec<Vec<usize>> = perms.iter().map(|p| p.iter().map(|&i| assign[i]).collect()).collect();
            let stab = seen.iter().filter(|s| **s == assign).count() as u128;
            seen.sort();
            seen.dedup();
            ok &= seen.len() as u128 == o.orbit_size && stab == o.stabilizer_size;
            enumerated += 1;
        }
        cases += 1;
    }
    Ok((ok, format!("{cases} patterns (m <= 8), {enumerated} enumerated exhaustively, orbit x stabilizer = m! {ok}")))
}

/// Fixed-width table of results.
pub fn format_table(results: &[CriterionResult]) -> String {
    let mut s: String = results.iter().map(|r| r.line() + "\n").collect();
    let failed = results.iter().filter(|r| !r.passed).count();
    s.push_str(&format!("{} passed, {failed} failed\n", results.len() - failed));
    s
}

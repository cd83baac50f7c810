use std::collections::BTreeMap;

use super::{Comparison, Experiment, ExperimentConfig, Outcome, Relation, Series};
use crate::dynamics::{simulate_trajectory, DynamicsConfig, Trajectory};
use crate::error::{Error, Result};
use crate::models::{make_dataset, model_from_dataset, Batch, Dataset, Model, Params};
use crate::reductions::{balanced_matrix, balanced_scalar, block_balance, homogeneity_balance_ratio};
use crate::stats::{self, empirical_density, ks_distance, radial_theory_density, DensityCurve, Histogram};

type Metrics = BTreeMap<String, f64>;

struct VariantRun {
    label: &'static str,
    model: Box<dyn Model>,
    traj: Trajectory,
}

fn model_params(exp: &Experiment, config: &ExperimentConfig) -> Params {
    let mut p = config.model_params.clone();
    for k in exp.extra_keys {
        p.0.remove(*k);
    }
    p
}

pub(super) fn execute(exp: &Experiment, config: &ExperimentConfig, dynamics: &DynamicsConfig) -> Result<Outcome> {
    if exp.name == "radial" {
        return radial(exp, config, dynamics);
    }
    let params = model_params(exp, config);
    let ds = make_dataset(exp.kind, &params, config.seed)?;
    let mut runs = Vec::new();
    for (i, v) in exp.variants.iter().enumerate() {
        let mut p = params.clone();
        if let Some(name) = v.variant {
            p.set("variant", name);
        }
        let model = model_from_dataset(&ds, &p)?;
        let traj = simulate_trajectory(model.as_ref(), dynamics, i as u64, model.init(), exp.observables)?;
        runs.push(VariantRun { label: v.label, model, traj });
    }
    let single = runs.len() == 1;
    let name = |label: &str, m: &str| if single { m.to_string() } else { format!("{label}_{m}") };
    let mut metrics = Metrics::new();
    let mut series = Series::new(runs[0].traj.step_indices.clone());
    for r in &runs {
        let model = r.model.as_ref();
        let init = model.init();
        let fin = &r.traj.final_state;
        metrics.insert(name(r.label, "loss"), model.loss(fin, Batch::Full));
        metrics.insert(name(r.label, "loss_init"), model.loss(&init, Batch::Full));
        for o in exp.observables {
            metrics.insert(name(r.label, o), model.observable(o, fin).unwrap_or(f64::NAN));
            metrics.insert(name(r.label, &format!("{o}_init")), model.observable(o, &init).unwrap_or(f64::NAN));
        }
        for (k, v) in &r.traj.observables {
            let col = if k == "loss" && r.label == runs[0].label { "loss".to_string() } else { name(r.label, k) };
            series.insert(col, v.clone())?;
        }
    }
    let last = runs.last().expect("at least one variant");
    let samples = snapshot_series(&last.traj)?;
    let mut out = Outcome {
        metrics,
        targets: Metrics::new(),
        reference: Metrics::new(),
        comparisons: Vec::new(),
        series,
        samples: Some(samples),
        extra_csv: Vec::new(),
    };
    finish(exp.name, &ds, &runs, &mut out)?;
    Ok(out)
}

fn snapshot_series(traj: &Trajectory) -> Result<Series> {
    let mut s = Series::new(traj.step_indices.clone());
    let dim = traj.final_state.len();
    let width = dim.to_string().len();
    for i in 0..dim {
        s.insert(format!("theta_{i:0width$}"), traj.snapshots.iter().map(|t| t[i]).collect())?;
    }
    Ok(s)
}

fn ratio(m: &mut Metrics, name: &str, num: &str, den: &str) {
    let v = m[num] / m[den];
    m.insert(name.to_string(), v);
}

fn finish(name: &str, ds: &Dataset, runs: &[VariantRun], out: &mut Outcome) -> Result<()> {
    let m = &mut out.metrics;
    let t = &mut out.targets;
    let r = &mut out.reference;
    let mut cmp = Vec::new();
    match name {
        "fourier_sparse" => {
            t.insert("l1_truth".into(), l1_from_balance(&ds.array("w_true")?.data));
            ratio(m, "l1_ratio", "pq_l1", "naive_l1");
            ratio(m, "test_mse_ratio", "pq_test_mse", "naive_test_mse");
            r.extend([("pq_l1".into(), 4.89), ("naive_l1".into(), 10.72)]);
            cmp.push(Comparison::new(m, "l1_ratio", Relation::Lt, 0.6));
            cmp.push(Comparison::new(m, "test_mse_ratio", Relation::Lt, 1.0));
        }
        "tv_recon" => {
            t.insert("tv_truth".into(), stats::total_variation(&ds.array("w_true")?.data));
            ratio(m, "tv_ratio", "vanilla_tv", "biased_tv");
            r.insert("tv_ratio".into(), 6.0);
            cmp.push(Comparison::new(m, "tv_ratio", Relation::Ge, 4.0));
            cmp.push(Comparison::new(m, "vanilla_loss", Relation::Lt, 1e-2));
            cmp.push(Comparison::new(m, "biased_loss", Relation::Lt, 1e-2));
        }
        "multichannel" => {
            let rank = ds.params.usize("r", 2)? as f64;
            t.insert("true_rank".into(), rank);
            let best_other = m["naive_test_mse"].min(m["scalar_test_mse"]);
            m.insert("test_mse_ratio".into(), m["matrix_test_mse"] / best_other);
            cmp.push(Comparison::new(m, "matrix_effective_rank", Relation::Eq, rank));
            cmp.push(Comparison::new(m, "naive_effective_rank", Relation::Gt, rank));
            cmp.push(Comparison::new(m, "scalar_effective_rank", Relation::Gt, rank));
            cmp.push(Comparison::new(m, "test_mse_ratio", Relation::Lt, 1.0));
        }
        "rank2_completion" => {
            let star = ds.array("m_star")?.to_matrix();
            let rank = ds.array("sigma_star")?.data.len();
            let bal = balanced_matrix(&star, rank)?;
            for i in 0..rank {
                let cost = bal.u_star.column(i).norm_squared() + bal.v_star.column(i).norm_squared();
                t.insert(format!("energy_{}", i + 1), cost.ln());
            }
            r.insert("loss".into(), 2.55e-5);
            for i in 0..rank {
                let key = format!("energy_{}", i + 1);
                cmp.push(Comparison::within(m, &key, t[&key], 0.05));
            }
            cmp.push(Comparison::new(m, "loss", Relation::Lt, 1e-4));
        }
        "attention_ts" => {
            ratio(m, "balance_ratio_reduction", "balance_ratio_init", "balance_ratio");
            r.insert("loss".into(), 1.687e-7);
            cmp.push(Comparison::new(m, "balance_ratio", Relation::Lt, 0.1));
            cmp.push(Comparison::new(m, "balance_ratio_reduction", Relation::Ge, 5.0));
            cmp.push(Comparison::new(m, "loss", Relation::Lt, 1e-5));
        }
        "relu_balance" => {
            let target = homogeneity_balance_ratio(1.0)?;
            t.insert("median_rho_active".into(), target);
            r.insert("loss".into(), 1.2e-2);
            cmp.push(Comparison::within(m, "median_rho_active", target, 0.1));
            cmp.push(Comparison::new(m, "loss", Relation::Le, 2e-2));
        }
        "l1_hadamard" => {
            let truth = l1_from_balance(&ds.array("w_true")?.data);
            t.insert("l1_truth".into(), truth);
            m.insert("l1_truth".into(), truth);
            m.insert("factorized_l1_error".into(), (m["factorized_l1"] - truth).abs());
            m.insert("vanilla_l1_error".into(), (m["vanilla_l1"] - truth).abs());
            ratio(m, "l1_error_ratio", "factorized_l1_error", "vanilla_l1_error");
            ratio(m, "l1_ratio", "factorized_l1", "vanilla_l1");
            ratio(m, "test_mse_ratio", "factorized_test_mse", "vanilla_test_mse");
            r.extend([("factorized_l1".into(), 53.0), ("vanilla_l1".into(), 97.7), ("l1_truth".into(), 50.3)]);
            cmp.push(Comparison::new(m, "l1_error_ratio", Relation::Lt, 1.0 / 1.5));
            cmp.push(Comparison::new(m, "l1_ratio", Relation::Lt, 0.65));
            cmp.push(Comparison::new(m, "test_mse_ratio", Relation::Lt, 1.0));
        }
        "group_lasso" => {
            let w = &ds.array("w_true")?.data;
            let group_of: Vec<usize> = ds.array("group_of")?.data.iter().map(|&g| g as usize).collect();
            let groups = group_of.iter().max().map_or(0, |g| g + 1);
            let mut members = vec![Vec::new(); groups];
            for (i, &g) in group_of.iter().enumerate() {
                members[g].push(w[i]);
            }
            let active = members.iter().filter(|wg| !block_balance(wg).boundary).count();
            t.insert("active_fraction_truth".into(), active as f64 / groups as f64);
            r.extend([("factorized_active_fraction".into(), 0.55), ("vanilla_active_fraction".into(), 1.0)]);
            cmp.push(Comparison::new(m, "factorized_active_fraction", Relation::Le, 0.60));
            cmp.push(Comparison::new(m, "vanilla_active_fraction", Relation::Ge, 0.95));
        }
        other => return Err(Error::UnknownExperiment(other.to_string())),
    }
    debug_assert!(runs.iter().all(|r| r.traj.final_state.len() == r.model.param_dim()));
    out.comparisons = cmp;
    Ok(())
}

/// `|w|_1` as half the balanced factorisation cost summed over coordinates.
fn l1_from_balance(w: &[f64]) -> f64 {
    w.iter().map(|&z| 0.5 * balanced_scalar(z).2).sum()
}

fn curve_series(c: &DensityCurve) -> Result<Series> {
    let mut s = Series::new((0..c.grid.len()).collect());
    s.insert("r", c.grid.clone())?;
    s.insert("density", c.values.clone())?;
    Ok(s)
}

fn histogram_series(h: &Histogram) -> Result<Series> {
    let mut s = Series::new((0..h.counts.len()).collect());
    s.insert("r", h.centers())?;
    s.insert("count", h.counts.iter().map(|&c| c as f64).collect())?;
    s.insert("density", h.density.clone())?;
    Ok(s)
}

fn radial(exp: &Experiment, config: &ExperimentConfig, dynamics: &DynamicsConfig) -> Result<Outcome> {
    let walkers = config.model_params.usize("walkers", 8)?;
    let bins = config.model_params.usize("bins", stats::DEFAULT_BINS)?;
    if walkers == 0 {
        return Err(Error::Config("walkers must be at least 1".into()));
    }
    let params = model_params(exp, config);
    let ds = make_dataset(exp.kind, &params, config.seed)?;
    let model = model_from_dataset(&ds, &params)?;
    let d = params.usize("d", 10)?;
    let mut samples = Vec::new();
    let mut first = None;
    for w in 0..walkers {
        let traj = simulate_trajectory(model.as_ref(), dynamics, w as u64, model.init(), &["r"])?;
        samples.extend_from_slice(traj.series("r").expect("r recorded"));
        if first.is_none() {
            first = Some(traj);
        }
    }
    let traj = first.expect("at least one walker");
    let mut series = Series::new(traj.step_indices.clone());
    for (k, v) in &traj.observables {
        series.insert(k.clone(), v.clone())?;
    }
    let hist = empirical_density(&samples, bins)?;
    let beta_eff = dynamics.beta / dynamics.noise_scale.powi(2).max(f64::MIN_POSITIVE);
    let top = samples.iter().copied().fold(0.0, f64::max).max(1.0 + 10.0 / beta_eff.sqrt()) * 1.5;
    let n = 8001;
    let grid: Vec<f64> = (1..=n).map(|i| top * i as f64 / n as f64).collect();
    let gauge = radial_theory_density(d, beta_eff, &grid, true)?;
    let naive = radial_theory_density(d, beta_eff, &grid, false)?;
    let ks_gauge = ks_distance(&samples, &gauge)?;
    let ks_naive = ks_distance(&samples, &naive)?;
    let mut metrics = Metrics::new();
    metrics.insert("ks_gauge".into(), ks_gauge);
    metrics.insert("ks_naive".into(), ks_naive);
    metrics.insert("ks_ratio".into(), ks_naive / ks_gauge);
    metrics.insert("samples".into(), samples.len() as f64);
    metrics.insert("mean_r".into(), samples.iter().sum::<f64>() / samples.len() as f64);
    metrics.insert("empirical_mode_r".into(), hist.centers()[argmax(&hist.density)]);
    let mut targets = Metrics::new();
    let temp = (d as f64 - 1.0) / beta_eff;
    targets.insert("gauge_mode_r".into(), 0.5 * (1.0 + (1.0 + 4.0 * temp).sqrt()));
    targets.insert("naive_mode_r".into(), 1.0);
    let comparisons = vec![
        Comparison::new(&metrics, "ks_gauge", Relation::Lt, 0.02),
        Comparison::new(&metrics, "ks_ratio", Relation::Gt, 5.0),
    ];
    let mut sample_series = Series::new((0..samples.len()).collect());
    sample_series.insert("r", samples)?;
    Ok(Outcome {
        metrics,
        targets,
        reference: Metrics::new(),
        comparisons,
        series,
        samples: Some(sample_series),
        extra_csv: vec![
            ("density_empirical.csv".into(), histogram_series(&hist)?),
            ("density_gauge.csv".into(), curve_series(&gauge)?),
            ("density_naive.csv".into(), curve_series(&naive)?),
        ],
    })
}

fn argmax(v: &[f64]) -> usize {
    v.iter().enumerate().fold(0, |best, (i, &x)| if x > v[best] { i } else { best })
}

//! Experiment registry, configuration, execution and reporting.

mod runs;
pub mod series;
pub mod verify;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use series::Series;

use crate::dynamics::{DynamicsConfig, NoiseMode};
use crate::error::{Error, Result};
use crate::models::{ModelKind, Params};

/// Overrides applied on top of an experiment's default dynamics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thinning: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_mode: Option<NoiseMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
}

impl DynamicsOverrides {
    fn full(c: &DynamicsConfig) -> Self {
        DynamicsOverrides {
            eta: Some(c.eta),
            beta: Some(c.beta),
            noise_scale: Some(c.noise_scale),
            total_steps: Some(c.total_steps),
            burn_in_fraction: Some(c.burn_in_fraction),
            thinning: Some(c.thinning),
            noise_mode: Some(c.noise_mode),
            batch_size: c.batch_size,
        }
    }

    pub fn apply(&self, base: &DynamicsConfig) -> DynamicsConfig {
        let mut c = base.clone();
        c.eta = self.eta.unwrap_or(c.eta);
        c.beta = self.beta.unwrap_or(c.beta);
        c.noise_scale = self.noise_scale.unwrap_or(c.noise_scale);
        c.total_steps = self.total_steps.unwrap_or(c.total_steps);
        c.burn_in_fraction = self.burn_in_fraction.unwrap_or(c.burn_in_fraction);
        c.thinning = self.thinning.unwrap_or(c.thinning);
        c.noise_mode = self.noise_mode.unwrap_or(c.noise_mode);
        c.batch_size = self.batch_size.or(c.batch_size);
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub dynamics: DynamicsOverrides,
    #[serde(default)]
    pub model_params: Params,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub emit_samples: bool,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// A model variant compared within one experiment.
#[derive(Debug, Clone, Copy)]
pub(crate) struct VariantSpec {
    pub label: &'static str,
    /// Value of the model's `variant` parameter, if it has one.
    pub variant: Option<&'static str>,
}

/// A registered experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub name: &'static str,
    pub figure: &'static str,
    pub description: &'static str,
    pub kind: ModelKind,
    pub(crate) dynamics: DynamicsConfig,
    pub(crate) params: Params,
    /// Experiment-level keys accepted in `model_params` next to the model's own.
    pub(crate) extra_keys: &'static [&'static str],
    pub(crate) variants: &'static [VariantSpec],
    pub(crate) observables: &'static [&'static str],
}

impl Experiment {
    pub fn default_config(&self) -> ExperimentConfig {
        ExperimentConfig {
            experiment: self.name.to_string(),
            seed: 0,
            dynamics: DynamicsOverrides::full(&self.dynamics),
            model_params: self.params.clone(),
            output_dir: None,
            emit_samples: false,
        }
    }

    pub fn default_dynamics(&self) -> &DynamicsConfig {
        &self.dynamics
    }

    pub fn variant_labels(&self) -> Vec<&'static str> {
        self.variants.iter().map(|v| v.label).collect()
    }
}

const fn single() -> &'static [VariantSpec] {
    &[VariantSpec { label: "model", variant: None }]
}

fn minibatch(eta: f64, batch: usize, steps: usize, thinning: usize) -> DynamicsConfig {
    DynamicsConfig { burn_in_fraction: 0.0, thinning, ..DynamicsConfig::minibatch(eta, batch, steps) }
}

/// The nine registered experiments, in stable order.
pub fn registry() -> Vec<Experiment> {
    vec![
        Experiment {
            name: "radial",
            figure: "Fig. 2",
            description: "Radial loss in d dimensions: stationary radius density against the gauge-corrected and naive laws",
            kind: ModelKind::Radial,
            dynamics: DynamicsConfig { thinning: 50, ..DynamicsConfig::langevin(1e-3, 10.0, 1.0, 800_000) },
            params: Params::new().with("d", 10).with("walkers", 8),
            extra_keys: &["walkers", "bins"],
            variants: single(),
            observables: &["r"],
        },
        Experiment {
            name: "fourier_sparse",
            figure: "Fig. 3",
            description: "Sparse cosine recovery: naive weights against the pq Hadamard factorisation",
            kind: ModelKind::FourierSparse,
            dynamics: minibatch(3e-3, 10, 100_000, 1000),
            params: Params::new(),
            extra_keys: &[],
            variants: &[
                VariantSpec { label: "naive", variant: Some("naive") },
                VariantSpec { label: "pq", variant: Some("pq") },
            ],
            observables: &["l1", "test_mse"],
        },
        Experiment {
            name: "tv_recon",
            figure: "Fig. 4",
            description: "Piecewise-constant signal recovery: vanilla weights against the biased cumulative factorisation",
            kind: ModelKind::TvRecon,
            dynamics: minibatch(1e-2, 10, 50_000, 500),
            params: Params::new(),
            extra_keys: &[],
            variants: &[
                VariantSpec { label: "vanilla", variant: Some("naive") },
                VariantSpec { label: "biased", variant: Some("biased") },
            ],
            observables: &["tv", "recon_mse"],
        },
        Experiment {
            name: "multichannel",
            figure: "Fig. 5",
            description: "Multichannel linear regression: naive, scalar-factorised and matrix-factorised weights",
            kind: ModelKind::Multichannel,
            dynamics: minibatch(5e-2, 20, 3000, 50),
            params: Params::new(),
            extra_keys: &[],
            variants: &[
                VariantSpec { label: "naive", variant: Some("naive") },
                VariantSpec { label: "scalar", variant: Some("scalar") },
                VariantSpec { label: "matrix", variant: Some("matrix") },
            ],
            observables: &["test_mse", "effective_rank", "nuclear"],
        },
        Experiment {
            name: "rank2_completion",
            figure: "Fig. 6",
            description: "Rank-2 matrix completion with U V^T: per-mode gauge energies against log(2 sigma_i)",
            kind: ModelKind::Rank2Completion,
            dynamics: minibatch(5e-2, 10, 200_000, 1000),
            params: Params::new(),
            extra_keys: &[],
            variants: single(),
            observables: &["energy_1", "energy_2", "full_error"],
        },
        Experiment {
            name: "attention_ts",
            figure: "Fig. 7",
            description: "Teacher-student softmax attention with extra Langevin noise: query/key column balance",
            kind: ModelKind::AttentionTs,
            dynamics: DynamicsConfig {
                noise_mode: NoiseMode::MinibatchPlusLangevin,
                noise_scale: 1e-4,
                beta: 1.0,
                ..minibatch(1.0, 32, 20_000, 200)
            },
            params: Params::new(),
            extra_keys: &[],
            variants: single(),
            observables: &["balance_ratio"],
        },
        Experiment {
            name: "relu_balance",
            figure: "Fig. 8",
            description: "Two-layer ReLU classifier: per-neuron balance ratio |w_j| / |v_j|",
            kind: ModelKind::Relu2,
            dynamics: minibatch(5e-2, 20, 20_000, 200),
            params: Params::new(),
            extra_keys: &[],
            variants: single(),
            observables: &["median_rho_active", "active_count"],
        },
        Experiment {
            name: "l1_hadamard",
            figure: "Fig. 9",
            description: "Sparse regression: vanilla weights against the u*v Hadamard factorisation",
            kind: ModelKind::L1Hadamard,
            dynamics: minibatch(3e-3, 10, 80_000, 1000),
            params: Params::new(),
            extra_keys: &[],
            variants: &[
                VariantSpec { label: "vanilla", variant: Some("vanilla") },
                VariantSpec { label: "factorized", variant: Some("factorized") },
            ],
            observables: &["l1", "test_mse"],
        },
        Experiment {
            name: "group_lasso",
            figure: "Fig. 10",
            description: "Group-sparse regression: vanilla weights against the shared block scaling",
            kind: ModelKind::BlockGroup,
            dynamics: minibatch(2e-3, 10, 50_000, 500),
            params: Params::new(),
            extra_keys: &[],
            variants: &[
                VariantSpec { label: "vanilla", variant: Some("vanilla") },
                VariantSpec { label: "factorized", variant: Some("factorized") },
            ],
            observables: &["active_fraction", "test_mse"],
        },
    ]
}

pub fn find(name: &str) -> Result<Experiment> {
    registry()
        .into_iter()
        .find(|e| e.name == name)
        .ok_or_else(|| Error::UnknownExperiment(name.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    /// `|value - target| <= tolerance * |target|`.
    WithinRel,
}

/// A pass/fail comparison of one reported metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub metric: String,
    pub relation: Relation,
    pub target: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    pub value: f64,
    pub passed: bool,
}

impl Comparison {
    pub(crate) fn new(metrics: &BTreeMap<String, f64>, metric: &str, relation: Relation, target: f64) -> Self {
        Self::build(metrics, metric, relation, target, None)
    }

    pub(crate) fn within(metrics: &BTreeMap<String, f64>, metric: &str, target: f64, tolerance: f64) -> Self {
        Self::build(metrics, metric, Relation::WithinRel, target, Some(tolerance))
    }

    fn build(metrics: &BTreeMap<String, f64>, metric: &str, relation: Relation, target: f64, tolerance: Option<f64>) -> Self {
        let value = metrics.get(metric).copied().unwrap_or(f64::NAN);
        let mut c = Comparison { metric: metric.to_string(), relation, target, tolerance, value, passed: false };
        c.passed = c.evaluate(1.0);
        c
    }

    /// Upper bounds and tolerances are multiplied by `tol_scale`, lower bounds divided.
    pub fn evaluate(&self, tol_scale: f64) -> bool {
        let v = self.value;
        match self.relation {
            Relation::Lt => v < self.target * tol_scale,
            Relation::Le => v <= self.target * tol_scale,
            Relation::Gt => v > self.target / tol_scale,
            Relation::Ge => v >= self.target / tol_scale,
            Relation::Eq => v == self.target,
            Relation::WithinRel => {
                (v - self.target).abs() <= self.tolerance.unwrap_or(0.0) * tol_scale * self.target.abs()
            }
        }
    }

    pub fn describe(&self) -> String {
        let op = match self.relation {
            Relation::Lt => "<",
            Relation::Le => "<=",
            Relation::Gt => ">",
            Relation::Ge => ">=",
            Relation::Eq => "==",
            Relation::WithinRel => "~",
        };
        match self.tolerance {
            Some(t) => format!("{} = {:.6} {op} {:.6} (rel tol {t})", self.metric, self.value, self.target),
            None => format!("{} = {:.6} {op} {:.6}", self.metric, self.value, self.target),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub experiment: String,
    pub figure: String,
    pub config: ExperimentConfig,
    pub dynamics: DynamicsConfig,
    pub metrics: BTreeMap<String, f64>,
    /// Predictions from closed-form reductions.
    pub targets: BTreeMap<String, f64>,
    /// Published reference values, for context only.
    pub reference: BTreeMap<String, f64>,
    pub comparisons: Vec<Comparison>,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub wall_clock_s: f64,
    pub artifacts: Vec<String>,
}

impl RunReport {
    pub fn passed_at(&self, tol_scale: f64) -> bool {
        self.failure.is_none() && self.comparisons.iter().all(|c| c.evaluate(tol_scale))
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }
}

/// Everything an experiment produces before artifacts are written.
pub(crate) struct Outcome {
    pub metrics: BTreeMap<String, f64>,
    pub targets: BTreeMap<String, f64>,
    pub reference: BTreeMap<String, f64>,
    pub comparisons: Vec<Comparison>,
    pub series: Series,
    pub samples: Option<Series>,
    pub extra_csv: Vec<(String, Series)>,
}

/// Runs one experiment and writes its artifacts when `output_dir` is set.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunReport> {
    let exp = find(&config.experiment)?;
    let mut allowed: Vec<&str> = exp.kind.keys().to_vec();
    allowed.extend_from_slice(exp.extra_keys);
    config.model_params.ensure_known(&allowed)?;
    if exp.variants.iter().any(|v| v.variant.is_some()) && config.model_params.contains("variant") {
        return Err(Error::Config(format!("'{}' selects model variants itself", exp.name)));
    }
    let mut dynamics = config.dynamics.apply(&exp.dynamics);
    dynamics.seed = config.seed;
    dynamics.validate()?;
    let start = Instant::now();
    let outcome = runs::execute(&exp, config, &dynamics);
    let elapsed = start.elapsed().as_secs_f64();
    let mut report = RunReport {
        experiment: exp.name.to_string(),
        figure: exp.figure.to_string(),
        config: config.clone(),
        dynamics,
        metrics: BTreeMap::new(),
        targets: BTreeMap::new(),
        reference: BTreeMap::new(),
        comparisons: Vec::new(),
        passed: false,
        failure: None,
        wall_clock_s: elapsed,
        artifacts: Vec::new(),
    };
    match outcome {
        Ok(o) => {
            report.passed = o.comparisons.iter().all(|c| c.passed);
            report.metrics = o.metrics;
            report.targets = o.targets;
            report.reference = o.reference;
            report.comparisons = o.comparisons;
            if let Some(dir) = &config.output_dir {
                report.artifacts = write_artifacts(dir, &o.series, o.samples.as_ref(), &o.extra_csv, config.emit_samples)?;
            }
        }
        Err(e @ (Error::Divergence { .. } | Error::NonFiniteGradient { .. })) => {
            report.failure = Some(e.to_string());
        }
        Err(e) => return Err(e),
    }
    if let Some(dir) = &config.output_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        report.artifacts.push("report.json".into());
        let path = dir.join("report.json");
        fs::write(&path, serde_json::to_string_pretty(&report)?).map_err(|e| Error::io(&path, e))?;
    }
    Ok(report)
}

fn write_artifacts(
    dir: &Path,
    series: &Series,
    samples: Option<&Series>,
    extra: &[(String, Series)],
    emit_samples: bool,
) -> Result<Vec<String>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = vec!["series.csv".to_string()];
    series.write_csv(&dir.join("series.csv"))?;
    if emit_samples {
        if let Some(s) = samples {
            s.write_csv(&dir.join("samples.csv"))?;
            files.push("samples.csv".into());
        }
    }
    for (name, s) in extra {
        s.write_csv(&dir.join(name))?;
        files.push(name.clone());
    }
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_experiments_with_stable_names() {
        let names: Vec<_> = registry().iter().map(|e| e.name).collect();
        assert_eq!(
            names,
            [
                "radial",
                "fourier_sparse",
                "tv_recon",
                "multichannel",
                "rank2_completion",
                "attention_ts",
                "relu_balance",
                "l1_hadamard",
                "group_lasso"
            ]
        );
        assert_eq!(find("radial").unwrap().default_config().dynamics.total_steps, Some(800_000));
        assert!(matches!(find("mnist"), Err(Error::UnknownExperiment(_))));
    }

    #[test]
    fn default_configs_roundtrip_and_validate() {
        for e in registry() {
            let cfg = e.default_config();
            let json = serde_json::to_string(&cfg).unwrap();
            assert_eq!(ExperimentConfig::from_json(&json).unwrap(), cfg);
            cfg.dynamics.apply(&e.dynamics).validate().unwrap();
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"experiment":"radial","sed":3}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"experiment":"radial","dynamics":{"etaa":1}}"#).is_err());
        let cfg = ExperimentConfig::from_json(r#"{"experiment":"radial","model_params":{"dd":3}}"#).unwrap();
        assert!(matches!(run_experiment(&cfg), Err(Error::Config(_))));
        let cfg = ExperimentConfig::from_json(r#"{"experiment":"l1_hadamard","model_params":{"variant":"vanilla"}}"#)
            .unwrap();
        assert!(matches!(run_experiment(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn comparison_scaling() {
        let m = BTreeMap::from([("x".to_string(), 0.5)]);
        let c = Comparison::new(&m, "x", Relation::Lt, 1.0);
        assert!(c.passed && c.evaluate(1.0) && !c.evaluate(0.1));
        let c = Comparison::new(&m, "x", Relation::Gt, 0.4);
        assert!(c.passed && !c.evaluate(0.5));
        let c = Comparison::within(&m, "x", 0.52, 0.05);
        assert!(c.passed && !c.evaluate(0.1));
        assert!(!Comparison::new(&m, "missing", Relation::Lt, 1.0).passed);
    }
}

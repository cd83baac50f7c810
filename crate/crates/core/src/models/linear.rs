//! Linear regression `y ~ x . w(theta)` under several reparameterisations.
//!
//! Covers the Fourier sparse-recovery, total-variation, Hadamard LASSO and
//! block group-LASSO setups.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::seq::{index, SliceRandom};
use rand::Rng as _;

use super::{parse_variant, Array2, Batch, Dataset, Model, ModelKind, NamedValues, Params, DATA_STREAM, INIT_STREAM};
use crate::error::{Error, Result};
use crate::rng::{normal, normal_vec, stream};
use crate::symmetry::{
    GaugeMap, GeneratorSet, NoGenerators, QuadraticGauge, ScalingGenerator, ScalingGenerators,
};

pub(super) const KEYS: &[&str] = &[
    "variant",
    "init_scale",
    "d",
    "n_train",
    "n_test",
    "noise_var",
    "nonzero",
    "signal_std",
    "jumps",
    "groups",
    "active_groups",
];

struct Defaults {
    d: usize,
    n_train: usize,
    n_test: usize,
    noise_var: f64,
}

fn defaults(kind: ModelKind) -> Defaults {
    match kind {
        ModelKind::FourierSparse => Defaults { d: 64, n_train: 30, n_test: 2000, noise_var: 0.01 },
        ModelKind::TvRecon => Defaults { d: 200, n_train: 60, n_test: 0, noise_var: 0.025 },
        _ => Defaults { d: 200, n_train: 80, n_test: 2000, noise_var: 0.0 },
    }
}

fn cosine_row(d: usize, t: f64) -> Vec<f64> {
    (0..d).map(|k| (2.0 * PI * k as f64 * t).cos()).collect()
}

pub(super) fn make_dataset(kind: ModelKind, params: &Params, seed: u64) -> Result<Dataset> {
    let def = defaults(kind);
    let d = params.usize("d", def.d)?;
    let n = params.usize("n_train", def.n_train)?;
    let n_test = params.usize("n_test", def.n_test)?;
    let noise_std = params.f64("noise_var", def.noise_var)?.max(0.0).sqrt();
    if d < 2 || n == 0 {
        return Err(Error::InvalidArgument("need d >= 2 and n_train >= 1".into()));
    }
    let mut rng = stream(seed, DATA_STREAM);
    let mut ds = Dataset::new(kind, seed, params.clone());
    let mut w = vec![0.0; d];
    let (x, x_test): (Vec<f64>, Vec<f64>) = match kind {
        ModelKind::FourierSparse => {
            let k = params.usize("nonzero", 3)?;
            if k >= d {
                return Err(Error::InvalidArgument("too many nonzero frequencies".into()));
            }
            for f in index::sample(&mut rng, d - 1, k) {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                w[f + 1] = sign * rng.random_range(1.0..2.0);
            }
            let x = (0..n).flat_map(|_| cosine_row(d, rng.random::<f64>())).collect();
            let grid = (0..n_test).flat_map(|i| cosine_row(d, i as f64 / (n_test.max(2) - 1) as f64)).collect();
            (x, grid)
        }
        ModelKind::TvRecon => {
            let jumps = params.usize("jumps", 3)?;
            if jumps >= d {
                return Err(Error::InvalidArgument("too many jumps".into()));
            }
            let mut at: Vec<usize> = index::sample(&mut rng, d - 1, jumps).into_iter().map(|j| j + 1).collect();
            at.sort_unstable();
            let mut levels: Vec<f64> = (0..=jumps).map(|_| rng.random_range(-2.0..2.0)).collect();
            for i in 1..levels.len() {
                while (levels[i] - levels[i - 1]).abs() < 0.25 {
                    levels[i] = rng.random_range(-2.0..2.0);
                }
            }
            let mut seg = 0;
            for (i, wi) in w.iter_mut().enumerate() {
                while seg < jumps && i >= at[seg] {
                    seg += 1;
                }
                *wi = levels[seg];
            }
            let x = normal_vec(&mut rng, n * d, (1.0 / n as f64).sqrt());
            (x, Vec::new())
        }
        ModelKind::L1Hadamard => {
            let k = params.usize("nonzero", d / 10)?;
            let std = params.f64("signal_std", 3.0)?;
            for i in index::sample(&mut rng, d, k.min(d)) {
                w[i] = std * normal(&mut rng);
            }
            (normal_vec(&mut rng, n * d, 1.0), normal_vec(&mut rng, n_test * d, 1.0))
        }
        ModelKind::BlockGroup => {
            let g = params.usize("groups", 40)?;
            let active = params.usize("active_groups", 5)?;
            let std = params.f64("signal_std", 3.0)?;
            if g == 0 || d % g != 0 || active > g {
                return Err(Error::InvalidArgument(format!("d={d} must split into {g} equal groups")));
            }
            let mut perm: Vec<usize> = (0..d).collect();
            perm.shuffle(&mut rng);
            let size = d / g;
            let mut group_of = vec![0.0; d];
            for (gi, chunk) in perm.chunks(size).enumerate() {
                for &i in chunk {
                    group_of[i] = gi as f64;
                }
            }
            for gi in index::sample(&mut rng, g, active) {
                for (i, wi) in w.iter_mut().enumerate() {
                    if group_of[i] as usize == gi {
                        *wi = std * normal(&mut rng);
                    }
                }
            }
            ds.insert("group_of", Array2::vector(group_of));
            (normal_vec(&mut rng, n * d, 1.0), normal_vec(&mut rng, n_test * d, 1.0))
        }
        other => return Err(Error::UnknownModelKind(other.to_string())),
    };
    let y: Vec<f64> = x.chunks(d).map(|row| dot(row, &w) + noise_std * normal(&mut rng)).collect();
    let y_test: Vec<f64> = x_test.chunks(d).map(|row| dot(row, &w)).collect();
    ds.insert("x", Array2::new(n, d, x));
    ds.insert("y", Array2::vector(y));
    ds.insert("x_test", Array2::new(y_test.len(), d, x_test));
    ds.insert("y_test", Array2::vector(y_test));
    ds.insert("w_true", Array2::vector(w));
    Ok(ds)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// How the effective weights `w` are parameterised.
#[derive(Debug, Clone, PartialEq)]
pub enum Reparam {
    /// `theta = w`.
    Direct,
    /// `theta = (p, q)`, `w = p * q`.
    Hadamard,
    /// `theta = (b, p, q)`, `w_0 = b`, `w_i = b + sum_{j<i} p_j q_j`.
    CumsumHadamard,
    /// `theta = (s, t)`, `w_i = s_{g(i)} t_i`.
    Block { group_of: Vec<usize>, groups: usize },
}

pub struct LinearModel {
    kind: ModelKind,
    reparam: Reparam,
    d: usize,
    x: Array2,
    y: Vec<f64>,
    x_test: Array2,
    y_test: Vec<f64>,
    w_true: Vec<f64>,
    layout: Option<(Vec<usize>, usize)>,
    init: Vec<f64>,
    gens: Arc<dyn GeneratorSet>,
}

impl LinearModel {
    pub fn from_dataset(ds: &Dataset, params: &Params) -> Result<Self> {
        let x = ds.array("x")?.clone();
        let d = x.cols;
        let variant = match ds.kind {
            ModelKind::FourierSparse => parse_variant(params, &["naive", "pq"], "pq")?,
            ModelKind::TvRecon => parse_variant(params, &["naive", "biased"], "biased")?,
            _ => parse_variant(params, &["vanilla", "factorized"], "factorized")?,
        };
        let layout = if ds.kind == ModelKind::BlockGroup {
            let group_of: Vec<usize> = ds.array("group_of")?.data.iter().map(|&g| g as usize).collect();
            let groups = group_of.iter().max().map_or(0, |g| g + 1);
            Some((group_of, groups))
        } else {
            None
        };
        let reparam = match (ds.kind, variant) {
            (_, "naive") | (_, "vanilla") => Reparam::Direct,
            (ModelKind::TvRecon, _) => Reparam::CumsumHadamard,
            (ModelKind::BlockGroup, _) => {
                let (group_of, groups) = layout.clone().expect("block layout");
                Reparam::Block { group_of, groups }
            }
            _ => Reparam::Hadamard,
        };
        let default_init = match ds.kind {
            ModelKind::FourierSparse => 0.02,
            ModelKind::TvRecon => 0.05,
            ModelKind::L1Hadamard => 0.01,
            _ => 0.05,
        };
        let init_scale = params.f64("init_scale", default_init)?;
        let mut rng = stream(ds.seed, INIT_STREAM);
        let (init, gens): (Vec<f64>, Arc<dyn GeneratorSet>) = match &reparam {
            Reparam::Direct => (normal_vec(&mut rng, d, init_scale), Arc::new(NoGenerators { dim: d })),
            Reparam::Hadamard => {
                let pairs: Vec<(usize, usize)> = (0..d).map(|i| (i, d + i)).collect();
                (
                    normal_vec(&mut rng, 2 * d, init_scale),
                    Arc::new(ScalingGenerators::hadamard("(R>0)^d coordinate scaling", 2 * d, &pairs)),
                )
            }
            Reparam::CumsumHadamard => {
                let mut init = vec![0.0];
                init.extend(normal_vec(&mut rng, 2 * (d - 1), init_scale));
                let pairs: Vec<(usize, usize)> = (0..d - 1).map(|j| (1 + j, d + j)).collect();
                (init, Arc::new(ScalingGenerators::hadamard("(R>0)^(d-1) coordinate scaling", 2 * d - 1, &pairs)))
            }
            Reparam::Block { group_of, groups } => {
                let gens = (0..*groups)
                    .map(|g| ScalingGenerator {
                        up: vec![g],
                        down: (0..d).filter(|&i| group_of[i] == g).map(|i| groups + i).collect(),
                        power: 1.0,
                    })
                    .collect();
                (
                    normal_vec(&mut rng, groups + d, init_scale),
                    Arc::new(ScalingGenerators::new("(R>0)^G block scaling", groups + d, gens)),
                )
            }
        };
        Ok(Self {
            kind: ds.kind,
            reparam,
            d,
            y: ds.array("y")?.data.clone(),
            x_test: ds.array("x_test")?.clone(),
            y_test: ds.array("y_test")?.data.clone(),
            w_true: ds.array("w_true")?.data.clone(),
            layout,
            x,
            init,
            gens,
        })
    }

    pub fn reparam(&self) -> &Reparam {
        &self.reparam
    }

    pub fn w_true(&self) -> &[f64] {
        &self.w_true
    }

    /// Effective weights `w(theta)`.
    pub fn weights(&self, theta: &[f64]) -> Vec<f64> {
        let d = self.d;
        match &self.reparam {
            Reparam::Direct => theta.to_vec(),
            Reparam::Hadamard => (0..d).map(|i| theta[i] * theta[d + i]).collect(),
            Reparam::CumsumHadamard => {
                let mut w = Vec::with_capacity(d);
                let mut acc = theta[0];
                w.push(acc);
                for j in 0..d - 1 {
                    acc += theta[1 + j] * theta[d + j];
                    w.push(acc);
                }
                w
            }
            Reparam::Block { group_of, groups } => (0..d).map(|i| theta[group_of[i]] * theta[groups + i]).collect(),
        }
    }

    /// Pulls a gradient with respect to `w` back to `theta`.
    fn pullback(&self, theta: &[f64], gw: &[f64]) -> Vec<f64> {
        let d = self.d;
        match &self.reparam {
            Reparam::Direct => gw.to_vec(),
            Reparam::Hadamard => {
                let mut g = vec![0.0; 2 * d];
                for i in 0..d {
                    g[i] = gw[i] * theta[d + i];
                    g[d + i] = gw[i] * theta[i];
                }
                g
            }
            Reparam::CumsumHadamard => {
                let mut g = vec![0.0; 2 * d - 1];
                g[0] = gw.iter().sum();
                let mut tail = 0.0;
                for j in (0..d - 1).rev() {
                    tail += gw[j + 1];
                    g[1 + j] = tail * theta[d + j];
                    g[d + j] = tail * theta[1 + j];
                }
                g
            }
            Reparam::Block { group_of, groups } => {
                let mut g = vec![0.0; groups + d];
                for i in 0..d {
                    let s = group_of[i];
                    g[s] += gw[i] * theta[groups + i];
                    g[groups + i] = gw[i] * theta[s];
                }
                g
            }
        }
    }

    pub fn test_mse(&self, theta: &[f64]) -> Option<f64> {
        if self.y_test.is_empty() {
            return None;
        }
        let w = self.weights(theta);
        let n = self.y_test.len();
        Some((0..n).map(|i| (dot(self.x_test.row(i), &w) - self.y_test[i]).powi(2)).sum::<f64>() / n as f64)
    }

    /// Per-group l2 norms of `w` (block-group datasets only).
    pub fn group_norms(&self, w: &[f64]) -> Option<Vec<f64>> {
        self.layout.as_ref().map(|(group_of, groups)| group_norms(w, group_of, *groups))
    }
}

pub(crate) fn group_norms(w: &[f64], group_of: &[usize], groups: usize) -> Vec<f64> {
    let mut acc = vec![0.0; groups];
    for (i, &g) in group_of.iter().enumerate() {
        acc[g] += w[i] * w[i];
    }
    acc.into_iter().map(f64::sqrt).collect()
}

impl Model for LinearModel {
    fn kind(&self) -> ModelKind {
        self.kind
    }
    fn param_dim(&self) -> usize {
        self.init.len()
    }
    fn n_samples(&self) -> usize {
        self.y.len()
    }
    fn init(&self) -> Vec<f64> {
        self.init.clone()
    }
    fn loss(&self, theta: &[f64], batch: Batch) -> f64 {
        let w = self.weights(theta);
        let mut acc = 0.0;
        batch.for_each(self.y.len(), |b| acc += (dot(self.x.row(b), &w) - self.y[b]).powi(2));
        acc / batch.len(self.y.len()) as f64
    }
    fn loss_grad(&self, theta: &[f64], batch: Batch) -> (f64, Vec<f64>) {
        let w = self.weights(theta);
        let nb = batch.len(self.y.len()) as f64;
        let mut gw = vec![0.0; self.d];
        let mut acc = 0.0;
        batch.for_each(self.y.len(), |b| {
            let row = self.x.row(b);
            let r = dot(row, &w) - self.y[b];
            acc += r * r;
            for (g, x) in gw.iter_mut().zip(row) {
                *g += 2.0 * r * x / nb;
            }
        });
        (acc / nb, self.pullback(theta, &gw))
    }
    fn generators(&self) -> Arc<dyn GeneratorSet> {
        self.gens.clone()
    }
    fn gauge(&self) -> Option<(Arc<dyn GeneratorSet>, GaugeMap)> {
        (self.reparam != Reparam::Direct)
            .then(|| (self.gens.clone(), GaugeMap::explicit(Arc::new(QuadraticGauge::new(self.gens.clone())))))
    }
    fn invariants(&self, theta: &[f64]) -> NamedValues {
        NamedValues::from([("w".to_string(), self.weights(theta))])
    }
    fn observable_names(&self) -> Vec<&'static str> {
        let mut names = vec!["l1", "l2"];
        match self.kind {
            ModelKind::TvRecon => names.extend(["tv", "recon_mse"]),
            ModelKind::BlockGroup => names.extend(["test_mse", "active_fraction"]),
            _ => names.push("test_mse"),
        }
        names
    }
    fn observable(&self, name: &str, theta: &[f64]) -> Option<f64> {
        let w = self.weights(theta);
        match name {
            "l1" => Some(w.iter().map(|x| x.abs()).sum()),
            "l2" => Some(dot(&w, &w).sqrt()),
            "test_mse" => self.test_mse(theta),
            "tv" => Some(crate::stats::total_variation(&w)),
            "recon_mse" => {
                Some(w.iter().zip(&self.w_true).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / self.d as f64)
            }
            "active_fraction" => {
                let norms = self.group_norms(&w)?;
                Some(norms.iter().filter(|&&n| n > crate::stats::ACTIVE_GROUP_THRESHOLD).count() as f64 / norms.len() as f64)
            }
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_model, make_dataset, checks::check_model};

    #[test]
    fn fourier_truth_has_three_positive_frequencies() {
        let ds = make_dataset(ModelKind::FourierSparse, &Params::new(), 4).unwrap();
        let w = &ds.array("w_true").unwrap().data;
        let nz: Vec<usize> = (0..w.len()).filter(|&i| w[i] != 0.0).collect();
        assert_eq!(nz.len(), 3);
        assert!(nz.iter().all(|&k| k >= 1));
        assert_eq!(ds.array("x_test").unwrap().rows, 2000);
    }

    #[test]
    fn fourier_pq_layout() {
        let (m, _) = build_model(ModelKind::FourierSparse, &Params::new().with("variant", "pq"), 0).unwrap();
        assert_eq!(m.param_dim(), 128);
        assert_eq!(m.invariants(&m.init())["w"].len(), 64);
    }

    #[test]
    fn tv_truth_has_three_jumps() {
        let ds = make_dataset(ModelKind::TvRecon, &Params::new(), 8).unwrap();
        let w = &ds.array("w_true").unwrap().data;
        let jumps = w.windows(2).filter(|p| p[0] != p[1]).count();
        assert_eq!(jumps, 3);
    }

    #[test]
    fn single_sample_step_matches_hand_gradient() {
        let mut ds = Dataset::new(ModelKind::L1Hadamard, 0, Params::new());
        ds.insert("x", Array2::new(1, 2, vec![1.0, 2.0]));
        ds.insert("y", Array2::vector(vec![3.0]));
        ds.insert("x_test", Array2::new(0, 2, vec![]));
        ds.insert("y_test", Array2::vector(vec![]));
        ds.insert("w_true", Array2::vector(vec![0.0, 0.0]));
        let m = LinearModel::from_dataset(&ds, &Params::new().with("variant", "vanilla")).unwrap();
        let g = m.grad(&[0.0, 0.0], Batch::Full);
        assert_eq!(g, vec![-6.0, -12.0]);
    }

    #[test]
    fn all_variants_pass_model_checks() {
        for (kind, variants) in [
            (ModelKind::FourierSparse, ["naive", "pq"]),
            (ModelKind::TvRecon, ["naive", "biased"]),
            (ModelKind::L1Hadamard, ["vanilla", "factorized"]),
            (ModelKind::BlockGroup, ["vanilla", "factorized"]),
        ] {
            for v in variants {
                let (m, _) = build_model(kind, &Params::new().with("variant", v), 1).unwrap();
                check_model(m.as_ref(), 3);
            }
        }
    }

    #[test]
    fn hadamard_invariant_is_product() {
        let mut ds = make_dataset(ModelKind::L1Hadamard, &Params::new().with("d", 2).with("nonzero", 1), 0).unwrap();
        ds.params = Params::new();
        let m = LinearModel::from_dataset(&ds, &Params::new()).unwrap();
        assert_eq!(m.weights(&[2.0, 0.0, 3.0, 0.0])[0], 6.0);
        let moved = m.generators().act(0, 5.0_f64.ln(), &[2.0, 0.0, 3.0, 0.0]).unwrap();
        assert!((m.weights(&moved)[0] - 6.0).abs() < 1e-12);
    }
}

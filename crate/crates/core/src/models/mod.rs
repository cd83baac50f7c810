//! Model catalog: losses, gradients, generators and synthetic datasets.

mod attention;
mod circulant;
mod completion;
mod dataset;
mod linear;
mod multichannel;
mod pca;
mod radial;
mod relu;
mod tensor;

pub mod checks;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use attention::AttentionModel;
pub use circulant::CirculantModel;
pub use completion::CompletionModel;
pub use dataset::{Array2, Dataset};
pub use linear::{LinearModel, Reparam};
pub use multichannel::MultichannelModel;
pub use pca::PcaModel;
pub use radial::RadialModel;
pub use relu::ReluModel;
pub use tensor::{CpModel, TtModel};

use crate::error::{Error, Result};
use crate::rng::{normal, Rng};
use crate::symmetry::{GaugeMap, GeneratorSet};

/// Which training samples a loss or gradient evaluation averages over.
#[derive(Debug, Clone, Copy)]
pub enum Batch<'a> {
    Full,
    Indices(&'a [usize]),
}

impl Batch<'_> {
    pub fn len(&self, n: usize) -> usize {
        match self {
            Batch::Full => n,
            Batch::Indices(ix) => ix.len(),
        }
    }

    pub fn is_empty(&self, n: usize) -> bool {
        self.len(n) == 0
    }

    pub fn for_each(&self, n: usize, mut f: impl FnMut(usize)) {
        match self {
            Batch::Full => (0..n).for_each(&mut f),
            Batch::Indices(ix) => ix.iter().copied().for_each(&mut f),
        }
    }
}

pub type NamedValues = BTreeMap<String, Vec<f64>>;

/// A differentiable model with declared parameter symmetries.
pub trait Model: Send + Sync {
    fn kind(&self) -> ModelKind;
    fn param_dim(&self) -> usize;
    /// Number of training samples that batches index into.
    fn n_samples(&self) -> usize;
    /// Seeded initial parameters.
    fn init(&self) -> Vec<f64>;
    fn loss(&self, theta: &[f64], batch: Batch) -> f64;
    fn loss_grad(&self, theta: &[f64], batch: Batch) -> (f64, Vec<f64>);
    fn grad(&self, theta: &[f64], batch: Batch) -> Vec<f64> {
        self.loss_grad(theta, batch).1
    }
    /// Symmetry generators under which the loss is invariant.
    fn generators(&self) -> Arc<dyn GeneratorSet>;
    /// Generators and an explicit orthogonal gauge for the Gram relation, when one exists.
    fn gauge(&self) -> Option<(Arc<dyn GeneratorSet>, GaugeMap)> {
        None
    }
    /// Orbit invariants such as `w = u*v` or `Z = U V^T`.
    fn invariants(&self, theta: &[f64]) -> NamedValues;
    /// Scalar metrics that can be recorded along a trajectory.
    fn observable_names(&self) -> Vec<&'static str>;
    fn observable(&self, name: &str, theta: &[f64]) -> Option<f64>;
    /// Per-unit balance diagnostics.
    fn balance_metrics(&self, _theta: &[f64]) -> Result<NamedValues> {
        Err(Error::Unsupported(format!("no balance metrics for {}", self.kind())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Radial,
    FourierSparse,
    TvRecon,
    Multichannel,
    Rank2Completion,
    AttentionTs,
    Relu2,
    Circulant2,
    CirculantDeep,
    CpRank1,
    Tt3,
    BlockGroup,
    L1Hadamard,
    Pca,
}

impl ModelKind {
    pub const ALL: [ModelKind; 14] = [
        ModelKind::Radial,
        ModelKind::FourierSparse,
        ModelKind::TvRecon,
        ModelKind::Multichannel,
        ModelKind::Rank2Completion,
        ModelKind::AttentionTs,
        ModelKind::Relu2,
        ModelKind::Circulant2,
        ModelKind::CirculantDeep,
        ModelKind::CpRank1,
        ModelKind::Tt3,
        ModelKind::BlockGroup,
        ModelKind::L1Hadamard,
        ModelKind::Pca,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Radial => "radial",
            ModelKind::FourierSparse => "fourier_sparse",
            ModelKind::TvRecon => "tv_recon",
            ModelKind::Multichannel => "multichannel",
            ModelKind::Rank2Completion => "rank2_completion",
            ModelKind::AttentionTs => "attention_ts",
            ModelKind::Relu2 => "relu2",
            ModelKind::Circulant2 => "circulant2",
            ModelKind::CirculantDeep => "circulant_deep",
            ModelKind::CpRank1 => "cp_rank1",
            ModelKind::Tt3 => "tt3",
            ModelKind::BlockGroup => "block_group",
            ModelKind::L1Hadamard => "l1_hadamard",
            ModelKind::Pca => "pca",
        }
    }

    /// Accepted parameter keys.
    pub fn keys(self) -> &'static [&'static str] {
        match self {
            ModelKind::Radial => radial::KEYS,
            ModelKind::FourierSparse | ModelKind::TvRecon | ModelKind::BlockGroup | ModelKind::L1Hadamard => {
                linear::KEYS
            }
            ModelKind::Multichannel => multichannel::KEYS,
            ModelKind::Rank2Completion => completion::KEYS,
            ModelKind::AttentionTs => attention::KEYS,
            ModelKind::Relu2 => relu::KEYS,
            ModelKind::Circulant2 | ModelKind::CirculantDeep => circulant::KEYS,
            ModelKind::CpRank1 | ModelKind::Tt3 => tensor::KEYS,
            ModelKind::Pca => pca::KEYS,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownModelKind(s.to_string()))
    }
}

/// Key-value model parameters; missing keys fall back to per-kind defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Params(pub BTreeMap<String, Value>);

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.0.insert(key.to_string(), value.into());
        self
    }

    pub fn set(&mut self, key: &str, value: impl Into<Value>) {
        self.0.insert(key.to_string(), value.into());
    }

    pub fn contains(&self, key: &str) -> bool {
        self.0.contains_key(key)
    }

    pub fn usize(&self, key: &str, default: usize) -> Result<usize> {
        match self.0.get(key) {
            None => Ok(default),
            Some(v) => v
                .as_u64()
                .map(|x| x as usize)
                .ok_or_else(|| Error::InvalidArgument(format!("'{key}' must be a nonnegative integer, got {v}"))),
        }
    }

    pub fn f64(&self, key: &str, default: f64) -> Result<f64> {
        match self.0.get(key) {
            None => Ok(default),
            Some(v) => v
                .as_f64()
                .ok_or_else(|| Error::InvalidArgument(format!("'{key}' must be a number, got {v}"))),
        }
    }

    pub fn string(&self, key: &str, default: &str) -> Result<String> {
        match self.0.get(key) {
            None => Ok(default.to_string()),
            Some(v) => v
                .as_str()
                .map(str::to_string)
                .ok_or_else(|| Error::InvalidArgument(format!("'{key}' must be a string, got {v}"))),
        }
    }

    pub fn f64_list(&self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        match self.0.get(key) {
            None => Ok(default.to_vec()),
            Some(Value::Array(xs)) => xs
                .iter()
                .map(|x| x.as_f64().ok_or_else(|| Error::InvalidArgument(format!("'{key}' must hold numbers"))))
                .collect(),
            Some(v) => Err(Error::InvalidArgument(format!("'{key}' must be a list, got {v}"))),
        }
    }

    /// Rejects keys outside `allowed`.
    pub fn ensure_known(&self, allowed: &[&str]) -> Result<()> {
        match self.0.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(Error::Config(format!("unknown model parameter '{k}'"))),
            None => Ok(()),
        }
    }
}

/// Zero-mean Gaussian matrix with variance `scale * 2 / fan_in`, where the
/// shape is `(fan_in, fan_out)` as used in `x W`.
pub fn kaiming_like_init(fan_in: usize, fan_out: usize, scale: f64, rng: &mut Rng) -> Result<DMatrix<f64>> {
    if fan_in == 0 || fan_out == 0 {
        return Err(Error::InvalidArgument("kaiming init needs positive dimensions".into()));
    }
    if scale < 0.0 {
        return Err(Error::InvalidArgument("variance scale must be nonnegative".into()));
    }
    let std = (scale * 2.0 / fan_in as f64).sqrt();
    Ok(DMatrix::from_fn(fan_in, fan_out, |_, _| std * normal(rng)))
}

/// Generates the synthetic dataset for `kind`.
pub fn make_dataset(kind: ModelKind, params: &Params, seed: u64) -> Result<Dataset> {
    params.ensure_known(kind.keys())?;
    match kind {
        ModelKind::Radial => radial::make_dataset(params, seed),
        ModelKind::FourierSparse | ModelKind::TvRecon | ModelKind::BlockGroup | ModelKind::L1Hadamard => {
            linear::make_dataset(kind, params, seed)
        }
        ModelKind::Multichannel => multichannel::make_dataset(params, seed),
        ModelKind::Rank2Completion => completion::make_dataset(params, seed),
        ModelKind::AttentionTs => attention::make_dataset(params, seed),
        ModelKind::Relu2 => relu::make_dataset(params, seed),
        ModelKind::Circulant2 | ModelKind::CirculantDeep => circulant::make_dataset(kind, params, seed),
        ModelKind::CpRank1 | ModelKind::Tt3 => tensor::make_dataset(kind, params, seed),
        ModelKind::Pca => pca::make_dataset(params, seed),
    }
}

/// Builds a model over an existing dataset.
pub fn model_from_dataset(ds: &Dataset, params: &Params) -> Result<Box<dyn Model>> {
    params.ensure_known(ds.kind.keys())?;
    Ok(match ds.kind {
        ModelKind::Radial => Box::new(RadialModel::from_dataset(ds, params)?),
        ModelKind::FourierSparse | ModelKind::TvRecon | ModelKind::BlockGroup | ModelKind::L1Hadamard => {
            Box::new(LinearModel::from_dataset(ds, params)?)
        }
        ModelKind::Multichannel => Box::new(MultichannelModel::from_dataset(ds, params)?),
        ModelKind::Rank2Completion => Box::new(CompletionModel::from_dataset(ds, params)?),
        ModelKind::AttentionTs => Box::new(AttentionModel::from_dataset(ds, params)?),
        ModelKind::Relu2 => Box::new(ReluModel::from_dataset(ds, params)?),
        ModelKind::Circulant2 | ModelKind::CirculantDeep => Box::new(CirculantModel::from_dataset(ds, params)?),
        ModelKind::CpRank1 => Box::new(CpModel::from_dataset(ds, params)?),
        ModelKind::Tt3 => Box::new(TtModel::from_dataset(ds, params)?),
        ModelKind::Pca => Box::new(PcaModel::from_dataset(ds, params)?),
    })
}

/// Generates data and builds the model in one call.
pub fn build_model(kind: ModelKind, params: &Params, seed: u64) -> Result<(Box<dyn Model>, Dataset)> {
    let ds = make_dataset(kind, params, seed)?;
    let model = model_from_dataset(&ds, params)?;
    Ok((model, ds))
}

/// Named invariants of `theta`.
pub fn eval_invariants(model: &dyn Model, theta: &[f64]) -> Result<NamedValues> {
    crate::error::check_dim(model.param_dim(), theta.len())?;
    Ok(model.invariants(theta))
}

/// Random stream used for model initialisation, distinct from data streams.
pub(crate) const INIT_STREAM: u64 = 1;
/// Random stream used for data generation.
pub(crate) const DATA_STREAM: u64 = 0;

pub(crate) fn parse_variant<'a>(params: &Params, allowed: &[&'a str], default: &'a str) -> Result<&'a str> {
    let v = params.string("variant", default)?;
    allowed
        .iter()
        .copied()
        .find(|a| *a == v)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown variant '{v}', expected one of {allowed:?}")))
}

//! Rank-one CP and three-core tensor-train fits to a synthetic target tensor.

use std::sync::Arc;

use super::{Array2, Batch, Dataset, Model, ModelKind, NamedValues, Params, DATA_STREAM, INIT_STREAM};
use crate::error::{Error, Result};
use crate::rng::{normal_vec, stream};
use crate::symmetry::{
    BlockAction, FactorBlock, GaugeMap, GeneratorSet, MatrixGenerators, QuadraticGauge, ScalingGenerator,
    ScalingGenerators,
};

pub(super) const KEYS: &[&str] = &["dims", "bond", "init_scale"];

fn dims(params: &Params, default: &[f64]) -> Result<[usize; 3]> {
    let d = params.f64_list("dims", default)?;
    if d.len() != 3 || d.iter().any(|&x| x < 1.0 || x.fract() != 0.0) {
        return Err(Error::InvalidArgument("dims must be three positive integers".into()));
    }
    Ok([d[0] as usize, d[1] as usize, d[2] as usize])
}

pub(super) fn make_dataset(kind: ModelKind, params: &Params, seed: u64) -> Result<Dataset> {
    let mut rng = stream(seed, DATA_STREAM);
    let mut ds = Dataset::new(kind, seed, params.clone());
    let target = match kind {
        ModelKind::CpRank1 => {
            let [a, b, c] = dims(params, &[4.0, 5.0, 6.0])?;
            let teacher = normal_vec(&mut rng, a + b + c, 1.0);
            let t = cp_tensor(&teacher, [a, b, c]);
            ds.insert("teacher", Array2::vector(teacher));
            t
        }
        ModelKind::Tt3 => {
            let n = dims(params, &[4.0, 3.0, 4.0])?;
            let r = params.usize("bond", 2)?;
            let layout = TtLayout { n, r };
            let teacher = normal_vec(&mut rng, layout.dim(), 1.0);
            let t = (0..layout.entries()).map(|e| layout.entry(&teacher, e)).collect();
            ds.insert("teacher", Array2::vector(teacher));
            t
        }
        other => return Err(Error::UnknownModelKind(other.to_string())),
    };
    ds.insert("target", Array2::vector(target));
    Ok(ds)
}

fn cp_tensor(theta: &[f64], [a, b, c]: [usize; 3]) -> Vec<f64> {
    let (u, v, w) = (&theta[..a], &theta[a..a + b], &theta[a + b..a + b + c]);
    let mut t = Vec::with_capacity(a * b * c);
    for ui in u {
        for vj in v {
            for wk in w {
                t.push(ui * vj * wk);
            }
        }
    }
    t
}

pub struct CpModel {
    d: [usize; 3],
    target: Vec<f64>,
    init: Vec<f64>,
    gens: Arc<ScalingGenerators>,
}

impl CpModel {
    pub fn from_dataset(ds: &Dataset, params: &Params) -> Result<Self> {
        let d = dims(&ds.params, &[4.0, 5.0, 6.0])?;
        let [a, b, c] = d;
        let dim = a + b + c;
        let w_idx: Vec<usize> = (a + b..dim).collect();
        let gens = vec![
            ScalingGenerator { up: (0..a).collect(), down: w_idx.clone(), power: 1.0 },
            ScalingGenerator { up: (a..a + b).collect(), down: w_idx, power: 1.0 },
        ];
        Ok(Self {
            d,
            target: ds.array("target")?.data.clone(),
            init: normal_vec(&mut stream(ds.seed, INIT_STREAM), dim, params.f64("init_scale", 0.3)?),
            gens: Arc::new(ScalingGenerators::new("(R>0)^2 mode scaling", dim, gens)),
        })
    }

    fn split(&self, e: usize) -> (usize, usize, usize) {
        let [_, b, c] = self.d;
        (e / (b * c), (e / c) % b, e % c)
    }
}

impl Model for CpModel {
    fn kind(&self) -> ModelKind {
        ModelKind::CpRank1
    }
    fn param_dim(&self) -> usize {
        self.d.iter().sum()
    }
    fn n_samples(&self) -> usize {
        self.target.len()
    }
    fn init(&self) -> Vec<f64> {
        self.init.clone()
    }
    fn loss(&self, theta: &[f64], batch: Batch) -> f64 {
        self.loss_grad(theta, batch).0
    }
    fn loss_grad(&self, theta: &[f64], batch: Batch) -> (f64, Vec<f64>) {
        let [a, b, _] = self.d;
        let nb = batch.len(self.target.len()) as f64;
        let mut g = vec![0.0; theta.len()];
        let mut acc = 0.0;
        batch.for_each(self.target.len(), |e| {
            let (i, j, k) = self.split(e);
            let (u, v, w) = (theta[i], theta[a + j], theta[a + b + k]);
            let r = u * v * w - self.target[e];
            acc += r * r;
            let f = 2.0 * r / nb;
            g[i] += f * v * w;
            g[a + j] += f * u * w;
            g[a + b + k] += f * u * v;
        });
        (acc / nb, g)
    }
    fn generators(&self) -> Arc<dyn GeneratorSet> {
        self.gens.clone()
    }
    fn gauge(&self) -> Option<(Arc<dyn GeneratorSet>, GaugeMap)> {
        let g: Arc<dyn GeneratorSet> = self.gens.clone();
        Some((g.clone(), GaugeMap::explicit(Arc::new(QuadraticGauge::new(g)))))
    }
    fn invariants(&self, theta: &[f64]) -> NamedValues {
        let [a, b, _] = self.d;
        let sq = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        let s = sq(&theta[..a]) * sq(&theta[a..a + b]) * sq(&theta[a + b..]);
        NamedValues::from([("tensor".to_string(), cp_tensor(theta, self.d)), ("S".to_string(), vec![s])])
    }
    fn observable_names(&self) -> Vec<&'static str> {
        vec![]
    }
    fn observable(&self, _name: &str, _theta: &[f64]) -> Option<f64> {
        None
    }
}

#[derive(Debug, Clone, Copy)]
struct TtLayout {
    n: [usize; 3],
    r: usize,
}

impl TtLayout {
    fn dim(&self) -> usize {
        let [a, b, c] = self.n;
        a * self.r + self.r * b * self.r + self.r * c
    }
    fn entries(&self) -> usize {
        self.n.iter().product()
    }
    fn offsets(&self) -> (usize, usize) {
        let [a, b, _] = self.n;
        (a * self.r, a * self.r + self.r * b * self.r)
    }
    fn split(&self, e: usize) -> (usize, usize, usize) {
        let [_, b, c] = self.n;
        (e / (b * c), (e / c) % b, e % c)
    }
    fn g2(&self, alpha: usize, i2: usize, beta: usize) -> usize {
        self.offsets().0 + alpha * self.n[1] * self.r + i2 * self.r + beta
    }
    fn entry(&self, theta: &[f64], e: usize) -> f64 {
        let (i1, i2, i3) = self.split(e);
        let (_, o3) = self.offsets();
        let r = self.r;
        let mut t = 0.0;
        for alpha in 0..r {
            let a = theta[i1 * r + alpha];
            for beta in 0..r {
                t += a * theta[self.g2(alpha, i2, beta)] * theta[o3 + beta * self.n[2] + i3];
            }
        }
        t
    }
}

pub struct TtModel {
    layout: TtLayout,
    target: Vec<f64>,
    init: Vec<f64>,
    gens: Arc<MatrixGenerators>,
    diag: Arc<MatrixGenerators>,
}

impl TtModel {
    pub fn from_dataset(ds: &Dataset, params: &Params) -> Result<Self> {
        let layout = TtLayout { n: dims(&ds.params, &[4.0, 3.0, 4.0])?, r: ds.params.usize("bond", 2)? };
        let [a, b, _] = layout.n;
        let r = layout.r;
        let dim = layout.dim();
        let blocks = vec![
            FactorBlock { offset: 0, rows: a, cols: r, action: BlockAction::Right },
            FactorBlock { offset: a * r, rows: r, cols: b * r, action: BlockAction::LeftInv },
        ];
        Ok(Self {
            layout,
            target: ds.array("target")?.data.clone(),
            init: normal_vec(&mut stream(ds.seed, INIT_STREAM), dim, params.f64("init_scale", 0.5)?),
            gens: Arc::new(MatrixGenerators::general_linear("GL(r) first bond", dim, r, blocks.clone())),
            diag: Arc::new(MatrixGenerators::diagonal("GL(r) first bond diagonal subalgebra", dim, r, blocks)),
        })
    }

    pub fn bond_generators(&self) -> Arc<MatrixGenerators> {
        self.gens.clone()
    }

    pub fn bond(&self) -> usize {
        self.layout.r
    }

    pub fn dims(&self) -> [usize; 3] {
        self.layout.n
    }

    /// Full tensor in row-major `(i1, i2, i3)` order.
    pub fn tensor(&self, theta: &[f64]) -> Vec<f64> {
        (0..self.layout.entries()).map(|e| self.layout.entry(theta, e)).collect()
    }
}

impl Model for TtModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Tt3
    }
    fn param_dim(&self) -> usize {
        self.layout.dim()
    }
    fn n_samples(&self) -> usize {
        self.target.len()
    }
    fn init(&self) -> Vec<f64> {
        self.init.clone()
    }
    fn loss(&self, theta: &[f64], batch: Batch) -> f64 {
        let mut acc = 0.0;
        batch.for_each(self.target.len(), |e| acc += (self.layout.entry(theta, e) - self.target[e]).powi(2));
        acc / batch.len(self.target.len()) as f64
    }
    fn loss_grad(&self, theta: &[f64], batch: Batch) -> (f64, Vec<f64>) {
        let lay = self.layout;
        let r = lay.r;
        let n3 = lay.n[2];
        let (_, o3) = lay.offsets();
        let nb = batch.len(self.target.len()) as f64;
        let mut g = vec![0.0; theta.len()];
        let mut acc = 0.0;
        batch.for_each(self.target.len(), |e| {
            let (i1, i2, i3) = lay.split(e);
            let res = lay.entry(theta, e) - self.target[e];
            acc += res * res;
            let f = 2.0 * res / nb;
            for alpha in 0..r {
                let a = theta[i1 * r + alpha];
                for beta in 0..r {
                    let gi = lay.g2(alpha, i2, beta);
                    let c = theta[o3 + beta * n3 + i3];
                    g[i1 * r + alpha] += f * theta[gi] * c;
                    g[gi] += f * a * c;
                    g[o3 + beta * n3 + i3] += f * a * theta[gi];
                }
            }
        });
        (acc / nb, g)
    }
    fn generators(&self) -> Arc<dyn GeneratorSet> {
        self.gens.clone()
    }
    fn gauge(&self) -> Option<(Arc<dyn GeneratorSet>, GaugeMap)> {
        let g: Arc<dyn GeneratorSet> = self.diag.clone();
        Some((g.clone(), GaugeMap::explicit(Arc::new(QuadraticGauge::new(g)))))
    }
    fn invariants(&self, theta: &[f64]) -> NamedValues {
        NamedValues::from([("tensor".to_string(), self.tensor(theta))])
    }
    fn observable_names(&self) -> Vec<&'static str> {
        vec![]
    }
    fn observable(&self, _name: &str, _theta: &[f64]) -> Option<f64> {
        None
    }
}

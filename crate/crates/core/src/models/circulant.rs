//! Linear circular-convolution networks `f(x) = v^T (w_L * ... * w_1 * x)`.

use std::f64::consts::PI;
use std::sync::Arc;

use super::{Array2, Batch, Dataset, Model, ModelKind, NamedValues, Params, DATA_STREAM, INIT_STREAM};
use crate::error::{Error, Result};
use crate::rng::{normal_vec, stream};
use crate::symmetry::{FourierGenerator, FourierScalingGenerators, GaugeMap, GeneratorSet, QuadraticGauge};

pub(super) const KEYS: &[&str] = &["n", "depth", "n_train", "init_scale"];

fn depth(kind: ModelKind, params: &Params) -> Result<usize> {
    let default = if kind == ModelKind::Circulant2 { 1 } else { 3 };
    let l = params.usize("depth", default)?;
    if l == 0 || (kind == ModelKind::Circulant2 && l != 1) {
        return Err(Error::InvalidArgument(format!("invalid depth {l} for {kind}")));
    }
    Ok(l)
}

pub(super) fn make_dataset(kind: ModelKind, params: &Params, seed: u64) -> Result<Dataset> {
    let n = params.usize("n", 8)?;
    let l = depth(kind, params)?;
    let samples = params.usize("n_train", 64)?;
    if n < 2 || samples == 0 {
        return Err(Error::InvalidArgument("need n >= 2 and n_train >= 1".into()));
    }
    let mut rng = stream(seed, DATA_STREAM);
    let teacher = normal_vec(&mut rng, (l + 1) * n, (1.0 / n as f64).sqrt());
    let x = normal_vec(&mut rng, samples * n, 1.0);
    let y = x.chunks(n).map(|xi| output(&teacher, n, l, xi)).collect();
    let mut ds = Dataset::new(kind, seed, params.clone());
    ds.insert("x", Array2::new(samples, n, x));
    ds.insert("y", Array2::vector(y));
    ds.insert("teacher", Array2::vector(teacher));
    Ok(ds)
}

/// Circular convolution `(w * x)_i = sum_m w_m x_{i-m}`.
pub fn circular_conv(w: &[f64], x: &[f64]) -> Vec<f64> {
    let n = w.len();
    (0..n).map(|i| (0..n).map(|m| w[m] * x[(i + n - m) % n]).sum()).collect()
}

fn output(theta: &[f64], n: usize, l: usize, x: &[f64]) -> f64 {
    let mut h = x.to_vec();
    for layer in 0..l {
        h = circular_conv(&theta[layer * n..(layer + 1) * n], &h);
    }
    theta[l * n..].iter().zip(&h).map(|(a, b)| a * b).sum()
}

/// Unitary DFT as `(re, im)` vectors.
pub fn dft(x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let s = 1.0 / (n as f64).sqrt();
    let mut re = vec![0.0; n];
    let mut im = vec![0.0; n];
    for k in 0..n {
        for (j, &xj) in x.iter().enumerate() {
            let a = -2.0 * PI * ((k * j) % n) as f64 / n as f64;
            re[k] += s * xj * a.cos();
            im[k] += s * xj * a.sin();
        }
    }
    (re, im)
}

pub struct CirculantModel {
    kind: ModelKind,
    n: usize,
    l: usize,
    x: Array2,
    y: Vec<f64>,
    init: Vec<f64>,
    gens: Arc<FourierScalingGenerators>,
}

impl CirculantModel {
    pub fn from_dataset(ds: &Dataset, params: &Params) -> Result<Self> {
        let x = ds.array("x")?.clone();
        let n = x.cols;
        let l = depth(ds.kind, params)?;
        let dim = (l + 1) * n;
        let init_scale = params.f64("init_scale", 0.3)?;
        let mut gens = Vec::new();
        for k in 0..=n / 2 {
            for layer in 0..l {
                gens.push(FourierGenerator { freq: k, terms: vec![(layer * n, 1.0), (l * n, -1.0)] });
            }
        }
        Ok(Self {
            kind: ds.kind,
            n,
            l,
            y: ds.array("y")?.data.clone(),
            x,
            init: normal_vec(&mut stream(ds.seed, INIT_STREAM), dim, init_scale),
            gens: Arc::new(FourierScalingGenerators::new("per-frequency scaling", dim, n, gens)),
        })
    }

    /// Fourier-domain end-to-end coefficients `c(w) = conj(v^(w)) prod_l w^_l(w)`.
    pub fn coefficients(&self, theta: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.n;
        let (vr, vi) = dft(&theta[self.l * n..]);
        let mut re: Vec<f64> = vr;
        let mut im: Vec<f64> = vi.iter().map(|x| -x).collect();
        for layer in 0..self.l {
            let (wr, wi) = dft(&theta[layer * n..(layer + 1) * n]);
            for k in 0..n {
                let (a, b) = (re[k], im[k]);
                re[k] = a * wr[k] - b * wi[k];
                im[k] = a * wi[k] + b * wr[k];
            }
        }
        (re, im)
    }
}

impl Model for CirculantModel {
    fn kind(&self) -> ModelKind {
        self.kind
    }
    fn param_dim(&self) -> usize {
        (self.l + 1) * self.n
    }
    fn n_samples(&self) -> usize {
        self.y.len()
    }
    fn init(&self) -> Vec<f64> {
        self.init.clone()
    }
    fn loss(&self, theta: &[f64], batch: Batch) -> f64 {
        let mut acc = 0.0;
        batch.for_each(self.y.len(), |i| acc += (output(theta, self.n, self.l, self.x.row(i)) - self.y[i]).powi(2));
        acc / batch.len(self.y.len()) as f64
    }
    fn loss_grad(&self, theta: &[f64], batch: Batch) -> (f64, Vec<f64>) {
        let (n, l) = (self.n, self.l);
        let nb = batch.len(self.y.len()) as f64;
        let mut g = vec![0.0; theta.len()];
        let mut acc = 0.0;
        batch.for_each(self.y.len(), |i| {
            let mut hs = vec![self.x.row(i).to_vec()];
            for layer in 0..l {
                let next = circular_conv(&theta[layer * n..(layer + 1) * n], &hs[layer]);
                hs.push(next);
            }
            let v = &theta[l * n..];
            let f: f64 = v.iter().zip(&hs[l]).map(|(a, b)| a * b).sum();
            let r = f - self.y[i];
            acc += r * r;
            let df = 2.0 * r / nb;
            for (gv, h) in g[l * n..].iter_mut().zip(&hs[l]) {
                *gv += df * h;
            }
            let mut up: Vec<f64> = v.iter().map(|x| df * x).collect();
            for layer in (0..l).rev() {
                let w = &theta[layer * n..(layer + 1) * n];
                let h = &hs[layer];
                for m in 0..n {
                    g[layer * n + m] += (0..n).map(|j| up[j] * h[(j + n - m) % n]).sum::<f64>();
                }
                up = (0..n).map(|k| (0..n).map(|j| up[j] * w[(j + n - k) % n]).sum()).collect();
            }
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
        let (re, im) = self.coefficients(theta);
        NamedValues::from([("c_re".to_string(), re), ("c_im".to_string(), im)])
    }
    fn observable_names(&self) -> Vec<&'static str> {
        vec![]
    }
    fn observable(&self, _name: &str, _theta: &[f64]) -> Option<f64> {
        None
    }
    fn balance_metrics(&self, theta: &[f64]) -> Result<NamedValues> {
        let n = self.n;
        let mag = |x: &[f64]| {
            let (re, im) = dft(x);
            re.iter().zip(&im).map(|(a, b)| a.hypot(*b)).collect::<Vec<f64>>()
        };
        let v = mag(&theta[self.l * n..]);
        let mut out = NamedValues::new();
        for layer in 0..self.l {
            let w = mag(&theta[layer * n..(layer + 1) * n]);
            let gap = w.iter().zip(&v).map(|(a, b)| (a - b).abs()).collect();
            out.insert(format!("frequency_gap_{layer}"), gap);
        }
        Ok(out)
    }
}

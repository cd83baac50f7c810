//! Single-head softmax attention trained against a teacher head.

use std::sync::Arc;

use nalgebra::DMatrix;

use super::{kaiming_like_init, Array2, Batch, Dataset, Model, ModelKind, NamedValues, Params, DATA_STREAM, INIT_STREAM};
use crate::error::{Error, Result};
use crate::linalg::{from_row_major, to_row_major};
use crate::rng::{normal_vec, stream};
use crate::symmetry::{BlockAction, FactorBlock, GaugeMap, GeneratorSet, MatrixGenerators, QuadraticGauge};

pub(super) const KEYS: &[&str] = &["seq_len", "d_model", "d_head", "n_train", "student_scale", "teacher_scale"];

struct Dims {
    l: usize,
    dm: usize,
    dh: usize,
}

fn dims(params: &Params) -> Result<Dims> {
    let d = Dims {
        l: params.usize("seq_len", 8)?,
        dm: params.usize("d_model", 16)?,
        dh: params.usize("d_head", 8)?,
    };
    if d.l == 0 || d.dm == 0 || d.dh == 0 {
        return Err(Error::InvalidArgument("attention dimensions must be positive".into()));
    }
    Ok(d)
}

fn init_weights(dm: usize, dh: usize, scale: f64, rng: &mut crate::rng::Rng) -> Result<Vec<f64>> {
    let mut theta = Vec::with_capacity(4 * dm * dh);
    for _ in 0..3 {
        theta.extend(to_row_major(&kaiming_like_init(dm, dh, scale, rng)?));
    }
    theta.extend(to_row_major(&kaiming_like_init(dh, dm, scale, rng)?));
    Ok(theta)
}

pub(super) fn make_dataset(params: &Params, seed: u64) -> Result<Dataset> {
    let Dims { l, dm, dh } = dims(params)?;
    let n = params.usize("n_train", 512)?;
    let mut rng = stream(seed, DATA_STREAM);
    let teacher = init_weights(dm, dh, params.f64("teacher_scale", 0.5)?, &mut rng)?;
    let x = normal_vec(&mut rng, n * l * dm, 1.0);
    let head = Head { l, dm, dh };
    let mut y = Vec::with_capacity(x.len());
    for s in 0..n {
        let xs = from_row_major(l, dm, &x[s * l * dm..(s + 1) * l * dm]);
        y.extend(to_row_major(&head.forward(&teacher, &xs).out));
    }
    let mut ds = Dataset::new(ModelKind::AttentionTs, seed, params.clone());
    ds.insert("x", Array2::new(n, l * dm, x));
    ds.insert("y", Array2::new(n, l * dm, y));
    ds.insert("teacher", Array2::vector(teacher));
    Ok(ds)
}

struct Head {
    l: usize,
    dm: usize,
    dh: usize,
}

struct Forward {
    q: DMatrix<f64>,
    k: DMatrix<f64>,
    v: DMatrix<f64>,
    a: DMatrix<f64>,
    z: DMatrix<f64>,
    out: DMatrix<f64>,
}

impl Head {
    fn blocks<'a>(&self, theta: &'a [f64]) -> [&'a [f64]; 4] {
        let s = self.dm * self.dh;
        [&theta[..s], &theta[s..2 * s], &theta[2 * s..3 * s], &theta[3 * s..4 * s]]
    }

    fn forward(&self, theta: &[f64], x: &DMatrix<f64>) -> Forward {
        let [wq, wk, wv, wo] = self.blocks(theta);
        let q = x * from_row_major(self.dm, self.dh, wq);
        let k = x * from_row_major(self.dm, self.dh, wk);
        let v = x * from_row_major(self.dm, self.dh, wv);
        let mut a = &q * k.transpose() / (self.dh as f64).sqrt();
        for i in 0..self.l {
            let mx = a.row(i).max();
            let mut sum = 0.0;
            for j in 0..self.l {
                let e = (a[(i, j)] - mx).exp();
                a[(i, j)] = e;
                sum += e;
            }
            for j in 0..self.l {
                a[(i, j)] /= sum;
            }
        }
        let z = &a * &v;
        let out = &z * from_row_major(self.dh, self.dm, wo);
        Forward { q, k, v, a, z, out }
    }
}

pub struct AttentionModel {
    head: Head,
    x: Array2,
    y: Array2,
    teacher: Vec<f64>,
    init: Vec<f64>,
    gens: Arc<MatrixGenerators>,
    diag: Arc<MatrixGenerators>,
}

impl AttentionModel {
    pub fn from_dataset(ds: &Dataset, params: &Params) -> Result<Self> {
        let Dims { l, dm, dh } = dims(params)?;
        let x = ds.array("x")?.clone();
        if x.cols != l * dm {
            return Err(Error::DimensionMismatch { expected: l * dm, got: x.cols });
        }
        let init = init_weights(dm, dh, params.f64("student_scale", 1.0)?, &mut stream(ds.seed, INIT_STREAM))?;
        let dim = 4 * dm * dh;
        let blocks = vec![
            FactorBlock { offset: 0, rows: dm, cols: dh, action: BlockAction::Right },
            FactorBlock { offset: dm * dh, rows: dm, cols: dh, action: BlockAction::RightInvTranspose },
        ];
        Ok(Self {
            head: Head { l, dm, dh },
            y: ds.array("y")?.clone(),
            teacher: ds.array("teacher")?.data.clone(),
            x,
            init,
            gens: Arc::new(MatrixGenerators::general_linear("GL(d_head)", dim, dh, blocks.clone())),
            diag: Arc::new(MatrixGenerators::diagonal("GL(d_head) diagonal subalgebra", dim, dh, blocks)),
        })
    }

    pub fn teacher(&self) -> &[f64] {
        &self.teacher
    }

    /// Generators of the full `GL(d_head)` action on `(W_Q, W_K)`.
    pub fn gl_generators(&self) -> Arc<MatrixGenerators> {
        self.gens.clone()
    }

    /// Column norms `(|q_i|, |k_i|)` of `W_Q` and `W_K`.
    pub fn column_norms(&self, theta: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let [wq, wk, _, _] = self.head.blocks(theta);
        let (dm, dh) = (self.head.dm, self.head.dh);
        let col = |w: &[f64], j: usize| (0..dm).map(|i| w[i * dh + j].powi(2)).sum::<f64>().sqrt();
        ((0..dh).map(|j| col(wq, j)).collect(), (0..dh).map(|j| col(wk, j)).collect())
    }

    /// `max_i | |q_i| - |k_i| | / mean_i |q_i|`.
    pub fn balance_ratio(&self, theta: &[f64]) -> f64 {
        let (q, k) = self.column_norms(theta);
        let gap = q.iter().zip(&k).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        gap / (q.iter().sum::<f64>() / q.len() as f64)
    }

    fn sample(&self, s: usize) -> DMatrix<f64> {
        from_row_major(self.head.l, self.head.dm, self.x.row(s))
    }
}

impl Model for AttentionModel {
    fn kind(&self) -> ModelKind {
        ModelKind::AttentionTs
    }
    fn param_dim(&self) -> usize {
        4 * self.head.dm * self.head.dh
    }
    fn n_samples(&self) -> usize {
        self.x.rows
    }
    fn init(&self) -> Vec<f64> {
        self.init.clone()
    }
    fn loss(&self, theta: &[f64], batch: Batch) -> f64 {
        let mut acc = 0.0;
        batch.for_each(self.x.rows, |s| {
            let f = self.head.forward(theta, &self.sample(s));
            acc += (f.out - from_row_major(self.head.l, self.head.dm, self.y.row(s))).norm_squared();
        });
        acc / (batch.len(self.x.rows) * self.x.cols) as f64
    }
    fn loss_grad(&self, theta: &[f64], batch: Batch) -> (f64, Vec<f64>) {
        let Head { l, dm, dh } = self.head;
        let wo = from_row_major(dh, dm, self.head.blocks(theta)[3]);
        let norm = (batch.len(self.x.rows) * self.x.cols) as f64;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut gq = DMatrix::<f64>::zeros(dm, dh);
        let mut gk = DMatrix::<f64>::zeros(dm, dh);
        let mut gv = DMatrix::<f64>::zeros(dm, dh);
        let mut go = DMatrix::<f64>::zeros(dh, dm);
        let mut acc = 0.0;
        batch.for_each(self.x.rows, |s| {
            let x = self.sample(s);
            let f = self.head.forward(theta, &x);
            let target = from_row_major(l, dm, self.y.row(s));
            let diff = &f.out - target;
            acc += diff.norm_squared();
            let d_out = diff * (2.0 / norm);
            go += f.z.transpose() * &d_out;
            let dz = &d_out * wo.transpose();
            let da = &dz * f.v.transpose();
            let dv = f.a.transpose() * &dz;
            let mut ds = DMatrix::<f64>::zeros(l, l);
            for i in 0..l {
                let dot: f64 = (0..l).map(|j| da[(i, j)] * f.a[(i, j)]).sum();
                for j in 0..l {
                    ds[(i, j)] = f.a[(i, j)] * (da[(i, j)] - dot) * scale;
                }
            }
            let dq = &ds * &f.k;
            let dk = ds.transpose() * &f.q;
            let xt = x.transpose();
            gq += &xt * dq;
            gk += &xt * dk;
            gv += &xt * dv;
        });
        let mut g = to_row_major(&gq);
        g.extend(to_row_major(&gk));
        g.extend(to_row_major(&gv));
        g.extend(to_row_major(&go));
        (acc / norm, g)
    }
    fn generators(&self) -> Arc<dyn GeneratorSet> {
        self.gens.clone()
    }
    fn gauge(&self) -> Option<(Arc<dyn GeneratorSet>, GaugeMap)> {
        let g: Arc<dyn GeneratorSet> = self.diag.clone();
        Some((g.clone(), GaugeMap::explicit(Arc::new(QuadraticGauge::new(g)))))
    }
    fn invariants(&self, theta: &[f64]) -> NamedValues {
        let [wq, wk, wv, wo] = self.head.blocks(theta);
        let (dm, dh) = (self.head.dm, self.head.dh);
        let qk = from_row_major(dm, dh, wq) * from_row_major(dm, dh, wk).transpose();
        let vo = from_row_major(dm, dh, wv) * from_row_major(dh, dm, wo);
        NamedValues::from([("W_QK".to_string(), to_row_major(&qk)), ("W_VO".to_string(), to_row_major(&vo))])
    }
    fn observable_names(&self) -> Vec<&'static str> {
        vec!["balance_ratio"]
    }
    fn observable(&self, name: &str, theta: &[f64]) -> Option<f64> {
        (name == "balance_ratio").then(|| self.balance_ratio(theta))
    }
    fn balance_metrics(&self, theta: &[f64]) -> Result<NamedValues> {
        let (q, k) = self.column_norms(theta);
        let gaps = q.iter().zip(&k).map(|(a, b)| (a - b).abs()).collect();
        Ok(NamedValues::from([
            ("column_gap".to_string(), gaps),
            ("query_norm".to_string(), q),
            ("key_norm".to_string(), k),
        ]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_model, checks::check_model};

    fn small() -> Params {
        Params::new().with("seq_len", 4).with("d_model", 5).with("d_head", 3).with("n_train", 6)
    }

    #[test]
    fn model_checks() {
        let (m, _) = build_model(ModelKind::AttentionTs, &small(), 2).unwrap();
        check_model(m.as_ref(), 4);
    }

    #[test]
    fn invertible_action_preserves_loss() {
        let (m, ds) = build_model(ModelKind::AttentionTs, &small(), 5).unwrap();
        let am = AttentionModel::from_dataset(&ds, &small()).unwrap();
        let theta = m.init();
        let a = DMatrix::from_row_slice(3, 3, &[1.2, 0.3, -0.2, 0.1, 0.8, 0.4, -0.3, 0.2, 1.5]);
        let moved = am.gl_generators().apply_group(&a, &theta).unwrap();
        let (l0, l1) = (m.loss(&theta, Batch::Full), m.loss(&moved, Batch::Full));
        assert!((l0 - l1).abs() / l0.max(1.0) < 1e-12);
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 0.5, 3.0]));
        let moved = am.gl_generators().apply_group(&d, &theta).unwrap();
        assert!((m.loss(&moved, Batch::Full) - l0).abs() / l0.max(1.0) < 1e-12);
    }

    #[test]
    fn equal_query_key_has_zero_gaps() {
        let (m, _) = build_model(ModelKind::AttentionTs, &small(), 5).unwrap();
        let mut theta = m.init();
        let s = 15;
        let wq: Vec<f64> = theta[..s].to_vec();
        theta[s..2 * s].copy_from_slice(&wq);
        let gaps = &m.balance_metrics(&theta).unwrap()["column_gap"];
        assert!(gaps.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn teacher_is_a_zero_loss_point() {
        let (m, ds) = build_model(ModelKind::AttentionTs, &small(), 5).unwrap();
        let t = &ds.array("teacher").unwrap().data;
        assert!(m.loss(t, Batch::Full) < 1e-28);
    }
}

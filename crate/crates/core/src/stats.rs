//! Densities, goodness of fit and experiment metrics.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{singular_values, sym_eigen};
use crate::models::{Model, NamedValues};

/// Group norms above this count as active.
pub const ACTIVE_GROUP_THRESHOLD: f64 = 0.2;
/// Singular values at or above this fraction of the largest count toward the effective rank.
pub const EFFECTIVE_RANK_CUTOFF: f64 = 0.05;
/// Default histogram bin count for radial densities.
pub const DEFAULT_BINS: usize = 80;

const MIN_SAMPLES: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub density: Vec<f64>,
}

impl Histogram {
    pub fn centers(&self) -> Vec<f64> {
        self.bin_edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Two-column CSV `(x, density)` at bin centres.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_xy(path, &self.centers(), &self.density)
    }
}

/// Equal-width histogram over `[min, max]`, normalised to unit area.
pub fn empirical_density(samples: &[f64], bins: usize) -> Result<Histogram> {
    if samples.len() < MIN_SAMPLES {
        return Err(Error::InsufficientData(format!("{} samples, need at least {MIN_SAMPLES}", samples.len())));
    }
    if bins < 10 {
        return Err(Error::InvalidArgument(format!("need at least 10 bins, got {bins}")));
    }
    let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(Error::InsufficientData("samples span a zero-width range".into()));
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &s in samples {
        let b = (((s - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let n = samples.len() as f64;
    let density = counts.iter().map(|&c| c as f64 / (n * width)).collect();
    let bin_edges = (0..=bins).map(|i| lo + i as f64 * width).collect();
    Ok(Histogram { bin_edges, counts, density })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityCurve {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub label: String,
}

impl DensityCurve {
    /// Normalises `values` by trapezoid quadrature on `grid`.
    pub fn normalized(grid: Vec<f64>, values: Vec<f64>, label: &str) -> Result<Self> {
        if grid.len() < 2 || grid.len() != values.len() {
            return Err(Error::InvalidArgument("curve needs matching grid and values of length >= 2".into()));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("grid must be strictly increasing".into()));
        }
        let mut c = Self { grid, values, label: label.to_string() };
        let z = c.integral();
        if !(z > 0.0) || !z.is_finite() {
            return Err(Error::InvalidArgument("curve has no mass on the grid".into()));
        }
        c.values.iter_mut().for_each(|v| *v /= z);
        Ok(c)
    }

    pub fn integral(&self) -> f64 {
        self.cumulative().last().copied().unwrap_or(0.0)
    }

    /// Cumulative trapezoid integral at each grid point.
    pub fn cumulative(&self) -> Vec<f64> {
        let mut acc = 0.0;
        let mut out = Vec::with_capacity(self.grid.len());
        out.push(0.0);
        for i in 1..self.grid.len() {
            acc += 0.5 * (self.values[i] + self.values[i - 1]) * (self.grid[i] - self.grid[i - 1]);
            out.push(acc);
        }
        out
    }

    /// CDF by linear interpolation of the cumulative trapezoid; clamped outside the grid.
    pub fn cdf(&self, cum: &[f64], x: f64) -> f64 {
        let g = &self.grid;
        if x <= g[0] {
            return 0.0;
        }
        if x >= g[g.len() - 1] {
            return cum[cum.len() - 1];
        }
        let k = g.partition_point(|&v| v <= x) - 1;
        let t = (x - g[k]) / (g[k + 1] - g[k]);
        cum[k] + t * (cum[k + 1] - cum[k])
    }

    pub fn argmax(&self) -> f64 {
        let i = (0..self.values.len()).max_by(|&a, &b| self.values[a].total_cmp(&self.values[b])).unwrap_or(0);
        self.grid[i]
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_xy(path, &self.grid, &self.values)
    }
}

fn write_xy(path: &Path, x: &[f64], y: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x", "density"])?;
    for (a, b) in x.iter().zip(y) {
        w.write_record([a.to_string(), b.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// `r^{d-1} exp(-beta (r-1)^2 / 2)` (or without the `r^{d-1}` factor), normalised on `grid`.
pub fn radial_theory_density(d: usize, beta: f64, grid: &[f64], corrected: bool) -> Result<DensityCurve> {
    if grid.iter().any(|&r| !(r > 0.0)) {
        return Err(Error::InvalidArgument("radial grid must be positive".into()));
    }
    let values = radial_unnormalized(d, beta, grid, corrected);
    let label = if corrected { "gauge" } else { "naive" };
    DensityCurve::normalized(grid.to_vec(), values, label)
}

/// Unnormalised radial density values.
pub fn radial_unnormalized(d: usize, beta: f64, grid: &[f64], corrected: bool) -> Vec<f64> {
    grid.iter()
        .map(|&r| {
            let base = -0.5 * beta * (r - 1.0).powi(2);
            let log = if corrected { base + (d as f64 - 1.0) * r.ln() } else { base };
            log.exp()
        })
        .collect()
}

/// Kolmogorov-Smirnov distance between the sample ECDF and the curve's CDF.
pub fn ks_distance(samples: &[f64], curve: &DensityCurve) -> Result<f64> {
    if samples.len() < MIN_SAMPLES {
        return Err(Error::InsufficientData(format!("{} samples, need at least {MIN_SAMPLES}", samples.len())));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let cum = curve.cumulative();
    let total = cum[cum.len() - 1];
    let n = s.len() as f64;
    let mut worst = 0.0_f64;
    for (i, &x) in s.iter().enumerate() {
        let f = curve.cdf(&cum, x) / total;
        worst = worst.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs());
    }
    Ok(worst.min(1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaugeEnergies {
    /// `log(a_i + b_i)` per mode, `None` for singular modes.
    pub energies: Vec<Option<f64>>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

/// Per-mode energies from the descending eigenvalues of `U^T U` and `V^T V`.
pub fn gauge_energy_modes(u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<GaugeEnergies> {
    if u.ncols() != v.ncols() {
        return Err(Error::DimensionMismatch { expected: u.ncols(), got: v.ncols() });
    }
    let desc = |m: &DMatrix<f64>| {
        let (mut vals, _) = sym_eigen(&(m.transpose() * m));
        vals.reverse();
        vals.into_iter().map(|x| x.max(0.0)).collect::<Vec<f64>>()
    };
    let (a, b) = (desc(u), desc(v));
    let energies = a
        .iter()
        .zip(&b)
        .map(|(x, y)| {
            let s = x + y;
            (s > 1e-300).then(|| s.ln())
        })
        .collect();
    Ok(GaugeEnergies { energies, a, b })
}

/// Count of singular values at least `EFFECTIVE_RANK_CUTOFF` times the largest.
pub fn effective_rank(sv: &[f64]) -> usize {
    let top = sv.iter().cloned().fold(0.0, f64::max);
    if top <= 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s >= EFFECTIVE_RANK_CUTOFF * top).count()
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormSummary {
    pub l1: f64,
    pub l2: f64,
    pub nuclear: f64,
    pub singular_values: Vec<f64>,
    pub effective_rank: usize,
    pub group_norms: Option<Vec<f64>>,
    pub group_norm_sum: Option<f64>,
    pub active_groups: Option<usize>,
}

/// Norms of a matrix (a vector is a single column), with optional group layout.
pub fn norms_and_spectra(w: &DMatrix<f64>, groups: Option<&[Vec<usize>]>, threshold: f64) -> Result<NormSummary> {
    let flat: Vec<f64> = w.iter().copied().collect();
    let sv = singular_values(w);
    let group_norms = match groups {
        None => None,
        Some(gs) => Some(
            gs.iter()
                .map(|g| {
                    g.iter()
                        .map(|&i| {
                            flat.get(i).copied().ok_or(Error::DimensionMismatch { expected: flat.len(), got: i + 1 })
                        })
                        .try_fold(0.0, |acc, x| x.map(|v| acc + v * v))
                        .map(f64::sqrt)
                })
                .collect::<Result<Vec<f64>>>()?,
        ),
    };
    Ok(NormSummary {
        l1: flat.iter().map(|x| x.abs()).sum(),
        l2: flat.iter().map(|x| x * x).sum::<f64>().sqrt(),
        nuclear: sv.iter().sum(),
        effective_rank: effective_rank(&sv),
        singular_values: sv,
        group_norm_sum: group_norms.as_ref().map(|g| g.iter().sum()),
        active_groups: group_norms.as_ref().map(|g| g.iter().filter(|&&n| n > threshold).count()),
        group_norms,
    })
}

pub fn total_variation(x: &[f64]) -> f64 {
    x.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

/// Median, sorting `vals` in place.
pub fn median(vals: &mut [f64]) -> Option<f64> {
    if vals.is_empty() {
        return None;
    }
    vals.sort_by(f64::total_cmp);
    let n = vals.len();
    Some(if n % 2 == 1 { vals[n / 2] } else { 0.5 * (vals[n / 2 - 1] + vals[n / 2]) })
}

/// Kind-specific per-unit balance diagnostics.
pub fn balance_metrics(model: &dyn Model, theta: &[f64]) -> Result<NamedValues> {
    crate::error::check_dim(model.param_dim(), theta.len())?;
    model.balance_metrics(theta)
}

/// Incoming vs outgoing norms of each hidden unit in a deep fully connected network.
///
/// `layers[l]` has shape `(fan_out, fan_in)`; hidden units sit between consecutive layers.
pub fn deep_fc_balance(layers: &[DMatrix<f64>]) -> Result<NamedValues> {
    let mut out = BTreeMap::new();
    for (l, pair) in layers.windows(2).enumerate() {
        let (inc, outg) = (&pair[0], &pair[1]);
        if inc.nrows() != outg.ncols() {
            return Err(Error::DimensionMismatch { expected: inc.nrows(), got: outg.ncols() });
        }
        out.insert(format!("w_in_{l}"), (0..inc.nrows()).map(|i| inc.row(i).norm()).collect());
        out.insert(format!("w_out_{l}"), (0..outg.ncols()).map(|i| outg.column(i).norm()).collect());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal, stream};
    use approx::assert_relative_eq;
    use rand::Rng as _;

    #[test]
    fn uniform_histogram_is_flat() {
        let mut rng = stream(1, 0);
        let s: Vec<f64> = (0..1_000_000).map(|_| rng.random::<f64>()).collect();
        let h = empirical_density(&s, 50).unwrap();
        assert!(h.density.iter().all(|d| (d - 1.0).abs() < 0.05));
        let area: f64 = h.density.iter().zip(h.bin_edges.windows(2)).map(|(d, w)| d * (w[1] - w[0])).sum();
        assert_relative_eq!(area, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn gaussian_histogram_peak() {
        let mut rng = stream(2, 0);
        let s: Vec<f64> = (0..1_000_000).map(|_| normal(&mut rng)).collect();
        let h = empirical_density(&s, 200).unwrap();
        let c = h.centers();
        let i = (0..c.len()).min_by(|&a, &b| c[a].abs().total_cmp(&c[b].abs())).unwrap();
        assert!((h.density[i] - 0.3989).abs() / 0.3989 < 0.05, "{}", h.density[i]);
    }

    #[test]
    fn degenerate_histograms() {
        assert!(matches!(empirical_density(&[1.0; 2000], 20), Err(Error::InsufficientData(_))));
        assert!(matches!(empirical_density(&[1.0; 10], 20), Err(Error::InsufficientData(_))));
    }

    fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn radial_curves() {
        let g = grid(0.01, 3.0, 2000);
        let c = radial_theory_density(10, 10.0, &g, true).unwrap();
        assert_relative_eq!(c.integral(), 1.0, epsilon = 1e-8);
        let fine = grid(1.5, 1.65, 150_001);
        let peak = radial_theory_density(10, 10.0, &fine, true).unwrap().argmax();
        assert!((peak - (10.0 + 460f64.sqrt()) / 20.0).abs() < 1e-5, "{peak}");
        let a = radial_theory_density(1, 3.0, &g, true).unwrap();
        let b = radial_theory_density(1, 3.0, &g, false).unwrap();
        assert_eq!(a.values, b.values);
        let ratio = radial_unnormalized(10, 1.0, &[2.0], true)[0] / radial_unnormalized(10, 1.0, &[2.0], false)[0];
        assert_relative_eq!(ratio, 512.0, epsilon = 1e-9);
    }

    #[test]
    fn ks_self_consistency() {
        let g = grid(0.01, 3.0, 4000);
        let c = radial_theory_density(10, 10.0, &g, true).unwrap();
        let cum = c.cumulative();
        let mut rng = stream(3, 0);
        let samples: Vec<f64> = (0..100_000)
            .map(|_| {
                let u: f64 = rng.random();
                let k = cum.partition_point(|&v| v < u).clamp(1, g.len() - 1);
                let t = (u - cum[k - 1]) / (cum[k] - cum[k - 1]);
                g[k - 1] + t * (g[k] - g[k - 1])
            })
            .collect();
        assert!(ks_distance(&samples, &c).unwrap() < 0.01);
    }

    #[test]
    fn ks_gross_mismatch_and_uniform() {
        let g = grid(0.0, 1.0, 11);
        let flat = DensityCurve::normalized(g.clone(), vec![1.0; 11], "u").unwrap();
        assert!(ks_distance(&vec![0.9; 2000], &flat).unwrap() > 0.4);
        let mut rng = stream(4, 0);
        let s: Vec<f64> = (0..100_000).map(|_| rng.random::<f64>()).collect();
        let k1 = ks_distance(&s, &flat).unwrap();
        assert!(k1 < 0.005, "{k1}");
        let fine = DensityCurve::normalized(grid(0.0, 1.0, 101), vec![1.0; 101], "u").unwrap();
        assert!((ks_distance(&s, &fine).unwrap() - k1).abs() < 1e-12);
        let mut rev = s.clone();
        rev.reverse();
        assert_eq!(ks_distance(&rev, &flat).unwrap(), k1);
    }

    #[test]
    fn energy_modes() {
        let u = DMatrix::from_row_slice(2, 2, &[3f64.sqrt(), 0.0, 0.0, 1.0]);
        let e = gauge_energy_modes(&u, &u).unwrap();
        assert_relative_eq!(e.energies[0].unwrap(), 6f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(e.energies[1].unwrap(), 2f64.ln(), epsilon = 1e-12);
        let z = DMatrix::zeros(3, 2);
        assert_eq!(gauge_energy_modes(&z, &z).unwrap().energies, vec![None, None]);
    }

    #[test]
    fn energies_move_along_orbit() {
        let u = DMatrix::from_row_slice(3, 2, &[1.0, 0.2, -0.3, 0.8, 0.5, 0.1]);
        let v = DMatrix::from_row_slice(3, 2, &[0.4, 1.1, 0.9, -0.2, 0.3, 0.6]);
        let r = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.0, 0.7]);
        let (u2, v2) = (&u * &r, &v * r.try_inverse().unwrap().transpose());
        assert!(((&u * v.transpose()) - (&u2 * v2.transpose())).norm() < 1e-12);
        let (e1, e2) = (gauge_energy_modes(&u, &v).unwrap(), gauge_energy_modes(&u2, &v2).unwrap());
        assert!((e1.energies[0].unwrap() - e2.energies[0].unwrap()).abs() > 1e-3);
    }

    #[test]
    fn norms() {
        let w = DMatrix::from_column_slice(2, 1, &[3.0, -4.0]);
        let s = norms_and_spectra(&w, None, ACTIVE_GROUP_THRESHOLD).unwrap();
        assert_eq!((s.l1, s.l2), (7.0, 5.0));
        let d = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 1.0]);
        let s = norms_and_spectra(&d, None, ACTIVE_GROUP_THRESHOLD).unwrap();
        assert_relative_eq!(s.nuclear, 5.0, epsilon = 1e-12);
        assert_relative_eq!(s.singular_values[0], 4.0, epsilon = 1e-12);
        let v = DMatrix::from_column_slice(4, 1, &[3.0, 4.0, 0.0, 0.0]);
        let s = norms_and_spectra(&v, Some(&[vec![0, 1], vec![2, 3]]), ACTIVE_GROUP_THRESHOLD).unwrap();
        assert_eq!(s.group_norm_sum, Some(5.0));
        assert_eq!(s.active_groups, Some(1));
    }

    #[test]
    fn tv_examples() {
        assert_eq!(total_variation(&[0.0, 0.0, 1.0, 1.0]), 1.0);
        assert_eq!(total_variation(&[2.0; 5]), 0.0);
        assert_eq!(total_variation(&[0.0, 1.0, 0.0, 1.0]), 3.0);
    }

    #[test]
    fn tv_of_cumsum_is_l1() {
        let mut rng = stream(5, 0);
        for _ in 0..100 {
            let g: Vec<f64> =
                (0..30).map(|_| if rng.random::<f64>() < 0.2 { rng.random::<f64>() * 3.0 } else { 0.0 }).collect();
            let mut c = vec![0.0];
            for x in &g {
                c.push(c.last().unwrap() + x);
            }
            assert_relative_eq!(total_variation(&c), g.iter().map(|x| x.abs()).sum::<f64>(), epsilon = 1e-12);
        }
    }

    #[test]
    fn deep_fc_balance_shapes() {
        let w1 = DMatrix::from_row_slice(2, 3, &[3.0, 4.0, 0.0, 0.0, 0.0, 1.0]);
        let w2 = DMatrix::from_row_slice(1, 2, &[5.0, 1.0]);
        let b = deep_fc_balance(&[w1, w2]).unwrap();
        assert_eq!(b["w_in_0"], vec![5.0, 1.0]);
        assert_eq!(b["w_out_0"], vec![5.0, 1.0]);
    }
}

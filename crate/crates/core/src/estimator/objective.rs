//! Weighted quantized log-likelihoods over sufficient statistics.
//!
//! Every pmf depends on `k` only through `k % period`, so the data reduce to
//! counts per `(sensor, pattern, level)` cell and every weight used by EM or
//! by the barrier problem is constant within a cell.

use nalgebra::{DMatrix, DVector};

use super::dataset::QuantizedDataset;
use crate::error::{Error, Result};
use crate::family::Moments;
use crate::model::{NetworkModel, Sensor};
use crate::pmf::{level_derivs, level_gradient, level_hessian, level_probs, LevelDerivs};

/// Observation counts per `(sensor, pattern, level)`; cell index `m * R + r`.
#[derive(Debug, Clone)]
pub struct SufficientStats {
    pub(crate) counts: Vec<Vec<f64>>,
    pub(crate) periods: Vec<usize>,
    pub(crate) levels: Vec<usize>,
    pub(crate) observations: Vec<usize>,
}

impl SufficientStats {
    pub fn new(model: &NetworkModel, data: &QuantizedDataset) -> Result<Self> {
        data.check(model)?;
        let n = model.n_sensors();
        let mut counts = Vec::with_capacity(n);
        let mut periods = Vec::with_capacity(n);
        let mut levels = Vec::with_capacity(n);
        let mut observations = Vec::with_capacity(n);
        for j in 0..n {
            let sensor = model.sensor(j);
            let period = sensor.period();
            let r = sensor.levels();
            let mut c = vec![0.0; period * r];
            for (k, &level) in data.levels(j).iter().enumerate() {
                c[(k % period) * r + level - 1] += 1.0;
            }
            counts.push(c);
            periods.push(period);
            levels.push(r);
            observations.push(data.observations(j));
        }
        Ok(Self { counts, periods, levels, observations })
    }

    pub fn n_sensors(&self) -> usize {
        self.counts.len()
    }

    pub fn observations(&self, j: usize) -> usize {
        self.observations[j]
    }
}

/// Position of `theta` and of each active `xi_j` in the optimization vector.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub theta_dim: usize,
    pub offsets: Vec<Option<usize>>,
    pub dims: Vec<usize>,
    pub total: usize,
}

impl Layout {
    pub fn new(model: &NetworkModel, active: &[bool]) -> Self {
        let theta_dim = model.theta_dim();
        let mut total = theta_dim;
        let mut offsets = Vec::with_capacity(active.len());
        let mut dims = Vec::with_capacity(active.len());
        for (j, &a) in active.iter().enumerate() {
            let d = model.sensor(j).attack_dim();
            dims.push(d);
            if a {
                offsets.push(Some(total));
                total += d;
            } else {
                offsets.push(None);
            }
        }
        Self { theta_dim, offsets, dims, total }
    }

    pub fn pack(&self, theta: &[f64], xi: &[Vec<f64>]) -> DVector<f64> {
        let mut x = DVector::zeros(self.total);
        x.rows_mut(0, self.theta_dim).copy_from_slice(theta);
        for (j, off) in self.offsets.iter().enumerate() {
            if let Some(o) = off {
                x.rows_mut(*o, self.dims[j]).copy_from_slice(&xi[j]);
            }
        }
        x
    }

    /// Write `x` back into `theta` and the active `xi` entries.
    pub fn unpack(&self, x: &DVector<f64>, theta: &mut [f64], xi: &mut [Vec<f64>]) {
        theta.copy_from_slice(x.rows(0, self.theta_dim).as_slice());
        for (j, off) in self.offsets.iter().enumerate() {
            if let Some(o) = off {
                xi[j].copy_from_slice(x.rows(*o, self.dims[j]).as_slice());
            }
        }
    }

    /// Index in `x` of component `i` of the stacked `[theta; xi_j]`.
    fn index(&self, j: usize, i: usize) -> Option<usize> {
        if i < self.theta_dim {
            Some(i)
        } else {
            self.offsets[j].map(|o| o + i - self.theta_dim)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub(crate) enum Order {
    Value,
    #[cfg_attr(not(test), allow(dead_code))]
    Gradient,
    Hessian,
}

#[derive(Debug, Clone)]
pub(crate) struct Eval {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

impl Eval {
    fn new(n: usize, order: Order) -> Self {
        let (g, h) = match order {
            Order::Value => (0, 0),
            Order::Gradient => (n, 0),
            Order::Hessian => (n, n),
        };
        Self { value: 0.0, grad: DVector::zeros(g), hess: DMatrix::zeros(h, h) }
    }

    pub fn infeasible(n: usize, order: Order) -> Self {
        let mut e = Self::new(n, order);
        e.value = f64::NEG_INFINITY;
        e
    }
}

/// Cell weights `w[j][m * R + r]` of the unattacked (`w0`) and attacked (`w1`) hypotheses.
#[derive(Debug, Clone)]
pub(crate) struct Weights {
    pub w0: Vec<Vec<f64>>,
    pub w1: Vec<Vec<f64>>,
}

impl Weights {
    /// Weights of a hard assignment `eta`.
    pub fn hard(stats: &SufficientStats, eta: &[bool]) -> Self {
        let zero = |j: usize| vec![0.0; stats.counts[j].len()];
        let (w0, w1) = (0..stats.n_sensors())
            .map(|j| if eta[j] { (zero(j), stats.counts[j].clone()) } else { (stats.counts[j].clone(), zero(j)) })
            .unzip();
        Self { w0, w1 }
    }

    pub fn attacked_mass(&self, j: usize) -> f64 {
        self.w1[j].iter().sum()
    }
}

pub(crate) fn valid(mean: f64, var: f64) -> bool {
    mean.is_finite() && var.is_finite() && var > 0.0
}

/// Add `sum_r w_r ln p_r` and its derivatives for one cell.
fn accumulate(
    out: &mut Eval,
    sensor: &Sensor,
    m: Moments,
    weights: &[f64],
    scatter: &dyn Fn(usize) -> Option<usize>,
    order: Order,
) -> bool {
    if !valid(m.mean, m.var) {
        return false;
    }
    if order == Order::Value {
        let p = level_probs(&sensor.quantizer, m.mean, m.var);
        out.value += weights.iter().zip(&p).map(|(w, p)| if *w > 0.0 { w * p.ln() } else { 0.0 }).sum::<f64>();
        return true;
    }
    let ld: LevelDerivs = level_derivs(&sensor.quantizer, m.mean, m.var);
    let (mut a_mu, mut a_v, mut a_mumu, mut a_muv, mut a_vv) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (r, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let p = ld.p[r];
        out.value += w * p.ln();
        let (gm, gv) = (ld.p_mu[r] / p, ld.p_v[r] / p);
        a_mu += w * gm;
        a_v += w * gv;
        a_mumu += w * (ld.p_mumu[r] / p - gm * gm);
        a_muv += w * (ld.p_muv[r] / p - gm * gv);
        a_vv += w * (ld.p_vv[r] / p - gv * gv);
    }
    let n = m.dim();
    let idx: Vec<Option<usize>> = (0..n).map(scatter).collect();
    for i in 0..n {
        let Some(a) = idx[i] else { continue };
        out.grad[a] += a_mu * m.d_mean[i] + a_v * m.d_var[i];
        if order == Order::Hessian {
            for l in 0..n {
                let Some(b) = idx[l] else { continue };
                out.hess[(a, b)] += a_mumu * m.d_mean[i] * m.d_mean[l]
                    + a_muv * (m.d_mean[i] * m.d_var[l] + m.d_var[i] * m.d_mean[l])
                    + a_vv * m.d_var[i] * m.d_var[l]
                    + a_mu * m.h_mean[(i, l)]
                    + a_v * m.h_var[(i, l)];
            }
        }
    }
    true
}

fn cell_moments(sensor: &Sensor, theta: &[f64], xi: Option<&[f64]>, m: usize, order: Order) -> Moments {
    if order == Order::Value {
        let (mean, var) = sensor.mean_var(theta, xi, m);
        let dim = theta.len() + xi.map_or(0, <[f64]>::len);
        return Moments {
            mean,
            var,
            d_mean: DVector::zeros(dim),
            d_var: DVector::zeros(dim),
            h_mean: DMatrix::zeros(0, 0),
            h_var: DMatrix::zeros(0, 0),
        };
    }
    sensor.moments(theta, xi, m)
}

/// `sum_j sum_cells w0 ln q + w1 ln q~` with derivatives over the layout's variables.
/// Returns a `-inf` value where some variance is not positive.
pub(crate) fn weighted_loglik(
    model: &NetworkModel,
    stats: &SufficientStats,
    theta: &[f64],
    xi: &[Vec<f64>],
    weights: &Weights,
    layout: &Layout,
    order: Order,
) -> Eval {
    let mut out = Eval::new(layout.total, order);
    for j in 0..stats.n_sensors() {
        let sensor = model.sensor(j);
        let r = stats.levels[j];
        for m in 0..stats.periods[j] {
            let cell = m * r..(m + 1) * r;
            let w0 = &weights.w0[j][cell.clone()];
            if w0.iter().any(|&w| w > 0.0) {
                let mom = cell_moments(sensor, theta, None, m, order);
                let scatter = |i: usize| Some(i);
                if !accumulate(&mut out, sensor, mom, w0, &scatter, order) {
                    return Eval::infeasible(layout.total, order);
                }
            }
            let w1 = &weights.w1[j][cell];
            if w1.iter().any(|&w| w > 0.0) {
                let mom = cell_moments(sensor, theta, Some(&xi[j]), m, order);
                let scatter = |i: usize| layout.index(j, i);
                if !accumulate(&mut out, sensor, mom, w1, &scatter, order) {
                    return Eval::infeasible(layout.total, order);
                }
            }
        }
    }
    if !out.value.is_finite() {
        return Eval::infeasible(layout.total, order);
    }
    out
}

/// Average pmf distortion of sensor `j` with derivatives over `[theta; xi_j]`.
pub(crate) fn distortion_derivs(
    sensor: &Sensor,
    stats: &SufficientStats,
    j: usize,
    theta: &[f64],
    xi: &[f64],
    order: Order,
) -> Option<Eval> {
    let dt = theta.len();
    let n = dt + xi.len();
    let mut out = Eval::new(n, order);
    let total = stats.observations[j] as f64;
    for m in 0..stats.periods[j] {
        let count = sensor_pattern_count(stats, j, m);
        if count == 0 {
            continue;
        }
        let w = count as f64 / total;
        let f = cell_moments(sensor, theta, None, m, order);
        let g = cell_moments(sensor, theta, Some(xi), m, order);
        if !valid(f.mean, f.var) || !valid(g.mean, g.var) {
            return None;
        }
        if order == Order::Value {
            let q = level_probs(&sensor.quantizer, f.mean, f.var);
            let qa = level_probs(&sensor.quantizer, g.mean, g.var);
            out.value += w * q.iter().zip(&qa).map(|(a, b)| (b - a).powi(2)).sum::<f64>().sqrt();
            continue;
        }
        let lf = level_derivs(&sensor.quantizer, f.mean, f.var);
        let lg = level_derivs(&sensor.quantizer, g.mean, g.var);
        let mut f_pad = f.clone();
        f_pad.d_mean = f.d_mean.clone().resize_vertically(n, 0.0);
        f_pad.d_var = f.d_var.clone().resize_vertically(n, 0.0);
        f_pad.h_mean = f.h_mean.clone().resize(n, n, 0.0);
        f_pad.h_var = f.h_var.clone().resize(n, n, 0.0);
        let levels = sensor.levels();
        let e: Vec<f64> = (0..levels).map(|r| lg.p[r] - lf.p[r]).collect();
        let s = e.iter().map(|v| v * v).sum::<f64>().sqrt();
        if s <= f64::MIN_POSITIVE {
            return None;
        }
        out.value += w * s;
        let grads: Vec<DVector<f64>> =
            (0..levels).map(|r| level_gradient(&lg, &g, r) - level_gradient(&lf, &f_pad, r)).collect();
        let jt_e = grads.iter().zip(&e).fold(DVector::zeros(n), |acc, (gr, er)| acc + gr * *er);
        out.grad += &jt_e * (w / s);
        if order == Order::Hessian {
            let mut h = DMatrix::zeros(n, n);
            for r in 0..levels {
                h += &grads[r] * grads[r].transpose();
                h += (level_hessian(&lg, &g, r) - level_hessian(&lf, &f_pad, r)) * e[r];
            }
            out.hess += (h / s - &jt_e * jt_e.transpose() / (s * s * s)) * w;
        }
    }
    Some(out)
}

fn sensor_pattern_count(stats: &SufficientStats, j: usize, m: usize) -> usize {
    let period = stats.periods[j];
    let k = stats.observations[j];
    k / period + usize::from(m < k % period)
}

/// Relaxed observed-data objective `sum n ln(pi q~ + (1 - pi) q)` and the
/// posterior attack probability of every cell.
pub(crate) fn mixture(
    model: &NetworkModel,
    stats: &SufficientStats,
    theta: &[f64],
    xi: &[Vec<f64>],
    pi: &[f64],
) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut objective = 0.0;
    let mut upsilon = Vec::with_capacity(stats.n_sensors());
    for j in 0..stats.n_sensors() {
        let sensor = model.sensor(j);
        let r = stats.levels[j];
        let mut u = vec![0.0; stats.counts[j].len()];
        for m in 0..stats.periods[j] {
            let (mf, vf) = sensor.mean_var(theta, None, m);
            let (mg, vg) = sensor.mean_var(theta, Some(&xi[j]), m);
            if !valid(mf, vf) || !valid(mg, vg) {
                return Err(Error::NonPositiveVariance { sensor: j, variance: vf.min(vg) });
            }
            let q = level_probs(&sensor.quantizer, mf, vf);
            let qa = level_probs(&sensor.quantizer, mg, vg);
            for l in 0..r {
                let a = pi[j] * qa[l];
                let total = a + (1.0 - pi[j]) * q[l];
                u[m * r + l] = a / total;
                let n = stats.counts[j][m * r + l];
                if n > 0.0 {
                    objective += n * total.ln();
                }
            }
        }
        upsilon.push(u);
    }
    Ok((objective, upsilon))
}

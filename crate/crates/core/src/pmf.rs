//! Quantized pmfs, their parameter derivatives, sampling and pmf distortion.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::family::Moments;
use crate::model::{NetworkModel, ParameterPoint, Sensor};
use crate::normal;
use crate::quantizer::Quantizer;

/// Floor applied to every cell probability before renormalization.
pub const P_MIN: f64 = 1e-12;

/// Cell probabilities of a Gaussian `N(mean, var)` and their derivatives with
/// respect to `mean` and `var`.
#[derive(Debug, Clone)]
pub(crate) struct LevelDerivs {
    pub p: Vec<f64>,
    pub p_mu: Vec<f64>,
    pub p_v: Vec<f64>,
    pub p_mumu: Vec<f64>,
    pub p_muv: Vec<f64>,
    pub p_vv: Vec<f64>,
}

fn floor_normalize(p: &mut [f64]) {
    let mut total = 0.0;
    for v in p.iter_mut() {
        *v = v.max(P_MIN);
        total += *v;
    }
    for v in p.iter_mut() {
        *v /= total;
    }
}

/// Floored, renormalized cell probabilities.
pub(crate) fn level_probs(q: &Quantizer, mean: f64, var: f64) -> Vec<f64> {
    let sd = var.sqrt();
    let mut lo = f64::NEG_INFINITY;
    let mut p = Vec::with_capacity(q.levels());
    for &t in q.thresholds() {
        let a = (t - mean) / sd;
        p.push(normal::interval(lo, a));
        lo = a;
    }
    p.push(normal::interval(lo, f64::INFINITY));
    floor_normalize(&mut p);
    p
}

pub(crate) fn level_derivs(q: &Quantizer, mean: f64, var: f64) -> LevelDerivs {
    let r = q.levels();
    let sd = var.sqrt();
    // Threshold contributions G(t) = Phi((t - mean)/sd) and its derivatives.
    let mut g = vec![[0.0f64; 5]; r + 1];
    for (i, &t) in q.thresholds().iter().enumerate() {
        let a = (t - mean) / sd;
        let phi = normal::pdf(a);
        g[i + 1] = [
            -phi / sd,
            -a * phi / (2.0 * var),
            -a * phi / var,
            phi * (1.0 - a * a) / (2.0 * var * sd),
            a * phi * (3.0 - a * a) / (4.0 * var * var),
        ];
    }
    let diff = |c: usize| (0..r).map(|l| g[l + 1][c] - g[l][c]).collect::<Vec<f64>>();
    LevelDerivs {
        p: level_probs(q, mean, var),
        p_mu: diff(0),
        p_v: diff(1),
        p_mumu: diff(2),
        p_muv: diff(3),
        p_vv: diff(4),
    }
}

pub(crate) fn checked(sensor_index: usize, mean: f64, var: f64) -> Result<()> {
    if !mean.is_finite() || !var.is_finite() {
        return Err(Error::NonFinite(format!("sensor {sensor_index} has mean {mean}, variance {var}")));
    }
    if var <= 0.0 {
        return Err(Error::NonPositiveVariance { sensor: sensor_index, variance: var });
    }
    Ok(())
}

/// Quantized pmf of one observation with first and second derivatives.
#[derive(Debug, Clone)]
pub struct PmfBundle {
    pub pmf: Vec<f64>,
    /// `D_theta x R` first derivatives.
    pub d_theta: DMatrix<f64>,
    /// `d x R` first derivatives w.r.t. the attack parameter (zero rows when unattacked).
    pub d_attack: DMatrix<f64>,
    /// Per-level Hessians over `[theta; xi]`.
    pub hessians: Vec<DMatrix<f64>>,
}

impl PmfBundle {
    pub fn levels(&self) -> usize {
        self.pmf.len()
    }

    fn theta_dim(&self) -> usize {
        self.d_theta.nrows()
    }

    pub fn hess_theta_theta(&self, r: usize) -> DMatrix<f64> {
        let dt = self.theta_dim();
        self.hessians[r].view((0, 0), (dt, dt)).into_owned()
    }

    pub fn hess_theta_attack(&self, r: usize) -> DMatrix<f64> {
        let dt = self.theta_dim();
        let d = self.d_attack.nrows();
        self.hessians[r].view((0, dt), (dt, d)).into_owned()
    }

    pub fn hess_attack_attack(&self, r: usize) -> DMatrix<f64> {
        let dt = self.theta_dim();
        let d = self.d_attack.nrows();
        self.hessians[r].view((dt, dt), (d, d)).into_owned()
    }
}

/// Per-level gradient of `p_r` over the moment parameters.
pub(crate) fn level_gradient(ld: &LevelDerivs, m: &Moments, r: usize) -> DVector<f64> {
    &m.d_mean * ld.p_mu[r] + &m.d_var * ld.p_v[r]
}

pub(crate) fn level_hessian(ld: &LevelDerivs, m: &Moments, r: usize) -> DMatrix<f64> {
    let cross = &m.d_mean * m.d_var.transpose();
    &m.d_mean * m.d_mean.transpose() * ld.p_mumu[r]
        + (&cross + cross.transpose()) * ld.p_muv[r]
        + &m.d_var * m.d_var.transpose() * ld.p_vv[r]
        + &m.h_mean * ld.p_mu[r]
        + &m.h_var * ld.p_v[r]
}

/// Bundle for sensor `j` under the hypothesis given by `xi` (`None` = unattacked).
pub fn sensor_bundle(sensor: &Sensor, j: usize, theta: &[f64], xi: Option<&[f64]>, k: usize) -> Result<PmfBundle> {
    let m = sensor.moments(theta, xi, k);
    checked(j, m.mean, m.var)?;
    let ld = level_derivs(&sensor.quantizer, m.mean, m.var);
    let dt = theta.len();
    let d = xi.map_or(0, <[f64]>::len);
    let r = sensor.levels();
    let mut d_theta = DMatrix::zeros(dt, r);
    let mut d_attack = DMatrix::zeros(d, r);
    let mut hessians = Vec::with_capacity(r);
    for l in 0..r {
        let grad = level_gradient(&ld, &m, l);
        d_theta.column_mut(l).copy_from(&grad.rows(0, dt));
        d_attack.column_mut(l).copy_from(&grad.rows(dt, d));
        hessians.push(level_hessian(&ld, &m, l));
    }
    Ok(PmfBundle { pmf: ld.p, d_theta, d_attack, hessians })
}

fn hypothesis<'a>(model: &NetworkModel, point: &'a ParameterPoint, j: usize, attacked: bool) -> Result<Option<&'a [f64]>> {
    point.validate(model)?;
    if j >= model.n_sensors() {
        return Err(Error::DimensionMismatch(format!("sensor {j} does not exist")));
    }
    if !attacked {
        return Ok(None);
    }
    point
        .xi_for(model, j)
        .map(Some)
        .ok_or_else(|| Error::InvalidModel(format!("sensor {j} is not in an attack group")))
}

/// Pmf bundle of sensor `j` at time `k`; `attacked` selects the after-attack family.
pub fn pmf_bundle(model: &NetworkModel, point: &ParameterPoint, j: usize, k: usize, attacked: bool) -> Result<PmfBundle> {
    let xi = hypothesis(model, point, j, attacked)?;
    sensor_bundle(model.sensor(j), j, &point.theta, xi, k)
}

pub fn sample_sensor_level<R: Rng + ?Sized>(
    sensor: &Sensor,
    theta: &[f64],
    xi: Option<&[f64]>,
    k: usize,
    rng: &mut R,
) -> Result<usize> {
    let (mean, var) = sensor.mean_var(theta, xi, k);
    checked(0, mean, var)?;
    let z: f64 = rng.sample(StandardNormal);
    sensor.quantizer.quantize(mean + var.sqrt() * z)
}

/// Draw the quantized observation of sensor `j` at time `k` under the model's
/// actual partition (attacked sensors use their group's `tau`).
pub fn sample_level<R: Rng + ?Sized>(
    model: &NetworkModel,
    point: &ParameterPoint,
    j: usize,
    k: usize,
    rng: &mut R,
) -> Result<usize> {
    let attacked = model.group_of(j) != 0;
    let xi = hypothesis(model, point, j, attacked)?;
    sample_sensor_level(model.sensor(j), &point.theta, xi, k, rng)
}

/// Average L2 distance between the attacked and unattacked pmfs of a sensor.
pub fn sensor_distortion(sensor: &Sensor, theta: &[f64], xi: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for m in 0..sensor.period() {
        let count = sensor.pattern_count(m);
        if count == 0 {
            continue;
        }
        let (mu, v) = sensor.mean_var(theta, None, m);
        let (mu_a, v_a) = sensor.mean_var(theta, Some(xi), m);
        checked(0, mu, v)?;
        checked(0, mu_a, v_a)?;
        let q = level_probs(&sensor.quantizer, mu, v);
        let qa = level_probs(&sensor.quantizer, mu_a, v_a);
        let dist = q.iter().zip(&qa).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        total += count as f64 * dist;
    }
    Ok(total / sensor.observations as f64)
}

/// Left side of the minimum-distortion condition for attacked sensor `j`.
pub fn pmf_distortion(model: &NetworkModel, point: &ParameterPoint, j: usize) -> Result<f64> {
    let xi = hypothesis(model, point, j, true)?.expect("attacked hypothesis");
    sensor_distortion(model.sensor(j), &point.theta, xi)
}

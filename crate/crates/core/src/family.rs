//! Gaussian observation families and the attack forms applied to them.
//!
//! Every family produces a Gaussian observation whose mean and variance are
//! smooth functions of the parameters; [`Moments`] carries their values,
//! gradients and Hessians.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Mean/variance of one observation with derivatives over a parameter vector.
#[derive(Debug, Clone)]
pub struct Moments {
    pub mean: f64,
    pub var: f64,
    pub d_mean: DVector<f64>,
    pub d_var: DVector<f64>,
    pub h_mean: DMatrix<f64>,
    pub h_var: DMatrix<f64>,
}

impl Moments {
    fn zeros(dim: usize) -> Self {
        Self {
            mean: 0.0,
            var: 0.0,
            d_mean: DVector::zeros(dim),
            d_var: DVector::zeros(dim),
            h_mean: DMatrix::zeros(dim, dim),
            h_var: DMatrix::zeros(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.d_mean.len()
    }
}

/// Gaussian pulse `s(u) = (2/T^2)^{1/4} exp(-pi u^2 / T^2)` sampled at a cycle of times.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseDelay {
    pub energy: f64,
    pub reflection: f64,
    /// Pulse width `T`.
    pub width: f64,
    /// Sample times within one pulse; observation `k` uses `sample_times[k % M]`.
    pub sample_times: Vec<f64>,
    pub variance: f64,
}

impl PulseDelay {
    /// Value and first two derivatives of the received amplitude w.r.t. the delay.
    fn amplitude(&self, delay: f64, k: usize) -> (f64, f64, f64) {
        let t2 = self.width * self.width;
        let u = self.sample_times[k % self.sample_times.len()] - delay;
        let s = (2.0 / t2).powf(0.25) * (-std::f64::consts::PI * u * u / t2).exp();
        let g = (self.energy.sqrt() * self.reflection) * s;
        let c = 2.0 * std::f64::consts::PI / t2;
        (g, g * c * u, -g * c * (1.0 - c * u * u))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ObservationFamily {
    /// Mean `theta_0`, fixed variance.
    GaussianMean { variance: f64 },
    /// Mean `theta_0`, variance `theta_1`.
    GaussianMeanVariance,
    /// Mean `sqrt(E) a s(t_k - theta_0)`, fixed variance.
    GaussianPulseDelay(PulseDelay),
    /// Mean `h . theta`, fixed variance.
    LinearGaussian { row: Vec<f64>, variance: f64 },
}

impl ObservationFamily {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::GaussianMean { .. } => "gaussian-mean",
            Self::GaussianMeanVariance => "gaussian-mean-variance",
            Self::GaussianPulseDelay(_) => "gaussian-pulse-delay",
            Self::LinearGaussian { .. } => "linear-gaussian",
        }
    }

    pub fn theta_dim(&self) -> usize {
        match self {
            Self::GaussianMean { .. } | Self::GaussianPulseDelay(_) => 1,
            Self::GaussianMeanVariance => 2,
            Self::LinearGaussian { row, .. } => row.len(),
        }
    }

    /// Number of distinct observation patterns before the sequence repeats.
    pub fn period(&self) -> usize {
        match self {
            Self::GaussianPulseDelay(p) => p.sample_times.len(),
            _ => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidModel(format!("{} {name} must be positive and finite, got {v}", self.kind())))
            }
        };
        match self {
            Self::GaussianMean { variance } => positive("variance", *variance),
            Self::GaussianMeanVariance => Ok(()),
            Self::GaussianPulseDelay(p) => {
                positive("variance", p.variance)?;
                positive("width", p.width)?;
                positive("energy", p.energy)?;
                if !p.reflection.is_finite() {
                    return Err(Error::InvalidModel("pulse reflection must be finite".into()));
                }
                if p.sample_times.is_empty() || p.sample_times.iter().any(|t| !t.is_finite()) {
                    return Err(Error::InvalidModel("pulse sample times must be non-empty and finite".into()));
                }
                Ok(())
            }
            Self::LinearGaussian { row, variance } => {
                positive("variance", *variance)?;
                if row.is_empty() || row.iter().any(|h| !h.is_finite()) {
                    return Err(Error::InvalidModel("linear-gaussian row must be non-empty and finite".into()));
                }
                Ok(())
            }
        }
    }

    pub fn mean_var(&self, theta: &[f64], k: usize) -> (f64, f64) {
        match self {
            Self::GaussianMean { variance } => (theta[0], *variance),
            Self::GaussianMeanVariance => (theta[0], theta[1]),
            Self::GaussianPulseDelay(p) => (p.amplitude(theta[0], k).0, p.variance),
            Self::LinearGaussian { row, variance } => {
                (row.iter().zip(theta).map(|(h, t)| h * t).sum(), *variance)
            }
        }
    }

    pub fn moments(&self, theta: &[f64], k: usize) -> Moments {
        let mut m = Moments::zeros(self.theta_dim());
        match self {
            Self::GaussianMean { variance } => {
                m.mean = theta[0];
                m.var = *variance;
                m.d_mean[0] = 1.0;
            }
            Self::GaussianMeanVariance => {
                m.mean = theta[0];
                m.var = theta[1];
                m.d_mean[0] = 1.0;
                m.d_var[1] = 1.0;
            }
            Self::GaussianPulseDelay(p) => {
                let (g, dg, d2g) = p.amplitude(theta[0], k);
                m.mean = g;
                m.var = p.variance;
                m.d_mean[0] = dg;
                m.h_mean[(0, 0)] = d2g;
            }
            Self::LinearGaussian { row, variance } => {
                m.mean = row.iter().zip(theta).map(|(h, t)| h * t).sum();
                m.var = *variance;
                m.d_mean.copy_from_slice(row);
            }
        }
        m
    }
}

/// How an attacker modifies the observation family of its sensors.
#[derive(Debug, Clone, PartialEq)]
pub enum AttackForm {
    /// Family evaluated at `scale * theta + xi`.
    ParameterShift { scale: f64 },
    /// Mean shifted by `xi_0`.
    AdditiveMeanOffset,
    /// Mean shifted by `xi_0`, variance by `xi_1`.
    MeanAndVarianceOffset,
    /// Extra pulse delay `xi_0` (pulse-delay family only).
    DelayOffset,
    /// Mean shifted by `sum_i xi_i b_i[k % L]`.
    OverParameterizedAdditive { basis: Vec<Vec<f64>> },
}

impl AttackForm {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::ParameterShift { .. } => "parameter-shift",
            Self::AdditiveMeanOffset => "additive-mean-offset",
            Self::MeanAndVarianceOffset => "mean-and-variance-offset",
            Self::DelayOffset => "delay-offset",
            Self::OverParameterizedAdditive { .. } => "over-parameterized-additive",
        }
    }

    /// Attack dimension `d` for a sensor of the given family.
    pub fn dim(&self, family: &ObservationFamily) -> usize {
        match self {
            Self::ParameterShift { .. } => family.theta_dim(),
            Self::AdditiveMeanOffset | Self::DelayOffset => 1,
            Self::MeanAndVarianceOffset => 2,
            Self::OverParameterizedAdditive { basis } => basis.len(),
        }
    }

    pub fn period(&self) -> usize {
        match self {
            Self::OverParameterizedAdditive { basis } => basis.first().map_or(1, Vec::len),
            _ => 1,
        }
    }

    /// Declared scale of a parameter-shift attack.
    pub fn shift_scale(&self) -> Option<f64> {
        match self {
            Self::ParameterShift { scale } => Some(*scale),
            Self::DelayOffset => Some(1.0),
            _ => None,
        }
    }

    pub fn validate(&self, family: &ObservationFamily) -> Result<()> {
        match self {
            Self::ParameterShift { scale } if !scale.is_finite() => {
                Err(Error::InvalidModel(format!("parameter-shift scale must be finite, got {scale}")))
            }
            Self::DelayOffset if !matches!(family, ObservationFamily::GaussianPulseDelay(_)) => Err(
                Error::InvalidModel(format!("delay-offset attack requires a pulse-delay family, got {}", family.kind())),
            ),
            Self::OverParameterizedAdditive { basis } => {
                let len = basis.first().map_or(0, Vec::len);
                if len == 0 || basis.iter().any(|b| b.len() != len || b.iter().any(|v| !v.is_finite())) {
                    Err(Error::InvalidModel(
                        "over-parameterized basis needs equal-length, non-empty, finite vectors".into(),
                    ))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    fn shifted(scale: f64, theta: &[f64], xi: &[f64]) -> Vec<f64> {
        theta.iter().zip(xi).map(|(t, x)| scale * t + x).collect()
    }

    pub fn mean_var(&self, family: &ObservationFamily, theta: &[f64], xi: &[f64], k: usize) -> (f64, f64) {
        match self {
            Self::ParameterShift { scale } => family.mean_var(&Self::shifted(*scale, theta, xi), k),
            Self::DelayOffset => family.mean_var(&[theta[0] + xi[0]], k),
            Self::AdditiveMeanOffset => {
                let (m, v) = family.mean_var(theta, k);
                (m + xi[0], v)
            }
            Self::MeanAndVarianceOffset => {
                let (m, v) = family.mean_var(theta, k);
                (m + xi[0], v + xi[1])
            }
            Self::OverParameterizedAdditive { basis } => {
                let (m, v) = family.mean_var(theta, k);
                let i = k % self.period();
                (m + basis.iter().zip(xi).map(|(b, x)| b[i] * x).sum::<f64>(), v)
            }
        }
    }

    /// Moments over the stacked vector `[theta; xi]`.
    pub fn moments(&self, family: &ObservationFamily, theta: &[f64], xi: &[f64], k: usize) -> Moments {
        let dt = theta.len();
        let d = xi.len();
        let n = dt + d;
        match self {
            Self::ParameterShift { .. } | Self::DelayOffset => {
                let scale = self.shift_scale().unwrap_or(1.0);
                let inner = family.moments(&Self::shifted(scale, theta, xi), k);
                let mut m = Moments::zeros(n);
                m.mean = inner.mean;
                m.var = inner.var;
                // theta enters through scale * theta, xi directly.
                let weight = |i: usize| if i < dt { scale } else { 1.0 };
                let src = |i: usize| if i < dt { i } else { i - dt };
                for i in 0..n {
                    m.d_mean[i] = weight(i) * inner.d_mean[src(i)];
                    m.d_var[i] = weight(i) * inner.d_var[src(i)];
                    for l in 0..n {
                        let w = weight(i) * weight(l);
                        m.h_mean[(i, l)] = w * inner.h_mean[(src(i), src(l))];
                        m.h_var[(i, l)] = w * inner.h_var[(src(i), src(l))];
                    }
                }
                m
            }
            _ => {
                let inner = family.moments(theta, k);
                let mut m = Moments::zeros(n);
                m.mean = inner.mean;
                m.var = inner.var;
                m.d_mean.rows_mut(0, dt).copy_from(&inner.d_mean);
                m.d_var.rows_mut(0, dt).copy_from(&inner.d_var);
                m.h_mean.view_mut((0, 0), (dt, dt)).copy_from(&inner.h_mean);
                m.h_var.view_mut((0, 0), (dt, dt)).copy_from(&inner.h_var);
                match self {
                    Self::AdditiveMeanOffset => {
                        m.mean += xi[0];
                        m.d_mean[dt] = 1.0;
                    }
                    Self::MeanAndVarianceOffset => {
                        m.mean += xi[0];
                        m.var += xi[1];
                        m.d_mean[dt] = 1.0;
                        m.d_var[dt + 1] = 1.0;
                    }
                    Self::OverParameterizedAdditive { basis } => {
                        let i = k % self.period();
                        for (q, b) in basis.iter().enumerate() {
                            m.mean += b[i] * xi[q];
                            m.d_mean[dt + q] = b[i];
                        }
                    }
                    _ => unreachable!(),
                }
                m
            }
        }
    }
}

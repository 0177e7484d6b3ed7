//! Ready-made experiment setups: radar delay spoofing, received-signal-strength
//! injection, delay-estimation data injection, DC power-flow injection and an
//! over-parameterized attack that is inestimable by construction.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::SolverOptions;
use crate::family::{AttackForm, ObservationFamily, PulseDelay};
use crate::model::{NetworkModel, ParameterPoint, Sensor};
use crate::pmf::pmf_distortion;
use crate::quantizer::Quantizer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    DrfmDelay,
    RssInjection,
    DelayInjection,
    LinearDcPowerflow,
    OverparamIsa,
}

impl Preset {
    pub const ALL: [Preset; 5] =
        [Self::DrfmDelay, Self::RssInjection, Self::DelayInjection, Self::LinearDcPowerflow, Self::OverparamIsa];

    pub fn name(self) -> &'static str {
        match self {
            Self::DrfmDelay => "drfm-delay",
            Self::RssInjection => "rss-injection",
            Self::DelayInjection => "delay-injection",
            Self::LinearDcPowerflow => "linear-dc-powerflow",
            Self::OverparamIsa => "overparam-isa",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| Error::UnknownPreset(s.to_string()))
    }
}

/// Documented override keys.
pub const OVERRIDE_KEYS: [&str; 7] = ["K", "N", "attacked", "noise_variance", "seed", "D_p", "R"];

/// Changes applied on top of a preset. `attacked` holds 1-based sensor indices.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Overrides {
    /// Rounds per sensor: pulses of `M` samples for the radar presets, time instants otherwise.
    pub k: Option<usize>,
    pub n: Option<usize>,
    pub attacked: Option<Vec<usize>>,
    pub noise_variance: Option<f64>,
    pub seed: Option<u64>,
    /// Attack dimension (overparam-isa only).
    pub d_p: Option<usize>,
    /// Quantizer levels (overparam-isa only).
    pub r: Option<usize>,
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Config(format!("override `{key}`: cannot parse `{value}`")))
}

impl Overrides {
    /// Set one key from its textual value. Lists may be written `1,2,3` or `[1, 2, 3]`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "K" => self.k = Some(parse_value(key, value)?),
            "N" => self.n = Some(parse_value(key, value)?),
            "attacked" => {
                let inner = value.trim().trim_start_matches('[').trim_end_matches(']');
                let list = inner
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse_value(key, s))
                    .collect::<Result<Vec<usize>>>()?;
                self.attacked = Some(list);
            }
            "noise_variance" => self.noise_variance = Some(parse_value(key, value)?),
            "seed" => self.seed = Some(parse_value(key, value)?),
            "D_p" => self.d_p = Some(parse_value(key, value)?),
            "R" => self.r = Some(parse_value(key, value)?),
            other => return Err(Error::UnknownOverride(other.to_string())),
        }
        Ok(())
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut out = Self::default();
        for (k, v) in pairs {
            out.set(k, v)?;
        }
        Ok(out)
    }
}

/// Fully resolved experiment setup.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// `None` for models given explicitly in a config file.
    pub preset: Option<Preset>,
    pub model: NetworkModel,
    pub truth: ParameterPoint,
    /// Minimum average pmf distortion of an attacked sensor.
    pub d_q: f64,
    pub seed: u64,
    /// Starting guess handed to the estimator.
    pub theta_init: Vec<f64>,
}

struct Defaults {
    k: usize,
    n: usize,
    attacked: Vec<usize>,
    noise_variance: f64,
    seed: u64,
}

fn defaults(preset: Preset) -> Defaults {
    let (k, n, attacked, noise_variance) = match preset {
        Preset::DrfmDelay | Preset::DelayInjection => (1000, 10, vec![1, 2, 3], 5.0),
        Preset::RssInjection => (1000, 10, vec![1, 2, 3], 3.0),
        Preset::LinearDcPowerflow => (200, 10, vec![1, 2, 3], 1.0),
        Preset::OverparamIsa => (1, 4, vec![1], 1.0),
    };
    Defaults { k, n, attacked, noise_variance, seed: 0 }
}

const PULSE_WIDTH: f64 = 0.1;
const SAMPLE_SPACING: f64 = 0.001;
const TRUE_DELAY: f64 = 0.02;
const DELAY_START: f64 = 0.01;

fn pulse(samples: usize, variance: f64) -> ObservationFamily {
    ObservationFamily::GaussianPulseDelay(PulseDelay {
        energy: 1.0,
        reflection: 1.0,
        width: PULSE_WIDTH,
        sample_times: (0..samples).map(|m| m as f64 * SAMPLE_SPACING).collect(),
        variance,
    })
}

/// One group per attacked sensor, with `per_sensor` cycled over the attacked set.
fn individual_groups(attacked: &[usize], per_sensor: &[Vec<f64>]) -> (Vec<Vec<usize>>, Vec<Vec<f64>>) {
    let groups = attacked.iter().map(|&j| vec![j]).collect();
    let tau = (0..attacked.len()).map(|i| per_sensor[i % per_sensor.len()].clone()).collect();
    (groups, tau)
}

/// Build a preset with `overrides` applied and check that its true attack meets `d_q`.
pub fn make_scenario(preset: Preset, overrides: &Overrides) -> Result<Scenario> {
    let d = defaults(preset);
    if preset != Preset::OverparamIsa && (overrides.d_p.is_some() || overrides.r.is_some()) {
        let key = if overrides.d_p.is_some() { "D_p" } else { "R" };
        return Err(Error::UnknownOverride(format!("{key} (only valid for overparam-isa)")));
    }
    let k = overrides.k.unwrap_or(d.k);
    let n = overrides.n.unwrap_or(d.n);
    let noise = overrides.noise_variance.unwrap_or(d.noise_variance);
    let seed = overrides.seed.unwrap_or(d.seed);
    if k == 0 {
        return Err(Error::InvalidModel("K must be at least 1".into()));
    }
    if n == 0 {
        return Err(Error::InvalidModel("N must be at least 1".into()));
    }
    if !(noise.is_finite() && noise > 0.0) {
        return Err(Error::NonPositiveVariance { sensor: 0, variance: noise });
    }
    let attacked_1 = overrides.attacked.clone().unwrap_or(d.attacked);
    let mut attacked = Vec::with_capacity(attacked_1.len());
    for &j in &attacked_1 {
        if j == 0 || j > n {
            return Err(Error::InvalidModel(format!("attacked sensor {j} is outside 1..={n}")));
        }
        if attacked.contains(&(j - 1)) {
            return Err(Error::InvalidModel(format!("attacked sensor {j} listed twice")));
        }
        attacked.push(j - 1);
    }
    let is_attacked = |j: usize| attacked.contains(&j);

    let (sensors, groups, theta, tau, d_q, theta_init) = match preset {
        Preset::DrfmDelay => {
            let quantizer = Quantizer::uniform(-5.0, 1.0, 15)?;
            let sensors = (0..n)
                .map(|_| Sensor {
                    quantizer: quantizer.clone(),
                    family: pulse(3, noise),
                    attack: AttackForm::DelayOffset,
                    observations: 3 * k,
                })
                .collect();
            let (groups, tau) = individual_groups(&attacked, &[vec![0.04], vec![0.05], vec![0.06]]);
            (sensors, groups, vec![TRUE_DELAY], tau, 0.15, vec![DELAY_START])
        }
        Preset::DelayInjection => {
            let quantizer = Quantizer::uniform(-5.0, 1.0, 15)?;
            let sensors = (0..n)
                .map(|_| Sensor {
                    quantizer: quantizer.clone(),
                    family: pulse(40, noise),
                    attack: AttackForm::AdditiveMeanOffset,
                    observations: 40 * k,
                })
                .collect();
            let (groups, tau) = individual_groups(&attacked, &[vec![1.0], vec![-2.0], vec![-1.0]]);
            (sensors, groups, vec![TRUE_DELAY], tau, 0.075, vec![DELAY_START])
        }
        Preset::RssInjection => {
            let quantizer = Quantizer::uniform(-7.0, 1.0, 15)?;
            let sensors = (0..n)
                .map(|_| Sensor {
                    quantizer: quantizer.clone(),
                    family: ObservationFamily::GaussianMeanVariance,
                    attack: AttackForm::MeanAndVarianceOffset,
                    observations: k,
                })
                .collect();
            let (groups, tau) = individual_groups(&attacked, &[vec![-1.5, 1.0], vec![-2.0, 2.0], vec![1.5, 1.0]]);
            (sensors, groups, vec![1.0, noise], tau, 0.04, vec![0.0, 1.0])
        }
        Preset::LinearDcPowerflow => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sensors = (0..n)
                .map(|_| {
                    let angle = rng.random_range(0.0..std::f64::consts::PI);
                    Ok(Sensor {
                        quantizer: Quantizer::uniform(-2.0, 0.5, 9)?,
                        family: ObservationFamily::LinearGaussian { row: vec![angle.cos(), angle.sin()], variance: noise },
                        attack: AttackForm::ParameterShift { scale: 1.0 },
                        observations: k,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let groups = if attacked.is_empty() { vec![] } else { vec![attacked.clone()] };
            let tau = if attacked.is_empty() { vec![] } else { vec![vec![0.4, -0.3]] };
            (sensors, groups, vec![0.5, -0.2], tau, 0.0, vec![0.0, 0.0])
        }
        Preset::OverparamIsa => {
            let levels = overrides.r.unwrap_or(2);
            if levels < 2 {
                return Err(Error::InvalidModel("R must be at least 2".into()));
            }
            let d_p = overrides.d_p.unwrap_or(3);
            if d_p == 0 {
                return Err(Error::InvalidModel("D_p must be at least 1".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
            let thresholds: Vec<f64> = (1..levels).map(|i| -1.0 + 2.0 * i as f64 / levels as f64).collect();
            // One basis value per observation so the rank bound is tight.
            let basis: Vec<Vec<f64>> = (0..d_p).map(|_| (0..k).map(|_| normal()).collect()).collect();
            let theta = vec![0.5 * normal()];
            let tau = vec![(0..d_p).map(|_| 0.3 * normal()).collect()];
            let sensors = (0..n)
                .map(|j| {
                    Ok(Sensor {
                        quantizer: Quantizer::new(thresholds.clone())?,
                        family: ObservationFamily::GaussianMean { variance: noise },
                        attack: if is_attacked(j) {
                            AttackForm::OverParameterizedAdditive { basis: basis.clone() }
                        } else {
                            AttackForm::AdditiveMeanOffset
                        },
                        observations: k,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let groups = if attacked.is_empty() { vec![] } else { vec![attacked.clone()] };
            let tau = if attacked.is_empty() { vec![] } else { tau };
            (sensors, groups, theta, tau, 0.0, vec![0.0])
        }
    };
    let model = NetworkModel::new(sensors, groups)?;
    let truth = ParameterPoint { theta, tau };
    truth.validate(&model)?;
    let scenario = Scenario { preset: Some(preset), model, truth, d_q, seed, theta_init };
    scenario.check_admissible()?;
    Ok(scenario)
}

impl Scenario {
    /// True attacked indicator per sensor.
    pub fn attacked(&self) -> Vec<bool> {
        (0..self.model.n_sensors()).map(|j| self.model.group_of(j) != 0).collect()
    }

    /// Same scenario with `k` observations per sensor.
    pub fn with_observations(&self, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidModel("K must be at least 1".into()));
        }
        Ok(Self { model: self.model.with_observations(|_| k), ..self.clone() })
    }

    /// Same scenario with `k` rounds per sensor: `k` pulses of `M` samples for
    /// the radar presets, `k` time instants otherwise.
    pub fn with_rounds(&self, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidModel("K must be at least 1".into()));
        }
        Ok(Self { model: self.model.with_observations(|s| k * s.period()), ..self.clone() })
    }

    /// Every attacked sensor's true pmf distortion must reach `d_q`.
    pub fn check_admissible(&self) -> Result<()> {
        for j in (0..self.model.n_sensors()).filter(|&j| self.model.group_of(j) != 0) {
            let d = pmf_distortion(&self.model, &self.truth, j)?;
            if d < self.d_q {
                return Err(Error::Inadmissible(format!(
                    "sensor {} has distortion {d:.6} below d_q = {}",
                    j + 1,
                    self.d_q
                )));
            }
        }
        Ok(())
    }

    /// Estimator settings carrying this scenario's `d_q` and starting point.
    pub fn solver_options(&self, base: &SolverOptions) -> SolverOptions {
        SolverOptions { d_q: self.d_q, theta_init: Some(self.theta_init.clone()), ..base.clone() }
    }
}

use crate::error::{Error, Result};
use crate::family::{AttackForm, Moments, ObservationFamily};
use crate::quantizer::Quantizer;

/// One sensor: quantizer, before-attack family, the form an attack on it takes,
/// and its number of observations `K_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sensor {
    pub quantizer: Quantizer,
    pub family: ObservationFamily,
    pub attack: AttackForm,
    pub observations: usize,
}

impl Sensor {
    pub fn levels(&self) -> usize {
        self.quantizer.levels()
    }

    pub fn attack_dim(&self) -> usize {
        self.attack.dim(&self.family)
    }

    /// Period of the (family, attack) pattern sequence in `k`.
    pub fn period(&self) -> usize {
        lcm(self.family.period(), self.attack.period())
    }

    /// Number of observations `k < K_j` with `k % period == pattern`.
    pub fn pattern_count(&self, pattern: usize) -> usize {
        let period = self.period();
        let full = self.observations / period;
        full + usize::from(pattern < self.observations % period)
    }

    /// Mean and variance under the unattacked (`xi = None`) or attacked hypothesis.
    pub fn mean_var(&self, theta: &[f64], xi: Option<&[f64]>, k: usize) -> (f64, f64) {
        match xi {
            None => self.family.mean_var(theta, k),
            Some(xi) => self.attack.mean_var(&self.family, theta, xi, k),
        }
    }

    pub fn moments(&self, theta: &[f64], xi: Option<&[f64]>, k: usize) -> Moments {
        match xi {
            None => self.family.moments(theta, k),
            Some(xi) => self.attack.moments(&self.family, theta, xi, k),
        }
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}

/// Sensor network with its partition into the unattacked set `A_0` and attack
/// groups `A_1..A_P`.
///
/// Group indices follow the convention `0 = A_0`, `p >= 1` for attack groups.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    sensors: Vec<Sensor>,
    groups: Vec<Vec<usize>>,
    group_of: Vec<usize>,
    theta_dim: usize,
}

impl NetworkModel {
    /// `groups` lists the 0-based sensor indices of `A_1..A_P`; unlisted sensors form `A_0`.
    pub fn new(sensors: Vec<Sensor>, groups: Vec<Vec<usize>>) -> Result<Self> {
        let first = sensors.first().ok_or_else(|| Error::InvalidModel("model has no sensors".into()))?;
        let theta_dim = first.family.theta_dim();
        for (j, s) in sensors.iter().enumerate() {
            s.family.validate()?;
            s.attack.validate(&s.family)?;
            if s.family.theta_dim() != theta_dim {
                return Err(Error::DimensionMismatch(format!(
                    "sensor {j} has parameter dimension {} but sensor 0 has {theta_dim}",
                    s.family.theta_dim()
                )));
            }
            if s.observations == 0 {
                return Err(Error::InvalidModel(format!("sensor {j} has no observations")));
            }
        }
        let mut group_of = vec![0; sensors.len()];
        for (p, members) in groups.iter().enumerate() {
            if members.is_empty() {
                return Err(Error::EmptyGroup(p + 1));
            }
            for &j in members {
                if j >= sensors.len() {
                    return Err(Error::InvalidModel(format!("group {} lists unknown sensor {j}", p + 1)));
                }
                if group_of[j] != 0 {
                    return Err(Error::InvalidModel(format!("sensor {j} belongs to more than one group")));
                }
                group_of[j] = p + 1;
            }
            let dim = sensors[members[0]].attack_dim();
            if let Some(&j) = members.iter().find(|&&j| sensors[j].attack_dim() != dim) {
                return Err(Error::DimensionMismatch(format!(
                    "sensors {} and {j} of group {} have different attack dimensions",
                    members[0],
                    p + 1
                )));
            }
        }
        Ok(Self { sensors, groups, group_of, theta_dim })
    }

    pub fn sensors(&self) -> &[Sensor] {
        &self.sensors
    }

    pub fn sensor(&self, j: usize) -> &Sensor {
        &self.sensors[j]
    }

    pub fn n_sensors(&self) -> usize {
        self.sensors.len()
    }

    pub fn theta_dim(&self) -> usize {
        self.theta_dim
    }

    /// Number of attack groups `P`.
    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    /// Sensors of group `p` (`0` gives `A_0`).
    pub fn group(&self, p: usize) -> Vec<usize> {
        if p == 0 {
            (0..self.n_sensors()).filter(|&j| self.group_of[j] == 0).collect()
        } else {
            self.groups[p - 1].clone()
        }
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn group_of(&self, j: usize) -> usize {
        self.group_of[j]
    }

    /// Attack dimension `D_p` of group `p >= 1`.
    pub fn group_dim(&self, p: usize) -> usize {
        self.sensors[self.groups[p - 1][0]].attack_dim()
    }

    /// Dimension of `Theta = [theta; tau^(1); ...; tau^(P)]`.
    pub fn joint_dim(&self) -> usize {
        self.theta_dim + (1..=self.n_groups()).map(|p| self.group_dim(p)).sum::<usize>()
    }

    /// Copy with every sensor's observation count replaced.
    pub fn with_observations(&self, f: impl Fn(&Sensor) -> usize) -> Self {
        let mut m = self.clone();
        for s in &mut m.sensors {
            s.observations = f(s);
        }
        m
    }

    /// Copy with a different attack partition.
    pub fn with_groups(&self, groups: Vec<Vec<usize>>) -> Result<Self> {
        Self::new(self.sensors.clone(), groups)
    }
}

/// True parameter values: `theta` and one `tau^(p)` per attack group.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterPoint {
    pub theta: Vec<f64>,
    pub tau: Vec<Vec<f64>>,
}

impl ParameterPoint {
    pub fn validate(&self, model: &NetworkModel) -> Result<()> {
        if self.theta.len() != model.theta_dim() {
            return Err(Error::DimensionMismatch(format!(
                "theta has length {} but the model expects {}",
                self.theta.len(),
                model.theta_dim()
            )));
        }
        if self.tau.len() != model.n_groups() {
            return Err(Error::DimensionMismatch(format!(
                "{} tau vectors given for {} groups",
                self.tau.len(),
                model.n_groups()
            )));
        }
        for (p, t) in self.tau.iter().enumerate() {
            if t.len() != model.group_dim(p + 1) {
                return Err(Error::DimensionMismatch(format!(
                    "tau for group {} has length {} but D_p = {}",
                    p + 1,
                    t.len(),
                    model.group_dim(p + 1)
                )));
            }
        }
        if self.theta.iter().chain(self.tau.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter point contains a non-finite value".into()));
        }
        Ok(())
    }

    /// Attack parameter acting on sensor `j`, if it belongs to a group.
    pub fn xi_for(&self, model: &NetworkModel, j: usize) -> Option<&[f64]> {
        match model.group_of(j) {
            0 => None,
            p => Some(&self.tau[p - 1]),
        }
    }

    /// Stacked `[theta; tau^(1); ...]`.
    pub fn joint(&self) -> Vec<f64> {
        self.theta.iter().chain(self.tau.iter().flatten()).copied().collect()
    }
}

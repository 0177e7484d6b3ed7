//! TOML configuration documents: a preset with overrides or an explicit model,
//! plus solver, classifier and experiment settings.

use std::env;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::classify::ClassifierConfig;
use crate::error::{Error, Result};
use crate::estimator::SolverOptions;
use crate::family::{AttackForm, ObservationFamily, PulseDelay};
use crate::model::{NetworkModel, ParameterPoint, Sensor};
use crate::quantizer::Quantizer;
use crate::scenario::{make_scenario, Overrides, Preset, Scenario};

/// Colon-separated directories searched for relative config paths and for
/// [`DEFAULT_CONFIG_NAME`] when no path is given.
pub const CONFIG_PATH_VAR: &str = "QUANTSPOOF_CONFIG_PATH";
pub const DEFAULT_CONFIG_NAME: &str = "quantspoof.toml";

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySpec {
    pub kind: String,
    pub variance: Option<f64>,
    pub row: Option<Vec<f64>>,
    pub energy: Option<f64>,
    pub reflection: Option<f64>,
    pub width: Option<f64>,
    pub sample_times: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub kind: String,
    pub scale: Option<f64>,
    pub basis: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSpec {
    pub thresholds: Vec<f64>,
    pub family: FamilySpec,
    pub attack: AttackSpec,
    pub observations: usize,
    /// Number of identical sensors described by this entry.
    #[serde(default = "one")]
    pub count: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TruthSpec {
    pub theta: Vec<f64>,
    #[serde(default)]
    pub tau: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub k_grid: Vec<usize>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    pub out: Option<PathBuf>,
}

fn default_trials() -> usize {
    100
}

/// The document as written, before resolution.
#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub preset: Option<String>,
    #[serde(default)]
    pub overrides: Table,
    #[serde(default)]
    pub sensors: Vec<SensorSpec>,
    /// 1-based sensor indices of each attack group.
    #[serde(default)]
    pub groups: Vec<Vec<usize>>,
    pub truth: Option<TruthSpec>,
    #[serde(default)]
    pub solver: Table,
    #[serde(default)]
    pub classifier: Table,
    pub experiment: Option<ExperimentSpec>,
}

/// A validated configuration.
#[derive(Debug, Clone)]
pub struct ConfigDocument {
    pub scenario: Scenario,
    pub solver: SolverOptions,
    pub classifier: ClassifierConfig,
    pub experiment: Option<ExperimentSpec>,
    pub raw: RawConfig,
}

fn scalar_text(key: &str, v: &Value) -> Result<String> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Integer(i) => Ok(i.to_string()),
        Value::Float(f) => Ok(f.to_string()),
        Value::Boolean(b) => Ok(b.to_string()),
        Value::Array(items) => {
            let parts = items.iter().map(|i| scalar_text(key, i)).collect::<Result<Vec<_>>>()?;
            Ok(parts.join(","))
        }
        _ => Err(Error::Config(format!("overrides.{key}: unsupported value type"))),
    }
}

/// Parse `value` as a TOML value (`3`, `1e-6`, `[1, 2]`), falling back to a bare string.
pub fn parse_toml_value(value: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(value.to_string()))
}

/// Apply `table` and then `extra` on top of `base`, rejecting unknown keys.
pub fn overlay<T: Serialize + DeserializeOwned>(section: &str, base: &T, table: &Table, extra: &[(String, String)]) -> Result<T> {
    let mut merged = Table::try_from(base).map_err(|e| Error::Config(format!("{section}: {e}")))?;
    for (k, v) in table {
        merged.insert(k.clone(), v.clone());
    }
    for (k, v) in extra {
        merged.insert(k.clone(), parse_toml_value(v));
    }
    merged.try_into().map_err(|e: toml::de::Error| Error::Config(format!("[{section}] {}", e.message())))
}

fn family(spec: &FamilySpec, at: &str) -> Result<ObservationFamily> {
    let need = |v: Option<f64>, name: &str| v.ok_or_else(|| Error::Config(format!("{at}.family.{name} is required")));
    let unused = |present: bool, name: &str| {
        if present {
            Err(Error::Config(format!("{at}.family.{name} does not apply to kind `{}`", spec.kind)))
        } else {
            Ok(())
        }
    };
    let pulse_keys = spec.energy.is_some() || spec.reflection.is_some() || spec.width.is_some() || spec.sample_times.is_some();
    match spec.kind.as_str() {
        "gaussian-mean" => {
            unused(spec.row.is_some() || pulse_keys, "row/pulse keys")?;
            Ok(ObservationFamily::GaussianMean { variance: need(spec.variance, "variance")? })
        }
        "gaussian-mean-variance" => {
            unused(spec.variance.is_some() || spec.row.is_some() || pulse_keys, "variance/row/pulse keys")?;
            Ok(ObservationFamily::GaussianMeanVariance)
        }
        "gaussian-pulse-delay" => {
            unused(spec.row.is_some(), "row")?;
            Ok(ObservationFamily::GaussianPulseDelay(PulseDelay {
                energy: spec.energy.unwrap_or(1.0),
                reflection: spec.reflection.unwrap_or(1.0),
                width: need(spec.width, "width")?,
                sample_times: spec
                    .sample_times
                    .clone()
                    .ok_or_else(|| Error::Config(format!("{at}.family.sample_times is required")))?,
                variance: need(spec.variance, "variance")?,
            }))
        }
        "linear-gaussian" => {
            unused(pulse_keys, "pulse keys")?;
            Ok(ObservationFamily::LinearGaussian {
                row: spec.row.clone().ok_or_else(|| Error::Config(format!("{at}.family.row is required")))?,
                variance: need(spec.variance, "variance")?,
            })
        }
        other => Err(Error::Config(format!(
            "{at}.family.kind `{other}` is not one of gaussian-mean, gaussian-mean-variance, gaussian-pulse-delay, linear-gaussian"
        ))),
    }
}

fn attack(spec: &AttackSpec, at: &str) -> Result<AttackForm> {
    let form = match spec.kind.as_str() {
        "parameter-shift" => AttackForm::ParameterShift { scale: spec.scale.unwrap_or(1.0) },
        "additive-mean-offset" => AttackForm::AdditiveMeanOffset,
        "mean-and-variance-offset" => AttackForm::MeanAndVarianceOffset,
        "delay-offset" => AttackForm::DelayOffset,
        "over-parameterized-additive" => AttackForm::OverParameterizedAdditive {
            basis: spec.basis.clone().ok_or_else(|| Error::Config(format!("{at}.attack.basis is required")))?,
        },
        other => {
            return Err(Error::Config(format!(
                "{at}.attack.kind `{other}` is not one of parameter-shift, additive-mean-offset, \
                 mean-and-variance-offset, delay-offset, over-parameterized-additive"
            )))
        }
    };
    if spec.scale.is_some() && !matches!(form, AttackForm::ParameterShift { .. }) {
        return Err(Error::Config(format!("{at}.attack.scale only applies to parameter-shift")));
    }
    if spec.basis.is_some() && !matches!(form, AttackForm::OverParameterizedAdditive { .. }) {
        return Err(Error::Config(format!("{at}.attack.basis only applies to over-parameterized-additive")));
    }
    Ok(form)
}

fn explicit_scenario(raw: &RawConfig) -> Result<Scenario> {
    if !raw.overrides.is_empty() {
        return Err(Error::Config("[overrides] requires a preset".into()));
    }
    if raw.sensors.is_empty() {
        return Err(Error::Config("either `preset` or at least one [[sensors]] entry is required".into()));
    }
    let mut sensors = Vec::new();
    let mut problems = Vec::new();
    for (i, spec) in raw.sensors.iter().enumerate() {
        let at = format!("sensors[{i}]");
        let built = (|| -> Result<Sensor> {
            let quantizer = Quantizer::new(spec.thresholds.clone())
                .map_err(|e| Error::Config(format!("{at}.thresholds: {e}")))?;
            let family = family(&spec.family, &at)?;
            let attack = attack(&spec.attack, &at)?;
            attack.validate(&family).map_err(|e| Error::Config(format!("{at}.attack: {e}")))?;
            family.validate().map_err(|e| Error::Config(format!("{at}.family: {e}")))?;
            if spec.observations == 0 || spec.count == 0 {
                return Err(Error::Config(format!("{at}: observations and count must be at least 1")));
            }
            Ok(Sensor { quantizer, family, attack, observations: spec.observations })
        })();
        match built {
            Ok(s) => sensors.extend(std::iter::repeat_n(s, spec.count)),
            Err(Error::Config(m)) => problems.push(m),
            Err(e) => problems.push(format!("{at}: {e}")),
        }
    }
    if !problems.is_empty() {
        return Err(Error::Config(problems.join("; ")));
    }
    let mut groups = Vec::with_capacity(raw.groups.len());
    for (p, g) in raw.groups.iter().enumerate() {
        let mut members = Vec::with_capacity(g.len());
        for &j in g {
            if j == 0 || j > sensors.len() {
                return Err(Error::Config(format!("groups[{p}]: sensor {j} is outside 1..={}", sensors.len())));
            }
            members.push(j - 1);
        }
        groups.push(members);
    }
    let model = NetworkModel::new(sensors, groups).map_err(|e| Error::Config(format!("groups: {e}")))?;
    let truth = raw.truth.as_ref().ok_or_else(|| Error::Config("[truth] is required for an explicit model".into()))?;
    let truth = ParameterPoint { theta: truth.theta.clone(), tau: truth.tau.clone() };
    truth.validate(&model).map_err(|e| Error::Config(format!("truth: {e}")))?;
    let theta_init = match model.sensor(0).family {
        ObservationFamily::GaussianMeanVariance => vec![0.0, 1.0],
        _ => vec![0.0; model.theta_dim()],
    };
    Ok(Scenario { preset: None, model, truth, d_q: 0.0, seed: 0, theta_init })
}

/// Resolve `raw` with extra command-line overrides: `scenario_sets` are preset
/// override keys, `solver_sets` solver option keys.
pub fn resolve(raw: RawConfig, scenario_sets: &[(String, String)], solver_sets: &[(String, String)]) -> Result<ConfigDocument> {
    let mut scenario = match &raw.preset {
        Some(name) => {
            if !raw.sensors.is_empty() || !raw.groups.is_empty() || raw.truth.is_some() {
                return Err(Error::Config("`preset` cannot be combined with sensors, groups or truth".into()));
            }
            let preset: Preset = name.parse()?;
            let mut ov = Overrides::default();
            for (k, v) in &raw.overrides {
                ov.set(k, &scalar_text(k, v)?)?;
            }
            for (k, v) in scenario_sets {
                ov.set(k, v)?;
            }
            make_scenario(preset, &ov)?
        }
        None => {
            if !scenario_sets.is_empty() {
                return Err(Error::Config("scenario overrides require a preset".into()));
            }
            explicit_scenario(&raw)?
        }
    };
    let base = scenario.solver_options(&SolverOptions::default());
    let solver: SolverOptions = overlay("solver", &base, &raw.solver, solver_sets)?;
    solver.validate()?;
    if let Some(t) = &solver.theta_init {
        if t.len() != scenario.model.theta_dim() {
            return Err(Error::Config(format!("solver.theta_init must have length {}", scenario.model.theta_dim())));
        }
        scenario.theta_init = t.clone();
    }
    scenario.d_q = solver.d_q;
    scenario.check_admissible()?;
    let classifier: ClassifierConfig = overlay("classifier", &ClassifierConfig::default(), &raw.classifier, &[])?;
    Ok(ConfigDocument { scenario, solver, classifier, experiment: raw.experiment.clone(), raw })
}

pub fn parse_config_str(text: &str) -> Result<ConfigDocument> {
    resolve(parse_raw(text)?, &[], &[])
}

pub fn parse_raw(text: &str) -> Result<RawConfig> {
    toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))
}

pub fn parse_config(path: &Path) -> Result<ConfigDocument> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    parse_config_str(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn search_dirs() -> Vec<PathBuf> {
    env::var_os(CONFIG_PATH_VAR).map(|v| env::split_paths(&v).collect()).unwrap_or_default()
}

/// Locate a config file: an existing `given` path as is, a relative one in the
/// search path, or [`DEFAULT_CONFIG_NAME`] in the search path when absent.
pub fn locate_config(given: Option<&Path>) -> Result<PathBuf> {
    match given {
        Some(p) if p.exists() || p.is_absolute() => Ok(p.to_path_buf()),
        Some(p) => search_dirs()
            .into_iter()
            .map(|d| d.join(p))
            .find(|c| c.exists())
            .ok_or_else(|| Error::Config(format!("config file `{}` not found", p.display()))),
        None => search_dirs()
            .into_iter()
            .map(|d| d.join(DEFAULT_CONFIG_NAME))
            .find(|c| c.exists())
            .ok_or_else(|| Error::Config(format!("no --config given and no {DEFAULT_CONFIG_NAME} in ${CONFIG_PATH_VAR}"))),
    }
}

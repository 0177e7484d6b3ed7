//! Python bindings for `quantspoof`.
//!
//! Structured results (classification, estimates, experiments) are returned as
//! plain dicts built from the same JSON the command-line tool prints.

use std::path::Path;

use nalgebra::DMatrix;
use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyModule};
use quantspoof::classify::{classify_all, ClassifierConfig};
use quantspoof::config::{parse_config, parse_config_str, ConfigDocument};
use quantspoof::estimator::{joint_identify_estimate, QuantizedDataset, SolverOptions};
use quantspoof::fisher::{build_fim_bundle, crb};
use quantspoof::harness::{crb_curves, generate_data, run_experiment};
use quantspoof::scenario::{make_scenario, Overrides, Preset};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

create_exception!(quantspoof, QuantspoofError, PyValueError);

fn err(e: quantspoof::Error) -> PyErr {
    QuantspoofError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| QuantspoofError::new_err(e.to_string()))?;
    PyModule::import(py, "json")?.call_method1("loads", (text,))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn preset_by_name(name: &str) -> PyResult<Preset> {
    Preset::ALL
        .into_iter()
        .find(|p| p.name() == name)
        .ok_or_else(|| err(quantspoof::Error::UnknownPreset(name.to_string())))
}

/// A scenario together with its solver and classifier settings.
#[pyclass(name = "Scenario", module = "quantspoof", skip_from_py_object)]
#[derive(Clone)]
struct PyScenario {
    doc: ConfigDocument,
}

impl PyScenario {
    fn solver(&self, seed: Option<u64>, em_max_iter: Option<usize>, restarts: Option<usize>) -> SolverOptions {
        let mut opts = self.doc.solver.clone();
        if let Some(s) = seed {
            opts.seed = s;
        }
        if let Some(n) = em_max_iter {
            opts.em_max_iter = n;
        }
        if let Some(r) = restarts {
            opts.restarts = r;
        }
        opts
    }
}

#[pymethods]
impl PyScenario {
    /// Build a preset, optionally with overrides such as `{"K": 500, "attacked": [1, 2]}`.
    #[staticmethod]
    #[pyo3(signature = (name, overrides = None))]
    fn preset(name: &str, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let preset = preset_by_name(name)?;
        let mut ov = Overrides::default();
        if let Some(d) = overrides {
            for (k, v) in d.iter() {
                let key: String = k.extract()?;
                let value = match v.extract::<Vec<usize>>() {
                    Ok(list) => list.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
                    Err(_) => v.str()?.to_string(),
                };
                ov.set(&key, &value).map_err(err)?;
            }
        }
        let scenario = make_scenario(preset, &ov).map_err(err)?;
        // Route through the config layer so solver defaults match the CLI.
        let base = parse_config_str(&format!("preset = \"{}\"\n", preset.name())).map_err(err)?;
        let solver = scenario.solver_options(&base.solver);
        Ok(Self { doc: ConfigDocument { scenario, solver, ..base } })
    }

    #[staticmethod]
    fn from_config(path: &str) -> PyResult<Self> {
        Ok(Self { doc: parse_config(Path::new(path)).map_err(err)? })
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self { doc: parse_config_str(text).map_err(err)? })
    }

    #[getter]
    fn name(&self) -> Option<&'static str> {
        self.doc.scenario.preset.map(Preset::name)
    }

    #[getter]
    fn n_sensors(&self) -> usize {
        self.doc.scenario.model.n_sensors()
    }

    #[getter]
    fn n_groups(&self) -> usize {
        self.doc.scenario.model.n_groups()
    }

    #[getter]
    fn theta_dim(&self) -> usize {
        self.doc.scenario.model.theta_dim()
    }

    #[getter]
    fn theta(&self) -> Vec<f64> {
        self.doc.scenario.truth.theta.clone()
    }

    #[getter]
    fn attacked(&self) -> Vec<bool> {
        self.doc.scenario.attacked()
    }

    #[getter]
    fn d_q(&self) -> f64 {
        self.doc.scenario.d_q
    }

    /// Copy with `k` rounds per sensor.
    fn with_rounds(&self, k: usize) -> PyResult<Self> {
        let mut doc = self.doc.clone();
        doc.scenario = doc.scenario.with_rounds(k).map_err(err)?;
        Ok(Self { doc })
    }

    #[pyo3(signature = (inclusion_tol = None))]
    fn classify<'py>(&self, py: Python<'py>, inclusion_tol: Option<f64>) -> PyResult<Bound<'py, PyAny>> {
        let cfg = ClassifierConfig { inclusion_tol: inclusion_tol.unwrap_or(self.doc.classifier.inclusion_tol), ..self.doc.classifier };
        let sc = &self.doc.scenario;
        let c = classify_all(&sc.model, &sc.truth, &cfg).map_err(err)?;
        to_py(py, &c)
    }

    fn crb<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let sc = &self.doc.scenario;
        let r = crb(&build_fim_bundle(&sc.model, &sc.truth).map_err(err)?).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("crb_unattacked", rows(&r.crb_unattacked))?;
        d.set_item("crb_esa", r.crb_esa.as_ref().map(rows))?;
        d.set_item("crb_alldata_known_attacks", r.crb_alldata_known_attacks.as_ref().map(rows))?;
        d.set_item("information_loss", r.information_loss.iter().map(|m| m.as_ref().map(rows)).collect::<Vec<_>>())?;
        d.set_item("condition_unattacked", r.condition_unattacked)?;
        d.set_item("condition_joint", r.condition_joint)?;
        d.set_item("ill_conditioned", r.ill_conditioned)?;
        Ok(d)
    }

    /// CRB traces for every `K` in `k_grid`.
    fn crb_curves<'py>(&self, py: Python<'py>, k_grid: Vec<usize>) -> PyResult<Bound<'py, PyAny>> {
        let rows = crb_curves(&self.doc.scenario, &k_grid).map_err(err)?;
        to_py(py, &rows)
    }

    /// Draw one dataset from the true parameters; levels are 1-based, indexed `[sensor][k]`.
    fn generate(&self, seed: u64) -> PyResult<Vec<Vec<usize>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = generate_data(&self.doc.scenario, &mut rng).map_err(err)?;
        Ok((0..data.n_sensors()).map(|j| data.levels(j).to_vec()).collect())
    }

    /// Joint attack identification and parameter estimate from 1-based levels.
    #[pyo3(signature = (levels, seed = None, em_max_iter = None, restarts = None))]
    fn estimate<'py>(
        &self,
        py: Python<'py>,
        levels: Vec<Vec<usize>>,
        seed: Option<u64>,
        em_max_iter: Option<usize>,
        restarts: Option<usize>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let data = QuantizedDataset::from_levels(levels).map_err(err)?;
        data.check(&self.doc.scenario.model).map_err(err)?;
        let opts = self.solver(seed, em_max_iter, restarts);
        let model = &self.doc.scenario.model;
        let est = py.detach(|| joint_identify_estimate(model, &data, &opts)).map_err(err)?;
        let out = to_py(py, &est)?;
        let attacked: Vec<usize> = (0..est.eta.len()).filter(|&j| est.eta[j]).map(|j| j + 1).collect();
        out.set_item("attacked", attacked)?;
        Ok(out)
    }

    /// Monte Carlo experiment; returns the per-`K` summary rows and the CSV text.
    #[pyo3(signature = (k_grid, trials, seed = 0, em_max_iter = None, restarts = None))]
    fn simulate<'py>(
        &self,
        py: Python<'py>,
        k_grid: Vec<usize>,
        trials: usize,
        seed: u64,
        em_max_iter: Option<usize>,
        restarts: Option<usize>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let opts = self.solver(None, em_max_iter, restarts);
        let sc = &self.doc.scenario;
        let res = py.detach(|| run_experiment(sc, &k_grid, trials, seed, &opts)).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("rows", to_py(py, &res.rows)?)?;
        d.set_item("csv", res.to_csv(false))?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario(name={:?}, sensors={}, groups={}, theta_dim={})",
            self.name().unwrap_or("custom"),
            self.n_sensors(),
            self.n_groups(),
            self.theta_dim()
        )
    }
}

/// Names of the built-in presets.
#[pyfunction]
fn presets() -> Vec<&'static str> {
    Preset::ALL.iter().map(|p| p.name()).collect()
}

/// Run the command-line tool in-process and return its exit code.
#[pyfunction]
fn main(args: Vec<String>) -> i32 {
    quantspoof::cli::run_command(std::iter::once("quantspoof".to_string()).chain(args))
}

#[pymodule(name = "quantspoof")]
fn quantspoof_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenario>()?;
    m.add_function(wrap_pyfunction!(presets, m)?)?;
    m.add_function(wrap_pyfunction!(main, m)?)?;
    m.add("QuantspoofError", m.py().get_type::<QuantspoofError>())?;
    Ok(())
}

//! Seeded Monte Carlo trials over a scenario and CSV output of the aggregated curves.
//!
//! Trial `t` of an experiment with master seed `s` draws its data from the
//! ChaCha8 stream `t` of key `s` (streams never overlap) and seeds the
//! estimator's restarts with `s + t`. Trial 0 therefore equals `run_trial(.., s)`.

use std::fmt::Write as _;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimator::{joint_identify_estimate, QuantizedDataset, SolverOptions};
use crate::fisher::{build_fim_bundle, crb};
use crate::linalg::fmt17;
use crate::pmf::{sample_level, sensor_distortion};
use crate::scenario::Scenario;

#[derive(Debug, Clone, Serialize)]
pub struct TrialOutcome {
    pub eta_hat: Vec<bool>,
    pub theta_hat: Vec<f64>,
    pub truth_eta: Vec<bool>,
    pub truth_theta: Vec<f64>,
    pub candidates: usize,
    /// Every declared-attacked sensor meets the distortion bound at the estimate.
    pub constraint_satisfied: bool,
    pub flags: Vec<String>,
}

impl TrialOutcome {
    pub fn misclassified(&self) -> usize {
        self.eta_hat.iter().zip(&self.truth_eta).filter(|(a, b)| a != b).count()
    }

    pub fn squared_errors(&self) -> Vec<f64> {
        self.theta_hat.iter().zip(&self.truth_theta).map(|(a, b)| (a - b).powi(2)).collect()
    }
}

pub fn generate_data(scenario: &Scenario, rng: &mut ChaCha8Rng) -> Result<QuantizedDataset> {
    let model = &scenario.model;
    let levels = (0..model.n_sensors())
        .map(|j| {
            (0..model.sensor(j).observations)
                .map(|k| sample_level(model, &scenario.truth, j, k, rng))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    QuantizedDataset::from_levels(levels)
}

fn trial(scenario: &Scenario, k: usize, rng: &mut ChaCha8Rng, solver_seed: u64, base: &SolverOptions) -> Result<TrialOutcome> {
    let sc = scenario.with_rounds(k)?;
    let data = generate_data(&sc, rng)?;
    let options = SolverOptions { seed: solver_seed, ..sc.solver_options(base) };
    let est = joint_identify_estimate(&sc.model, &data, &options)?;
    let mut constraint_satisfied = true;
    for j in (0..est.eta.len()).filter(|&j| est.eta[j]) {
        let d = sensor_distortion(sc.model.sensor(j), &est.params.theta, &est.params.xi[j])?;
        constraint_satisfied &= d > options.d_q;
    }
    Ok(TrialOutcome {
        eta_hat: est.eta.clone(),
        theta_hat: est.params.theta.clone(),
        truth_eta: sc.attacked(),
        truth_theta: sc.truth.theta.clone(),
        candidates: est.candidates.len(),
        constraint_satisfied,
        flags: est.flags,
    })
}

/// One simulated dataset of `k` rounds per sensor (see [`Scenario::with_rounds`]), then joint
/// identification and estimation. Deterministic in `(scenario, k, seed)`.
pub fn run_trial(scenario: &Scenario, k: usize, seed: u64, base: &SolverOptions) -> Result<TrialOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    trial(scenario, k, &mut rng, seed, base)
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentRow {
    pub k: usize,
    pub trials: usize,
    pub misclass_frac: f64,
    pub mse: Vec<f64>,
    pub crb_unattacked_trace: f64,
    pub crb_alldata_trace: f64,
    /// Trials that errored or returned a flagged estimate.
    pub failures: usize,
    pub wall_ms: u128,
    #[serde(skip)]
    pub outcomes: Vec<Option<TrialOutcome>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentResult {
    pub theta_dim: usize,
    pub rows: Vec<ExperimentRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CrbRow {
    pub k: usize,
    pub crb_unattacked_trace: f64,
    /// `NaN` when the joint information matrix is singular.
    pub crb_esa_trace: f64,
    pub crb_alldata_trace: f64,
}

fn sorted_grid(k_grid: &[usize]) -> Result<Vec<usize>> {
    if k_grid.is_empty() || k_grid.contains(&0) {
        return Err(Error::InvalidOptions("K grid must be non-empty with positive entries".into()));
    }
    let mut grid = k_grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    Ok(grid)
}

/// CRB traces at every `K` of the grid.
pub fn crb_curves(scenario: &Scenario, k_grid: &[usize]) -> Result<Vec<CrbRow>> {
    sorted_grid(k_grid)?
        .into_iter()
        .map(|k| {
            let sc = scenario.with_rounds(k)?;
            let report = crb(&build_fim_bundle(&sc.model, &sc.truth)?)?;
            Ok(CrbRow {
                k,
                crb_unattacked_trace: report.crb_unattacked.trace(),
                crb_esa_trace: report.crb_esa.as_ref().map_or(f64::NAN, |m| m.trace()),
                crb_alldata_trace: report.crb_alldata_known_attacks.as_ref().map_or(f64::NAN, |m| m.trace()),
            })
        })
        .collect()
}

/// `trials` seeded trials at every `K`; trials run in parallel and are
/// aggregated in trial order.
pub fn run_experiment(
    scenario: &Scenario,
    k_grid: &[usize],
    trials: usize,
    master_seed: u64,
    base: &SolverOptions,
) -> Result<ExperimentResult> {
    if trials == 0 {
        return Err(Error::InvalidOptions("trials must be at least 1".into()));
    }
    base.validate()?;
    let grid = sorted_grid(k_grid)?;
    let curves = crb_curves(scenario, &grid)?;
    let theta_dim = scenario.model.theta_dim();
    let n = scenario.model.n_sensors() as f64;
    let mut rows = Vec::with_capacity(grid.len());
    for (k, curve) in grid.into_iter().zip(curves) {
        let start = Instant::now();
        let outcomes: Vec<Option<TrialOutcome>> = (0..trials)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
                rng.set_stream(t as u64);
                trial(scenario, k, &mut rng, master_seed.wrapping_add(t as u64), base).ok()
            })
            .collect();
        let wall_ms = start.elapsed().as_millis();
        let mut failures = 0;
        let mut used = 0usize;
        let mut misclass = 0.0;
        let mut sq = vec![0.0; theta_dim];
        for o in &outcomes {
            match o {
                None => failures += 1,
                Some(o) => {
                    if !o.flags.is_empty() {
                        failures += 1;
                    }
                    used += 1;
                    misclass += o.misclassified() as f64 / n;
                    sq.iter_mut().zip(o.squared_errors()).for_each(|(s, e)| *s += e);
                }
            }
        }
        let denom = if used == 0 { f64::NAN } else { used as f64 };
        rows.push(ExperimentRow {
            k,
            trials,
            misclass_frac: misclass / denom,
            mse: sq.into_iter().map(|s| s / denom).collect(),
            crb_unattacked_trace: curve.crb_unattacked_trace,
            crb_alldata_trace: curve.crb_alldata_trace,
            failures,
            wall_ms,
            outcomes,
        });
    }
    Ok(ExperimentResult { theta_dim, rows })
}

impl ExperimentResult {
    /// CSV table, one row per `K`. `wall_ms` is written as 0 unless `timing`
    /// is set, so that reruns are byte-identical.
    pub fn to_csv(&self, timing: bool) -> String {
        let mut out = String::from("K,trials,misclass_frac");
        for i in 0..self.theta_dim {
            let _ = write!(out, ",mse_theta{}", i + 1);
        }
        out.push_str(",crb_unattacked_trace,crb_alldata_trace,failures,wall_ms\n");
        for r in &self.rows {
            let _ = write!(out, "{},{},{}", r.k, r.trials, fmt17(r.misclass_frac));
            for m in &r.mse {
                let _ = write!(out, ",{}", fmt17(*m));
            }
            let wall = if timing { r.wall_ms } else { 0 };
            let _ = writeln!(
                out,
                ",{},{},{},{}",
                fmt17(r.crb_unattacked_trace),
                fmt17(r.crb_alldata_trace),
                r.failures,
                wall
            );
        }
        out
    }
}

//! Joint attack identification and parameter estimation: relaxed EM,
//! constrained variable-threshold rounding (CVTR) and a log-barrier refinement.

pub mod dataset;
mod newton;
mod objective;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use dataset::{QuantizedDataset, Record};
pub use objective::SufficientStats;

use crate::error::{Error, Result};
use crate::family::ObservationFamily;
use crate::model::NetworkModel;
use newton::{maximize, NewtonOutcome, NewtonSettings};
use objective::{distortion_derivs, mixture, weighted_loglik, Eval, Layout, Order, Weights};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Relative change of the relaxed objective that stops EM.
    pub em_tol: f64,
    pub em_max_iter: usize,
    /// Gradient max-norm that stops a Newton solve.
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub armijo_c: f64,
    pub backtrack: f64,
    pub max_halvings: usize,
    pub mu0: f64,
    pub mu_decay: f64,
    pub mu_min: f64,
    /// Independent EM initializations.
    pub restarts: usize,
    /// Minimum average pmf distortion of a declared-attacked sensor.
    pub d_q: f64,
    /// Starting guess for `theta`; a family-based default when absent.
    pub theta_init: Option<Vec<f64>>,
    /// Standard deviation of the random `xi` starts.
    pub xi_init_scale: f64,
    pub pi_init: f64,
    /// Outward scalings tried when a barrier start violates the distortion constraint.
    pub feasibility_attempts: usize,
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            em_tol: 1e-8,
            em_max_iter: 500,
            newton_tol: 1e-8,
            newton_max_iter: 50,
            armijo_c: 1e-4,
            backtrack: 0.5,
            max_halvings: 40,
            mu0: 1.0,
            mu_decay: 0.1,
            mu_min: 1e-6,
            restarts: 5,
            d_q: 0.0,
            theta_init: None,
            xi_init_scale: 0.01,
            pi_init: 0.5,
            feasibility_attempts: 20,
            seed: 0,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidOptions(msg.into()));
        let positive = [
            ("em_tol", self.em_tol),
            ("newton_tol", self.newton_tol),
            ("armijo_c", self.armijo_c),
            ("mu0", self.mu0),
            ("mu_min", self.mu_min),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            return bad(&format!("{name} must be positive"));
        }
        if !(self.armijo_c < 1.0) {
            return bad("armijo_c must be below 1");
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return bad("backtrack must lie in (0, 1)");
        }
        if !(self.mu_decay > 0.0 && self.mu_decay < 1.0) {
            return bad("mu_decay must lie in (0, 1)");
        }
        if self.mu_min > self.mu0 {
            return bad("mu_min must not exceed mu0");
        }
        if self.em_max_iter == 0 || self.newton_max_iter == 0 || self.restarts == 0 {
            return bad("iteration limits and restarts must be at least 1");
        }
        if !(self.d_q.is_finite() && self.d_q >= 0.0) {
            return bad("d_q must be non-negative");
        }
        if !(self.xi_init_scale.is_finite() && self.xi_init_scale >= 0.0) {
            return bad("xi_init_scale must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.pi_init) {
            return bad("pi_init must lie in [0, 1]");
        }
        Ok(())
    }

    fn newton(&self, max_iter: usize) -> NewtonSettings {
        NewtonSettings {
            grad_tol: self.newton_tol,
            max_iter,
            armijo_c: self.armijo_c,
            backtrack: self.backtrack,
            max_halvings: self.max_halvings,
        }
    }

    /// Barrier weights `mu0, mu0 * decay, ...` down to `mu_min`.
    pub fn barrier_schedule(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut mu = self.mu0;
        while mu >= self.mu_min * (1.0 - 1e-9) {
            out.push(mu);
            mu *= self.mu_decay;
        }
        out
    }
}

/// `Xi = [theta; xi^(1); ...; xi^(N)]` with one attack parameter per sensor.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JointParams {
    pub theta: Vec<f64>,
    pub xi: Vec<Vec<f64>>,
}

impl JointParams {
    pub fn zeros(model: &NetworkModel) -> Self {
        Self {
            theta: vec![0.0; model.theta_dim()],
            xi: model.sensors().iter().map(|s| vec![0.0; s.attack_dim()]).collect(),
        }
    }

    fn check(&self, model: &NetworkModel) -> Result<()> {
        let ok = self.theta.len() == model.theta_dim()
            && self.xi.len() == model.n_sensors()
            && self.xi.iter().zip(model.sensors()).all(|(x, s)| x.len() == s.attack_dim());
        if !ok {
            return Err(Error::DimensionMismatch("parameter vector does not match the model".into()));
        }
        if self.theta.iter().chain(self.xi.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter vector contains a non-finite value".into()));
        }
        Ok(())
    }
}

/// Posterior attack probabilities `upsilon^(1)` per `(sensor, pattern, level)` cell.
#[derive(Debug, Clone)]
pub struct Responsibilities {
    pub(crate) upsilon: Vec<Vec<f64>>,
    pub(crate) counts: Vec<Vec<f64>>,
    pub(crate) periods: Vec<usize>,
    pub(crate) levels: Vec<usize>,
    /// Relaxed observed-data objective at the parameters the E-step used.
    pub objective: f64,
}

impl Responsibilities {
    /// One cell per record; `per_record[j][k]` is `upsilon^(1)_{jk}`.
    pub fn from_records(per_record: Vec<Vec<f64>>) -> Self {
        let counts = per_record.iter().map(|r| vec![1.0; r.len()]).collect();
        let periods = per_record.iter().map(Vec::len).collect();
        let levels = vec![1; per_record.len()];
        Self { upsilon: per_record, counts, periods, levels, objective: f64::NAN }
    }

    /// `upsilon^(1)` of the observation of sensor `j` at time `k` with 1-based `level`.
    pub fn attacked(&self, j: usize, k: usize, level: usize) -> f64 {
        let r = self.levels[j];
        let l = if r == 1 { 0 } else { level - 1 };
        self.upsilon[j][(k % self.periods[j]) * r + l]
    }

    /// `upsilon^(0) = 1 - upsilon^(1)`.
    pub fn unattacked(&self, j: usize, k: usize, level: usize) -> f64 {
        1.0 - self.attacked(j, k, level)
    }

    fn weights(&self) -> Weights {
        let w1: Vec<Vec<f64>> =
            self.upsilon.iter().zip(&self.counts).map(|(u, n)| u.iter().zip(n).map(|(u, n)| u * n).collect()).collect();
        let w0 = self
            .upsilon
            .iter()
            .zip(&self.counts)
            .map(|(u, n)| u.iter().zip(n).map(|(u, n)| (1.0 - u) * n).collect())
            .collect();
        Weights { w0, w1 }
    }
}

/// Quantized log-likelihood of a hard assignment `eta`.
pub fn loglik(model: &NetworkModel, stats: &SufficientStats, params: &JointParams, eta: &[bool]) -> Result<f64> {
    params.check(model)?;
    check_len(eta.len(), model)?;
    let layout = Layout::new(model, &vec![false; model.n_sensors()]);
    let e = weighted_loglik(model, stats, &params.theta, &params.xi, &Weights::hard(stats, eta), &layout, Order::Value);
    if e.value.is_finite() {
        Ok(e.value)
    } else {
        Err(Error::NonFinite("log-likelihood is not finite (non-positive variance?)".into()))
    }
}

fn check_len(n: usize, model: &NetworkModel) -> Result<()> {
    if n != model.n_sensors() {
        return Err(Error::DimensionMismatch(format!("{n} entries for {} sensors", model.n_sensors())));
    }
    Ok(())
}

/// E-step: posterior attack probability of every observation.
pub fn e_step(model: &NetworkModel, stats: &SufficientStats, params: &JointParams, pi: &[f64]) -> Result<Responsibilities> {
    params.check(model)?;
    check_len(pi.len(), model)?;
    if pi.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::InvalidOptions("attack probabilities must lie in [0, 1]".into()));
    }
    let (objective, upsilon) = mixture(model, stats, &params.theta, &params.xi, pi)?;
    Ok(Responsibilities {
        upsilon,
        counts: stats.counts.clone(),
        periods: stats.periods.clone(),
        levels: stats.levels.clone(),
        objective,
    })
}

/// M-step for the attack probabilities: the mean responsibility of each sensor.
pub fn m_step_pi(resp: &Responsibilities) -> Result<Vec<f64>> {
    resp.upsilon
        .iter()
        .zip(&resp.counts)
        .enumerate()
        .map(|(j, (u, n))| {
            let total: f64 = n.iter().sum();
            if total <= 0.0 {
                return Err(Error::InvalidDataset(format!("sensor {} has no observations", j + 1)));
            }
            Ok(u.iter().zip(n).map(|(u, n)| u * n).sum::<f64>() / total)
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct MStep {
    pub params: JointParams,
    pub q_start: f64,
    pub q_end: f64,
    pub iterations: usize,
    pub converged: bool,
    pub line_search_failed: bool,
}

/// M-step for `Xi`: damped Newton ascent of the expected complete-data log-likelihood.
pub fn m_step_xi(
    model: &NetworkModel,
    stats: &SufficientStats,
    resp: &Responsibilities,
    start: &JointParams,
    options: &SolverOptions,
) -> Result<MStep> {
    start.check(model)?;
    let weights = resp.weights();
    let active: Vec<bool> = (0..model.n_sensors()).map(|j| weights.attacked_mass(j) > 0.0).collect();
    let layout = Layout::new(model, &active);
    let q = |x: &DVector<f64>, order: Order| {
        let mut p = start.clone();
        layout.unpack(x, &mut p.theta, &mut p.xi);
        weighted_loglik(model, stats, &p.theta, &p.xi, &weights, &layout, order)
    };
    let x0 = layout.pack(&start.theta, &start.xi);
    let outcome = maximize(&q, x0, &options.newton(options.newton_max_iter));
    let q_start = q(&layout.pack(&start.theta, &start.xi), Order::Value).value;
    if !q_start.is_finite() {
        return Err(Error::NonFinite("Q is not finite at the M-step start".into()));
    }
    let mut params = start.clone();
    layout.unpack(&outcome.x, &mut params.theta, &mut params.xi);
    Ok(MStep {
        params,
        q_start,
        q_end: outcome.value,
        iterations: outcome.iterations,
        converged: outcome.converged,
        line_search_failed: outcome.line_search_failed,
    })
}

/// Starting point of one EM run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmStart {
    pub params: JointParams,
    pub pi: Vec<f64>,
}

/// Output of the relaxed EM (`Omega_pi`).
#[derive(Debug, Clone, Serialize)]
pub struct RelaxedState {
    pub params: JointParams,
    pub pi: Vec<f64>,
    /// Relaxed objective at `params`, `pi`.
    pub objective: f64,
    /// Objective after every E-step of the selected run.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Index of the restart that produced this state.
    pub restart: usize,
    /// Final objective of every restart (`None` if it diverged).
    pub restart_objectives: Vec<Option<f64>>,
    pub flags: Vec<String>,
    #[serde(skip)]
    pub responsibilities: Option<Responsibilities>,
}

fn default_theta(model: &NetworkModel) -> Vec<f64> {
    match &model.sensor(0).family {
        ObservationFamily::GaussianMeanVariance => vec![0.0, 1.0],
        _ => vec![0.0; model.theta_dim()],
    }
}

/// Maximum-likelihood `theta` treating every sensor as unattacked.
pub fn unattacked_mle(
    model: &NetworkModel,
    stats: &SufficientStats,
    theta_start: &[f64],
    options: &SolverOptions,
) -> Result<Vec<f64>> {
    let mut base = JointParams::zeros(model);
    base.theta = theta_start.to_vec();
    base.check(model)?;
    let out = solve_hard(model, stats, &vec![false; model.n_sensors()], &base, options, None)?;
    Ok(out.0.theta)
}

/// Run one EM from `start`.
fn em_run(model: &NetworkModel, stats: &SufficientStats, start: &EmStart, options: &SolverOptions) -> Result<RelaxedState> {
    let mut params = start.params.clone();
    let mut pi = start.pi.clone();
    let mut trace = Vec::new();
    let mut flags = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut resp = e_step(model, stats, &params, &pi)?;
    loop {
        if !resp.objective.is_finite() {
            return Err(Error::NonFinite("relaxed objective diverged".into()));
        }
        if let Some(&prev) = trace.last() {
            let change: f64 = resp.objective - prev;
            if change.abs() <= options.em_tol * resp.objective.abs().max(1.0) {
                converged = true;
            }
        }
        trace.push(resp.objective);
        if converged || iterations == options.em_max_iter {
            break;
        }
        iterations += 1;
        pi = m_step_pi(&resp)?;
        let step = m_step_xi(model, stats, &resp, &params, options)?;
        if step.line_search_failed {
            flags.push(format!("M-step line search failed at EM iteration {iterations}"));
        }
        params = step.params;
        resp = e_step(model, stats, &params, &pi)?;
    }
    Ok(RelaxedState {
        params,
        pi,
        objective: resp.objective,
        trace,
        iterations,
        converged,
        restart: 0,
        restart_objectives: Vec::new(),
        flags,
        responsibilities: Some(resp),
    })
}

/// Random `xi` start with valid attacked moments. It is not pushed past
/// `d_q`: the relaxed problem is unconstrained, and barrier starts are made
/// feasible separately.
fn random_xi(model: &NetworkModel, theta: &[f64], scale: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    model
        .sensors()
        .iter()
        .map(|s| {
            let mut xi: Vec<f64> = (0..s.attack_dim())
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    scale * z
                })
                .collect();
            for _ in 0..60 {
                if (0..s.period()).all(|m| {
                    let (mu, v) = s.mean_var(theta, Some(&xi), m);
                    objective::valid(mu, v)
                }) {
                    break;
                }
                xi.iter_mut().for_each(|x| *x *= 0.5);
            }
            xi
        })
        .collect()
}

/// Final state of every EM restart (`None` where the run diverged).
///
/// `init` replaces the first restart's starting point. Restart `r > 0` (or
/// every restart without `init`) draws its `xi` start from ChaCha8 stream `r`
/// of `options.seed`.
pub fn em_relaxed_runs(
    model: &NetworkModel,
    stats: &SufficientStats,
    init: Option<&EmStart>,
    options: &SolverOptions,
) -> Result<Vec<Option<RelaxedState>>> {
    options.validate()?;
    let n = model.n_sensors();
    let theta_start = options.theta_init.clone().unwrap_or_else(|| default_theta(model));
    if theta_start.len() != model.theta_dim() {
        return Err(Error::InvalidOptions(format!("theta_init must have length {}", model.theta_dim())));
    }
    let theta0 = match init {
        Some(s) => s.params.theta.clone(),
        None => unattacked_mle(model, stats, &theta_start, options)?,
    };
    let mut runs = Vec::with_capacity(options.restarts);
    for restart in 0..options.restarts {
        let start = match (restart, init) {
            (0, Some(s)) => s.clone(),
            _ => {
                let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
                rng.set_stream(restart as u64);
                EmStart {
                    params: JointParams { theta: theta0.clone(), xi: random_xi(model, &theta0, options.xi_init_scale, &mut rng) },
                    pi: vec![options.pi_init; n],
                }
            }
        };
        runs.push(em_run(model, stats, &start, options).ok().map(|mut s| {
            s.restart = restart;
            s
        }));
    }
    let objectives: Vec<Option<f64>> = runs.iter().map(|r| r.as_ref().map(|s| s.objective)).collect();
    for s in runs.iter_mut().flatten() {
        s.restart_objectives = objectives.clone();
    }
    Ok(runs)
}

fn diverged_state(model: &NetworkModel, stats: &SufficientStats, options: &SolverOptions, objectives: Vec<Option<f64>>) -> Result<RelaxedState> {
    let theta_start = options.theta_init.clone().unwrap_or_else(|| default_theta(model));
    let theta = unattacked_mle(model, stats, &theta_start, options)?;
    Ok(RelaxedState {
        params: JointParams { theta, xi: JointParams::zeros(model).xi },
        pi: vec![options.pi_init; model.n_sensors()],
        objective: f64::NEG_INFINITY,
        trace: Vec::new(),
        iterations: 0,
        converged: false,
        restart: 0,
        restart_objectives: objectives,
        flags: vec!["all EM restarts diverged".into()],
        responsibilities: None,
    })
}

/// Relaxed EM with `options.restarts` initializations; keeps the best objective
/// (ties go to the earlier restart).
pub fn em_relaxed(
    model: &NetworkModel,
    stats: &SufficientStats,
    init: Option<&EmStart>,
    options: &SolverOptions,
) -> Result<RelaxedState> {
    let runs = em_relaxed_runs(model, stats, init, options)?;
    let objectives: Vec<Option<f64>> = runs.iter().map(|r| r.as_ref().map(|s| s.objective)).collect();
    let mut best: Option<RelaxedState> = None;
    for state in runs.into_iter().flatten() {
        if best.as_ref().is_none_or(|b| state.objective > b.objective) {
            best = Some(state);
        }
    }
    match best {
        Some(state) => Ok(state),
        None => diverged_state(model, stats, options, objectives),
    }
}

/// Candidate attacked sets `eta_j = [pi_j > lambda]` over a threshold sweep,
/// keeping those with fewer than half the sensors attacked, ordered by size.
pub fn cvtr_candidates(pi: &[f64]) -> Vec<Vec<bool>> {
    let n = pi.len();
    let mut values: Vec<f64> = pi.to_vec();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let mut thresholds = Vec::with_capacity(values.len() + 1);
    if let (Some(&lo), Some(&hi)) = (values.first(), values.last()) {
        thresholds.push(lo - 1.0);
        thresholds.extend(values.windows(2).map(|w| 0.5 * (w[0] + w[1])));
        thresholds.push(hi);
    }
    let mut out: Vec<Vec<bool>> = vec![vec![false; n]];
    for lambda in thresholds.into_iter().rev() {
        let eta: Vec<bool> = pi.iter().map(|&p| p > lambda).collect();
        let size = eta.iter().filter(|&&e| e).count();
        if 2 * size < n && !out.contains(&eta) {
            out.push(eta);
        }
    }
    out.sort_by_key(|e| e.iter().filter(|&&x| x).count());
    out
}

/// Result of the barrier refinement of one candidate.
#[derive(Debug, Clone, Serialize)]
pub struct BarrierOutcome {
    pub params: JointParams,
    /// Log-likelihood of the candidate at `params`, without the barrier term.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub line_search_failed: bool,
}

/// Scale `xi_j` outward (both signs) until the distortion constraint holds strictly.
fn feasible_xi(
    model: &NetworkModel,
    stats: &SufficientStats,
    j: usize,
    theta: &[f64],
    xi: &[f64],
    options: &SolverOptions,
) -> Option<Vec<f64>> {
    let sensor = model.sensor(j);
    let ok = |x: &[f64]| {
        distortion_derivs(sensor, stats, j, theta, x, Order::Value).is_some_and(|e| e.value > options.d_q)
    };
    if ok(xi) {
        return Some(xi.to_vec());
    }
    let norm = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
    let dir: Vec<f64> = if norm > 0.0 {
        xi.iter().map(|v| v / norm).collect()
    } else {
        let mut e = vec![0.0; xi.len()];
        e[0] = 1.0;
        e
    };
    let mut radius = norm.max(options.xi_init_scale).max(f64::EPSILON);
    for _ in 0..options.feasibility_attempts {
        radius *= 2.0;
        for sign in [1.0, -1.0] {
            let cand: Vec<f64> = dir.iter().map(|d| sign * radius * d).collect();
            if ok(&cand) {
                return Some(cand);
            }
        }
    }
    None
}

/// Newton solve of the hard-assignment likelihood, with barrier weight `mu` on
/// the distortion constraints of the attacked sensors.
fn solve_hard(
    model: &NetworkModel,
    stats: &SufficientStats,
    eta: &[bool],
    start: &JointParams,
    options: &SolverOptions,
    mu: Option<f64>,
) -> Result<(JointParams, NewtonOutcome)> {
    let weights = Weights::hard(stats, eta);
    let layout = Layout::new(model, eta);
    let d_q = options.d_q;
    let f = |x: &DVector<f64>, order: Order| {
        let mut p = start.clone();
        layout.unpack(x, &mut p.theta, &mut p.xi);
        let mut e = weighted_loglik(model, stats, &p.theta, &p.xi, &weights, &layout, order);
        let Some(mu) = mu else { return e };
        if !e.value.is_finite() {
            return e;
        }
        let dt = layout.theta_dim;
        for j in (0..eta.len()).filter(|&j| eta[j]) {
            let Some(d) = distortion_derivs(model.sensor(j), stats, j, &p.theta, &p.xi[j], order) else {
                return Eval::infeasible(layout.total, order);
            };
            let slack = d.value - d_q;
            if !(slack > 0.0) {
                return Eval::infeasible(layout.total, order);
            }
            e.value += mu * slack.ln();
            if order == Order::Value {
                continue;
            }
            let off = layout.offsets[j].expect("attacked sensors are active");
            let idx = |i: usize| if i < dt { i } else { off + i - dt };
            let n = d.grad.len();
            for i in 0..n {
                e.grad[idx(i)] += mu * d.grad[i] / slack;
                if order == Order::Hessian {
                    for l in 0..n {
                        e.hess[(idx(i), idx(l))] +=
                            mu * (d.hess[(i, l)] / slack - d.grad[i] * d.grad[l] / (slack * slack));
                    }
                }
            }
        }
        e
    };
    let x0 = layout.pack(&start.theta, &start.xi);
    if !f(&x0, Order::Value).value.is_finite() {
        return Err(Error::Infeasible("starting point has no finite objective".into()));
    }
    let out = maximize(f, x0, &options.newton(options.newton_max_iter.max(100)));
    let mut params = start.clone();
    layout.unpack(&out.x, &mut params.theta, &mut params.xi);
    Ok((params, out))
}

/// Maximize the likelihood of candidate `eta` subject to the distortion
/// constraint on every declared-attacked sensor, via a log-barrier schedule.
pub fn barrier_solve(
    model: &NetworkModel,
    stats: &SufficientStats,
    eta: &[bool],
    start: &JointParams,
    options: &SolverOptions,
) -> Result<BarrierOutcome> {
    options.validate()?;
    start.check(model)?;
    check_len(eta.len(), model)?;
    let mut params = start.clone();
    for j in (0..eta.len()).filter(|&j| eta[j]) {
        params.xi[j] = feasible_xi(model, stats, j, &params.theta, &params.xi[j], options).ok_or_else(|| {
            Error::Infeasible(format!("no start for sensor {} meets the distortion bound {}", j + 1, options.d_q))
        })?;
    }
    let mut iterations = 0;
    let mut converged = true;
    let mut line_search_failed = false;
    let schedule: Vec<Option<f64>> = if eta.iter().any(|&e| e) {
        options.barrier_schedule().into_iter().map(Some).collect()
    } else {
        vec![None]
    };
    for mu in schedule {
        let (next, out) = solve_hard(model, stats, eta, &params, options, mu)?;
        params = next;
        iterations += out.iterations;
        converged = out.converged;
        line_search_failed |= out.line_search_failed;
    }
    let objective = loglik(model, stats, &params, eta)?;
    for j in (0..eta.len()).filter(|&j| eta[j]) {
        let d = distortion_derivs(model.sensor(j), stats, j, &params.theta, &params.xi[j], Order::Value)
            .map_or(f64::NEG_INFINITY, |e| e.value);
        if !(d > options.d_q) {
            return Err(Error::Infeasible(format!("sensor {} left the feasible region", j + 1)));
        }
    }
    Ok(BarrierOutcome { params, objective, iterations, converged, line_search_failed })
}

/// Final identification and estimate (`Omega_R`).
#[derive(Debug, Clone, Serialize)]
pub struct RoundedEstimate {
    pub eta: Vec<bool>,
    pub params: JointParams,
    /// Index of the selected candidate.
    pub selected: usize,
    pub candidates: Vec<Vec<bool>>,
    /// Constrained log-likelihood of each candidate (`None` when infeasible).
    pub candidate_objectives: Vec<Option<f64>>,
    pub relaxed: RelaxedState,
    pub flags: Vec<String>,
}

impl RoundedEstimate {
    /// Whether the estimate carries flags signalling a degraded solve.
    pub fn is_flagged(&self) -> bool {
        !self.flags.is_empty()
    }
}

struct Rounded {
    candidates: Vec<Vec<bool>>,
    objectives: Vec<Option<f64>>,
    best: Option<(usize, BarrierOutcome)>,
    flags: Vec<String>,
}

/// CVTR on one relaxed state followed by the barrier refinement of every candidate.
fn round_and_refine(model: &NetworkModel, stats: &SufficientStats, relaxed: &RelaxedState, options: &SolverOptions) -> Rounded {
    let candidates = cvtr_candidates(&relaxed.pi);
    let mut flags = Vec::new();
    let mut best: Option<(usize, BarrierOutcome)> = None;
    let mut objectives = Vec::with_capacity(candidates.len());
    for (l, eta) in candidates.iter().enumerate() {
        match barrier_solve(model, stats, eta, &relaxed.params, options) {
            Ok(out) => {
                objectives.push(Some(out.objective));
                if out.line_search_failed {
                    flags.push(format!("line search failed for candidate {l}"));
                }
                // Candidates come in size order, so strict improvement breaks
                // ties toward fewer attacked sensors.
                if best.as_ref().is_none_or(|(_, b)| out.objective > b.objective) {
                    best = Some((l, out));
                }
            }
            Err(_) => objectives.push(None),
        }
    }
    Rounded { candidates, objectives, best, flags }
}

/// Relaxed EM, CVTR rounding and barrier refinement.
///
/// Every EM restart is rounded and refined on its own; the restart whose best
/// candidate reaches the highest constrained likelihood is kept.
pub fn joint_identify_estimate(
    model: &NetworkModel,
    data: &QuantizedDataset,
    options: &SolverOptions,
) -> Result<RoundedEstimate> {
    options.validate()?;
    let stats = SufficientStats::new(model, data)?;
    let runs = em_relaxed_runs(model, &stats, None, options)?;
    let objectives: Vec<Option<f64>> = runs.iter().map(|r| r.as_ref().map(|s| s.objective)).collect();
    let mut states: Vec<RelaxedState> = runs.into_iter().flatten().collect();
    if states.is_empty() {
        states.push(diverged_state(model, &stats, options, objectives)?);
    }
    let mut chosen: Option<(RelaxedState, Rounded)> = None;
    for state in states {
        let rounded = round_and_refine(model, &stats, &state, options);
        let score = |r: &Rounded| r.best.as_ref().map_or(f64::NEG_INFINITY, |(_, b)| b.objective);
        if chosen.as_ref().is_none_or(|(_, c)| score(&rounded) > score(c)) {
            chosen = Some((state, rounded));
        }
    }
    let (relaxed, rounded) = chosen.expect("at least one relaxed state");
    let mut flags = relaxed.flags.clone();
    flags.extend(rounded.flags);
    let (selected, outcome) = match rounded.best {
        Some(b) => b,
        None => {
            flags.push("every candidate was infeasible".into());
            let theta = unattacked_mle(model, &stats, &relaxed.params.theta, options)?;
            let mut params = relaxed.params.clone();
            params.theta = theta;
            let objective = loglik(model, &stats, &params, &rounded.candidates[0])?;
            (0, BarrierOutcome { params, objective, iterations: 0, converged: false, line_search_failed: false })
        }
    };
    Ok(RoundedEstimate {
        eta: rounded.candidates[selected].clone(),
        params: outcome.params,
        selected,
        candidates: rounded.candidates,
        candidate_objectives: rounded.objectives,
        relaxed,
        flags,
    })
}

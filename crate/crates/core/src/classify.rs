//! Per-group attack classification: inestimable (ISA), optimal estimable (OESA)
//! or estimable but information-losing.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fisher::{build_phi_compressed, level_gradients};
use crate::linalg::{self, SvdFactors, RANK_SAFETY};
use crate::model::{NetworkModel, ParameterPoint};

/// Numerical tolerances of the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    /// Safety factor of the rank threshold `s_max * max(rows, cols) * eps * safety`.
    pub rank_safety: f64,
    /// Relative tolerance of the range-inclusion and information-loss tests.
    pub inclusion_tol: f64,
    /// Entrywise tolerance of the parameter-shift check.
    pub shift_tol: f64,
    /// Relative least-squares residual accepted for pmf-direction coefficients.
    pub direction_tol: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self { rank_safety: RANK_SAFETY, inclusion_tol: 1e-8, shift_tol: 1e-10, direction_tol: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Isa,
    Oesa,
    EstimableNonOptimal,
}

impl Verdict {
    pub fn label(self) -> &'static str {
        match self {
            Verdict::Isa => "ISA",
            Verdict::Oesa => "OESA",
            Verdict::EstimableNonOptimal => "estimable-non-optimal",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AttackVerdict {
    pub group: usize,
    pub attack_dim: usize,
    /// `sum_{j in A_p} K_j (R_j - 1)`.
    pub dimension_bound: usize,
    /// `D_p > dimension_bound`.
    pub dimension_check: bool,
    /// Singular values of `Phi_tau`, descending (those of `J_tau` are their squares).
    pub singular_values_tau: Vec<f64>,
    pub rank_j_tau: usize,
    pub is_isa: bool,
    /// `||(I - P) Phi_theta^T||_F / ||Phi_theta||_F` with `P` the projector onto range(`Phi_tau^T`).
    pub inclusion_residual: f64,
    pub is_oesa: bool,
    /// `||J_{A_p} - B_p J_tau^{-1} B_p^T||_F`; absent for ISA groups.
    pub information_loss_norm: Option<f64>,
    /// Information-loss norm divided by `||J_{A_p}||_F`.
    pub information_loss_relative: Option<f64>,
    /// Whether the information-loss test agrees with the range-inclusion verdict.
    pub information_loss_agrees: bool,
    pub is_ogdsa_component: bool,
    /// OESA holding for every parameter value (declared parameter-shift form).
    pub point_independent: bool,
    pub shift_scale: Option<f64>,
    pub verdict: Verdict,
}

fn check_group(model: &NetworkModel, p: usize) -> Result<()> {
    if p == 0 || p > model.n_groups() {
        return Err(Error::DimensionMismatch(format!("attack group {p} does not exist")));
    }
    Ok(())
}

pub fn classify_group(
    model: &NetworkModel,
    point: &ParameterPoint,
    p: usize,
    cfg: &ClassifierConfig,
) -> Result<AttackVerdict> {
    check_group(model, p)?;
    let phi = build_phi_compressed(model, point, p)?;
    let d = model.group_dim(p);
    let members = model.group(p);
    let dimension_bound: usize = members
        .iter()
        .map(|&j| model.sensor(j).observations * (model.sensor(j).levels() - 1))
        .sum();

    let svd_tau = SvdFactors::new(&phi.phi_tau);
    let rank = svd_tau.rank(cfg.rank_safety);
    let is_isa = rank < d;

    let theta_norm = phi.phi_theta.norm();
    let residual = linalg::residual_outside_range(
        &phi.phi_theta.transpose(),
        &phi.phi_tau.transpose(),
        cfg.rank_safety,
    );
    let inclusion_residual = if theta_norm > 0.0 { residual / theta_norm } else { 0.0 };

    let j_group = &phi.phi_theta * phi.phi_theta.transpose();
    let (loss_norm, loss_rel) = if is_isa {
        (None, None)
    } else {
        let b = &phi.phi_theta * phi.phi_tau.transpose();
        let j_tau = &phi.phi_tau * phi.phi_tau.transpose();
        match linalg::sym_inverse(&j_tau) {
            Ok(inv) => {
                let norm = (&j_group - &b * inv.inverse * b.transpose()).norm();
                let scale = j_group.norm();
                (Some(norm), Some(if scale > 0.0 { norm / scale } else { 0.0 }))
            }
            Err(_) => (None, None),
        }
    };

    let is_oesa = !is_isa && inclusion_residual < cfg.inclusion_tol;
    let loss_says_oesa = loss_rel.is_some_and(|r| r < cfg.inclusion_tol);
    let shift_scale = declared_shift(model, p);
    let verdict = if is_isa {
        Verdict::Isa
    } else if is_oesa {
        Verdict::Oesa
    } else {
        Verdict::EstimableNonOptimal
    };
    Ok(AttackVerdict {
        group: p,
        attack_dim: d,
        dimension_bound,
        dimension_check: d > dimension_bound,
        singular_values_tau: svd_tau.singular_values.iter().copied().collect(),
        rank_j_tau: rank,
        is_isa,
        inclusion_residual,
        is_oesa,
        information_loss_norm: loss_norm,
        information_loss_relative: loss_rel,
        information_loss_agrees: is_isa || loss_says_oesa == is_oesa,
        is_ogdsa_component: is_isa || is_oesa,
        point_independent: is_oesa && shift_scale.is_some(),
        shift_scale,
        verdict,
    })
}

/// Verdicts for every group; the configuration is an OGDSA iff every group is ISA or OESA.
#[derive(Debug, Clone, Serialize)]
pub struct Classification {
    pub groups: Vec<AttackVerdict>,
    pub is_ogdsa: bool,
}

pub fn classify_all(model: &NetworkModel, point: &ParameterPoint, cfg: &ClassifierConfig) -> Result<Classification> {
    let groups = (1..=model.n_groups())
        .map(|p| classify_group(model, point, p, cfg))
        .collect::<Result<Vec<_>>>()?;
    let is_ogdsa = groups.iter().all(|v| v.is_ogdsa_component);
    Ok(Classification { groups, is_ogdsa })
}

fn declared_shift(model: &NetworkModel, p: usize) -> Option<f64> {
    let members = model.group(p);
    let scale = model.sensor(members[0]).attack.shift_scale()?;
    members
        .iter()
        .all(|&j| model.sensor(j).attack.shift_scale() == Some(scale))
        .then_some(scale)
}

/// Declared parameter-shift scale of group `p`, verified numerically as
/// `Phi_theta = scale * Phi_tau` at `point`.
pub fn shift_form_check(
    model: &NetworkModel,
    point: &ParameterPoint,
    p: usize,
    cfg: &ClassifierConfig,
) -> Result<Option<f64>> {
    check_group(model, p)?;
    let Some(scale) = declared_shift(model, p) else {
        return Ok(None);
    };
    let phi = build_phi_compressed(model, point, p)?;
    if phi.phi_theta.shape() != phi.phi_tau.shape() {
        return Err(Error::ShiftFormMismatch { group: p, deviation: f64::INFINITY });
    }
    let deviation = (&phi.phi_theta - &phi.phi_tau * scale).amax();
    if deviation > cfg.shift_tol * phi.phi_theta.amax().max(1.0) {
        return Err(Error::ShiftFormMismatch { group: p, deviation });
    }
    Ok(Some(scale))
}

/// Coefficients `alpha` with `dpsi/dtheta_i = sum_l alpha_l dpsi/dtau_l` over all
/// observations of group `p`, or `None` when no such combination exists.
pub fn pmf_direction_coefficients(
    model: &NetworkModel,
    point: &ParameterPoint,
    p: usize,
    i: usize,
    cfg: &ClassifierConfig,
) -> Result<Option<DVector<f64>>> {
    check_group(model, p)?;
    point.validate(model)?;
    let dt = model.theta_dim();
    if i >= dt {
        return Err(Error::DimensionMismatch(format!("theta has no component {i}")));
    }
    let d = model.group_dim(p);
    let xi = point.tau[p - 1].as_slice();
    let mut target = Vec::new();
    let mut stack = Vec::new();
    for j in model.group(p) {
        let sensor = model.sensor(j);
        for k in 0..sensor.period().min(sensor.observations) {
            let (_, grads) = level_gradients(sensor, j, &point.theta, Some(xi), k)?;
            for r in 0..grads.ncols() {
                target.push(grads[(i, r)]);
                stack.extend((0..d).map(|l| grads[(dt + l, r)]));
            }
        }
    }
    let rows = target.len();
    let a = DMatrix::from_row_slice(rows, d, &stack);
    let y = DVector::from_vec(target);
    if a.amax() == 0.0 {
        return Err(Error::DegenerateDerivatives(p));
    }
    let svd = SvdFactors::new(&a);
    let rank = svd.rank(cfg.rank_safety);
    let mut alpha = DVector::zeros(d);
    for c in 0..rank {
        let coef = svd.u.column(c).dot(&y) / svd.singular_values[c];
        alpha += svd.v.column(c) * coef;
    }
    let residual = (&y - &a * &alpha).norm();
    Ok((residual <= cfg.direction_tol * y.norm()).then_some(alpha))
}

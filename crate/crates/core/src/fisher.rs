//! Phi matrices, Fisher information blocks and Cramer-Rao bounds.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{self, SvdFactors};
use crate::model::{NetworkModel, ParameterPoint, Sensor};
use crate::pmf::{self, level_derivs, level_gradient};

/// Which `(sensor, k, level)` a column of a Phi matrix belongs to.
///
/// In compressed matrices `k` is the pattern index and the column stands for
/// `multiplicity` identical columns (it is scaled by `sqrt(multiplicity)`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhiColumn {
    pub sensor: usize,
    pub k: usize,
    /// 1-based quantization level.
    pub level: usize,
    pub multiplicity: usize,
}

/// Columns `(1/sqrt(p)) dp/dtheta` and `(1/sqrt(p)) dp/dtau` for one group.
#[derive(Debug, Clone)]
pub struct PhiPair {
    pub group: usize,
    pub phi_theta: DMatrix<f64>,
    /// Empty (zero rows) for group 0.
    pub phi_tau: DMatrix<f64>,
    pub columns: Vec<PhiColumn>,
}

impl PhiPair {
    pub fn svd_theta(&self) -> SvdFactors {
        SvdFactors::new(&self.phi_theta)
    }

    pub fn svd_tau(&self) -> SvdFactors {
        SvdFactors::new(&self.phi_tau)
    }
}

/// First derivatives of every level probability of one observation,
/// as an `n x R` matrix over `[theta; xi]`, plus the pmf.
pub(crate) fn level_gradients(
    sensor: &Sensor,
    j: usize,
    theta: &[f64],
    xi: Option<&[f64]>,
    k: usize,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let m = sensor.moments(theta, xi, k);
    pmf::checked(j, m.mean, m.var)?;
    let ld = level_derivs(&sensor.quantizer, m.mean, m.var);
    let r = sensor.levels();
    let mut g = DMatrix::zeros(m.dim(), r);
    for l in 0..r {
        g.column_mut(l).copy_from(&level_gradient(&ld, &m, l));
    }
    Ok((ld.p, g))
}

fn group_members(model: &NetworkModel, point: &ParameterPoint, p: usize) -> Result<Vec<usize>> {
    point.validate(model)?;
    if p > model.n_groups() {
        return Err(Error::DimensionMismatch(format!("group {p} does not exist")));
    }
    let members = model.group(p);
    if members.is_empty() {
        return Err(Error::EmptyGroup(p));
    }
    Ok(members)
}

fn assemble(
    model: &NetworkModel,
    point: &ParameterPoint,
    p: usize,
    compressed: bool,
) -> Result<PhiPair> {
    let members = group_members(model, point, p)?;
    let dt = model.theta_dim();
    let d = if p == 0 { 0 } else { model.group_dim(p) };
    let xi = (p > 0).then(|| point.tau[p - 1].as_slice());
    let mut cols_theta: Vec<f64> = Vec::new();
    let mut cols_tau: Vec<f64> = Vec::new();
    let mut columns = Vec::new();
    for &j in &members {
        let sensor = model.sensor(j);
        let span = if compressed { sensor.period().min(sensor.observations) } else { sensor.observations };
        for k in 0..span {
            let multiplicity = if compressed { sensor.pattern_count(k) } else { 1 };
            let (probs, grads) = level_gradients(sensor, j, &point.theta, xi, k)?;
            for (r, &prob) in probs.iter().enumerate() {
                let w = (multiplicity as f64 / prob).sqrt();
                cols_theta.extend(grads.column(r).rows(0, dt).iter().map(|v| v * w));
                cols_tau.extend(grads.column(r).rows(dt, d).iter().map(|v| v * w));
                columns.push(PhiColumn { sensor: j, k, level: r + 1, multiplicity });
            }
        }
    }
    let phi_theta = DMatrix::from_column_slice(dt, columns.len(), &cols_theta);
    let phi_tau = DMatrix::from_column_slice(d, columns.len(), &cols_tau);
    if phi_theta.iter().chain(phi_tau.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("Phi matrices of group {p} contain non-finite entries")));
    }
    Ok(PhiPair { group: p, phi_theta, phi_tau, columns })
}

/// Phi matrices of group `p` with one column per `(sensor, k, level)`,
/// ordered sensor-major, then time, then level.
pub fn build_phi(model: &NetworkModel, point: &ParameterPoint, p: usize) -> Result<PhiPair> {
    assemble(model, point, p, false)
}

/// Same Gram matrices as [`build_phi`] with repeated observation patterns merged.
pub fn build_phi_compressed(model: &NetworkModel, point: &ParameterPoint, p: usize) -> Result<PhiPair> {
    assemble(model, point, p, true)
}

/// Fisher information blocks of the joint parameter `[theta; tau^(1); ...]`.
#[derive(Debug, Clone)]
pub struct FimBundle {
    pub theta_dim: usize,
    pub group_dims: Vec<usize>,
    /// `J_{A_p}` for `p = 0..=P`.
    pub j_group: Vec<DMatrix<f64>>,
    pub j_theta: DMatrix<f64>,
    /// `B_p` for `p = 1..=P`, stored at `p - 1`.
    pub b: Vec<DMatrix<f64>>,
    /// `J_{tau^(p)}` for `p = 1..=P`, stored at `p - 1`.
    pub j_tau: Vec<DMatrix<f64>>,
    /// Arrowhead joint FIM.
    pub joint: DMatrix<f64>,
}

impl FimBundle {
    /// Offset of `tau^(p)` inside the joint parameter.
    pub fn tau_offset(&self, p: usize) -> usize {
        self.theta_dim + self.group_dims[..p - 1].iter().sum::<usize>()
    }
}

pub fn build_fim_bundle(model: &NetworkModel, point: &ParameterPoint) -> Result<FimBundle> {
    point.validate(model)?;
    let dt = model.theta_dim();
    let n_groups = model.n_groups();
    let group_dims: Vec<usize> = (1..=n_groups).map(|p| model.group_dim(p)).collect();
    let mut j_group = Vec::with_capacity(n_groups + 1);
    let mut b = Vec::with_capacity(n_groups);
    let mut j_tau = Vec::with_capacity(n_groups);
    for p in 0..=n_groups {
        if p == 0 && model.group(0).is_empty() {
            j_group.push(DMatrix::zeros(dt, dt));
            continue;
        }
        let phi = build_phi_compressed(model, point, p)?;
        j_group.push(&phi.phi_theta * phi.phi_theta.transpose());
        if p > 0 {
            b.push(&phi.phi_theta * phi.phi_tau.transpose());
            j_tau.push(&phi.phi_tau * phi.phi_tau.transpose());
        }
    }
    let j_theta = j_group.iter().fold(DMatrix::zeros(dt, dt), |acc, m| acc + m);
    let total = dt + group_dims.iter().sum::<usize>();
    let mut joint = DMatrix::zeros(total, total);
    joint.view_mut((0, 0), (dt, dt)).copy_from(&j_theta);
    let mut offset = dt;
    for p in 0..n_groups {
        let d = group_dims[p];
        joint.view_mut((0, offset), (dt, d)).copy_from(&b[p]);
        joint.view_mut((offset, 0), (d, dt)).copy_from(&b[p].transpose());
        joint.view_mut((offset, offset), (d, d)).copy_from(&j_tau[p]);
        offset += d;
    }
    Ok(FimBundle { theta_dim: dt, group_dims, j_group, j_theta, b, j_tau, joint })
}

/// Cramer-Rao bounds for `theta`.
#[derive(Debug, Clone)]
pub struct CrbReport {
    /// `J_{A_0}^{-1}`: bound using only the unattacked sensors.
    pub crb_unattacked: DMatrix<f64>,
    /// `(J_theta - sum_p B_p J_tau^{-1} B_p^T)^{-1}`; absent if some `J_tau` is singular.
    pub crb_esa: Option<DMatrix<f64>>,
    /// Leading `D_theta` block of the joint FIM inverse; absent if the joint FIM is singular.
    pub crb_alldata_known_attacks: Option<DMatrix<f64>>,
    /// `J_{A_p} - B_p J_tau^{-1} B_p^T` for `p = 1..=P` (absent where `J_tau` is singular).
    pub information_loss: Vec<Option<DMatrix<f64>>>,
    pub condition_unattacked: f64,
    pub condition_joint: Option<f64>,
    /// Any inversion had condition number above [`linalg::ILL_CONDITIONED`].
    pub ill_conditioned: bool,
}

pub fn crb(bundle: &FimBundle) -> Result<CrbReport> {
    let unatt = linalg::sym_inverse(&bundle.j_group[0]).map_err(|e| {
        Error::InsufficientUnattackedData(format!("the unattacked FIM J_A0 cannot be inverted ({e})"))
    })?;
    let mut ill = unatt.ill_conditioned();
    let mut information_loss = Vec::with_capacity(bundle.b.len());
    let mut schur = bundle.j_theta.clone();
    let mut all_estimable = true;
    for (p, (b, jt)) in bundle.b.iter().zip(&bundle.j_tau).enumerate() {
        match linalg::sym_inverse(jt) {
            Ok(inv) => {
                ill |= inv.ill_conditioned();
                let removed = b * &inv.inverse * b.transpose();
                schur -= &removed;
                information_loss.push(Some(&bundle.j_group[p + 1] - removed));
            }
            Err(_) => {
                all_estimable = false;
                information_loss.push(None);
            }
        }
    }
    let crb_esa = if all_estimable {
        let inv = linalg::sym_inverse(&schur)?;
        ill |= inv.ill_conditioned();
        Some(symmetrize(inv.inverse))
    } else {
        None
    };
    let dt = bundle.theta_dim;
    let (crb_alldata_known_attacks, condition_joint) = match linalg::sym_inverse(&bundle.joint) {
        Ok(inv) => {
            ill |= inv.ill_conditioned();
            (Some(symmetrize(inv.inverse.view((0, 0), (dt, dt)).into_owned())), Some(inv.condition))
        }
        Err(_) => (None, None),
    };
    Ok(CrbReport {
        crb_unattacked: symmetrize(unatt.inverse),
        crb_esa,
        crb_alldata_known_attacks,
        information_loss,
        condition_unattacked: unatt.condition,
        condition_joint,
        ill_conditioned: ill,
    })
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

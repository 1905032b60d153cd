use super::{kfpca_step_lin, ukfpca_step, PcaHistory, PcaModel};
use crate::error::{Error, Result};
use crate::filter::{ekf_step, ukf_step, NonlinearModel, StateEstimate, Step, UkfConfig};
use crate::numerics::Vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Ekf,
    Pca,
}

/// Which base filter drives the two branches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JointKind {
    /// EKF against EKF-PCA (linearisation method).
    Ekf,
    /// UKF against UKF-PCA.
    Ukf(UkfConfig),
}

/// Two independently running branches and the per-step innovation selection.
#[derive(Debug, Clone)]
pub struct JointEstimate {
    pub kind: JointKind,
    pub branch_ekf: StateEstimate,
    pub branch_pca: StateEstimate,
    pub selected: Branch,
    pub eps_ekf: Vector,
    pub eps_pca: Vector,
    /// Numeric failure of a branch in the last step, if any.
    pub failure: Option<(Branch, Error)>,
    pub history: PcaHistory,
}

impl JointEstimate {
    pub fn new(kind: JointKind, initial: StateEstimate) -> Self {
        JointEstimate {
            kind,
            branch_ekf: initial.clone(),
            branch_pca: initial,
            selected: Branch::Ekf,
            eps_ekf: Vector::zeros(0),
            eps_pca: Vector::zeros(0),
            failure: None,
            history: PcaHistory::default(),
        }
    }

    pub fn selected_state(&self) -> &StateEstimate {
        match self.selected {
            Branch::Ekf => &self.branch_ekf,
            Branch::Pca => &self.branch_pca,
        }
    }

    pub fn selected_eps_norm(&self) -> f64 {
        match self.selected {
            Branch::Ekf => self.eps_ekf.norm(),
            Branch::Pca => self.eps_pca.norm(),
        }
    }

    pub fn unselected_eps_norm(&self) -> f64 {
        match self.selected {
            Branch::Ekf => self.eps_pca.norm(),
            Branch::Pca => self.eps_ekf.norm(),
        }
    }
}

/// The innovation rule: EKF unless the PCA innovation is strictly smaller.
pub fn select_branch(eps_ekf: &Vector, eps_pca: &Vector) -> Branch {
    if eps_ekf.norm() <= eps_pca.norm() {
        Branch::Ekf
    } else {
        Branch::Pca
    }
}

/// Advances both branches and selects by `‖ε_EKF‖ ≤ ‖ε_PCA‖`.
///
/// A branch that fails numerically gets an infinite innovation and is
/// restarted from the selected posterior; if both fail the first error is
/// returned.
pub fn joint_step(
    joint: &JointEstimate,
    model: &NonlinearModel,
    pca: &PcaModel,
    z: &Vector,
) -> Result<JointEstimate> {
    let mut history = joint.history.clone();
    let (base, fused): (Result<Step>, Result<Step>) = match joint.kind {
        JointKind::Ekf => (
            ekf_step(&joint.branch_ekf, model, z),
            kfpca_step_lin(&mut history, &joint.branch_pca, model, pca, z),
        ),
        JointKind::Ukf(cfg) => (
            ukf_step(&joint.branch_ekf, model, &cfg, z),
            ukfpca_step(&joint.branch_pca, model, pca, &cfg, z),
        ),
    };
    let infinite = || Vector::from_element(1, f64::INFINITY);
    let (branch_ekf, branch_pca, eps_ekf, eps_pca, failure) = match (base, fused) {
        (Err(e), Err(_)) => return Err(e),
        (Ok(b), Ok(f)) => (b.posterior, f.posterior, b.innovation, f.innovation, None),
        (Err(e), Ok(f)) => (f.posterior.clone(), f.posterior, infinite(), f.innovation, Some((Branch::Ekf, e))),
        (Ok(b), Err(e)) => (b.posterior.clone(), b.posterior, b.innovation, infinite(), Some((Branch::Pca, e))),
    };
    let selected = select_branch(&eps_ekf, &eps_pca);
    if let Some((branch, e)) = &failure {
        log::warn!("joint estimator {branch:?} branch failed: {e}");
    }
    Ok(JointEstimate {
        kind: joint.kind,
        branch_ekf,
        branch_pca,
        selected,
        eps_ekf,
        eps_pca,
        failure,
        history,
    })
}

use super::{attn_forward, AttentionParams};
use crate::error::Result;
use crate::filter::{ekf_step, NonlinearModel, StateEstimate, Step};
use crate::pca::{kfpca_step_lin, MeasurementWindow, PcaHistory, PcaModel};

/// EKF step on the attention-fused measurement of a full window.
pub fn akf_step(
    state: &StateEstimate,
    model: &NonlinearModel,
    params: &AttentionParams,
    window: &MeasurementWindow,
) -> Result<Step> {
    let fused = attn_forward(params, window)?.z_fused;
    ekf_step(state, model, &fused)
}

/// Fused measurement projected through the PCA model, then a linearisation KF-PCA step.
pub fn akf_pca_step(
    history: &mut PcaHistory,
    state: &StateEstimate,
    model: &NonlinearModel,
    params: &AttentionParams,
    window: &MeasurementWindow,
    pca: &PcaModel,
) -> Result<Step> {
    let fused = attn_forward(params, window)?.z_fused;
    kfpca_step_lin(history, state, model, pca, &fused)
}

//! PWLS reconstruction: the relaxed LALM image update, the learned-model
//! regularizer, the edge-preserving baseline and image-quality metrics.

mod ep;
mod lalm;
mod metrics;
mod pwls;
mod regularizer;

pub use ep::{potential, potential_derivative, pwls_ep, statistical_kappa, EpConfig, EpPenalty, KappaMode};
pub use lalm::{image_update, rho_schedule, LalmState, DEFAULT_ALPHA};
pub use metrics::{circular_roi, rmse_roi, ssim, ssim_with_range, SSIM_K1, SSIM_K2, SSIM_WINDOW};
pub use pwls::{pwls_mcst, InitImage, OuterRecord, ReconConfig, ReconTrace};
pub use regularizer::{
    grad_s2, hessian_s2, regularizer_value_s, s2_value, McstPenalty, NoPenalty, SmoothPenalty,
};

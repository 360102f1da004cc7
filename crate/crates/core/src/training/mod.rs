//! Gradient-based fitting: a reverse-mode tape, the Hankel and direct
//! likelihood losses, Adam, early stopping and finite-difference checks.

mod adam;
mod fit;
mod gradcheck;
mod loss;
mod params;
pub mod tape;

pub use adam::{adam_step, adam_update, clip_grad_norm, AdamConfig, AdamState};
pub use fit::{
    fit_hankel, fit_sgd, fit_sgd_from, EpochRecord, HankelFit, SgdFit, TrainConfig, TrainHistory,
};
pub use gradcheck::{grad_check, GradCheckReport, FD_RESOLUTION, FD_STEP};
pub use loss::{direct_log_densities, hankel_log_densities, hankel_loss, loss_direct};
pub use params::ParamGraph;

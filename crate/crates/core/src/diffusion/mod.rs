//! Deterministic DDIM with h-space interpolation.
//!
//! The engine only talks to a [`Denoiser`], so the same code runs against the
//! closed-form [`AnalyticGaussianDenoiser`] and against a pretrained network served
//! over the newline-delimited JSON protocol in [`protocol`].

mod denoiser;
mod engine;
pub mod protocol;
mod schedule;

pub use denoiser::{AnalyticGaussianDenoiser, Denoiser, HVector, Prediction};
pub use engine::{
    ddim_generate, ddim_invert, ddim_reverse, generate_diffusion_pairs, generate_diffusion_set,
    interpolate_h, DiffusionConfig, DiffusionSample,
};
pub use schedule::NoiseSchedule;

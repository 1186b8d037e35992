//! Product-of-Gaussian-mixture diffusion model (PoGMDM) prior with analytic
//! score, denoising-score-matching training, and joint parallel-MRI
//! reconstruction that alternates diffusion-based image updates with
//! proximal coil-sensitivity updates.
//!
//! The crate is organized around the pipeline stages:
//!
//! * [`experts`] — one-dimensional Gaussian-mixture potentials and the
//!   time-conditioning rules that map diffusion variance to per-expert
//!   mixture variances.
//! * [`filterbank`] — circular convolution operators, their adjoints and
//!   spectral statistics.
//! * [`prior`] — the assembled model: energy, score, Tweedie denoiser.
//! * [`training`] — denoising score matching with manual adjoint gradients,
//!   AdaBelief, EMA and constraint projections.
//! * [`mri`] — SENSE forward model, likelihood gradients, sampling masks,
//!   and the DST-based coil-smoothness proximal operator.
//! * [`recon`] — noise schedule, predictor–corrector steps and the joint
//!   reconstruction loop with Monte-Carlo averaging.
//! * [`io`], [`metrics`], [`synth`] — array container I/O, configuration,
//!   quality metrics, and synthetic data generation.

pub mod error;
pub mod experts;
pub mod fft;
pub mod filterbank;
pub mod io;
pub mod metrics;
pub mod mri;
pub mod prior;
pub mod recon;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
pub use experts::{GmmExpert, TimeConditioning};
pub use filterbank::FilterBank;
pub use prior::PoGmdm;

//! The assembled product-of-Gaussian-mixture diffusion prior.
//!
//! `p(x, v)` is a product of 1-D mixture potentials over all filter
//! responses, indexed by the diffusion variance `v = 2t`. The score is the
//! analytic gradient of the log-density, so it is a conservative field by
//! construction, and the Tweedie map `y + v * score(y, v)` is the model's
//! posterior-mean denoiser.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experts::{GmmExpert, TimeConditioning};
use crate::filterbank::FilterBank;

/// Training provenance carried inside the model container.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub iterations: u64,
    pub ema: bool,
    pub interval: (f64, f64),
    pub training_image_size: (usize, usize),
}

#[derive(Debug, Clone)]
pub struct PoGmdm {
    bank: FilterBank,
    experts: Vec<GmmExpert>,
    conditioning: TimeConditioning,
    metadata: ModelMetadata,
}

impl PoGmdm {
    pub fn new(
        bank: FilterBank,
        experts: Vec<GmmExpert>,
        conditioning: TimeConditioning,
        metadata: ModelMetadata,
    ) -> Result<Self> {
        if bank.n_filters() != experts.len() || conditioning.n_experts() != experts.len() {
            return Err(Error::shape(
                format!("{} filters/experts/conditioning outputs", bank.n_filters()),
                format!(
                    "{} experts, {} conditioning outputs",
                    experts.len(),
                    conditioning.n_experts()
                ),
            ));
        }
        Ok(Self {
            bank,
            experts,
            conditioning,
            metadata,
        })
    }

    pub fn bank(&self) -> &FilterBank {
        &self.bank
    }

    pub fn experts(&self) -> &[GmmExpert] {
        &self.experts
    }

    pub fn conditioning(&self) -> &TimeConditioning {
        &self.conditioning
    }

    pub fn metadata(&self) -> &ModelMetadata {
        &self.metadata
    }

    pub fn n_filters(&self) -> usize {
        self.bank.n_filters()
    }

    /// Mutable access for optimizers; constraint maintenance (projections,
    /// spectra refresh) is the caller's responsibility.
    pub fn bank_mut(&mut self) -> &mut FilterBank {
        &mut self.bank
    }

    pub fn experts_mut(&mut self) -> &mut Vec<GmmExpert> {
        &mut self.experts
    }

    pub fn conditioning_mut(&mut self) -> &mut TimeConditioning {
        &mut self.conditioning
    }

    pub fn metadata_mut(&mut self) -> &mut ModelMetadata {
        &mut self.metadata
    }

    /// Re-cache filter spectra for a new working grid. The spectral `nu^2`
    /// values inside the conditioning stay frozen at their training values.
    pub fn set_image_shape(&mut self, shape: (usize, usize)) {
        self.bank.set_image_shape(shape);
    }

    /// Per-expert mixture variances at diffusion variance `v`.
    pub fn variances(&self, v: f64) -> Result<Vec<f64>> {
        self.conditioning.variance_at(v)
    }

    /// Negative log-density (up to the normalization constant):
    /// `-sum_{l,k} log psi_k((K_k x)_l, v)`.
    pub fn energy(&self, x: &Array2<f64>, v: f64) -> Result<f64> {
        let variances = self.variances(v)?;
        let responses = self.bank.conv_forward(x)?;
        let mut total = 0.0;
        for (k, expert) in self.experts.iter().enumerate() {
            let var = variances[k];
            let channel = responses.index_axis(Axis(0), k);
            for &z in channel.iter() {
                total -= expert.eval_unchecked(z, var).log_density;
            }
        }
        Ok(total)
    }

    /// `grad log p(x, v)`, the analytic score.
    pub fn score(&self, x: &Array2<f64>, v: f64) -> Result<Array2<f64>> {
        let variances = self.variances(v)?;
        let mut responses = self.bank.conv_forward(x)?;
        for (k, expert) in self.experts.iter().enumerate() {
            let var = variances[k];
            let mut channel = responses.index_axis_mut(Axis(0), k);
            for z in channel.iter_mut() {
                *z = expert.eval_unchecked(*z, var).score;
            }
        }
        self.bank.conv_adjoint(&responses)
    }

    /// One-step empirical-Bayes denoiser `y + v * score(y, v)`, the model's
    /// estimate of `E[X_0 | X_t = y]` for noise variance `v`.
    pub fn denoise_tweedie(&self, y: &Array2<f64>, v: f64) -> Result<Array2<f64>> {
        if !(v > 0.0) {
            return Err(Error::invalid(format!(
                "noise variance must be positive, got {v}"
            )));
        }
        let score = self.score(y, v)?;
        Ok(y + &score.mapv(|s| s * v))
    }

    /// Count of trainable scalars: kernel entries, free weights, conditioning.
    pub fn count_parameters(&self) -> usize {
        let weights: usize = self.experts.iter().map(|e| e.free_weights().len()).sum();
        self.bank.param_count() + weights + self.conditioning.trainable_param_count()
    }
}

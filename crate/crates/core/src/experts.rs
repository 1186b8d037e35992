//! One-dimensional Gaussian-mixture potentials and time conditioning.
//!
//! Each potential is an `L`-component mixture on a fixed equidistant means
//! grid with simplex-constrained, mirror-symmetric weights and a variance
//! shared across components. The variance at diffusion time `t` is produced
//! by a [`TimeConditioning`] rule from the diffusion variance `v = 2t`.
//!
//! Weights are stored as the free half (`ceil(L/2)` entries); the full
//! vector is materialized by mirroring around the center entry.

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};

/// Hidden width of the learned time-conditioning MLP.
pub const MLP_HIDDEN: usize = 64;

/// One mixture potential: fixed means grid, free weights, base variance.
#[derive(Debug, Clone)]
pub struct GmmExpert {
    v_min: f64,
    v_max: f64,
    n_components: usize,
    free_weights: Vec<f64>,
    /// Materialized (mirrored) weights, kept in sync with `free_weights`.
    weights: Vec<f64>,
    /// ln of the materialized weights; `-inf` where the weight is <= 0.
    ln_weights: Vec<f64>,
    base_variance: f64,
}

/// Per-point evaluation of a potential at a given variance.
#[derive(Debug, Clone, Copy)]
pub struct GmmPointEval {
    /// `log psi(x)`
    pub log_density: f64,
    /// `d/dx log psi(x)`
    pub score: f64,
    /// `d^2/dx^2 log psi(x)`
    pub curvature: f64,
    /// `d/dvar (d/dx log psi(x))`
    pub dscore_dvar: f64,
}

impl GmmExpert {
    /// Expert with uniform weights on an equidistant grid over `[v_min, v_max]`
    /// and the default base variance `(v_max - v_min)/(L - 1)`.
    pub fn uniform(v_min: f64, v_max: f64, l: usize) -> Result<Self> {
        if l < 3 || l % 2 == 0 {
            return Err(Error::invalid(format!(
                "component count must be odd and >= 3, got {l}"
            )));
        }
        if !(v_max > v_min) {
            return Err(Error::invalid("means interval must satisfy v_max > v_min"));
        }
        let base_variance = (v_max - v_min) / (l - 1) as f64;
        let free = vec![1.0 / l as f64; l.div_ceil(2)];
        Self::from_parts(v_min, v_max, l, free, base_variance)
    }

    /// Degenerate single-component expert (a plain Gaussian at `mean`).
    pub fn single_component(mean: f64, base_variance: f64) -> Result<Self> {
        if !(base_variance > 0.0) {
            return Err(Error::invalid("base variance must be positive"));
        }
        Ok(Self {
            v_min: mean,
            v_max: mean,
            n_components: 1,
            free_weights: vec![1.0],
            weights: vec![1.0],
            ln_weights: vec![0.0],
            base_variance,
        })
    }

    pub fn from_parts(
        v_min: f64,
        v_max: f64,
        l: usize,
        free_weights: Vec<f64>,
        base_variance: f64,
    ) -> Result<Self> {
        if l == 0 || l % 2 == 0 {
            return Err(Error::invalid("component count must be odd"));
        }
        if free_weights.len() != l.div_ceil(2) {
            return Err(Error::shape(
                format!("{} free weights", l.div_ceil(2)),
                format!("{}", free_weights.len()),
            ));
        }
        if !(base_variance > 0.0) {
            return Err(Error::invalid("base variance must be positive"));
        }
        if l > 1 && !(v_max > v_min) {
            return Err(Error::invalid("means interval must satisfy v_max > v_min"));
        }
        let mut expert = Self {
            v_min,
            v_max,
            n_components: l,
            free_weights: Vec::new(),
            weights: Vec::new(),
            ln_weights: Vec::new(),
            base_variance,
        };
        expert.set_free_weights(free_weights);
        Ok(expert)
    }

    pub fn n_components(&self) -> usize {
        self.n_components
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.v_min, self.v_max)
    }

    pub fn base_variance(&self) -> f64 {
        self.base_variance
    }

    /// The `i`-th grid mean.
    #[inline]
    pub fn mean(&self, i: usize) -> f64 {
        if self.n_components == 1 {
            self.v_min
        } else {
            self.v_min + i as f64 * (self.v_max - self.v_min) / (self.n_components - 1) as f64
        }
    }

    pub fn means(&self) -> Vec<f64> {
        (0..self.n_components).map(|i| self.mean(i)).collect()
    }

    pub fn free_weights(&self) -> &[f64] {
        &self.free_weights
    }

    /// Materialized weight vector after mirroring.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn set_free_weights(&mut self, free: Vec<f64>) {
        debug_assert_eq!(free.len(), self.n_components.div_ceil(2));
        self.weights = mirror_weights(&free, self.n_components);
        self.ln_weights = self
            .weights
            .iter()
            .map(|&w| if w > 0.0 { w.ln() } else { f64::NEG_INFINITY })
            .collect();
        self.free_weights = free;
    }

    /// Mirror the free weights and project onto the unit simplex.
    pub fn project_weights(&mut self) {
        let projected = project_simplex(&mirror_weights(&self.free_weights, self.n_components));
        self.set_free_weights(extract_free(&projected));
    }

    /// `log psi(x)` at the given mixture variance, via log-sum-exp.
    pub fn log_density(&self, x: f64, variance: f64) -> Result<f64> {
        self.check_variance(variance)?;
        Ok(self.eval_unchecked(x, variance).log_density)
    }

    /// `d/dx log psi(x)` at the given mixture variance.
    pub fn log_density_grad(&self, x: f64, variance: f64) -> Result<f64> {
        self.check_variance(variance)?;
        Ok(self.eval_unchecked(x, variance).score)
    }

    fn check_variance(&self, variance: f64) -> Result<()> {
        if !(variance > 0.0) {
            return Err(Error::invalid(format!(
                "mixture variance must be positive, got {variance}"
            )));
        }
        Ok(())
    }

    /// Full point evaluation. Caller guarantees `variance > 0`.
    pub(crate) fn eval_unchecked(&self, x: f64, variance: f64) -> GmmPointEval {
        debug_assert!(variance > 0.0);
        let inv = 1.0 / variance;
        // Pass 1: the log-sum-exp shift over components with positive weight.
        let mut shift = f64::NEG_INFINITY;
        for i in 0..self.n_components {
            let lw = self.ln_weights[i];
            if lw == f64::NEG_INFINITY {
                continue;
            }
            let d = x - self.mean(i);
            let a = lw - 0.5 * d * d * inv;
            if a > shift {
                shift = a;
            }
        }
        // Pass 2: shifted moment sums in the scaled response u = (mu - x)/var.
        let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..self.n_components {
            let lw = self.ln_weights[i];
            if lw == f64::NEG_INFINITY {
                continue;
            }
            let d = x - self.mean(i);
            let e = (lw - 0.5 * d * d * inv - shift).exp();
            let u = -d * inv;
            s0 += e;
            s1 += e * u;
            s2 += e * u * u;
            s3 += e * u * u * u;
        }
        let log_density =
            shift + s0.ln() - 0.5 * (2.0 * std::f64::consts::PI * variance).ln();
        let score = s1 / s0;
        let curvature = s2 / s0 - inv - score * score;
        let dscore_dvar = 0.5 * s3 / s0 - inv * score - 0.5 * score * (s2 / s0);
        GmmPointEval {
            log_density,
            score,
            curvature,
            dscore_dvar,
        }
    }

    /// Point evaluation plus `d score / d w_i` for every materialized weight,
    /// including components whose current weight is zero. The training path
    /// fuses this computation into its response sweep; kept here as the
    /// reference implementation for the derivative tests.
    #[cfg(test)]
    pub(crate) fn eval_with_weight_derivs(
        &self,
        x: f64,
        variance: f64,
        dscore_dw: &mut [f64],
    ) -> GmmPointEval {
        debug_assert_eq!(dscore_dw.len(), self.n_components);
        let eval = self.eval_unchecked(x, variance);
        let inv = 1.0 / variance;
        let log_norm = -0.5 * (2.0 * std::f64::consts::PI * variance).ln();
        for i in 0..self.n_components {
            let d = x - self.mean(i);
            // g_i / psi where g_i is the unit Gaussian component density
            let ratio = (log_norm - 0.5 * d * d * inv - eval.log_density).exp();
            dscore_dw[i] = ratio * (-d * inv - eval.score);
        }
        eval
    }
}

/// Mirror the free half into a full symmetric weight vector.
///
/// The center entry is the last free entry; renormalization onto the simplex
/// is the caller's responsibility.
pub fn mirror_weights(free: &[f64], l: usize) -> Vec<f64> {
    assert!(l % 2 == 1, "mirroring requires an odd component count");
    assert_eq!(free.len(), l.div_ceil(2));
    let mut w = vec![0.0; l];
    for (i, &f) in free.iter().enumerate() {
        w[i] = f;
        w[l - 1 - i] = f;
    }
    w
}

/// Inverse of [`mirror_weights`] on symmetric vectors: the first `ceil(L/2)` entries.
pub fn extract_free(w: &[f64]) -> Vec<f64> {
    w[..w.len().div_ceil(2)].to_vec()
}

/// Euclidean projection onto the unit simplex `{w >= 0, sum w = 1}`.
///
/// Sort-based exact algorithm, O(L log L); idempotent and order-preserving.
pub fn project_simplex(w: &[f64]) -> Vec<f64> {
    let mut sorted = w.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite weights"));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let candidate = (cumsum - 1.0) / (j + 1) as f64;
        if u - candidate > 0.0 {
            tau = candidate;
        }
    }
    w.iter().map(|&x| (x - tau).max(0.0)).collect()
}

/// Numerically stable `ln(1 + exp(x))`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

#[inline]
fn elu_deriv(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

/// Learned time-conditioning network `sqrt(v) -> R^o_+`, three affine layers
/// with ELU activations and a terminal softplus.
#[derive(Debug, Clone)]
pub struct TimeMlp {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Array2<f64>,
    pub b2: Vec<f64>,
    pub w3: Array2<f64>,
    pub b3: Vec<f64>,
}

/// Gradients with the same shapes as [`TimeMlp`].
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Array2<f64>,
    pub b2: Vec<f64>,
    pub w3: Array2<f64>,
    pub b3: Vec<f64>,
}

impl TimeMlp {
    pub fn new(n_outputs: usize, rng: &mut impl Rng) -> Self {
        let h = MLP_HIDDEN;
        let std1 = 1.0;
        let std2 = (1.0 / h as f64).sqrt();
        let normal = crate::synth::standard_normal;
        Self {
            w1: (0..h).map(|_| std1 * normal(rng)).collect(),
            b1: vec![0.0; h],
            w2: Array2::from_shape_fn((h, h), |_| std2 * normal(rng)),
            b2: vec![0.0; h],
            w3: Array2::from_shape_fn((n_outputs, h), |_| std2 * normal(rng)),
            b3: vec![0.0; n_outputs],
        }
    }

    pub fn n_outputs(&self) -> usize {
        self.b3.len()
    }

    pub fn param_count(&self) -> usize {
        let h = MLP_HIDDEN;
        let o = self.n_outputs();
        (h + h) + (h * h + h) + (h * o + o)
    }

    /// Forward pass; returns the positive output vector.
    pub fn forward(&self, input: f64) -> Vec<f64> {
        self.forward_cached(input).0
    }

    #[allow(clippy::type_complexity)]
    fn forward_cached(&self, input: f64) -> (Vec<f64>, (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)) {
        let h = MLP_HIDDEN;
        let z1: Vec<f64> = (0..h).map(|i| self.w1[i] * input + self.b1[i]).collect();
        let a1: Vec<f64> = z1.iter().map(|&z| elu(z)).collect();
        let z2: Vec<f64> = (0..h)
            .map(|i| {
                let mut acc = self.b2[i];
                for j in 0..h {
                    acc += self.w2[[i, j]] * a1[j];
                }
                acc
            })
            .collect();
        let a2: Vec<f64> = z2.iter().map(|&z| elu(z)).collect();
        let o = self.n_outputs();
        let z3: Vec<f64> = (0..o)
            .map(|i| {
                let mut acc = self.b3[i];
                for j in 0..h {
                    acc += self.w3[[i, j]] * a2[j];
                }
                acc
            })
            .collect();
        let out = z3.iter().map(|&z| softplus(z)).collect();
        (out, (z1, a1, z2, a2, z3))
    }

    /// Reverse-mode gradients of `sum_k upstream_k * out_k` w.r.t. all parameters.
    pub fn backward(&self, input: f64, upstream: &[f64]) -> MlpGrads {
        let h = MLP_HIDDEN;
        let o = self.n_outputs();
        debug_assert_eq!(upstream.len(), o);
        let (_, (z1, a1, z2, a2, z3)) = self.forward_cached(input);
        let dz3: Vec<f64> = (0..o).map(|i| upstream[i] * sigmoid(z3[i])).collect();
        let mut gw3 = Array2::zeros((o, h));
        for i in 0..o {
            for j in 0..h {
                gw3[[i, j]] = dz3[i] * a2[j];
            }
        }
        let mut da2 = vec![0.0; h];
        for j in 0..h {
            for i in 0..o {
                da2[j] += self.w3[[i, j]] * dz3[i];
            }
        }
        let dz2: Vec<f64> = (0..h).map(|j| da2[j] * elu_deriv(z2[j])).collect();
        let mut gw2 = Array2::zeros((h, h));
        for i in 0..h {
            for j in 0..h {
                gw2[[i, j]] = dz2[i] * a1[j];
            }
        }
        let mut da1 = vec![0.0; h];
        for j in 0..h {
            for i in 0..h {
                da1[j] += self.w2[[i, j]] * dz2[i];
            }
        }
        let dz1: Vec<f64> = (0..h).map(|j| da1[j] * elu_deriv(z1[j])).collect();
        MlpGrads {
            w1: dz1.iter().map(|&d| d * input).collect(),
            b1: dz1,
            w2: gw2,
            b2: dz2.clone(),
            w3: gw3,
            b3: dz3,
        }
    }
}

/// Rule mapping diffusion variance `v = 2t` to per-expert mixture variances.
#[derive(Debug, Clone)]
pub enum TimeConditioning {
    /// `sigma_k^2(v) = sigma_0^2 + nu_k^2 * v` with `nu_k^2` the maximum of the
    /// filter magnitude spectrum, frozen at the training image size.
    SpectralMax { nu2: Vec<f64>, sigma0_sq: f64 },
    /// Same rule with the spectrum mean instead of the maximum.
    SpectralMean { nu2: Vec<f64>, sigma0_sq: f64 },
    /// `sigma_k^2(v) = sigma_0^2 + mlp(sqrt(v))_k`.
    LearnedMlp { mlp: TimeMlp, sigma0_sq: f64 },
    /// `sigma_k^2(v) = sigma_0^2 + theta1_k * softplus(theta2_k sqrt(v) + theta3_k)`
    /// with `theta1_k > 0`.
    LearnedSoftplus {
        theta1: Vec<f64>,
        theta2: Vec<f64>,
        theta3: Vec<f64>,
        sigma0_sq: f64,
    },
}

/// Gradients of a loss w.r.t. the trainable conditioning parameters.
#[derive(Debug, Clone)]
pub enum ConditioningGrads {
    None,
    Mlp(MlpGrads),
    Softplus {
        theta1: Vec<f64>,
        theta2: Vec<f64>,
        theta3: Vec<f64>,
    },
}

impl TimeConditioning {
    pub fn n_experts(&self) -> usize {
        match self {
            TimeConditioning::SpectralMax { nu2, .. }
            | TimeConditioning::SpectralMean { nu2, .. } => nu2.len(),
            TimeConditioning::LearnedMlp { mlp, .. } => mlp.n_outputs(),
            TimeConditioning::LearnedSoftplus { theta1, .. } => theta1.len(),
        }
    }

    pub fn sigma0_sq(&self) -> f64 {
        match self {
            TimeConditioning::SpectralMax { sigma0_sq, .. }
            | TimeConditioning::SpectralMean { sigma0_sq, .. }
            | TimeConditioning::LearnedMlp { sigma0_sq, .. }
            | TimeConditioning::LearnedSoftplus { sigma0_sq, .. } => *sigma0_sq,
        }
    }

    /// Number of trainable scalars in the conditioning.
    pub fn trainable_param_count(&self) -> usize {
        match self {
            TimeConditioning::SpectralMax { .. } | TimeConditioning::SpectralMean { .. } => 0,
            TimeConditioning::LearnedMlp { mlp, .. } => mlp.param_count(),
            TimeConditioning::LearnedSoftplus { theta1, .. } => 3 * theta1.len(),
        }
    }

    /// Per-expert variances `sigma_k^2(v)` for diffusion variance `v >= 0`.
    pub fn variance_at(&self, v: f64) -> Result<Vec<f64>> {
        if !(v >= 0.0) {
            return Err(Error::invalid(format!(
                "diffusion variance must be nonnegative, got {v}"
            )));
        }
        Ok(match self {
            TimeConditioning::SpectralMax { nu2, sigma0_sq }
            | TimeConditioning::SpectralMean { nu2, sigma0_sq } => {
                nu2.iter().map(|&n| sigma0_sq + n * v).collect()
            }
            TimeConditioning::LearnedMlp { mlp, sigma0_sq } => mlp
                .forward(v.sqrt())
                .into_iter()
                .map(|o| sigma0_sq + o)
                .collect(),
            TimeConditioning::LearnedSoftplus {
                theta1,
                theta2,
                theta3,
                sigma0_sq,
            } => (0..theta1.len())
                .map(|k| sigma0_sq + theta1[k] * softplus(theta2[k] * v.sqrt() + theta3[k]))
                .collect(),
        })
    }

    /// Gradients w.r.t. the trainable parameters of `sum_k upstream_k * sigma_k^2(v)`.
    pub fn backward(&self, v: f64, upstream: &[f64]) -> ConditioningGrads {
        debug_assert_eq!(upstream.len(), self.n_experts());
        match self {
            TimeConditioning::SpectralMax { .. } | TimeConditioning::SpectralMean { .. } => {
                ConditioningGrads::None
            }
            TimeConditioning::LearnedMlp { mlp, .. } => {
                ConditioningGrads::Mlp(mlp.backward(v.sqrt(), upstream))
            }
            TimeConditioning::LearnedSoftplus {
                theta1,
                theta2,
                theta3,
                ..
            } => {
                let root = v.sqrt();
                let o = theta1.len();
                let mut g1 = vec![0.0; o];
                let mut g2 = vec![0.0; o];
                let mut g3 = vec![0.0; o];
                for k in 0..o {
                    let z = theta2[k] * root + theta3[k];
                    let sp = softplus(z);
                    let sg = sigmoid(z);
                    g1[k] = upstream[k] * sp;
                    g2[k] = upstream[k] * theta1[k] * sg * root;
                    g3[k] = upstream[k] * theta1[k] * sg;
                }
                ConditioningGrads::Softplus {
                    theta1: g1,
                    theta2: g2,
                    theta3: g3,
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_simplex_free(l: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let free: Vec<f64> = (0..l.div_ceil(2)).map(|_| rng.gen_range(0.0..1.0)).collect();
        extract_free(&project_simplex(&mirror_weights(&free, l)))
    }

    /// Strictly interior simplex point (no zero weights), for derivative
    /// checks: finite differences are one-sided at the simplex boundary.
    fn random_interior_free(l: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let free: Vec<f64> = (0..l.div_ceil(2)).map(|_| rng.gen_range(0.2..1.0)).collect();
        let w = mirror_weights(&free, l);
        let sum: f64 = w.iter().sum();
        extract_free(&w.iter().map(|v| v / sum).collect::<Vec<_>>())
    }

    /// Direct mixture summation without log-sum-exp, used as the oracle.
    fn naive_log_density(expert: &GmmExpert, x: f64, variance: f64) -> f64 {
        let norm = 1.0 / (2.0 * std::f64::consts::PI * variance).sqrt();
        let mut sum = 0.0;
        for (i, &w) in expert.weights().iter().enumerate() {
            let d = x - expert.mean(i);
            sum += w * norm * (-0.5 * d * d / variance).exp();
        }
        sum.ln()
    }

    #[test]
    fn standard_normal_at_mode() {
        let expert = GmmExpert::single_component(0.0, 1.0).unwrap();
        let expected = -0.5 * (2.0 * std::f64::consts::PI).ln();
        assert_relative_eq!(expert.log_density(0.0, 1.0).unwrap(), expected, epsilon = 1e-15);
    }

    #[test]
    fn even_symmetry_of_density() {
        let expert = GmmExpert::from_parts(
            -0.5,
            0.5,
            7,
            random_simplex_free(7, 4),
            1.0 / 6.0,
        )
        .unwrap();
        for &x in &[0.05, 0.21, 0.48, 1.3] {
            let a = expert.log_density(x, 0.03).unwrap();
            let b = expert.log_density(-x, 0.03).unwrap();
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn matches_naive_summation_on_default_grid() {
        let expert =
            GmmExpert::from_parts(-0.5, 0.5, 125, random_simplex_free(125, 9), 1.0 / 124.0)
                .unwrap();
        let got = expert.log_density(0.3, 0.01).unwrap();
        let want = naive_log_density(&expert, 0.3, 0.01);
        assert_relative_eq!(got, want, max_relative = 1e-12);
    }

    #[test]
    fn rejects_nonpositive_variance() {
        let expert = GmmExpert::uniform(-0.5, 0.5, 5).unwrap();
        assert!(expert.log_density(0.0, 0.0).is_err());
        assert!(expert.log_density(0.0, -1.0).is_err());
        assert!(expert.log_density_grad(0.0, 0.0).is_err());
    }

    #[test]
    fn single_component_grad_is_gaussian_score() {
        let expert = GmmExpert::single_component(0.0, 0.25).unwrap();
        for &x in &[-1.0, 0.3, 2.0] {
            assert_relative_eq!(
                expert.log_density_grad(x, 0.25).unwrap(),
                -x / 0.25,
                epsilon = 1e-14
            );
        }
    }

    #[test]
    fn symmetric_expert_grad_vanishes_at_center() {
        let expert =
            GmmExpert::from_parts(-0.5, 0.5, 9, random_simplex_free(9, 17), 1.0 / 8.0).unwrap();
        assert!(expert.log_density_grad(0.0, 0.02).unwrap().abs() < 1e-14);
    }

    #[test]
    fn grad_matches_finite_difference() {
        let expert =
            GmmExpert::from_parts(-0.5, 0.5, 25, random_simplex_free(25, 31), 1.0 / 24.0).unwrap();
        let x = 0.17;
        let var = 0.015;
        let h = 1e-6;
        let fd = (expert.log_density(x + h, var).unwrap() - expert.log_density(x - h, var).unwrap())
            / (2.0 * h);
        let grad = expert.log_density_grad(x, var).unwrap();
        assert!((grad - fd).abs() < 1e-7, "grad {grad} vs fd {fd}");
    }

    #[test]
    fn curvature_and_dvar_match_finite_differences() {
        let expert =
            GmmExpert::from_parts(-0.5, 0.5, 15, random_simplex_free(15, 5), 1.0 / 14.0).unwrap();
        let (x, var) = (0.11, 0.02);
        let h = 1e-6;
        let eval = expert.eval_unchecked(x, var);
        let fd_curv = (expert.log_density_grad(x + h, var).unwrap()
            - expert.log_density_grad(x - h, var).unwrap())
            / (2.0 * h);
        assert!((eval.curvature - fd_curv).abs() < 1e-6);
        let fd_dvar = (expert.log_density_grad(x, var + h).unwrap()
            - expert.log_density_grad(x, var - h).unwrap())
            / (2.0 * h);
        assert!((eval.dscore_dvar - fd_dvar).abs() < 1e-5);
    }

    #[test]
    fn weight_derivs_match_finite_differences() {
        let l = 9;
        let mut expert =
            GmmExpert::from_parts(-0.5, 0.5, l, random_interior_free(l, 23), 1.0 / 8.0).unwrap();
        let (x, var) = (0.21, 0.05);
        let mut derivs = vec![0.0; l];
        expert.eval_with_weight_derivs(x, var, &mut derivs);
        let h = 1e-7;
        let base_free = expert.free_weights().to_vec();
        for i in 0..l {
            // perturb materialized weight i only
            let mut wp = expert.weights().to_vec();
            let mut wm = wp.clone();
            wp[i] += h;
            wm[i] -= h;
            let ep = make_raw(&expert, wp);
            let em = make_raw(&expert, wm);
            let fd = (ep.log_density_grad(x, var).unwrap() - em.log_density_grad(x, var).unwrap())
                / (2.0 * h);
            assert!(
                (derivs[i] - fd).abs() < 1e-6,
                "component {i}: {} vs {}",
                derivs[i],
                fd
            );
        }
        expert.set_free_weights(base_free);

        // helper: expert with an arbitrary (non-mirrored) weight vector
        fn make_raw(template: &GmmExpert, w: Vec<f64>) -> GmmExpert {
            let mut e = template.clone();
            e.weights = w.clone();
            e.ln_weights = w
                .iter()
                .map(|&x| if x > 0.0 { x.ln() } else { f64::NEG_INFINITY })
                .collect();
            e
        }
    }

    #[test]
    fn density_normalizes_under_quadrature() {
        let expert =
            GmmExpert::from_parts(-0.5, 0.5, 25, random_simplex_free(25, 2), 1.0 / 24.0).unwrap();
        for &var in &[1.0f64 / 24.0, 0.05, 0.4] {
            let sigma = var.sqrt();
            let (lo, hi) = (-0.5 - 6.0 * sigma, 0.5 + 6.0 * sigma);
            let n = 20001;
            let dx = (hi - lo) / (n - 1) as f64;
            // Simpson's rule
            let mut total = 0.0;
            for i in 0..n {
                let x = lo + i as f64 * dx;
                let f = expert.log_density(x, var).unwrap().exp();
                let w = if i == 0 || i == n - 1 {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                total += w * f;
            }
            total *= dx / 3.0;
            assert!((total - 1.0).abs() < 1e-6, "quadrature {total} at var {var}");
        }
    }

    #[test]
    fn single_mode_density_flattens_with_variance() {
        let expert = GmmExpert::single_component(0.0, 0.01).unwrap();
        let mut last = f64::INFINITY;
        for &var in &[0.01, 0.02, 0.05, 0.1, 0.5, 1.0] {
            let value = expert.log_density(0.0, var).unwrap().exp();
            assert!(value <= last + 1e-15);
            last = value;
        }
    }

    #[test]
    fn simplex_projection_examples() {
        let on_simplex = vec![0.2, 0.3, 0.5];
        assert_eq!(project_simplex(&on_simplex), on_simplex);

        let projected = project_simplex(&[1.0, 1.0]);
        assert_relative_eq!(projected[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(projected[1], 0.5, epsilon = 1e-15);
    }

    /// Exhaustive active-set oracle: try every support set and verify KKT.
    fn brute_force_simplex(w: &[f64]) -> Vec<f64> {
        let n = w.len();
        for mask in 1u32..(1 << n) {
            let support: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            let tau =
                (support.iter().map(|&i| w[i]).sum::<f64>() - 1.0) / support.len() as f64;
            let candidate: Vec<f64> = (0..n)
                .map(|i| if mask & (1 << i) != 0 { w[i] - tau } else { 0.0 })
                .collect();
            let feasible = candidate.iter().all(|&x| x >= -1e-14)
                && (0..n).all(|i| mask & (1 << i) != 0 || w[i] - tau <= 1e-14);
            if feasible {
                return candidate;
            }
        }
        unreachable!("some support set is always feasible");
    }

    #[test]
    fn simplex_projection_matches_active_set_oracle() {
        let w = [0.9, -0.1, 0.8];
        let got = project_simplex(&w);
        let want = brute_force_simplex(&w);
        for (a, b) in got.iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        // idempotence
        let twice = project_simplex(&got);
        for (a, b) in twice.iter().zip(got.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn mirror_examples() {
        assert_eq!(mirror_weights(&[1.0, 2.0], 3), vec![1.0, 2.0, 1.0]);
        let uniform = vec![1.0 / 125.0; 63];
        let mirrored = mirror_weights(&uniform, 125);
        assert!(mirrored.iter().all(|&w| (w - 1.0 / 125.0).abs() < 1e-18));
        // roundtrip on a symmetric vector
        let w = mirror_weights(&[0.1, 0.4, 0.2], 5);
        assert_eq!(mirror_weights(&extract_free(&w), 5), w);
    }

    #[test]
    fn spectral_conditioning_examples() {
        let cond = TimeConditioning::SpectralMax {
            nu2: vec![1.0; 3],
            sigma0_sq: 1.0 / 124.0,
        };
        let vars = cond.variance_at(0.04).unwrap();
        for &v in &vars {
            assert_relative_eq!(v, 1.0 / 124.0 + 0.04, epsilon = 1e-15);
        }
        // exactly sigma_0^2 at v = 0
        for &v in &cond.variance_at(0.0).unwrap() {
            assert_eq!(v, 1.0 / 124.0);
        }
        assert!(cond.variance_at(-0.1).is_err());
    }

    #[test]
    fn softplus_conditioning_constant_at_zero_params() {
        let cond = TimeConditioning::LearnedSoftplus {
            theta1: vec![1.0; 4],
            theta2: vec![0.0; 4],
            theta3: vec![0.0; 4],
            sigma0_sq: 0.01,
        };
        for &v in &[0.0, 0.3, 2.0] {
            for &s in &cond.variance_at(v).unwrap() {
                assert_relative_eq!(s, 0.01 + std::f64::consts::LN_2, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn mlp_with_zero_final_layer_outputs_ln2() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut mlp = TimeMlp::new(5, &mut rng);
        mlp.w3.fill(0.0);
        mlp.b3.fill(0.0);
        let cond = TimeConditioning::LearnedMlp { mlp, sigma0_sq: 0.02 };
        for &v in &[0.0, 0.1, 1.7] {
            for &s in &cond.variance_at(v).unwrap() {
                assert_relative_eq!(s, 0.02 + std::f64::consts::LN_2, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn conditioning_outputs_stay_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mlp = TimeMlp::new(8, &mut rng);
        let cond = TimeConditioning::LearnedMlp { mlp, sigma0_sq: 1e-3 };
        for i in 0..40 {
            let v = i as f64 * 0.05;
            for &s in &cond.variance_at(v).unwrap() {
                assert!(s >= 1e-3);
            }
        }
    }

    #[test]
    fn mlp_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut mlp = TimeMlp::new(3, &mut rng);
        let input = 0.37;
        let upstream = [0.7, -1.3, 0.4];
        let grads = mlp.backward(input, &upstream);
        let h = 1e-6;
        let loss = |m: &TimeMlp| -> f64 {
            m.forward(input)
                .iter()
                .zip(upstream.iter())
                .map(|(o, u)| o * u)
                .sum()
        };
        // spot-check one parameter from every group
        let checks: Vec<(f64, Box<dyn Fn(&mut TimeMlp, f64)>)> = vec![
            (grads.w1[5], Box::new(|m, d| m.w1[5] += d)),
            (grads.b1[9], Box::new(|m, d| m.b1[9] += d)),
            (grads.w2[[7, 11]], Box::new(|m, d| m.w2[[7, 11]] += d)),
            (grads.b2[20], Box::new(|m, d| m.b2[20] += d)),
            (grads.w3[[2, 40]], Box::new(|m, d| m.w3[[2, 40]] += d)),
            (grads.b3[1], Box::new(|m, d| m.b3[1] += d)),
        ];
        for (analytic, perturb) in checks {
            perturb(&mut mlp, h);
            let up = loss(&mlp);
            perturb(&mut mlp, -2.0 * h);
            let down = loss(&mlp);
            perturb(&mut mlp, h);
            let fd = (up - down) / (2.0 * h);
            assert!(
                (analytic - fd).abs() <= 1e-6 * fd.abs().max(1.0),
                "{analytic} vs {fd}"
            );
        }
    }
}

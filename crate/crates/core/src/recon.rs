//! Reverse-diffusion reconstruction.
//!
//! The outer loop walks an exponential noise schedule backwards. Each step
//! runs an Euler-Maruyama predictor on the real and imaginary channels,
//! enforces data consistency by likelihood-gradient ascent, refines with
//! annealed Langevin corrector passes, and updates the coil sensitivities
//! with a proximal-gradient step on the smoothness prior.

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mri::{
    data_fidelity, grad_s_loglik, grad_x_loglik, prox_coil, rss, CoilSensitivities, ComplexImage,
    SamplingMask, SenseProblem,
};
use crate::prior::PoGmdm;
use crate::synth::normal_image;

/// Exponential schedule `zeta(t) = zeta_max (zeta_min/zeta_max)^{(1 - t/T)^p}`
/// on `N + 1` grid points `t_i = i T / N`.
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    pub zeta_min: f64,
    pub zeta_max: f64,
    pub power: f64,
    pub t_horizon: f64,
    pub n_steps: usize,
}

impl NoiseSchedule {
    pub fn new(zeta_min: f64, zeta_max: f64, power: f64, t_horizon: f64, n_steps: usize) -> Result<Self> {
        if !(0.0 < zeta_min && zeta_min < zeta_max) {
            return Err(Error::invalid("schedule requires 0 < zeta_min < zeta_max"));
        }
        if power < 1.0 {
            return Err(Error::invalid("schedule power must be >= 1"));
        }
        if n_steps < 2 {
            return Err(Error::invalid("schedule needs at least 2 steps"));
        }
        if !(t_horizon > 0.0) {
            return Err(Error::invalid("schedule horizon must be positive"));
        }
        Ok(Self {
            zeta_min,
            zeta_max,
            power,
            t_horizon,
            n_steps,
        })
    }

    /// Paper defaults: `zeta in [0.001, 10]`, `p = 5`, `T = 1`, `N = 1000`.
    pub fn paper_defaults() -> Self {
        Self::new(0.001, 10.0, 5.0, 1.0, 1000).expect("valid defaults")
    }

    pub fn at_time(&self, t: f64) -> f64 {
        let exponent = (1.0 - t / self.t_horizon).powf(self.power);
        self.zeta_max * (self.zeta_min / self.zeta_max).powf(exponent)
    }

    /// `zeta(t_i)` for a grid index `0 <= i <= N`.
    pub fn at(&self, i: usize) -> Result<f64> {
        if i > self.n_steps {
            return Err(Error::invalid(format!(
                "schedule index {i} out of range 0..={}",
                self.n_steps
            )));
        }
        Ok(self.at_time(i as f64 * self.t_horizon / self.n_steps as f64))
    }
}

/// Parameters of the joint reconstruction.
#[derive(Debug, Clone)]
pub struct ReconConfig {
    pub schedule: NoiseSchedule,
    /// Corrector passes per outer step (M).
    pub corrector_steps: usize,
    /// Likelihood step weight for the image update.
    pub lambda: f64,
    /// Coil proximal/step weight.
    pub mu: f64,
    /// Corrector step-size ratio r.
    pub step_ratio: f64,
    /// Reverse diffusion starts at `floor(start_fraction * N)`.
    pub start_fraction: f64,
    /// Monte-Carlo repeats for posterior-mean estimation.
    pub repeats: usize,
    pub seed: u64,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            schedule: NoiseSchedule::paper_defaults(),
            corrector_steps: 1,
            lambda: 1.0,
            mu: 10.0,
            step_ratio: 0.075,
            start_fraction: 0.2,
            repeats: 25,
            seed: 0,
        }
    }
}

impl ReconConfig {
    /// Shrunk schedule (N = 200) for desk-scale runs and tests.
    pub fn desk_scale() -> Self {
        Self {
            schedule: NoiseSchedule::new(0.001, 10.0, 5.0, 1.0, 200).expect("valid"),
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 || self.mu < 0.0 || self.step_ratio < 0.0 {
            return Err(Error::invalid("lambda, mu and step ratio must be >= 0"));
        }
        if !(self.start_fraction > 0.0 && self.start_fraction <= 1.0) {
            return Err(Error::invalid("start fraction must lie in (0, 1]"));
        }
        Ok(())
    }

    fn start_index(&self) -> usize {
        ((self.start_fraction * self.schedule.n_steps as f64).floor() as usize)
            .clamp(1, self.schedule.n_steps)
    }
}

/// Real/imaginary channel pair the prior operates on.
#[derive(Debug, Clone)]
pub struct ImagePair {
    pub re: Array2<f64>,
    pub im: Array2<f64>,
}

impl ImagePair {
    pub fn from_complex(x: &ComplexImage) -> Self {
        Self {
            re: x.mapv(|z| z.re),
            im: x.mapv(|z| z.im),
        }
    }

    pub fn to_complex(&self) -> ComplexImage {
        Array2::from_shape_fn(self.re.dim(), |idx| {
            Complex64::new(self.re[idx], self.im[idx])
        })
    }

    fn is_finite(&self) -> bool {
        self.re.iter().all(|v| v.is_finite()) && self.im.iter().all(|v| v.is_finite())
    }
}

/// One reverse-SDE predictor step on both channels:
/// `x <- x + (z_next^2 - z_cur^2) score(x, z_next^2) + sqrt(z_next^2 - z_cur^2) xi`.
pub fn predictor_step(
    pair: &mut ImagePair,
    model: &PoGmdm,
    zeta_next: f64,
    zeta_cur: f64,
    rng: &mut impl Rng,
) -> Result<()> {
    if zeta_next < zeta_cur {
        return Err(Error::invalid(format!(
            "schedule must decrease along the reverse sweep: {zeta_next} < {zeta_cur}"
        )));
    }
    let diff = zeta_next * zeta_next - zeta_cur * zeta_cur;
    let sqrt_diff = diff.sqrt();
    for channel in [&mut pair.re, &mut pair.im] {
        let score = model.score(channel, zeta_next * zeta_next)?;
        let noise = normal_image(channel.dim(), rng);
        for ((x, s), n) in channel.iter_mut().zip(score.iter()).zip(noise.iter()) {
            *x += diff * s + sqrt_diff * n;
        }
    }
    Ok(())
}

/// One annealed-Langevin corrector pass on both channels with the adaptive
/// step `eps = 2 r ||xi||^2 / ||score||^2`, the same `xi` reused as the
/// injected noise. Channels with vanishing score norm are skipped; the
/// return value counts the channels actually updated.
pub fn corrector_step(
    pair: &mut ImagePair,
    model: &PoGmdm,
    zeta: f64,
    step_ratio: f64,
    rng: &mut impl Rng,
) -> Result<usize> {
    if step_ratio < 0.0 {
        return Err(Error::invalid("step ratio must be >= 0"));
    }
    let v = zeta * zeta;
    let mut applied = 0;
    for channel in [&mut pair.re, &mut pair.im] {
        let noise = normal_image(channel.dim(), rng);
        let score = model.score(channel, v)?;
        let score_norm_sq: f64 = score.iter().map(|s| s * s).sum();
        if score_norm_sq == 0.0 {
            continue;
        }
        let noise_norm_sq: f64 = noise.iter().map(|n| n * n).sum();
        let eps = 2.0 * step_ratio * noise_norm_sq / score_norm_sq;
        let sqrt_2eps = (2.0 * eps).sqrt();
        for ((x, s), n) in channel.iter_mut().zip(score.iter()).zip(noise.iter()) {
            *x += eps * s + sqrt_2eps * n;
        }
        applied += 1;
    }
    Ok(applied)
}

/// Per-step diagnostics of a reconstruction run.
#[derive(Debug, Clone)]
pub struct TraceRow {
    pub step: usize,
    pub zeta: f64,
    pub data_fidelity: f64,
    pub prior_energy: f64,
}

/// Render a trace as CSV with header `step,zeta,data_fidelity,prior_energy`.
pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut out = String::from("step,zeta,data_fidelity,prior_energy\n");
    for row in trace {
        out.push_str(&format!(
            "{},{:.6e},{:.6e},{:.6e}\n",
            row.step, row.zeta, row.data_fidelity, row.prior_energy
        ));
    }
    out
}

/// Initial sensitivities: zero-filled coil images divided by their RSS,
/// then smoothed once by the coil prox.
pub fn initial_sensitivities(problem: &SenseProblem, mu: f64) -> Result<CoilSensitivities> {
    let zf = problem.zero_filled_coils();
    let zf_rss = rss(&zf);
    let floor = 1e-12 * zf_rss.iter().cloned().fold(0.0f64, f64::max);
    let coils = zf
        .iter()
        .map(|coil| {
            Array2::from_shape_fn(coil.dim(), |idx| coil[idx] / (zf_rss[idx] + floor).max(floor))
        })
        .collect();
    prox_coil(&CoilSensitivities::new(coils), mu)
}

/// Joint reconstruction of image and coil sensitivities (the full algorithm).
///
/// Expects measurements normalized so the zero-filled RSS peak is about 1.
pub fn joint_reconstruct(
    problem: &SenseProblem,
    model: &PoGmdm,
    config: &ReconConfig,
) -> Result<(ComplexImage, CoilSensitivities, Vec<TraceRow>)> {
    config.validate()?;
    let shape = problem.shape();
    let mut model = model.clone();
    model.set_image_shape(shape);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    // initialization: coil-combined zero-filled image plus schedule-level noise
    let mut s = initial_sensitivities(problem, config.mu)?;
    let zf = problem.zero_filled_coils();
    let mut x0 = Array2::from_elem(shape, Complex64::new(0.0, 0.0));
    for (si, zfi) in s.coils().iter().zip(zf.iter()) {
        for ((x, sv), zv) in x0.iter_mut().zip(si.iter()).zip(zfi.iter()) {
            *x += sv.conj() * zv;
        }
    }
    let start = config.start_index();
    let zeta_start = config.schedule.at(start)?;
    let mut pair = ImagePair::from_complex(&x0);
    for channel in [&mut pair.re, &mut pair.im] {
        let noise = normal_image(shape, &mut rng);
        for (x, n) in channel.iter_mut().zip(noise.iter()) {
            *x += zeta_start * n;
        }
    }

    let mut trace = Vec::with_capacity(start);
    for i in (0..start).rev() {
        let zeta_next = config.schedule.at(i + 1)?;
        let zeta_cur = config.schedule.at(i)?;
        predictor_step(&mut pair, &model, zeta_next, zeta_cur, &mut rng)?;
        if config.lambda > 0.0 {
            apply_data_consistency(&mut pair, &s, problem, config.lambda)?;
        }
        for _ in 0..config.corrector_steps {
            corrector_step(&mut pair, &model, zeta_cur, config.step_ratio, &mut rng)?;
            if config.lambda > 0.0 {
                apply_data_consistency(&mut pair, &s, problem, config.lambda)?;
            }
        }
        if config.mu > 0.0 {
            let x = pair.to_complex();
            let grad = grad_s_loglik(&x, &s, &problem.mask, &problem.kspace)?;
            let scale = config.mu / (shape.0 * shape.1) as f64;
            let stepped = CoilSensitivities::new(
                s.coils()
                    .iter()
                    .zip(grad.coils().iter())
                    .map(|(sc, gc)| {
                        Array2::from_shape_fn(shape, |idx| sc[idx] + scale * gc[idx])
                    })
                    .collect(),
            );
            s = prox_coil(&stepped, config.mu)?;
        }
        if !pair.is_finite() {
            return Err(Error::NonFinite(format!(
                "reconstruction diverged at step {i}"
            )));
        }
        let x = pair.to_complex();
        let v = zeta_cur * zeta_cur;
        trace.push(TraceRow {
            step: i,
            zeta: zeta_cur,
            data_fidelity: data_fidelity(&x, &s, &problem.mask, &problem.kspace)?,
            prior_energy: model.energy(&pair.re, v)? + model.energy(&pair.im, v)?,
        });
    }
    Ok((pair.to_complex(), s, trace))
}

// Likelihood steps use the gradient scaled by 1/(HW). Under the unnormalized
// forward DFT this makes lambda = 1 replace sampled frequencies exactly in
// the single-coil full-mask case, and keeps the fixed-point iteration stable
// for RSS-normalized sensitivities and lambda <= 2.
fn apply_data_consistency(
    pair: &mut ImagePair,
    s: &CoilSensitivities,
    problem: &SenseProblem,
    lambda: f64,
) -> Result<()> {
    let x = pair.to_complex();
    let grad = grad_x_loglik(&x, s, &problem.mask, &problem.kspace)?;
    let scale = lambda / (x.len() as f64);
    for ((re, im), g) in pair
        .re
        .iter_mut()
        .zip(pair.im.iter_mut())
        .zip(grad.iter())
    {
        *re += scale * g.re;
        *im += scale * g.im;
    }
    Ok(())
}

/// Single-coil reconstruction: sensitivities fixed to one, no coil updates,
/// only the real channel is carried through the iterations.
pub fn single_coil_reconstruct(
    y: &ComplexImage,
    mask: &SamplingMask,
    model: &PoGmdm,
    config: &ReconConfig,
) -> Result<Array2<f64>> {
    config.validate()?;
    let shape = y.dim();
    if mask.shape() != shape {
        return Err(Error::shape(
            format!("{:?}", mask.shape()),
            format!("{shape:?}"),
        ));
    }
    let mut model = model.clone();
    model.set_image_shape(shape);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let s = CoilSensitivities::identity(shape);
    let kspace = crate::mri::KSpaceData {
        coils: vec![y.clone()],
        noise_sigma: None,
    };

    let zf = crate::fft::ifft2(&crate::fft::ifftshift2(y));
    let mut x = zf.mapv(|z| z.re);
    let start = config.start_index();
    let zeta_start = config.schedule.at(start)?;
    let noise = normal_image(shape, &mut rng);
    for (xv, n) in x.iter_mut().zip(noise.iter()) {
        *xv += zeta_start * n;
    }

    let scale = config.lambda / (shape.0 * shape.1) as f64;
    let data_step = |x: &mut Array2<f64>| -> Result<()> {
        let xc = x.mapv(|v| Complex64::new(v, 0.0));
        let grad = grad_x_loglik(&xc, &s, mask, &kspace)?;
        for (xv, g) in x.iter_mut().zip(grad.iter()) {
            *xv += scale * g.re;
        }
        Ok(())
    };

    for i in (0..start).rev() {
        let zeta_next = config.schedule.at(i + 1)?;
        let zeta_cur = config.schedule.at(i)?;
        // predictor on the real channel
        let diff = zeta_next * zeta_next - zeta_cur * zeta_cur;
        let score = model.score(&x, zeta_next * zeta_next)?;
        let noise = normal_image(shape, &mut rng);
        for ((xv, sv), n) in x.iter_mut().zip(score.iter()).zip(noise.iter()) {
            *xv += diff * sv + diff.sqrt() * n;
        }
        if config.lambda > 0.0 {
            data_step(&mut x)?;
        }
        for _ in 0..config.corrector_steps {
            let noise = normal_image(shape, &mut rng);
            let score = model.score(&x, zeta_cur * zeta_cur)?;
            let score_norm_sq: f64 = score.iter().map(|v| v * v).sum();
            if score_norm_sq > 0.0 {
                let noise_norm_sq: f64 = noise.iter().map(|n| n * n).sum();
                let eps = 2.0 * config.step_ratio * noise_norm_sq / score_norm_sq;
                for ((xv, sv), n) in x.iter_mut().zip(score.iter()).zip(noise.iter()) {
                    *xv += eps * sv + (2.0 * eps).sqrt() * n;
                }
            }
            if config.lambda > 0.0 {
                data_step(&mut x)?;
            }
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "single-coil reconstruction diverged at step {i}"
            )));
        }
    }
    Ok(x)
}

/// Monte-Carlo posterior-mean estimate: pixelwise mean of reconstruction
/// magnitudes over `K` independently seeded runs plus their sample variance.
pub fn mmse_average(
    problem: &SenseProblem,
    model: &PoGmdm,
    config: &ReconConfig,
    repeats: usize,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if repeats == 0 {
        return Err(Error::invalid("at least one repeat is required"));
    }
    let magnitudes: Result<Vec<Array2<f64>>> = (0..repeats)
        .into_par_iter()
        .map(|k| {
            let run_config = ReconConfig {
                seed: config.seed.wrapping_add(k as u64),
                ..config.clone()
            };
            let (x, _, _) = joint_reconstruct(problem, model, &run_config)?;
            Ok(x.mapv(|z| z.norm()))
        })
        .collect();
    let magnitudes = magnitudes?;
    let shape = magnitudes[0].dim();
    let mut mean = Array2::<f64>::zeros(shape);
    for m in &magnitudes {
        mean += m;
    }
    mean.mapv_inplace(|v| v / repeats as f64);
    let mut variance = Array2::<f64>::zeros(shape);
    if repeats > 1 {
        for m in &magnitudes {
            for ((var, &mv), &mn) in variance.iter_mut().zip(m.iter()).zip(mean.iter()) {
                *var += (mv - mn) * (mv - mn);
            }
        }
        variance.mapv_inplace(|v| v / (repeats - 1) as f64);
    }
    Ok((mean, variance))
}

/// Multiply the reconstruction by the RSS of the estimated sensitivities.
pub fn intensity_correction(x: &ComplexImage, s: &CoilSensitivities) -> ComplexImage {
    let weights = s.rss();
    Array2::from_shape_fn(x.dim(), |idx| x[idx] * weights[idx])
}

//! Training loop: batching, optimizer steps, constraint projections, EMA.

use std::path::PathBuf;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::experts::TimeConditioning;
use crate::filterbank::SpectralMode;
use crate::prior::PoGmdm;
use crate::training::{
    adabelief_step, dsm_gradients, sample_pair, AdaBeliefState, BatchItem, GradientSet,
};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub patch_size: usize,
    pub lr_kernels: f64,
    pub lr_weights: f64,
    pub lr_conditioning: f64,
    pub ema_momentum: f64,
    /// Diffusion horizon T; times are drawn uniformly from (1e-5, T].
    pub t_horizon: f64,
    pub seed: u64,
    pub loss_log_interval: usize,
    pub checkpoint_interval: Option<usize>,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 100_000,
            batch_size: 8,
            patch_size: 64,
            lr_kernels: 5e-3,
            lr_weights: 2e-2,
            lr_conditioning: 1e-3,
            ema_momentum: 0.999,
            t_horizon: 1.0,
            seed: 0,
            loss_log_interval: 100,
            checkpoint_interval: None,
            checkpoint_dir: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LossLogRow {
    pub iteration: usize,
    pub loss: f64,
    pub wall_time_s: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: PoGmdm,
    pub loss_log: Vec<LossLogRow>,
}

impl TrainOutcome {
    /// CSV with header `iteration,loss,wall_time_s`.
    pub fn loss_log_csv(&self) -> String {
        let mut out = String::from("iteration,loss,wall_time_s\n");
        for row in &self.loss_log {
            out.push_str(&format!(
                "{},{:.8e},{:.3}\n",
                row.iteration, row.loss, row.wall_time_s
            ));
        }
        out
    }
}

/// Project the model onto its constraint set: zero-mean kernels, mirrored
/// simplex weights, positive softplus scales. Idempotent.
pub fn apply_constraints(model: &mut PoGmdm) {
    model.bank_mut().project_zero_mean();
    for expert in model.experts_mut() {
        expert.project_weights();
    }
    if let TimeConditioning::LearnedSoftplus { theta1, .. } = model.conditioning_mut() {
        for t in theta1.iter_mut() {
            *t = t.max(1e-8);
        }
    }
}

/// `shadow <- momentum * shadow + (1 - momentum) * params`, elementwise.
pub fn ema_update(shadow: &mut [f64], params: &[f64], momentum: f64) -> Result<()> {
    if shadow.len() != params.len() {
        return Err(Error::shape(
            format!("{} parameters", shadow.len()),
            format!("{}", params.len()),
        ));
    }
    for (s, &p) in shadow.iter_mut().zip(params.iter()) {
        *s = momentum * *s + (1.0 - momentum) * p;
    }
    Ok(())
}

/// Flat views of the three trainable parameter groups.
struct ParamGroups {
    kernels: Vec<f64>,
    weights: Vec<f64>,
    conditioning: Vec<f64>,
}

fn extract_params(model: &PoGmdm) -> ParamGroups {
    let kernels = model
        .bank()
        .kernels()
        .iter()
        .flat_map(|k| k.iter().copied())
        .collect();
    let weights = model
        .experts()
        .iter()
        .flat_map(|e| e.free_weights().iter().copied())
        .collect();
    let conditioning = match model.conditioning() {
        TimeConditioning::SpectralMax { .. } | TimeConditioning::SpectralMean { .. } => vec![],
        TimeConditioning::LearnedMlp { mlp, .. } => {
            let mut out = Vec::with_capacity(mlp.param_count());
            out.extend(&mlp.w1);
            out.extend(&mlp.b1);
            out.extend(mlp.w2.iter());
            out.extend(&mlp.b2);
            out.extend(mlp.w3.iter());
            out.extend(&mlp.b3);
            out
        }
        TimeConditioning::LearnedSoftplus {
            theta1,
            theta2,
            theta3,
            ..
        } => {
            let mut out = Vec::with_capacity(3 * theta1.len());
            out.extend(theta1);
            out.extend(theta2);
            out.extend(theta3);
            out
        }
    };
    ParamGroups {
        kernels,
        weights,
        conditioning,
    }
}

fn write_back(model: &mut PoGmdm, params: &ParamGroups) {
    let r = model.bank().kernel_size();
    let per_kernel = r * r;
    {
        let kernels = model.bank_mut().kernels_mut();
        for (k, kernel) in kernels.iter_mut().enumerate() {
            for (i, v) in kernel.iter_mut().enumerate() {
                *v = params.kernels[k * per_kernel + i];
            }
        }
    }
    model.bank_mut().refresh_spectra();
    let mut offset = 0;
    for expert in model.experts_mut() {
        let n = expert.free_weights().len();
        expert.set_free_weights(params.weights[offset..offset + n].to_vec());
        offset += n;
    }
    match model.conditioning_mut() {
        TimeConditioning::SpectralMax { .. } | TimeConditioning::SpectralMean { .. } => {}
        TimeConditioning::LearnedMlp { mlp, .. } => {
            let mut at = 0;
            let mut take = |n: usize| {
                let slice = &params.conditioning[at..at + n];
                at += n;
                slice.to_vec()
            };
            let h = crate::experts::MLP_HIDDEN;
            let o = mlp.n_outputs();
            mlp.w1 = take(h);
            mlp.b1 = take(h);
            mlp.w2 = Array2::from_shape_vec((h, h), take(h * h)).expect("w2 shape");
            mlp.b2 = take(h);
            mlp.w3 = Array2::from_shape_vec((o, h), take(o * h)).expect("w3 shape");
            mlp.b3 = take(o);
        }
        TimeConditioning::LearnedSoftplus {
            theta1,
            theta2,
            theta3,
            ..
        } => {
            let o = theta1.len();
            theta1.copy_from_slice(&params.conditioning[..o]);
            theta2.copy_from_slice(&params.conditioning[o..2 * o]);
            theta3.copy_from_slice(&params.conditioning[2 * o..3 * o]);
        }
    }
}

fn flatten_grads(model: &PoGmdm, grads: &GradientSet) -> ParamGroups {
    let kernels = grads
        .kernels
        .iter()
        .flat_map(|k| k.iter().copied())
        .collect();
    let weights = grads
        .free_weights
        .iter()
        .flat_map(|w| w.iter().copied())
        .collect();
    let conditioning = match &grads.conditioning {
        crate::experts::ConditioningGrads::None => vec![],
        crate::experts::ConditioningGrads::Mlp(g) => {
            let mut out = Vec::new();
            out.extend(&g.w1);
            out.extend(&g.b1);
            out.extend(g.w2.iter());
            out.extend(&g.b2);
            out.extend(g.w3.iter());
            out.extend(&g.b3);
            out
        }
        crate::experts::ConditioningGrads::Softplus {
            theta1,
            theta2,
            theta3,
        } => {
            let mut out = Vec::new();
            out.extend(theta1);
            out.extend(theta2);
            out.extend(theta3);
            out
        }
    };
    let _ = model;
    ParamGroups {
        kernels,
        weights,
        conditioning,
    }
}

/// Refresh the frozen spectral statistics after a kernel update.
fn refresh_spectral_nu(model: &mut PoGmdm) {
    let mode = match model.conditioning() {
        TimeConditioning::SpectralMax { .. } => Some(SpectralMode::Max),
        TimeConditioning::SpectralMean { .. } => Some(SpectralMode::Mean),
        _ => None,
    };
    if let Some(mode) = mode {
        let nu2 = model.bank().spectral_nu(mode);
        match model.conditioning_mut() {
            TimeConditioning::SpectralMax { nu2: slot, .. }
            | TimeConditioning::SpectralMean { nu2: slot, .. } => *slot = nu2,
            _ => unreachable!(),
        }
    }
}

/// Run the denoising-score-matching loop and return the EMA model.
pub fn train(
    mut model: PoGmdm,
    dataset: &[Array2<f64>],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(Error::invalid("training dataset is empty"));
    }
    let patch = config.patch_size;
    for (i, img) in dataset.iter().enumerate() {
        if img.nrows() < patch || img.ncols() < patch {
            return Err(Error::shape(
                format!("images of at least {patch}x{patch}"),
                format!("image {i} is {:?}", img.dim()),
            ));
        }
    }
    model.set_image_shape((patch, patch));
    apply_constraints(&mut model);
    refresh_spectral_nu(&mut model);

    let mut params = extract_params(&model);
    let mut shadow_kernels = params.kernels.clone();
    let mut shadow_weights = params.weights.clone();
    let mut shadow_conditioning = params.conditioning.clone();
    let mut state_kernels = AdaBeliefState::new(params.kernels.len());
    let mut state_weights = AdaBeliefState::new(params.weights.len());
    let mut state_conditioning = AdaBeliefState::new(params.conditioning.len());

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let started = Instant::now();
    let mut loss_log = Vec::new();
    let t_floor = 1e-5;

    for iteration in 0..config.iterations {
        let batch: Vec<BatchItem> = (0..config.batch_size)
            .map(|_| {
                let img = &dataset[rng.gen_range(0..dataset.len())];
                let top = if img.nrows() > patch {
                    rng.gen_range(0..=img.nrows() - patch)
                } else {
                    0
                };
                let left = if img.ncols() > patch {
                    rng.gen_range(0..=img.ncols() - patch)
                } else {
                    0
                };
                let x0 = img
                    .slice(ndarray::s![top..top + patch, left..left + patch])
                    .to_owned();
                let t = t_floor + (config.t_horizon - t_floor) * (1.0 - rng.gen::<f64>());
                let (xt, _) = sample_pair(&x0, t, &mut rng);
                BatchItem { x0, xt, t }
            })
            .collect();

        let (loss, grads) = dsm_gradients(&model, &batch)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss at iteration {iteration}"
            )));
        }
        let flat = flatten_grads(&model, &grads);
        adabelief_step(
            &mut params.kernels,
            &flat.kernels,
            &mut state_kernels,
            config.lr_kernels,
        );
        adabelief_step(
            &mut params.weights,
            &flat.weights,
            &mut state_weights,
            config.lr_weights,
        );
        if !params.conditioning.is_empty() {
            adabelief_step(
                &mut params.conditioning,
                &flat.conditioning,
                &mut state_conditioning,
                config.lr_conditioning,
            );
        }
        write_back(&mut model, &params);
        apply_constraints(&mut model);
        refresh_spectral_nu(&mut model);
        // continue from the projected point
        params = extract_params(&model);

        ema_update(&mut shadow_kernels, &params.kernels, config.ema_momentum)?;
        ema_update(&mut shadow_weights, &params.weights, config.ema_momentum)?;
        ema_update(
            &mut shadow_conditioning,
            &params.conditioning,
            config.ema_momentum,
        )?;

        if iteration % config.loss_log_interval.max(1) == 0 || iteration + 1 == config.iterations {
            loss_log.push(LossLogRow {
                iteration,
                loss,
                wall_time_s: started.elapsed().as_secs_f64(),
            });
        }
        if let (Some(interval), Some(dir)) = (config.checkpoint_interval, &config.checkpoint_dir) {
            if interval > 0 && (iteration + 1) % interval == 0 {
                let snapshot = finalize_ema(
                    &model,
                    &shadow_kernels,
                    &shadow_weights,
                    &shadow_conditioning,
                    iteration as u64 + 1,
                    config,
                );
                std::fs::create_dir_all(dir)?;
                crate::io::save_model(dir.join(format!("checkpoint_{:07}.json", iteration + 1)), &snapshot)?;
            }
        }
    }

    let model = finalize_ema(
        &model,
        &shadow_kernels,
        &shadow_weights,
        &shadow_conditioning,
        config.iterations as u64,
        config,
    );
    Ok(TrainOutcome { model, loss_log })
}

fn finalize_ema(
    model: &PoGmdm,
    shadow_kernels: &[f64],
    shadow_weights: &[f64],
    shadow_conditioning: &[f64],
    iterations: u64,
    config: &TrainConfig,
) -> PoGmdm {
    let mut ema = model.clone();
    let groups = ParamGroups {
        kernels: shadow_kernels.to_vec(),
        weights: shadow_weights.to_vec(),
        conditioning: shadow_conditioning.to_vec(),
    };
    write_back(&mut ema, &groups);
    refresh_spectral_nu(&mut ema);
    let interval = ema
        .experts()
        .first()
        .map(|e| e.interval())
        .unwrap_or((0.0, 0.0));
    *ema.metadata_mut() = crate::prior::ModelMetadata {
        iterations,
        ema: true,
        interval,
        training_image_size: (config.patch_size, config.patch_size),
    };
    ema
}

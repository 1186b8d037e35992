//! `pogmdm` command line: training, denoising, reconstruction, masks,
//! synthetic data and metric reports.
//!
//! Exit codes: 0 success, 2 validation failure, 3 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pogmdm_core::error::Error as CoreError;
use pogmdm_core::experts::{GmmExpert, TimeConditioning, TimeMlp};
use pogmdm_core::filterbank::{FilterBank, SpectralMode};
use pogmdm_core::io::{self, npy, Config};
use pogmdm_core::metrics::MetricsReport;
use pogmdm_core::mri::{make_mask, KSpaceData, MaskInfo, SamplingMask, SenseProblem};
use pogmdm_core::prior::{ModelMetadata, PoGmdm};
use pogmdm_core::recon::{
    intensity_correction, joint_reconstruct, mmse_average, single_coil_reconstruct, trace_csv,
    NoiseSchedule, ReconConfig,
};
use pogmdm_core::synth;
use pogmdm_core::training::{train, TrainConfig};

#[derive(Parser)]
#[command(name = "pogmdm", version, about = "Gaussian-mixture diffusion prior MRI toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed from the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> anyhow::Result<Config> {
        let mut config = match &self.config {
            Some(path) => Config::load(path)?,
            None => Config::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a dataset directory of NPY images.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory (images plus optional index.txt).
        #[arg(long)]
        dataset: PathBuf,
        /// Output model container.
        #[arg(long)]
        out: PathBuf,
        /// Loss log CSV (iteration, loss, wall time).
        #[arg(long)]
        loss_log: Option<PathBuf>,
        /// Directory for periodic checkpoints.
        #[arg(long)]
        checkpoint_dir: Option<PathBuf>,
        /// Override the iteration count from the config.
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// One-step empirical-Bayes denoising of a real image.
    Denoise {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        /// Noisy input image (NPY float64).
        #[arg(long)]
        input: PathBuf,
        /// Noise standard deviation of the input.
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Single-coil reconstruction (identity sensitivities, real iterates).
    ReconSingle {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        /// Measured k-space (NPY complex128, H x W).
        #[arg(long)]
        kspace: PathBuf,
        /// Sampling mask (NPY float64 of 0/1, H x W).
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Joint parallel-imaging reconstruction of image and sensitivities.
    ReconPi {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        /// Measured k-space (NPY complex128, coils x H x W).
        #[arg(long)]
        kspace: PathBuf,
        /// Sampling mask (NPY float64 of 0/1, H x W).
        #[arg(long)]
        mask: PathBuf,
        /// Magnitude reconstruction output.
        #[arg(long)]
        out: PathBuf,
        /// Estimated coil sensitivities output (complex128 stack).
        #[arg(long)]
        out_sens: Option<PathBuf>,
        /// Pixelwise variance map output (requires repeats > 1).
        #[arg(long)]
        out_variance: Option<PathBuf>,
        /// Per-step diagnostic trace CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Override the Monte-Carlo repeat count from the config.
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Generate a k-space sampling mask.
    SampleMask {
        #[command(flatten)]
        common: Common,
        /// Grid height.
        #[arg(long)]
        height: usize,
        /// Grid width.
        #[arg(long)]
        width: usize,
        #[arg(long)]
        out: PathBuf,
        /// Metadata sidecar (TOML).
        #[arg(long)]
        meta: Option<PathBuf>,
    },
    /// Synthetic data generation.
    Synth {
        #[command(subcommand)]
        what: SynthCommand,
    },
    /// Metric report (PSNR/SSIM/NMSE) over image pairs.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Reconstructed images.
        #[arg(long, num_args = 1..)]
        inputs: Vec<PathBuf>,
        /// Reference images, same count and order as --inputs.
        #[arg(long, num_args = 1..)]
        references: Vec<PathBuf>,
        /// Report CSV output.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the configuration template with all defaults explicit.
    ConfigTemplate {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum SynthCommand {
    /// Head phantom in [0, 1].
    Phantom {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Smooth complex coil profiles with unit RSS.
    Coils {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        coils: usize,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Piecewise-smooth training corpus written to a dataset directory.
    Corpus {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = match err.downcast_ref::<CoreError>() {
                Some(CoreError::NonFinite(_)) => 3,
                _ => 2,
            };
            ExitCode::from(code)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train {
            common,
            dataset,
            out,
            loss_log,
            checkpoint_dir,
            iterations,
        } => {
            let config = common.load()?;
            let images = synth::load_dataset(&dataset)?;
            let model = build_model(&config, &images)?;
            let mut train_config = train_config_from(&config);
            if let Some(n) = iterations {
                train_config.iterations = n;
            }
            if checkpoint_dir.is_some() && config.train.checkpoint_interval > 0 {
                train_config.checkpoint_interval = Some(config.train.checkpoint_interval);
            }
            train_config.checkpoint_dir = checkpoint_dir;
            let outcome = train(model, &images, &train_config)?;
            io::save_model(&out, &outcome.model)?;
            if let Some(path) = loss_log {
                std::fs::write(path, outcome.loss_log_csv())?;
            }
            println!(
                "trained {} parameters for {} iterations -> {}",
                outcome.model.count_parameters(),
                train_config.iterations,
                out.display()
            );
            Ok(())
        }
        Command::Denoise {
            common,
            model,
            input,
            sigma,
            out,
        } => {
            let _ = common.load()?;
            if !(sigma > 0.0) {
                return Err(CoreError::invalid("sigma must be positive").into());
            }
            let mut model = io::load_model(&model)?;
            let image = npy::load_array2_f64(&input)?;
            model.set_image_shape(image.dim());
            let denoised = model.denoise_tweedie(&image, sigma * sigma)?;
            npy::save_array2_f64(&out, &denoised)?;
            Ok(())
        }
        Command::ReconSingle {
            common,
            model,
            kspace,
            mask,
            out,
        } => {
            let config = common.load()?;
            let model = io::load_model(&model)?;
            let y = npy::load_array2_c128(&kspace)?;
            let mask = load_mask(&mask, &config)?;
            let recon_config = recon_config_from(&config)?;
            let recon = single_coil_reconstruct(&y, &mask, &model, &recon_config)?;
            npy::save_array2_f64(&out, &recon)?;
            Ok(())
        }
        Command::ReconPi {
            common,
            model,
            kspace,
            mask,
            out,
            out_sens,
            out_variance,
            trace,
            repeats,
        } => {
            let config = common.load()?;
            let model = io::load_model(&model)?;
            let coils = npy::load_coil_stack(&kspace)?;
            let mask = load_mask(&mask, &config)?;
            let problem = SenseProblem::new(
                KSpaceData {
                    coils,
                    noise_sigma: None,
                },
                mask,
            )?;
            // measurements are mapped to training intensities and the final
            // magnitude is mapped back
            let (problem, scale) = problem.normalized();
            let recon_config = recon_config_from(&config)?;
            let repeats = repeats.unwrap_or(config.recon.repeats).max(1);

            let (x, sens, rows) = joint_reconstruct(&problem, &model, &recon_config)?;
            let magnitude = if repeats > 1 {
                let (mean, variance) = mmse_average(&problem, &model, &recon_config, repeats)?;
                if let Some(path) = out_variance {
                    npy::save_array2_f64(path, &variance.mapv(|v| v * scale * scale))?;
                }
                let weights = sens.rss();
                Array2::from_shape_fn(mean.dim(), |idx| mean[idx] * weights[idx] * scale)
            } else {
                if out_variance.is_some() {
                    return Err(
                        CoreError::invalid("variance map requires --repeats > 1").into()
                    );
                }
                intensity_correction(&x, &sens).mapv(|z| z.norm() * scale)
            };
            npy::save_array2_f64(&out, &magnitude)?;
            if let Some(path) = out_sens {
                npy::save_coil_stack(path, sens.coils())?;
            }
            if let Some(path) = trace {
                std::fs::write(path, trace_csv(&rows))?;
            }
            Ok(())
        }
        Command::SampleMask {
            common,
            height,
            width,
            out,
            meta,
        } => {
            let config = common.load()?;
            let mask = make_mask(
                config.mask.kind,
                (height, width),
                config.mask.acceleration,
                config.mask.acl_fraction,
                config.mask.rotated,
                config.seed,
            )?;
            npy::save_array2_f64(&out, mask.pattern())?;
            if let Some(path) = meta {
                let text = toml::to_string_pretty(&mask.info)
                    .map_err(|e| CoreError::Format(e.to_string()))?;
                std::fs::write(path, text)?;
            }
            println!(
                "mask {}x{} sampled fraction {:.4}",
                height,
                width,
                mask.sampled_fraction()
            );
            Ok(())
        }
        Command::Synth { what } => run_synth(what),
        Command::Eval {
            common,
            inputs,
            references,
            out,
        } => {
            let _ = common.load()?;
            if inputs.len() != references.len() || inputs.is_empty() {
                return Err(CoreError::invalid(
                    "--inputs and --references must list the same nonzero number of files",
                )
                .into());
            }
            let pairs = inputs
                .iter()
                .zip(references.iter())
                .map(|(i, r)| {
                    Ok((
                        i.file_name()
                            .map(|n| n.to_string_lossy().into_owned())
                            .unwrap_or_else(|| i.display().to_string()),
                        npy::load_array2_f64(i)?,
                        npy::load_array2_f64(r)?,
                    ))
                })
                .collect::<Result<Vec<_>, CoreError>>()?;
            let report = MetricsReport::evaluate(pairs)?;
            std::fs::write(&out, report.to_csv())?;
            let (psnr_mean, psnr_std) = report.psnr_mean_std();
            println!(
                "psnr {psnr_mean:.2} +/- {psnr_std:.2} dB over {} images",
                report.rows.len()
            );
            Ok(())
        }
        Command::ConfigTemplate { out } => {
            std::fs::write(&out, Config::template())?;
            Ok(())
        }
    }
}

fn run_synth(what: SynthCommand) -> anyhow::Result<()> {
    match what {
        SynthCommand::Phantom { common, n, out } => {
            let _ = common.load()?;
            npy::save_array2_f64(&out, &synth::shepp_logan(n))?;
            Ok(())
        }
        SynthCommand::Coils {
            common,
            coils,
            n,
            out,
        } => {
            let config = common.load()?;
            let sens = synth::synthetic_coils(coils, n, config.seed);
            npy::save_coil_stack(&out, sens.coils())?;
            Ok(())
        }
        SynthCommand::Corpus {
            common,
            count,
            n,
            out_dir,
        } => {
            let config = common.load()?;
            let paths = synth::corpus_generate(&out_dir, count, n, config.seed)?;
            println!("wrote {} images to {}", paths.len(), out_dir.display());
            Ok(())
        }
    }
}

/// Initial model from the config's model section, seeded deterministically.
fn build_model(config: &Config, dataset: &[Array2<f64>]) -> anyhow::Result<PoGmdm> {
    let m = &config.model;
    if m.n_components < 3 || m.n_components % 2 == 0 {
        return Err(CoreError::invalid("n_components must be odd and >= 3").into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let patch = config.train.patch_size.min(
        dataset
            .iter()
            .map(|d| d.nrows().min(d.ncols()))
            .min()
            .unwrap_or(config.train.patch_size),
    );
    let bank = FilterBank::random_init(m.n_filters, m.kernel_size, (patch, patch), &mut rng)?;
    let sigma0_sq = (m.interval_max - m.interval_min) / (m.n_components - 1) as f64;
    let experts = (0..m.n_filters)
        .map(|_| GmmExpert::uniform(m.interval_min, m.interval_max, m.n_components))
        .collect::<Result<Vec<_>, _>>()?;
    let conditioning = match m.conditioning.as_str() {
        "spectral_max" => TimeConditioning::SpectralMax {
            nu2: bank.spectral_nu(SpectralMode::Max),
            sigma0_sq,
        },
        "spectral_mean" => TimeConditioning::SpectralMean {
            nu2: bank.spectral_nu(SpectralMode::Mean),
            sigma0_sq,
        },
        "learned_mlp" => TimeConditioning::LearnedMlp {
            mlp: TimeMlp::new(m.n_filters, &mut rng),
            sigma0_sq,
        },
        "learned_softplus" => TimeConditioning::LearnedSoftplus {
            theta1: vec![1.0; m.n_filters],
            theta2: vec![1.0; m.n_filters],
            theta3: vec![0.0; m.n_filters],
            sigma0_sq,
        },
        other => {
            return Err(CoreError::invalid(format!(
                "unknown conditioning variant '{other}'"
            ))
            .into())
        }
    };
    Ok(PoGmdm::new(
        bank,
        experts,
        conditioning,
        ModelMetadata {
            iterations: 0,
            ema: false,
            interval: (m.interval_min, m.interval_max),
            training_image_size: (patch, patch),
        },
    )?)
}

fn train_config_from(config: &Config) -> TrainConfig {
    let t = &config.train;
    TrainConfig {
        iterations: t.iterations,
        batch_size: t.batch_size,
        patch_size: t.patch_size,
        lr_kernels: t.lr_kernels,
        lr_weights: t.lr_weights,
        lr_conditioning: t.lr_conditioning,
        ema_momentum: t.ema_momentum,
        t_horizon: t.t_horizon,
        seed: config.seed,
        loss_log_interval: t.loss_log_interval,
        checkpoint_interval: None,
        checkpoint_dir: None,
    }
}

fn recon_config_from(config: &Config) -> anyhow::Result<ReconConfig> {
    let r = &config.recon;
    Ok(ReconConfig {
        schedule: NoiseSchedule::new(
            r.zeta_min,
            r.zeta_max,
            r.schedule_power,
            r.t_horizon,
            r.n_steps,
        )?,
        corrector_steps: r.corrector_steps,
        lambda: r.lambda,
        mu: r.mu,
        step_ratio: r.step_ratio,
        start_fraction: r.start_fraction,
        repeats: r.repeats,
        seed: config.seed,
    })
}

fn load_mask(path: &PathBuf, config: &Config) -> anyhow::Result<SamplingMask> {
    let pattern = npy::load_array2_f64(path)?;
    Ok(SamplingMask::new(
        pattern,
        MaskInfo {
            kind: config.mask.kind,
            acceleration: config.mask.acceleration,
            acl_fraction: config.mask.acl_fraction,
            rotated: config.mask.rotated,
            seed: config.seed,
        },
    )?)
}

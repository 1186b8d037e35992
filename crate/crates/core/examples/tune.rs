use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use pogmdm_core::experts::{GmmExpert, TimeConditioning};
use pogmdm_core::filterbank::{FilterBank, SpectralMode};
use pogmdm_core::metrics::psnr;
use pogmdm_core::prior::{ModelMetadata, PoGmdm};
use pogmdm_core::mri::{make_mask, nullspace_residual, sense_forward, CoilSensitivities, MaskKind, SenseProblem};
use pogmdm_core::recon::{initial_sensitivities, intensity_correction, joint_reconstruct, mmse_average, single_coil_reconstruct, NoiseSchedule, ReconConfig};
use num_complex::Complex64;
use pogmdm_core::synth;
use pogmdm_core::training::{train, TrainConfig};

fn toy_flf(seed: u64, patch: usize, diff_init: bool) -> PoGmdm {
    let (o, r, l) = (8, 5, 33);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bank = if diff_init {
        // classical difference kernels embedded centered in r x r
        let base = FilterBank::fixed_difference_bank((patch, patch));
        let kernels: Vec<Array2<f64>> = base
            .kernels()
            .iter()
            .map(|k3| {
                let mut k = Array2::zeros((r, r));
                for a in 0..3 {
                    for b in 0..3 {
                        k[[a + 1, b + 1]] = k3[[a, b]];
                    }
                }
                k
            })
            .collect();
        FilterBank::new(kernels, (patch, patch)).unwrap()
    } else {
        FilterBank::random_init(o, r, (patch, patch), &mut rng).unwrap()
    };
    let experts = (0..o).map(|_| GmmExpert::uniform(-0.5, 0.5, l).unwrap()).collect();
    let nu2 = bank.spectral_nu(SpectralMode::Max);
    let sigma0_sq = 1.0 / (l - 1) as f64;
    PoGmdm::new(bank, experts, TimeConditioning::SpectralMax { nu2, sigma0_sq }, ModelMetadata::default()).unwrap()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let iters: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let t_horizon: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let lr_kernels: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(5e-3);
    let ema: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(0.999);
    let diff_init: bool = args.get(5).map(|s| s == "diff").unwrap_or(false);

    let dataset = synth::corpus_images(64, 64, 2024);
    let model = toy_flf(7, 32, diff_init);
    let config = TrainConfig {
        iterations: iters,
        batch_size: 8,
        patch_size: 32,
        t_horizon,
        lr_kernels,
        ema_momentum: ema,
        seed: 11,
        loss_log_interval: 1000,
        ..TrainConfig::default()
    };
    let outcome = train(model, &dataset, &config).unwrap();
    let mut model = outcome.model;

    println!("nu2 = {:?}", model.variances(1.0).unwrap().iter().map(|v| (v*1000.0).round()/1000.0).collect::<Vec<_>>());
    let e0 = &model.experts()[0];
    let w: Vec<f64> = e0.weights().iter().map(|v| (v*1000.0).round()/1000.0).collect();
    println!("expert0 weights = {:?}", w);
    let kn: Vec<f64> = model.bank().kernels().iter().map(|k| k.iter().map(|v| v*v).sum::<f64>().sqrt()).collect();
    println!("kernel norms = {:?}", kn.iter().map(|v| (v*1000.0).round()/1000.0).collect::<Vec<_>>());

    // score scale at small v on a noisy image
    let held_out = synth::corpus_images(4, 64, 777);
    model.set_image_shape((64, 64));
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let sigma = 0.05;
    let img = &held_out[0];
    let noisy: Array2<f64> = img + &synth::normal_image((64, 64), &mut rng).mapv(|z| sigma * z);
    let score = model.score(&noisy, sigma * sigma).unwrap();
    let snorm = score.iter().map(|v| v*v).sum::<f64>().sqrt();
    let ideal = (img - &noisy).mapv(|d| d / (sigma*sigma));
    let inorm = ideal.iter().map(|v| v*v).sum::<f64>().sqrt();
    println!("score norm {snorm:.1}, ideal-residual-score norm {inorm:.1}");

    for sigma in [0.05f64, 0.1] {
        let mut gain_acc = 0.0;
        for img in &held_out {
            let noisy: Array2<f64> = img + &synth::normal_image((64, 64), &mut rng).mapv(|z| sigma * z);
            let denoised = model.denoise_tweedie(&noisy, sigma * sigma).unwrap();
            gain_acc += psnr(&denoised, img).unwrap() - psnr(&noisy, img).unwrap();
        }
        println!("sigma {sigma}: mean gain {:.2} dB", gain_acc / held_out.len() as f64);
    }

    // --- criterion 10 style: single-coil recon vs zero-filled
    let n = 64;
    let phantom = synth::shepp_logan(n);
    let mask = make_mask(MaskKind::Cartesian, (n, n), 4.0, 0.08, false, 10).unwrap();
    let sigma_n = 0.02 * (n as f64); // image-domain noise level 0.02 under the pinned DFT
    let mut nrng = ChaCha8Rng::seed_from_u64(101);
    let mut y = pogmdm_core::fft::fftshift2(&pogmdm_core::fft::fft2_real(&phantom));
    for (z, &m) in y.iter_mut().zip(mask.pattern().iter()) {
        if m == 1.0 {
            z.re += sigma_n * synth::standard_normal(&mut nrng);
            z.im += sigma_n * synth::standard_normal(&mut nrng);
        } else {
            *z = Complex64::new(0.0, 0.0);
        }
    }
    let zf = pogmdm_core::fft::ifft2(&pogmdm_core::fft::ifftshift2(&y)).mapv(|z| z.norm());
    let zf_psnr = psnr(&zf, &phantom).unwrap();
    let rc = ReconConfig {
        schedule: NoiseSchedule::new(0.001, 10.0, 5.0, 1.0, 200).unwrap(),
        seed: 17,
        ..ReconConfig::default()
    };
    let t_rec = std::time::Instant::now();
    let rec = single_coil_reconstruct(&y, &mask, &model, &rc).unwrap();
    let rec_psnr = psnr(&rec.mapv(f64::abs), &phantom).unwrap();
    println!("single-coil: recon {rec_psnr:.2} dB vs ZF {zf_psnr:.2} dB ({:.1}s)", t_rec.elapsed().as_secs_f64());

    // --- criterion 11 style: joint PI
    let coils = synth::synthetic_coils(4, n, 110);
    let truth = phantom.mapv(|v| Complex64::new(v, 0.0));
    let mask = make_mask(MaskKind::Cartesian, (n, n), 4.0, 0.08, false, 11).unwrap();
    let kspace = sense_forward(&truth, &coils, &mask).unwrap();
    let problem = SenseProblem::new(kspace, mask).unwrap();
    let zf_rss = problem.zero_filled_rss();
    let zf_rss_psnr = psnr(&zf_rss, &phantom).unwrap();
    let (problem_n, scale) = problem.normalized();
    let t_rec = std::time::Instant::now();
    let (x, s_est, _) = joint_reconstruct(&problem_n, &model, &rc).unwrap();
    let corrected = intensity_correction(&x, &s_est).mapv(|z| z.norm() * scale);
    let pi_psnr = psnr(&corrected, &phantom).unwrap();
    println!("joint PI: recon {pi_psnr:.2} dB vs ZF-RSS {zf_rss_psnr:.2} dB ({:.1}s)", t_rec.elapsed().as_secs_f64());

    let zf_coils = problem_n.zero_filled_coils();
    let s_init = initial_sensitivities(&problem_n, rc.mu).unwrap();
    let res = |s: &CoilSensitivities, imgs: &[ndarray::Array2<Complex64>]| {
        let (_, red) = nullspace_residual(s, imgs);
        red.iter().map(|v| v * v).sum::<f64>().sqrt()
    };
    println!("nullspace vs zf coils: est {:.4} init {:.4}", res(&s_est, &zf_coils), res(&s_init, &zf_coils));
    let true_coils: Vec<ndarray::Array2<Complex64>> = coils.coils().iter().map(|c| c * &truth).collect();
    println!("nullspace vs true coils: est {:.4} init {:.4}", res(&s_est, &true_coils), res(&s_init, &true_coils));

    // step-ratio grid for the single-coil case
    let mask_sc = make_mask(MaskKind::Cartesian, (n, n), 4.0, 0.08, false, 10).unwrap();
    for r in [0.075f64, 0.16, 0.3, 0.5] {
        let rc2 = ReconConfig { step_ratio: r, ..rc.clone() };
        let rec = single_coil_reconstruct(&y, &mask_sc, &model, &rc2).unwrap();
        let p = psnr(&rec.mapv(f64::abs), &phantom).unwrap();
        println!("single-coil r={r}: {p:.2} dB (zf {zf_psnr:.2})");
    }

    let t_rec = std::time::Instant::now();
    let mean_var = |acc: f64| -> f64 {
        let mask = make_mask(MaskKind::Cartesian, (n, n), acc, 0.08, false, 11).unwrap();
        let kspace = sense_forward(&truth, &coils, &mask).unwrap();
        let (p, _) = SenseProblem::new(kspace, mask).unwrap().normalized();
        let (_, variance) = mmse_average(&p, &model, &rc, 8).unwrap();
        variance.mean().unwrap()
    };
    let v3 = mean_var(3.0);
    let v5 = mean_var(5.0);
    println!("variance acc3 {v3:.3e} acc5 {v5:.3e} ({:.1}s)", t_rec.elapsed().as_secs_f64());
}

//! k-space sampling pattern generators.
//!
//! All trajectories are rasterized onto the Cartesian grid as binary masks;
//! the sampled fraction is calibrated to `1/acceleration`. Generation is
//! deterministic under the seed.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mri::{MaskInfo, SamplingMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskKind {
    Cartesian,
    Radial,
    Spiral,
    Gaussian2d,
}

impl std::str::FromStr for MaskKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cartesian" => Ok(MaskKind::Cartesian),
            "radial" => Ok(MaskKind::Radial),
            "spiral" => Ok(MaskKind::Spiral),
            "gaussian2d" => Ok(MaskKind::Gaussian2d),
            other => Err(Error::invalid(format!("unknown mask kind '{other}'"))),
        }
    }
}

/// Build a sampling mask of the requested trajectory.
pub fn make_mask(
    kind: MaskKind,
    shape: (usize, usize),
    acceleration: f64,
    acl_fraction: f64,
    rotated: bool,
    seed: u64,
) -> Result<SamplingMask> {
    if acceleration < 1.0 {
        return Err(Error::invalid(format!(
            "acceleration must be >= 1, got {acceleration}"
        )));
    }
    if !(0.0..1.0).contains(&acl_fraction) {
        return Err(Error::invalid(format!(
            "acl fraction must lie in [0, 1), got {acl_fraction}"
        )));
    }
    let info = MaskInfo {
        kind,
        acceleration,
        acl_fraction,
        rotated,
        seed,
    };
    let gen_shape = if rotated { (shape.1, shape.0) } else { shape };
    let mut pattern = if acceleration == 1.0 {
        Array2::from_elem(gen_shape, 1.0)
    } else {
        match kind {
            MaskKind::Cartesian => cartesian(gen_shape, acceleration, acl_fraction),
            MaskKind::Radial => radial(gen_shape, acceleration),
            MaskKind::Spiral => spiral(gen_shape, acceleration),
            MaskKind::Gaussian2d => gaussian2d(gen_shape, acceleration, seed),
        }
    };
    if rotated {
        pattern = pattern.t().to_owned();
    }
    SamplingMask::new(pattern, info)
}

/// Fully-sampled centered band of `ceil(acl_fraction * W)` columns plus
/// evenly spaced extra columns reaching the target acceleration.
fn cartesian(shape: (usize, usize), acceleration: f64, acl_fraction: f64) -> Array2<f64> {
    let (h, w) = shape;
    let acl_cols = (acl_fraction * w as f64).ceil() as usize;
    let target_cols = ((w as f64 / acceleration).round() as usize).max(1);
    let acl_start = (w - acl_cols) / 2;
    let mut selected = vec![false; w];
    for j in acl_start..acl_start + acl_cols {
        selected[j] = true;
    }
    let extra = target_cols.saturating_sub(acl_cols);
    if extra > 0 {
        let complement: Vec<usize> = (0..w).filter(|&j| !selected[j]).collect();
        for i in 0..extra.min(complement.len()) {
            let pos = ((i as f64 + 0.5) * complement.len() as f64 / extra as f64) as usize;
            selected[complement[pos.min(complement.len() - 1)]] = true;
        }
    }
    Array2::from_shape_fn((h, w), |(_, j)| if selected[j] { 1.0 } else { 0.0 })
}

/// Equiangular spokes through the grid center, rasterized nearest-neighbor.
fn radial(shape: (usize, usize), acceleration: f64) -> Array2<f64> {
    let (h, w) = shape;
    let n_spokes = ((h * w) as f64 / (acceleration * h.max(w) as f64)).ceil() as usize;
    let mut pattern = Array2::zeros((h, w));
    let (cy, cx) = ((h / 2) as f64, (w / 2) as f64);
    let radius = (h.max(w)) as f64;
    let steps = 4 * h.max(w);
    for k in 0..n_spokes {
        let theta = std::f64::consts::PI * k as f64 / n_spokes as f64;
        let (dy, dx) = (theta.sin(), theta.cos());
        for s in 0..=steps {
            let t = radius * (2.0 * s as f64 / steps as f64 - 1.0);
            let i = (cy + t * dy).round();
            let j = (cx + t * dx).round();
            if i >= 0.0 && j >= 0.0 && (i as usize) < h && (j as usize) < w {
                pattern[[i as usize, j as usize]] = 1.0;
            }
        }
    }
    pattern
}

/// Archimedean spiral arms; the number of turns is calibrated by bisection
/// so the rasterized sampled fraction approaches `1/acceleration`.
fn spiral(shape: (usize, usize), acceleration: f64) -> Array2<f64> {
    let target = 1.0 / acceleration;
    let rasterize = |turns: f64| -> Array2<f64> {
        let (h, w) = shape;
        let mut pattern = Array2::zeros((h, w));
        let (cy, cx) = ((h / 2) as f64, (w / 2) as f64);
        let max_r = 0.75 * (h.max(w)) as f64;
        let phi_max = turns * 2.0 * std::f64::consts::PI;
        let steps = (200.0 * turns.max(1.0)) as usize * h.max(w) / 32;
        let n_arms = 3;
        for arm in 0..n_arms {
            let offset = 2.0 * std::f64::consts::PI * arm as f64 / n_arms as f64;
            for s in 0..=steps {
                let phi = phi_max * s as f64 / steps as f64;
                let r = max_r * phi / phi_max;
                let i = (cy + r * (phi + offset).sin()).round();
                let j = (cx + r * (phi + offset).cos()).round();
                if i >= 0.0 && j >= 0.0 && (i as usize) < h && (j as usize) < w {
                    pattern[[i as usize, j as usize]] = 1.0;
                }
            }
        }
        pattern
    };
    let fraction = |p: &Array2<f64>| p.sum() / p.len() as f64;
    let (mut lo, mut hi) = (0.5, 64.0);
    let mut best = rasterize(lo);
    for _ in 0..12 {
        let mid = 0.5 * (lo + hi);
        let candidate = rasterize(mid);
        if fraction(&candidate) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if (fraction(&candidate) - target).abs() < (fraction(&best) - target).abs() {
            best = candidate;
        }
    }
    best
}

/// Variable-density Bernoulli sampling under a centered Gaussian profile,
/// calibrated so the expected sampled fraction is `1/acceleration`, plus a
/// small fully-sampled center.
fn gaussian2d(shape: (usize, usize), acceleration: f64, seed: u64) -> Array2<f64> {
    let (h, w) = shape;
    let target = 1.0 / acceleration;
    let sigma = 0.25 * h.min(w) as f64;
    let (cy, cx) = ((h / 2) as f64, (w / 2) as f64);
    let profile = Array2::from_shape_fn((h, w), |(i, j)| {
        let d2 = (i as f64 - cy).powi(2) + (j as f64 - cx).powi(2);
        (-d2 / (2.0 * sigma * sigma)).exp()
    });
    // bisection on the profile gain; probabilities saturate at 1
    let mean_prob = |c: f64| -> f64 {
        profile.iter().map(|&p| (c * p).min(1.0)).sum::<f64>() / (h * w) as f64
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    while mean_prob(hi) < target {
        hi *= 2.0;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if mean_prob(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let gain = 0.5 * (lo + hi);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pattern = Array2::from_shape_fn((h, w), |idx| {
        if rng.gen::<f64>() < (gain * profile[idx]).min(1.0) {
            1.0
        } else {
            0.0
        }
    });
    // fully-sampled center
    let c = (h.min(w) / 32).max(2);
    for i in h / 2 - c..h / 2 + c {
        for j in w / 2 - c..w / 2 + c {
            pattern[[i, j]] = 1.0;
        }
    }
    pattern
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_acceleration_samples_everything() {
        for kind in [
            MaskKind::Cartesian,
            MaskKind::Radial,
            MaskKind::Spiral,
            MaskKind::Gaussian2d,
        ] {
            let mask = make_mask(kind, (32, 32), 1.0, 0.08, false, 3).unwrap();
            assert_eq!(mask.sampled_fraction(), 1.0);
        }
    }

    #[test]
    fn cartesian_acl_band_and_fraction() {
        let mask = make_mask(MaskKind::Cartesian, (100, 100), 4.0, 0.08, false, 0).unwrap();
        // 8 center columns fully sampled
        let pattern = mask.pattern();
        for j in 46..54 {
            for i in 0..100 {
                assert_eq!(pattern[[i, j]], 1.0, "ACL column {j}");
            }
        }
        let fraction = mask.sampled_fraction();
        assert!(
            (0.23..=0.27).contains(&fraction),
            "sampled fraction {fraction}"
        );
        // columns are either fully sampled or empty
        for j in 0..100 {
            let col_sum: f64 = (0..100).map(|i| pattern[[i, j]]).sum();
            assert!(col_sum == 0.0 || col_sum == 100.0);
        }
    }

    #[test]
    fn rotated_mask_transposes_the_pattern() {
        let plain = make_mask(MaskKind::Cartesian, (64, 64), 4.0, 0.08, false, 0).unwrap();
        let rotated = make_mask(MaskKind::Cartesian, (64, 64), 4.0, 0.08, true, 0).unwrap();
        assert_eq!(rotated.pattern(), &plain.pattern().t().to_owned());
    }

    #[test]
    fn masks_are_reproducible_under_seed() {
        for kind in [MaskKind::Radial, MaskKind::Spiral, MaskKind::Gaussian2d] {
            let a = make_mask(kind, (64, 64), 4.0, 0.0, false, 9).unwrap();
            let b = make_mask(kind, (64, 64), 4.0, 0.0, false, 9).unwrap();
            assert_eq!(a.pattern(), b.pattern());
        }
    }

    #[test]
    fn gaussian_mask_hits_target_fraction() {
        let mask = make_mask(MaskKind::Gaussian2d, (320, 320), 8.0, 0.0, false, 7).unwrap();
        let fraction = mask.sampled_fraction();
        let target = 1.0 / 8.0;
        assert!(
            (fraction - target).abs() <= 0.1 * target,
            "realized {fraction} vs target {target}"
        );
    }

    #[test]
    fn spiral_and_radial_fractions_are_reasonable() {
        let radial = make_mask(MaskKind::Radial, (128, 128), 6.0, 0.0, false, 0).unwrap();
        // rasterized spokes land within a loose band of the target
        let f = radial.sampled_fraction();
        assert!(f > 0.05 && f < 0.5, "radial fraction {f}");

        let spiral = make_mask(MaskKind::Spiral, (128, 128), 5.0, 0.0, false, 0).unwrap();
        let f = spiral.sampled_fraction();
        assert!((f - 0.2).abs() < 0.1, "spiral fraction {f}");
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(make_mask(MaskKind::Cartesian, (32, 32), 0.5, 0.0, false, 0).is_err());
        assert!(make_mask(MaskKind::Cartesian, (32, 32), 4.0, 1.0, false, 0).is_err());
    }
}

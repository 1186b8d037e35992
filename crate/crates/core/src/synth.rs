//! Synthetic data: head phantom, smooth coil profiles, training corpus.

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::mri::CoilSensitivities;

/// Standard normal draw via Box-Muller (two uniforms per sample).
pub fn standard_normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Fill an array with standard normal draws.
pub fn normal_image(shape: (usize, usize), rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_fn(shape, |_| standard_normal(rng))
}

struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    /// rotation in degrees, counterclockwise
    angle: f64,
    value: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let theta = self.angle.to_radians();
        let (sin, cos) = theta.sin_cos();
        let dx = x - self.cx;
        let dy = y - self.cy;
        let xr = cos * dx + sin * dy;
        let yr = -sin * dx + cos * dy;
        (xr / self.a).powi(2) + (yr / self.b).powi(2) <= 1.0
    }
}

/// Ten-ellipse head phantom on an `n x n` grid, intensities in `[0, 1]`.
///
/// The ellipse table is mirror-symmetric in `x`, so the rendered image is
/// exactly symmetric about the vertical axis.
pub fn shepp_logan(n: usize) -> Array2<f64> {
    let e = |cx, cy, a, b, angle, value| Ellipse {
        cx,
        cy,
        a,
        b,
        angle,
        value,
    };
    let ellipses = [
        e(0.0, 0.0, 0.69, 0.92, 0.0, 2.0),
        e(0.0, -0.0184, 0.6624, 0.874, 0.0, -0.98),
        e(0.22, 0.0, 0.11, 0.31, -18.0, -0.02),
        e(-0.22, 0.0, 0.11, 0.31, 18.0, -0.02),
        e(0.0, 0.35, 0.21, 0.25, 0.0, 0.01),
        e(0.0, 0.1, 0.046, 0.046, 0.0, 0.01),
        e(0.0, -0.1, 0.046, 0.046, 0.0, 0.02),
        e(-0.08, -0.605, 0.046, 0.023, 0.0, 0.01),
        e(0.0, -0.605, 0.023, 0.023, 0.0, 0.01),
        e(0.08, -0.605, 0.046, 0.023, 0.0, 0.01),
    ];
    let mut img = Array2::zeros((n, n));
    for i in 0..n {
        // +y is up; pixel centers
        let y = (n as f64 - 1.0 - 2.0 * i as f64) / n as f64;
        for j in 0..n {
            let x = (2.0 * j as f64 + 1.0 - n as f64) / n as f64;
            let mut v = 0.0;
            for ell in &ellipses {
                if ell.contains(x, y) {
                    v += ell.value;
                }
            }
            img[[i, j]] = v;
        }
    }
    let max = img.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        img.mapv_inplace(|v| (v / max).max(0.0));
    }
    img
}

/// `c` smooth complex coil profiles on an `n x n` grid, normalized so the
/// pixelwise root-sum-of-squares is exactly 1.
pub fn synthetic_coils(c: usize, n: usize, seed: u64) -> CoilSensitivities {
    assert!(c >= 1, "at least one coil");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coils: Vec<Array2<Complex64>> = Vec::with_capacity(c);
    for k in 0..c {
        let angle = 2.0 * std::f64::consts::PI * k as f64 / c as f64;
        let (cy, cx) = (0.75 * angle.sin(), 0.75 * angle.cos());
        let width = 0.9 + 0.2 * rng.gen_range(-0.5..0.5);
        // low-order polynomial phase, smoothly varying
        let p0 = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        let px = rng.gen_range(-0.8..0.8);
        let py = rng.gen_range(-0.8..0.8);
        let pxy = rng.gen_range(-0.4..0.4);
        let coil = Array2::from_shape_fn((n, n), |(i, j)| {
            let y = (n as f64 - 1.0 - 2.0 * i as f64) / n as f64;
            let x = (2.0 * j as f64 + 1.0 - n as f64) / n as f64;
            let d2 = (x - cx).powi(2) + (y - cy).powi(2);
            let magnitude = 0.15 + (-d2 / (2.0 * width * width)).exp();
            let phase = p0 + px * x + py * y + pxy * x * y;
            Complex64::from_polar(magnitude, phase)
        });
        coils.push(coil);
    }
    // pixelwise RSS normalization
    let mut rss = Array2::<f64>::zeros((n, n));
    for coil in &coils {
        for (r, z) in rss.iter_mut().zip(coil.iter()) {
            *r += z.norm_sqr();
        }
    }
    rss.mapv_inplace(f64::sqrt);
    for coil in &mut coils {
        for (z, &r) in coil.iter_mut().zip(rss.iter()) {
            *z /= r;
        }
    }
    CoilSensitivities::new(coils)
}

/// One random piecewise-smooth image in `[0, 1]`: a soft background ramp
/// plus random ellipses of constant intensity.
pub fn corpus_image(n: usize, rng: &mut impl Rng) -> Array2<f64> {
    let gx = rng.gen_range(-0.15..0.15);
    let gy = rng.gen_range(-0.15..0.15);
    let base = rng.gen_range(0.05..0.25);
    let mut img = Array2::from_shape_fn((n, n), |(i, j)| {
        let y = (n as f64 - 1.0 - 2.0 * i as f64) / n as f64;
        let x = (2.0 * j as f64 + 1.0 - n as f64) / n as f64;
        base + gx * x + gy * y
    });
    let n_shapes = rng.gen_range(4..9);
    for _ in 0..n_shapes {
        let ell = Ellipse {
            cx: rng.gen_range(-0.7..0.7),
            cy: rng.gen_range(-0.7..0.7),
            a: rng.gen_range(0.08..0.45),
            b: rng.gen_range(0.08..0.45),
            angle: rng.gen_range(0.0..180.0),
            value: rng.gen_range(-0.4..0.6),
        };
        for i in 0..n {
            let y = (n as f64 - 1.0 - 2.0 * i as f64) / n as f64;
            for j in 0..n {
                let x = (2.0 * j as f64 + 1.0 - n as f64) / n as f64;
                if ell.contains(x, y) {
                    img[[i, j]] += ell.value;
                }
            }
        }
    }
    img.mapv_inplace(|v| v.clamp(0.0, 1.0));
    img
}

/// Deterministic batch of corpus images.
pub fn corpus_images(count: usize, n: usize, seed: u64) -> Vec<Array2<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| corpus_image(n, &mut rng)).collect()
}

/// Write a corpus to a dataset directory: one NPY per image plus an
/// `index.txt` listing the file names in order.
pub fn corpus_generate(
    dir: impl AsRef<std::path::Path>,
    count: usize,
    n: usize,
    seed: u64,
) -> crate::error::Result<Vec<std::path::PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let images = corpus_images(count, n, seed);
    let mut index = String::new();
    let mut paths = Vec::with_capacity(count);
    for (i, img) in images.iter().enumerate() {
        let name = format!("img_{i:05}.npy");
        crate::io::npy::save_array2_f64(dir.join(&name), img)?;
        index.push_str(&name);
        index.push('\n');
        paths.push(dir.join(name));
    }
    std::fs::write(dir.join("index.txt"), index)?;
    Ok(paths)
}

/// Load a dataset directory written by [`corpus_generate`]: reads the files
/// named in `index.txt`, or every `*.npy` in sorted order when no index exists.
pub fn load_dataset(dir: impl AsRef<std::path::Path>) -> crate::error::Result<Vec<Array2<f64>>> {
    let dir = dir.as_ref();
    let index = dir.join("index.txt");
    let names: Vec<std::path::PathBuf> = if index.exists() {
        std::fs::read_to_string(&index)?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| dir.join(l.trim()))
            .collect()
    } else {
        let mut files: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "npy"))
            .collect();
        files.sort();
        files
    };
    if names.is_empty() {
        return Err(crate::error::Error::invalid(format!(
            "no dataset images found in {}",
            dir.display()
        )));
    }
    names
        .into_iter()
        .map(crate::io::npy::load_array2_f64)
        .collect()
}

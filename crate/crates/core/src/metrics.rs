//! Image quality metrics: PSNR, NMSE, SSIM.
//!
//! PSNR uses the per-image maximum of the reference as the data range. SSIM
//! uses a 7x7 Gaussian window with sigma 1.5, K1 = 0.01, K2 = 0.03, the same
//! data range, and averages over fully interior window positions.

use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};

/// Sentinel reported when the reconstruction equals the reference exactly.
pub const PSNR_EXACT: f64 = f64::INFINITY;

/// Peak signal-to-noise ratio in dB: `20 log10(max(ref) / RMSE)`.
pub fn psnr(x: &Array2<f64>, reference: &Array2<f64>) -> Result<f64> {
    check_same_shape(x, reference)?;
    let peak = reference.iter().cloned().fold(f64::MIN, f64::max);
    if peak <= 0.0 {
        return Err(Error::invalid("reference must not be identically zero"));
    }
    let mse = x
        .iter()
        .zip(reference.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / x.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_EXACT);
    }
    Ok(20.0 * (peak / mse.sqrt()).log10())
}

/// Normalized mean squared error `||x - ref||^2 / ||ref||^2`.
/// Reporting scales this by 100 for display.
pub fn nmse(x: &Array2<f64>, reference: &Array2<f64>) -> Result<f64> {
    check_same_shape(x, reference)?;
    let num: f64 = x
        .iter()
        .zip(reference.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let den: f64 = reference.iter().map(|b| b * b).sum();
    if den == 0.0 {
        return Err(Error::invalid("reference must not be identically zero"));
    }
    Ok(num / den)
}

const SSIM_WINDOW: usize = 7;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_window() -> [[f64; SSIM_WINDOW]; SSIM_WINDOW] {
    let c = (SSIM_WINDOW / 2) as f64;
    let mut w = [[0.0; SSIM_WINDOW]; SSIM_WINDOW];
    let mut total = 0.0;
    for (i, row) in w.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let d2 = (i as f64 - c).powi(2) + (j as f64 - c).powi(2);
            *v = (-d2 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            total += *v;
        }
    }
    for row in w.iter_mut() {
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    w
}

/// Structural similarity, mean over valid (fully interior) window positions.
pub fn ssim(x: &Array2<f64>, reference: &Array2<f64>) -> Result<f64> {
    check_same_shape(x, reference)?;
    let (h, w) = x.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "image must be at least {SSIM_WINDOW}x{SSIM_WINDOW} for SSIM"
        )));
    }
    let peak = reference.iter().cloned().fold(f64::MIN, f64::max);
    if peak <= 0.0 {
        return Err(Error::invalid("reference must not be identically zero"));
    }
    let window = gaussian_window();
    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    let mut total = 0.0;
    let mut count = 0usize;
    for top in 0..=(h - SSIM_WINDOW) {
        for left in 0..=(w - SSIM_WINDOW) {
            let (mut mx, mut my) = (0.0, 0.0);
            for (a, row) in window.iter().enumerate() {
                for (b, &wv) in row.iter().enumerate() {
                    mx += wv * x[[top + a, left + b]];
                    my += wv * reference[[top + a, left + b]];
                }
            }
            let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
            for (a, row) in window.iter().enumerate() {
                for (b, &wv) in row.iter().enumerate() {
                    let dx = x[[top + a, left + b]] - mx;
                    let dy = reference[[top + a, left + b]] - my;
                    vx += wv * dx * dx;
                    vy += wv * dy * dy;
                    cov += wv * dx * dy;
                }
            }
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

fn check_same_shape(x: &Array2<f64>, reference: &Array2<f64>) -> Result<()> {
    if x.dim() != reference.dim() {
        return Err(Error::shape(
            format!("{:?}", reference.dim()),
            format!("{:?}", x.dim()),
        ));
    }
    Ok(())
}

/// One evaluated image in a metrics report.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsRow {
    pub file: String,
    pub psnr_db: f64,
    pub ssim: f64,
    /// NMSE scaled by 100 for display parity.
    pub nmse_x100: f64,
}

/// Per-image metrics plus aggregate mean and standard deviation.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
}

impl MetricsReport {
    pub fn evaluate(
        pairs: impl IntoIterator<Item = (String, Array2<f64>, Array2<f64>)>,
    ) -> Result<Self> {
        let mut rows = Vec::new();
        for (file, x, reference) in pairs {
            rows.push(MetricsRow {
                file,
                psnr_db: psnr(&x, &reference)?,
                ssim: ssim(&x, &reference)?,
                nmse_x100: 100.0 * nmse(&x, &reference)?,
            });
        }
        Ok(Self { rows })
    }

    fn stats(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
        let n = values.clone().count() as f64;
        let mean = values.clone().sum::<f64>() / n;
        let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        (mean, var.sqrt())
    }

    pub fn psnr_mean_std(&self) -> (f64, f64) {
        Self::stats(self.rows.iter().map(|r| r.psnr_db))
    }

    pub fn ssim_mean_std(&self) -> (f64, f64) {
        Self::stats(self.rows.iter().map(|r| r.ssim))
    }

    pub fn nmse_mean_std(&self) -> (f64, f64) {
        Self::stats(self.rows.iter().map(|r| r.nmse_x100))
    }

    /// CSV with the pinned header `file,psnr_db,ssim,nmse_x100`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("file,psnr_db,ssim,nmse_x100\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6}\n",
                row.file, row.psnr_db, row.ssim, row.nmse_x100
            ));
        }
        out
    }
}

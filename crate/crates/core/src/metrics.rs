//! Image-pair quality metrics: PSNR (peak 1.0), single-scale SSIM on luma,
//! and brightness discrepancy.
//!
//! [`MetricMode::GtMean`] rescales the prediction to the target's mean
//! brightness (then clamps to [0, 1]) before comparing, so the score
//! reflects restored structure independently of any residual global
//! brightness error.

use crate::error::{Error, Result};
use crate::image::{
    mean_brightness, same_shape, scale_to_target_mean, ImageTensor, Tensor, DEFAULT_MEAN_FLOOR,
};

/// Upper bound returned instead of +inf when the MSE is zero; also caps
/// finite values so outputs stay sortable.
pub const PSNR_CAP_DB: f64 = 99.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
// (k * peak)^2 with k1 = 0.01, k2 = 0.03, peak = 1.
const SSIM_C1: f64 = 1.0e-4;
const SSIM_C2: f64 = 9.0e-4;

const LUMA_R: f64 = 0.299;
const LUMA_G: f64 = 0.587;
const LUMA_B: f64 = 0.114;

/// Whether a metric compares the prediction as-is or after mean-brightness
/// alignment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetricMode {
    Normal,
    GtMean,
}

fn aligned_pred(pred: &ImageTensor, target: &ImageTensor) -> Result<ImageTensor> {
    let (scaled, _) = scale_to_target_mean(pred, target, DEFAULT_MEAN_FLOOR)?;
    Ok(scaled.clamp_to_image())
}

/// Peak signal-to-noise ratio in dB with peak 1.0, capped at
/// [`PSNR_CAP_DB`]. Identical images return the cap exactly.
pub fn psnr(pred: &ImageTensor, target: &ImageTensor, mode: MetricMode) -> Result<f64> {
    same_shape(pred, target)?;
    let aligned;
    let p = match mode {
        MetricMode::Normal => pred,
        MetricMode::GtMean => {
            aligned = aligned_pred(pred, target)?;
            &aligned
        }
    };
    let mut acc = 0.0;
    for (a, b) in p.data().iter().zip(target.data()) {
        let d = a - b;
        acc += d * d;
    }
    let mse = acc / p.data().len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((-10.0 * mse.log10()).min(PSNR_CAP_DB))
}

/// Single-scale SSIM over an 11x11 Gaussian window (sigma 1.5) on the luma
/// plane, averaged over positions where the window fits entirely. Both
/// dimensions must be at least 11.
pub fn ssim(pred: &ImageTensor, target: &ImageTensor, mode: MetricMode) -> Result<f64> {
    same_shape(pred, target)?;
    let (_, h, w) = pred.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::WindowTooLarge {
            height: h,
            width: w,
            window: SSIM_WINDOW,
        });
    }
    let aligned;
    let p = match mode {
        MetricMode::Normal => pred,
        MetricMode::GtMean => {
            aligned = aligned_pred(pred, target)?;
            &aligned
        }
    };

    let x = luma(p);
    let y = luma(target);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();

    let kernel = gaussian_kernel();
    let mu_x = window_means(&x, h, w, &kernel);
    let mu_y = window_means(&y, h, w, &kernel);
    let e_xx = window_means(&xx, h, w, &kernel);
    let e_yy = window_means(&yy, h, w, &kernel);
    let e_xy = window_means(&xy, h, w, &kernel);

    let mut acc = 0.0;
    for i in 0..mu_x.len() {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let var_x = e_xx[i] - mx * mx;
        let var_y = e_yy[i] - my * my;
        let cov = e_xy[i] - mx * my;
        let num = (2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2);
        let den = (mx * mx + my * my + SSIM_C1) * (var_x + var_y + SSIM_C2);
        acc += num / den;
    }
    Ok(acc / mu_x.len() as f64)
}

/// Absolute difference of mean brightness, |E[target] - E[pred]|.
pub fn brightness_discrepancy(pred: &ImageTensor, target: &ImageTensor) -> Result<f64> {
    same_shape(pred, target)?;
    Ok((mean_brightness(target) - mean_brightness(pred)).abs())
}

/// Rec. 601 luma for 3-channel images; a copy of the plane for 1-channel.
fn luma(img: &ImageTensor) -> Vec<f64> {
    let (c, h, w) = img.shape();
    let data = img.data();
    let plane = h * w;
    if c == 1 {
        return data.to_vec();
    }
    (0..plane)
        .map(|i| LUMA_R * data[i] + LUMA_G * data[plane + i] + LUMA_B * data[2 * plane + i])
        .collect()
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as isize;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = (i as isize - half) as f64;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Separable valid-mode windowed means: rows first, then columns.
/// Output is (h - 10) x (w - 10), row-major.
fn window_means(plane: &[f64], h: usize, w: usize, kernel: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - (SSIM_WINDOW - 1);
    let oh = h - (SSIM_WINDOW - 1);
    let mut rows = vec![0.0f64; h * ow];
    for y in 0..h {
        let line = &plane[y * w..(y + 1) * w];
        let out = &mut rows[y * ow..(y + 1) * ow];
        for (x, o) in out.iter_mut().enumerate() {
            let mut s = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                s += kv * line[x + k];
            }
            *o = s;
        }
    }
    let mut cols = vec![0.0f64; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let mut s = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                s += kv * rows[(y + k) * ow + x];
            }
            cols[y * ow + x] = s;
        }
    }
    cols
}

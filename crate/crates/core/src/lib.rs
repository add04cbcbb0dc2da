//! Numerical core for brightness-mismatch-aware image losses.
//!
//! The centerpiece is a weighted loss that blends a plain elementwise
//! loss with a brightness-aligned copy of itself, where the blend weight
//! comes from the Bhattacharyya distance between per-image brightness
//! distributions. Around it sit the supporting pieces a small experiment
//! needs: image tensors with a PPM codec, PSNR/SSIM metrics with a
//! brightness-forgiving mode, loss-landscape sweeps, and a deterministic
//! toy trainer.
//!
//! Conventions throughout: images are channel-major `f64` tensors in
//! [0,1]; reductions are means so magnitudes are shape-independent;
//! every random process is seeded and reruns are bitwise identical.

mod brightness;
mod error;
mod fmtnum;
mod image;
mod landscape;
mod loss;
mod metrics;
mod ppm;
mod trainer;

pub use brightness::{bhattacharyya, weight_w, BrightnessGaussian, WeightResult};
pub use error::{Error, Result};
pub use image::{
    mean_brightness, same_shape, scale_to_target_mean, ImageTensor, RawTensor, Tensor,
    DEFAULT_MEAN_FLOOR,
};
pub use landscape::{
    eta_sweep, landscape_csv_name, write_landscape_csv, SigmaSweep, SweepRow, SweepSpec,
};
pub use loss::{
    base_loss, finite_difference_check, gt_mean_loss, gt_mean_loss_with_weight, GtMeanConfig,
    LambdaMode, LossDiagnostics, LossKind, LossOutput, DEFAULT_CHARBONNIER_EPS,
    DEFAULT_SIGMA_COEFF, DEFAULT_SMOOTH_L1_BETA,
};
pub use metrics::{brightness_discrepancy, psnr, ssim, MetricMode, PSNR_CAP_DB};
pub use ppm::{decode_ppm, encode_ppm, load_ppm, save_ppm};
pub use trainer::{
    curve_backward, curve_forward, degrade, generate_base_images, iteration_loss,
    sigma_sweep_train, synthetic_sweep_batch, train, write_sigma_summary_csv, write_theta_txt,
    write_trace_csv, AdamParams, CurveCache, CurveModel, DegradationSpec, SigmaSummary, Strategy,
    TraceRow, TrainConfig, TrainTrace,
};

//! Supervised losses and their brightness-weighted combination.
//!
//! The weighted loss blends the plain loss L(pred, target) with an aligned
//! term L(lambda * pred, target), where lambda rescales the prediction to
//! the target's mean brightness. The blend weight W is the clipped
//! Bhattacharyya distance between the two brightness Gaussians: when the
//! brightness gap is large the original term dominates and the optimizer
//! fixes brightness first; as the gap closes, weight shifts to the aligned
//! term and the optimizer refines structure without fighting residual
//! brightness error.
//!
//! W is treated as a constant during differentiation (it is recomputed
//! every evaluation but gradients never flow through it). lambda can be
//! differentiated through (the default) or detached, selectable per call.

use serde::{Deserialize, Serialize};

use crate::brightness::weight_w;
use crate::error::{Error, Result};
use crate::image::{mean_brightness, same_shape, RawTensor, Tensor};

pub const DEFAULT_SIGMA_COEFF: f64 = 0.1;
pub const DEFAULT_MEAN_FLOOR: f64 = crate::image::DEFAULT_MEAN_FLOOR;
pub const DEFAULT_CHARBONNIER_EPS: f64 = 1e-3;
pub const DEFAULT_SMOOTH_L1_BETA: f64 = 1.0;

fn default_charbonnier_eps() -> f64 {
    DEFAULT_CHARBONNIER_EPS
}

fn default_smooth_l1_beta() -> f64 {
    DEFAULT_SMOOTH_L1_BETA
}

/// Element-wise loss family. All values and gradients are means over
/// elements, so magnitudes are comparable across shapes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossKind {
    L1,
    L2,
    Charbonnier {
        #[serde(default = "default_charbonnier_eps")]
        eps: f64,
    },
    SmoothL1 {
        #[serde(default = "default_smooth_l1_beta")]
        beta: f64,
    },
}

impl LossKind {
    pub fn charbonnier() -> Self {
        Self::Charbonnier {
            eps: DEFAULT_CHARBONNIER_EPS,
        }
    }

    pub fn smooth_l1() -> Self {
        Self::SmoothL1 {
            beta: DEFAULT_SMOOTH_L1_BETA,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::L1 | Self::L2 => Ok(()),
            Self::Charbonnier { eps } => {
                if eps.is_finite() && eps > 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter {
                        name: "eps",
                        reason: format!("must be finite and > 0, got {eps}"),
                    })
                }
            }
            Self::SmoothL1 { beta } => {
                if beta.is_finite() && beta > 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter {
                        name: "beta",
                        reason: format!("must be finite and > 0, got {beta}"),
                    })
                }
            }
        }
    }

    /// Per-element loss before the 1/N mean.
    #[inline]
    fn value_at(&self, d: f64) -> f64 {
        match *self {
            Self::L1 => d.abs(),
            Self::L2 => d * d,
            Self::Charbonnier { eps } => (d * d + eps * eps).sqrt(),
            Self::SmoothL1 { beta } => {
                if d.abs() < beta {
                    0.5 * d * d / beta
                } else {
                    d.abs() - 0.5 * beta
                }
            }
        }
    }

    /// Per-element derivative before the 1/N mean; the L1 subgradient at
    /// zero is 0.
    ///
    /// The L1 and SmoothL1 arms are written branch-free (comparison
    /// arithmetic and clamp) because data-dependent sign branches
    /// mispredict on every other element in the hot loops.
    #[inline]
    fn slope_at(&self, d: f64) -> f64 {
        match *self {
            Self::L1 => ((d > 0.0) as i8 - (d < 0.0) as i8) as f64,
            Self::L2 => 2.0 * d,
            Self::Charbonnier { eps } => d / (d * d + eps * eps).sqrt(),
            // d/beta inside the quadratic region, saturating to the L1
            // slope +-1 outside it; identical values at the boundary.
            Self::SmoothL1 { beta } => (d / beta).clamp(-1.0, 1.0),
        }
    }
}

/// Whether gradients flow through lambda's dependence on the prediction
/// mean.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaMode {
    Differentiable,
    Detached,
}

/// Configuration of the brightness-weighted loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GtMeanConfig {
    /// Shared proportionality coefficient for both brightness Gaussians;
    /// 0 disables alignment entirely.
    pub sigma_coeff: f64,
    pub lambda_mode: LambdaMode,
    /// Floor for means used as divisors and for the degeneracy test.
    pub mean_floor: f64,
}

impl Default for GtMeanConfig {
    fn default() -> Self {
        Self {
            sigma_coeff: DEFAULT_SIGMA_COEFF,
            lambda_mode: LambdaMode::Differentiable,
            mean_floor: DEFAULT_MEAN_FLOOR,
        }
    }
}

impl GtMeanConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.sigma_coeff.is_finite() || self.sigma_coeff < 0.0 {
            return Err(Error::InvalidParameter {
                name: "sigma_coeff",
                reason: format!("must be finite and >= 0, got {}", self.sigma_coeff),
            });
        }
        if !self.mean_floor.is_finite() || self.mean_floor <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "mean_floor",
                reason: format!("must be finite and > 0, got {}", self.mean_floor),
            });
        }
        Ok(())
    }
}

/// Per-evaluation diagnostics. When alignment is inactive (degenerate
/// weight or a forced weight of exactly 1) the aligned term is not
/// computed: `lambda` reports 1, `aligned_term` repeats the original term,
/// and `d_b` is +inf.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossDiagnostics {
    pub w: f64,
    pub d_b: f64,
    pub lambda: f64,
    pub original_term: f64,
    pub aligned_term: f64,
}

/// Loss value with its gradient w.r.t. the prediction and diagnostics.
#[derive(Clone, Debug)]
pub struct LossOutput {
    pub value: f64,
    pub grad: RawTensor,
    pub diag: LossDiagnostics,
}

/// Plain elementwise loss: mean value and its gradient (1/N per element).
pub fn base_loss<P, T>(kind: LossKind, pred: &P, target: &T) -> Result<(f64, RawTensor)>
where
    P: Tensor + ?Sized,
    T: Tensor + ?Sized,
{
    kind.validate()?;
    same_shape(pred, target)?;
    let pd = pred.data();
    let td = target.data();
    let n = pd.len() as f64;
    let inv_n = 1.0 / n;
    let mut acc = 0.0;
    let mut grad = vec![0.0f64; pd.len()];
    for i in 0..pd.len() {
        let d = pd[i] - td[i];
        acc += kind.value_at(d);
        grad[i] = kind.slope_at(d) * inv_n;
    }
    let (c, h, w) = pred.shape();
    Ok((acc / n, RawTensor::from_checked_parts(c, h, w, grad)))
}

/// Brightness-weighted loss `W * L(pred, t) + (1 - W) * L(lambda*pred, t)`
/// with the analytic gradient w.r.t. `pred`.
pub fn gt_mean_loss<P, T>(
    kind: LossKind,
    pred: &P,
    target: &T,
    cfg: &GtMeanConfig,
) -> Result<LossOutput>
where
    P: Tensor + ?Sized,
    T: Tensor + ?Sized,
{
    gt_mean_loss_with_weight(kind, pred, target, cfg, None)
}

/// Ablation entry point: override the brightness weight instead of deriving
/// it from the Bhattacharyya distance. `Some(0.0)` evaluates the aligned
/// term alone, `Some(1.0)` the original term alone; `None` is the standard
/// weighted loss.
pub fn gt_mean_loss_with_weight<P, T>(
    kind: LossKind,
    pred: &P,
    target: &T,
    cfg: &GtMeanConfig,
    forced_w: Option<f64>,
) -> Result<LossOutput>
where
    P: Tensor + ?Sized,
    T: Tensor + ?Sized,
{
    kind.validate()?;
    cfg.validate()?;
    same_shape(pred, target)?;
    if let Some(w) = forced_w {
        if !w.is_finite() || !(0.0..=1.0).contains(&w) {
            return Err(Error::InvalidParameter {
                name: "forced_w",
                reason: format!("must lie in [0, 1], got {w}"),
            });
        }
    }

    let m_p = mean_brightness(pred);
    let m_t = mean_brightness(target);
    let wr = weight_w(m_t, m_p, cfg.sigma_coeff, cfg.mean_floor)?;
    let w = forced_w.unwrap_or(wr.w);

    // Alignment is inactive when the weight path is degenerate or the
    // caller pinned the weight to exactly 1; the loss is then the original
    // term, bit for bit.
    if forced_w == Some(1.0) || (forced_w.is_none() && wr.is_degenerate()) {
        let (value, grad) = base_loss(kind, pred, target)?;
        return Ok(LossOutput {
            value,
            grad,
            diag: LossDiagnostics {
                w: 1.0,
                d_b: f64::INFINITY,
                lambda: 1.0,
                original_term: value,
                aligned_term: value,
            },
        });
    }

    let pd = pred.data();
    let td = target.data();
    let n = pd.len() as f64;
    let inv_n = 1.0 / n;
    let lambda = m_t / m_p.max(cfg.mean_floor);
    let omw = 1.0 - w;
    let omw_lambda = omw * lambda;

    // Pass 1: both term values, the dot product the lambda chain rule
    // needs (sum over j of slope(lambda*p_j - t_j) * p_j), and the local
    // part of the gradient staged un-normalized into the output buffer.
    // The global lambda correction is a constant over elements but needs
    // the finished dot product, so it is folded in by the second pass.
    let mut o_acc = 0.0;
    let mut a_acc = 0.0;
    let mut dot = 0.0;
    let mut grad = vec![0.0f64; pd.len()];
    for i in 0..pd.len() {
        let p = pd[i];
        let t = td[i];
        let d = p - t;
        let ds = lambda * p - t;
        o_acc += kind.value_at(d);
        a_acc += kind.value_at(ds);
        let sa = kind.slope_at(ds);
        dot += sa * p;
        grad[i] = w * kind.slope_at(d) + omw_lambda * sa;
    }
    let original_term = o_acc / n;
    let aligned_term = a_acc / n;
    let value = w * original_term + omw * aligned_term;

    // d(lambda)/d(p_i) = -mean(t) / (N * mean(p)^2) = -(lambda / mean(p)) / N
    // on the differentiable branch of max(mean(p), floor); zero otherwise.
    let dlam = match cfg.lambda_mode {
        LambdaMode::Differentiable if m_p >= cfg.mean_floor => -lambda / (m_p * n),
        _ => 0.0,
    };
    let kappa = dlam * (dot / n);

    // Pass 2: normalize and add the lambda correction, giving
    // grad_i = (w * slope(d_i) + (1-w) * lambda * slope(ds_i)) / N
    //        + (1-w) * kappa.
    let shift = omw * kappa;
    for g in &mut grad {
        *g = *g * inv_n + shift;
    }
    let (c, h, wd) = pred.shape();
    Ok(LossOutput {
        value,
        grad: RawTensor::from_checked_parts(c, h, wd, grad),
        diag: LossDiagnostics {
            w,
            d_b: wr.d_b,
            lambda,
            original_term,
            aligned_term,
        },
    })
}

/// Value-only evaluation of both terms, for sweeps.
#[derive(Clone, Copy, Debug)]
pub(crate) struct GtTerms {
    pub value: f64,
    pub original_term: f64,
    pub aligned_term: f64,
    pub w: f64,
    pub d_b: f64,
}

pub(crate) fn gt_mean_terms<P, T>(
    kind: LossKind,
    pred: &P,
    target: &T,
    cfg: &GtMeanConfig,
) -> Result<GtTerms>
where
    P: Tensor + ?Sized,
    T: Tensor + ?Sized,
{
    kind.validate()?;
    cfg.validate()?;
    same_shape(pred, target)?;
    let m_p = mean_brightness(pred);
    let m_t = mean_brightness(target);
    let wr = weight_w(m_t, m_p, cfg.sigma_coeff, cfg.mean_floor)?;
    let pd = pred.data();
    let td = target.data();
    let n = pd.len() as f64;
    let mut o_acc = 0.0;
    for i in 0..pd.len() {
        o_acc += kind.value_at(pd[i] - td[i]);
    }
    let original_term = o_acc / n;
    if wr.is_degenerate() {
        return Ok(GtTerms {
            value: original_term,
            original_term,
            aligned_term: original_term,
            w: 1.0,
            d_b: f64::INFINITY,
        });
    }
    let lambda = m_t / m_p.max(cfg.mean_floor);
    let mut a_acc = 0.0;
    for i in 0..pd.len() {
        a_acc += kind.value_at(lambda * pd[i] - td[i]);
    }
    let aligned_term = a_acc / n;
    Ok(GtTerms {
        value: wr.w * original_term + (1.0 - wr.w) * aligned_term,
        original_term,
        aligned_term,
        w: wr.w,
        d_b: wr.d_b,
    })
}

/// Central-difference validation of the analytic gradient.
///
/// Returns max over elements of |analytic - numeric| / max(|numeric|, 1e-8).
/// During differencing W stays frozen at its value at the evaluation point
/// (matching the stop-gradient contract); in `Detached` mode lambda is
/// frozen too, in `Differentiable` mode it is recomputed per probe.
///
/// Preconditions (violations are [`Error::FdPrecondition`]):
/// - for L1/SmoothL1, every |pred_i - target_i| must exceed 10*step so
///   probes cannot cross the |d| = 0 kink;
/// - with a config present, |mean(pred) - mean_floor| must exceed 10*step
///   so probes cannot cross the floor branch of lambda.
pub fn finite_difference_check<P, T>(
    kind: LossKind,
    cfg: Option<&GtMeanConfig>,
    pred: &P,
    target: &T,
    step: f64,
) -> Result<f64>
where
    P: Tensor + ?Sized,
    T: Tensor + ?Sized,
{
    kind.validate()?;
    if let Some(c) = cfg {
        c.validate()?;
    }
    same_shape(pred, target)?;
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::InvalidParameter {
            name: "step",
            reason: format!("must be finite and > 0, got {step}"),
        });
    }

    let pd = pred.data();
    let td = target.data();
    if matches!(kind, LossKind::L1 | LossKind::SmoothL1 { .. }) {
        for i in 0..pd.len() {
            let gap = (pd[i] - td[i]).abs();
            if gap <= 10.0 * step {
                return Err(Error::FdPrecondition {
                    detail: format!(
                        "|pred - target| = {gap:.3e} at element {i} is within 10*step of the \
                         |d| = 0 kink (step {step:.3e})"
                    ),
                });
            }
        }
    }
    let m_t = mean_brightness(target);
    let m_p = mean_brightness(pred);
    if let Some(c) = cfg {
        if (m_p - c.mean_floor).abs() <= 10.0 * step {
            return Err(Error::FdPrecondition {
                detail: format!(
                    "mean(pred) = {m_p:.6e} is within 10*step of mean_floor {:.3e}",
                    c.mean_floor
                ),
            });
        }
    }

    // Analytic gradient plus the frozen quantities.
    let (analytic, w0, lambda0, degenerate) = match cfg {
        None => {
            let (_, g) = base_loss(kind, pred, target)?;
            (g, 1.0, 1.0, true)
        }
        Some(c) => {
            let out = gt_mean_loss(kind, pred, target, c)?;
            let degenerate = out.diag.d_b.is_infinite();
            (out.grad, out.diag.w, out.diag.lambda, degenerate)
        }
    };

    // Value of the frozen objective on scratch data.
    let frozen = |data: &[f64]| -> f64 {
        let n = data.len() as f64;
        let mut o_acc = 0.0;
        for i in 0..data.len() {
            o_acc += kind.value_at(data[i] - td[i]);
        }
        let original = o_acc / n;
        if degenerate {
            return original;
        }
        let c = cfg.expect("non-degenerate implies a config");
        let lambda = match c.lambda_mode {
            LambdaMode::Detached => lambda0,
            LambdaMode::Differentiable => {
                let m: f64 = data.iter().sum::<f64>() / n;
                m_t / m.max(c.mean_floor)
            }
        };
        let mut a_acc = 0.0;
        for i in 0..data.len() {
            a_acc += kind.value_at(lambda * data[i] - td[i]);
        }
        w0 * original + (1.0 - w0) * (a_acc / n)
    };

    let mut scratch = pd.to_vec();
    let ag = analytic.data();
    let mut max_rel = 0.0f64;
    for i in 0..scratch.len() {
        let saved = scratch[i];
        scratch[i] = saved + step;
        let plus = frozen(&scratch);
        scratch[i] = saved - step;
        let minus = frozen(&scratch);
        scratch[i] = saved;
        let numeric = (plus - minus) / (2.0 * step);
        let rel = (ag[i] - numeric).abs() / numeric.abs().max(1e-8);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::ImageTensor;

    fn img(values: &[f64]) -> ImageTensor {
        ImageTensor::new(1, 1, values.len(), values.to_vec()).unwrap()
    }

    fn raw(values: &[f64]) -> RawTensor {
        RawTensor::new(1, 1, values.len(), values.to_vec()).unwrap()
    }

    #[test]
    fn l1_frozen_example() {
        let (v, g) = base_loss(LossKind::L1, &raw(&[0.2, 0.4]), &img(&[0.1, 0.6])).unwrap();
        assert!((v - 0.15).abs() < 1e-15);
        assert_eq!(g.data(), &[0.5, -0.5]);
    }

    #[test]
    fn l1_subgradient_at_zero_is_zero() {
        let (v, g) = base_loss(LossKind::L1, &raw(&[0.3, 0.5]), &img(&[0.3, 0.4])).unwrap();
        assert!((v - 0.05).abs() < 1e-15);
        assert_eq!(g.data()[0], 0.0);
        assert_eq!(g.data()[1], 0.5);
    }

    #[test]
    fn l2_value_and_gradient() {
        let (v, g) = base_loss(LossKind::L2, &raw(&[0.2, 0.4]), &img(&[0.1, 0.6])).unwrap();
        assert!((v - (0.01 + 0.04) / 2.0).abs() < 1e-15);
        assert!((g.data()[0] - 0.1).abs() < 1e-15);
        assert!((g.data()[1] + 0.2).abs() < 1e-15);
    }

    #[test]
    fn charbonnier_at_zero_residual_returns_eps_with_zero_grad() {
        let kind = LossKind::charbonnier();
        let (v, g) = base_loss(kind, &raw(&[0.5, 0.5]), &img(&[0.5, 0.5])).unwrap();
        assert_eq!(v, DEFAULT_CHARBONNIER_EPS);
        assert_eq!(g.data(), &[0.0, 0.0]);
    }

    #[test]
    fn smooth_l1_frozen_example() {
        let kind = LossKind::smooth_l1();
        let (v, g) = base_loss(kind, &raw(&[0.5]), &img(&[0.0])).unwrap();
        assert!((v - 0.125).abs() < 1e-15);
        assert!((g.data()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn smooth_l1_linear_region() {
        let kind = LossKind::SmoothL1 { beta: 0.25 };
        let (v, g) = base_loss(kind, &raw(&[1.0]), &img(&[0.2])).unwrap();
        // |d| = 0.8 >= beta: value |d| - beta/2, slope sign(d).
        assert!((v - (0.8 - 0.125)).abs() < 1e-15);
        assert_eq!(g.data()[0], 1.0);
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let p = raw(&[0.5]);
        let t = img(&[0.4]);
        assert!(base_loss(LossKind::Charbonnier { eps: 0.0 }, &p, &t).is_err());
        assert!(base_loss(LossKind::SmoothL1 { beta: -1.0 }, &p, &t).is_err());
        let bad_cfg = GtMeanConfig {
            sigma_coeff: -0.1,
            ..GtMeanConfig::default()
        };
        assert!(gt_mean_loss(LossKind::L1, &p, &t, &bad_cfg).is_err());
        assert!(
            gt_mean_loss_with_weight(LossKind::L1, &p, &t, &GtMeanConfig::default(), Some(1.5))
                .is_err()
        );
    }

    #[test]
    fn gt_mean_frozen_near_case() {
        // means 0.48 vs 0.5: W = D_B = 0.021232..., lambda = 25/24, and the
        // aligned residual is ~1 ulp, so the value is almost exactly W * 0.02.
        let out = gt_mean_loss(
            LossKind::L1,
            &raw(&[0.48, 0.48]),
            &img(&[0.5, 0.5]),
            &GtMeanConfig::default(),
        )
        .unwrap();
        assert!((out.diag.w - 0.021232479829714496).abs() < 1e-14);
        assert!((out.diag.lambda - 25.0 / 24.0).abs() < 1e-15);
        assert!(out.diag.aligned_term.abs() < 1e-15);
        assert!((out.value - 4.2464959659428915e-4).abs() < 1e-12);
        assert_eq!(out.diag.d_b, out.diag.w);
    }

    #[test]
    fn gt_mean_clipped_weight_still_reports_aligned_term() {
        // Far means: W clips to 1 but D_B stays finite and the aligned term
        // is still evaluated (here it is exactly 0 after rescaling).
        let out = gt_mean_loss(
            LossKind::L1,
            &raw(&[0.2, 0.2]),
            &img(&[0.4, 0.4]),
            &GtMeanConfig::default(),
        )
        .unwrap();
        assert_eq!(out.diag.w, 1.0);
        assert!(out.diag.d_b.is_finite() && out.diag.d_b > 5.0);
        assert!((out.value - 0.2).abs() < 1e-15);
        assert!(out.diag.aligned_term.abs() < 1e-15);
    }

    #[test]
    fn value_recombines_from_diagnostics() {
        let out = gt_mean_loss(
            LossKind::charbonnier(),
            &raw(&[0.3, 0.6, 0.45, 0.52]),
            &img(&[0.35, 0.5, 0.5, 0.6]),
            &GtMeanConfig::default(),
        )
        .unwrap();
        let recombined =
            out.diag.w * out.diag.original_term + (1.0 - out.diag.w) * out.diag.aligned_term;
        assert!((out.value - recombined).abs() <= 1e-12 * out.value.abs().max(1.0));
    }

    #[test]
    fn sigma_zero_reduces_to_base_loss_bitwise() {
        let cfg = GtMeanConfig {
            sigma_coeff: 0.0,
            ..GtMeanConfig::default()
        };
        let p = raw(&[0.2, 0.7, 0.4]);
        let t = img(&[0.5, 0.5, 0.1]);
        for kind in [
            LossKind::L1,
            LossKind::L2,
            LossKind::charbonnier(),
            LossKind::smooth_l1(),
        ] {
            let (bv, bg) = base_loss(kind, &p, &t).unwrap();
            let out = gt_mean_loss(kind, &p, &t, &cfg).unwrap();
            assert_eq!(out.value, bv);
            assert_eq!(out.grad.data(), bg.data());
            assert_eq!(out.diag.w, 1.0);
            assert!(out.diag.d_b.is_infinite());
            assert_eq!(out.diag.lambda, 1.0);
        }
    }

    #[test]
    fn equal_means_give_exact_base_value_with_zero_weight() {
        // Same mean, different content: lambda = 1 exactly, W = 0 exactly.
        // Dyadic values keep the two means bitwise identical.
        let p = raw(&[0.25, 0.75]);
        let t = img(&[0.5, 0.5]);
        let (bv, _) = base_loss(LossKind::L1, &p, &t).unwrap();
        let out = gt_mean_loss(LossKind::L1, &p, &t, &GtMeanConfig::default()).unwrap();
        assert_eq!(out.diag.w, 0.0);
        assert_eq!(out.diag.lambda, 1.0);
        assert_eq!(out.value, bv);
    }

    #[test]
    fn forced_weight_endpoints() {
        let p = raw(&[0.3, 0.6]);
        let t = img(&[0.5, 0.45]);
        let cfg = GtMeanConfig::default();
        let full = gt_mean_loss_with_weight(LossKind::L1, &p, &t, &cfg, Some(0.0)).unwrap();
        assert_eq!(full.diag.w, 0.0);
        assert_eq!(full.value, full.diag.aligned_term);
        let orig = gt_mean_loss_with_weight(LossKind::L1, &p, &t, &cfg, Some(1.0)).unwrap();
        let (bv, bg) = base_loss(LossKind::L1, &p, &t).unwrap();
        assert_eq!(orig.value, bv);
        assert_eq!(orig.grad.data(), bg.data());
        assert_eq!(orig.diag.lambda, 1.0);
    }

    #[test]
    fn aligned_term_is_scale_invariant_for_dyadic_factors() {
        let p = raw(&[0.2, 0.5, 0.35, 0.6]);
        let t = img(&[0.4, 0.45, 0.5, 0.55]);
        let cfg = GtMeanConfig::default();
        let base = gt_mean_loss(LossKind::charbonnier(), &p, &t, &cfg).unwrap();
        for c in [0.25, 0.5, 2.0, 4.0] {
            let scaled = raw(&p.data().iter().map(|v| c * v).collect::<Vec<_>>());
            let out = gt_mean_loss(LossKind::charbonnier(), &scaled, &t, &cfg).unwrap();
            // Dyadic scaling commutes with rounding, so this is exact.
            assert_eq!(out.diag.aligned_term, base.diag.aligned_term, "c = {c}");
        }
    }

    #[test]
    fn differentiable_lambda_kills_the_radial_direction() {
        // The aligned term is invariant along pred -> c*pred, so its
        // directional derivative along pred itself must vanish.
        let p = raw(&[0.2, 0.5, 0.35, 0.6]);
        let t = img(&[0.4, 0.45, 0.5, 0.55]);
        let cfg = GtMeanConfig::default();
        let full = gt_mean_loss_with_weight(LossKind::L2, &p, &t, &cfg, Some(0.0)).unwrap();
        let radial: f64 = full
            .grad
            .data()
            .iter()
            .zip(p.data())
            .map(|(g, v)| g * v)
            .sum();
        assert!(radial.abs() < 1e-8, "radial derivative {radial}");
    }

    #[test]
    fn detached_lambda_keeps_the_radial_direction() {
        let p = raw(&[0.2, 0.5, 0.35, 0.6]);
        let t = img(&[0.4, 0.45, 0.5, 0.55]);
        let cfg = GtMeanConfig {
            lambda_mode: LambdaMode::Detached,
            ..GtMeanConfig::default()
        };
        let full = gt_mean_loss_with_weight(LossKind::L2, &p, &t, &cfg, Some(0.0)).unwrap();
        let radial: f64 = full
            .grad
            .data()
            .iter()
            .zip(p.data())
            .map(|(g, v)| g * v)
            .sum();
        assert!(radial.abs() > 1e-4, "detached mode should not cancel: {radial}");
    }

    #[test]
    fn finite_difference_agrees_for_all_kinds_and_modes() {
        // Smooth points: residuals well away from kinks, means moderately
        // apart so W lies strictly inside (0, 1).
        let p = raw(&[0.62, 0.41, 0.55, 0.47, 0.66, 0.52]);
        let t = img(&[0.50, 0.55, 0.40, 0.60, 0.50, 0.38]);
        for kind in [
            LossKind::L1,
            LossKind::L2,
            LossKind::charbonnier(),
            LossKind::smooth_l1(),
        ] {
            let plain = finite_difference_check(kind, None, &p, &t, 1e-6).unwrap();
            assert!(plain < 1e-6, "{kind:?} plain: {plain}");
            for mode in [LambdaMode::Differentiable, LambdaMode::Detached] {
                let cfg = GtMeanConfig {
                    lambda_mode: mode,
                    ..GtMeanConfig::default()
                };
                let e = finite_difference_check(kind, Some(&cfg), &p, &t, 1e-6).unwrap();
                assert!(e < 1e-5, "{kind:?} {mode:?}: {e}");
            }
        }
    }

    #[test]
    fn finite_difference_guards_the_l1_kink() {
        let p = raw(&[0.5, 0.5]);
        let t = img(&[0.5, 0.4]);
        let err = finite_difference_check(LossKind::L1, None, &p, &t, 1e-6).unwrap_err();
        assert!(matches!(err, Error::FdPrecondition { .. }));
        // L2 has no kink: the same inputs pass.
        assert!(finite_difference_check(LossKind::L2, None, &p, &t, 1e-6).unwrap() < 1e-6);
    }

    #[test]
    fn finite_difference_guards_the_mean_floor() {
        let p = raw(&[1e-6, 1e-6]);
        let t = img(&[0.5, 0.4]);
        let cfg = GtMeanConfig::default();
        let err = finite_difference_check(LossKind::L2, Some(&cfg), &p, &t, 1e-6).unwrap_err();
        assert!(matches!(err, Error::FdPrecondition { .. }));
    }

    #[test]
    fn gradient_length_matches_pred_shape() {
        let p = RawTensor::new(3, 2, 2, vec![0.4; 12]).unwrap();
        let t = ImageTensor::new(3, 2, 2, vec![0.5; 12]).unwrap();
        let out = gt_mean_loss(LossKind::L2, &p, &t, &GtMeanConfig::default()).unwrap();
        assert_eq!(out.grad.shape(), p.shape());
    }
}

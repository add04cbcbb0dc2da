//! Scalar brightness model.
//!
//! An image's brightness is summarized as a Gaussian whose standard
//! deviation is proportional to its mean (shared coefficient for both
//! images). The mismatch between prediction and target brightness is the
//! Bhattacharyya distance between those Gaussians, clipped into [0, 1] as
//! a mixing weight: far-apart means give weight 1 (original loss only),
//! matching means give weight 0 (aligned loss only).

use crate::error::{Error, Result};

/// Brightness summarized as N(mu, sigma_abs^2).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BrightnessGaussian {
    pub mu: f64,
    pub sigma_abs: f64,
}

impl BrightnessGaussian {
    /// Gaussian with mean `mean` and standard deviation
    /// `sigma_coeff * mean`.
    pub fn from_image_mean(mean: f64, sigma_coeff: f64) -> Result<Self> {
        if !mean.is_finite() || !sigma_coeff.is_finite() {
            return Err(Error::NonFinite {
                context: "brightness gaussian parameters",
            });
        }
        if mean < 0.0 {
            return Err(Error::InvalidParameter {
                name: "mean",
                reason: format!("image means are non-negative, got {mean}"),
            });
        }
        if sigma_coeff < 0.0 {
            return Err(Error::InvalidParameter {
                name: "sigma_coeff",
                reason: format!("must be >= 0, got {sigma_coeff}"),
            });
        }
        Ok(Self {
            mu: mean,
            sigma_abs: sigma_coeff * mean,
        })
    }
}

/// Bhattacharyya distance between two Gaussians:
///
/// ```text
/// D_B = (mu_p - mu_q)^2 / (4 (s_p^2 + s_q^2)) + ln((s_p^2 + s_q^2) / (2 s_p s_q)) / 2
/// ```
///
/// The log term is evaluated as ln(s_p^2 + s_q^2)/2 - ln(2 s_p s_q)/2 so
/// tiny variances stay out of a single near-zero ratio. Both standard
/// deviations must be strictly positive.
pub fn bhattacharyya(p: &BrightnessGaussian, q: &BrightnessGaussian) -> Result<f64> {
    for g in [p, q] {
        if !(g.mu.is_finite() && g.sigma_abs.is_finite()) {
            return Err(Error::NonFinite {
                context: "brightness gaussian parameters",
            });
        }
        if g.sigma_abs <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "sigma_abs",
                reason: format!("must be > 0, got {}", g.sigma_abs),
            });
        }
    }
    let var_sum = p.sigma_abs * p.sigma_abs + q.sigma_abs * q.sigma_abs;
    let diff = p.mu - q.mu;
    let quad = 0.25 * diff * diff / var_sum;
    let log_term = 0.5 * var_sum.ln() - 0.5 * (2.0 * p.sigma_abs * q.sigma_abs).ln();
    Ok(quad + log_term)
}

/// Distance plus its clipped form. `d_b` is +inf when the weight came from
/// the degenerate path (zero sigma coefficient or a mean under the floor),
/// in which case `w` is exactly 1 and brightness alignment is disabled.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightResult {
    pub d_b: f64,
    pub w: f64,
}

impl WeightResult {
    /// True when the distance is the degenerate sentinel rather than a
    /// computed value.
    pub fn is_degenerate(&self) -> bool {
        self.d_b.is_infinite()
    }
}

/// Brightness-mismatch weight `w = clip(D_B, 0, 1)`.
///
/// The degenerate path is checked first: a zero sigma coefficient or
/// either mean below `mean_floor` yields the sentinel (+inf, w = 1), which
/// reduces the weighted loss to the plain original loss.
pub fn weight_w(
    mean_target: f64,
    mean_pred: f64,
    sigma_coeff: f64,
    mean_floor: f64,
) -> Result<WeightResult> {
    if !(mean_target.is_finite() && mean_pred.is_finite() && sigma_coeff.is_finite()) {
        return Err(Error::NonFinite {
            context: "weight inputs",
        });
    }
    if sigma_coeff < 0.0 {
        return Err(Error::InvalidParameter {
            name: "sigma_coeff",
            reason: format!("must be >= 0, got {sigma_coeff}"),
        });
    }
    if !(mean_floor.is_finite() && mean_floor > 0.0) {
        return Err(Error::InvalidParameter {
            name: "mean_floor",
            reason: format!("must be finite and > 0, got {mean_floor}"),
        });
    }
    if sigma_coeff == 0.0 || mean_target < mean_floor || mean_pred < mean_floor {
        return Ok(WeightResult {
            d_b: f64::INFINITY,
            w: 1.0,
        });
    }
    let p = BrightnessGaussian::from_image_mean(mean_target, sigma_coeff)?;
    let q = BrightnessGaussian::from_image_mean(mean_pred, sigma_coeff)?;
    let d_b = bhattacharyya(&p, &q)?;
    Ok(WeightResult {
        d_b,
        w: d_b.clamp(0.0, 1.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d_b(mu_p: f64, mu_q: f64, sigma_coeff: f64) -> f64 {
        let p = BrightnessGaussian::from_image_mean(mu_p, sigma_coeff).unwrap();
        let q = BrightnessGaussian::from_image_mean(mu_q, sigma_coeff).unwrap();
        bhattacharyya(&p, &q).unwrap()
    }

    #[test]
    fn from_image_mean_scales_sigma() {
        let g = BrightnessGaussian::from_image_mean(0.5, 0.1).unwrap();
        assert_eq!(g.mu, 0.5);
        assert!((g.sigma_abs - 0.05).abs() < 1e-15);
        assert!(BrightnessGaussian::from_image_mean(-0.1, 0.1).is_err());
        assert!(BrightnessGaussian::from_image_mean(0.5, -0.1).is_err());
    }

    #[test]
    fn distance_matches_quadrature_oracle_far_means() {
        // Frozen from 50-digit quadrature of -ln integral sqrt(p q) dt.
        let v = d_b(0.5, 0.25, 0.1);
        assert!((v - 5.1115717756571049).abs() < 1e-12, "got {v}");
    }

    #[test]
    fn distance_matches_quadrature_oracle_near_means() {
        let v = d_b(0.5, 0.48, 0.1);
        assert!((v - 0.021232479829714496).abs() < 1e-14, "got {v}");
    }

    #[test]
    fn distance_is_symmetric_bitwise() {
        for (a, b, s) in [(0.5, 0.25, 0.1), (0.9, 0.05, 0.3), (0.4, 0.41, 0.02)] {
            assert_eq!(d_b(a, b, s), d_b(b, a, s));
        }
    }

    #[test]
    fn distance_is_zero_for_equal_means() {
        assert_eq!(d_b(0.37, 0.37, 0.1), 0.0);
    }

    #[test]
    fn distance_decreases_as_sigma_grows() {
        // Wider brightness uncertainty makes the same mean gap less
        // significant; the log term is sigma-independent, so the decrease
        // is strict whenever the means differ.
        let mut last = f64::INFINITY;
        for s in [0.02, 0.05, 0.1, 0.2, 0.5] {
            let v = d_b(0.5, 0.4, s);
            assert!(v < last, "not strictly decreasing at sigma {s}");
            last = v;
        }
    }

    #[test]
    fn bhattacharyya_rejects_non_positive_sigma() {
        let ok = BrightnessGaussian {
            mu: 0.5,
            sigma_abs: 0.05,
        };
        let bad = BrightnessGaussian {
            mu: 0.5,
            sigma_abs: 0.0,
        };
        assert!(matches!(
            bhattacharyya(&ok, &bad),
            Err(Error::InvalidParameter { name: "sigma_abs", .. })
        ));
    }

    #[test]
    fn weight_clips_into_unit_interval() {
        // Far means: D_B about 5.11, clipped to 1.
        let far = weight_w(0.5, 0.25, 0.1, 1e-6).unwrap();
        assert!(far.d_b > 5.0 && far.d_b.is_finite());
        assert_eq!(far.w, 1.0);
        assert!(!far.is_degenerate());
        // Near means: small distance passes through unclipped.
        let near = weight_w(0.5, 0.48, 0.1, 1e-6).unwrap();
        assert_eq!(near.w, near.d_b);
        assert!(near.w > 0.0 && near.w < 1.0);
    }

    #[test]
    fn degenerate_paths_return_sentinel() {
        for (mt, mp, sc) in [(0.5, 0.25, 0.0), (1e-9, 0.5, 0.1), (0.5, 1e-9, 0.1)] {
            let r = weight_w(mt, mp, sc, 1e-6).unwrap();
            assert!(r.is_degenerate());
            assert_eq!(r.d_b, f64::INFINITY);
            assert_eq!(r.w, 1.0);
        }
        // A mean exactly at the floor is not degenerate.
        let r = weight_w(1e-6, 1e-6, 0.1, 1e-6).unwrap();
        assert!(!r.is_degenerate());
        assert_eq!(r.w, 0.0);
    }

    #[test]
    fn weight_validates_inputs() {
        assert!(weight_w(f64::NAN, 0.5, 0.1, 1e-6).is_err());
        assert!(weight_w(0.5, 0.5, -0.1, 1e-6).is_err());
        assert!(weight_w(0.5, 0.5, 0.1, 0.0).is_err());
    }
}

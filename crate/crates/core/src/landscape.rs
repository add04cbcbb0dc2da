//! Loss-vs-brightness-scale sweeps.
//!
//! A sweep multiplies the prediction batch by a global factor eta and
//! evaluates the weighted loss at each grid point. Around the
//! mean-matching scale eta* = E[target]/E[pred] the aligned term is
//! constant (the rescale cancels eta exactly in real arithmetic), so the
//! weighted loss shows a flat basin whose width is governed by the sigma
//! coefficient; far from eta* the weight saturates at 1 and the curve
//! follows the plain loss.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmtnum::sig9;
use crate::image::{same_shape, ImageTensor, RawTensor, Tensor};
use crate::loss::{gt_mean_terms, GtMeanConfig, LossKind};

/// Grid and sigma schedule for a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub eta_min: f64,
    pub eta_max: f64,
    /// Number of grid points, endpoints included.
    pub steps: usize,
    /// One sweep is produced per entry.
    pub sigma_list: Vec<f64>,
    pub kind: LossKind,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            eta_min: 0.0,
            eta_max: 3.0,
            steps: 301,
            sigma_list: vec![0.05, 0.1, 0.2],
            kind: LossKind::L1,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta_min.is_finite() && self.eta_max.is_finite() && self.eta_min >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "eta_min",
                reason: format!("grid must be finite and non-negative, got {}", self.eta_min),
            });
        }
        if self.eta_max <= self.eta_min {
            return Err(Error::InvalidParameter {
                name: "eta_max",
                reason: format!("must exceed eta_min, got {}", self.eta_max),
            });
        }
        if self.steps < 2 {
            return Err(Error::InvalidParameter {
                name: "steps",
                reason: format!("need at least 2 grid points, got {}", self.steps),
            });
        }
        if self.sigma_list.is_empty() {
            return Err(Error::InvalidParameter {
                name: "sigma_list",
                reason: "must not be empty".to_string(),
            });
        }
        for &s in &self.sigma_list {
            if !s.is_finite() || s < 0.0 {
                return Err(Error::InvalidParameter {
                    name: "sigma_list",
                    reason: format!("entries must be finite and >= 0, got {s}"),
                });
            }
        }
        self.kind.validate()
    }

    /// Grid point i, computed as an affine blend so representable
    /// endpoints and simple interior points (like 2.0 on the default
    /// grid) are exact.
    pub fn eta_at(&self, i: usize) -> f64 {
        self.eta_min + (self.eta_max - self.eta_min) * i as f64 / (self.steps - 1) as f64
    }
}

/// One grid point of a sweep. All loss fields are batch means over the
/// image pairs; `weight` and `d_b` are batch means of the per-image
/// diagnostics (so `d_b` is +inf whenever any pair hit the degenerate
/// path, as every pair does at eta = 0).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub eta: f64,
    pub original_loss: f64,
    pub aligned_term: f64,
    pub gt_mean_loss: f64,
    pub weight: f64,
    pub d_b: f64,
}

/// All rows for one sigma coefficient, ascending in eta.
#[derive(Clone, Debug)]
pub struct SigmaSweep {
    pub sigma_coeff: f64,
    pub rows: Vec<SweepRow>,
}

impl SigmaSweep {
    /// Row index of the minimum weighted loss (first hit on ties).
    pub fn min_loss_index(&self) -> usize {
        let mut best = 0;
        for (i, row) in self.rows.iter().enumerate() {
            if row.gt_mean_loss < self.rows[best].gt_mean_loss {
                best = i;
            }
        }
        best
    }
}

/// Sweeps the prediction batch across the eta grid, once per sigma in
/// `spec.sigma_list`. `cfg` supplies the lambda mode and mean floor; its
/// sigma coefficient is overridden per sweep.
///
/// Per grid point, per pair: the prediction is scaled by eta (unclamped),
/// then the weighted loss and both terms are evaluated; the row stores
/// batch means.
pub fn eta_sweep(
    preds: &[ImageTensor],
    targets: &[ImageTensor],
    spec: &SweepSpec,
    cfg: &GtMeanConfig,
) -> Result<Vec<SigmaSweep>> {
    spec.validate()?;
    if preds.is_empty() || preds.len() != targets.len() {
        return Err(Error::InvalidParameter {
            name: "batch",
            reason: format!(
                "need equal non-empty pred/target batches, got {} and {}",
                preds.len(),
                targets.len()
            ),
        });
    }
    for (p, t) in preds.iter().zip(targets) {
        same_shape(p, t)?;
    }

    let count = preds.len() as f64;
    let mut sweeps = Vec::with_capacity(spec.sigma_list.len());
    for &sigma in &spec.sigma_list {
        let cfg_s = GtMeanConfig {
            sigma_coeff: sigma,
            ..*cfg
        };
        let mut rows = Vec::with_capacity(spec.steps);
        for i in 0..spec.steps {
            let eta = spec.eta_at(i);
            let mut sums = [0.0f64; 5];
            for (p, t) in preds.iter().zip(targets) {
                let (c, h, w) = p.shape();
                let scaled_data: Vec<f64> = p.data().iter().map(|v| eta * v).collect();
                let scaled = RawTensor::from_checked_parts(c, h, w, scaled_data);
                let terms = gt_mean_terms(spec.kind, &scaled, t, &cfg_s)?;
                sums[0] += terms.original_term;
                sums[1] += terms.aligned_term;
                sums[2] += terms.value;
                sums[3] += terms.w;
                sums[4] += terms.d_b;
            }
            rows.push(SweepRow {
                eta,
                original_loss: sums[0] / count,
                aligned_term: sums[1] / count,
                gt_mean_loss: sums[2] / count,
                weight: sums[3] / count,
                d_b: sums[4] / count,
            });
        }
        sweeps.push(SigmaSweep {
            sigma_coeff: sigma,
            rows,
        });
    }
    Ok(sweeps)
}

/// Canonical per-sigma CSV filename; `sigma_text` is embedded verbatim.
pub fn landscape_csv_name(sigma_text: &str) -> String {
    format!("landscape_sigma_{sigma_text}.csv")
}

/// Writes one sweep as CSV: header row, 9-significant-digit values, `\n`
/// endings, degenerate distances as `inf`.
pub fn write_landscape_csv(sweep: &SigmaSweep, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str("eta,original_loss,aligned_term,gt_mean_loss,weight,d_b\n");
    for row in &sweep.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            sig9(row.eta),
            sig9(row.original_loss),
            sig9(row.aligned_term),
            sig9(row.gt_mean_loss),
            sig9(row.weight),
            sig9(row.d_b),
        ));
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

//! PSNR, MS-SSIM and the degradation deltas used in attack reports.

pub mod consts;
mod msssim;

use ndarray::{ArrayView3, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

pub use msssim::{ms_ssim, ms_ssim_scales};

/// Quality of one image against a reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityScore {
    /// dB, capped at [`consts::PSNR_CAP_DB`].
    pub psnr: f64,
    pub ms_ssim: f64,
}

/// Drop in quality between two pairings; positive means the second is worse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Degradation {
    pub psnr: f64,
    pub ms_ssim: f64,
}

/// Peak signal-to-noise ratio on the normalized scale, `10·log10(1 / MSE)`.
pub fn psnr(a: ArrayView3<f64>, b: ArrayView3<f64>) -> Result<f64> {
    ensure!(
        a.dim() == b.dim(),
        "shape mismatch: {:?} vs {:?}",
        a.dim(),
        b.dim()
    );
    ensure!(!a.is_empty(), "cannot compare empty images");
    let mut sse = 0.0;
    Zip::from(&a).and(&b).for_each(|&x, &y| {
        let d = x - y;
        sse += d * d;
    });
    let mse = sse / a.len() as f64;
    if mse == 0.0 {
        return Ok(consts::PSNR_CAP_DB);
    }
    let peak = consts::DATA_RANGE;
    Ok((10.0 * (peak * peak / mse).log10()).min(consts::PSNR_CAP_DB))
}

/// PSNR and MS-SSIM of `b` against `a`.
pub fn quality(a: ArrayView3<f64>, b: ArrayView3<f64>) -> Result<QualityScore> {
    Ok(QualityScore {
        psnr: psnr(a, b)?,
        ms_ssim: ms_ssim(a, b)?,
    })
}

/// `clean_pair − adv_pair` for both metrics.
///
/// In attack reports `clean_pair` scores the adversarial example against the
/// original and `adv_pair` scores the reconstruction of the adversarial
/// example against the adversarial example.
pub fn degradation(clean_pair: QualityScore, adv_pair: QualityScore) -> Degradation {
    Degradation {
        psnr: clean_pair.psnr - adv_pair.psnr,
        ms_ssim: clean_pair.ms_ssim - adv_pair.ms_ssim,
    }
}

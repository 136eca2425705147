use ndarray::{s, Array2, ArrayView2, ArrayView3};

use super::consts::{DATA_RANGE, K1, K2, SCALE_WEIGHTS, WINDOW_SIGMA, WINDOW_SIZE};
use crate::error::{ensure, Result};

/// Number of scales usable for an image whose shorter side is `side`.
///
/// Five scales need `side > (WINDOW_SIZE − 1) · 2⁴`; smaller images drop the
/// coarsest scales until the window fits.
pub fn ms_ssim_scales(side: usize) -> usize {
    (1..=SCALE_WEIGHTS.len())
        .rev()
        .find(|&levels| side > (WINDOW_SIZE - 1) << (levels - 1))
        .unwrap_or(0)
}

/// Multi-scale SSIM, averaged over channels.
///
/// Valid-mode Gaussian filtering, 2×2 average pooling between scales (zero
/// padded on odd sizes), negative contrast terms clamped to zero. With fewer
/// than five scales the leading weights are renormalized to sum to one.
pub fn ms_ssim(a: ArrayView3<f64>, b: ArrayView3<f64>) -> Result<f64> {
    ensure!(
        a.dim() == b.dim(),
        "shape mismatch: {:?} vs {:?}",
        a.dim(),
        b.dim()
    );
    let (h, w, c) = a.dim();
    let levels = ms_ssim_scales(h.min(w));
    ensure!(
        levels > 0,
        "{h}x{w} image too small for an {WINDOW_SIZE}-tap window"
    );
    let weights: Vec<f64> = if levels == SCALE_WEIGHTS.len() {
        SCALE_WEIGHTS.to_vec()
    } else {
        let total: f64 = SCALE_WEIGHTS[..levels].iter().sum();
        SCALE_WEIGHTS[..levels].iter().map(|w| w / total).collect()
    };
    let window = gaussian_window();

    let mut acc = 0.0;
    for ch in 0..c {
        let mut x = a.slice(s![.., .., ch]).to_owned();
        let mut y = b.slice(s![.., .., ch]).to_owned();
        let mut value = 1.0;
        for (level, &weight) in weights.iter().enumerate() {
            let (ssim, cs) = ssim_level(x.view(), y.view(), &window);
            if level + 1 < levels {
                value *= cs.max(0.0).powf(weight);
                x = avg_pool(x.view());
                y = avg_pool(y.view());
            } else {
                value *= ssim.max(0.0).powf(weight);
            }
        }
        acc += value;
    }
    Ok(acc / c as f64)
}

fn gaussian_window() -> Vec<f64> {
    let half = (WINDOW_SIZE / 2) as f64;
    let raw: Vec<f64> = (0..WINDOW_SIZE)
        .map(|i| {
            let d = i as f64 - half;
            (-(d * d) / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp()
        })
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

/// Separable valid-mode filtering.
fn filter(plane: &Array2<f64>, window: &[f64]) -> Array2<f64> {
    let (h, w) = plane.dim();
    let k = window.len();
    let vertical = Array2::from_shape_fn((h - k + 1, w), |(i, j)| {
        window
            .iter()
            .enumerate()
            .map(|(t, &g)| g * plane[[i + t, j]])
            .sum::<f64>()
    });
    Array2::from_shape_fn((h - k + 1, w - k + 1), |(i, j)| {
        window
            .iter()
            .enumerate()
            .map(|(t, &g)| g * vertical[[i, j + t]])
            .sum::<f64>()
    })
}

/// Mean SSIM and mean contrast-structure term at one scale.
fn ssim_level(x: ArrayView2<f64>, y: ArrayView2<f64>, window: &[f64]) -> (f64, f64) {
    let c1 = (K1 * DATA_RANGE).powi(2);
    let c2 = (K2 * DATA_RANGE).powi(2);
    let x = x.to_owned();
    let y = y.to_owned();
    let mu_x = filter(&x, window);
    let mu_y = filter(&y, window);
    let xx = filter(&(&x * &x), window);
    let yy = filter(&(&y * &y), window);
    let xy = filter(&(&x * &y), window);

    let n = mu_x.len() as f64;
    let (mut ssim_sum, mut cs_sum) = (0.0, 0.0);
    for ((((&mx, &my), &sxx), &syy), &sxy) in mu_x
        .iter()
        .zip(mu_y.iter())
        .zip(xx.iter())
        .zip(yy.iter())
        .zip(xy.iter())
    {
        let var_x = sxx - mx * mx;
        let var_y = syy - my * my;
        let cov = sxy - mx * my;
        let cs = (2.0 * cov + c2) / (var_x + var_y + c2);
        let lum = (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
        cs_sum += cs;
        ssim_sum += lum * cs;
    }
    (ssim_sum / n, cs_sum / n)
}

/// 2×2 average pooling; an odd side gets one zero row/column on each end,
/// counted in the divisor.
fn avg_pool(plane: ArrayView2<f64>) -> Array2<f64> {
    let (h, w) = plane.dim();
    let (ph, pw) = (h % 2, w % 2);
    let oh = (h + 2 * ph - 2) / 2 + 1;
    let ow = (w + 2 * pw - 2) / 2 + 1;
    let at = |r: isize, c: isize| -> f64 {
        if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
            0.0
        } else {
            plane[[r as usize, c as usize]]
        }
    };
    Array2::from_shape_fn((oh, ow), |(i, j)| {
        let r = 2 * i as isize - ph as isize;
        let c = 2 * j as isize - pw as isize;
        (at(r, c) + at(r + 1, c) + at(r, c + 1) + at(r + 1, c + 1)) / 4.0
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn scale_count() {
        assert_eq!(ms_ssim_scales(161), 5);
        assert_eq!(ms_ssim_scales(160), 4);
        assert_eq!(ms_ssim_scales(32), 2);
        assert_eq!(ms_ssim_scales(11), 1);
        assert_eq!(ms_ssim_scales(10), 0);
    }

    #[test]
    fn window_is_normalized_and_symmetric() {
        let g = gaussian_window();
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..WINDOW_SIZE {
            assert_eq!(g[i], g[WINDOW_SIZE - 1 - i]);
        }
    }

    #[test]
    fn pooling_pads_odd_sides() {
        let p = Array2::from_shape_fn((3, 4), |(i, j)| (i * 4 + j) as f64);
        let out = avg_pool(p.view());
        assert_eq!(out.dim(), (2, 2));
        // Row -1 is padding: (0 + 0 + 0 + 1) / 4.
        assert_eq!(out[[0, 0]], 0.25);
        assert_eq!(out[[1, 0]], (4.0 + 5.0 + 8.0 + 9.0) / 4.0);
    }

    #[test]
    fn self_similarity_is_one() {
        let a = Array3::from_shape_fn((40, 50, 3), |(i, j, k)| ((i * 3 + j * 5 + k) % 17) as f64 / 17.0);
        assert!((ms_ssim(a.view(), a.view()).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn too_small_is_rejected() {
        let a = Array3::zeros((10, 40, 1));
        assert!(ms_ssim(a.view(), a.view()).is_err());
    }
}

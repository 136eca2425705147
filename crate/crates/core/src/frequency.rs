//! Full-image orthonormal DCT, frequency-band masks, the band truncation
//! operator and the imperceptibility penalty built on it.
//!
//! The truncation `T(x) = IDCT(M ⊙ DCT(x))` is applied independently to each
//! channel. Because the transform is orthonormal and the mask binary, `T` is
//! an orthogonal projection: linear, idempotent and self-adjoint. The
//! imperceptibility penalty `‖T(x) − T(x')‖_F` therefore equals `‖T(x' − x)‖_F`
//! and its gradient with respect to `x'` is `T(x' − x) / ‖T(x' − x)‖_F`.

use std::cmp::Reverse;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3, Zip};
use rustdct::{DctPlanner, TransformType2And3};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Which end of the spectrum a mask keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    Low,
    High,
}

impl Band {
    pub fn opposite(self) -> Band {
        match self {
            Band::Low => Band::High,
            Band::High => Band::Low,
        }
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Band::Low => "low",
            Band::High => "high",
        })
    }
}

impl FromStr for Band {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low" => Ok(Band::Low),
            "high" => Ok(Band::High),
            other => Err(Error::invalid(format!("unknown band '{other}'"))),
        }
    }
}

/// Binary `H × W` selection over DCT coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyMask {
    mask: Array2<f64>,
    band: Band,
    fraction: f64,
}

impl FrequencyMask {
    /// Keeps `round(fraction · H · W)` coefficients ordered by the normalized
    /// anti-diagonal index `u/(H−1) + v/(W−1)`: smallest first for
    /// [`Band::Low`], largest first for [`Band::High`]. Ties go to the
    /// smaller `u`, then the smaller `v`.
    pub fn build(height: usize, width: usize, band: Band, fraction: f64) -> Result<Self> {
        ensure!(height > 0 && width > 0, "mask needs a non-empty shape");
        ensure!(
            fraction.is_finite() && fraction > 0.0 && fraction <= 1.0,
            "mask fraction {fraction} outside (0, 1]"
        );
        let total = height * width;
        let keep = ((fraction * total as f64).round() as usize).min(total);

        // u/(H-1) + v/(W-1), scaled by (H-1)(W-1) so ties compare exactly.
        let du = (width.max(2) - 1) as u64;
        let dv = (height.max(2) - 1) as u64;
        let mut order: Vec<(usize, usize)> = (0..height)
            .flat_map(|u| (0..width).map(move |v| (u, v)))
            .collect();
        let key = |&(u, v): &(usize, usize)| u as u64 * du + v as u64 * dv;
        match band {
            Band::Low => order.sort_by_key(|p| (key(p), p.0, p.1)),
            Band::High => order.sort_by_key(|p| (Reverse(key(p)), p.0, p.1)),
        }

        let mut mask = Array2::zeros((height, width));
        for &(u, v) in &order[..keep] {
            mask[[u, v]] = 1.0;
        }
        Ok(Self {
            mask,
            band,
            fraction,
        })
    }

    /// The mask keeping every coefficient this one drops.
    pub fn complement(&self) -> FrequencyMask {
        let mask = self.mask.mapv(|m| 1.0 - m);
        let fraction = mask.sum() / mask.len() as f64;
        Self {
            mask,
            band: self.band.opposite(),
            fraction,
        }
    }

    pub fn height(&self) -> usize {
        self.mask.nrows()
    }

    pub fn width(&self) -> usize {
        self.mask.ncols()
    }

    pub fn band(&self) -> Band {
        self.band
    }

    pub fn fraction(&self) -> f64 {
        self.fraction
    }

    /// Number of kept coefficients.
    pub fn ones(&self) -> usize {
        self.mask.iter().filter(|&&m| m != 0.0).count()
    }

    pub fn is_kept(&self, u: usize, v: usize) -> bool {
        self.mask[[u, v]] != 0.0
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.mask
    }
}

/// Planned orthonormal 2-D DCT-II and its inverse for one plane size.
#[derive(Clone)]
pub struct Dct2d {
    height: usize,
    width: usize,
    along_rows: Arc<dyn TransformType2And3<f64>>,
    along_cols: Arc<dyn TransformType2And3<f64>>,
}

impl fmt::Debug for Dct2d {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Dct2d")
            .field("height", &self.height)
            .field("width", &self.width)
            .finish()
    }
}

impl Dct2d {
    pub fn new(height: usize, width: usize) -> Self {
        let mut planner = DctPlanner::new();
        Self {
            height,
            width,
            along_rows: planner.plan_dct2(width),
            along_cols: planner.plan_dct2(height),
        }
    }

    pub fn forward(&self, plane: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(plane)?;
        let mut out = plane.to_owned();
        dct_rows(&mut out, self.along_rows.as_ref(), Direction::Forward);
        let mut t = out.t().as_standard_layout().into_owned();
        dct_rows(&mut t, self.along_cols.as_ref(), Direction::Forward);
        Ok(t.t().as_standard_layout().into_owned())
    }

    pub fn inverse(&self, coeffs: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(coeffs)?;
        let mut out = coeffs.to_owned();
        dct_rows(&mut out, self.along_rows.as_ref(), Direction::Inverse);
        let mut t = out.t().as_standard_layout().into_owned();
        dct_rows(&mut t, self.along_cols.as_ref(), Direction::Inverse);
        Ok(t.t().as_standard_layout().into_owned())
    }

    fn check(&self, plane: ArrayView2<f64>) -> Result<()> {
        ensure!(
            plane.dim() == (self.height, self.width),
            "plane is {:?}, transform planned for {}x{}",
            plane.dim(),
            self.height,
            self.width
        );
        ensure!(
            plane.iter().all(|v| v.is_finite()),
            "DCT input contains non-finite values"
        );
        Ok(())
    }
}

#[derive(Clone, Copy)]
enum Direction {
    Forward,
    Inverse,
}

fn dct_rows(data: &mut Array2<f64>, plan: &dyn TransformType2And3<f64>, dir: Direction) {
    let n = data.ncols();
    let dc = (1.0 / n as f64).sqrt();
    let ac = (2.0 / n as f64).sqrt();
    for mut row in data.rows_mut() {
        let row = row.as_slice_mut().expect("standard layout");
        match dir {
            Direction::Forward => {
                plan.process_dct2(row);
                row[0] *= dc;
                row[1..].iter_mut().for_each(|v| *v *= ac);
            }
            Direction::Inverse => {
                // DCT-III computes x_n = X_0 / 2 + sum_k X_k cos(..).
                row[0] *= 2.0 * dc;
                row[1..].iter_mut().for_each(|v| *v *= ac);
                plan.process_dct3(row);
            }
        }
    }
}

/// Orthonormal type-II 2-D DCT of a plane.
pub fn dct2(plane: ArrayView2<f64>) -> Result<Array2<f64>> {
    let (h, w) = plane.dim();
    Dct2d::new(h, w).forward(plane)
}

/// Inverse of [`dct2`].
pub fn idct2(coeffs: ArrayView2<f64>) -> Result<Array2<f64>> {
    let (h, w) = coeffs.dim();
    Dct2d::new(h, w).inverse(coeffs)
}

/// The truncation operator for one mask, with the transform pre-planned.
#[derive(Debug, Clone)]
pub struct BandProjector {
    dct: Dct2d,
    mask: FrequencyMask,
}

impl BandProjector {
    pub fn new(mask: FrequencyMask) -> Self {
        Self {
            dct: Dct2d::new(mask.height(), mask.width()),
            mask,
        }
    }

    pub fn mask(&self) -> &FrequencyMask {
        &self.mask
    }

    /// Applies `IDCT(M ⊙ DCT(·))` to every channel of an `H × W × C` tensor.
    pub fn apply(&self, x: ArrayView3<f64>) -> Result<Array3<f64>> {
        let (h, w, c) = x.dim();
        ensure!(
            (h, w) == (self.mask.height(), self.mask.width()),
            "tensor is {h}x{w}, mask is {}x{}",
            self.mask.height(),
            self.mask.width()
        );
        let mut out = Array3::zeros((h, w, c));
        for ch in 0..c {
            let mut coeffs = self.dct.forward(x.slice(s![.., .., ch]))?;
            coeffs *= self.mask.as_array();
            let plane = self.dct.inverse(coeffs.view())?;
            out.slice_mut(s![.., .., ch]).assign(&plane);
        }
        Ok(out)
    }

    /// `‖T(x) − T(x_adv)‖_F` over all channels.
    pub fn penalty(&self, x: ArrayView3<f64>, x_adv: ArrayView3<f64>) -> Result<f64> {
        Ok(self.penalty_with_grad(x, x_adv)?.0)
    }

    /// The penalty and its gradient with respect to `x_adv`. The gradient is
    /// taken as zero where the penalty itself is zero.
    pub fn penalty_with_grad(
        &self,
        x: ArrayView3<f64>,
        x_adv: ArrayView3<f64>,
    ) -> Result<(f64, Array3<f64>)> {
        ensure!(
            x.dim() == x_adv.dim(),
            "shape mismatch: {:?} vs {:?}",
            x.dim(),
            x_adv.dim()
        );
        let mut diff = Array3::zeros(x.dim());
        Zip::from(&mut diff)
            .and(&x_adv)
            .and(&x)
            .for_each(|d, &a, &b| *d = a - b);
        let mut projected = self.apply(diff.view())?;
        let norm = projected.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            projected /= norm;
        } else {
            projected.fill(0.0);
        }
        Ok((norm, projected))
    }
}

/// Applies the band truncation to every channel of `img`.
pub fn truncate(img: ArrayView3<f64>, mask: &FrequencyMask) -> Result<Array3<f64>> {
    BandProjector::new(mask.clone()).apply(img)
}

/// Imperceptibility penalty `‖T(x) − T(x_adv)‖_F`.
pub fn ic_loss(x: ArrayView3<f64>, x_adv: ArrayView3<f64>, mask: &FrequencyMask) -> Result<f64> {
    BandProjector::new(mask.clone()).penalty(x, x_adv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    /// Direct O(N⁴) evaluation of the orthonormal DCT-II.
    fn dct2_brute(x: &Array2<f64>) -> Array2<f64> {
        let (h, w) = x.dim();
        let a = |k: usize, n: usize| if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        Array2::from_shape_fn((h, w), |(u, v)| {
            let mut acc = 0.0;
            for i in 0..h {
                for j in 0..w {
                    acc += x[[i, j]]
                        * (PI * (2 * i + 1) as f64 * u as f64 / (2 * h) as f64).cos()
                        * (PI * (2 * j + 1) as f64 * v as f64 / (2 * w) as f64).cos();
                }
            }
            a(u, h) * a(v, w) * acc
        })
    }

    fn idct2_brute(c: &Array2<f64>) -> Array2<f64> {
        let (h, w) = c.dim();
        let a = |k: usize, n: usize| if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        Array2::from_shape_fn((h, w), |(i, j)| {
            let mut acc = 0.0;
            for u in 0..h {
                for v in 0..w {
                    acc += a(u, h)
                        * a(v, w)
                        * c[[u, v]]
                        * (PI * (2 * i + 1) as f64 * u as f64 / (2 * h) as f64).cos()
                        * (PI * (2 * j + 1) as f64 * v as f64 / (2 * w) as f64).cos();
                }
            }
            acc
        })
    }

    fn pseudo_random(h: usize, w: usize, seed: u64) -> Array2<f64> {
        let mut state = seed;
        Array2::from_shape_fn((h, w), |_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        })
    }

    #[test]
    fn constant_plane_is_dc_only() {
        let c = 0.37;
        let n = 8;
        let out = dct2(Array2::from_elem((n, n), c).view()).unwrap();
        assert!((out[[0, 0]] - c * n as f64).abs() < 1e-12);
        assert!(out.iter().skip(1).all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn impulse_matches_definition() {
        let mut x = Array2::zeros((4, 4));
        x[[0, 0]] = 1.0;
        let fast = dct2(x.view()).unwrap();
        let slow = dct2_brute(&x);
        for (a, b) in fast.iter().zip(slow.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_and_inverse_match_definition_on_rectangles() {
        for &(h, w) in &[(8, 8), (5, 7), (6, 3), (1, 4)] {
            let x = pseudo_random(h, w, (h * 31 + w) as u64);
            let fast = dct2(x.view()).unwrap();
            let slow = dct2_brute(&x);
            fast.iter().zip(slow.iter()).for_each(|(a, b)| assert!((a - b).abs() < 1e-10));
            let inv = idct2(x.view()).unwrap();
            let inv_slow = idct2_brute(&x);
            inv.iter().zip(inv_slow.iter()).for_each(|(a, b)| assert!((a - b).abs() < 1e-10));
        }
    }

    #[test]
    fn dc_only_coefficients_invert_to_constant() {
        let mut c = Array2::zeros((6, 10));
        c[[0, 0]] = 2.0;
        let plane = idct2(c.view()).unwrap();
        let expect = 2.0 / (60f64).sqrt();
        assert!(plane.iter().all(|v| (v - expect).abs() < 1e-12));
    }

    #[test]
    fn rejects_non_finite() {
        let mut x = Array2::zeros((4, 4));
        x[[1, 2]] = f64::NAN;
        assert!(dct2(x.view()).is_err());
        assert!(idct2(x.view()).is_err());
    }

    #[test]
    fn mask_examples() {
        let m = FrequencyMask::build(8, 8, Band::Low, 0.5).unwrap();
        assert_eq!(m.ones(), 32);
        assert!(m.is_kept(0, 0));

        let m = FrequencyMask::build(2, 2, Band::Low, 0.5).unwrap();
        assert_eq!(m.as_array(), &ndarray::arr2(&[[1.0, 1.0], [0.0, 0.0]]));

        for band in [Band::Low, Band::High] {
            let m = FrequencyMask::build(5, 9, band, 1.0).unwrap();
            assert_eq!(m.ones(), 45);
        }

        let high = FrequencyMask::build(8, 8, Band::High, 0.5).unwrap();
        assert!(!high.is_kept(0, 0));
        assert!(high.is_kept(7, 7));

        assert!(FrequencyMask::build(8, 8, Band::Low, 0.0).is_err());
        assert!(FrequencyMask::build(8, 8, Band::Low, 1.01).is_err());
        assert!(FrequencyMask::build(8, 8, Band::Low, f64::NAN).is_err());
    }

    #[test]
    fn complement_partitions_coefficients() {
        let m = FrequencyMask::build(6, 10, Band::Low, 0.3).unwrap();
        let c = m.complement();
        assert_eq!(m.ones() + c.ones(), 60);
        assert_eq!(c.band(), Band::High);
        assert!((c.fraction() - 42.0 / 60.0).abs() < 1e-12);
    }

    #[test]
    fn truncation_edge_masks() {
        let x = Array3::from_shape_fn((8, 6, 3), |(i, j, k)| ((i * 7 + j * 3 + k) % 11) as f64 / 11.0);
        let all = FrequencyMask::build(8, 6, Band::Low, 1.0).unwrap();
        let same = truncate(x.view(), &all).unwrap();
        same.iter().zip(x.iter()).for_each(|(a, b)| assert!((a - b).abs() < 1e-9));

        let none = all.complement();
        assert!(truncate(x.view(), &none).unwrap().iter().all(|&v| v == 0.0));

        let constant = Array3::from_elem((8, 6, 3), 0.61);
        let low = FrequencyMask::build(8, 6, Band::Low, 0.05).unwrap();
        let out = truncate(constant.view(), &low).unwrap();
        assert!(out.iter().all(|v| (v - 0.61).abs() < 1e-9));

        let wrong = FrequencyMask::build(8, 5, Band::Low, 0.5).unwrap();
        assert!(truncate(x.view(), &wrong).is_err());
    }

    #[test]
    fn penalty_zero_for_identical_inputs() {
        let x = Array3::from_shape_fn((8, 8, 1), |(i, j, _)| (i * j) as f64 / 64.0);
        let mask = FrequencyMask::build(8, 8, Band::Low, 0.5).unwrap();
        assert_eq!(ic_loss(x.view(), x.view(), &mask).unwrap(), 0.0);
        let (v, g) = BandProjector::new(mask)
            .penalty_with_grad(x.view(), x.view())
            .unwrap();
        assert_eq!(v, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn penalty_shape_mismatch() {
        let mask = FrequencyMask::build(8, 8, Band::Low, 0.5).unwrap();
        let a = Array3::zeros((8, 8, 1));
        let b = Array3::zeros((8, 8, 3));
        assert!(ic_loss(a.view(), b.view(), &mask).is_err());
    }
}

//! Convolution, transposed convolution and GDN with explicit backward passes.
//!
//! Activations are `C × H × W`. Convolutions go through im2col and a single
//! matrix product; the transposed convolution is the adjoint of the same
//! column layout, so both share `im2col`/`col2im`.

use ndarray::{Array1, Array2, Array3, Axis};
use rand::Rng;

use super::Real;

/// Geometry of a square-kernel strided convolution with symmetric padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Geometry {
    kernel: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn conv_out(&self, n: usize) -> usize {
        (n + 2 * self.pad - self.kernel) / self.stride + 1
    }
}

/// Unfolds `x` (`C × H × W`) into `(C·k·k) × (oh·ow)` patch columns.
fn im2col<F: Real>(x: &Array3<F>, g: Geometry, oh: usize, ow: usize) -> Array2<F> {
    let (c, h, w) = x.dim();
    let k = g.kernel;
    let src = x.as_slice().expect("standard layout");
    let mut cols = Array2::zeros((c * k * k, oh * ow));
    let dst = cols.as_slice_mut().expect("standard layout");
    let plane = oh * ow;
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let out = &mut dst[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = (ci * h + iy as usize) * w;
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            out[oy * ow + ox] = src[base + ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters columns back onto a `C × H × W` grid.
fn col2im<F: Real>(cols: &Array2<F>, c: usize, h: usize, w: usize, g: Geometry, oh: usize, ow: usize) -> Array3<F> {
    let k = g.kernel;
    let cols = cols.as_standard_layout();
    let src = cols.as_slice().expect("standard layout");
    let mut x = Array3::zeros((c, h, w));
    let dst = x.as_slice_mut().expect("standard layout");
    let plane = oh * ow;
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let col = &src[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = (ci * h + iy as usize) * w;
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[base + ix as usize] += col[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

fn flatten<F: Real>(x: &Array3<F>) -> Array2<F> {
    let (c, h, w) = x.dim();
    x.as_standard_layout()
        .into_owned()
        .into_shape_with_order((c, h * w))
        .expect("contiguous")
}

fn unflatten<F: Real>(x: Array2<F>, h: usize, w: usize) -> Array3<F> {
    let c = x.nrows();
    x.as_standard_layout()
        .into_owned()
        .into_shape_with_order((c, h, w))
        .expect("contiguous")
}

fn add_into<F: Real>(acc: &mut [F], values: impl IntoIterator<Item = F>) {
    acc.iter_mut().zip(values).for_each(|(a, v)| *a += v);
}

fn uniform<F: Real, R: Rng>(rng: &mut R, bound: f64) -> F {
    F::of(rng.gen_range(-bound..bound))
}

/// Strided "same"-padded convolution, `C_in × H × W → C_out × H/s × W/s`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<F> {
    /// `C_out × (C_in·k·k)`.
    pub(crate) weight: Array2<F>,
    pub(crate) bias: Array1<F>,
    geometry: Geometry,
    in_channels: usize,
}

pub(crate) struct ConvCache<F> {
    cols: Array2<F>,
    in_dim: (usize, usize, usize),
}

impl<F: Real> Conv2d<F> {
    pub fn new<R: Rng>(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, rng: &mut R) -> Self {
        let fan_in = (in_channels * kernel * kernel) as f64;
        let bound = (3.0 / fan_in).sqrt();
        let weight = Array2::from_shape_simple_fn((out_channels, in_channels * kernel * kernel), || uniform(rng, bound));
        Self {
            weight,
            bias: Array1::zeros(out_channels),
            geometry: Geometry {
                kernel,
                stride,
                pad: kernel / 2,
            },
            in_channels,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.weight.nrows()
    }

    pub(crate) fn forward(&self, x: &Array3<F>) -> (Array3<F>, ConvCache<F>) {
        let (_, h, w) = x.dim();
        let (oh, ow) = (self.geometry.conv_out(h), self.geometry.conv_out(w));
        let cols = im2col(x, self.geometry, oh, ow);
        let mut out = self.weight.dot(&cols);
        out += &self.bias.view().insert_axis(Axis(1));
        (
            unflatten(out, oh, ow),
            ConvCache {
                cols,
                in_dim: x.dim(),
            },
        )
    }

    pub(crate) fn backward(&self, cache: ConvCache<F>, dy: &Array3<F>, grads: Option<&mut [Vec<F>]>) -> Array3<F> {
        let (_, oh, ow) = dy.dim();
        let dy = flatten(dy);
        if let Some(grads) = grads {
            add_into(&mut grads[0], dy.dot(&cache.cols.t()));
            add_into(&mut grads[1], dy.sum_axis(Axis(1)));
        }
        let dcols = self.weight.t().dot(&dy);
        let (c, h, w) = cache.in_dim;
        col2im(&dcols, c, h, w, self.geometry, oh, ow)
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut [F]> {
        vec![
            self.weight.as_slice_mut().expect("standard layout"),
            self.bias.as_slice_mut().expect("standard layout"),
        ]
    }

    pub(crate) fn params(&self) -> Vec<&[F]> {
        vec![
            self.weight.as_slice().expect("standard layout"),
            self.bias.as_slice().expect("standard layout"),
        ]
    }
}

/// Strided transposed convolution, `C_in × H × W → C_out × sH × sW`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTranspose2d<F> {
    /// `C_in × (C_out·k·k)`.
    pub(crate) weight: Array2<F>,
    pub(crate) bias: Array1<F>,
    geometry: Geometry,
    out_channels: usize,
}

pub(crate) struct DeconvCache<F> {
    input: Array2<F>,
    in_hw: (usize, usize),
}

impl<F: Real> ConvTranspose2d<F> {
    pub fn new<R: Rng>(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, rng: &mut R) -> Self {
        // Each output pixel sees about C_in·k²/s² taps.
        let fan_in = (in_channels * kernel * kernel) as f64 / (stride * stride) as f64;
        let bound = (3.0 / fan_in).sqrt();
        let weight = Array2::from_shape_simple_fn((in_channels, out_channels * kernel * kernel), || uniform(rng, bound));
        Self {
            weight,
            bias: Array1::zeros(out_channels),
            geometry: Geometry {
                kernel,
                stride,
                pad: kernel / 2,
            },
            out_channels,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.nrows()
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub(crate) fn forward(&self, x: &Array3<F>) -> (Array3<F>, DeconvCache<F>) {
        let (_, h, w) = x.dim();
        let s = self.geometry.stride;
        let (oh, ow) = (h * s, w * s);
        let input = flatten(x);
        let cols = self.weight.t().dot(&input);
        let mut out = col2im(&cols, self.out_channels, oh, ow, self.geometry, h, w);
        for (mut plane, &b) in out.outer_iter_mut().zip(self.bias.iter()) {
            plane += b;
        }
        (out, DeconvCache { input, in_hw: (h, w) })
    }

    pub(crate) fn backward(&self, cache: DeconvCache<F>, dy: &Array3<F>, grads: Option<&mut [Vec<F>]>) -> Array3<F> {
        let (h, w) = cache.in_hw;
        let dcols = im2col(dy, self.geometry, h, w);
        if let Some(grads) = grads {
            add_into(&mut grads[0], cache.input.dot(&dcols.t()));
            add_into(&mut grads[1], dy.sum_axis(Axis(2)).sum_axis(Axis(1)));
        }
        unflatten(self.weight.dot(&dcols), h, w)
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut [F]> {
        vec![
            self.weight.as_slice_mut().expect("standard layout"),
            self.bias.as_slice_mut().expect("standard layout"),
        ]
    }

    pub(crate) fn params(&self) -> Vec<&[F]> {
        vec![
            self.weight.as_slice().expect("standard layout"),
            self.bias.as_slice().expect("standard layout"),
        ]
    }
}

/// Generalized divisive normalization, `y_i = x_i / sqrt(β_i + Σ_j γ_ij x_j²)`,
/// or its inverse `y_i = x_i · sqrt(..)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gdn<F> {
    pub(crate) beta: Array1<F>,
    /// `C × C`, row `i` weighs the squared inputs feeding channel `i`.
    pub(crate) gamma: Array2<F>,
    inverse: bool,
}

pub(crate) struct GdnCache<F> {
    x: Array2<F>,
    norm: Array2<F>,
    hw: (usize, usize),
}

impl<F: Real> Gdn<F> {
    pub const BETA_MIN: f64 = 1e-6;

    pub fn new(channels: usize, inverse: bool) -> Self {
        Self {
            beta: Array1::ones(channels),
            gamma: Array2::eye(channels) * F::of(0.1),
            inverse,
        }
    }

    pub fn is_inverse(&self) -> bool {
        self.inverse
    }

    pub(crate) fn forward(&self, x: &Array3<F>) -> (Array3<F>, GdnCache<F>) {
        let (_, h, w) = x.dim();
        let x = flatten(x);
        let mut norm = self.gamma.dot(&x.mapv(|v| v * v));
        norm += &self.beta.view().insert_axis(Axis(1));
        norm.mapv_inplace(|v| v.sqrt());
        let y = if self.inverse { &x * &norm } else { &x / &norm };
        (unflatten(y, h, w), GdnCache { x, norm, hw: (h, w) })
    }

    pub(crate) fn backward(&self, cache: GdnCache<F>, dy: &Array3<F>, grads: Option<&mut [Vec<F>]>) -> Array3<F> {
        let GdnCache { x, norm, hw } = cache;
        let g = flatten(dy);
        let half = F::of(0.5);
        // d(loss)/d(norm²) and the direct term through x.
        let (dn, direct) = if self.inverse {
            // y = x·s, dy/dn = x / (2s)
            (&g * &x / &norm * half, &g * &norm)
        } else {
            // y = x / s, dy/dn = −x / (2s³)
            let s3 = norm.mapv(|s| s * s * s);
            (-(&g * &x / &s3) * half, &g / &norm)
        };
        if let Some(grads) = grads {
            add_into(&mut grads[0], dn.sum_axis(Axis(1)));
            add_into(&mut grads[1], dn.dot(&x.mapv(|v| v * v).t()));
        }
        let back = self.gamma.t().dot(&dn);
        let dx = direct + &(&back * &x * F::of(2.0));
        unflatten(dx, hw.0, hw.1)
    }

    /// Keeps `β > 0` and `γ ≥ 0` after an optimizer step.
    pub(crate) fn project(&mut self) {
        let floor = F::of(Self::BETA_MIN);
        self.beta.mapv_inplace(|b| b.max(floor));
        self.gamma.mapv_inplace(|g| g.max(F::zero()));
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut [F]> {
        vec![
            self.beta.as_slice_mut().expect("standard layout"),
            self.gamma.as_slice_mut().expect("standard layout"),
        ]
    }

    pub(crate) fn params(&self) -> Vec<&[F]> {
        vec![
            self.beta.as_slice().expect("standard layout"),
            self.gamma.as_slice().expect("standard layout"),
        ]
    }
}

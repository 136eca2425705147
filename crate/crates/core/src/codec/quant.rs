use std::fmt;
use std::str::FromStr;

use ndarray::{Array, ArrayView, Dimension, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Real;
use crate::error::{ensure, Error, Result};

/// Latent quantization applied between the analysis and synthesis transforms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantizer {
    /// Round half away from zero. No usable gradient.
    Hard,
    /// `round(y) + (y − round(y))³`, derivative `3(y − round(y))²`.
    Cubic,
    /// Hard rounding forward, identity backward.
    StraightThrough,
    /// `y + u`, `u ~ U(−0.5, 0.5)` drawn from `seed`; identity backward.
    Noise { seed: u64 },
}

/// Differentiable quantizer choice as exposed in configs and on the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum QuantizerKind {
    #[default]
    Cubic,
    Ste,
    Noise,
}

impl QuantizerKind {
    /// The concrete quantizer for one evaluation; `seed` only matters for noise.
    pub fn instantiate(self, seed: u64) -> Quantizer {
        match self {
            QuantizerKind::Cubic => Quantizer::Cubic,
            QuantizerKind::Ste => Quantizer::StraightThrough,
            QuantizerKind::Noise => Quantizer::Noise { seed },
        }
    }
}

impl fmt::Display for QuantizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QuantizerKind::Cubic => "cubic",
            QuantizerKind::Ste => "ste",
            QuantizerKind::Noise => "noise",
        })
    }
}

impl FromStr for QuantizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cubic" => Ok(QuantizerKind::Cubic),
            "ste" => Ok(QuantizerKind::Ste),
            "noise" => Ok(QuantizerKind::Noise),
            other => Err(Error::invalid(format!("unknown quantizer '{other}'"))),
        }
    }
}

impl Quantizer {
    /// Forward values and element-wise derivative `dŷ/dy`.
    pub fn apply<F: Real, D: Dimension>(self, y: ArrayView<F, D>) -> (Array<F, D>, Array<F, D>) {
        let three = F::of(3.0);
        match self {
            Quantizer::Hard => (y.mapv(|v| v.round()), Array::zeros(y.raw_dim())),
            Quantizer::Cubic => {
                let mut out = Array::zeros(y.raw_dim());
                let mut grad = Array::zeros(y.raw_dim());
                Zip::from(&mut out).and(&mut grad).and(&y).for_each(|o, g, &v| {
                    let r = v.round();
                    let res = v - r;
                    *o = r + res * res * res;
                    *g = three * res * res;
                });
                (out, grad)
            }
            Quantizer::StraightThrough => (y.mapv(|v| v.round()), Array::ones(y.raw_dim())),
            Quantizer::Noise { seed } => {
                let noise = uniform_noise::<F, D>(y.raw_dim(), seed);
                (&y + &noise, Array::ones(y.raw_dim()))
            }
        }
    }

    pub fn is_differentiable(self) -> bool {
        !matches!(self, Quantizer::Hard)
    }
}

/// Deterministic `U(−0.5, 0.5)` noise, filled in logical element order.
pub(crate) fn uniform_noise<F: Real, D: Dimension>(dim: D, seed: u64) -> Array<F, D> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Array::zeros(dim);
    out.iter_mut()
        .for_each(|v| *v = F::of(rng.gen_range(-0.5..0.5)));
    out
}

/// Element-wise rounding to the nearest integer, ties away from zero.
pub fn quantize_hard<D: Dimension>(y: ArrayView<f64, D>) -> Result<Array<f64, D>> {
    ensure!(
        y.iter().all(|v| v.is_finite()),
        "latent contains non-finite values"
    );
    Ok(Quantizer::Hard.apply(y).0)
}

/// Cubic rounding surrogate: forward values and derivative.
pub fn quantize_diff<D: Dimension>(y: ArrayView<f64, D>) -> Result<(Array<f64, D>, Array<f64, D>)> {
    ensure!(
        y.iter().all(|v| v.is_finite()),
        "latent contains non-finite values"
    );
    Ok(Quantizer::Cubic.apply(y))
}

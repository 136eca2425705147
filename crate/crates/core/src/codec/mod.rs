//! Learned image codec: analysis transform, quantizer, synthesis transform.
//!
//! Only the `g_s(Q(g_a(x)))` path is modelled; no bitstream is produced. The
//! [`RateProxy`] stands in for the entropy model during training.

mod checkpoint;
mod layers;
mod model;
mod quant;
mod rate;
mod train;

use std::fmt::Debug;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{Array3, ArrayView3};

use crate::error::{ensure, Result};
use crate::imaging::ImageTensor;

pub use checkpoint::CHECKPOINT_FORMAT_VERSION;
pub use layers::{Conv2d, ConvTranspose2d, Gdn};
pub use model::{CodecMeta, CodecModel, ARCHITECTURE_FACTORIZED};
pub use quant::{quantize_diff, quantize_hard, Quantizer, QuantizerKind};
pub use rate::RateProxy;
pub use train::{train_codec, training_mse, TrainOptions, TrainReport};

/// Floating-point element type the network layers are generic over.
pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + std::iter::Sum
    + Debug
    + Send
    + Sync
    + 'static
{
    fn of(v: f64) -> Self {
        <Self as num_traits::FromPrimitive>::from_f64(v).expect("representable")
    }

    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("representable")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Maps the upstream gradient with respect to the reconstruction back to a
/// gradient with respect to the codec input. Both are `H × W × C`.
pub type Pullback<'a> = Box<dyn FnOnce(ArrayView3<f64>) -> Result<Array3<f64>> + Send + 'a>;

/// Anything usable as the victim `g_s ∘ Q ∘ g_a` of an attack.
///
/// Tensors crossing this boundary are `H × W × C` in `f64`.
pub trait Codec: Send + Sync {
    /// Spatial downsampling factor of the analysis transform.
    fn stride(&self) -> usize;

    /// Number of image channels accepted.
    fn image_channels(&self) -> usize;

    /// `g_s(Q(g_a(x)))`, unclipped.
    fn reconstruct(&self, x: ArrayView3<f64>, quantizer: Quantizer) -> Result<Array3<f64>>;

    /// Like [`Codec::reconstruct`], also returning the vector-Jacobian product
    /// of the composition. Fails for [`Quantizer::Hard`].
    fn reconstruct_with_pullback<'a>(
        &'a self,
        x: ArrayView3<f64>,
        quantizer: Quantizer,
    ) -> Result<(Array3<f64>, Pullback<'a>)>;

    fn check_input(&self, x: ArrayView3<f64>) -> Result<()> {
        let (h, w, c) = x.dim();
        let s = self.stride();
        ensure!(
            h % s == 0 && w % s == 0,
            "{h}x{w} input not divisible by codec stride {s}"
        );
        ensure!(
            c == self.image_channels(),
            "input has {c} channels, codec expects {}",
            self.image_channels()
        );
        Ok(())
    }
}

/// Reconstruction is the input itself. Used to check attack mechanics
/// against closed-form optima.
#[derive(Debug, Clone, Copy)]
pub struct IdentityCodec {
    pub channels: usize,
}

impl Codec for IdentityCodec {
    fn stride(&self) -> usize {
        1
    }

    fn image_channels(&self) -> usize {
        self.channels
    }

    fn reconstruct(&self, x: ArrayView3<f64>, _: Quantizer) -> Result<Array3<f64>> {
        self.check_input(x)?;
        Ok(x.to_owned())
    }

    fn reconstruct_with_pullback<'a>(
        &'a self,
        x: ArrayView3<f64>,
        _: Quantizer,
    ) -> Result<(Array3<f64>, Pullback<'a>)> {
        self.check_input(x)?;
        Ok((x.to_owned(), Box::new(|g| Ok(g.to_owned()))))
    }
}

/// Runs `x` through the codec with the given quantizer.
pub fn codec_forward(codec: &dyn Codec, x: &ImageTensor, quantizer: Quantizer) -> Result<Array3<f64>> {
    codec.reconstruct(x.view(), quantizer)
}

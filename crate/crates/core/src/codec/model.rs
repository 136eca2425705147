use ndarray::{Array3, ArrayView3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Conv2d, ConvCache, ConvTranspose2d, DeconvCache, Gdn, GdnCache};
use super::rate::RateProxy;
use super::{Codec, Pullback, Quantizer, Real};
use crate::error::{ensure, Error, Result};

/// Architecture id of the factorized-prior autoencoder.
pub const ARCHITECTURE_FACTORIZED: &str = "factorized";

const KERNEL: usize = 5;

/// Everything needed to rebuild a model's shape, plus training provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecMeta {
    pub architecture: String,
    /// Rate-distortion trade-off the model was trained with.
    pub lambda: f64,
    pub seed: u64,
    pub train_steps: usize,
    pub image_channels: usize,
    /// Width of the hidden layers.
    pub channels: usize,
    pub latent_channels: usize,
    /// Number of stride-2 stages; the codec stride is `2^depth`.
    pub depth: usize,
    /// Convolutions per transform: `depth` strided ones followed by
    /// `layers − depth` stride-1 ones (mirrored in the synthesis).
    pub layers: usize,
}

impl CodecMeta {
    pub fn factorized(lambda: f64, seed: u64, channels: usize, latent_channels: usize, depth: usize) -> Self {
        Self {
            architecture: ARCHITECTURE_FACTORIZED.to_owned(),
            lambda,
            seed,
            train_steps: 0,
            image_channels: 3,
            channels,
            latent_channels,
            depth,
            layers: depth,
        }
    }

    /// Same model with `layers` convolutions per transform.
    pub fn with_layers(self, layers: usize) -> Self {
        Self { layers, ..self }
    }

    pub fn stride(&self) -> usize {
        1 << self.depth
    }

    pub(crate) fn validate(&self) -> Result<()> {
        ensure!(
            self.architecture == ARCHITECTURE_FACTORIZED,
            "unknown architecture '{}'",
            self.architecture
        );
        ensure!(
            self.lambda.is_finite() && self.lambda > 0.0,
            "lambda must be positive, got {}",
            self.lambda
        );
        ensure!(
            (2..=4).contains(&self.depth),
            "depth {} gives a stride outside {{4, 8, 16}}",
            self.depth
        );
        ensure!(
            (self.depth..=self.depth + 2).contains(&self.layers),
            "{} layers for depth {}: at most two stride-1 layers may follow the strided ones",
            self.layers,
            self.depth
        );
        ensure!(
            self.channels > 0 && self.latent_channels > 0,
            "channel counts must be positive"
        );
        ensure!(
            self.image_channels == 1 || self.image_channels == 3,
            "image channels must be 1 or 3"
        );
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Layer<F> {
    Conv(Conv2d<F>),
    Deconv(ConvTranspose2d<F>),
    Gdn(Gdn<F>),
}

pub(crate) enum Cache<F> {
    Conv(ConvCache<F>),
    Deconv(DeconvCache<F>),
    Gdn(GdnCache<F>),
}

impl<F: Real> Layer<F> {
    fn forward(&self, x: &Array3<F>) -> (Array3<F>, Cache<F>) {
        match self {
            Layer::Conv(l) => {
                let (y, c) = l.forward(x);
                (y, Cache::Conv(c))
            }
            Layer::Deconv(l) => {
                let (y, c) = l.forward(x);
                (y, Cache::Deconv(c))
            }
            Layer::Gdn(l) => {
                let (y, c) = l.forward(x);
                (y, Cache::Gdn(c))
            }
        }
    }

    fn backward(&self, cache: Cache<F>, dy: &Array3<F>, grads: Option<&mut [Vec<F>]>) -> Array3<F> {
        match (self, cache) {
            (Layer::Conv(l), Cache::Conv(c)) => l.backward(c, dy, grads),
            (Layer::Deconv(l), Cache::Deconv(c)) => l.backward(c, dy, grads),
            (Layer::Gdn(l), Cache::Gdn(c)) => l.backward(c, dy, grads),
            _ => unreachable!("cache does not belong to this layer"),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut [F]> {
        match self {
            Layer::Conv(l) => l.params_mut(),
            Layer::Deconv(l) => l.params_mut(),
            Layer::Gdn(l) => l.params_mut(),
        }
    }

    fn params(&self) -> Vec<&[F]> {
        match self {
            Layer::Conv(l) => l.params(),
            Layer::Deconv(l) => l.params(),
            Layer::Gdn(l) => l.params(),
        }
    }

    fn project(&mut self) {
        if let Layer::Gdn(g) = self {
            g.project();
        }
    }
}

/// Per-parameter gradient buffers, in [`CodecModel::params`] order.
pub(crate) type Grads<F> = Vec<Vec<F>>;

/// Intermediate state of a forward pass, consumed by the backward pass.
pub(crate) struct Tape<F> {
    analysis: Vec<Cache<F>>,
    synthesis: Vec<Cache<F>>,
}

/// Factorized-prior convolutional autoencoder.
///
/// Analysis: `layers` × (5×5 conv, GDN) with the last GDN omitted; the first
/// `depth` convs have stride 2, the rest stride 1. Synthesis mirrors it with
/// transposed convs and inverse GDN.
#[derive(Debug, Clone, PartialEq)]
pub struct CodecModel<F = f32> {
    meta: CodecMeta,
    analysis: Vec<Layer<F>>,
    synthesis: Vec<Layer<F>>,
    rate: RateProxy<F>,
}

impl<F: Real> CodecModel<F> {
    /// Randomly initialized model, deterministic in `meta.seed`.
    pub fn new(meta: CodecMeta) -> Result<Self> {
        meta.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(meta.seed);
        let (n, m, layers) = (meta.channels, meta.latent_channels, meta.layers);
        let stride = |layer: usize| if layer < meta.depth { 2 } else { 1 };

        let mut analysis = Vec::new();
        for layer in 0..layers {
            let cin = if layer == 0 { meta.image_channels } else { n };
            let cout = if layer + 1 == layers { m } else { n };
            analysis.push(Layer::Conv(Conv2d::new(cin, cout, KERNEL, stride(layer), &mut rng)));
            if layer + 1 < layers {
                analysis.push(Layer::Gdn(Gdn::new(cout, false)));
            }
        }
        let mut synthesis = Vec::new();
        for layer in 0..layers {
            let cin = if layer == 0 { m } else { n };
            let cout = if layer + 1 == layers { meta.image_channels } else { n };
            let s = stride(layers - 1 - layer);
            synthesis.push(Layer::Deconv(ConvTranspose2d::new(cin, cout, KERNEL, s, &mut rng)));
            if layer + 1 < layers {
                synthesis.push(Layer::Gdn(Gdn::new(cout, true)));
            }
        }
        Ok(Self {
            rate: RateProxy::new(m),
            meta,
            analysis,
            synthesis,
        })
    }

    pub fn meta(&self) -> &CodecMeta {
        &self.meta
    }

    pub(crate) fn meta_mut(&mut self) -> &mut CodecMeta {
        &mut self.meta
    }

    pub fn lambda(&self) -> f64 {
        self.meta.lambda
    }

    pub fn architecture(&self) -> &str {
        &self.meta.architecture
    }

    pub fn rate_proxy(&self) -> &RateProxy<F> {
        &self.rate
    }

    /// `g_a`: image (`C × H × W`) to latent.
    pub fn analyze(&self, x: &Array3<F>) -> Array3<F> {
        self.analysis
            .iter()
            .fold(x.clone(), |acc, layer| layer.forward(&acc).0)
    }

    /// `g_s`: latent to image (`C × H × W`), unclipped.
    pub fn synthesize(&self, y: &Array3<F>) -> Array3<F> {
        self.synthesis
            .iter()
            .fold(y.clone(), |acc, layer| layer.forward(&acc).0)
    }

    pub(crate) fn analyze_taped(&self, x: &Array3<F>) -> (Array3<F>, Vec<Cache<F>>) {
        run_taped(&self.analysis, x)
    }

    pub(crate) fn synthesize_taped(&self, y: &Array3<F>) -> (Array3<F>, Vec<Cache<F>>) {
        run_taped(&self.synthesis, y)
    }

    /// Backward through `g_s`; parameter gradients go to the synthesis slots
    /// of `grads` when given.
    pub(crate) fn synthesis_backward(&self, caches: Vec<Cache<F>>, dy: Array3<F>, grads: Option<&mut Grads<F>>) -> Array3<F> {
        let offset = self.analysis_param_count();
        run_backward(&self.synthesis, caches, dy, grads.map(|g| &mut g[offset..]))
    }

    pub(crate) fn analysis_backward(&self, caches: Vec<Cache<F>>, dy: Array3<F>, grads: Option<&mut Grads<F>>) -> Array3<F> {
        run_backward(&self.analysis, caches, dy, grads.map(|g| &mut g[..]))
    }

    fn analysis_param_count(&self) -> usize {
        self.analysis.iter().map(|l| l.params().len()).sum()
    }

    /// Parameter tensors as flat slices: analysis, synthesis, then rate proxy.
    pub(crate) fn params(&self) -> Vec<&[F]> {
        self.analysis
            .iter()
            .chain(self.synthesis.iter())
            .flat_map(|l| l.params())
            .chain(self.rate.params())
            .collect()
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut [F]> {
        let mut out: Vec<&mut [F]> = Vec::new();
        for layer in self.analysis.iter_mut().chain(self.synthesis.iter_mut()) {
            out.extend(layer.params_mut());
        }
        out.extend(self.rate.params_mut());
        out
    }

    /// Names matching [`CodecModel::params`], for checkpoints and debugging.
    pub(crate) fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (prefix, stack) in [("g_a", &self.analysis), ("g_s", &self.synthesis)] {
            for (i, layer) in stack.iter().enumerate() {
                let parts: &[&str] = match layer {
                    Layer::Gdn(_) => &["beta", "gamma"],
                    _ => &["weight", "bias"],
                };
                names.extend(parts.iter().map(|p| format!("{prefix}.{i}.{p}")));
            }
        }
        names.push("rate.loc".into());
        names.push("rate.log_scale".into());
        names
    }

    pub(crate) fn zero_grads(&self) -> Grads<F> {
        self.params()
            .iter()
            .map(|p| vec![F::zero(); p.len()])
            .collect()
    }

    pub(crate) fn project_params(&mut self) {
        self.analysis
            .iter_mut()
            .chain(self.synthesis.iter_mut())
            .for_each(Layer::project);
    }

    /// Converts every parameter to another float type.
    pub fn cast<G: Real>(&self) -> CodecModel<G> {
        let mut out = CodecModel::<G>::new(self.meta.clone()).expect("meta already validated");
        for (dst, src) in out.params_mut().into_iter().zip(self.params()) {
            dst.iter_mut()
                .zip(src)
                .for_each(|(d, &s)| *d = G::of(s.as_f64()));
        }
        out
    }

    /// `g_s(Q(g_a(x)))` on a `C × H × W` array.
    pub fn forward_chw(&self, x: &Array3<F>, quantizer: Quantizer) -> Array3<F> {
        let y = self.analyze(x);
        let (y_hat, _) = quantizer.apply(y.view());
        self.synthesize(&y_hat)
    }

    pub(crate) fn forward_taped(&self, x: &Array3<F>, quantizer: Quantizer) -> (Array3<F>, Array3<F>, Tape<F>) {
        let (y, analysis) = self.analyze_taped(x);
        let (y_hat, dq) = quantizer.apply(y.view());
        let (x_hat, synthesis) = self.synthesize_taped(&y_hat);
        (x_hat, dq, Tape { analysis, synthesis })
    }

    pub(crate) fn backward_taped(&self, tape: Tape<F>, dq: &Array3<F>, dx_hat: Array3<F>) -> Array3<F> {
        let dy_hat = self.synthesis_backward(tape.synthesis, dx_hat, None);
        let dy = dy_hat * dq;
        self.analysis_backward(tape.analysis, dy, None)
    }
}

fn run_taped<F: Real>(layers: &[Layer<F>], x: &Array3<F>) -> (Array3<F>, Vec<Cache<F>>) {
    let mut caches = Vec::with_capacity(layers.len());
    let mut acc = x.clone();
    for layer in layers {
        let (next, cache) = layer.forward(&acc);
        caches.push(cache);
        acc = next;
    }
    (acc, caches)
}

fn run_backward<F: Real>(layers: &[Layer<F>], caches: Vec<Cache<F>>, dy: Array3<F>, mut grads: Option<&mut [Vec<F>]>) -> Array3<F> {
    let mut offsets = Vec::with_capacity(layers.len());
    let mut acc = 0;
    for layer in layers {
        offsets.push(acc);
        acc += layer.params().len();
    }
    let mut grad = dy;
    for ((layer, cache), &off) in layers.iter().zip(caches).zip(&offsets).rev() {
        let n = layer.params().len();
        let slot = grads.as_deref_mut().map(|g| &mut g[off..off + n]);
        grad = layer.backward(cache, &grad, slot);
    }
    grad
}

/// `H × W × C` f64 to `C × H × W` in the model's float type.
pub(crate) fn to_chw<F: Real>(x: ArrayView3<f64>) -> Array3<F> {
    x.permuted_axes([2, 0, 1])
        .mapv(F::of)
        .as_standard_layout()
        .into_owned()
}

pub(crate) fn to_hwc<F: Real>(x: &Array3<F>) -> Array3<f64> {
    x.view()
        .permuted_axes([1, 2, 0])
        .mapv(|v| v.as_f64())
        .as_standard_layout()
        .into_owned()
}

impl<F: Real> Codec for CodecModel<F> {
    fn stride(&self) -> usize {
        self.meta.stride()
    }

    fn image_channels(&self) -> usize {
        self.meta.image_channels
    }

    fn reconstruct(&self, x: ArrayView3<f64>, quantizer: Quantizer) -> Result<Array3<f64>> {
        self.check_input(x)?;
        let out = self.forward_chw(&to_chw(x), quantizer);
        ensure!(
            out.iter().all(|v| v.is_finite()),
            "decoder produced non-finite output"
        );
        Ok(to_hwc(&out))
    }

    fn reconstruct_with_pullback<'a>(
        &'a self,
        x: ArrayView3<f64>,
        quantizer: Quantizer,
    ) -> Result<(Array3<f64>, Pullback<'a>)> {
        self.check_input(x)?;
        if !quantizer.is_differentiable() {
            return Err(Error::invalid(
                "hard quantization has no gradient; use a differentiable quantizer",
            ));
        }
        let (x_hat, dq, tape) = self.forward_taped(&to_chw(x), quantizer);
        ensure!(
            x_hat.iter().all(|v| v.is_finite()),
            "decoder produced non-finite output"
        );
        let pullback: Pullback<'a> = Box::new(move |upstream: ArrayView3<f64>| {
            let dx = self.backward_taped(tape, &dq, to_chw(upstream));
            Ok(to_hwc(&dx))
        });
        Ok((to_hwc(&x_hat), pullback))
    }
}

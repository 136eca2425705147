use log::info;
use ndarray::{s, Array3, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{to_chw, CodecMeta, CodecModel, Grads};
use super::quant::uniform_noise;
use super::{Quantizer, Real};
use crate::error::{ensure, Error, Result};
use crate::imaging::ImageTensor;

/// Rate-distortion training setup. The objective per patch is
/// `bits / pixels + λ · 255² · MSE`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub lambda: f64,
    pub steps: usize,
    pub seed: u64,
    pub patch_size: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Global gradient-norm clip; `0` disables clipping.
    pub grad_clip: f64,
    /// Fraction of `steps` after which the learning rate drops tenfold.
    pub decay_after: f64,
    pub channels: usize,
    pub latent_channels: usize,
    pub depth: usize,
    /// Convolutions per transform, see [`CodecMeta::layers`].
    pub layers: usize,
}

impl TrainOptions {
    pub fn new(lambda: f64, steps: usize, seed: u64) -> Self {
        Self {
            lambda,
            steps,
            seed,
            patch_size: 64,
            batch_size: 8,
            learning_rate: 1e-3,
            grad_clip: 1.0,
            decay_after: 0.8,
            channels: 32,
            latent_channels: 64,
            depth: 3,
            layers: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Hard-quantized reconstruction MSE on the training images before training.
    pub initial_mse: f64,
    pub final_mse: f64,
    /// Mean objective of each step's batch.
    pub losses: Vec<f64>,
}

struct Adam<F> {
    lr: f64,
    step: i32,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Real> Adam<F> {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(lr: f64, shapes: &Grads<F>) -> Self {
        let zeros: Vec<Vec<F>> = shapes.iter().map(|g| vec![F::zero(); g.len()]).collect();
        Self {
            lr,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    fn update(&mut self, params: Vec<&mut [F]>, grads: &Grads<F>) {
        self.step += 1;
        let (b1, b2) = (F::of(Self::BETA1), F::of(Self::BETA2));
        let c1 = 1.0 - Self::BETA1.powi(self.step);
        let c2 = 1.0 - Self::BETA2.powi(self.step);
        let step_size = F::of(self.lr * c2.sqrt() / c1);
        let eps = F::of(Self::EPS * c2.sqrt());
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (F::one() - b1) * g;
                *v = b2 * *v + (F::one() - b2) * g * g;
                *p -= step_size * *m / (v.sqrt() + eps);
            }
        }
    }
}

/// Largest centered crop of at most `limit` per side that the codec stride divides.
fn eval_crop(img: &ImageTensor, stride: usize, limit: usize) -> Result<ImageTensor> {
    let h = img.height().min(limit) / stride * stride;
    let w = img.width().min(limit) / stride * stride;
    img.center_crop(h, w)
}

/// Mean hard-quantized reconstruction MSE (clipped output) over centered
/// crops of at most 256×256.
pub fn training_mse<F: Real>(model: &CodecModel<F>, dataset: &[ImageTensor]) -> Result<f64> {
    ensure!(!dataset.is_empty(), "dataset is empty");
    let mut total = 0.0;
    for img in dataset {
        let crop = eval_crop(img, model.meta().stride(), 256)?;
        let x = to_chw::<F>(crop.view());
        let out = model.forward_chw(&x, Quantizer::Hard);
        let mut sse = 0.0;
        Zip::from(&x).and(&out).for_each(|&a, &b| {
            let d = a.as_f64() - b.as_f64().clamp(0.0, 1.0);
            sse += d * d;
        });
        total += sse / x.len() as f64;
    }
    Ok(total / dataset.len() as f64)
}

fn random_patch<R: Rng>(img: &ImageTensor, size: usize, rng: &mut R) -> Array3<f32> {
    let top = rng.gen_range(0..=img.height() - size);
    let left = rng.gen_range(0..=img.width() - size);
    let flip = rng.gen_bool(0.5);
    let mut patch = img
        .view()
        .slice(s![top..top + size, left..left + size, ..])
        .to_owned();
    if flip {
        patch.invert_axis(ndarray::Axis(1));
    }
    to_chw(patch.view())
}

/// Trains a factorized codec with Adam on random patches.
///
/// Latents are perturbed with uniform noise during training. The whole run is
/// a pure function of `dataset` and `opts`.
pub fn train_codec(dataset: &[ImageTensor], opts: &TrainOptions) -> Result<(CodecModel<f32>, TrainReport)> {
    ensure!(!dataset.is_empty(), "training dataset is empty");
    ensure!(opts.batch_size > 0, "batch size must be positive");
    ensure!(
        opts.learning_rate.is_finite() && opts.learning_rate > 0.0,
        "learning rate must be positive"
    );
    ensure!(
        opts.grad_clip.is_finite() && opts.grad_clip >= 0.0,
        "gradient clip must be non-negative"
    );
    ensure!(
        (0.0..=1.0).contains(&opts.decay_after),
        "decay point must be a fraction of the steps"
    );
    let channels = dataset[0].channels();
    ensure!(
        dataset.iter().all(|img| img.channels() == channels),
        "training images mix channel counts"
    );
    let mut meta = CodecMeta::factorized(opts.lambda, opts.seed, opts.channels, opts.latent_channels, opts.depth)
        .with_layers(opts.layers);
    meta.image_channels = channels;
    let mut model = CodecModel::<f32>::new(meta)?;
    let stride = model.meta().stride();
    ensure!(
        opts.patch_size > 0 && opts.patch_size % stride == 0,
        "patch size {} must be a positive multiple of the stride {stride}",
        opts.patch_size
    );
    ensure!(
        dataset
            .iter()
            .all(|img| img.height() >= opts.patch_size && img.width() >= opts.patch_size),
        "every training image must fit a {0}x{0} patch",
        opts.patch_size
    );

    let initial_mse = training_mse(&model, dataset)?;
    let mut losses = Vec::with_capacity(opts.steps);
    if opts.steps == 0 {
        return Ok((
            model,
            TrainReport {
                initial_mse,
                final_mse: initial_mse,
                losses,
            },
        ));
    }

    // Separate streams so changing the batch recipe leaves init untouched.
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed_da7a);
    let mut adam = Adam::new(opts.learning_rate, &model.zero_grads());
    let distortion_weight = opts.lambda * 255.0 * 255.0;
    let pixels = (opts.patch_size * opts.patch_size) as f64;
    let batch = opts.batch_size as f64;

    for step in 0..opts.steps {
        let mut grads = model.zero_grads();
        let mut step_loss = 0.0;
        for _ in 0..opts.batch_size {
            let img = &dataset[rng.gen_range(0..dataset.len())];
            let x = random_patch(img, opts.patch_size, &mut rng);

            let (y, analysis) = model.analyze_taped(&x);
            let y_hat = &y + &uniform_noise::<f32, _>(y.raw_dim(), rng.gen());
            let (x_hat, synthesis) = model.synthesize_taped(&y_hat);

            let n = x.len() as f64;
            let diff = &x_hat - &x;
            let mse = diff.iter().map(|&d| f64::from(d) * f64::from(d)).sum::<f64>() / n;
            let rate = model.rate_proxy().evaluate(&y_hat);
            let loss = rate.bits / pixels + distortion_weight * mse;
            if !loss.is_finite() {
                return Err(Error::Training {
                    step,
                    detail: format!("objective is {loss} (bits {}, mse {mse})", rate.bits),
                });
            }
            step_loss += loss / batch;

            let dx_hat = diff.mapv(|d| d * (2.0 * distortion_weight / n / batch) as f32);
            let mut dy = model.synthesis_backward(synthesis, dx_hat, Some(&mut grads));
            let rate_scale = (1.0 / pixels / batch) as f32;
            dy.scaled_add(rate_scale, &rate.grad_latent);
            model.analysis_backward(analysis, dy, Some(&mut grads));

            let k = grads.len();
            grads[k - 2]
                .iter_mut()
                .zip(rate.grad_loc.iter())
                .for_each(|(g, &r)| *g += r * rate_scale);
            grads[k - 1]
                .iter_mut()
                .zip(rate.grad_log_scale.iter())
                .for_each(|(g, &r)| *g += r * rate_scale);
        }
        if let Some(bad) = grads.iter().flatten().find(|g| !g.is_finite()) {
            return Err(Error::Training {
                step,
                detail: format!("gradient contains {bad}"),
            });
        }
        if opts.grad_clip > 0.0 {
            let norm = grads
                .iter()
                .flatten()
                .map(|&g| f64::from(g) * f64::from(g))
                .sum::<f64>()
                .sqrt();
            if norm > opts.grad_clip {
                let scale = (opts.grad_clip / norm) as f32;
                grads.iter_mut().flatten().for_each(|g| *g *= scale);
            }
        }
        if step as f64 >= opts.decay_after * opts.steps as f64 {
            adam.lr = opts.learning_rate * 0.1;
        }
        adam.update(model.params_mut(), &grads);
        model.project_params();
        losses.push(step_loss);
        if (step + 1) % 100 == 0 || step + 1 == opts.steps {
            info!("train step {}/{}: loss {step_loss:.4}", step + 1, opts.steps);
        }
    }

    model.meta_mut().train_steps = opts.steps;
    let final_mse = training_mse(&model, dataset)?;
    Ok((
        model,
        TrainReport {
            initial_mse,
            final_mse,
            losses,
        },
    ))
}

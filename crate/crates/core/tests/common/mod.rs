#![allow(dead_code)]

pub mod msssim_cases;

use std::path::{Path, PathBuf};
use std::time::Instant;

use licattack::attack::adv_loss;
use licattack::codec::{train_codec, Codec, CodecMeta, CodecModel, Quantizer, TrainOptions};
use licattack::frequency::BandProjector;
use licattack::harness::{list_pngs, load_dataset, OnError};
use ndarray::{Array3, ArrayView3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Smooth pattern plus noise, in `[0, 1]`.
pub fn random_image(seed: u64, h: usize, w: usize, c: usize) -> Array3<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (fx, fy, phase): (f64, f64, f64) = (rng.gen_range(0.02..0.3), rng.gen_range(0.02..0.3), rng.gen());
    Array3::from_shape_fn((h, w, c), |(i, j, k)| {
        let base = 0.5 + 0.3 * (fx * j as f64 + fy * i as f64 + phase * 6.0 + k as f64).sin();
        (base + 0.2 * (rng.gen::<f64>() - 0.5)).clamp(0.0, 1.0)
    })
}

/// Uniform in `[−amp, amp]`.
pub fn random_delta(seed: u64, dim: (usize, usize, usize), amp: f64) -> Array3<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array3::from_shape_fn(dim, |_| rng.gen_range(-amp..=amp))
}

/// Untrained codec for 8×8 inputs: two stride-2 stages, 2 latent channels.
pub fn tiny_codec(seed: u64) -> CodecModel<f64> {
    CodecModel::<f64>::new(CodecMeta::factorized(0.0483, seed, 4, 2, 2)).unwrap()
}

fn chw(x: ArrayView3<f64>) -> Array3<f64> {
    x.permuted_axes([2, 0, 1]).as_standard_layout().into_owned()
}

fn hwc(x: &Array3<f64>) -> Array3<f64> {
    x.view().permuted_axes([1, 2, 0]).as_standard_layout().into_owned()
}

/// The function whose derivative a quantizer's backward pass claims to be.
///
/// Cubic and noise are evaluated as is. Straight-through is linearized at the
/// base point: the rounding offset `round(y₀) − y₀` is frozen, so the map is
/// `y ↦ y + const` and its true derivative is the identity.
pub struct Surrogate<'a> {
    model: &'a CodecModel<f64>,
    quantizer: Quantizer,
    frozen: Option<Array3<f64>>,
}

impl<'a> Surrogate<'a> {
    pub fn new(model: &'a CodecModel<f64>, quantizer: Quantizer, base: ArrayView3<f64>) -> Self {
        let frozen = (quantizer == Quantizer::StraightThrough).then(|| {
            let y = model.analyze(&chw(base));
            y.mapv(|v| v.round() - v)
        });
        Self {
            model,
            quantizer,
            frozen,
        }
    }

    pub fn reconstruct(&self, x: ArrayView3<f64>) -> Array3<f64> {
        match &self.frozen {
            Some(offset) => {
                let y = self.model.analyze(&chw(x));
                hwc(&self.model.synthesize(&(y + offset)))
            }
            None => self.model.reconstruct(x, self.quantizer).unwrap(),
        }
    }

    pub fn loss(&self, x: ArrayView3<f64>, delta: ArrayView3<f64>, projector: Option<&BandProjector>, eta: f64) -> f64 {
        let x_adv = &x + &delta;
        let r = self.reconstruct(x_adv.view());
        let distortion: f64 = x.iter().zip(r.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        let ic = projector.map_or(0.0, |p| p.penalty(x, x_adv.view()).unwrap());
        -distortion + eta * ic
    }
}

/// `‖g − g_fd‖ / ‖g_fd‖` for the analytic gradient of the attack loss at
/// `delta` against central differences of the surrogate.
pub fn gradient_relative_error(
    model: &CodecModel<f64>,
    quantizer: Quantizer,
    x: ArrayView3<f64>,
    delta: ArrayView3<f64>,
    projector: Option<&BandProjector>,
    eta: f64,
) -> f64 {
    let (_, analytic) = adv_loss(model, x, delta, projector, eta, quantizer).unwrap();
    let base = &x + &delta;
    let surrogate = Surrogate::new(model, quantizer, base.view());
    let h = 1e-6;
    let mut numeric = Array3::zeros(delta.dim());
    let mut probe = delta.to_owned();
    for idx in ndarray::indices(delta.dim()) {
        let orig = probe[idx];
        probe[idx] = orig + h;
        let up = surrogate.loss(x, probe.view(), projector, eta);
        probe[idx] = orig - h;
        let down = surrogate.loss(x, probe.view(), projector, eta);
        probe[idx] = orig;
        numeric[idx] = (up - down) / (2.0 * h);
    }
    let diff: f64 = analytic.iter().zip(numeric.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let norm: f64 = numeric.iter().map(|v| v * v).sum::<f64>().sqrt();
    diff / norm.max(1e-300)
}

/// The victim codec of the acceptance experiments.
pub const VICTIM_LAMBDA: f64 = 0.0483;
pub const VICTIM_STEPS: usize = 3000;

pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

/// Scratch space shared by the slow tests; survives between runs.
pub fn work_dir() -> PathBuf {
    Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

/// Default-architecture codec trained on `data/train`, cached under
/// [`work_dir`] by a hash of the options and the training images.
pub fn trained_codec(lambda: f64, steps: usize) -> PathBuf {
    let train_dir = data_dir().join("train");
    let opts = TrainOptions::new(lambda, steps, 0);
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(&opts).unwrap());
    for p in list_pngs(&train_dir).unwrap() {
        hasher.update(std::fs::read(p).unwrap());
    }
    let digest: String = hasher.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect();
    let path = work_dir().join(format!("codec-{digest}.ckpt"));
    if CodecModel::<f32>::load(&path).is_ok() {
        println!("  reusing trained codec {}", path.display());
        return path;
    }
    let images: Vec<_> = load_dataset(&train_dir, OnError::Abort)
        .unwrap()
        .into_iter()
        .map(|n| n.image)
        .collect();
    let t = Instant::now();
    let (model, report) = train_codec(&images, &opts).unwrap();
    println!(
        "  trained codec (lambda {lambda}, {steps} steps) in {:.0?}: training MSE {:.5} -> {:.5}",
        t.elapsed(),
        report.initial_mse,
        report.final_mse
    );
    std::fs::create_dir_all(work_dir()).unwrap();
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    model.save(&tmp).unwrap();
    std::fs::rename(&tmp, &path).unwrap();
    path
}

//! Reconstruction-distortion attack: sign-gradient PGD on
//! `−‖x − g_s(Q(g_a(x + δ)))‖_F² + η · ‖T(x) − T(x + δ)‖_F` under `‖δ‖∞ ≤ ε/255`.

use std::fmt;
use std::str::FromStr;

use log::debug;
use ndarray::{Array3, ArrayView3, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{Codec, Quantizer, QuantizerKind};
use crate::error::{ensure, Error, Result};
use crate::frequency::{Band, BandProjector, FrequencyMask};
use crate::imaging::{clip01, ImageTensor};
use crate::metrics::{degradation, quality, Degradation, QualityScore};
use crate::seed::derive_seed;

/// Default number of PGD iterations.
pub const DEFAULT_STEPS: usize = 200;
/// Default IC weight.
pub const DEFAULT_ETA: f64 = 100.0;

/// Starting point of δ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    #[default]
    Zero,
    /// Uniform in the ε-ball, then made pixel-valid.
    Random,
}

impl fmt::Display for Init {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Init::Zero => "zero",
            Init::Random => "random",
        })
    }
}

impl FromStr for Init {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(Init::Zero),
            "random" => Ok(Init::Random),
            other => Err(Error::invalid(format!("unknown init '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    /// L∞ budget on the 0–255 scale.
    pub epsilon: f64,
    pub eta: f64,
    pub steps: usize,
    /// Step size in normalized pixel units; `None` means `2.5 · ε/255 / steps`.
    pub step_size: Option<f64>,
    pub ic_enabled: bool,
    pub ic_band: Band,
    pub ic_fraction: f64,
    pub quantizer: QuantizerKind,
    pub init: Init,
    pub seed: u64,
    pub best_tracking: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            epsilon: 32.0,
            eta: DEFAULT_ETA,
            steps: DEFAULT_STEPS,
            step_size: None,
            ic_enabled: true,
            ic_band: Band::Low,
            ic_fraction: 0.5,
            quantizer: QuantizerKind::Cubic,
            init: Init::Zero,
            seed: 0,
            best_tracking: true,
        }
    }
}

impl AttackConfig {
    pub fn epsilon_norm(&self) -> f64 {
        self.epsilon / 255.0
    }

    /// Effective step size.
    pub fn alpha(&self) -> f64 {
        match self.step_size {
            Some(a) => a,
            None if self.steps == 0 => 0.0,
            None => 2.5 * self.epsilon_norm() / self.steps as f64,
        }
    }

    /// IC weight actually applied; zero when IC is off.
    pub fn effective_eta(&self) -> f64 {
        if self.ic_enabled {
            self.eta
        } else {
            0.0
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.epsilon.is_finite() && self.epsilon >= 0.0,
            "epsilon must be a non-negative number, got {}",
            self.epsilon
        );
        ensure!(
            self.eta.is_finite() && self.eta >= 0.0,
            "eta must be a non-negative number, got {}",
            self.eta
        );
        if let Some(a) = self.step_size {
            ensure!(a.is_finite() && a > 0.0, "step size must be positive, got {a}");
        }
        ensure!(
            self.steps == 0 || self.epsilon == 0.0 || self.alpha() > 0.0,
            "step size must be positive when steps > 0"
        );
        ensure!(
            self.ic_fraction.is_finite() && (0.0..=1.0).contains(&self.ic_fraction),
            "ic fraction must lie in [0, 1], got {}",
            self.ic_fraction
        );
        Ok(())
    }

    fn projector(&self, height: usize, width: usize) -> Result<Option<BandProjector>> {
        if !self.ic_enabled {
            return Ok(None);
        }
        let mask = FrequencyMask::build(height, width, self.ic_band, self.ic_fraction)?;
        Ok(Some(BandProjector::new(mask)))
    }

    /// Quantizer used at iteration `step`; only the noise surrogate varies.
    fn quantizer_at(&self, step: usize) -> Quantizer {
        self.quantizer
            .instantiate(derive_seed(self.seed, &[0x6e6f_6973_65, step as u64]))
    }
}

/// One evaluation of the objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    /// `−distortion + η · ic`.
    pub total: f64,
    /// `‖x − g_s(Q(g_a(x + δ)))‖_F²`.
    pub distortion: f64,
    /// `‖T(x) − T(x + δ)‖_F`; zero when IC is off.
    pub ic: f64,
}

/// The objective and its gradient with respect to δ.
///
/// `projector` is the band truncation (`None` drops the IC term). The codec
/// sees `x + δ` as is; callers keep it inside the pixel range.
pub fn adv_loss(
    codec: &dyn Codec,
    x: ArrayView3<f64>,
    delta: ArrayView3<f64>,
    projector: Option<&BandProjector>,
    eta: f64,
    quantizer: Quantizer,
) -> Result<(LossTerms, Array3<f64>)> {
    ensure!(
        x.dim() == delta.dim(),
        "shape mismatch: image {:?}, perturbation {:?}",
        x.dim(),
        delta.dim()
    );
    let x_adv = &x + &delta;
    let (recon, pullback) = codec.reconstruct_with_pullback(x_adv.view(), quantizer)?;

    // d/dr of −‖x − r‖² is 2(x − r).
    let mut upstream = Array3::zeros(x.dim());
    let mut distortion = 0.0;
    Zip::from(&mut upstream)
        .and(&x)
        .and(&recon)
        .for_each(|u, &a, &r| {
            let d = a - r;
            distortion += d * d;
            *u = 2.0 * d;
        });
    let mut grad = pullback(upstream.view())?;

    let mut ic = 0.0;
    if let Some(p) = projector {
        let (norm, ic_grad) = p.penalty_with_grad(x, x_adv.view())?;
        ic = norm;
        grad.scaled_add(eta, &ic_grad);
    }
    let terms = LossTerms {
        total: -distortion + eta * ic,
        distortion,
        ic,
    };
    if !terms.total.is_finite() {
        return Err(Error::Numeric {
            step: 0,
            detail: format!("loss is {} (distortion {distortion}, ic {ic})", terms.total),
        });
    }
    Ok((terms, grad))
}

/// Loss value only, without the backward pass.
fn loss_value(
    codec: &dyn Codec,
    x: ArrayView3<f64>,
    delta: ArrayView3<f64>,
    projector: Option<&BandProjector>,
    eta: f64,
    quantizer: Quantizer,
) -> Result<LossTerms> {
    let x_adv = &x + &delta;
    let recon = codec.reconstruct(x_adv.view(), quantizer)?;
    let distortion = Zip::from(&x)
        .and(&recon)
        .fold(0.0, |acc, &a, &r| acc + (a - r) * (a - r));
    let ic = match projector {
        Some(p) => p.penalty(x, x_adv.view())?,
        None => 0.0,
    };
    Ok(LossTerms {
        total: -distortion + eta * ic,
        distortion,
        ic,
    })
}

/// Clamps every element of δ into `[−ε_norm, ε_norm]`.
pub fn project_linf(delta: ArrayView3<f64>, epsilon_norm: f64) -> Result<Array3<f64>> {
    ensure!(
        epsilon_norm.is_finite() && epsilon_norm >= 0.0,
        "epsilon must be non-negative, got {epsilon_norm}"
    );
    ensure!(
        delta.iter().all(|v| v.is_finite()),
        "perturbation contains non-finite values"
    );
    Ok(delta.mapv(|v| v.clamp(-epsilon_norm, epsilon_norm)))
}

/// Replaces δ with `clip01(x + δ) − x` in place.
fn project_pixels(x: ArrayView3<f64>, delta: &mut Array3<f64>) {
    Zip::from(delta).and(&x).for_each(|d, &a| *d = (a + *d).clamp(0.0, 1.0) - a);
}

/// Hard-quantizer view of an attack as a victim would see it.
#[derive(Debug, Clone)]
pub struct Evaluation {
    /// Adversarial example after 8-bit rounding.
    pub adversarial: ImageTensor,
    /// Clipped, 8-bit reconstruction of the original.
    pub reconstructed_original: ImageTensor,
    /// Clipped, 8-bit reconstruction of [`Evaluation::adversarial`].
    pub reconstructed_adversarial: ImageTensor,
    pub metrics: AttackMetrics,
}

/// The three quality pairings of a report row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackMetrics {
    /// Reconstruction of the original against the original.
    pub reconstructed_original: QualityScore,
    /// Adversarial example against the original.
    pub adversarial: QualityScore,
    /// Reconstruction of the adversarial example against the adversarial example.
    pub reconstructed_adversarial: QualityScore,
    /// `adversarial − reconstructed_adversarial`.
    pub degradation: Degradation,
}

fn hard_reconstruction(codec: &dyn Codec, x: &ImageTensor) -> Result<ImageTensor> {
    let out = codec.reconstruct(x.view(), Quantizer::Hard)?;
    Ok(ImageTensor::from_clipped(out.view())?.quantize_8bit())
}

/// Scores `x_adv` against `x` through the hard-quantized codec, after
/// rounding both to 8 bits.
pub fn evaluate_attack(codec: &dyn Codec, x: &ImageTensor, x_adv: &ImageTensor) -> Result<Evaluation> {
    let original = x.quantize_8bit();
    let adversarial = x_adv.quantize_8bit();
    let reconstructed_original = hard_reconstruction(codec, &original)?;
    let reconstructed_adversarial = hard_reconstruction(codec, &adversarial)?;
    let ae = quality(original.view(), adversarial.view())?;
    let rec_ae = quality(adversarial.view(), reconstructed_adversarial.view())?;
    let metrics = AttackMetrics {
        reconstructed_original: quality(original.view(), reconstructed_original.view())?,
        adversarial: ae,
        reconstructed_adversarial: rec_ae,
        degradation: degradation(ae, rec_ae),
    };
    Ok(Evaluation {
        adversarial,
        reconstructed_original,
        reconstructed_adversarial,
        metrics,
    })
}

#[derive(Debug, Clone)]
pub struct AttackResult {
    /// Effective perturbation, `x_adv − x`.
    pub delta: Array3<f64>,
    pub x_adv: ImageTensor,
    /// Objective before the first step and after each step.
    pub trace: Vec<LossTerms>,
    /// Objective at the returned δ.
    pub loss: LossTerms,
    /// Index into `trace` of the returned δ.
    pub best_step: usize,
    pub steps_executed: usize,
    pub evaluation: Evaluation,
}

impl AttackResult {
    /// Largest `|δ|` in normalized units.
    pub fn linf(&self) -> f64 {
        self.delta.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// PGD iterates on raw tensors; returns δ, trace and the chosen trace index.
pub fn pgd_delta(
    codec: &dyn Codec,
    x: ArrayView3<f64>,
    config: &AttackConfig,
) -> Result<(Array3<f64>, Vec<LossTerms>, usize)> {
    pgd_delta_observed(codec, x, config, &mut |_, _| {})
}

/// [`pgd_delta`], calling `observe(t, δ_t)` on every iterate including the
/// starting point.
pub fn pgd_delta_observed(
    codec: &dyn Codec,
    x: ArrayView3<f64>,
    config: &AttackConfig,
    observe: &mut dyn FnMut(usize, ArrayView3<f64>),
) -> Result<(Array3<f64>, Vec<LossTerms>, usize)> {
    config.validate()?;
    codec.check_input(x)?;
    let (h, w, _) = x.dim();
    let projector = config.projector(h, w)?;
    let eta = config.effective_eta();
    let eps = config.epsilon_norm();

    if eps == 0.0 {
        let zero = Array3::zeros(x.dim());
        let first = loss_value(codec, x, zero.view(), projector.as_ref(), eta, config.quantizer_at(0))?;
        observe(0, zero.view());
        return Ok((zero, vec![first], 0));
    }

    let mut delta = match config.init {
        Init::Zero => Array3::zeros(x.dim()),
        Init::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[0x696e_6974]));
            let mut d = Array3::zeros(x.dim());
            d.iter_mut().for_each(|v| *v = rng.gen_range(-eps..=eps));
            d
        }
    };
    project_pixels(x, &mut delta);
    observe(0, delta.view());

    let alpha = config.alpha();
    let mut trace = Vec::with_capacity(config.steps + 1);
    let mut best = (f64::INFINITY, 0, delta.clone());
    for step in 0..config.steps {
        let (terms, grad) = adv_loss(codec, x, delta.view(), projector.as_ref(), eta, config.quantizer_at(step))
            .map_err(|e| at_step(e, step))?;
        if let Some(bad) = grad.iter().find(|g| !g.is_finite()) {
            return Err(Error::Numeric {
                step,
                detail: format!("gradient contains {bad}"),
            });
        }
        if terms.total < best.0 {
            best = (terms.total, step, delta.clone());
        }
        trace.push(terms);
        if step % 50 == 0 {
            debug!(
                "pgd step {step}: total {:.4} distortion {:.4} ic {:.4}",
                terms.total, terms.distortion, terms.ic
            );
        }

        Zip::from(&mut delta).and(&grad).for_each(|d, &g| {
            let s = if g > 0.0 {
                1.0
            } else if g < 0.0 {
                -1.0
            } else {
                0.0
            };
            *d = (*d - alpha * s).clamp(-eps, eps);
        });
        project_pixels(x, &mut delta);
        observe(step + 1, delta.view());
    }
    let last = config.steps;
    let terms = loss_value(codec, x, delta.view(), projector.as_ref(), eta, config.quantizer_at(last))
        .map_err(|e| at_step(e, last))?;
    if !terms.total.is_finite() {
        return Err(Error::Numeric {
            step: last,
            detail: format!("loss is {}", terms.total),
        });
    }
    trace.push(terms);

    if config.best_tracking && best.0 <= terms.total {
        Ok((best.2, trace, best.1))
    } else {
        Ok((delta, trace, last))
    }
}

fn at_step(err: Error, step: usize) -> Error {
    match err {
        Error::Numeric { detail, .. } => Error::Numeric { step, detail },
        other => other,
    }
}

/// Runs the attack on one image and evaluates it through the hard path.
pub fn pgd_attack(x: &ImageTensor, codec: &dyn Codec, config: &AttackConfig) -> Result<AttackResult> {
    let (delta, trace, best_step) = pgd_delta(codec, x.view(), config)?;
    let x_adv = ImageTensor::new(clip01((&x.view() + &delta).view())?)?;
    // Re-derive δ from the stored image so it is exactly what gets exported.
    let delta = x_adv.data() - x.data();
    let evaluation = evaluate_attack(codec, x, &x_adv)?;
    Ok(AttackResult {
        loss: trace[best_step],
        steps_executed: trace.len() - 1,
        delta,
        x_adv,
        trace,
        best_step,
        evaluation,
    })
}

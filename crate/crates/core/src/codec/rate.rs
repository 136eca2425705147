use ndarray::{Array1, Array3};

use super::Real;

/// Training-time stand-in for the entropy model.
///
/// Each latent channel gets a logistic density with learned location and
/// log-scale; an element `ŷ` costs `−log2 P(ŷ − ½ < Y ≤ ŷ + ½)` bits.
#[derive(Debug, Clone, PartialEq)]
pub struct RateProxy<F> {
    pub(crate) loc: Array1<F>,
    pub(crate) log_scale: Array1<F>,
}

/// Bits and their gradients for one latent tensor.
pub struct RateEval<F> {
    pub bits: f64,
    pub grad_latent: Array3<F>,
    pub grad_loc: Array1<F>,
    pub grad_log_scale: Array1<F>,
}

const LIKELIHOOD_FLOOR: f64 = 1e-9;

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl<F: Real> RateProxy<F> {
    pub fn new(channels: usize) -> Self {
        Self {
            loc: Array1::zeros(channels),
            log_scale: Array1::zeros(channels),
        }
    }

    pub fn channels(&self) -> usize {
        self.loc.len()
    }

    /// Estimated bits for `latent` (`C × h × w`), with gradients.
    pub fn evaluate(&self, latent: &Array3<F>) -> RateEval<F> {
        let channels = self.channels();
        let mut grad_latent = Array3::zeros(latent.dim());
        let mut grad_loc = Array1::zeros(channels);
        let mut grad_log_scale = Array1::zeros(channels);
        let mut bits = 0.0;
        let ln2 = std::f64::consts::LN_2;
        for c in 0..channels {
            let mu = self.loc[c].as_f64();
            let scale = self.log_scale[c].as_f64().exp();
            let (mut g_loc, mut g_ls) = (0.0, 0.0);
            let plane = latent.index_axis(ndarray::Axis(0), c);
            let mut grad_plane = grad_latent.index_axis_mut(ndarray::Axis(0), c);
            for (&v, g) in plane.iter().zip(grad_plane.iter_mut()) {
                // Reflect to the left tail so the subtraction stays accurate.
                let centered = v.as_f64() - mu;
                let sign = if centered > 0.0 { -1.0 } else { 1.0 };
                let d = sign * centered;
                let hi = (d + 0.5) / scale;
                let lo = (d - 0.5) / scale;
                let (s_hi, s_lo) = (sigmoid(hi), sigmoid(lo));
                let p = s_hi - s_lo;
                if p < LIKELIHOOD_FLOOR {
                    bits += -LIKELIHOOD_FLOOR.ln() / ln2;
                    continue;
                }
                bits += -p.ln() / ln2;
                let dens_hi = s_hi * (1.0 - s_hi);
                let dens_lo = s_lo * (1.0 - s_lo);
                // dp/dd and dp/dscale
                let dp_dd = (dens_hi - dens_lo) / scale;
                let dp_dscale = -(hi * dens_hi - lo * dens_lo) / scale;
                let dbits_dp = -1.0 / (p * ln2);
                let dv = dbits_dp * dp_dd * sign;
                *g = F::of(dv);
                g_loc -= dv;
                g_ls += dbits_dp * dp_dscale * scale;
            }
            grad_loc[c] = F::of(g_loc);
            grad_log_scale[c] = F::of(g_ls);
        }
        RateEval {
            bits,
            grad_latent,
            grad_loc,
            grad_log_scale,
        }
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut [F]> {
        vec![
            self.loc.as_slice_mut().expect("standard layout"),
            self.log_scale.as_slice_mut().expect("standard layout"),
        ]
    }

    pub(crate) fn params(&self) -> Vec<&[F]> {
        vec![
            self.loc.as_slice().expect("standard layout"),
            self.log_scale.as_slice().expect("standard layout"),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bits_non_negative_and_smallest_at_mode() {
        let rate = RateProxy::<f64>::new(1);
        let at = |v: f64| rate.evaluate(&Array3::from_elem((1, 1, 1), v)).bits;
        assert!(at(0.0) >= 0.0);
        assert!(at(0.0) < at(1.0));
        assert!(at(1.0) < at(3.0));
        assert!((at(2.0) - at(-2.0)).abs() < 1e-12);
        assert!(at(400.0).is_finite());
    }

    #[test]
    fn gradients_match_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut rate = RateProxy::<f64>::new(2);
        rate.loc[0] = 0.3;
        rate.log_scale[1] = 0.7;
        let y = Array3::from_shape_simple_fn((2, 3, 3), || rng.gen_range(-3.0..3.0));
        let eval = rate.evaluate(&y);
        let h = 1e-6;
        for idx in [0usize, 4, 11, 17] {
            let mut up = y.clone();
            up.as_slice_mut().unwrap()[idx] += h;
            let mut down = y.clone();
            down.as_slice_mut().unwrap()[idx] -= h;
            let fd = (rate.evaluate(&up).bits - rate.evaluate(&down).bits) / (2.0 * h);
            let a = eval.grad_latent.as_slice().unwrap()[idx];
            assert!((fd - a).abs() < 1e-5 * (1.0 + fd.abs()), "{fd} vs {a}");
        }
        for c in 0..2 {
            for which in 0..2 {
                let mut r = rate.clone();
                r.params_mut()[which][c] += h;
                let up = r.evaluate(&y).bits;
                r.params_mut()[which][c] -= 2.0 * h;
                let down = r.evaluate(&y).bits;
                let fd = (up - down) / (2.0 * h);
                let a = if which == 0 { eval.grad_loc[c] } else { eval.grad_log_scale[c] };
                assert!((fd - a).abs() < 1e-5 * (1.0 + fd.abs()), "{fd} vs {a}");
            }
        }
    }
}

//! Terms of the refinement network's generator objective, the
//! discriminator objective, and the epoch-dependent weight schedule.
//!
//! All distance terms are means over pixels (or features), so the weights
//! do not depend on image size.

use ndarray::{Array2, Zip};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{fft2_centered, ifft2_centered, ComplexImage, MagnitudeImage};

/// Lower clamp for discriminator scores before taking logarithms.
pub const SCORE_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_1: f64,
    pub lambda_2: f64,
    pub lambda_dc: f64,
    pub lambda_f: f64,
}

impl LossWeights {
    pub fn new(lambda_1: f64, lambda_2: f64, lambda_dc: f64, lambda_f: f64) -> Result<Self> {
        let w = Self {
            lambda_1,
            lambda_2,
            lambda_dc,
            lambda_f,
        };
        if w.as_array().iter().all(|v| v.is_finite() && *v >= 0.0) {
            Ok(w)
        } else {
            Err(Error::InvalidArgument(format!(
                "loss weights must be finite and >= 0: {w:?}"
            )))
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.lambda_1, self.lambda_2, self.lambda_dc, self.lambda_f]
    }
}

/// Per-term values of one generator-loss evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub adv: f64,
    pub l1: f64,
    pub l2: f64,
    pub dc: f64,
    pub feat: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn assemble(adv: f64, l1: f64, l2: f64, dc: f64, feat: f64, w: &LossWeights) -> Self {
        let total = weighted_total(adv, l1, l2, dc, feat, w);
        Self {
            adv,
            l1,
            l2,
            dc,
            feat,
            total,
        }
    }
}

/// `adv + l1 * lambda_1 + l2 * lambda_2 + dc * lambda_dc + feat * lambda_f`,
/// summed left to right.
pub fn weighted_total(adv: f64, l1: f64, l2: f64, dc: f64, feat: f64, w: &LossWeights) -> f64 {
    adv + w.lambda_1 * l1 + w.lambda_2 * l2 + w.lambda_dc * dc + w.lambda_f * feat
}

/// A fixed, stateless map from an image to a feature vector.
pub trait FeatureExtractor {
    fn features(&self, img: &MagnitudeImage) -> Vec<f64>;
}

impl<F: Fn(&MagnitudeImage) -> Vec<f64>> FeatureExtractor for F {
    fn features(&self, img: &MagnitudeImage) -> Vec<f64> {
        self(img)
    }
}

/// Extractor with no features; the feature term is always zero.
#[derive(Clone, Copy, Debug, Default)]
pub struct NoFeatures;

impl FeatureExtractor for NoFeatures {
    fn features(&self, _img: &MagnitudeImage) -> Vec<f64> {
        Vec::new()
    }
}

/// Block means over `factor x factor` tiles (partial edge tiles dropped).
#[derive(Clone, Copy, Debug)]
pub struct AveragePool {
    pub factor: usize,
}

impl FeatureExtractor for AveragePool {
    fn features(&self, img: &MagnitudeImage) -> Vec<f64> {
        let f = self.factor.max(1);
        let (ny, nx) = img.dims();
        let d = img.data();
        let mut out = Vec::with_capacity((ny / f) * (nx / f));
        for by in 0..ny / f {
            for bx in 0..nx / f {
                let mut acc = 0.0;
                for y in by * f..(by + 1) * f {
                    for x in bx * f..(bx + 1) * f {
                        acc += d[[y, x]];
                    }
                }
                out.push(acc / (f * f) as f64);
            }
        }
        out
    }
}

fn validate_score(score: f64, name: &str) -> Result<f64> {
    if !score.is_finite() {
        return Err(Error::NonFiniteInput(format!("{name} = {score}")));
    }
    if !(0.0..=1.0).contains(&score) {
        return Err(Error::InvalidArgument(format!(
            "{name} must lie in [0, 1], got {score}"
        )));
    }
    Ok(score)
}

/// Mean modulus of the difference of the centered unitary spectra.
fn spectral_difference(pred: &MagnitudeImage, target: &MagnitudeImage) -> ComplexImage {
    let diff = pred.data() - target.data();
    fft2_centered(&ComplexImage::from_real(&diff).expect("difference of finite images"))
}

/// Evaluates every generator-loss term.
///
/// `adv` is `-ln(score)`, the non-saturating form: a higher discriminator
/// score on the prediction lowers the loss. `dc` is the mean modulus of
/// `F(pred) - F(target)` under the centered unitary transform.
pub fn generator_loss(
    pred: &MagnitudeImage,
    target: &MagnitudeImage,
    disc_score_on_pred: f64,
    fx: &dyn FeatureExtractor,
    w: &LossWeights,
) -> Result<LossBreakdown> {
    if pred.dims() != target.dims() {
        return Err(Error::dims(target.dims(), pred.dims()));
    }
    let score = validate_score(disc_score_on_pred, "disc_score_on_pred")?.max(SCORE_EPS);
    let n = pred.data().len() as f64;

    let adv = -score.ln();
    let (mut abs_sum, mut sq_sum) = (0.0, 0.0);
    Zip::from(pred.data())
        .and(target.data())
        .for_each(|&p, &t| {
            let d = p - t;
            abs_sum += d.abs();
            sq_sum += d * d;
        });
    let l1 = abs_sum / n;
    let l2 = sq_sum / n;
    let dc = spectral_difference(pred, target)
        .data()
        .iter()
        .map(|v| v.norm())
        .sum::<f64>()
        / n;

    let fp = fx.features(pred);
    let ft = fx.features(target);
    if fp.len() != ft.len() {
        return Err(Error::dims(
            format!("{} features", ft.len()),
            format!("{} features", fp.len()),
        ));
    }
    if fp.iter().chain(&ft).any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("feature extractor output".into()));
    }
    let feat = if fp.is_empty() {
        0.0
    } else {
        fp.iter()
            .zip(&ft)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / fp.len() as f64
    };

    Ok(LossBreakdown::assemble(adv, l1, l2, dc, feat, w))
}

/// Gradient of `lambda_1 * l1 + lambda_2 * l2 + lambda_dc * dc` with respect
/// to each prediction pixel. Ties (`pred == target`, or a vanishing spectral
/// difference) take the zero subgradient.
pub fn pixel_loss_gradient(
    pred: &MagnitudeImage,
    target: &MagnitudeImage,
    w: &LossWeights,
) -> Result<Array2<f64>> {
    if pred.dims() != target.dims() {
        return Err(Error::dims(target.dims(), pred.dims()));
    }
    let n = pred.data().len() as f64;
    let mut grad = Zip::from(pred.data())
        .and(target.data())
        .map_collect(|&p, &t| {
            let d = p - t;
            let sign = if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            };
            (w.lambda_1 * sign + w.lambda_2 * 2.0 * d) / n
        });
    if w.lambda_dc != 0.0 {
        // d|D_k|/dp = Re(conj(u_k) F_k.) with u = D/|D|; summing over k gives
        // Re(F^H u) = Re(ifft(u)) for the unitary transform.
        let spectrum = spectral_difference(pred, target);
        let phases = spectrum.data().mapv(|v| {
            let m = v.norm();
            if m > 0.0 {
                v / m
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        let back = ifft2_centered(&ComplexImage::new(phases).expect("unit phases are finite"));
        Zip::from(&mut grad)
            .and(back.data())
            .for_each(|g, v| *g += w.lambda_dc * v.re / n);
    }
    Ok(grad)
}

/// Binary cross entropy of the discriminator: `-ln(real) - ln(1 - fake)`,
/// with both scores clamped to `[SCORE_EPS, 1 - SCORE_EPS]`.
pub fn discriminator_loss(score_real: f64, score_fake: f64) -> f64 {
    let clamp = |s: f64| s.clamp(SCORE_EPS, 1.0 - SCORE_EPS);
    -clamp(score_real).ln() - (1.0 - clamp(score_fake)).ln()
}

/// Loss weights for a training epoch.
///
/// | epochs    | lambda_1 | lambda_2 | lambda_dc | lambda_f |
/// |-----------|----------|----------|-----------|----------|
/// | 0..30     | 120      | 30       | 0         | 0        |
/// | 30..=50   | linear 120 to 30 | linear 30 to 120 | 0 | 0 |
/// | 51..=100  | 30       | 120      | 0         | 0        |
/// | 101..     | 30       | 120      | 30        | 100      |
pub fn loss_schedule(epoch: u32) -> LossWeights {
    let (l1, l2, dc, f) = match epoch {
        0..=29 => (120.0, 30.0, 0.0, 0.0),
        30..=50 => {
            let t = f64::from(epoch - 30) / 20.0;
            (120.0 - 90.0 * t, 30.0 + 90.0 * t, 0.0, 0.0)
        }
        51..=100 => (30.0, 120.0, 0.0, 0.0),
        _ => (30.0, 120.0, 30.0, 100.0),
    };
    LossWeights {
        lambda_1: l1,
        lambda_2: l2,
        lambda_dc: dc,
        lambda_f: f,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(ny: usize, nx: usize, seed: u64) -> MagnitudeImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MagnitudeImage::new(
            Array2::from_shape_fn((ny, nx), |_| rng.random_range(0.0..1.0)),
            1.0,
        )
        .unwrap()
    }

    fn shifted(img: &MagnitudeImage, c: f64) -> MagnitudeImage {
        MagnitudeImage::new(img.data().mapv(|v| v + c), 1.0).unwrap()
    }

    fn all(v: f64) -> LossWeights {
        LossWeights::new(v, v, v, v).unwrap()
    }

    #[test]
    fn identical_images_leave_only_adversarial_term() {
        let t = random(8, 8, 1);
        let b = generator_loss(&t, &t, 0.5, &AveragePool { factor: 2 }, &all(1.0)).unwrap();
        assert_eq!((b.l1, b.l2, b.dc, b.feat), (0.0, 0.0, 0.0, 0.0));
        assert!((b.adv - 2f64.ln()).abs() < 1e-15);
        assert!((b.total - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn constant_offset_l1_term() {
        let t = random(8, 8, 2);
        let p = shifted(&t, 0.1);
        let w = LossWeights::new(1.0, 0.0, 0.0, 0.0).unwrap();
        let b = generator_loss(&p, &t, 1.0, &NoFeatures, &w).unwrap();
        assert_eq!(b.adv, 0.0);
        assert!((b.l1 - 0.1).abs() < 1e-15);
        assert!((b.total - 0.1).abs() < 1e-15);
    }

    /// Direct centered unitary DFT of a real image.
    fn direct_dft(img: &Array2<f64>) -> Vec<Complex64> {
        let (ny, nx) = img.dim();
        let (cy, cx) = ((ny / 2) as f64, (nx / 2) as f64);
        let scale = 1.0 / ((ny * nx) as f64).sqrt();
        let mut out = Vec::new();
        for ky in 0..ny {
            for kx in 0..nx {
                let mut acc = Complex64::new(0.0, 0.0);
                for ((y, x), &v) in img.indexed_iter() {
                    let phase = -2.0
                        * std::f64::consts::PI
                        * ((ky as f64 - cy) * (y as f64 - cy) / ny as f64
                            + (kx as f64 - cx) * (x as f64 - cx) / nx as f64);
                    acc += Complex64::from_polar(v, phase);
                }
                out.push(acc * scale);
            }
        }
        out
    }

    #[test]
    fn dc_term_of_constant_offset() {
        let t = random(8, 8, 3);
        let c = 0.3;
        let p = shifted(&t, c);
        let b = generator_loss(&p, &t, 0.5, &NoFeatures, &all(0.0)).unwrap();
        let n = 64.0_f64;
        assert!((b.dc - c / n.sqrt()).abs() < 1e-12);
        let oracle: f64 = direct_dft(&(p.data() - t.data()))
            .iter()
            .map(|v| v.norm())
            .sum::<f64>()
            / n;
        assert!((b.dc - oracle).abs() < 1e-12);
    }

    #[test]
    fn breakdown_identity_and_nonnegativity() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random(12, 10, seed);
            let t = random(12, 10, seed + 1000);
            let w =
                LossWeights::new(rng.random(), rng.random(), rng.random(), rng.random()).unwrap();
            let score: f64 = rng.random_range(0.01..1.0);
            let b = generator_loss(&p, &t, score, &AveragePool { factor: 3 }, &w).unwrap();
            assert_eq!(
                b.total,
                b.adv
                    + w.lambda_1 * b.l1
                    + w.lambda_2 * b.l2
                    + w.lambda_dc * b.dc
                    + w.lambda_f * b.feat
            );
            assert!(b.adv >= 0.0 && b.total >= 0.0);
        }
    }

    #[test]
    fn dc_term_is_shift_invariant() {
        let p = random(8, 12, 5);
        let t = random(8, 12, 6);
        let roll = |m: &MagnitudeImage| {
            let d = m.data();
            MagnitudeImage::new(
                Array2::from_shape_fn(d.dim(), |(y, x)| d[[(y + 3) % 8, (x + 5) % 12]]),
                1.0,
            )
            .unwrap()
        };
        let a = generator_loss(&p, &t, 0.5, &NoFeatures, &all(1.0)).unwrap();
        let b = generator_loss(&roll(&p), &roll(&t), 0.5, &NoFeatures, &all(1.0)).unwrap();
        assert!((a.dc - b.dc).abs() < 1e-10);
    }

    #[test]
    fn input_validation() {
        let a = random(8, 8, 1);
        let b = random(8, 9, 1);
        let w = all(1.0);
        assert!(matches!(
            generator_loss(&a, &b, 0.5, &NoFeatures, &w),
            Err(Error::DimMismatch { .. })
        ));
        assert!(matches!(
            generator_loss(&a, &a, f64::NAN, &NoFeatures, &w),
            Err(Error::NonFiniteInput(_))
        ));
        assert!(matches!(
            generator_loss(&a, &a, 1.5, &NoFeatures, &w),
            Err(Error::InvalidArgument(_))
        ));
        let bad = |_: &MagnitudeImage| vec![f64::INFINITY];
        assert!(matches!(
            generator_loss(&a, &a, 0.5, &bad, &w),
            Err(Error::NonFiniteInput(_))
        ));
        assert!(LossWeights::new(-1.0, 0.0, 0.0, 0.0).is_err());
        // a zero score is clamped, not infinite
        assert!(generator_loss(&a, &a, 0.0, &NoFeatures, &w)
            .unwrap()
            .adv
            .is_finite());
    }

    #[test]
    fn discriminator_loss_values() {
        assert!((discriminator_loss(0.5, 0.5) - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!((discriminator_loss(0.9, 0.1) - 0.210721).abs() < 1e-6);
        assert!(discriminator_loss(1.0, 0.0) < 1e-6);
        assert!(discriminator_loss(0.0, 1.0).is_finite());
    }

    #[test]
    fn schedule_values() {
        let as_tuple = |w: LossWeights| w.as_array();
        assert_eq!(as_tuple(loss_schedule(0)), [120.0, 30.0, 0.0, 0.0]);
        assert_eq!(as_tuple(loss_schedule(29)), [120.0, 30.0, 0.0, 0.0]);
        assert_eq!(as_tuple(loss_schedule(30)), [120.0, 30.0, 0.0, 0.0]);
        assert_eq!(as_tuple(loss_schedule(40)), [75.0, 75.0, 0.0, 0.0]);
        assert_eq!(as_tuple(loss_schedule(50)), [30.0, 120.0, 0.0, 0.0]);
        assert_eq!(as_tuple(loss_schedule(100)), [30.0, 120.0, 0.0, 0.0]);
        assert_eq!(as_tuple(loss_schedule(101)), [30.0, 120.0, 30.0, 100.0]);
        assert_eq!(as_tuple(loss_schedule(150)), [30.0, 120.0, 30.0, 100.0]);
        // the ramp moves monotonically
        for e in 30..50 {
            assert!(loss_schedule(e + 1).lambda_1 < loss_schedule(e).lambda_1);
        }
    }

    /// Central differences of the weighted pixel terms.
    fn numeric_gradient(
        p: &MagnitudeImage,
        t: &MagnitudeImage,
        w: &LossWeights,
        h: f64,
    ) -> Array2<f64> {
        let w_pix = LossWeights {
            lambda_f: 0.0,
            ..*w
        };
        let eval = |img: &Array2<f64>| {
            let m = MagnitudeImage::new(img.clone(), 1.0).unwrap();
            let b = generator_loss(&m, t, 1.0, &NoFeatures, &w_pix).unwrap();
            w_pix.lambda_1 * b.l1 + w_pix.lambda_2 * b.l2 + w_pix.lambda_dc * b.dc
        };
        Array2::from_shape_fn(p.dims(), |idx| {
            let mut up = p.data().clone();
            let mut down = p.data().clone();
            up[idx] += h;
            down[idx] -= h;
            (eval(&up) - eval(&down)) / (2.0 * h)
        })
    }

    #[test]
    fn gradient_matches_central_differences() {
        for seed in 0..3 {
            // offsets of random sign bounded away from zero keep every |d| kink
            // out of reach of the finite-difference stencil
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 77);
            let t = MagnitudeImage::new(
                Array2::from_shape_fn((8, 8), |_| rng.random_range(0.5..1.0)),
                1.0,
            )
            .unwrap();
            let p = MagnitudeImage::new(
                t.data().mapv(|v| {
                    let off: f64 = rng.random_range(0.05..0.3);
                    if rng.random::<bool>() {
                        v + off
                    } else {
                        v - off
                    }
                }),
                1.0,
            )
            .unwrap();
            let w = LossWeights::new(1.3, 0.7, 2.1, 0.0).unwrap();
            let analytic = pixel_loss_gradient(&p, &t, &w).unwrap();
            let numeric = numeric_gradient(&p, &t, &w, 1e-6);
            for (a, n) in analytic.iter().zip(&numeric) {
                assert!((a - n).abs() <= 1e-5 * a.abs().max(n.abs()), "{a} vs {n}");
            }
        }
    }
}

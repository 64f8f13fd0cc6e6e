//! RMSE, PSNR and Gaussian-window SSIM against a reference image.

use ndarray::Array2;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::grappa::KernelGeometry;
use crate::tensor::MagnitudeImage;

/// Side length of the SSIM window.
pub const SSIM_WINDOW: usize = 11;
/// Standard deviation of the SSIM Gaussian window, in pixels.
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_dims(x: &MagnitudeImage, y: &MagnitudeImage) -> Result<()> {
    if x.dims() != y.dims() {
        return Err(Error::dims(y.dims(), x.dims()));
    }
    Ok(())
}

fn check_range(range: f64) -> Result<()> {
    if range > 0.0 && range.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "dynamic range must be positive, got {range}"
        )))
    }
}

pub fn rmse(x: &MagnitudeImage, y: &MagnitudeImage) -> Result<f64> {
    check_dims(x, y)?;
    let n = x.data().len() as f64;
    let sq: f64 = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((sq / n).sqrt())
}

/// `-20 log10(rmse / range)`; `f64::INFINITY` when the images are equal.
pub fn psnr_from_rmse(rmse: f64, range: f64) -> f64 {
    if rmse == 0.0 {
        f64::INFINITY
    } else {
        -20.0 * (rmse / range).log10()
    }
}

pub fn psnr(x: &MagnitudeImage, reference: &MagnitudeImage, range: f64) -> Result<f64> {
    check_range(range)?;
    Ok(psnr_from_rmse(rmse(x, reference)?, range))
}

/// Normalized 1D Gaussian taps; the 2D window is their outer product.
pub fn gaussian_taps(len: usize, sigma: f64) -> Vec<f64> {
    let centre = (len as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..len)
        .map(|i| (-(i as f64 - centre).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Separable valid-mode filtering with `taps` along both axes.
fn filter_valid(img: &Array2<f64>, taps: &[f64]) -> Array2<f64> {
    let (ny, nx) = img.dim();
    let k = taps.len();
    let (oy, ox) = (ny + 1 - k, nx + 1 - k);
    let horiz = Array2::from_shape_fn((ny, ox), |(y, x)| {
        taps.iter()
            .enumerate()
            .map(|(i, t)| t * img[[y, x + i]])
            .sum::<f64>()
    });
    Array2::from_shape_fn((oy, ox), |(y, x)| {
        taps.iter()
            .enumerate()
            .map(|(i, t)| t * horiz[[y + i, x]])
            .sum::<f64>()
    })
}

/// Per-window SSIM values over every fully interior window position.
pub fn ssim_map(x: &MagnitudeImage, reference: &MagnitudeImage, range: f64) -> Result<Array2<f64>> {
    check_dims(x, reference)?;
    check_range(range)?;
    let (ny, nx) = x.dims();
    if ny < SSIM_WINDOW || nx < SSIM_WINDOW {
        return Err(Error::TooSmall(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {ny}x{nx}"
        )));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let (a, b) = (x.data(), reference.data());
    let mu_a = filter_valid(a, &taps);
    let mu_b = filter_valid(b, &taps);
    let aa = filter_valid(&(a * a), &taps);
    let bb = filter_valid(&(b * b), &taps);
    let ab = filter_valid(&(a * b), &taps);
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);

    Ok(Array2::from_shape_fn(mu_a.dim(), |idx| {
        let (ma, mb) = (mu_a[idx], mu_b[idx]);
        let var_a = aa[idx] - ma * ma;
        let var_b = bb[idx] - mb * mb;
        let cov = ab[idx] - ma * mb;
        ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
            / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2))
    }))
}

/// Mean of [`ssim_map`], with `c1 = (0.01 L)^2` and `c2 = (0.03 L)^2`.
pub fn ssim(x: &MagnitudeImage, reference: &MagnitudeImage, range: f64) -> Result<f64> {
    let map = ssim_map(x, reference, range)?;
    Ok(map.iter().sum::<f64>() / map.len() as f64)
}

/// Where a reconstruction came from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accel: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acs_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_rel: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<KernelGeometry>,
}

/// Quality of one reconstruction against its reference.
///
/// An infinite PSNR (identical images) is written as `null`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconReport {
    pub rmse: f64,
    #[serde(serialize_with = "ser_psnr", deserialize_with = "de_psnr")]
    pub psnr_db: f64,
    pub ssim: f64,
    pub dynamic_range: f64,
    #[serde(default)]
    pub provenance: Provenance,
}

fn ser_psnr<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_some(v)
    } else {
        s.serialize_none()
    }
}

fn de_psnr<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

impl ReconReport {
    /// Scores `test` against `reference`, using the reference's dynamic range.
    pub fn evaluate(
        test: &MagnitudeImage,
        reference: &MagnitudeImage,
        provenance: Provenance,
    ) -> Result<Self> {
        let range = reference.dynamic_range();
        let rmse = rmse(test, reference)?;
        Ok(Self {
            rmse,
            psnr_db: psnr_from_rmse(rmse, range),
            ssim: ssim(test, reference, range)?,
            dynamic_range: range,
            provenance,
        })
    }

    /// Whether `psnr_db` equals `-20 log10(rmse / dynamic_range)` exactly.
    pub fn is_consistent(&self) -> bool {
        let expected = psnr_from_rmse(self.rmse, self.dynamic_range);
        expected.to_bits() == self.psnr_db.to_bits()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn img(data: Array2<f64>) -> MagnitudeImage {
        MagnitudeImage::new(data, 1.0).unwrap()
    }

    fn random(ny: usize, nx: usize, seed: u64) -> MagnitudeImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        img(Array2::from_shape_fn((ny, nx), |_| {
            rng.random_range(0.0..1.0)
        }))
    }

    /// Straightforward per-window evaluation with explicit 2D weights.
    fn ssim_oracle(x: &Array2<f64>, y: &Array2<f64>, range: f64) -> f64 {
        let k = 11usize;
        let mut w = [[0.0f64; 11]; 11];
        let mut total = 0.0;
        for (i, row) in w.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
                *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
                total += *v;
            }
        }
        let (ny, nx) = x.dim();
        let (c1, c2) = ((0.01 * range).powi(2), (0.03 * range).powi(2));
        let mut acc = 0.0;
        let mut count = 0.0;
        for oy in 0..=ny - k {
            for ox in 0..=nx - k {
                let (mut mx, mut my) = (0.0, 0.0);
                for i in 0..k {
                    for j in 0..k {
                        mx += w[i][j] / total * x[[oy + i, ox + j]];
                        my += w[i][j] / total * y[[oy + i, ox + j]];
                    }
                }
                let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
                for i in 0..k {
                    for j in 0..k {
                        let (dx, dy) = (x[[oy + i, ox + j]] - mx, y[[oy + i, ox + j]] - my);
                        vx += w[i][j] / total * dx * dx;
                        vy += w[i][j] / total * dy * dy;
                        cxy += w[i][j] / total * dx * dy;
                    }
                }
                acc += (2.0 * mx * my + c1) * (2.0 * cxy + c2)
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1.0;
            }
        }
        acc / count
    }

    #[test]
    fn rmse_examples() {
        let a = random(5, 7, 1);
        assert_eq!(rmse(&a, &a).unwrap(), 0.0);
        let ones = img(Array2::ones((3, 4)));
        let zeros = img(Array2::zeros((3, 4)));
        assert_eq!(rmse(&ones, &zeros).unwrap(), 1.0);
        let x = img(array![[1.0, 2.0], [3.0, 4.0]]);
        let y = img(array![[1.0, 2.0], [3.0, 0.0]]);
        assert_eq!(rmse(&x, &y).unwrap(), 2.0);
        assert!(matches!(rmse(&x, &ones), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn psnr_examples() {
        assert!((psnr_from_rmse(0.01, 1.0) - 40.0).abs() < 1e-12);
        assert!((psnr_from_rmse(0.1, 1.0) - 20.0).abs() < 1e-12);
        assert_eq!(psnr_from_rmse(0.0, 1.0), f64::INFINITY);

        let a = random(8, 8, 2);
        let b = random(8, 8, 3);
        let p = psnr(&a, &b, 1.0).unwrap();
        let a10 = MagnitudeImage::new(a.data() * 10.0, 10.0).unwrap();
        let b10 = MagnitudeImage::new(b.data() * 10.0, 10.0).unwrap();
        assert!((psnr(&a10, &b10, 10.0).unwrap() - p).abs() < 1e-12);
        assert!(psnr(&a, &b, 0.0).is_err());
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let a = random(32, 32, 4);
        assert!((ssim(&a, &a, 1.0).unwrap() - 1.0).abs() < 1e-9);
        for seed in 0..5 {
            let x = random(24, 30, 10 + seed);
            let y = random(24, 30, 20 + seed);
            let (xy, yx) = (ssim(&x, &y, 1.0).unwrap(), ssim(&y, &x, 1.0).unwrap());
            assert!((xy - yx).abs() <= 1e-12);
        }
    }

    #[test]
    fn ssim_of_inverted_half_plane_is_near_zero() {
        let x = Array2::from_shape_fn((32, 32), |(_, c)| if c < 16 { 1.0 } else { 0.0 });
        let y = x.mapv(|v| 1.0 - v);
        let oracle = ssim_oracle(&x, &y, 1.0);
        let fast = ssim(&img(x), &img(y), 1.0).unwrap();
        assert!(oracle < 0.05);
        assert!((fast - oracle).abs() < 1e-12);
    }

    #[test]
    fn ssim_matches_direct_window_evaluation() {
        for seed in 0..3 {
            let x = random(20, 17, seed);
            let y = random(20, 17, seed + 100);
            let fast = ssim(&x, &y, 1.0).unwrap();
            let slow = ssim_oracle(x.data(), y.data(), 1.0);
            assert!((fast - slow).abs() < 1e-10, "{fast} vs {slow}");
        }
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = random(10, 32, 0);
        assert!(matches!(ssim(&a, &a, 1.0), Err(Error::TooSmall(_))));
    }

    #[test]
    fn gaussian_taps_are_normalized() {
        let t = gaussian_taps(11, 1.5);
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(t[0], t[10]);
        assert!(t[5] > t[4]);
    }

    #[test]
    fn report_round_trip_keeps_identity() {
        let a = random(16, 16, 1);
        let b = random(16, 16, 2);
        let report = ReconReport::evaluate(
            &a,
            &b,
            Provenance {
                accel: Some(4),
                ..Default::default()
            },
        )
        .unwrap();
        assert!(report.is_consistent());
        let back = ReconReport::from_json(&report.to_json().unwrap()).unwrap();
        assert_eq!(back, report);
        assert!(back.is_consistent());

        let same = ReconReport::evaluate(&a, &a, Provenance::default()).unwrap();
        let json = same.to_json().unwrap();
        assert!(json.contains("\"psnr_db\": null"));
        let back = ReconReport::from_json(&json).unwrap();
        assert_eq!(back.psnr_db, f64::INFINITY);
        assert!(back.is_consistent());
    }

    proptest! {
        #[test]
        fn ssim_is_bounded(seed in any::<u64>(), scale in 0.01f64..5.0) {
            let x = random(12, 14, seed);
            let y = MagnitudeImage::new(random(12, 14, seed ^ 0xABCD).data() * scale, 1.0).unwrap();
            let s = ssim(&x, &y, 1.0).unwrap();
            prop_assert!((-1.0..=1.0).contains(&s));
        }

        #[test]
        fn rmse_triangle_inequality(s1 in any::<u64>(), s2 in any::<u64>(), s3 in any::<u64>()) {
            let (x, y, z) = (random(6, 6, s1), random(6, 6, s2), random(6, 6, s3));
            let lhs = rmse(&x, &z).unwrap();
            let rhs = rmse(&x, &y).unwrap() + rmse(&y, &z).unwrap();
            prop_assert!(lhs <= rhs + 1e-12);
        }

        #[test]
        fn reports_survive_json(rmse_v in 1e-6f64..10.0, range in 1e-3f64..1e3, ssim_v in -1.0f64..1.0) {
            let report = ReconReport {
                rmse: rmse_v,
                psnr_db: psnr_from_rmse(rmse_v, range),
                ssim: ssim_v,
                dynamic_range: range,
                provenance: Provenance::default(),
            };
            let back = ReconReport::from_json(&report.to_json().unwrap()).unwrap();
            prop_assert!(back.is_consistent());
            prop_assert_eq!(back, report);
        }
    }
}

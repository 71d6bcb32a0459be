//! Gray-World illumination estimate: assumes every band of a natural scene
//! averages to the same value, so the per-band spatial means are the
//! illumination up to a global scale.

use crate::error::{Error, Result};
use crate::hypercube::HyperCube;
use crate::radiometry::{calibrate, IlluminationCurve};
use crate::EPS_L;

/// Estimates `L(b) = mean_b / m*`.
///
/// `target_mean` is `m*`; `None` uses the mean of the band means, which
/// gives the estimated curve unit mean and leaves overall energy unchanged.
pub fn grayworld_estimate(cube: &HyperCube, target_mean: Option<f64>) -> Result<IlluminationCurve> {
    let means = cube.band_means();
    if let Some((band, &mean)) = means.iter().enumerate().find(|(_, m)| !(**m >= EPS_L)) {
        return Err(Error::DegenerateBand { band, mean });
    }
    let target = target_mean.unwrap_or_else(|| means.iter().sum::<f64>() / means.len() as f64);
    if !(target > 0.0) || !target.is_finite() {
        return Err(Error::InvalidDims(format!("target mean {target} must be positive")));
    }
    IlluminationCurve::new(
        cube.wavelengths().to_vec(),
        means.iter().map(|m| m / target).collect(),
        true,
        "grayworld",
    )
}

/// Calibrates with the Gray-World estimate; every output band mean equals `m*`.
pub fn grayworld_calibrate(cube: &HyperCube, target_mean: Option<f64>) -> Result<HyperCube> {
    calibrate(cube, &grayworld_estimate(cube, target_mean)?, 1.0)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::hypercube::CubeKind;
    use crate::metrics::sam;
    use crate::radiometry::composite;

    fn wl(n: usize) -> Vec<f32> {
        (0..n).map(|i| 420.0 + 60.0 * i as f32).collect()
    }

    #[test]
    fn gray_cube_gives_unit_curve() {
        let cube = HyperCube::from_fn(2, 2, wl(3), CubeKind::Radiance, |_, r, c| {
            [0.2f32, 0.6][(r + c) % 2]
        })
        .unwrap();
        let curve = grayworld_estimate(&cube, None).unwrap();
        assert!(curve.values.iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert_eq!(curve.label, "grayworld");
    }

    #[test]
    fn two_band_hand_check() {
        let cube = HyperCube::from_fn(1, 2, wl(2), CubeKind::Radiance, |b, _, c| {
            [[0.1f32, 0.3], [0.3, 0.5]][b][c]
        })
        .unwrap();
        // scalar means: (0.1+0.3)/2 = 0.2, (0.3+0.5)/2 = 0.4; m* = 0.3
        let means: Vec<f64> = (0..2)
            .map(|b| (cube.get(b, 0, 0) as f64 + cube.get(b, 0, 1) as f64) / 2.0)
            .collect();
        let target = (means[0] + means[1]) / 2.0;
        let curve = grayworld_estimate(&cube, None).unwrap();
        assert!((curve.values[0] - means[0] / target).abs() < 1e-12);
        assert!((curve.values[1] - means[1] / target).abs() < 1e-12);
        assert!((curve.values[0] - 2.0 / 3.0).abs() < 1e-6);
        assert!((curve.values[1] - 4.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn estimate_is_proportional_to_illumination_on_gray_scene() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        // every band of r has spatial mean 0.5
        let pattern: Vec<f32> = (0..16).map(|_| rng.random_range(0.1..0.9)).collect();
        let mean = pattern.iter().map(|&v| v as f64).sum::<f64>() / 16.0;
        let refl = HyperCube::from_fn(4, 4, wl(5), CubeKind::Reflectance, |_, r, c| {
            (pattern[r * 4 + c] as f64 * 0.5 / mean) as f32
        })
        .unwrap();
        let values: Vec<f64> = (0..5).map(|_| rng.random_range(0.2..1.8)).collect();
        let illum = IlluminationCurve::new(wl(5), values.clone(), true, "L").unwrap();
        let est = grayworld_estimate(&composite(&refl, &illum).unwrap(), None).unwrap();
        let ratio0 = est.values[0] / values[0];
        for b in 1..5 {
            assert!((est.values[b] / values[b] - ratio0).abs() < 1e-6 * ratio0);
        }
    }

    #[test]
    fn output_band_means_are_equal() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let cube = HyperCube::from_fn(6, 5, wl(7), CubeKind::Radiance, |_, _, _| rng.random_range(0.01..1.0))
            .unwrap();
        let out = grayworld_calibrate(&cube, None).unwrap();
        let target = cube.band_means().iter().sum::<f64>() / 7.0;
        for m in out.band_means() {
            assert!((m - target).abs() < 1e-6);
        }
        let fixed = grayworld_calibrate(&cube, Some(0.5)).unwrap();
        for m in fixed.band_means() {
            assert!((m - 0.5).abs() < 1e-6);
        }
    }

    #[test]
    fn gray_scene_recovers_spectral_angles() {
        let refl = HyperCube::from_fn(3, 3, wl(4), CubeKind::Reflectance, |b, r, c| {
            0.2 + 0.1 * ((r * 3 + c) % 4) as f32 + 0.0 * b as f32
        })
        .unwrap();
        let illum = IlluminationCurve::new(wl(4), vec![0.3, 0.9, 1.4, 0.6], true, "L").unwrap();
        let out = grayworld_calibrate(&composite(&refl, &illum).unwrap(), None).unwrap();
        let s = sam(&refl, &out).unwrap();
        assert!(s.degrees.to_radians() <= 1e-6);
    }

    #[test]
    fn degenerate_band_rejected() {
        let cube = HyperCube::from_fn(2, 2, wl(2), CubeKind::Radiance, |b, _, _| b as f32).unwrap();
        assert!(matches!(
            grayworld_estimate(&cube, None),
            Err(Error::DegenerateBand { band: 0, .. })
        ));
    }
}

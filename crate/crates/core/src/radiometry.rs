//! Dark-current correction, white-reference illumination measurement, ratio
//! calibration and illumination compositing.
//!
//! Image formation is modelled per band as `I = R · L` under a globally
//! uniform illumination `L`. Calibration divides it back out; compositing
//! multiplies a reflectance by a new illumination.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::hypercube::{CubeKind, HyperCube};
use crate::EPS_L;

/// Per-band global illumination spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct IlluminationCurve {
    pub wavelengths: Vec<f32>,
    pub values: Vec<f64>,
    pub dark_corrected: bool,
    pub label: String,
    /// Bands whose value was raised to the [`EPS_L`] floor.
    pub floored: Vec<usize>,
}

impl IlluminationCurve {
    pub fn new(
        wavelengths: Vec<f32>,
        values: Vec<f64>,
        dark_corrected: bool,
        label: impl Into<String>,
    ) -> Result<Self> {
        if wavelengths.len() != values.len() || values.is_empty() {
            return Err(Error::DimMismatch(format!(
                "{} wavelengths for {} values",
                wavelengths.len(),
                values.len()
            )));
        }
        if let Some(i) = wavelengths.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::NonMonotonicWavelengths { index: i + 1 });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Csv("illumination values must be finite".into()));
        }
        Ok(Self { wavelengths, values, dark_corrected, label: label.into(), floored: Vec::new() })
    }

    /// A spectrally flat curve of height `value` on the grid of `cube`.
    pub fn flat(cube: &HyperCube, value: f64, label: impl Into<String>) -> Self {
        Self {
            wavelengths: cube.wavelengths().to_vec(),
            values: vec![value; cube.bands()],
            dark_corrected: true,
            label: label.into(),
            floored: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Raises every value below [`EPS_L`] to the floor and records which bands were hit.
    pub fn apply_floor(mut self) -> Self {
        self.floored.clear();
        for (b, v) in self.values.iter_mut().enumerate() {
            if *v < EPS_L {
                *v = EPS_L;
                self.floored.push(b);
            }
        }
        self
    }

    /// True when at least one band had to be floored.
    pub fn is_degenerate(&self) -> bool {
        !self.floored.is_empty()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= factor);
        out
    }

    fn check_grid(&self, cube: &HyperCube) -> Result<()> {
        let same = self.wavelengths.len() == cube.bands()
            && self
                .wavelengths
                .iter()
                .zip(cube.wavelengths())
                .all(|(a, b)| a.to_bits() == b.to_bits());
        if same {
            Ok(())
        } else {
            Err(Error::WavelengthMismatch)
        }
    }

    /// Writes `wavelength_nm,value` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["wavelength_nm", "value"]).map_err(csv_err)?;
        for (nm, v) in self.wavelengths.iter().zip(&self.values) {
            w.write_record([nm.to_string(), v.to_string()]).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a `wavelength_nm,value` table. Curves on disk are taken to be
    /// finalised measurements, so the result is marked dark corrected.
    pub fn read_csv<R: Read>(reader: R, label: impl Into<String>) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers().map_err(csv_err)?.clone();
        if headers.len() != 2 || &headers[0] != "wavelength_nm" || &headers[1] != "value" {
            return Err(Error::Csv(format!("unexpected header {headers:?}")));
        }
        let mut wavelengths = Vec::new();
        let mut values = Vec::new();
        for record in r.records() {
            let record = record.map_err(csv_err)?;
            let field = |i: usize| {
                record
                    .get(i)
                    .ok_or_else(|| Error::Csv("short row".into()))
                    .map(str::trim)
            };
            wavelengths.push(field(0)?.parse::<f32>().map_err(|e| Error::Csv(e.to_string()))?);
            values.push(field(1)?.parse::<f64>().map_err(|e| Error::Csv(e.to_string()))?);
        }
        Self::new(wavelengths, values, true, label)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(File::create(path)?)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let label = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Self::read_csv(File::open(path)?, label)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Csv(e.to_string())
}

/// Half-open pixel rectangle `[row0, row1) × [col0, col1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Roi {
    pub row0: usize,
    pub col0: usize,
    pub row1: usize,
    pub col1: usize,
}

impl Roi {
    pub fn new(row0: usize, col0: usize, row1: usize, col1: usize) -> Self {
        Self { row0, col0, row1, col1 }
    }

    pub fn full(cube: &HyperCube) -> Self {
        Self::new(0, 0, cube.height(), cube.width())
    }

    pub fn area(&self) -> usize {
        self.row1.saturating_sub(self.row0) * self.col1.saturating_sub(self.col0)
    }

    fn check(&self, cube: &HyperCube) -> Result<()> {
        if self.row0 >= self.row1
            || self.col0 >= self.col1
            || self.row1 > cube.height()
            || self.col1 > cube.width()
        {
            return Err(Error::EmptyRoi);
        }
        Ok(())
    }
}

fn check_pair(a: &HyperCube, b: &HyperCube) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::DimMismatch(format!(
            "{}×{}×{} vs {}×{}×{}",
            a.height(),
            a.width(),
            a.bands(),
            b.height(),
            b.width(),
            b.bands()
        )));
    }
    if !a.same_grid(b) {
        return Err(Error::WavelengthMismatch);
    }
    Ok(())
}

/// `max(frame − dark, 0)` elementwise.
pub fn subtract_dark(frame: &HyperCube, dark: &HyperCube) -> Result<HyperCube> {
    check_pair(frame, dark)?;
    let data = frame
        .data()
        .iter()
        .zip(dark.data())
        .map(|(&f, &d)| ((f as f64 - d as f64).max(0.0)) as f32)
        .collect();
    frame.with_data(data, frame.kind())
}

/// Illumination read off a white reference: the ROI mean of `white − dark`
/// per band, floored at [`EPS_L`].
pub fn measure_illumination(
    white_frame: &HyperCube,
    dark: &HyperCube,
    roi: &Roi,
) -> Result<IlluminationCurve> {
    check_pair(white_frame, dark)?;
    roi.check(white_frame)?;
    let area = roi.area() as f64;
    let mut values = Vec::with_capacity(white_frame.bands());
    for b in 0..white_frame.bands() {
        let mut sum = 0f64;
        for r in roi.row0..roi.row1 {
            for c in roi.col0..roi.col1 {
                sum += white_frame.get(b, r, c) as f64 - dark.get(b, r, c) as f64;
            }
        }
        values.push(sum / area);
    }
    Ok(IlluminationCurve {
        wavelengths: white_frame.wavelengths().to_vec(),
        values,
        dark_corrected: true,
        label: String::from("measured"),
        floored: Vec::new(),
    }
    .apply_floor())
}

/// Ratio calibration `l · I / L` per band. Negative inputs map to 0.
pub fn calibrate(cube: &HyperCube, illum: &IlluminationCurve, l: f64) -> Result<HyperCube> {
    illum.check_grid(cube)?;
    if !illum.dark_corrected {
        return Err(Error::NotDarkCorrected);
    }
    let n = cube.pixels();
    let mut data = Vec::with_capacity(cube.data().len());
    for (b, &lb) in illum.values.iter().enumerate() {
        let gain = l / lb;
        data.extend(cube.data()[b * n..(b + 1) * n].iter().map(|&v| ((v as f64 * gain).max(0.0)) as f32));
    }
    cube.with_data(data, CubeKind::Reflectance)
}

/// Reference reflectance from an asynchronous capture pair, each with its
/// own dark frame.
pub fn ground_truth(
    scene_raw: &HyperCube,
    scene_dark: &HyperCube,
    illum_raw: &HyperCube,
    illum_dark: &HyperCube,
    roi: &Roi,
) -> Result<HyperCube> {
    let scene = subtract_dark(scene_raw, scene_dark)?;
    let illum = measure_illumination(illum_raw, illum_dark, roi)?;
    calibrate(&scene, &illum, 1.0)
}

/// Re-lights a reflectance cube: `R · L` per band.
pub fn composite(reflectance: &HyperCube, illum: &IlluminationCurve) -> Result<HyperCube> {
    illum.check_grid(reflectance)?;
    let n = reflectance.pixels();
    let mut data = Vec::with_capacity(reflectance.data().len());
    for (b, &lb) in illum.values.iter().enumerate() {
        data.extend(reflectance.data()[b * n..(b + 1) * n].iter().map(|&v| (v as f64 * lb) as f32));
    }
    reflectance.with_data(data, CubeKind::Radiance)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn wl(n: usize) -> Vec<f32> {
        (0..n).map(|i| 400.0 + 50.0 * i as f32).collect()
    }

    fn random_cube(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize, kind: CubeKind) -> HyperCube {
        HyperCube::from_fn(h, w, wl(c), kind, |_, _, _| rng.random::<f32>()).unwrap()
    }

    #[test]
    fn zero_dark_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let frame = random_cube(&mut rng, 3, 3, 2, CubeKind::Radiance);
        let dark = HyperCube::filled(3, 3, wl(2), 0.0, CubeKind::DarkFrame).unwrap();
        assert_eq!(subtract_dark(&frame, &dark).unwrap(), frame);
    }

    #[test]
    fn dark_subtraction_clamps_and_matches_oracle() {
        let frame = HyperCube::filled(1, 1, wl(1), 0.3, CubeKind::Radiance).unwrap();
        let dark = HyperCube::filled(1, 1, wl(1), 0.5, CubeKind::DarkFrame).unwrap();
        assert_eq!(subtract_dark(&frame, &dark).unwrap().data(), &[0.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let frame = random_cube(&mut rng, 4, 4, 3, CubeKind::Radiance);
        let dark = random_cube(&mut rng, 4, 4, 3, CubeKind::DarkFrame);
        let out = subtract_dark(&frame, &dark).unwrap();
        for b in 0..3 {
            for r in 0..4 {
                for c in 0..4 {
                    let a = frame.get(b, r, c) as f64;
                    let d = dark.get(b, r, c) as f64;
                    let want = if a - d > 0.0 { a - d } else { 0.0 };
                    assert_eq!(out.get(b, r, c), want as f32);
                    assert!(out.get(b, r, c) <= frame.get(b, r, c));
                }
            }
        }
    }

    #[test]
    fn dark_subtraction_rejects_mismatch() {
        let a = HyperCube::filled(2, 2, wl(2), 0.0, CubeKind::Radiance).unwrap();
        let b = HyperCube::filled(2, 3, wl(2), 0.0, CubeKind::DarkFrame).unwrap();
        assert!(matches!(subtract_dark(&a, &b), Err(Error::DimMismatch(_))));
    }

    #[test]
    fn constant_white_reference() {
        let white = HyperCube::filled(4, 4, wl(3), 0.9, CubeKind::Radiance).unwrap();
        let dark = HyperCube::filled(4, 4, wl(3), 0.1, CubeKind::DarkFrame).unwrap();
        let curve = measure_illumination(&white, &dark, &Roi::new(1, 1, 3, 4)).unwrap();
        assert!(curve.dark_corrected && !curve.is_degenerate());
        for v in &curve.values {
            assert!((v - 0.8).abs() < 1e-7);
        }
    }

    #[test]
    fn degenerate_white_reference_is_floored() {
        let white = HyperCube::filled(2, 2, wl(3), 0.2, CubeKind::Radiance).unwrap();
        let dark = HyperCube::filled(2, 2, wl(3), 0.3, CubeKind::DarkFrame).unwrap();
        let curve = measure_illumination(&white, &dark, &Roi::full(&white)).unwrap();
        assert!(curve.values.iter().all(|&v| v == EPS_L));
        assert_eq!(curve.floored, vec![0, 1, 2]);
        assert!(curve.is_degenerate());
    }

    #[test]
    fn roi_mean_matches_accumulation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let white = random_cube(&mut rng, 4, 5, 3, CubeKind::Radiance).map(|v| v + 1.0);
        let dark = random_cube(&mut rng, 4, 5, 3, CubeKind::DarkFrame).map(|v| v * 0.1);
        let roi = Roi::new(1, 2, 3, 4);
        let curve = measure_illumination(&white, &dark, &roi).unwrap();
        for b in 0..3 {
            let cells = [(1, 2), (1, 3), (2, 2), (2, 3)];
            let mut acc = 0.0;
            for (r, c) in cells {
                acc += white.get(b, r, c) as f64 - dark.get(b, r, c) as f64;
            }
            assert!((curve.values[b] - acc / 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bad_roi_rejected() {
        let white = HyperCube::filled(2, 2, wl(1), 1.0, CubeKind::Radiance).unwrap();
        let dark = HyperCube::filled(2, 2, wl(1), 0.0, CubeKind::DarkFrame).unwrap();
        for roi in [Roi::new(1, 1, 1, 2), Roi::new(0, 0, 3, 2)] {
            assert!(matches!(measure_illumination(&white, &dark, &roi), Err(Error::EmptyRoi)));
        }
    }

    #[test]
    fn calibrate_single_division_and_identity() {
        let cube = HyperCube::filled(1, 1, wl(1), 0.4, CubeKind::Radiance).unwrap();
        let curve = IlluminationCurve::flat(&cube, 0.8, "x");
        assert_eq!(calibrate(&cube, &curve, 1.0).unwrap().data(), &[0.5]);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cube = random_cube(&mut rng, 3, 2, 4, CubeKind::Radiance);
        let unit = IlluminationCurve::flat(&cube, 1.0, "unit");
        let out = calibrate(&cube, &unit, 1.0).unwrap();
        assert_eq!(out.data(), cube.data());
        assert_eq!(out.kind(), CubeKind::Reflectance);
    }

    #[test]
    fn calibrate_preconditions() {
        let cube = HyperCube::filled(1, 1, wl(2), 0.4, CubeKind::Radiance).unwrap();
        let mut curve = IlluminationCurve::flat(&cube, 1.0, "raw");
        curve.dark_corrected = false;
        assert!(matches!(calibrate(&cube, &curve, 1.0), Err(Error::NotDarkCorrected)));
        let other = IlluminationCurve::new(vec![400.0, 460.0], vec![1.0, 1.0], true, "o").unwrap();
        assert!(matches!(calibrate(&cube, &other, 1.0), Err(Error::WavelengthMismatch)));
    }

    #[test]
    fn composite_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let refl = random_cube(&mut rng, 5, 4, 6, CubeKind::Reflectance);
        let values = (0..6).map(|_| rng.random_range(0.05..2.0)).collect();
        let curve = IlluminationCurve::new(wl(6), values, true, "r").unwrap();
        let back = calibrate(&composite(&refl, &curve).unwrap(), &curve, 1.0).unwrap();
        for (a, b) in back.data().iter().zip(refl.data()) {
            assert!((a - b).abs() as f64 <= 1e-6 * (b.abs() as f64).max(1e-30));
        }
    }

    #[test]
    fn composite_ratios_are_constant_across_pixels() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let refl = random_cube(&mut rng, 4, 4, 5, CubeKind::Reflectance).map(|v| 0.05 + 0.9 * v);
        let curves: Vec<_> = (0..10)
            .map(|i| {
                let values = (0..5).map(|_| rng.random_range(0.1..1.5)).collect();
                IlluminationCurve::new(wl(5), values, true, format!("L{i}")).unwrap()
            })
            .collect();
        let outs: Vec<_> = curves.iter().map(|c| composite(&refl, c).unwrap()).collect();
        for i in 0..outs.len() {
            for j in 0..outs.len() {
                if i == j {
                    continue;
                }
                assert_ne!(outs[i], outs[j]);
                for b in 0..5 {
                    let want = curves[i].values[b] / curves[j].values[b];
                    for p in 0..16 {
                        let got = outs[i].band(b)[p] as f64 / outs[j].band(b)[p] as f64;
                        assert!((got - want).abs() <= 1e-6 * want);
                    }
                }
            }
        }
    }

    #[test]
    fn ground_truth_reduces_to_ratio_without_dark() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let scene = random_cube(&mut rng, 3, 3, 3, CubeKind::Radiance);
        let white = random_cube(&mut rng, 3, 3, 3, CubeKind::Radiance).map(|v| v + 0.5);
        let zero = HyperCube::filled(3, 3, wl(3), 0.0, CubeKind::DarkFrame).unwrap();
        let roi = Roi::new(0, 0, 2, 2);
        let gt = ground_truth(&scene, &zero, &white, &zero, &roi).unwrap();
        let direct = calibrate(&scene, &measure_illumination(&white, &zero, &roi).unwrap(), 1.0).unwrap();
        assert_eq!(gt, direct);
    }

    #[test]
    fn ground_truth_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let scene = random_cube(&mut rng, 3, 4, 3, CubeKind::Radiance).map(|v| v + 0.2);
            let sdark = random_cube(&mut rng, 3, 4, 3, CubeKind::DarkFrame).map(|v| v * 0.3);
            let white = random_cube(&mut rng, 3, 4, 3, CubeKind::Radiance).map(|v| v + 0.6);
            let wdark = random_cube(&mut rng, 3, 4, 3, CubeKind::DarkFrame).map(|v| v * 0.1);
            let roi = Roi::new(0, 1, 2, 4);
            let gt = ground_truth(&scene, &sdark, &white, &wdark, &roi).unwrap();
            for b in 0..3 {
                let mut den = 0.0;
                for r in 0..2 {
                    for c in 1..4 {
                        den += white.get(b, r, c) as f64 - wdark.get(b, r, c) as f64;
                    }
                }
                den /= 6.0;
                for r in 0..3 {
                    for c in 0..4 {
                        let num = (scene.get(b, r, c) as f64 - sdark.get(b, r, c) as f64).max(0.0);
                        let want = num / den;
                        let got = gt.get(b, r, c) as f64;
                        assert!((got - want).abs() <= 1e-6 * want.max(1e-12), "{got} vs {want}");
                    }
                }
            }
        }
    }

    #[test]
    fn csv_round_trip() {
        let curve = IlluminationCurve::new(vec![400.0, 410.5], vec![0.25, 1.0 / 3.0], true, "c").unwrap();
        let mut buf = Vec::new();
        curve.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("wavelength_nm,value\n"));
        let back = IlluminationCurve::read_csv(buf.as_slice(), "c").unwrap();
        assert_eq!(back, curve);
        assert!(IlluminationCurve::read_csv("nm,v\n1,2\n".as_bytes(), "x").is_err());
    }
}

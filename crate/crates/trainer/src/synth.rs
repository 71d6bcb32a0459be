//! Procedural reflectance scenes and illumination archetypes.

use std::fmt;
use std::str::FromStr;

use hsical_core::radiometry::{composite, ground_truth, subtract_dark};
use hsical_core::{CubeKind, HyperCube, IlluminationCurve, Roi};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Parametric illumination families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IllumKind {
    Flat,
    /// Incandescent-like Planck curve at [`RAMP_KELVIN`], peak-normalised.
    Ramp,
    /// Flat light through a magenta filter that removes a band around 550 nm.
    Notch,
    /// Flat light at [`LOW_LIGHT_LEVEL`].
    LowLight,
}

pub const RAMP_KELVIN: f64 = 2856.0;
pub const LOW_LIGHT_LEVEL: f64 = 0.2;
const NOTCH_CENTER_NM: f64 = 550.0;
const NOTCH_SIGMA_NM: f64 = 40.0;
const NOTCH_DEPTH: f64 = 0.8;

impl IllumKind {
    pub const ALL: [IllumKind; 4] = [IllumKind::Flat, IllumKind::Ramp, IllumKind::Notch, IllumKind::LowLight];

    pub fn label(self) -> &'static str {
        match self {
            IllumKind::Flat => "flat",
            IllumKind::Ramp => "ramp",
            IllumKind::Notch => "notch",
            IllumKind::LowLight => "lowlight",
        }
    }

    pub fn value(self, nm: f64, peak: f64) -> f64 {
        match self {
            IllumKind::Flat => 1.0,
            IllumKind::Ramp => planck(nm) / peak,
            IllumKind::Notch => {
                1.0 - NOTCH_DEPTH * (-(nm - NOTCH_CENTER_NM).powi(2) / (2.0 * NOTCH_SIGMA_NM.powi(2))).exp()
            }
            IllumKind::LowLight => LOW_LIGHT_LEVEL,
        }
    }

    /// The archetype sampled on `wavelengths`.
    pub fn curve(self, wavelengths: &[f32]) -> IlluminationCurve {
        let peak = wavelengths.iter().map(|&w| planck(w as f64)).fold(0.0, f64::max);
        let values = wavelengths.iter().map(|&w| self.value(w as f64, peak)).collect();
        IlluminationCurve::new(wavelengths.to_vec(), values, true, self.label())
            .expect("archetype curves are finite on a valid grid")
            .apply_floor()
    }
}

/// Spectral radiance shape of a black body (constant factors dropped).
fn planck(nm: f64) -> f64 {
    const HC_OVER_K: f64 = 1.438_776_877e7; // nm·K
    let x = HC_OVER_K / (nm * RAMP_KELVIN);
    1.0 / (nm.powi(5) * (x.exp() - 1.0))
}

impl fmt::Display for IllumKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for IllumKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        IllumKind::ALL
            .into_iter()
            .find(|k| k.label().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown illumination {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_scenes: usize,
    pub size: usize,
    pub bands: usize,
    pub wl_lo: f64,
    pub wl_hi: f64,
    pub n_blobs: usize,
    pub illums: Vec<IllumKind>,
    /// Upper bound of the uniform dark current; 0 disables the dark pipeline.
    pub noise_dark: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_scenes: 16,
            size: 64,
            bands: 8,
            wl_lo: 400.0,
            wl_hi: 1000.0,
            n_blobs: 6,
            illums: IllumKind::ALL.to_vec(),
            noise_dark: 0.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 || self.bands == 0 || self.n_blobs == 0 {
            return Err(Error::InvalidConfig("size, bands and n_blobs must be ≥ 1".into()));
        }
        if !(self.wl_lo < self.wl_hi) {
            return Err(Error::InvalidConfig(format!("wavelength range {}–{} is empty", self.wl_lo, self.wl_hi)));
        }
        if !(self.noise_dark >= 0.0 && self.noise_dark.is_finite()) {
            return Err(Error::InvalidConfig("noise_dark must be finite and ≥ 0".into()));
        }
        Ok(())
    }

    /// Band centres evenly spaced over `[wl_lo, wl_hi]`.
    pub fn wavelengths(&self) -> Vec<f32> {
        if self.bands == 1 {
            return vec![((self.wl_lo + self.wl_hi) / 2.0) as f32];
        }
        let step = (self.wl_hi - self.wl_lo) / (self.bands - 1) as f64;
        (0..self.bands).map(|i| (self.wl_lo + step * i as f64) as f32).collect()
    }
}

/// A synthetic reflectance scene and its region map.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub index: usize,
    pub name: String,
    pub reflectance: HyperCube,
    /// Region id per pixel, row-major.
    pub regions: Vec<usize>,
}

fn scene_rng(seed: u64, index: usize, salt: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((index as u64) << 8) | salt);
    rng
}

fn random_spectrum(rng: &mut ChaCha8Rng, wavelengths: &[f32], lo: f64, hi: f64) -> Vec<f32> {
    let base = rng.random_range(0.05..0.3);
    let bumps: Vec<(f64, f64, f64)> = (0..rng.random_range(1..=3))
        .map(|_| (rng.random_range(0.2..0.7), rng.random_range(lo..=hi), rng.random_range(25.0..120.0)))
        .collect();
    wavelengths
        .iter()
        .map(|&w| {
            let w = w as f64;
            let v = base + bumps.iter().map(|(a, c, s)| a * (-(w - c).powi(2) / (2.0 * s * s)).exp()).sum::<f64>();
            v.clamp(0.0, 1.0) as f32
        })
        .collect()
}

/// Voronoi regions, each filled with one smooth random spectrum.
/// Deterministic in `(cfg.seed, index)`.
pub fn synth_scene(cfg: &SynthConfig, index: usize) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = scene_rng(cfg.seed, index, 0);
    let wl = cfg.wavelengths();
    let n = cfg.size;
    let centres: Vec<(f64, f64)> =
        (0..cfg.n_blobs).map(|_| (rng.random_range(0.0..n as f64), rng.random_range(0.0..n as f64))).collect();
    let spectra: Vec<Vec<f32>> = (0..cfg.n_blobs).map(|_| random_spectrum(&mut rng, &wl, cfg.wl_lo, cfg.wl_hi)).collect();
    let regions: Vec<usize> = (0..n * n)
        .map(|px| {
            let (r, c) = ((px / n) as f64 + 0.5, (px % n) as f64 + 0.5);
            let d = |k: usize| (centres[k].0 - r).powi(2) + (centres[k].1 - c).powi(2);
            (0..cfg.n_blobs).min_by(|&a, &b| d(a).total_cmp(&d(b))).unwrap()
        })
        .collect();
    let reflectance =
        HyperCube::from_fn(n, n, wl, CubeKind::Reflectance, |b, r, c| spectra[regions[r * n + c]][b])?;
    Ok(Scene { index, name: format!("scene{index:03}"), reflectance, regions })
}

/// One training or evaluation example.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub scene: usize,
    pub label: String,
    /// Dark-corrected radiance as the sensor records it.
    pub input: HyperCube,
    pub gt: HyperCube,
    /// Illumination that relates `input` to `gt`.
    pub illum: IlluminationCurve,
}

impl Pair {
    pub fn name(&self) -> String {
        format!("scene{:03}_{}", self.scene, self.label)
    }
}

fn dark_frame(rng: &mut ChaCha8Rng, like: &HyperCube, level: f64) -> Result<HyperCube> {
    let data = (0..like.data().len()).map(|_| rng.random_range(0.0..=level) as f32).collect();
    Ok(like.with_data(data, CubeKind::DarkFrame)?)
}

fn make_pair(cfg: &SynthConfig, scene: &Scene, k: usize, kind: IllumKind) -> Result<Pair> {
    let r = &scene.reflectance;
    let nominal = kind.curve(r.wavelengths());
    let lit = composite(r, &nominal)?;
    if cfg.noise_dark == 0.0 {
        return Ok(Pair { scene: scene.index, label: kind.label().into(), input: lit, gt: r.clone(), illum: nominal });
    }
    let mut rng = scene_rng(cfg.seed, scene.index, 1 + k as u64);
    let scene_dark = dark_frame(&mut rng, r, cfg.noise_dark)?;
    let illum_dark = dark_frame(&mut rng, r, cfg.noise_dark)?;
    let add = |a: &HyperCube, d: &HyperCube| {
        let data = a.data().iter().zip(d.data()).map(|(x, y)| x + y).collect();
        a.with_data(data, CubeKind::Radiance)
    };
    let white = HyperCube::filled(r.height(), r.width(), r.wavelengths().to_vec(), 1.0, CubeKind::Reflectance)?;
    let scene_raw = add(&lit, &scene_dark)?;
    let white_raw = add(&composite(&white, &nominal)?, &illum_dark)?;
    let roi = Roi::full(r);
    let gt = ground_truth(&scene_raw, &scene_dark, &white_raw, &illum_dark, &roi)?;
    let input = subtract_dark(&scene_raw, &scene_dark)?;
    let mut illum = hsical_core::radiometry::measure_illumination(&white_raw, &illum_dark, &roi)?;
    illum.label = kind.label().into();
    Ok(Pair { scene: scene.index, label: kind.label().into(), input, gt, illum })
}

/// Every scene under every configured illumination, scene-major.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<Vec<Pair>> {
    cfg.validate()?;
    if cfg.illums.is_empty() {
        return Err(Error::InvalidConfig("no illuminations configured".into()));
    }
    let per_scene: Vec<Vec<Pair>> = (0..cfg.n_scenes)
        .into_par_iter()
        .map(|i| {
            let scene = synth_scene(cfg, i)?;
            cfg.illums.iter().enumerate().map(|(k, &kind)| make_pair(cfg, &scene, k, kind)).collect()
        })
        .collect::<Result<_>>()?;
    Ok(per_scene.into_iter().flatten().collect())
}

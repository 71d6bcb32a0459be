//! Scene-level splits, on-disk layout and cube ↔ tensor conversion.

use std::fs;
use std::path::Path;

use hsical_core::hypercube::{load_cube, save_cube};
use hsical_core::{HyperCube, IlluminationCurve};
use hsical_tensor::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::Pair;

pub const MANIFEST: &str = "pairs.csv";

/// Scene indices per split; disjoint and covering `0..n_scenes`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles scene indices with `seed` and cuts them by `fractions`
/// (train, val, test). Rounding remainders go to the training split.
pub fn split_scenes(n_scenes: usize, fractions: [f64; 3], seed: u64) -> Result<Splits> {
    let total: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !(*f >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!("split fractions {fractions:?} must be ≥ 0 and sum to 1")));
    }
    let mut order: Vec<usize> = (0..n_scenes).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = (fractions[1] * n_scenes as f64).round() as usize;
    let n_test = ((fractions[2] * n_scenes as f64).round() as usize).min(n_scenes - n_val.min(n_scenes));
    let n_val = n_val.min(n_scenes);
    let n_train = n_scenes - n_val - n_test;
    let sorted = |s: &[usize]| {
        let mut v = s.to_vec();
        v.sort_unstable();
        v
    };
    Ok(Splits {
        train: sorted(&order[..n_train]),
        val: sorted(&order[n_train..n_train + n_val]),
        test: sorted(&order[n_train + n_val..]),
    })
}

/// Pairs whose scene is listed in `scenes`, in dataset order.
pub fn select<'a>(pairs: &'a [Pair], scenes: &[usize]) -> Vec<&'a Pair> {
    pairs.iter().filter(|p| scenes.contains(&p.scene)).collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    scene: usize,
    label: String,
    input: String,
    gt: String,
    illum: String,
}

/// Writes `<name>_input.hsc`, `<name>_gt.hsc`, `<name>_illum.csv` per pair
/// and a `pairs.csv` manifest.
pub fn save_dataset(pairs: &[Pair], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join(MANIFEST))?;
    for p in pairs {
        let name = p.name();
        let row = ManifestRow {
            scene: p.scene,
            label: p.label.clone(),
            input: format!("{name}_input.hsc"),
            gt: format!("{name}_gt.hsc"),
            illum: format!("{name}_illum.csv"),
        };
        save_cube(&p.input, dir.join(&row.input))?;
        save_cube(&p.gt, dir.join(&row.gt))?;
        p.illum.save_csv(dir.join(&row.illum))?;
        w.serialize(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<Pair>> {
    let dir = dir.as_ref();
    let mut r = csv::Reader::from_path(dir.join(MANIFEST))?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        let row: ManifestRow = row?;
        let mut illum = IlluminationCurve::load_csv(dir.join(&row.illum))?;
        illum.label = row.label.clone();
        out.push(Pair {
            scene: row.scene,
            label: row.label,
            input: load_cube(dir.join(&row.input))?,
            gt: load_cube(dir.join(&row.gt))?,
            illum,
        });
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset(format!("{} lists no pairs", dir.join(MANIFEST).display())));
    }
    Ok(out)
}

/// Window of `size×size` pixels starting at `(row, col)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Crop {
    pub row: usize,
    pub col: usize,
    pub size: usize,
}

impl Crop {
    pub fn centred(cube: &HyperCube, size: usize) -> Self {
        Self { row: (cube.height() - size) / 2, col: (cube.width() - size) / 2, size }
    }
}

/// Stacks equally sized crops of `cubes` into `[N, C, size, size]`.
pub fn to_tensor(cubes: &[(&HyperCube, Crop)]) -> Result<Tensor> {
    let Some((first, crop0)) = cubes.first() else {
        return Err(Error::EmptyDataset("no cubes to stack".into()));
    };
    let (c, s) = (first.bands(), crop0.size);
    let mut data = Vec::with_capacity(cubes.len() * c * s * s);
    for (cube, crop) in cubes {
        if cube.bands() != c || crop.size != s || crop.row + s > cube.height() || crop.col + s > cube.width() {
            return Err(Error::InvalidConfig(format!(
                "crop {crop:?} does not fit a {}×{}×{} cube",
                cube.height(),
                cube.width(),
                cube.bands()
            )));
        }
        for b in 0..c {
            for r in crop.row..crop.row + s {
                let start = cube.index(b, r, crop.col);
                data.extend(cube.data()[start..start + s].iter().map(|&v| v as f64));
            }
        }
    }
    Ok(Tensor::new(vec![cubes.len(), c, s, s], data)?)
}

/// Sample `n` of `[N, C, H, W]` as a cube on the grid of `like`.
pub fn from_tensor(t: &Tensor, n: usize, like: &HyperCube, kind: hsical_core::CubeKind) -> Result<HyperCube> {
    let s = t.shape();
    if s.len() != 4 || n >= s[0] || s[1] != like.bands() {
        return Err(Error::InvalidConfig(format!("tensor {s:?} does not match the reference cube")));
    }
    let len = s[1] * s[2] * s[3];
    let data = t.data()[n * len..(n + 1) * len].iter().map(|&v| v as f32).collect();
    Ok(HyperCube::new(s[2], s[3], like.wavelengths().to_vec(), data, kind)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_are_disjoint_and_cover() {
        for n in [1, 3, 7, 16, 32, 100] {
            let s = split_scenes(n, [0.7, 0.15, 0.15], 4).unwrap();
            let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..n).collect::<Vec<_>>());
            assert!(s.train.len() >= s.val.len());
        }
        let s = split_scenes(20, [0.7, 0.15, 0.15], 4).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (14, 3, 3));
        assert_eq!(s, split_scenes(20, [0.7, 0.15, 0.15], 4).unwrap());
        assert!(split_scenes(5, [0.5, 0.5, 0.5], 0).is_err());
    }

    #[test]
    fn tensor_round_trip() {
        let wl = vec![400.0, 500.0];
        let cube = HyperCube::from_fn(4, 4, wl, hsical_core::CubeKind::Radiance, |b, r, c| (b * 16 + r * 4 + c) as f32)
            .unwrap();
        let full = to_tensor(&[(&cube, Crop { row: 0, col: 0, size: 4 })]).unwrap();
        assert_eq!(from_tensor(&full, 0, &cube, cube.kind()).unwrap(), cube);
        let part = to_tensor(&[(&cube, Crop { row: 1, col: 2, size: 2 })]).unwrap();
        assert_eq!(part.data(), &[6.0, 7.0, 10.0, 11.0, 22.0, 23.0, 26.0, 27.0]);
        assert!(to_tensor(&[(&cube, Crop { row: 3, col: 0, size: 2 })]).is_err());
    }
}

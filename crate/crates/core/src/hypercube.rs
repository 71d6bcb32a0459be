//! Band-major hyperspectral cube, its on-disk container and band resampling.
//!
//! Container layout (all integers and floats little-endian):
//!
//! ```text
//! "HSC1" | u32 version = 1 | u32 H | u32 W | u32 C | u8 kind
//!        | C × f32 wavelengths | H·W·C × f32 data, index (band, row, col)
//! ```

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"HSC1";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 12 + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CubeKind {
    Radiance,
    Reflectance,
    DarkFrame,
}

impl CubeKind {
    pub fn tag(self) -> u8 {
        match self {
            CubeKind::Radiance => 0,
            CubeKind::Reflectance => 1,
            CubeKind::DarkFrame => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(CubeKind::Radiance),
            1 => Ok(CubeKind::Reflectance),
            2 => Ok(CubeKind::DarkFrame),
            other => Err(Error::UnknownKind(other)),
        }
    }
}

/// An `H×W×C` radiance, reflectance or dark-current volume.
///
/// Samples are stored as `f32` in band-major order: the value at
/// `(band, row, col)` lives at `(band·H + row)·W + col`. Equality is bitwise
/// over dimensions, kind, wavelengths and samples; `bit_origin` is an
/// informational note and is ignored.
#[derive(Debug, Clone)]
pub struct HyperCube {
    height: usize,
    width: usize,
    wavelengths: Vec<f32>,
    data: Vec<f32>,
    kind: CubeKind,
    /// Source quantization note, e.g. "12-bit linear". Not persisted.
    pub bit_origin: Option<String>,
}

impl HyperCube {
    pub fn new(
        height: usize,
        width: usize,
        wavelengths: Vec<f32>,
        data: Vec<f32>,
        kind: CubeKind,
    ) -> Result<Self> {
        let bands = wavelengths.len();
        if height == 0 || width == 0 || bands == 0 {
            return Err(Error::InvalidDims(format!(
                "{height}×{width}×{bands} has an empty dimension"
            )));
        }
        check_wavelengths(&wavelengths)?;
        let expected = height
            .checked_mul(width)
            .and_then(|hw| hw.checked_mul(bands))
            .ok_or_else(|| Error::InvalidDims("size overflows usize".into()))?;
        if data.len() != expected {
            return Err(Error::InvalidDims(format!(
                "data holds {} samples, {height}×{width}×{bands} needs {expected}",
                data.len()
            )));
        }
        if kind == CubeKind::Reflectance && data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDims(
                "reflectance cube contains non-finite values".into(),
            ));
        }
        Ok(Self { height, width, wavelengths, data, kind, bit_origin: None })
    }

    /// Builds a cube by evaluating `f(band, row, col)` for every cell.
    pub fn from_fn(
        height: usize,
        width: usize,
        wavelengths: Vec<f32>,
        kind: CubeKind,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * wavelengths.len());
        for b in 0..wavelengths.len() {
            for r in 0..height {
                for c in 0..width {
                    data.push(f(b, r, c));
                }
            }
        }
        Self::new(height, width, wavelengths, data, kind)
    }

    pub fn filled(
        height: usize,
        width: usize,
        wavelengths: Vec<f32>,
        value: f32,
        kind: CubeKind,
    ) -> Result<Self> {
        let n = height * width * wavelengths.len();
        Self::new(height, width, wavelengths, vec![value; n], kind)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.wavelengths.len()
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn kind(&self) -> CubeKind {
        self.kind
    }

    pub fn wavelengths(&self) -> &[f32] {
        &self.wavelengths
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, band: usize, row: usize, col: usize) -> usize {
        (band * self.height + row) * self.width + col
    }

    #[inline]
    pub fn get(&self, band: usize, row: usize, col: usize) -> f32 {
        self.data[self.index(band, row, col)]
    }

    /// Samples of one band, row-major.
    pub fn band(&self, band: usize) -> &[f32] {
        let n = self.pixels();
        &self.data[band * n..(band + 1) * n]
    }

    /// Spectrum of the pixel at flat spatial index `pixel`.
    pub fn spectrum(&self, pixel: usize) -> impl Iterator<Item = f32> + '_ {
        let n = self.pixels();
        (0..self.bands()).map(move |b| self.data[b * n + pixel])
    }

    /// Spatial mean of every band, accumulated sequentially in `f64`.
    pub fn band_means(&self) -> Vec<f64> {
        (0..self.bands())
            .map(|b| self.band(b).iter().map(|&v| v as f64).sum::<f64>() / self.pixels() as f64)
            .collect()
    }

    pub fn same_shape(&self, other: &HyperCube) -> bool {
        self.height == other.height && self.width == other.width && self.bands() == other.bands()
    }

    pub fn same_grid(&self, other: &HyperCube) -> bool {
        self.same_shape(other) && bits_eq(&self.wavelengths, &other.wavelengths)
    }

    /// Copy with the same geometry and wavelengths but new samples and kind.
    pub fn with_data(&self, data: Vec<f32>, kind: CubeKind) -> Result<Self> {
        let mut cube = Self::new(self.height, self.width, self.wavelengths.clone(), data, kind)?;
        cube.bit_origin = self.bit_origin.clone();
        Ok(cube)
    }

    pub fn with_kind(mut self, kind: CubeKind) -> Self {
        self.kind = kind;
        self
    }

    /// Elementwise map keeping geometry and kind.
    pub fn map(&self, mut f: impl FnMut(f32) -> f32) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v = f(*v));
        out
    }

    /// Serialises the cube into the `HSC1` container.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf =
            Vec::with_capacity(HEADER_LEN + 4 * (self.wavelengths.len() + self.data.len()));
        buf.extend_from_slice(&MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        for dim in [self.height, self.width, self.bands()] {
            buf.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        buf.push(self.kind.tag());
        for w in &self.wavelengths {
            buf.extend_from_slice(&w.to_le_bytes());
        }
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::TruncatedPayload { expected: HEADER_LEN, found: bytes.len() });
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::TruncatedPayload { expected: HEADER_LEN, found: bytes.len() });
        }
        let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != FORMAT_VERSION {
            return Err(Error::VersionUnsupported(version));
        }
        let (height, width, bands) = (u32_at(8) as usize, u32_at(12) as usize, u32_at(16) as usize);
        let kind = CubeKind::from_tag(bytes[20])?;
        let n = height as u64 * width as u64 * bands as u64;
        let expected = HEADER_LEN as u64 + 4 * (bands as u64 + n);
        if (bytes.len() as u64) < expected {
            return Err(Error::TruncatedPayload { expected: expected as usize, found: bytes.len() });
        }
        let floats = |start: usize, count: usize| -> Vec<f32> {
            bytes[start..start + 4 * count]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect()
        };
        let wavelengths = floats(HEADER_LEN, bands);
        let data = floats(HEADER_LEN + 4 * bands, n as usize);
        Self::new(height, width, wavelengths, data, kind)
    }
}

impl PartialEq for HyperCube {
    fn eq(&self, other: &Self) -> bool {
        self.height == other.height
            && self.width == other.width
            && self.kind == other.kind
            && bits_eq(&self.wavelengths, &other.wavelengths)
            && bits_eq(&self.data, &other.data)
    }
}

fn bits_eq(a: &[f32], b: &[f32]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn check_wavelengths(wavelengths: &[f32]) -> Result<()> {
    if let Some(index) = wavelengths.iter().position(|w| !w.is_finite()) {
        return Err(Error::NonMonotonicWavelengths { index });
    }
    match wavelengths.windows(2).position(|w| w[1] <= w[0]) {
        Some(i) => Err(Error::NonMonotonicWavelengths { index: i + 1 }),
        None => Ok(()),
    }
}

pub fn load_cube(path: impl AsRef<Path>) -> Result<HyperCube> {
    HyperCube::from_bytes(&fs::read(path)?)
}

pub fn save_cube(cube: &HyperCube, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, cube.to_bytes())?;
    Ok(())
}

/// Wavelength interval with selectable endpoint semantics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandRange {
    pub lo: f64,
    pub hi: f64,
    pub lo_inclusive: bool,
    pub hi_inclusive: bool,
}

impl BandRange {
    /// Visible, `[400, 700]`.
    pub const VIS: BandRange = BandRange { lo: 400.0, hi: 700.0, lo_inclusive: true, hi_inclusive: true };
    /// Near infrared, `(700, 1000]`.
    pub const NIR: BandRange = BandRange { lo: 700.0, hi: 1000.0, lo_inclusive: false, hi_inclusive: true };
    /// Full sensor range, `[400, 1000]`.
    pub const FULL: BandRange = BandRange { lo: 400.0, hi: 1000.0, lo_inclusive: true, hi_inclusive: true };

    pub fn new(lo: f64, hi: f64, lo_inclusive: bool, hi_inclusive: bool) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::InvalidRange(format!("lo {lo} must be below hi {hi}")));
        }
        Ok(Self { lo, hi, lo_inclusive, hi_inclusive })
    }

    pub fn contains(&self, nm: f64) -> bool {
        let above = if self.lo_inclusive { nm >= self.lo } else { nm > self.lo };
        let below = if self.hi_inclusive { nm <= self.hi } else { nm < self.hi };
        above && below
    }

    /// Short name for the standard ranges, `None` otherwise.
    pub fn name(&self) -> Option<&'static str> {
        [("full", Self::FULL), ("vis", Self::VIS), ("nir", Self::NIR)]
            .into_iter()
            .find(|(_, r)| r == self)
            .map(|(n, _)| n)
    }

    /// Parses `full`, `vis`, `nir`, or an explicit `lo-hi` closed interval in nm.
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "full" => Ok(Self::FULL),
            "vis" => Ok(Self::VIS),
            "nir" => Ok(Self::NIR),
            other => {
                let (lo, hi) = other
                    .split_once('-')
                    .ok_or_else(|| Error::InvalidRange(format!("unrecognised range {s:?}")))?;
                let parse = |v: &str| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::InvalidRange(format!("unrecognised range {s:?}")))
                };
                Self::new(parse(lo)?, parse(hi)?, true, true)
            }
        }
    }
}

impl fmt::Display for BandRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let open = if self.lo_inclusive { '[' } else { '(' };
        let close = if self.hi_inclusive { ']' } else { ')' };
        write!(f, "{open}{}, {}{close} nm", self.lo, self.hi)
    }
}

/// Keeps exactly the bands whose wavelength lies in `range`.
pub fn slice_range(cube: &HyperCube, range: &BandRange) -> Result<HyperCube> {
    let keep: Vec<usize> = (0..cube.bands())
        .filter(|&b| range.contains(cube.wavelengths[b] as f64))
        .collect();
    if keep.is_empty() {
        return Err(Error::EmptySelection(range.to_string()));
    }
    if keep.len() == cube.bands() {
        return Ok(cube.clone());
    }
    let wavelengths = keep.iter().map(|&b| cube.wavelengths[b]).collect();
    let mut data = Vec::with_capacity(keep.len() * cube.pixels());
    for &b in &keep {
        data.extend_from_slice(cube.band(b));
    }
    let mut out = HyperCube::new(cube.height, cube.width, wavelengths, data, cube.kind)?;
    out.bit_origin = cube.bit_origin.clone();
    Ok(out)
}

/// Nominal centres of the 31-band visible grid, 400..=700 nm in 10 nm steps.
pub fn nominal_31() -> Vec<f32> {
    (0..31).map(|k| 400.0 + 10.0 * k as f32).collect()
}

/// Averages source bands into the 31 standard visible bins.
///
/// Bin `k` collects every source band with wavelength in
/// `[nominal_k − 5, nominal_k + 5)` nm and takes their arithmetic mean per pixel.
pub fn resample_to_31(cube: &HyperCube) -> Result<HyperCube> {
    let nominal = nominal_31();
    let n = cube.pixels();
    let mut data = Vec::with_capacity(nominal.len() * n);
    let mut acc = vec![0f64; n];
    for &centre in &nominal {
        let (lo, hi) = (centre as f64 - 5.0, centre as f64 + 5.0);
        let members: Vec<usize> = (0..cube.bands())
            .filter(|&b| {
                let w = cube.wavelengths[b] as f64;
                w >= lo && w < hi
            })
            .collect();
        if members.is_empty() {
            return Err(Error::InsufficientCoverage { nominal: centre as f64 });
        }
        acc.iter_mut().for_each(|a| *a = 0.0);
        for &b in &members {
            for (a, &v) in acc.iter_mut().zip(cube.band(b)) {
                *a += v as f64;
            }
        }
        let count = members.len() as f64;
        data.extend(acc.iter().map(|a| (a / count) as f32));
    }
    let mut out = HyperCube::new(cube.height, cube.width, nominal, data, cube.kind)?;
    out.bit_origin = cube.bit_origin.clone();
    Ok(out)
}

//! Reference-based quality metrics for calibrated cubes.
//!
//! All reductions run sequentially in `f64` in storage order, so results are
//! bitwise reproducible.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hypercube::{slice_range, BandRange, HyperCube};
use crate::EPS_L;

/// Reported PSNR of a band with zero error.
pub const PSNR_CAP_DB: f64 = 99.0;
/// Pixels whose spectrum norm falls below this are excluded from SAM.
pub const SAM_MIN_NORM: f64 = 1e-9;

fn check_pair(gt: &HyperCube, est: &HyperCube) -> Result<()> {
    if !gt.same_shape(est) {
        return Err(Error::DimMismatch(format!(
            "gt {}×{}×{} vs est {}×{}×{}",
            gt.height(),
            gt.width(),
            gt.bands(),
            est.height(),
            est.width(),
            est.bands()
        )));
    }
    Ok(())
}

/// Per-band `‖gt_k − est_k‖² / (H·W)`.
pub fn band_mse(gt: &HyperCube, est: &HyperCube) -> Result<Vec<f64>> {
    check_pair(gt, est)?;
    let n = gt.pixels() as f64;
    Ok((0..gt.bands())
        .map(|b| {
            gt.band(b)
                .iter()
                .zip(est.band(b))
                .map(|(&g, &e)| {
                    let d = g as f64 - e as f64;
                    d * d
                })
                .sum::<f64>()
                / n
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Psnr {
    pub db: f64,
    /// Bands with `max(gt_k) = 0`, excluded from the mean.
    pub skipped_bands: Vec<usize>,
    /// Every evaluated band reproduced exactly.
    pub exact_match: bool,
}

/// Mean over bands of `10·log10(max(gt_k)² / MSE_k)`, each band capped at
/// [`PSNR_CAP_DB`].
pub fn psnr(gt: &HyperCube, est: &HyperCube) -> Result<Psnr> {
    let mse = band_mse(gt, est)?;
    let mut skipped_bands = Vec::new();
    let mut total = 0.0;
    let mut counted = 0usize;
    let mut exact_match = true;
    for (b, &m) in mse.iter().enumerate() {
        let peak = gt.band(b).iter().fold(f32::NEG_INFINITY, |a, &v| a.max(v)) as f64;
        if !(peak > 0.0) {
            skipped_bands.push(b);
            continue;
        }
        let db = if m == 0.0 {
            PSNR_CAP_DB
        } else {
            exact_match = false;
            (10.0 * (peak * peak / m).log10()).min(PSNR_CAP_DB)
        };
        total += db;
        counted += 1;
    }
    if counted == 0 {
        return Err(Error::AllBandsDegenerate);
    }
    Ok(Psnr { db: total / counted as f64, skipped_bands, exact_match })
}

/// Root mean square error over every cell.
pub fn rmse(gt: &HyperCube, est: &HyperCube) -> Result<f64> {
    check_pair(gt, est)?;
    let sum: f64 = gt
        .data()
        .iter()
        .zip(est.data())
        .map(|(&g, &e)| {
            let d = g as f64 - e as f64;
            d * d
        })
        .sum();
    Ok((sum / gt.data().len() as f64).sqrt())
}

fn checked_band_means(gt: &HyperCube) -> Result<Vec<f64>> {
    let means = gt.band_means();
    if let Some((band, &mean)) = means.iter().enumerate().find(|(_, m)| !(m.abs() >= EPS_L)) {
        return Err(Error::DegenerateBandMean { band, mean });
    }
    Ok(means)
}

/// ERGAS in percent: `100·sqrt(mean_k MSE_k / μ(gt_k)²)`.
pub fn ergas(gt: &HyperCube, est: &HyperCube) -> Result<f64> {
    let mse = band_mse(gt, est)?;
    let means = checked_band_means(gt)?;
    let acc: f64 = mse.iter().zip(&means).map(|(m, mu)| m / (mu * mu)).sum();
    Ok(100.0 * (acc / mse.len() as f64).sqrt())
}

/// The unnormalised variant summing squared band norms instead of
/// per-pixel MSE, with no percent scaling. Kept for auditing.
pub fn ergas_literal(gt: &HyperCube, est: &HyperCube) -> Result<f64> {
    let mse = band_mse(gt, est)?;
    let means = checked_band_means(gt)?;
    let n = gt.pixels() as f64;
    let acc: f64 = mse.iter().zip(&means).map(|(m, mu)| m * n / (mu * mu)).sum();
    Ok((acc / mse.len() as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sam {
    /// Mean spectral angle over evaluated pixels, in degrees.
    pub degrees: f64,
    pub skipped_pixels: usize,
}

/// Mean per-pixel angle between spectra. Pixels where either spectrum is
/// (numerically) zero are skipped and counted.
pub fn sam(gt: &HyperCube, est: &HyperCube) -> Result<Sam> {
    check_pair(gt, est)?;
    let (n, bands) = (gt.pixels(), gt.bands());
    let (g, e) = (gt.data(), est.data());
    let mut total = 0.0;
    let mut counted = 0usize;
    let mut skipped_pixels = 0usize;
    for p in 0..n {
        let (mut dot, mut gg, mut ee) = (0f64, 0f64, 0f64);
        for b in 0..bands {
            let (gv, ev) = (g[b * n + p] as f64, e[b * n + p] as f64);
            dot += gv * ev;
            gg += gv * gv;
            ee += ev * ev;
        }
        let (gn, en) = (gg.sqrt(), ee.sqrt());
        if gn < SAM_MIN_NORM || en < SAM_MIN_NORM {
            skipped_pixels += 1;
            continue;
        }
        total += (dot / (gn * en)).clamp(-1.0, 1.0).acos();
        counted += 1;
    }
    if counted == 0 {
        return Err(Error::AllPixelsDegenerate);
    }
    Ok(Sam { degrees: (total / counted as f64).to_degrees(), skipped_pixels })
}

/// `argmin_s ‖gt − s·est‖`, i.e. `⟨gt, est⟩ / ⟨est, est⟩` (1 for a zero estimate).
pub fn best_scale(gt: &HyperCube, est: &HyperCube) -> Result<f64> {
    check_pair(gt, est)?;
    let (mut ge, mut ee) = (0f64, 0f64);
    for (&g, &e) in gt.data().iter().zip(est.data()) {
        ge += g as f64 * e as f64;
        ee += e as f64 * e as f64;
    }
    Ok(if ee > 0.0 { ge / ee } else { 1.0 })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub psnr_db: f64,
    pub sam_deg: f64,
    pub rmse_pct: f64,
    pub ergas_pct: f64,
    pub range: BandRange,
    pub range_name: Option<&'static str>,
    pub n_pixels: usize,
    pub n_bands: usize,
    pub skipped_bands: Vec<usize>,
    pub skipped_pixels: usize,
    pub exact_match: bool,
    /// Global gain applied to the estimate before scoring; `None` for raw scores.
    pub aligned_scale: Option<f64>,
    /// Unnormalised ERGAS, present only when requested.
    pub ergas_literal: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EvalOptions {
    /// Also emit a report per range with the estimate rescaled by [`best_scale`].
    pub align_scale: bool,
    pub literal_ergas: bool,
}

/// Scores a whole cube pair with all four metrics.
pub fn report(gt: &HyperCube, est: &HyperCube, range: BandRange, literal_ergas: bool) -> Result<MetricsReport> {
    if !gt.same_grid(est) {
        return Err(Error::WavelengthMismatch);
    }
    let p = psnr(gt, est)?;
    let s = sam(gt, est)?;
    Ok(MetricsReport {
        psnr_db: p.db,
        sam_deg: s.degrees,
        rmse_pct: 100.0 * rmse(gt, est)?,
        ergas_pct: ergas(gt, est)?,
        range,
        range_name: range.name(),
        n_pixels: gt.pixels(),
        n_bands: gt.bands(),
        skipped_bands: p.skipped_bands,
        skipped_pixels: s.skipped_pixels,
        exact_match: p.exact_match,
        aligned_scale: None,
        ergas_literal: if literal_ergas { Some(ergas_literal(gt, est)?) } else { None },
    })
}

/// One report per range, followed (per range) by its scale-aligned variant
/// when `opts.align_scale` is set.
pub fn evaluate(
    gt: &HyperCube,
    est: &HyperCube,
    ranges: &[BandRange],
    opts: EvalOptions,
) -> Result<Vec<MetricsReport>> {
    check_pair(gt, est)?;
    if !gt.same_grid(est) {
        return Err(Error::WavelengthMismatch);
    }
    let mut out = Vec::with_capacity(ranges.len() * if opts.align_scale { 2 } else { 1 });
    for &range in ranges {
        let g = slice_range(gt, &range)?;
        let e = slice_range(est, &range)?;
        out.push(report(&g, &e, range, opts.literal_ergas)?);
        if opts.align_scale {
            let s = best_scale(&g, &e)?;
            let scaled = e.map(|v| (v as f64 * s) as f32);
            let mut aligned = report(&g, &scaled, range, opts.literal_ergas)?;
            aligned.aligned_scale = Some(s);
            out.push(aligned);
        }
    }
    Ok(out)
}

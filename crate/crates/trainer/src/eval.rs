//! Per-illumination metric tables for any calibration method.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use hsical_core::grayworld::grayworld_calibrate;
use hsical_core::metrics::{evaluate, EvalOptions};
use hsical_core::{BandRange, CubeKind, HyperCube};
use hsical_sitnet::SitNet;
use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::{from_tensor, to_tensor, Crop};
use crate::error::Result;
use crate::synth::Pair;

/// Label of the row that pools every pair.
pub const ALL_LABEL: &str = "all";

/// Anything that maps a dark-corrected radiance cube to reflectance.
pub trait Calibrator: Sync {
    fn name(&self) -> String;
    fn calibrate(&self, input: &HyperCube) -> Result<HyperCube>;
}

pub struct SitCalibrator<'a>(pub &'a SitNet);

impl Calibrator for SitCalibrator<'_> {
    fn name(&self) -> String {
        format!("sit-{}", self.0.config.ablation)
    }

    fn calibrate(&self, input: &HyperCube) -> Result<HyperCube> {
        let crop = Crop { row: 0, col: 0, size: input.height() };
        if input.height() != input.width() {
            return Err(crate::error::Error::InvalidConfig("the network expects square cubes".into()));
        }
        let x = to_tensor(&[(input, crop)])?;
        let y = self.0.predict(&x)?;
        from_tensor(&y, 0, input, CubeKind::Reflectance)
    }
}

pub struct GrayWorld;

impl Calibrator for GrayWorld {
    fn name(&self) -> String {
        "grayworld".into()
    }

    fn calibrate(&self, input: &HyperCube) -> Result<HyperCube> {
        Ok(grayworld_calibrate(input, None)?)
    }
}

/// Treats the input as already calibrated.
pub struct Identity;

impl Calibrator for Identity {
    fn name(&self) -> String {
        "identity".into()
    }

    fn calibrate(&self, input: &HyperCube) -> Result<HyperCube> {
        Ok(input.clone().with_kind(CubeKind::Reflectance))
    }
}

/// Metric means over the pairs of one `(method, label, range)` cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub method: String,
    pub label: String,
    pub range: String,
    pub aligned: bool,
    pub n_pairs: usize,
    pub psnr_db: f64,
    pub sam_deg: f64,
    pub rmse_pct: f64,
    pub ergas_pct: f64,
}

/// Scores of one pair, one entry per report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairScore {
    pub method: String,
    pub pair: String,
    pub label: String,
    pub range: String,
    pub aligned: bool,
    pub psnr_db: f64,
    pub sam_deg: f64,
    pub rmse_pct: f64,
    pub ergas_pct: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EvalTable {
    pub rows: Vec<EvalRow>,
    pub pairs: Vec<PairScore>,
}

fn range_label(r: &BandRange) -> String {
    r.name().map(str::to_string).unwrap_or_else(|| r.to_string())
}

pub fn score_pairs(cal: &dyn Calibrator, pairs: &[&Pair], ranges: &[BandRange], opts: EvalOptions) -> Result<Vec<PairScore>> {
    let method = cal.name();
    let per_pair: Vec<Vec<PairScore>> = pairs
        .par_iter()
        .map(|p| {
            let est = cal.calibrate(&p.input)?;
            let reports = evaluate(&p.gt, &est, ranges, opts)?;
            Ok(reports
                .into_iter()
                .map(|r| PairScore {
                    method: method.clone(),
                    pair: p.name(),
                    label: p.label.clone(),
                    range: range_label(&r.range),
                    aligned: r.aligned_scale.is_some(),
                    psnr_db: r.psnr_db,
                    sam_deg: r.sam_deg,
                    rmse_pct: r.rmse_pct,
                    ergas_pct: r.ergas_pct,
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(per_pair.into_iter().flatten().collect())
}

/// Means per illumination label plus an [`ALL_LABEL`] row, each per range
/// (and per alignment when requested).
pub fn aggregate(scores: &[PairScore]) -> Vec<EvalRow> {
    type Key = (String, String, String, bool);
    let mut cells: BTreeMap<Key, (usize, [f64; 4])> = BTreeMap::new();
    let mut order: Vec<Key> = Vec::new();
    for s in scores {
        for label in [s.label.as_str(), ALL_LABEL] {
            let key = (s.method.clone(), label.to_string(), s.range.clone(), s.aligned);
            let cell = cells.entry(key.clone()).or_insert_with(|| {
                order.push(key);
                (0, [0.0; 4])
            });
            cell.0 += 1;
            for (acc, v) in cell.1.iter_mut().zip([s.psnr_db, s.sam_deg, s.rmse_pct, s.ergas_pct]) {
                *acc += v;
            }
        }
    }
    // label rows in first-seen order, "all" last within each method
    order.sort_by_key(|k| k.1 == ALL_LABEL);
    order
        .into_iter()
        .map(|k| {
            let (n, sums) = cells[&k];
            let m = |i: usize| sums[i] / n as f64;
            EvalRow {
                method: k.0,
                label: k.1,
                range: k.2,
                aligned: k.3,
                n_pairs: n,
                psnr_db: m(0),
                sam_deg: m(1),
                rmse_pct: m(2),
                ergas_pct: m(3),
            }
        })
        .collect()
}

pub fn evaluate_model(cal: &dyn Calibrator, pairs: &[&Pair], ranges: &[BandRange], opts: EvalOptions) -> Result<EvalTable> {
    let scores = score_pairs(cal, pairs, ranges, opts)?;
    Ok(EvalTable { rows: aggregate(&scores), pairs: scores })
}

impl EvalTable {
    pub fn extend(&mut self, other: EvalTable) {
        self.rows.extend(other.rows);
        self.pairs.extend(other.pairs);
    }

    pub fn find(&self, method: &str, label: &str, range: &str, aligned: bool) -> Option<&EvalRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.label == label && r.range == range && r.aligned == aligned)
    }

    /// Fixed-width text rendering of the aggregated rows.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<14} {:<10} {:<12} {:>7} {:>5} {:>9} {:>9} {:>9} {:>9}",
            "method", "label", "range", "aligned", "n", "PSNR", "SAM", "RMSE%", "ERGAS%"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<14} {:<10} {:<12} {:>7} {:>5} {:>9.3} {:>9.3} {:>9.3} {:>9.3}",
                r.method,
                r.label,
                r.range,
                if r.aligned { "yes" } else { "no" },
                r.n_pairs,
                r.psnr_db,
                r.sam_deg,
                r.rmse_pct,
                r.ergas_pct
            );
        }
        out
    }
}

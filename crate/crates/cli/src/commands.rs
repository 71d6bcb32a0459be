//! One function per verb. Each prints text, or a single JSON document when
//! `json` is set, and writes only the paths named by its flags.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use hsical_core::grayworld::{grayworld_calibrate, grayworld_estimate};
use hsical_core::hypercube::{load_cube, resample_to_31, save_cube};
use hsical_core::metrics::{evaluate, EvalOptions};
use hsical_core::radiometry::{calibrate as ratio_calibrate, composite, measure_illumination, subtract_dark};
use hsical_core::{BandRange, CubeKind, HyperCube, IlluminationCurve, Roi};
use hsical_sitnet::{SitConfig, SitNet};
use hsical_tensor::gradcheck::DEFAULT_TOLERANCE;
use hsical_tensor::Checkpoint;
use hsical_trainer::eval::evaluate_model;
use hsical_trainer::{load_dataset, save_dataset, select, split_scenes, synth_dataset, GrayWorld, IllumKind};
use hsical_trainer::{Pair, SitCalibrator, Splits, SynthConfig, TrainConfig};
use serde_json::{json, Value};

use crate::CliError;

const SPLITS_FILE: &str = "splits.json";
const MODEL_CFG_FILE: &str = "model.cfg";
const TRAIN_CFG_FILE: &str = "train.cfg";

fn usage(message: impl Into<String>) -> CliError {
    CliError { category: "UsageError", message: message.into() }
}

/// `--json` alone prints JSON on stdout; `--json FILE` writes it to FILE and
/// keeps the text summary on stdout.
#[derive(Args, Debug, Clone, Default)]
pub struct Report {
    #[arg(long, value_name = "FILE", num_args = 0..=1)]
    json: Option<Option<PathBuf>>,
}

fn emit(report: &Report, value: Value, text: impl FnOnce() -> String) -> Result<()> {
    match &report.json {
        None => print!("{}", text()),
        Some(None) => println!("{value}"),
        Some(Some(path)) => {
            fs::write(path, serde_json::to_string_pretty(&value)? + "\n")
                .with_context(|| format!("writing {}", path.display()))?;
            print!("{}", text());
        }
    }
    Ok(())
}

fn load(path: &Path) -> Result<HyperCube> {
    load_cube(path).with_context(|| format!("reading {}", path.display()))
}

fn store(cube: &HyperCube, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    save_cube(cube, path).with_context(|| format!("writing {}", path.display()))
}

fn parse_ranges(list: &str) -> Result<Vec<BandRange>> {
    Ok(list.split(',').map(BandRange::parse).collect::<hsical_core::Result<_>>()?)
}

fn range_label(r: &BandRange) -> String {
    r.name().map(str::to_string).unwrap_or_else(|| r.to_string())
}

#[derive(Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    report: Report,
    /// Radiance cube.
    #[arg(long = "in", visible_alias = "cube", value_name = "CUBE")]
    input: PathBuf,
    /// Dark frame subtracted from the cube first.
    #[arg(long)]
    dark: Option<PathBuf>,
    /// Illumination curve (`wavelength_nm,value` CSV).
    #[arg(long, conflicts_with = "white")]
    illum: Option<PathBuf>,
    /// White-reference capture to measure the illumination from.
    #[arg(long)]
    white: Option<PathBuf>,
    /// Dark frame of the white-reference capture.
    #[arg(long, requires = "white")]
    white_dark: Option<PathBuf>,
    /// White-reference window `row0,col0,row1,col1` (half-open); whole frame by default.
    #[arg(long, requires = "white")]
    roi: Option<String>,
    /// Reflectance of the white reference.
    #[arg(long, default_value_t = 1.0)]
    level: f64,
    #[arg(long)]
    out: PathBuf,
    /// Also write the illumination curve used.
    #[arg(long)]
    illum_out: Option<PathBuf>,
}

fn parse_roi(s: &str) -> Result<Roi> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| usage(format!("--roi expects four integers, got {s:?}")))?;
    match v[..] {
        [r0, c0, r1, c1] => Ok(Roi::new(r0, c0, r1, c1)),
        _ => Err(usage(format!("--roi expects four integers, got {s:?}")).into()),
    }
}

pub fn calibrate(a: CalibrateArgs) -> Result<()> {
    let raw = load(&a.input)?;
    let cube = match &a.dark {
        Some(d) => subtract_dark(&raw, &load(d)?)?,
        None => raw,
    };
    let illum = match (&a.illum, &a.white) {
        (Some(p), None) => IlluminationCurve::load_csv(p).with_context(|| format!("reading {}", p.display()))?,
        (None, Some(w)) => {
            let white = load(w)?;
            let dark = match &a.white_dark {
                Some(d) => load(d)?,
                None => HyperCube::filled(white.height(), white.width(), white.wavelengths().to_vec(), 0.0, CubeKind::DarkFrame)?,
            };
            let roi = a.roi.as_deref().map(parse_roi).transpose()?.unwrap_or_else(|| Roi::full(&white));
            measure_illumination(&white, &dark, &roi)?
        }
        _ => return Err(usage("exactly one of --illum or --white is required").into()),
    };
    let refl = ratio_calibrate(&cube, &illum, a.level)?;
    store(&refl, &a.out)?;
    if let Some(p) = &a.illum_out {
        illum.save_csv(p)?;
    }
    emit(
        &a.report,
        json!({ "out": a.out, "bands": refl.bands(), "floored_bands": illum.floored }),
        || format!("wrote {} ({} bands, {} floored)\n", a.out.display(), refl.bands(), illum.floored.len()),
    )
}

#[derive(Args)]
pub struct GrayworldArgs {
    #[command(flatten)]
    report: Report,
    #[arg(long = "in", visible_alias = "cube", value_name = "CUBE")]
    input: PathBuf,
    /// Common band mean of the output; the mean of the input band means by default.
    #[arg(long)]
    target_mean: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    /// Also write the estimated illumination curve.
    #[arg(long, visible_alias = "dump-illum")]
    illum_out: Option<PathBuf>,
}

pub fn grayworld(a: GrayworldArgs) -> Result<()> {
    let cube = load(&a.input)?;
    let refl = grayworld_calibrate(&cube, a.target_mean)?;
    store(&refl, &a.out)?;
    let curve = grayworld_estimate(&cube, a.target_mean)?;
    if let Some(p) = &a.illum_out {
        curve.save_csv(p)?;
    }
    emit(&a.report, json!({ "out": a.out, "illumination": curve.values }), || format!("wrote {}\n", a.out.display()))
}

#[derive(Args)]
pub struct ExpandArgs {
    #[command(flatten)]
    report: Report,
    /// Ground-truth reflectance cube.
    #[arg(long)]
    reflectance: PathBuf,
    /// Directory of illumination curves (`*.csv`).
    #[arg(long)]
    illums: PathBuf,
    /// Output directory; one `<curve>.hsc` per curve.
    #[arg(long)]
    out: PathBuf,
}

pub fn expand(a: ExpandArgs) -> Result<()> {
    let refl = load(&a.reflectance)?;
    let mut curves: Vec<PathBuf> = fs::read_dir(&a.illums)
        .with_context(|| format!("listing {}", a.illums.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    curves.retain(|p| p.extension().is_some_and(|e| e == "csv"));
    curves.sort();
    if curves.is_empty() {
        return Err(usage(format!("no *.csv curves in {}", a.illums.display())).into());
    }
    fs::create_dir_all(&a.out)?;
    let mut written = Vec::new();
    for p in &curves {
        let curve = IlluminationCurve::load_csv(p).with_context(|| format!("reading {}", p.display()))?;
        let out = a.out.join(format!("{}.hsc", curve.label));
        store(&composite(&refl, &curve)?, &out)?;
        written.push(out);
    }
    emit(&a.report, json!({ "written": written }), || {
        written.iter().map(|p| format!("wrote {}\n", p.display())).collect()
    })
}

#[derive(Args)]
pub struct ResampleArgs {
    #[command(flatten)]
    report: Report,
    #[arg(long = "in", visible_alias = "cube", value_name = "CUBE")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

pub fn resample(a: ResampleArgs) -> Result<()> {
    let out = resample_to_31(&load(&a.input)?)?;
    store(&out, &a.out)?;
    emit(&a.report, json!({ "out": a.out, "bands": out.bands() }), || format!("wrote {}\n", a.out.display()))
}

#[derive(Args)]
pub struct MetricsArgs {
    #[command(flatten)]
    report: Report,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    est: PathBuf,
    /// Comma-separated ranges: full, vis, nir or lo-hi in nm.
    #[arg(long, default_value = "full")]
    ranges: String,
    /// Also score the estimate after the least-squares global gain.
    #[arg(long)]
    align: bool,
    /// Also report ERGAS without the mean-intensity normalisation.
    #[arg(long)]
    literal_ergas: bool,
}

pub fn metrics(a: MetricsArgs) -> Result<()> {
    let (gt, est) = (load(&a.gt)?, load(&a.est)?);
    let reports = evaluate(&gt, &est, &parse_ranges(&a.ranges)?, EvalOptions { align_scale: a.align, literal_ergas: a.literal_ergas })?;
    let exact = reports.iter().all(|r| r.exact_match);
    emit(&a.report, json!({ "exact_match": exact, "reports": reports }), || {
        let mut s = String::new();
        for r in &reports {
            let tag = r.aligned_scale.map(|k| format!(" aligned×{k:.6}")).unwrap_or_default();
            s += &format!(
                "{}{tag}: PSNR {:.4} dB  SAM {:.4}°  RMSE {:.4}%  ERGAS {:.4}%\n",
                range_label(&r.range),
                r.psnr_db,
                r.sam_deg,
                r.rmse_pct,
                r.ergas_pct
            );
        }
        s + &format!("exact_match: {exact}\n")
    })
}

#[derive(Args)]
pub struct SynthArgs {
    #[command(flatten)]
    report: Report,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 16)]
    scenes: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 8)]
    bands: usize,
    #[arg(long, default_value_t = 400.0)]
    wl_lo: f64,
    #[arg(long, default_value_t = 1000.0)]
    wl_hi: f64,
    /// Material regions per scene.
    #[arg(long, default_value_t = 6)]
    regions: usize,
    /// Comma-separated illuminations: flat, ramp, notch, lowlight.
    #[arg(long, default_value = "flat,ramp,notch,lowlight")]
    illums: String,
    /// Upper bound of simulated dark current; 0 skips the dark pipeline.
    #[arg(long, default_value_t = 0.0)]
    noise_dark: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let illums = a.illums.split(',').map(str::parse).collect::<hsical_trainer::Result<Vec<IllumKind>>>()?;
    let cfg = SynthConfig {
        n_scenes: a.scenes,
        size: a.size,
        bands: a.bands,
        wl_lo: a.wl_lo,
        wl_hi: a.wl_hi,
        n_blobs: a.regions,
        illums,
        noise_dark: a.noise_dark,
        seed: a.seed,
    };
    let pairs = synth_dataset(&cfg)?;
    save_dataset(&pairs, &a.out)?;
    emit(&a.report, json!({ "out": a.out, "pairs": pairs.len() }), || {
        format!("wrote {} pairs to {}\n", pairs.len(), a.out.display())
    })
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    report: Report,
    /// Dataset directory written by `synth`.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for the checkpoint, traces and splits.
    #[arg(long)]
    out: PathBuf,
    /// Network `key=value` config; defaults with the dataset's band count otherwise.
    #[arg(long)]
    model_cfg: Option<PathBuf>,
    /// Training `key=value` config.
    #[arg(long)]
    train_cfg: Option<PathBuf>,
    /// Overrides the init and training seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the step budget.
    #[arg(long)]
    steps: Option<usize>,
}

fn read_text(p: &Path) -> Result<String> {
    fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))
}

fn scene_ids(pairs: &[Pair]) -> Vec<usize> {
    pairs.iter().map(|p| p.scene).collect::<BTreeSet<_>>().into_iter().collect()
}

pub fn train(a: TrainArgs) -> Result<()> {
    let pairs = load_dataset(&a.data)?;
    let bands = pairs[0].input.bands();
    let mut model = match &a.model_cfg {
        Some(p) => SitConfig::from_kv(&read_text(p)?)?,
        None => SitConfig { in_bands: bands, ..SitConfig::default() },
    };
    let mut cfg = match &a.train_cfg {
        Some(p) => TrainConfig::from_kv(&read_text(p)?)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = a.seed {
        model.seed = s;
        cfg.seed = s;
    }
    if a.steps.is_some() {
        cfg.max_steps = a.steps;
    }
    if model.in_bands != bands {
        return Err(usage(format!("model expects {} bands, dataset has {bands}", model.in_bands)).into());
    }
    let ids = scene_ids(&pairs);
    let idx = split_scenes(ids.len(), cfg.fractions, cfg.seed)?;
    let pick = |v: &[usize]| v.iter().map(|&i| ids[i]).collect::<Vec<_>>();
    let splits = Splits { train: pick(&idx.train), val: pick(&idx.val), test: pick(&idx.test) };
    let (tr, va) = (select(&pairs, &splits.train), select(&pairs, &splits.val));
    let out = hsical_trainer::train(&model, &cfg, &tr, &va)?;
    out.save(&a.out)?;
    fs::write(a.out.join(SPLITS_FILE), serde_json::to_string_pretty(&splits)? + "\n")?;
    fs::write(a.out.join(MODEL_CFG_FILE), model.to_kv())?;
    fs::write(a.out.join(TRAIN_CFG_FILE), cfg.to_kv())?;
    let first = out.loss_trace.first().copied();
    let last = out.loss_trace.last().copied();
    emit(
        &a.report,
        json!({
            "out": a.out,
            "steps": out.loss_trace.len(),
            "first_loss": first,
            "last_loss": last,
            "best_step": out.best_step,
            "best_val_l1": out.best_val,
            "train_pairs": tr.len(),
            "val_pairs": va.len(),
        }),
        || {
            format!(
                "{} steps on {} pairs; loss {:.5} → {:.5}; best val L1 {:.5} at step {}\n",
                out.loss_trace.len(),
                tr.len(),
                first.unwrap_or(f64::NAN),
                last.unwrap_or(f64::NAN),
                out.best_val,
                out.best_step
            )
        },
    )
}

#[derive(Args)]
pub struct EvalArgs {
    #[command(flatten)]
    report: Report,
    /// Network checkpoint written by `train`.
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Splits file written by `train`; with `--split`, restricts the pairs.
    #[arg(long, requires = "split")]
    splits: Option<PathBuf>,
    #[arg(long, value_parser = ["train", "val", "test"], requires = "splits")]
    split: Option<String>,
    #[arg(long, default_value = "full,vis,nir")]
    ranges: String,
    #[arg(long)]
    align: bool,
    /// Also score the Gray-World baseline.
    #[arg(long)]
    baseline: bool,
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let net = SitNet::from_checkpoint(&Checkpoint::load(&a.ckpt).with_context(|| format!("reading {}", a.ckpt.display()))?)?;
    let pairs = load_dataset(&a.data)?;
    let scenes = match (&a.splits, a.split.as_deref()) {
        (Some(p), Some(which)) => {
            let v: Value = serde_json::from_str(&read_text(p)?)?;
            let ids = v[which].as_array().ok_or_else(|| usage(format!("{} has no {which:?} list", p.display())))?;
            ids.iter().map(|x| x.as_u64().map(|n| n as usize)).collect::<Option<Vec<_>>>()
                .ok_or_else(|| usage(format!("{} lists non-integer scenes", p.display())))?
        }
        _ => scene_ids(&pairs),
    };
    let chosen = select(&pairs, &scenes);
    if chosen.is_empty() {
        return Err(hsical_trainer::Error::EmptyDataset("the selected split has no pairs".into()).into());
    }
    let ranges = parse_ranges(&a.ranges)?;
    let opts = EvalOptions { align_scale: a.align, literal_ergas: false };
    let mut table = evaluate_model(&SitCalibrator(&net), &chosen, &ranges, opts)?;
    if a.baseline {
        table.extend(evaluate_model(&GrayWorld, &chosen, &ranges, opts)?);
    }
    emit(&a.report, serde_json::to_value(&table)?, || table.to_text())
}

#[derive(Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    report: Report,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Maximum admissible relative error.
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    tol: f64,
}

pub fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let mut cases: Vec<(String, hsical_tensor::gradcheck::GradReport)> =
        hsical_tensor::gradcheck::primitive_suite(a.seed)?.into_iter().map(|(n, r)| (n.to_string(), r)).collect();
    cases.extend(hsical_sitnet::gradcheck::unit_suite(a.seed)?);
    let failed: Vec<&str> = cases.iter().filter(|(_, r)| !r.passes(a.tol)).map(|(n, _)| n.as_str()).collect();
    let rows: Vec<Value> = cases
        .iter()
        .map(|(n, r)| json!({ "name": n, "max_rel_err": r.max_rel_err, "checked": r.checked, "pass": r.passes(a.tol) }))
        .collect();
    emit(&a.report, json!({ "tolerance": a.tol, "pass": failed.is_empty(), "cases": rows }), || {
        cases
            .iter()
            .map(|(n, r)| format!("{:<6} {n:<32} {:.3e}\n", if r.passes(a.tol) { "PASS" } else { "FAIL" }, r.max_rel_err))
            .collect()
    })?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError { category: "GradcheckFailed", message: format!("{} case(s) above {}: {}", failed.len(), a.tol, failed.join(", ")) }.into())
    }
}

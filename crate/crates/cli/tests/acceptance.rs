//! Acceptance suite. Runs every criterion in sequence, prints one
//! `PASS`/`FAIL` line each and exits nonzero if a hard criterion fails.
//!
//! `cargo test -p hsical --test acceptance -- <substring>` runs the matching
//! criteria only.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use hsical_core::grayworld::grayworld_calibrate;
use hsical_core::hypercube::{load_cube, nominal_31, resample_to_31, save_cube};
use hsical_core::metrics::{ergas, psnr, rmse, sam};
use hsical_core::radiometry::{composite, ground_truth};
use hsical_core::{CubeKind, HyperCube, IlluminationCurve, Roi};
use hsical_sitnet::params::ParamStore;
use hsical_sitnet::unit::{full_unit_specs, unit_specs};
use hsical_sitnet::{illumination_attention, Ablation, AiOverride, Combine, SitConfig, SitNet, UnitHooks, UnitShape};
use hsical_tensor::gradcheck::{random_tensor, DEFAULT_TOLERANCE};
use hsical_tensor::{Graph, Tensor};
use hsical_trainer::eval::{evaluate_model, ALL_LABEL};
use hsical_trainer::train::weights;
use hsical_trainer::{mean_l1, select, split_scenes, synth_dataset, train, GrayWorld, Pair, SitCalibrator};
use hsical_trainer::{SynthConfig, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

struct Criterion {
    name: &'static str,
    /// Failures are reported but do not fail the run.
    soft: bool,
    run: fn() -> Verdict,
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn grid(n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|i| lo + (hi - lo) * i as f32 / (n - 1).max(1) as f32).collect()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

// ---------------------------------------------------------------- round trip

fn round_trip() -> Verdict {
    let start = Instant::now();
    let mut worst = 0f64;
    for case in 0..100u64 {
        let mut r = rng(1000 + case);
        let (h, w, bands) = (r.random_range(4..12), r.random_range(4..12), r.random_range(3..10));
        let wl = grid(bands, 400.0, 1000.0);
        let refl: Vec<f32> = (0..h * w * bands).map(|_| r.random_range(0.05f32..=1.0)).collect();
        let light: Vec<f64> = (0..bands).map(|_| r.random_range(0.3..=1.5)).collect();
        let mut dark = || -> Vec<f32> { (0..h * w * bands).map(|_| r.random_range(0.0f32..=0.01)).collect() };
        let (scene_dark, white_dark) = (dark(), dark());
        // forward model: sensor = R·L + dark, white reference has R = 1
        let px = h * w;
        let scene_raw: Vec<f32> =
            (0..h * w * bands).map(|i| (refl[i] as f64 * light[i / px] + scene_dark[i] as f64) as f32).collect();
        let white_raw: Vec<f32> = (0..h * w * bands).map(|i| (light[i / px] + white_dark[i] as f64) as f32).collect();
        let cube = |d: Vec<f32>, kind| HyperCube::new(h, w, wl.clone(), d, kind).unwrap();
        let got = ground_truth(
            &cube(scene_raw, CubeKind::Radiance),
            &cube(scene_dark, CubeKind::DarkFrame),
            &cube(white_raw, CubeKind::Radiance),
            &cube(white_dark, CubeKind::DarkFrame),
            &Roi::new(0, 0, h, w),
        )
        .unwrap();
        for (g, want) in got.data().iter().zip(&refl) {
            worst = worst.max(rel(*g as f64, *want as f64));
        }
    }
    let t = start.elapsed();
    verdict(worst < 1e-6 && within(t, 10.0), format!("max rel err {worst:.2e} (< 1e-6), {:.2} s (< 10 s)", t.as_secs_f64()))
}

// ---------------------------------------------------------------- metrics

fn cube_loops(c: &HyperCube) -> Vec<Vec<Vec<f64>>> {
    (0..c.bands())
        .map(|b| (0..c.height()).map(|r| (0..c.width()).map(|x| c.get(b, r, x) as f64).collect()).collect())
        .collect()
}

struct Oracle {
    psnr: f64,
    rmse: f64,
    ergas: f64,
    sam_deg: f64,
}

fn metric_oracle(gt: &HyperCube, est: &HyperCube) -> Oracle {
    let (g, e) = (cube_loops(gt), cube_loops(est));
    let (bands, h, w) = (gt.bands(), gt.height(), gt.width());
    let n = (h * w) as f64;
    let mut psnr_sum = 0.0;
    let mut sq_total = 0.0;
    let mut ergas_acc = 0.0;
    for b in 0..bands {
        let mut peak = f64::NEG_INFINITY;
        let (mut sq, mut mean) = (0.0, 0.0);
        for r in 0..h {
            for x in 0..w {
                peak = peak.max(g[b][r][x]);
                sq += (g[b][r][x] - e[b][r][x]).powi(2);
                mean += g[b][r][x];
            }
        }
        let mse = sq / n;
        mean /= n;
        psnr_sum += if mse == 0.0 { 99.0 } else { (10.0 * (peak * peak / mse).log10()).min(99.0) };
        sq_total += sq;
        ergas_acc += mse / (mean * mean);
    }
    let mut angle = 0.0;
    for r in 0..h {
        for x in 0..w {
            let (mut dot, mut gg, mut ee) = (0.0, 0.0, 0.0);
            for b in 0..bands {
                dot += g[b][r][x] * e[b][r][x];
                gg += g[b][r][x] * g[b][r][x];
                ee += e[b][r][x] * e[b][r][x];
            }
            angle += (dot / (gg.sqrt() * ee.sqrt())).clamp(-1.0, 1.0).acos();
        }
    }
    Oracle {
        psnr: psnr_sum / bands as f64,
        rmse: (sq_total / (n * bands as f64)).sqrt(),
        ergas: 100.0 * (ergas_acc / bands as f64).sqrt(),
        sam_deg: (angle / n).to_degrees(),
    }
}

fn metric_oracles() -> Verdict {
    let (mut d_psnr, mut r_rmse, mut r_ergas, mut r_sam) = (0f64, 0f64, 0f64, 0f64);
    for case in 0..50u64 {
        let mut r = rng(2000 + case);
        let (h, w, bands) = (r.random_range(2..10), r.random_range(2..10), r.random_range(2..12));
        let wl = grid(bands, 400.0, 1000.0);
        let gt = HyperCube::from_fn(h, w, wl.clone(), CubeKind::Reflectance, |_, _, _| r.random_range(0.01f32..1.0)).unwrap();
        let noise = r.random_range(0.001f32..0.2);
        let est = gt.map(|v| (v + r.random_range(-noise..noise)).max(0.0));
        let o = metric_oracle(&gt, &est);
        d_psnr = d_psnr.max((psnr(&gt, &est).unwrap().db - o.psnr).abs());
        r_rmse = r_rmse.max(rel(rmse(&gt, &est).unwrap(), o.rmse));
        r_ergas = r_ergas.max(rel(ergas(&gt, &est).unwrap(), o.ergas));
        r_sam = r_sam.max(rel(sam(&gt, &est).unwrap().degrees, o.sam_deg));
    }
    // anchors: one 0.5 residual among 25 unit pixels is MSE 0.01 exactly
    let wl1 = vec![550.0];
    let ones = HyperCube::filled(5, 5, wl1.clone(), 1.0, CubeKind::Reflectance).unwrap();
    let mut d = vec![1.0f32; 25];
    d[12] = 0.5;
    let off = ones.with_data(d, CubeKind::Reflectance).unwrap();
    let db = psnr(&ones, &off).unwrap().db;
    let a = HyperCube::new(1, 1, vec![500.0, 600.0], vec![1.0, 0.0], CubeKind::Reflectance).unwrap();
    let b = HyperCube::new(1, 1, vec![500.0, 600.0], vec![0.0, 1.0], CubeKind::Reflectance).unwrap();
    let right = sam(&a, &b).unwrap().degrees;
    let pass = d_psnr < 1e-9 && r_rmse < 1e-6 && r_ergas < 1e-6 && r_sam < 1e-6 && db == 20.0 && (right - 90.0).abs() < 1e-6;
    verdict(
        pass,
        format!(
            "50 pairs: ΔPSNR {d_psnr:.1e} dB, rel RMSE {r_rmse:.1e}, ERGAS {r_ergas:.1e}, SAM {r_sam:.1e}; anchors {db} dB, {right}°"
        ),
    )
}

// ---------------------------------------------------------------- gray world

fn grayworld_properties() -> Verdict {
    let (mut equi_fixed, mut equi_global, mut idem, mut means, mut angle) = (0f64, 0f64, 0f64, 0f64, 0f64);
    for case in 0..50u64 {
        let mut r = rng(3000 + case);
        let (h, w, bands) = (r.random_range(3..10), r.random_range(3..10), r.random_range(3..12));
        let wl = grid(bands, 400.0, 1000.0);
        let cube = HyperCube::from_fn(h, w, wl.clone(), CubeKind::Radiance, |_, _, _| r.random_range(0.05f32..1.0)).unwrap();
        let gains: Vec<f32> = (0..bands).map(|_| r.random_range(0.2f32..3.0)).collect();
        let gained = HyperCube::from_fn(h, w, wl.clone(), CubeKind::Radiance, |b, y, x| gains[b] * cube.get(b, y, x)).unwrap();

        let (a, b) = (grayworld_calibrate(&cube, Some(0.5)).unwrap(), grayworld_calibrate(&gained, Some(0.5)).unwrap());
        for (x, y) in a.data().iter().zip(b.data()) {
            equi_fixed = equi_fixed.max(rel(*x as f64, *y as f64));
        }
        let (a, b) = (grayworld_calibrate(&cube, None).unwrap(), grayworld_calibrate(&gained, None).unwrap());
        let k = b.data().iter().map(|&v| v as f64).sum::<f64>() / a.data().iter().map(|&v| v as f64).sum::<f64>();
        for (x, y) in a.data().iter().zip(b.data()) {
            equi_global = equi_global.max(rel(*x as f64 * k, *y as f64));
        }
        let twice = grayworld_calibrate(&a, None).unwrap();
        for (x, y) in a.data().iter().zip(twice.data()) {
            idem = idem.max(rel(*x as f64, *y as f64));
        }
        let m = a.band_means();
        let target = cube.band_means().iter().sum::<f64>() / bands as f64;
        means = means.max(m.iter().map(|v| (v - target).abs()).fold(0.0, f64::max));

        // gray scene: one level per pixel, identical across bands
        let levels: Vec<f32> = (0..h * w).map(|_| r.random_range(0.05f32..1.0)).collect();
        let gray = HyperCube::from_fn(h, w, wl.clone(), CubeKind::Reflectance, |_, y, x| levels[y * w + x]).unwrap();
        let light: Vec<f64> = (0..bands).map(|_| r.random_range(0.3..1.5)).collect();
        let illum = IlluminationCurve::new(wl, light, true, "random").unwrap();
        let out = grayworld_calibrate(&composite(&gray, &illum).unwrap(), None).unwrap();
        angle = angle.max(sam(&gray, &out).unwrap().degrees);
    }
    let pass = equi_fixed < 1e-6 && equi_global < 1e-6 && idem < 1e-6 && means < 1e-6 && angle < 1e-6;
    verdict(
        pass,
        format!(
            "50 cases: equivariance {equi_fixed:.1e} (fixed m*) / {equi_global:.1e} (default m*, one global factor), \
             idempotence {idem:.1e}, band-mean spread {means:.1e}, gray-scene SAM {angle:.2e}° = {:.1e} rad (all < 1e-6)",
            angle.to_radians()
        ),
    )
}

// ---------------------------------------------------------------- gradients

fn gradient_suite() -> Verdict {
    let start = Instant::now();
    let mut cases: Vec<(String, f64)> = hsical_tensor::gradcheck::primitive_suite(0)
        .unwrap()
        .into_iter()
        .map(|(n, r)| (n.to_string(), r.max_rel_err))
        .collect();
    let units = hsical_sitnet::gradcheck::unit_suite(0).unwrap();
    let ablations: Vec<&str> = Ablation::ALL
        .iter()
        .map(|a| a.name())
        .filter(|n| !units.iter().any(|(label, _)| label.contains(&format!("[{n} "))))
        .collect();
    cases.extend(units.into_iter().map(|(n, r)| (n, r.max_rel_err)));
    let t = start.elapsed();
    let (worst_name, worst) = cases.iter().fold(("", 0f64), |acc, (n, e)| if *e > acc.1 { (n, *e) } else { acc });
    verdict(
        worst < DEFAULT_TOLERANCE && ablations.is_empty() && within(t, 60.0),
        format!("{} cases, worst {worst:.2e} ({worst_name}) (< 1e-4), {:.1} s (< 60 s)", cases.len(), t.as_secs_f64()),
    )
}

// ---------------------------------------------------------------- structure

fn random_unit(u: &UnitShape, seed: u64) -> ParamStore {
    let mut r = rng(seed);
    let entries = full_unit_specs("u", u).iter().map(|s| (s.name.clone(), random_tensor(&mut r, &s.shape))).collect();
    ParamStore { entries }.restrict(&unit_specs("u", u)).unwrap()
}

fn run_net(net: &SitNet, x: &Tensor, hooks: &mut UnitHooks) -> Tensor {
    let mut g = Graph::new();
    let p = net.params.bind(&mut g, false);
    let xv = g.constant(x.clone());
    let y = net.forward(&mut g, &p, xv, hooks).unwrap();
    g.value(y).clone()
}

fn structural_invariants() -> Verdict {
    // A_I symmetry and rank one on unit-scale random weights
    let (mut asym, mut minor) = (0f64, 0f64);
    for seed in 0..10 {
        let c = 4 + (seed as usize % 3) * 2;
        let u = UnitShape { channels: c, stride_t: 2, pool_p: 2, ffn_expansion: 2, ablation: Ablation::IaOnly, combine: Combine::MatMul };
        let store = random_unit(&u, 4000 + seed);
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let x = g.constant(random_tensor(&mut rng(4100 + seed), &[2, c, 16, 16]));
        let (a_i, _) = illumination_attention(&mut g, &p, "u", x, 2, 2).unwrap();
        let a = g.value(a_i).data();
        for m in a.chunks(c * c) {
            let scale = m.iter().fold(0f64, |s, v| s.max(v.abs())).max(1e-300);
            for i in 0..c {
                for j in 0..c {
                    asym = asym.max((m[i * c + j] - m[j * c + i]).abs());
                    for k in 0..c {
                        for l in 0..c {
                            minor = minor.max((m[i * c + k] * m[j * c + l] - m[i * c + l] * m[j * c + k]).abs() / (scale * scale));
                        }
                    }
                }
            }
        }
    }

    // row-stochastic A_SI and identity-forced reduction on the toy network
    let x = random_tensor(&mut rng(4200), &[1, 8, 64, 64]).map(|v| 0.5 + 0.4 * v);
    let mut row_err = 0f64;
    for ablation in [Ablation::Both, Ablation::SaOnly, Ablation::IaOnly] {
        let net = SitNet::new(SitConfig { ablation, seed: 42, ..SitConfig::default() }).unwrap();
        let mut hooks = UnitHooks::recording();
        run_net(&net, &x, &mut hooks);
        for t in &hooks.traces {
            let a = t.a_si.as_ref().unwrap();
            let c = *a.shape().last().unwrap();
            for row in a.data().chunks(c) {
                row_err = row_err.max((row.iter().sum::<f64>() - 1.0).abs());
            }
        }
    }
    let both = SitNet::new(SitConfig { ablation: Ablation::Both, seed: 43, ..SitConfig::default() }).unwrap();
    let sa = SitNet::new(SitConfig { ablation: Ablation::SaOnly, seed: 43, ..SitConfig::default() }).unwrap();
    let mut forced = UnitHooks { a_i_override: Some(AiOverride::Identity), ..UnitHooks::default() };
    let reduce = run_net(&both, &x, &mut forced).max_abs_diff(&run_net(&sa, &x, &mut UnitHooks::default()));

    let identity = Ablation::ALL.iter().all(|&ablation| {
        let net = SitNet::new(SitConfig { ablation, seed: 44, ..SitConfig::default() }).unwrap();
        let xs = random_tensor(&mut rng(4300), &[2, 8, 64, 64]);
        net.predict(&xs).unwrap() == xs
    });
    let pass = asym < 1e-6 && minor < 1e-9 && row_err < 1e-6 && reduce < 1e-6 && identity;
    verdict(
        pass,
        format!(
            "‖A_I−A_Iᵀ‖∞ {asym:.1e}, max 2×2 minor {minor:.1e}, A_SI row-sum err {row_err:.1e}, \
             Both(A_I=Id) vs SaOnly {reduce:.1e}, zero-head identity {identity}"
        ),
    )
}

// ---------------------------------------------------------------- toy learning

/// Scenes × illuminations of the toy run (8 pairs).
const TOY_SCENES: usize = 2;
const TOY_STEPS: usize = 2000;
const TOY_LR: f64 = 1e-3;
const TOY_BATCH: usize = 2;

fn toy_learning() -> Verdict {
    let start = Instant::now();
    let data = synth_dataset(&SynthConfig { n_scenes: TOY_SCENES, seed: 1, ..SynthConfig::default() }).unwrap();
    let pairs: Vec<&Pair> = data.iter().collect();
    let model = SitConfig::default();
    let cfg = TrainConfig {
        crop: 64,
        batch: TOY_BATCH,
        max_steps: Some(TOY_STEPS),
        lr: TOY_LR,
        val_every: 250,
        seed: 7,
        ..TrainConfig::default()
    };
    let l0 = mean_l1(&SitNet::new(model.clone()).unwrap(), &pairs, 64).unwrap();
    let out = train(&model, &cfg, &pairs, &[]).unwrap();
    let t = start.elapsed();
    let l_end = mean_l1(&out.last, &pairs, 64).unwrap();

    let ranges = [hsical_core::BandRange::FULL];
    let opts = hsical_core::metrics::EvalOptions::default();
    let sit = evaluate_model(&SitCalibrator(&out.last), &pairs, &ranges, opts).unwrap();
    let gw = evaluate_model(&GrayWorld, &pairs, &ranges, opts).unwrap();
    let p_sit = sit.find("sit-both", ALL_LABEL, "full", false).unwrap().psnr_db;
    let p_gw = gw.find("grayworld", ALL_LABEL, "full", false).unwrap().psnr_db;

    // determinism: a second, shorter run with the same seed reproduces the prefix bitwise
    let short = TrainConfig { max_steps: Some(20), ..cfg.clone() };
    let (a, b) = (train(&model, &short, &pairs, &[]).unwrap(), train(&model, &short, &pairs, &[]).unwrap());
    let deterministic =
        a.loss_trace == b.loss_trace && weights(&a.last) == weights(&b.last) && a.loss_trace[..] == out.loss_trace[..20];

    let ratio = l_end / l0;
    verdict(
        ratio < 0.1 && p_sit > p_gw && deterministic && within(t, 300.0),
        format!(
            "{} pairs, {TOY_STEPS} steps: L1 {l0:.4} → {l_end:.4} ({:.1}% of step 0, < 10%); seen-pair PSNR {p_sit:.2} dB vs \
             Gray-World {p_gw:.2} dB; deterministic {deterministic}; {:.0} s (< 300 s)",
            pairs.len(),
            100.0 * ratio,
            t.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- ablations

const ABLATION_SCENES: usize = 32;
const ABLATION_STEPS: usize = 1200;

fn ablation_ordering() -> Verdict {
    let start = Instant::now();
    let data = synth_dataset(&SynthConfig { n_scenes: ABLATION_SCENES, seed: 2, ..SynthConfig::default() }).unwrap();
    let cfg = TrainConfig { max_steps: Some(ABLATION_STEPS), lr: TOY_LR, val_every: 200, seed: 3, ..TrainConfig::default() };
    let splits = split_scenes(ABLATION_SCENES, cfg.fractions, cfg.seed).unwrap();
    let (tr, va) = (select(&data, &splits.train), select(&data, &splits.val));
    let score: Vec<(Ablation, f64)> = [Ablation::Both, Ablation::SaOnly, Ablation::IaOnly, Ablation::None]
        .into_iter()
        .map(|ablation| {
            let out = train(&SitConfig { ablation, seed: 5, ..SitConfig::default() }, &cfg, &tr, &va).unwrap();
            (ablation, out.best_val)
        })
        .collect();
    let t = start.elapsed();
    let both = score[0].1;
    let ordered = score[1..].iter().all(|(_, v)| both <= v * 1.01);
    let table: Vec<String> = score.iter().map(|(a, v)| format!("{}={v:.5}", a.name())).collect();
    verdict(
        ordered && within(t, 1200.0),
        format!(
            "val L1 {} ({} train / {} val pairs, {ABLATION_STEPS} steps each); Both ≤ others within 1%: {ordered}; {:.0} s (< 1200 s)",
            table.join(" "),
            tr.len(),
            va.len(),
            t.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- formats

fn format_fidelity() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let kinds = [CubeKind::Radiance, CubeKind::Reflectance, CubeKind::DarkFrame];
    let mut mismatches = 0;
    for case in 0..1000u64 {
        let mut r = rng(5000 + case);
        let (h, w, bands) = (r.random_range(1..7), r.random_range(1..7), r.random_range(1..9));
        let mut wl = Vec::with_capacity(bands);
        let mut nm = r.random_range(350.0f32..450.0);
        for _ in 0..bands {
            wl.push(nm);
            nm += r.random_range(0.5f32..40.0);
        }
        let data: Vec<f32> = (0..h * w * bands)
            .map(|_| loop {
                let v = f32::from_bits(r.random());
                if v.is_finite() {
                    break v;
                }
            })
            .collect();
        let cube = HyperCube::new(h, w, wl, data, kinds[case as usize % 3]).unwrap();
        let path = dir.path().join(format!("c{case}.hsc"));
        save_cube(&cube, &path).unwrap();
        let back = load_cube(&path).unwrap();
        let same = back.kind() == cube.kind()
            && (back.height(), back.width(), back.bands()) == (h, w, bands)
            && back.wavelengths().iter().zip(cube.wavelengths()).all(|(a, b)| a.to_bits() == b.to_bits())
            && back.data().iter().zip(cube.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        mismatches += usize::from(!same);
    }

    // 204 bands over 400..1000 nm whose values equal their wavelength
    let wl = grid(204, 400.0, 1000.0);
    let cube = HyperCube::from_fn(3, 2, wl.clone(), CubeKind::Radiance, |b, _, _| wl[b]).unwrap();
    let out = resample_to_31(&cube).unwrap();
    let mut worst = 0f64;
    for (k, centre) in nominal_31().iter().enumerate() {
        let members: Vec<f64> =
            wl.iter().map(|&w| w as f64).filter(|&w| w >= *centre as f64 - 5.0 && w < *centre as f64 + 5.0).collect();
        let want = members.iter().sum::<f64>() / members.len() as f64;
        for &v in out.band(k) {
            worst = worst.max(rel(v as f64, want));
        }
    }
    verdict(
        mismatches == 0 && out.bands() == 31 && worst < 1e-6,
        format!("1000 cubes, {mismatches} bitwise mismatches; 204→31 bin-mean rel err {worst:.1e} (< 1e-6)"),
    )
}

fn main() -> ExitCode {
    let criteria = [
        Criterion { name: "round-trip calibration", soft: false, run: round_trip },
        Criterion { name: "metric oracle equivalence", soft: false, run: metric_oracles },
        Criterion { name: "gray-world properties", soft: false, run: grayworld_properties },
        Criterion { name: "gradient suite", soft: false, run: gradient_suite },
        Criterion { name: "structural invariants", soft: false, run: structural_invariants },
        Criterion { name: "toy learning check", soft: false, run: toy_learning },
        Criterion { name: "ablation ordering (soft)", soft: true, run: ablation_ordering },
        Criterion { name: "format fidelity", soft: false, run: format_fidelity },
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut hard_failures = 0;
    println!("acceptance: {} criteria", criteria.len());
    for c in &criteria {
        if !filters.is_empty() && !filters.iter().any(|f| c.name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let v = (c.run)();
        let status = if v.pass { "PASS" } else { "FAIL" };
        println!("{status}  {:<28} {}  [{:.1} s]", c.name, v.detail, start.elapsed().as_secs_f64());
        if !v.pass && !c.soft {
            hard_failures += 1;
        }
    }
    if hard_failures > 0 {
        println!("acceptance: {hard_failures} hard criterion failure(s)");
        ExitCode::FAILURE
    } else {
        println!("acceptance: all hard criteria passed");
        ExitCode::SUCCESS
    }
}

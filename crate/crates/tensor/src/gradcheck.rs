//! Central finite-difference verification of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;
/// Step of the five-point stencil, where its rounding and truncation errors balance.
pub const FIVE_POINT_STEP: f64 = 3e-4;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Denominator floor of the relative error, so near-zero gradients are
/// compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;

/// Central difference formula.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stencil {
    /// `(f(x+h) - f(x-h)) / 2h`, error `O(h²)`.
    ThreePoint,
    /// `(-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h`, error `O(h⁴)`. Allows a
    /// larger `h`, which matters for deep composites whose loss dwarfs some
    /// gradient entries: there the three-point rounding error `~ε|L|/h` wins.
    FivePoint,
}

#[derive(Debug, Clone, Copy)]
pub struct CheckOptions {
    pub h: f64,
    pub stencil: Stencil,
    /// Checks at most this many evenly strided coordinates per input.
    pub max_per_input: Option<usize>,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self { h: DEFAULT_STEP, stencil: Stencil::ThreePoint, max_per_input: None }
    }
}

impl CheckOptions {
    pub fn five_point() -> Self {
        Self { h: FIVE_POINT_STEP, stencil: Stencil::FivePoint, max_per_input: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub max_rel_err: f64,
    /// `(input, coordinate)` of the largest error.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
}

impl GradReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Fixed projection so that every output element contributes a distinct weight.
fn probe_weight(i: usize) -> f64 {
    ((i as f64) * 1.618_033_988_75 + 0.3).sin() + 0.25
}

fn scalarize(g: &mut Graph, out: Var) -> Result<Var> {
    let probe = Tensor::from_fn(g.shape(out).to_vec(), probe_weight);
    let probe = g.constant(probe);
    let weighted = g.mul(out, probe)?;
    Ok(g.sum(weighted))
}

fn evaluate<F, E>(inputs: &[Tensor], f: &F) -> Result<f64, E>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, E>,
    E: From<Error>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let loss = scalarize(&mut g, out)?;
    Ok(g.value(loss).item())
}

/// Compares the tape's gradient of `Σ probe ⊙ f(inputs)` against central
/// differences for every input tensor.
pub fn check<F, E>(inputs: &[Tensor], f: F, opts: CheckOptions) -> Result<GradReport, E>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, E>,
    E: From<Error>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let loss = scalarize(&mut g, out)?;
    g.backward(loss)?;

    let mut report = GradReport { max_rel_err: 0.0, worst: None, checked: 0 };
    let mut probe = inputs.to_vec();
    for (k, &v) in vars.iter().enumerate() {
        let n = inputs[k].len();
        let analytic = g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
        let step = opts.max_per_input.map_or(1, |m| n.div_ceil(m.max(1)).max(1));
        for i in (0..n).step_by(step) {
            let x0 = inputs[k].data()[i];
            let mut at = |d: f64| {
                probe[k].data_mut()[i] = x0 + d;
                let v = evaluate(&probe, &f);
                probe[k].data_mut()[i] = x0;
                v
            };
            let h = opts.h;
            let numeric = match opts.stencil {
                Stencil::ThreePoint => (at(h)? - at(-h)?) / (2.0 * h),
                Stencil::FivePoint => (8.0 * (at(h)? - at(-h)?) - (at(2.0 * h)? - at(-2.0 * h)?)) / (12.0 * h),
            };
            let err = rel_err(analytic[i], numeric);
            report.checked += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(err);
                report.worst = Some((k, i));
            }
        }
    }
    Ok(report)
}

/// Uniform values in `[-1, 1]`.
pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

/// Values with magnitude in `[0.1, 1]`, keeping kinks out of the difference stencil.
pub fn random_away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = rng.random_range(0.1..1.0);
        if rng.random_bool(0.5) { m } else { -m }
    })
}

type Builder = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

fn case(inputs: Vec<Tensor>, f: impl Fn(&mut Graph, &[Var]) -> Result<Var> + 'static) -> (Vec<Tensor>, Builder) {
    (inputs, Box::new(f))
}

/// One finite-difference check per primitive, on small seeded inputs.
pub fn primitive_suite(seed: u64) -> Result<Vec<(&'static str, GradReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let x4 = [1, 4, 8, 8];
    let cases: Vec<(&'static str, (Vec<Tensor>, Builder))> = vec![
        ("add", case(vec![random_tensor(r, &[3, 5]), random_tensor(r, &[3, 5])], |g, v| g.add(v[0], v[1]))),
        ("sub", case(vec![random_tensor(r, &[3, 5]), random_tensor(r, &[3, 5])], |g, v| g.sub(v[0], v[1]))),
        ("mul", case(vec![random_tensor(r, &[3, 5]), random_tensor(r, &[3, 5])], |g, v| g.mul(v[0], v[1]))),
        ("scale", case(vec![random_tensor(r, &[4, 3])], |g, v| Ok(g.scale(v[0], -2.5)))),
        (
            "mul_scalar",
            case(vec![random_tensor(r, &[2, 3, 3]), random_tensor(r, &[1])], |g, v| g.mul_scalar(v[0], v[1])),
        ),
        ("relu", case(vec![random_away_from_zero(r, &[4, 6])], |g, v| Ok(g.relu(v[0])))),
        ("gelu", case(vec![random_tensor(r, &[4, 6])], |g, v| Ok(g.gelu(v[0])))),
        ("sum", case(vec![random_tensor(r, &[2, 7])], |g, v| Ok(g.sum(v[0])))),
        ("mean", case(vec![random_tensor(r, &[2, 7])], |g, v| Ok(g.mean(v[0])))),
        (
            "l1_loss",
            case(vec![random_away_from_zero(r, &[3, 4]), Tensor::zeros(vec![3, 4])], |g, v| g.l1_loss(v[0], v[1])),
        ),
        ("reshape", case(vec![random_tensor(r, &[2, 6])], |g, v| g.reshape(v[0], &[3, 4]))),
        ("transpose", case(vec![random_tensor(r, &[2, 3, 5])], |g, v| g.transpose(v[0]))),
        (
            "matmul",
            case(vec![random_tensor(r, &[2, 3, 4]), random_tensor(r, &[2, 4, 5])], |g, v| g.matmul(v[0], v[1])),
        ),
        ("softmax_last", case(vec![random_tensor(r, &[3, 5])], |g, v| g.softmax(v[0], 1))),
        ("softmax_inner", case(vec![random_tensor(r, &[2, 4, 3])], |g, v| g.softmax(v[0], 1))),
        ("l2_normalize", case(vec![random_tensor(r, &[2, 4, 6])], |g, v| g.l2_normalize(v[0], 2, 1e-12))),
        (
            "layer_norm",
            case(
                vec![random_tensor(r, &x4), random_tensor(r, &[4]), random_tensor(r, &[4])],
                |g, v| g.layer_norm(v[0], v[1], v[2], 1, 1e-5),
            ),
        ),
        (
            "linear",
            case(
                vec![random_tensor(r, &[2, 3, 4]), random_tensor(r, &[5, 4]), random_tensor(r, &[5])],
                |g, v| g.linear(v[0], v[1], Some(v[2])),
            ),
        ),
        (
            "conv2d_3x3_same",
            case(
                vec![random_tensor(r, &x4), random_tensor(r, &[3, 4, 3, 3]), random_tensor(r, &[3])],
                |g, v| g.conv2d(v[0], v[1], Some(v[2]), 1, 1),
            ),
        ),
        (
            "conv2d_4x4_stride2",
            case(vec![random_tensor(r, &x4), random_tensor(r, &[2, 4, 4, 4])], |g, v| {
                g.conv2d(v[0], v[1], None, 2, 1)
            }),
        ),
        (
            "conv2d_1x1",
            case(
                vec![random_tensor(r, &[2, 4, 3, 3]), random_tensor(r, &[5, 4, 1, 1]), random_tensor(r, &[5])],
                |g, v| g.conv2d(v[0], v[1], Some(v[2]), 1, 0),
            ),
        ),
        ("avg_pool", case(vec![random_tensor(r, &x4)], |g, v| g.avg_pool(v[0], 2))),
        ("global_avg", case(vec![random_tensor(r, &x4)], |g, v| g.global_avg(v[0]))),
        ("upsample_nearest", case(vec![random_tensor(r, &[1, 2, 3, 3])], |g, v| g.upsample_nearest(v[0], 2))),
        (
            "concat",
            case(vec![random_tensor(r, &[1, 2, 3, 3]), random_tensor(r, &[1, 3, 3, 3])], |g, v| {
                g.concat(v[0], v[1], 1)
            }),
        ),
    ];
    cases
        .into_iter()
        .map(|(name, (inputs, f))| Ok((name, check(&inputs, f, CheckOptions::default())?)))
        .collect()
}

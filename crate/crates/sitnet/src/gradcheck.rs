//! Finite-difference checks of a full SIT-U block.

use hsical_tensor::gradcheck::{check, random_tensor, CheckOptions, GradReport};
use hsical_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{Ablation, Combine};
use crate::error::Result;
use crate::params::{Bound, Init, ParamSpec};
use crate::unit::{sit_unit_forward, unit_specs, UnitHooks, UnitShape};

/// Input shape of the block checks.
pub const CHECK_SHAPE: [usize; 4] = [1, 4, 8, 8];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitCase {
    pub ablation: Ablation,
    pub combine: Combine,
    pub stride_t: usize,
    pub pool_p: usize,
}

impl UnitCase {
    pub fn label(&self) -> String {
        format!("sit_unit[{} {} t={} p={}]", self.ablation, self.combine.name(), self.stride_t, self.pool_p)
    }
}

/// All ablations under both reduction splits that fit an 8×8 map, plus the
/// elementwise combination.
pub fn default_cases() -> Vec<UnitCase> {
    let mut out = Vec::new();
    for (t, p) in [(2, 1), (1, 2)] {
        for ablation in Ablation::ALL {
            out.push(UnitCase { ablation, combine: Combine::MatMul, stride_t: t, pool_p: p });
        }
    }
    out.push(UnitCase { ablation: Ablation::Both, combine: Combine::Elementwise, stride_t: 2, pool_p: 1 });
    out
}

/// Parameters drawn at unit scale so every path carries a visible gradient.
fn random_param(rng: &mut ChaCha8Rng, spec: &ParamSpec) -> Tensor {
    match spec.init {
        Init::Ones => Tensor::from_fn(spec.shape.clone(), |_| 1.0 + rng.random_range(-0.3..0.3)),
        _ => random_tensor(rng, &spec.shape).map(|v| 0.5 * v),
    }
}

pub fn unit_gradcheck(case: &UnitCase, seed: u64) -> Result<GradReport> {
    let u = UnitShape {
        channels: CHECK_SHAPE[1],
        stride_t: case.stride_t,
        pool_p: case.pool_p,
        ffn_expansion: 2,
        ablation: case.ablation,
        combine: case.combine,
    };
    let specs = unit_specs("u", &u);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = vec![random_tensor(&mut rng, &CHECK_SHAPE)];
    inputs.extend(specs.iter().map(|s| random_param(&mut rng, s)));
    let names: Vec<String> = specs.iter().map(|s| s.name.clone()).collect();
    let report = check(
        &inputs,
        |g, vars| {
            let bound = Bound { vars: names.iter().cloned().zip(vars[1..].iter().copied()).collect() };
            sit_unit_forward(g, &bound, "u", vars[0], &u, &mut UnitHooks::default())
        },
        CheckOptions::five_point(),
    )?;
    Ok(report)
}

pub fn unit_suite(seed: u64) -> Result<Vec<(String, GradReport)>> {
    default_cases().iter().map(|c| Ok((c.label(), unit_gradcheck(c, seed)?))).collect()
}

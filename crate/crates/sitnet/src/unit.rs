//! One SIT-U block: spectral and illumination channel attention, value
//! mixing and a feed-forward sub-block, each with a residual connection.

use hsical_tensor::{Graph, Tensor, Var};

use crate::config::{ia_multiple, Ablation, Combine};
use crate::error::{Error, Result};
use crate::params::{Bound, Init, ParamSpec};

pub const LN_EPS: f64 = 1e-5;
pub const L2_EPS: f64 = 1e-12;

/// Geometry and mode of one block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitShape {
    pub channels: usize,
    pub stride_t: usize,
    pub pool_p: usize,
    pub ffn_expansion: usize,
    pub ablation: Ablation,
    pub combine: Combine,
}

/// Every parameter a block can own, regardless of ablation.
pub fn full_unit_specs(prefix: &str, u: &UnitShape) -> Vec<ParamSpec> {
    let (c, t, e) = (u.channels, u.stride_t, u.ffn_expansion);
    let n = |s: &str| format!("{prefix}.{s}");
    vec![
        ParamSpec::new(n("ln1.gamma"), &[c], Init::Ones),
        ParamSpec::new(n("ln1.beta"), &[c], Init::Zeros),
        ParamSpec::new(n("c0.w"), &[c, c, 1, 1], Init::TruncNormal),
        ParamSpec::new(n("c0.b"), &[c], Init::Zeros),
        ParamSpec::new(n("v.w"), &[c, c, 1, 1], Init::TruncNormal),
        ParamSpec::new(n("sa.q"), &[c, c, 1, 1], Init::TruncNormal),
        ParamSpec::new(n("sa.k"), &[c, c, 1, 1], Init::TruncNormal),
        ParamSpec::new(n("sa.tau"), &[1], Init::Ones),
        ParamSpec::new(n("ia.c1.w"), &[c, c, 3, 3], Init::TruncNormal),
        ParamSpec::new(n("ia.c1.b"), &[c], Init::Zeros),
        ParamSpec::new(n("ia.c2.w"), &[c, c, t, t], Init::TruncNormal),
        ParamSpec::new(n("ia.c2.b"), &[c], Init::Zeros),
        ParamSpec::new(n("ia.c3.w"), &[c, c, t, t], Init::TruncNormal),
        ParamSpec::new(n("ia.c3.b"), &[c], Init::Zeros),
        ParamSpec::new(n("ia.l.w"), &[c, c], Init::TruncNormal),
        ParamSpec::new(n("ia.l.b"), &[c], Init::Zeros),
        ParamSpec::new(n("ln2.gamma"), &[c], Init::Ones),
        ParamSpec::new(n("ln2.beta"), &[c], Init::Zeros),
        ParamSpec::new(n("ffn.w1"), &[e * c, c, 1, 1], Init::TruncNormal),
        ParamSpec::new(n("ffn.b1"), &[e * c], Init::Zeros),
        ParamSpec::new(n("ffn.w2"), &[c, e * c, 1, 1], Init::TruncNormal),
        ParamSpec::new(n("ffn.b2"), &[c], Init::Zeros),
    ]
}

/// Parameters the block actually reads under its ablation.
pub fn unit_specs(prefix: &str, u: &UnitShape) -> Vec<ParamSpec> {
    full_unit_specs(prefix, u)
        .into_iter()
        .filter(|s| {
            let local = &s.name[prefix.len() + 1..];
            if local.starts_with("sa.") {
                u.ablation.uses_sa()
            } else if local.starts_with("ia.") {
                u.ablation.uses_ia()
            } else {
                true
            }
        })
        .collect()
}

/// Attention matrices of one block evaluation, `[N, Cf, Cf]` each.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UnitTrace {
    pub a_s: Option<Tensor>,
    pub a_i: Option<Tensor>,
    pub a_si: Option<Tensor>,
    pub x_i: Option<Tensor>,
}

/// Constant substituted for the illumination affinity.
#[derive(Debug, Clone, PartialEq)]
pub enum AiOverride {
    /// `Id` of the block's channel count, in every block.
    Identity,
    /// `[Cf, Cf]` is broadcast over the batch, `[N, Cf, Cf]` is used as is.
    Fixed(Tensor),
}

/// Observation and intervention points for [`sit_unit_forward`].
#[derive(Debug, Clone, Default)]
pub struct UnitHooks {
    pub a_i_override: Option<AiOverride>,
    pub record: bool,
    pub traces: Vec<UnitTrace>,
}

impl UnitHooks {
    pub fn recording() -> Self {
        Self { record: true, ..Self::default() }
    }
}

fn nchw(g: &Graph, x: Var) -> Result<[usize; 4]> {
    let s = g.shape(x);
    if s.len() != 4 {
        return Err(hsical_tensor::Error::ShapeMismatch(format!("expected [N, C, H, W], got {s:?}")).into());
    }
    Ok([s[0], s[1], s[2], s[3]])
}

/// Channel-transposed attention: returns the unnormalised affinity
/// `A_S = τ · q̂ k̂ᵀ` `[N, Cf, Cf]` and the values `x_v` `[N, Cf, H·W]`.
pub fn spectral_attention(g: &mut Graph, p: &Bound, prefix: &str, x1: Var) -> Result<(Var, Var)> {
    let [n, c, h, w] = nchw(g, x1)?;
    let flat = |g: &mut Graph, name: &str| -> Result<Var> {
        let y = g.conv2d(x1, p.get(&format!("{prefix}.{name}"))?, None, 1, 0)?;
        Ok(g.reshape(y, &[n, c, h * w])?)
    };
    let q = flat(g, "sa.q")?;
    let k = flat(g, "sa.k")?;
    let xv = value_projection(g, p, prefix, x1)?;
    let q = g.l2_normalize(q, 2, L2_EPS)?;
    let k = g.l2_normalize(k, 2, L2_EPS)?;
    let kt = g.transpose(k)?;
    let a = g.matmul(q, kt)?;
    let a_s = g.mul_scalar(a, p.get(&format!("{prefix}.sa.tau"))?)?;
    Ok((a_s, xv))
}

/// `x_v`, the 1×1 value projection flattened to `[N, Cf, H·W]`.
pub fn value_projection(g: &mut Graph, p: &Bound, prefix: &str, x1: Var) -> Result<Var> {
    let [n, c, h, w] = nchw(g, x1)?;
    let v = g.conv2d(x1, p.get(&format!("{prefix}.v.w"))?, None, 1, 0)?;
    Ok(g.reshape(v, &[n, c, h * w])?)
}

/// Rank-1 illumination affinity `A_I = q_I q_Iᵀ` `[N, Cf, Cf]`, plus the
/// pooled descriptor `x_I` `[N, Cf]`.
pub fn illumination_attention(
    g: &mut Graph,
    p: &Bound,
    prefix: &str,
    x1: Var,
    t: usize,
    pool: usize,
) -> Result<(Var, Var)> {
    let [n, c, h, w] = nchw(g, x1)?;
    let required = ia_multiple(t, pool);
    for size in [h, w] {
        if size < required || size % required != 0 {
            return Err(Error::SpatialUnderflow { size, required });
        }
    }
    let get = |s: &str| p.get(&format!("{prefix}.ia.{s}"));
    let x2 = g.conv2d(x1, get("c1.w")?, Some(get("c1.b")?), 1, 1)?;
    let d3 = g.conv2d(x2, get("c2.w")?, Some(get("c2.b")?), t, 0)?;
    let x3 = g.avg_pool(d3, pool)?;
    let d4 = g.conv2d(x3, get("c3.w")?, Some(get("c3.b")?), t, 0)?;
    let x4 = g.avg_pool(d4, pool)?;
    let pooled = g.global_avg(x4)?;
    let x_i = g.reshape(pooled, &[n, c])?;
    let q = g.linear(x_i, get("l.w")?, Some(get("l.b")?))?;
    let col = g.reshape(q, &[n, c, 1])?;
    let row = g.reshape(q, &[n, 1, c])?;
    Ok((g.matmul(col, row)?, x_i))
}

fn override_var(g: &mut Graph, o: &AiOverride, n: usize, c: usize) -> Result<Var> {
    let identity;
    let t = match o {
        AiOverride::Identity => {
            identity = Tensor::from_fn(vec![c, c], |i| if i / c == i % c { 1.0 } else { 0.0 });
            &identity
        }
        AiOverride::Fixed(t) => t,
    };
    let tiled = match t.shape() {
        [a, b] if *a == c && *b == c => {
            let mut data = Vec::with_capacity(n * c * c);
            for _ in 0..n {
                data.extend_from_slice(t.data());
            }
            Tensor::new(vec![n, c, c], data)?
        }
        [m, a, b] if *m == n && *a == c && *b == c => t.clone(),
        other => {
            return Err(hsical_tensor::Error::ShapeMismatch(format!(
                "A_I override must be [{c}, {c}] or [{n}, {c}, {c}], got {other:?}"
            ))
            .into())
        }
    };
    Ok(g.constant(tiled))
}

/// `y = x0 + A_SI·x_v`, `out = y + FFN(LN(y))` with `x1 = f_c0(LN(x0))`
/// feeding both attention branches.
pub fn sit_unit_forward(
    g: &mut Graph,
    p: &Bound,
    prefix: &str,
    x0: Var,
    u: &UnitShape,
    hooks: &mut UnitHooks,
) -> Result<Var> {
    let [n, c, h, w] = nchw(g, x0)?;
    if c != u.channels {
        return Err(hsical_tensor::Error::ShapeMismatch(format!(
            "{prefix}: block expects {} channels, got {c}",
            u.channels
        ))
        .into());
    }
    let get = |s: &str| p.get(&format!("{prefix}.{s}"));
    let ln1 = g.layer_norm(x0, get("ln1.gamma")?, get("ln1.beta")?, 1, LN_EPS)?;
    let x1 = g.conv2d(ln1, get("c0.w")?, Some(get("c0.b")?), 1, 0)?;

    let (a_s, xv) = if u.ablation.uses_sa() {
        let (a, v) = spectral_attention(g, p, prefix, x1)?;
        (Some(a), v)
    } else {
        (None, value_projection(g, p, prefix, x1)?)
    };
    let (a_i, x_i) = if u.ablation.uses_ia() {
        match &hooks.a_i_override {
            Some(t) => (Some(override_var(g, t, n, c)?), None),
            None => {
                let (a, xi) = illumination_attention(g, p, prefix, x1, u.stride_t, u.pool_p)?;
                (Some(a), Some(xi))
            }
        }
    } else {
        (None, None)
    };

    let logits = match (a_s, a_i) {
        (Some(s), Some(i)) => Some(match u.combine {
            Combine::MatMul => g.matmul(s, i)?,
            Combine::Elementwise => g.mul(s, i)?,
        }),
        (Some(s), None) => Some(s),
        (None, Some(i)) => Some(i),
        (None, None) => None,
    };
    let a_si = logits.map(|l| g.softmax(l, 2)).transpose()?;
    let xa = match a_si {
        Some(a) => g.matmul(a, xv)?,
        None => xv,
    };
    if hooks.record {
        let val = |v: Option<Var>| v.map(|v| g.value(v).clone());
        hooks.traces.push(UnitTrace { a_s: val(a_s), a_i: val(a_i), a_si: val(a_si), x_i: val(x_i) });
    }

    let xa = g.reshape(xa, &[n, c, h, w])?;
    let y = g.add(x0, xa)?;
    let ln2 = g.layer_norm(y, get("ln2.gamma")?, get("ln2.beta")?, 1, LN_EPS)?;
    let f1 = g.conv2d(ln2, get("ffn.w1")?, Some(get("ffn.b1")?), 1, 0)?;
    let f1 = g.gelu(f1);
    let f2 = g.conv2d(f1, get("ffn.w2")?, Some(get("ffn.b2")?), 1, 0)?;
    Ok(g.add(y, f2)?)
}

//! U-shaped encoder–decoder of SIT-U blocks with a global residual.

use hsical_tensor::{Checkpoint, Graph, Tensor, Var};

use crate::config::SitConfig;
use crate::error::{Error, Result};
use crate::params::{Bound, Init, ParamSpec, ParamStore, CONFIG_ENTRY};
use crate::unit::{full_unit_specs, sit_unit_forward, unit_specs, UnitHooks, UnitShape};

fn unit_shape(cfg: &SitConfig, channels: usize) -> UnitShape {
    UnitShape {
        channels,
        stride_t: cfg.stride_t,
        pool_p: cfg.pool_p,
        ffn_expansion: cfg.ffn_expansion,
        ablation: cfg.ablation,
        combine: cfg.combine,
    }
}

fn conv_specs(prefix: &str, cout: usize, cin: usize, k: usize, init: Init) -> [ParamSpec; 2] {
    [
        ParamSpec::new(format!("{prefix}.w"), &[cout, cin, k, k], init),
        ParamSpec::new(format!("{prefix}.b"), &[cout], Init::Zeros),
    ]
}

fn stage_width(cfg: &SitConfig, level: usize) -> usize {
    cfg.base_channels << level
}

fn specs_with(cfg: &SitConfig, units: impl Fn(&str, &UnitShape) -> Vec<ParamSpec>) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    let base = cfg.base_channels;
    out.extend(conv_specs("embed", base, cfg.in_bands, 3, Init::TruncNormal));
    for s in 0..cfg.ushape_depth {
        let c = stage_width(cfg, s);
        for m in 0..cfg.layers_m {
            out.extend(units(&format!("enc{s}.unit{m}"), &unit_shape(cfg, c)));
        }
        out.extend(conv_specs(&format!("enc{s}.down"), 2 * c, c, 4, Init::TruncNormal));
    }
    let deep = stage_width(cfg, cfg.ushape_depth);
    for m in 0..cfg.layers_m {
        out.extend(units(&format!("mid.unit{m}"), &unit_shape(cfg, deep)));
    }
    for s in (0..cfg.ushape_depth).rev() {
        let c = stage_width(cfg, s);
        out.extend(conv_specs(&format!("dec{s}.up"), c, 2 * c, 3, Init::TruncNormal));
        out.extend(conv_specs(&format!("dec{s}.fuse"), c, 2 * c, 1, Init::TruncNormal));
        for m in 0..cfg.layers_m {
            out.extend(units(&format!("dec{s}.unit{m}"), &unit_shape(cfg, c)));
        }
    }
    out.extend(conv_specs("head", cfg.in_bands, base, 3, Init::Zeros));
    out
}

/// Every parameter of the architecture, ablation ignored. Initialisation
/// draws from this list so shared weights agree across ablations.
pub fn full_param_specs(cfg: &SitConfig) -> Vec<ParamSpec> {
    specs_with(cfg, full_unit_specs)
}

/// Parameters read by the configured ablation.
pub fn param_specs(cfg: &SitConfig) -> Vec<ParamSpec> {
    specs_with(cfg, unit_specs)
}

pub fn param_count(cfg: &SitConfig) -> usize {
    param_specs(cfg).iter().map(ParamSpec::len).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SitNet {
    pub config: SitConfig,
    pub params: ParamStore,
}

impl SitNet {
    pub fn new(config: SitConfig) -> Result<Self> {
        config.validate()?;
        let full = ParamStore::init(&full_param_specs(&config), config.seed);
        let params = full.restrict(&param_specs(&config))?;
        Ok(Self { config, params })
    }

    pub fn with_params(config: SitConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let params = params.restrict(&param_specs(&config))?;
        Ok(Self { config, params })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        self.params.to_checkpoint(&self.config)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let text = ck
            .text(CONFIG_ENTRY)?
            .ok_or_else(|| Error::InvalidConfig("checkpoint carries no model config".into()))?;
        let config = SitConfig::from_kv(&text)?;
        let store = ParamStore {
            entries: ck.entries.iter().filter(|(n, _)| n != CONFIG_ENTRY).cloned().collect(),
        };
        Self::with_params(config, store)
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 4 || shape[1] != self.config.in_bands {
            return Err(hsical_tensor::Error::ShapeMismatch(format!(
                "expected [N, {}, H, W], got {shape:?}",
                self.config.in_bands
            ))
            .into());
        }
        let multiple = self.config.spatial_multiple();
        let (h, w) = (shape[2], shape[3]);
        if h == 0 || w == 0 || h % multiple != 0 || w % multiple != 0 {
            return Err(Error::IncompatibleSpatialDims { height: h, width: w, multiple });
        }
        Ok(())
    }

    /// Records the network on `g`; `p` must come from [`ParamStore::bind`].
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var, hooks: &mut UnitHooks) -> Result<Var> {
        self.check_input(g.shape(x))?;
        sit_forward(g, p, x, &self.config, hooks)
    }

    /// Inference on `[N, C, H, W]`.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let y = self.forward(&mut g, &p, xv, &mut UnitHooks::default())?;
        Ok(g.value(y).clone())
    }
}

fn conv(g: &mut Graph, p: &Bound, prefix: &str, x: Var, stride: usize, pad: usize) -> Result<Var> {
    let w = p.get(&format!("{prefix}.w"))?;
    let b = p.get(&format!("{prefix}.b"))?;
    Ok(g.conv2d(x, w, Some(b), stride, pad)?)
}

/// Embed, encoder stages with stride-2 downsampling, bottleneck, decoder
/// stages with nearest upsampling and skip fusion, zero-initialised head,
/// and `output = input + head`.
pub fn sit_forward(g: &mut Graph, p: &Bound, x: Var, cfg: &SitConfig, hooks: &mut UnitHooks) -> Result<Var> {
    let mut h = conv(g, p, "embed", x, 1, 1)?;
    let mut skips = Vec::with_capacity(cfg.ushape_depth);
    for s in 0..cfg.ushape_depth {
        let shape = unit_shape(cfg, stage_width(cfg, s));
        for m in 0..cfg.layers_m {
            h = sit_unit_forward(g, p, &format!("enc{s}.unit{m}"), h, &shape, hooks)?;
        }
        skips.push(h);
        h = conv(g, p, &format!("enc{s}.down"), h, 2, 1)?;
    }
    let deep = unit_shape(cfg, stage_width(cfg, cfg.ushape_depth));
    for m in 0..cfg.layers_m {
        h = sit_unit_forward(g, p, &format!("mid.unit{m}"), h, &deep, hooks)?;
    }
    for s in (0..cfg.ushape_depth).rev() {
        let shape = unit_shape(cfg, stage_width(cfg, s));
        let up = g.upsample_nearest(h, 2)?;
        let up = conv(g, p, &format!("dec{s}.up"), up, 1, 1)?;
        let cat = g.concat(up, skips[s], 1)?;
        h = conv(g, p, &format!("dec{s}.fuse"), cat, 1, 0)?;
        for m in 0..cfg.layers_m {
            h = sit_unit_forward(g, p, &format!("dec{s}.unit{m}"), h, &shape, hooks)?;
        }
    }
    let head = conv(g, p, "head", h, 1, 1)?;
    Ok(g.add(x, head)?)
}

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Which attention branches feed the value mixing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Ablation {
    /// No attention; values pass straight through.
    None,
    SaOnly,
    IaOnly,
    Both,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::None, Ablation::SaOnly, Ablation::IaOnly, Ablation::Both];

    pub fn uses_sa(self) -> bool {
        matches!(self, Ablation::SaOnly | Ablation::Both)
    }

    pub fn uses_ia(self) -> bool {
        matches!(self, Ablation::IaOnly | Ablation::Both)
    }

    pub fn name(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::SaOnly => "sa",
            Ablation::IaOnly => "ia",
            Ablation::Both => "both",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Ablation::None),
            "sa" | "sa_only" | "saonly" => Ok(Ablation::SaOnly),
            "ia" | "ia_only" | "iaonly" => Ok(Ablation::IaOnly),
            "both" => Ok(Ablation::Both),
            _ => Err(Error::AblationUnsupported(s.to_string())),
        }
    }
}

/// How the two channel affinities are combined before the softmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Combine {
    MatMul,
    Elementwise,
}

impl Combine {
    pub fn name(self) -> &'static str {
        match self {
            Combine::MatMul => "matmul",
            Combine::Elementwise => "elementwise",
        }
    }
}

impl FromStr for Combine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "matmul" => Ok(Combine::MatMul),
            "elementwise" | "hadamard" => Ok(Combine::Elementwise),
            _ => Err(Error::InvalidConfig(format!("unknown combine mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SitConfig {
    pub layers_m: usize,
    pub stride_t: usize,
    pub pool_p: usize,
    pub base_channels: usize,
    pub ushape_depth: usize,
    pub ffn_expansion: usize,
    pub ablation: Ablation,
    pub combine: Combine,
    pub in_bands: usize,
    pub seed: u64,
}

impl Default for SitConfig {
    fn default() -> Self {
        Self {
            layers_m: 1,
            stride_t: 2,
            pool_p: 2,
            base_channels: 8,
            ushape_depth: 2,
            ffn_expansion: 2,
            ablation: Ablation::Both,
            combine: Combine::MatMul,
            in_bands: 8,
            seed: 0,
        }
    }
}

impl SitConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("layers_m", self.layers_m),
            ("stride_t", self.stride_t),
            ("pool_p", self.pool_p),
            ("base_channels", self.base_channels),
            ("ushape_depth", self.ushape_depth),
            ("ffn_expansion", self.ffn_expansion),
            ("in_bands", self.in_bands),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be ≥ 1")));
            }
        }
        Ok(())
    }

    /// Spatial extents must be multiples of this at the network input.
    pub fn spatial_multiple(&self) -> usize {
        (1 << self.ushape_depth) * ia_multiple(self.stride_t, self.pool_p)
    }

    pub fn to_kv(&self) -> String {
        format!(
            "layers_m={}\nstride_t={}\npool_p={}\nbase_channels={}\nushape_depth={}\nffn_expansion={}\nablation={}\ncombine={}\nin_bands={}\nseed={}\n",
            self.layers_m,
            self.stride_t,
            self.pool_p,
            self.base_channels,
            self.ushape_depth,
            self.ffn_expansion,
            self.ablation,
            self.combine.name(),
            self.in_bands,
            self.seed
        )
    }

    /// Parses `key=value` lines; `#` starts a comment, missing keys keep defaults.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected key=value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let int = || {
                value
                    .parse::<usize>()
                    .map_err(|_| Error::InvalidConfig(format!("{key}: {value:?} is not a non-negative integer")))
            };
            match key {
                "layers_m" => cfg.layers_m = int()?,
                "stride_t" => cfg.stride_t = int()?,
                "pool_p" => cfg.pool_p = int()?,
                "base_channels" => cfg.base_channels = int()?,
                "ushape_depth" => cfg.ushape_depth = int()?,
                "ffn_expansion" => cfg.ffn_expansion = int()?,
                "in_bands" => cfg.in_bands = int()?,
                "ablation" => cfg.ablation = value.parse()?,
                "combine" => cfg.combine = value.parse()?,
                "seed" => {
                    cfg.seed = value
                        .parse()
                        .map_err(|_| Error::InvalidConfig(format!("seed: {value:?} is not an integer")))?
                }
                _ => return Err(Error::InvalidConfig(format!("unknown key {key:?}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// The illumination chain divides each extent by `t·p` twice.
pub fn ia_multiple(t: usize, p: usize) -> usize {
    (t * p) * (t * p)
}

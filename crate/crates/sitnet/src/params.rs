//! Named parameter storage and deterministic initialisation.

use std::collections::HashMap;

use hsical_tensor::{Checkpoint, Graph, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::SitConfig;
use crate::error::{Error, Result};

pub const INIT_STD: f64 = 0.02;
pub const CONFIG_ENTRY: &str = "__config__";

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Normal with [`INIT_STD`], redrawn outside two standard deviations.
    TruncNormal,
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: &[usize], init: Init) -> Self {
        Self { name: name.into(), shape: shape.to_vec(), init }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Ordered `(name, tensor)` list.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    pub entries: Vec<(String, Tensor)>,
}

fn trunc_normal(rng: &mut ChaCha8Rng, normal: &Normal<f64>) -> f64 {
    loop {
        let v = normal.sample(rng);
        if v.abs() <= 2.0 * INIT_STD {
            return v;
        }
    }
}

impl ParamStore {
    /// Draws every spec in order from one seeded stream.
    pub fn init(specs: &[ParamSpec], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).unwrap();
        let entries = specs
            .iter()
            .map(|s| {
                let t = match s.init {
                    Init::TruncNormal => Tensor::from_fn(s.shape.clone(), |_| trunc_normal(&mut rng, &normal)),
                    Init::Zeros => Tensor::zeros(s.shape.clone()),
                    Init::Ones => Tensor::full(s.shape.clone(), 1.0),
                };
                (s.name.clone(), t)
            })
            .collect();
        Self { entries }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.entries.iter().map(|(_, t)| t.clone()).collect()
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Keeps only entries named in `specs`, in spec order.
    pub fn restrict(&self, specs: &[ParamSpec]) -> Result<Self> {
        let entries = specs
            .iter()
            .map(|s| {
                let t = self.get(&s.name).ok_or_else(|| Error::MissingParam(s.name.clone()))?;
                if t.shape() != s.shape.as_slice() {
                    return Err(Error::InvalidConfig(format!(
                        "parameter {} has shape {:?}, expected {:?}",
                        s.name,
                        t.shape(),
                        s.shape
                    )));
                }
                Ok((s.name.clone(), t.clone()))
            })
            .collect::<Result<_>>()?;
        Ok(Self { entries })
    }

    /// Records every parameter on `g`.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        let vars = self.entries.iter().map(|(n, t)| (n.clone(), g.leaf(t.clone(), trainable))).collect();
        Bound { vars }
    }

    pub fn to_checkpoint(&self, cfg: &SitConfig) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.push_text(CONFIG_ENTRY, &cfg.to_kv());
        for (n, t) in &self.entries {
            ck.push(n.clone(), t.clone());
        }
        ck
    }
}

/// Parameter name → graph variable.
#[derive(Debug, Clone, Default)]
pub struct Bound {
    pub vars: HashMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| Error::MissingParam(name.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_truncated() {
        let specs = vec![
            ParamSpec::new("w", &[64, 8], Init::TruncNormal),
            ParamSpec::new("b", &[8], Init::Zeros),
            ParamSpec::new("g", &[8], Init::Ones),
        ];
        let a = ParamStore::init(&specs, 3);
        assert_eq!(a, ParamStore::init(&specs, 3));
        assert_ne!(a, ParamStore::init(&specs, 4));
        let w = a.get("w").unwrap();
        assert!(w.data().iter().all(|v| v.abs() <= 2.0 * INIT_STD));
        let std = (w.data().iter().map(|v| v * v).sum::<f64>() / w.len() as f64).sqrt();
        assert!(std > 0.01 && std < 0.02, "{std}");
        assert!(a.get("b").unwrap().data().iter().all(|&v| v == 0.0));
        assert!(a.get("g").unwrap().data().iter().all(|&v| v == 1.0));
        assert_eq!(a.scalar_count(), 512 + 16);
    }

    #[test]
    fn restrict_checks_presence_and_shape() {
        let specs = vec![ParamSpec::new("w", &[2, 2], Init::Ones)];
        let s = ParamStore::init(&specs, 0);
        assert!(s.restrict(&[ParamSpec::new("v", &[2, 2], Init::Ones)]).is_err());
        assert!(s.restrict(&[ParamSpec::new("w", &[4], Init::Ones)]).is_err());
        assert_eq!(s.restrict(&specs).unwrap(), s);
    }
}

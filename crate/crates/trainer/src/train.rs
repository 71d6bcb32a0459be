//! L1 training with Adam and best-validation checkpointing.

use std::fs;
use std::io::Write;
use std::path::Path;

use hsical_sitnet::{SitConfig, SitNet, UnitHooks};
use hsical_tensor::{Adam, AdamConfig, Graph, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{to_tensor, Crop};
use crate::error::{Error, Result};
use crate::synth::Pair;

pub const CHECKPOINT_FILE: &str = "model.hsw";
pub const LOSS_FILE: &str = "loss.csv";
pub const VAL_FILE: &str = "val.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub crop: usize,
    pub batch: usize,
    pub epochs: usize,
    /// Overrides `epochs` when set.
    pub max_steps: Option<usize>,
    pub lr: f64,
    pub fractions: [f64; 3],
    pub seed: u64,
    /// Validation cadence in steps; validation also runs after the last step.
    pub val_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            crop: 64,
            batch: 2,
            epochs: 10,
            max_steps: None,
            lr: 1e-4,
            fractions: [0.7, 0.15, 0.15],
            seed: 0,
            val_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, model: &SitConfig) -> Result<()> {
        if self.batch == 0 || self.val_every == 0 {
            return Err(Error::InvalidConfig("batch and val_every must be ≥ 1".into()));
        }
        let m = model.spatial_multiple();
        if self.crop == 0 || self.crop % m != 0 {
            return Err(Error::InvalidConfig(format!("crop {} must be a positive multiple of {m}", self.crop)));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("lr {} must be finite and ≥ 0", self.lr)));
        }
        Ok(())
    }

    pub fn steps(&self, n_train: usize) -> usize {
        self.max_steps.unwrap_or(self.epochs * n_train.div_ceil(self.batch))
    }

    pub fn to_kv(&self) -> String {
        let mut s = format!(
            "crop={}\nbatch={}\nepochs={}\nlr={}\nsplits={},{},{}\nseed={}\nval_every={}\n",
            self.crop,
            self.batch,
            self.epochs,
            self.lr,
            self.fractions[0],
            self.fractions[1],
            self.fractions[2],
            self.seed,
            self.val_every
        );
        if let Some(n) = self.max_steps {
            s.push_str(&format!("max_steps={n}\n"));
        }
        s
    }

    /// Parses `key=value` lines; unspecified keys keep their defaults.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for raw in text.lines() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("expected key=value, got {line:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            let bad = || Error::InvalidConfig(format!("{k}: cannot parse {v:?}"));
            match k {
                "crop" => cfg.crop = v.parse().map_err(|_| bad())?,
                "batch" => cfg.batch = v.parse().map_err(|_| bad())?,
                "epochs" => cfg.epochs = v.parse().map_err(|_| bad())?,
                "max_steps" => cfg.max_steps = Some(v.parse().map_err(|_| bad())?),
                "lr" => cfg.lr = v.parse().map_err(|_| bad())?,
                "seed" => cfg.seed = v.parse().map_err(|_| bad())?,
                "val_every" => cfg.val_every = v.parse().map_err(|_| bad())?,
                "loss" if v.eq_ignore_ascii_case("l1") => {}
                "splits" => {
                    let parts: Vec<f64> = v.split(',').map(|p| p.trim().parse()).collect::<Result<_, _>>().map_err(|_| bad())?;
                    cfg.fractions = parts.try_into().map_err(|_| bad())?;
                }
                _ => return Err(Error::InvalidConfig(format!("unknown or unsupported key {k:?}={v:?}"))),
            }
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights at the lowest validation L1.
    pub best: SitNet,
    pub last: SitNet,
    /// Minibatch L1 before each update; entry `i` belongs to step `i`.
    pub loss_trace: Vec<f64>,
    /// `(step, mean validation L1)`; step counts completed updates.
    pub val_trace: Vec<(usize, f64)>,
    pub best_step: usize,
    pub best_val: f64,
}

impl TrainOutcome {
    pub fn write_loss_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "step,loss")?;
        for (i, l) in self.loss_trace.iter().enumerate() {
            writeln!(w, "{i},{l}")?;
        }
        Ok(())
    }

    /// Writes the best checkpoint, the loss trace and the validation trace.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        self.best.to_checkpoint().save(dir.join(CHECKPOINT_FILE))?;
        self.write_loss_csv(fs::File::create(dir.join(LOSS_FILE))?)?;
        let mut v = fs::File::create(dir.join(VAL_FILE))?;
        writeln!(v, "step,val_l1")?;
        for (s, l) in &self.val_trace {
            writeln!(v, "{s},{l}")?;
        }
        Ok(())
    }
}

/// Mean L1 between the network output and the target over centred crops.
pub fn mean_l1(net: &SitNet, pairs: &[&Pair], crop: usize) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset("no pairs to score".into()));
    }
    let mut total = 0.0;
    for p in pairs {
        let c = Crop::centred(&p.input, crop);
        let x = to_tensor(&[(&p.input, c)])?;
        let y = to_tensor(&[(&p.gt, c)])?;
        let out = net.predict(&x)?;
        total += out.data().iter().zip(y.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64;
    }
    Ok(total / pairs.len() as f64)
}

fn random_crop(rng: &mut ChaCha8Rng, p: &Pair, size: usize) -> Result<Crop> {
    let (h, w) = (p.input.height(), p.input.width());
    if h < size || w < size {
        return Err(Error::InvalidConfig(format!("crop {size} exceeds a {h}×{w} scene")));
    }
    Ok(Crop { row: rng.random_range(0..=h - size), col: rng.random_range(0..=w - size), size })
}

/// Trains a freshly initialised network. `val` may be empty, in which case
/// the training pairs double as the validation set.
pub fn train(model_cfg: &SitConfig, cfg: &TrainConfig, train_pairs: &[&Pair], val: &[&Pair]) -> Result<TrainOutcome> {
    train_from(SitNet::new(model_cfg.clone())?, cfg, train_pairs, val)
}

pub fn train_from(mut net: SitNet, cfg: &TrainConfig, train_pairs: &[&Pair], val: &[&Pair]) -> Result<TrainOutcome> {
    cfg.validate(&net.config)?;
    if train_pairs.is_empty() {
        return Err(Error::EmptyDataset("training split is empty".into()));
    }
    let val = if val.is_empty() { train_pairs } else { val };
    let steps = cfg.steps(train_pairs.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = net.params.tensors();
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr), &params);
    let names: Vec<String> = net.params.names().map(str::to_string).collect();

    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut loss_trace = Vec::with_capacity(steps);
    let mut val_trace = Vec::new();
    let mut best = (net.clone(), f64::INFINITY, 0usize);
    let mut last_loss = f64::NAN;

    for step in 0..steps {
        let mut batch = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            if cursor == order.len() {
                order = (0..train_pairs.len()).collect();
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(train_pairs[order[cursor]]);
            cursor += 1;
        }
        let crops: Vec<Crop> = batch.iter().map(|p| random_crop(&mut rng, p, cfg.crop)).collect::<Result<_>>()?;
        let x = to_tensor(&batch.iter().zip(&crops).map(|(p, c)| (&p.input, *c)).collect::<Vec<_>>())?;
        let y = to_tensor(&batch.iter().zip(&crops).map(|(p, c)| (&p.gt, *c)).collect::<Vec<_>>())?;

        let mut g = Graph::new();
        let bound = net.params.bind(&mut g, true);
        let xv = g.constant(x);
        let yv = g.constant(y);
        let out = net.forward(&mut g, &bound, xv, &mut UnitHooks::default())?;
        let loss = g.l1_loss(out, yv)?;
        let l = g.value(loss).item();
        if !l.is_finite() {
            return Err(Error::DivergenceDetected { step, last_loss });
        }
        loss_trace.push(l);
        last_loss = l;
        g.backward(loss)?;
        let grads: Vec<Option<&[f64]>> = names.iter().map(|n| bound.vars.get(n).and_then(|&v| g.grad(v))).collect();
        adam.step(&mut params, &grads);
        drop(g);
        for ((_, t), p) in net.params.entries.iter_mut().zip(&params) {
            t.clone_from(p);
        }
        if params.iter().any(|p| p.data().iter().any(|v| !v.is_finite())) {
            return Err(Error::DivergenceDetected { step, last_loss });
        }

        let done = step + 1;
        if done % cfg.val_every == 0 || done == steps {
            let v = mean_l1(&net, val, cfg.crop)?;
            if !v.is_finite() {
                return Err(Error::DivergenceDetected { step, last_loss });
            }
            val_trace.push((done, v));
            if v < best.1 {
                best = (net.clone(), v, done);
            }
        }
    }
    if steps == 0 {
        let v = mean_l1(&net, val, cfg.crop)?;
        val_trace.push((0, v));
        best = (net.clone(), v, 0);
    }
    Ok(TrainOutcome { best: best.0, last: net, loss_trace, val_trace, best_step: best.2, best_val: best.1 })
}

/// Parameter tensors in store order; convenience for equality checks.
pub fn weights(net: &SitNet) -> Vec<Tensor> {
    net.params.tensors()
}

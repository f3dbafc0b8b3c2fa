use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::metrics::EgoDims;
use crate::model::{ModelConfig, Variant};
use crate::tensor::AdamWConfig;
use crate::world::{PerturbMode, WorldConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub betas: [f64; 2],
    pub eps: f64,
    /// Linear warmup length in optimizer steps.
    pub warmup: usize,
    pub epochs: usize,
    /// Scenarios per optimizer step; gradients are averaged over the batch.
    pub batch: usize,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    /// Validation cadence in epochs for best-checkpoint selection.
    pub val_every: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr: 2e-3,
            weight_decay: 0.01,
            betas: [0.9, 0.999],
            eps: 1e-8,
            warmup: 50,
            epochs: 200,
            batch: 8,
            grad_clip: 10.0,
            val_every: 10,
        }
    }
}

impl OptimizerConfig {
    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            weight_decay: self.weight_decay,
            betas: (self.betas[0], self.betas[1]),
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad(format!("optimizer.lr must be finite and >= 0, got {}", self.lr));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad(format!("optimizer.weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if !self.betas.iter().all(|b| (0.0..1.0).contains(b)) {
            return bad(format!("optimizer.betas must lie in [0, 1), got {:?}", self.betas));
        }
        if !(self.eps > 0.0) || !(self.grad_clip >= 0.0) {
            return bad("optimizer.eps must be > 0 and grad_clip >= 0".into());
        }
        if self.batch == 0 || self.val_every == 0 {
            return bad("optimizer.batch and optimizer.val_every must be positive".into());
        }
        Ok(())
    }
}

/// Dataset seeds and sizes. Scenario `i` of the train split uses seed
/// `train_seed + i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_seed: u64,
    pub n_train: usize,
    pub val_seed: u64,
    pub n_val: usize,
    pub world: WorldConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train_seed: 0,
            n_train: 200,
            val_seed: 1_000_000,
            n_val: 50,
            world: WorldConfig::default(),
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        let (a0, a1) = (self.train_seed, self.train_seed.checked_add(self.n_train as u64));
        let (b0, b1) = (self.val_seed, self.val_seed.checked_add(self.n_val as u64));
        let (Some(a1), Some(b1)) = (a1, b1) else {
            return Err(Error::Config("data seed range overflows u64".into()));
        };
        if self.n_train > 0 && self.n_val > 0 && a0 < b1 && b0 < a1 {
            return Err(Error::Config(format!(
                "train seeds [{a0}, {a1}) and val seeds [{b0}, {b1}) overlap"
            )));
        }
        Ok(())
    }

    /// Re-base both splits on `seed` keeping them adjacent and disjoint.
    pub fn reseed(&mut self, seed: u64) {
        self.train_seed = seed;
        self.val_seed = seed.saturating_add(self.n_train as u64);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub id: String,
    /// Planning path used by eval and perturb.
    pub variant: Variant,
    pub perturbations: Vec<PerturbMode>,
    pub split_by_command: bool,
    pub ego_dims: EgoDims,
    pub gradcheck_tolerance: f64,
    pub gradcheck_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            id: "run".into(),
            variant: Variant::Full,
            perturbations: PerturbMode::ALL.to_vec(),
            split_by_command: false,
            ego_dims: EgoDims::default(),
            gradcheck_tolerance: 1e-5,
            gradcheck_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoConfig {
    /// Directory holding `train.jsonl`, `val.jsonl` and `manifest.json`.
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Checkpoint for eval/perturb, or warm start for train.
    pub checkpoint: Option<PathBuf>,
}

impl Default for IoConfig {
    fn default() -> Self {
        IoConfig {
            data_dir: "data".into(),
            out_dir: "runs/default".into(),
            checkpoint: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub losses: LossWeights,
    pub optimizer: OptimizerConfig,
    pub data: DataConfig,
    pub experiment: ExperimentConfig,
    pub io: IoConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.losses.validate()?;
        self.optimizer.validate()?;
        self.data.validate()?;
        let (m, w) = (&self.model, &self.data.world);
        if m.bev != w.bev || m.horizon != w.horizon || m.dt != w.dt || m.n_point != w.n_point {
            return Err(Error::Config(
                "model bev/horizon/dt/n_point must match data.world".into(),
            ));
        }
        let tol = self.experiment.gradcheck_tolerance;
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(Error::Config(format!("gradcheck_tolerance must be positive, got {tol}")));
        }
        if self.experiment.perturbations.is_empty() {
            return Err(Error::Config("experiment.perturbations is empty".into()));
        }
        Ok(())
    }

    pub fn train_path(&self) -> PathBuf {
        self.io.data_dir.join("train.jsonl")
    }

    pub fn val_path(&self) -> PathBuf {
        self.io.data_dir.join("val.jsonl")
    }
}

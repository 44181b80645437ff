use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::compression::quant::{check_bits, MAX_BITS};
use crate::compression::SparsityRule;
use crate::error::{Error, Result};
use crate::model::config::MAX_SEED;
use crate::model::ModelConfig;
use crate::sched::{HardwareSpec, WorkloadShape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub policy: PathBuf,
    pub report_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            corpus: "data/corpus.txt".into(),
            checkpoint_dir: "runs/checkpoints".into(),
            policy: "runs/policy.txt".into(),
            report_dir: "runs/reports".into(),
        }
    }
}

/// Which per-layer policy `profile` writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyVariant {
    /// Sensitivity-driven bits and sparsity.
    #[default]
    Luc,
    /// `B` bits and sparsity `P` on every layer.
    Uniform,
    /// The sensitivity-driven values shuffled across layers.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompressionConfig {
    pub base_bits: u32,
    pub target_sparsity: f64,
    pub inverted_sparsity: bool,
    pub variant: PolicyVariant,
    pub calib_sequences: usize,
    pub calib_len: usize,
}

impl Default for CompressionConfig {
    fn default() -> Self {
        CompressionConfig {
            base_bits: 4,
            target_sparsity: 0.5,
            inverted_sparsity: false,
            variant: PolicyVariant::Luc,
            calib_sequences: 32,
            calib_len: 64,
        }
    }
}

impl CompressionConfig {
    pub fn rule(&self) -> SparsityRule {
        if self.inverted_sparsity {
            SparsityRule::Inverted
        } else {
            SparsityRule::Proportional
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            steps: 300,
            batch_size: 8,
            lr: 3e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuningConfig {
    pub exits: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub rank: usize,
    pub alpha: f64,
    /// Held-out evaluation interval in steps; 0 evaluates only before and after.
    pub eval_every: usize,
}

impl Default for TuningConfig {
    fn default() -> Self {
        TuningConfig {
            exits: 4,
            steps: 200,
            batch_size: 8,
            lr: 1e-3,
            rank: 4,
            alpha: 8.0,
            eval_every: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Upper bound on held-out windows scored.
    pub max_sequences: usize,
    pub sample_prompt: String,
    pub sample_tokens: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            max_sequences: 32,
            sample_prompt: "The ".into(),
            sample_tokens: 48,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub divisions: u32,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig { divisions: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub model: ModelConfig,
    pub compression: CompressionConfig,
    pub pretrain: PretrainConfig,
    pub tuning: TuningConfig,
    pub eval: EvalConfig,
    pub hardware: HardwareSpec,
    pub workload: WorkloadShape,
    pub schedule: ScheduleConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let seed = cfg.seed;
        Ok(cfg.with_seed(seed))
    }

    /// Reads `path`; relative paths inside resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        if let Some(dir) = path.parent() {
            cfg.paths.rebase(dir);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Sets the run seed, which also seeds model initialization.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.model.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.seed >= MAX_SEED {
            return Err(Error::Config(format!("seed must be below 2^53, got {}", self.seed)));
        }
        self.model.validate()?;
        self.hardware.validate()?;
        self.workload.validate()?;
        let c = &self.compression;
        check_bits(c.base_bits)?;
        if c.base_bits >= MAX_BITS {
            return Err(Error::Config(format!("base_bits must be below {MAX_BITS}")));
        }
        if !(0.0..1.0).contains(&c.target_sparsity) {
            return Err(Error::Config(format!("target_sparsity must be in [0, 1), got {}", c.target_sparsity)));
        }
        if c.calib_sequences == 0 || c.calib_len == 0 || c.calib_len > self.model.max_seq_len {
            return Err(Error::Config(format!(
                "calibration needs at least one sequence of 1..={} tokens",
                self.model.max_seq_len
            )));
        }
        let t = &self.tuning;
        if t.exits < 2 || t.exits >= self.model.num_layers {
            return Err(Error::Config(format!(
                "tuning.exits must satisfy 2 <= T < num_layers ({})",
                self.model.num_layers
            )));
        }
        for (name, v) in [
            ("pretrain.batch_size", self.pretrain.batch_size),
            ("tuning.batch_size", t.batch_size),
            ("eval.max_sequences", self.eval.max_sequences),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        for (name, v) in [("pretrain.lr", self.pretrain.lr), ("tuning.lr", t.lr)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.schedule.divisions == 0 {
            return Err(Error::Config("schedule.divisions must be positive".into()));
        }
        Ok(())
    }

    pub fn base_checkpoint(&self) -> PathBuf {
        self.paths.checkpoint_dir.join("base.ckpt")
    }

    pub fn tuned_checkpoint(&self) -> PathBuf {
        self.paths.checkpoint_dir.join("tuned.ckpt")
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.paths.report_dir.join(name)
    }
}

impl Paths {
    fn rebase(&mut self, dir: &Path) {
        for p in [&mut self.corpus, &mut self.checkpoint_dir, &mut self.policy, &mut self.report_dir] {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
    }
}

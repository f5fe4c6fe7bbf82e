use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowConfig;
use crate::model::{NetworkConfig, SkipConnection};
use crate::tensor::AdamConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub network: NetworkConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    pub data: DataConfig,
    #[serde(default)]
    pub runtime: RuntimeConfig,
    #[serde(default)]
    pub flow: FlowConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub ablation: AblationConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Cap on samples drawn per epoch; all training samples when absent.
    pub samples_per_epoch: Option<usize>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            lr: 1e-3,
            batch_size: 8,
            epochs: 8,
            seed: 7,
            samples_per_epoch: None,
        }
    }
}

impl TrainingConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("lr must be finite and non-negative, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if self.samples_per_epoch == Some(0) {
            return Err(Error::config("samples_per_epoch must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub dataset_dir: PathBuf,
    pub held_out: String,
    #[serde(default = "one")]
    pub delta_frames: usize,
    #[serde(default = "two")]
    pub crop_factor: usize,
}

fn one() -> usize {
    1
}

fn two() -> usize {
    2
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resolution {
    Full,
    Half,
}

impl Resolution {
    pub fn is_half(self) -> bool {
        self == Resolution::Half
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RuntimeConfig {
    pub inference_resolution: Resolution,
    pub pipelined: bool,
    /// Worker threads for the kernels; 1 keeps everything on one thread.
    pub threads: usize,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        RuntimeConfig {
            inference_resolution: Resolution::Full,
            pipelined: true,
            threads: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub weights: PathBuf,
    /// One JSON object per epoch.
    pub log: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            weights: "weights.adnw".into(),
            log: "train_log.jsonl".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub cascades: Vec<usize>,
    pub drop_skips: Vec<SkipConnection>,
    /// Epochs per variant; the training value when absent.
    pub epochs: Option<usize>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            cascades: vec![2, 3, 4],
            drop_skips: SkipConnection::ALL.to_vec(),
            epochs: None,
        }
    }
}

impl RunConfig {
    /// Parses a config file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text).map_err(|e| e.context(path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)
            .map_err(|e| Error::config(format!("line {} column {}: {e}", e.line(), e.column())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.data.dataset_dir, &mut self.output.weights, &mut self.output.log] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.training.validate()?;
        self.flow.validate()?;
        if self.data.delta_frames == 0 {
            return Err(Error::config("delta_frames must be at least 1"));
        }
        if self.data.crop_factor == 0 {
            return Err(Error::config("crop_factor must be at least 1"));
        }
        if self.runtime.threads == 0 {
            return Err(Error::config("threads must be at least 1"));
        }
        for &c in &self.ablation.cascades {
            self.network.with_cascades(c).validate()?;
        }
        Ok(())
    }
}

impl NetworkConfig {
    pub fn with_cascades(self, cascades: usize) -> Self {
        NetworkConfig { cascades, ..self }
    }
}

/// Sizes the kernel thread pool. The global pool can be set once per
/// process; later calls only toggle the parallel kernel path.
pub fn apply_threads(threads: usize) {
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    crate::tensor::parallel::set_enabled(threads > 1);
}

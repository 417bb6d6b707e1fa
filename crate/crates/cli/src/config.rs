//! Run configuration: one strict JSON document.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dsc_core::data::ParityConfig;
use dsc_core::nn::{Architecture, Model, ModelSpec};
use dsc_core::optim::{LrStageSchedule, OptimizerConfig, SgdConfig};
use dsc_core::prune::{check_disjoint, PhaseConfig, PruneSpace, TrainSettings};
use dsc_core::{Error, Result};

fn default_hidden() -> usize {
    256
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub architecture: Architecture,
    /// Hidden width of `mlp_parity`; ignored by the other architectures.
    #[serde(default = "default_hidden")]
    pub hidden: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    Parity(ParityConfig),
    /// `train-images-idx3-ubyte` and friends under `dir`.
    Mnist {
        dir: PathBuf,
        /// Use only the first `n` training images.
        #[serde(default)]
        train_limit: Option<usize>,
        /// Hold out the last sixth of the training set for validation.
        #[serde(default)]
        validation: bool,
    },
    /// `data_batch_{1..5}.bin` and `test_batch.bin` under `dir`.
    Cifar10 {
        dir: PathBuf,
        #[serde(default)]
        train_limit: Option<usize>,
        #[serde(default)]
        test_limit: Option<usize>,
    },
}

/// What `prune` runs after loading or building the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneMethod {
    Dsc1,
    Dsc2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruneConfig {
    pub method: PruneMethod,
    /// Run in order, e.g. a fully connected phase then a convolution phase.
    pub phases: Vec<PhaseConfig>,
    /// Optimizer for pruning and fine-tuning; defaults to the run's.
    #[serde(default)]
    pub optimizer: Option<OptimizerConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: LrStageSchedule,
    /// Highest acceptable final test error; a miss exits with status 3.
    #[serde(default)]
    pub target_error: Option<f64>,
}

fn default_optimizer() -> OptimizerConfig {
    OptimizerConfig::Sgd(SgdConfig {
        lr: 0.01,
        momentum: 0.9,
        weight_decay: 0.0,
    })
}

fn default_train() -> TrainConfig {
    TrainConfig {
        epochs: 20,
        lr: LrStageSchedule::constant(0.01),
        target_error: None,
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("run")
}

fn default_threads() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub data: DataConfig,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerConfig,
    #[serde(default = "default_train")]
    pub train: TrainConfig,
    #[serde(default)]
    pub prune: Option<PruneConfig>,
    #[serde(default)]
    pub settings: TrainSettings,
    /// Model initialization seed.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    /// 1 selects the single-threaded reference mode.
    #[serde(default = "default_threads")]
    pub threads: usize,
}

/// Names end up in CSV headers and rows.
fn check_name(what: &str, name: &str) -> Result<()> {
    let ok = !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{what} name `{name}` must be non-empty ASCII letters, digits, `_` or `-`"
        )))
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file, or the config snapshot inside a run manifest.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let inner = match value.get("tool_version").and(value.get("config")) {
            Some(c) => c.clone(),
            None => value,
        };
        let cfg: RunConfig =
            serde_json::from_value(inner).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Command-line overrides: `--seed` reseeds both initialization and
    /// shuffling.
    pub fn apply_overrides(&mut self, seed: Option<u64>, threads: Option<usize>, out: Option<PathBuf>) {
        if let Some(s) = seed {
            self.seed = s;
            self.settings.shuffle_seed = s;
        }
        if let Some(t) = threads {
            self.threads = t;
        }
        if let Some(o) = out {
            self.out_dir = o;
        }
    }

    pub fn model_spec(&self) -> ModelSpec {
        match (&self.model.architecture, &self.data) {
            (Architecture::MlpParity, DataConfig::Parity(p)) => ModelSpec::mlp_parity(p.dim, self.model.hidden),
            (Architecture::MlpParity, _) => ModelSpec::mlp_parity(50, self.model.hidden),
            (Architecture::Lenet300100, _) => ModelSpec::lenet_300_100(),
            (Architecture::Lenet5, _) => ModelSpec::lenet_5(),
            (Architecture::SmallVggBn, _) => ModelSpec::small_vgg_bn(10),
        }
    }

    /// Every pruning space name across all phases, in order of appearance.
    pub fn space_names(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.prune
            .iter()
            .flat_map(|p| &p.phases)
            .flat_map(|ph| &ph.spaces)
            .filter(|s| seen.insert(s.name.clone()))
            .map(|s| s.name.clone())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        self.train.lr.validate()?;
        if self.settings.batch_size == 0 {
            return Err(Error::Config("settings.batch_size must be ≥ 1".into()));
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be ≥ 1".into()));
        }
        let compatible = matches!(
            (&self.model.architecture, &self.data),
            (Architecture::MlpParity, DataConfig::Parity(_))
                | (
                    Architecture::Lenet300100 | Architecture::Lenet5,
                    DataConfig::Mnist { .. }
                )
                | (Architecture::SmallVggBn, DataConfig::Cifar10 { .. })
        );
        if !compatible {
            return Err(Error::Config(format!(
                "architecture {} does not fit the configured dataset",
                self.model.architecture.name()
            )));
        }
        self.model_spec().layers()?;
        if let Some(p) = &self.prune {
            if p.phases.is_empty() {
                return Err(Error::Config("prune.phases is empty".into()));
            }
            if let Some(o) = &p.optimizer {
                o.validate()?;
            }
            // Spaces are sized against a fresh model so schedule and
            // partition errors surface before any data is read.
            let model = Model::<f32>::build(&self.model_spec(), 0)?;
            for ph in &p.phases {
                ph.validate()?;
                check_name("phase", &ph.name)?;
                for s in &ph.spaces {
                    check_name("space", &s.name)?;
                }
                let spaces = ph
                    .spaces
                    .iter()
                    .map(|s| PruneSpace::build(&model, s))
                    .collect::<Result<Vec<_>>>()?;
                check_disjoint(&model, &spaces)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MIN: &str = r#"{"model":{"architecture":"lenet_300_100"},"data":{"kind":"mnist","dir":"/d"}}"#;

    #[test]
    fn defaults_are_explicit_after_loading() {
        let c = RunConfig::from_json(MIN).unwrap();
        assert_eq!(c.settings.batch_size, 64);
        assert_eq!(c.optimizer.lr(), 0.01);
        assert_eq!(c.threads, 1);
        let v = serde_json::to_value(&c).unwrap();
        for key in ["optimizer", "train", "prune", "settings", "seed", "out_dir", "threads"] {
            assert!(v.get(key).is_some(), "{key} missing from resolved config");
        }
        assert_eq!(RunConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = MIN.replace(r#""dir":"/d""#, r#""dir":"/d","colour":1"#);
        assert!(matches!(RunConfig::from_json(&bad), Err(Error::Config(_))));
        let top = MIN.replacen('{', r#"{"extra":true,"#, 1);
        assert!(matches!(RunConfig::from_json(&top), Err(Error::Config(_))));
    }

    #[test]
    fn architecture_must_fit_data() {
        let bad = MIN.replace("lenet_300_100", "small_vgg_bn");
        assert!(matches!(RunConfig::from_json(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn seed_override_reaches_shuffle() {
        let mut c = RunConfig::from_json(MIN).unwrap();
        c.apply_overrides(Some(9), Some(4), None);
        assert_eq!((c.seed, c.settings.shuffle_seed, c.threads), (9, 9, 4));
    }
}

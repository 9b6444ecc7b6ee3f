//! Run configuration: a single TOML file of key = value sections.
//! Every hyperparameter has a named key with a sensible default, so an
//! empty file is a valid configuration.

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub federated: FederatedConfig,
    pub cv: CvConfig,
    pub synth: SynthConfig,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// EEGTRIALS v1 file for subject-specific and baseline runs.
    pub subject: Option<PathBuf>,
    /// Source-domain file for adaptive runs.
    pub source: Option<PathBuf>,
    /// Target-domain file for adaptive runs.
    pub target: Option<PathBuf>,
    /// Explicit channel indices; overrides the default selection.
    pub channels: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Reduction chain for subject-specific runs: input dim first.
    pub chain: Vec<usize>,
    /// Source-client chain for adaptive runs.
    pub source_chain: Vec<usize>,
    /// Target-client chain for adaptive runs.
    pub target_chain: Vec<usize>,
    pub n_classes: usize,
    pub clamp_eps: f64,
    /// Project bilinear-layer gradients onto the Stiefel manifold.
    pub stiefel: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            chain: vec![32, 4, 4],
            source_chain: vec![32, 16, 8, 4],
            target_chain: vec![32, 8, 4],
            n_classes: 2,
            clamp_eps: 1e-6,
            stiefel: false,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr0: f64,
    /// Multiplicative per-epoch decay once past `decay_start_epoch`.
    pub decay_rate: f64,
    pub decay_start_epoch: usize,
    pub max_epochs: usize,
    pub stop_loss: f64,
    /// Covariance shrinkage toward the scaled identity.
    pub shrinkage: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 0.1,
            decay_rate: 0.02,
            decay_start_epoch: 50,
            max_epochs: 500,
            stop_loss: 0.1,
            shrinkage: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederatedConfig {
    pub local_epochs: usize,
    pub max_rounds: usize,
    /// Round loop stops once every client's loss is below this.
    pub stop_loss: f64,
    /// Domain-loss weight applied to every client pair and class.
    pub lambda: f64,
    pub sigma: f64,
}

impl Default for FederatedConfig {
    fn default() -> Self {
        FederatedConfig {
            local_epochs: 1,
            max_rounds: 100,
            stop_loss: 1.5,
            lambda: 0.1,
            sigma: 2.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvConfig {
    pub folds: usize,
    pub stratified: bool,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            folds: 5,
            stratified: true,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub subject: String,
    pub channels: usize,
    pub n_classes: usize,
    pub trials_per_class: usize,
    /// Samples per trial.
    pub samples: usize,
    /// Log-space scale of the gap between class ground truths.
    pub separation: f64,
    /// Log-space scale of within-class variation.
    pub spread: f64,
    /// Seed for the class ground truths; defaults to the run seed.
    /// Two files generated with the same base_seed share class
    /// structure (e.g. a source/target pair for transfer runs).
    pub base_seed: Option<u64>,
    /// Record only the first `keep_channels` of the generated signal
    /// (a marginal of the full ground truth), e.g. an impoverished
    /// target montage next to a full source montage.
    pub keep_channels: Option<usize>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            subject: "synth".into(),
            channels: 8,
            n_classes: 2,
            trials_per_class: 40,
            samples: 128,
            separation: 1.0,
            spread: 0.25,
            base_seed: None,
            keep_channels: None,
        }
    }
}

pub fn load_config(path: &Path) -> Result<Config> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let config: Config =
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    validate(&config)?;
    Ok(config)
}

fn validate_chain(chain: &[usize], name: &str) -> Result<()> {
    if chain.len() < 2 {
        bail!("model.{name} needs at least input and output dims");
    }
    for w in chain.windows(2) {
        if w[1] > w[0] || w[1] == 0 {
            bail!(
                "model.{name} must be non-increasing with positive dims, got {:?}",
                chain
            );
        }
    }
    Ok(())
}

fn validate(config: &Config) -> Result<()> {
    validate_chain(&config.model.chain, "chain")?;
    validate_chain(&config.model.source_chain, "source_chain")?;
    validate_chain(&config.model.target_chain, "target_chain")?;
    if config.model.n_classes < 2 {
        bail!("model.n_classes must be at least 2");
    }
    if config.federated.lambda < 0.0 {
        bail!("federated.lambda must be non-negative");
    }
    if config.federated.sigma <= 0.0 {
        bail!("federated.sigma must be positive");
    }
    if config.cv.folds < 2 {
        bail!("cv.folds must be at least 2");
    }
    if let Some(channels) = &config.data.channels {
        if channels.is_empty() {
            bail!("data.channels must not be empty when given");
        }
    }
    Ok(())
}

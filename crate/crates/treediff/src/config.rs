use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use treediff_core::counters::CostWeights;
use treediff_core::diffusion::ScheduleKind;
use treediff_core::dual::RefinerConfig;
use treediff_core::graph::{GraphLayout, GrowthConfig, RewardSpec};
use treediff_core::nn::TrainConfig;
use treediff_core::search::SearchConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub growth: GrowthConfig,
    pub layout: GraphLayout,
    pub train_graphs: usize,
    /// Reference set for MMD, drawn from the same generator.
    pub heldout_graphs: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            growth: GrowthConfig::default(),
            layout: GraphLayout::default(),
            train_graphs: 4000,
            heldout_graphs: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub kind: ScheduleKind,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            kind: ScheduleKind::Cosine,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_z: usize,
    pub vae_hidden: Vec<usize>,
    pub lambda_kl: f64,
    pub denoiser_hidden: Vec<usize>,
    pub refiner: RefinerConfig,
    pub verifier_latent_hidden: usize,
    pub verifier_graph_hidden: usize,
    pub verifier_rounds: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_z: 32,
            vae_hidden: vec![64, 64],
            lambda_kl: 1e-3,
            denoiser_hidden: vec![64, 64],
            refiner: RefinerConfig::default(),
            verifier_latent_hidden: 64,
            verifier_graph_hidden: 32,
            verifier_rounds: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub vae_bootstrap: TrainConfig,
    /// Share of bootstrap examples reconstructed from clean input.
    pub vae_clean_fraction: f64,
    pub denoiser: TrainConfig,
    pub trajectories: usize,
    pub vae: TrainConfig,
    pub vae_max_states: usize,
    pub refiner: TrainConfig,
    pub refiner_max_pairs: usize,
    pub verifier: TrainConfig,
    /// Every `verifier_state_stride`-th trajectory state feeds the verifier.
    pub verifier_state_stride: usize,
    pub verifier_sigma_a: f64,
    pub verifier_aug_per_state: usize,
    /// Trajectories held back from verifier training for evaluation.
    pub verifier_holdout: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            vae_bootstrap: TrainConfig {
                epochs: 100,
                batch_size: 32,
                lr: 2e-3,
                ..TrainConfig::default()
            },
            vae_clean_fraction: 0.5,
            denoiser: TrainConfig {
                epochs: 150,
                batch_size: 64,
                lr: 1e-3,
                ..TrainConfig::default()
            },
            trajectories: 10_000,
            vae: TrainConfig {
                epochs: 4,
                batch_size: 32,
                lr: 1e-3,
                ..TrainConfig::default()
            },
            vae_max_states: 8000,
            refiner: TrainConfig {
                epochs: 4,
                batch_size: 32,
                lr: 1e-3,
                ..TrainConfig::default()
            },
            refiner_max_pairs: 8000,
            verifier: TrainConfig {
                epochs: 20,
                batch_size: 32,
                lr: 3e-3,
                final_lr_fraction: 0.05,
            },
            verifier_state_stride: 40,
            verifier_sigma_a: 0.1,
            verifier_aug_per_state: 1,
            verifier_holdout: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    /// Multiples of `T` latent steps.
    pub budgets: Vec<usize>,
    pub seeds: usize,
    pub ablation_samples: usize,
    pub sigma_sweep: Vec<f64>,
    pub beam_stride: Option<usize>,
    pub cost_weights: CostWeights,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            budgets: vec![1, 2, 4, 8],
            seeds: 50,
            ablation_samples: 500,
            sigma_sweep: vec![0.1, 0.5, 1.0, 10.0],
            beam_stride: None,
            cost_weights: CostWeights::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub schedule: ScheduleConfig,
    pub models: ModelConfig,
    pub training: TrainingConfig,
    pub search: SearchConfig,
    pub reward: RewardSpec,
    pub bench: BenchConfig,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataConfig::default(),
            schedule: ScheduleConfig::default(),
            models: ModelConfig::default(),
            training: TrainingConfig::default(),
            search: SearchConfig::default(),
            reward: RewardSpec::default(),
            bench: BenchConfig::default(),
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Self = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).with_context(|| format!("writing config {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        self.data.growth.validate()?;
        self.reward.validate()?;
        self.search.validate()?;
        if self.data.growth.max_nodes > self.data.layout.max_nodes
            || self.data.growth.min_nodes < self.data.layout.min_nodes
        {
            bail!("graph sizes from the generator do not fit the dense layout");
        }
        if self.data.train_graphs == 0 || self.training.trajectories == 0 {
            bail!("training needs graphs and trajectories");
        }
        if self.training.verifier_holdout >= self.training.trajectories {
            bail!("verifier holdout must leave trajectories for training");
        }
        if self.bench.budgets.is_empty() || self.bench.budgets.contains(&0) {
            bail!("budgets must be positive multiples of T");
        }
        if self.bench.seeds == 0 {
            bail!("benchmarks need at least one seed");
        }
        if self.training.verifier_state_stride == 0 {
            bail!("verifier_state_stride must be at least 1");
        }
        Ok(())
    }

    /// Beam stride, `T / 10` unless set.
    pub fn beam_stride(&self) -> usize {
        self.bench.beam_stride.unwrap_or((self.schedule.steps / 10).max(1))
    }
}

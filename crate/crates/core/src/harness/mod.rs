//! Run configuration, checkpoints, evaluation, image dumps and the CLI.

mod checkpoint;
mod cli;
mod desk;
mod dump;
mod eval;
mod gradcheck;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agent::{AgentConfig, AgentError};
use crate::eqagen::{DatasetConfig, EqaError, Split, Vocabulary};
use crate::gridhouse::{GridError, RenderConfig};
use crate::mind::{ImageryConfig, MindError, VaeConfig};
use crate::rewards::RewardConfig;
use crate::trainer::{Models, TrainConfig, TrainError};

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, Manifest, TensorEntry,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use cli::{cli_main, Cli, Command};
pub use desk::{desk_config, DeskWorld};
pub use dump::{dump_mental_rollout, dump_topdown, latent_trace, write_frames, TRAJECTORY_COLORS};
pub use eval::{evaluate, EvalReport, TierReport};
pub use gradcheck::{grad_check_suite, GradCheckEntry, GRAD_TOLERANCE};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("input: {0}")]
    Input(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Mind(#[from] MindError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Eqa(#[from] EqaError),
    #[error(transparent)]
    Nd(#[from] ndnet::NdError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// Short stable tag for machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::Config(_) => "config",
            HarnessError::Input(_) => "input",
            HarnessError::Checkpoint(_) => "checkpoint",
            HarnessError::Train(TrainError::Prerequisite { .. }) => "prerequisite",
            HarnessError::Train(TrainError::NonFinite { .. }) => "non_finite",
            HarnessError::Train(_) => "train",
            HarnessError::Agent(_) => "agent",
            HarnessError::Mind(_) => "mind",
            HarnessError::Grid(_) => "grid",
            HarnessError::Eqa(_) => "dataset",
            HarnessError::Nd(_) => "tensor",
            HarnessError::Io(_) => "io",
        }
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub tiers: Vec<u32>,
    pub split: Split,
    pub max_episodes: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            tiers: vec![10, 30, 50],
            split: Split::Test,
            max_episodes: None,
        }
    }
}

/// Every tunable of a run in one document.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub render: RenderConfig,
    pub vae: VaeConfig,
    pub imagery: ImageryConfig,
    pub agent: AgentConfig,
    pub rewards: RewardConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(s).map_err(|e| HarnessError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.vae.frame_h != self.render.height || self.vae.frame_w != self.render.width {
            return bad(format!(
                "autoencoder frames {}x{} differ from renderer {}x{}",
                self.vae.frame_h, self.vae.frame_w, self.render.height, self.render.width
            ));
        }
        if self.vae.latent_dim != self.imagery.latent_dim {
            return bad("autoencoder and imagery latent sizes differ".into());
        }
        if self.agent.n_max != self.rewards.n_max {
            return bad("agent and reward action budgets differ".into());
        }
        self.rewards
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        self.train.bc.validate()?;
        self.train.rl.validate()?;
        Ok(())
    }

    /// Hex SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(serde_json::to_vec(self).expect("config serializes"));
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn build_models(&self, vocab: &Vocabulary) -> Result<Models> {
        Ok(Models::new(
            self.vae.clone(),
            self.imagery.clone(),
            self.agent.clone(),
            vocab,
            self.seed,
        )?)
    }
}

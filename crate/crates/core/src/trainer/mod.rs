//! Staged training: autoencoder, imagery model, behaviour cloning with a
//! distance curriculum (after supervised answerer pretraining), then
//! actor-critic fine-tuning.

mod losses;
mod stages;

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{Agent, AgentConfig, AgentError, EpisodeEnv};
use crate::eqagen::{Dataset, Episode, Split, Vocabulary};
use crate::gridhouse::{AgentPose, Cell, DistanceField, GridError, HouseMap};
use crate::mind::{ImageryConfig, Mind, MindError, VaeConfig};

pub use losses::{
    actor_critic_losses_t, bc_loss_from_steps, bc_loss_t, curriculum_spawn, discounted_returns,
    gae_advantages, AcLosses, RolloutEpisode, ValueTarget,
};
pub use stages::{
    demo_frames, imagery_nll, macro_sequences, marginal_nll, qa_accuracy, train_stage, vae_eval,
    MacroSequence, StageReport,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("stage {stage} needs {missing} to be trained first")]
    Prerequisite { stage: Stage, missing: Stage },
    #[error("non-finite loss in {stage} epoch {epoch}; last good checkpoint kept")]
    NonFinite { stage: Stage, epoch: usize },
    #[error("length mismatch: {0}")]
    Length(String),
    #[error("advantages not computed")]
    MissingAdvantage,
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Mind(#[from] MindError),
    #[error(transparent)]
    Nd(#[from] ndnet::NdError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Vae,
    Imagery,
    Bc,
    Rl,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Vae, Stage::Imagery, Stage::Bc, Stage::Rl];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Vae => "vae",
            Stage::Imagery => "imagery",
            Stage::Bc => "bc",
            Stage::Rl => "rl",
        }
    }

    pub fn prerequisites(self) -> &'static [Stage] {
        match self {
            Stage::Vae => &[],
            Stage::Imagery => &[Stage::Vae],
            Stage::Bc => &[Stage::Vae, Stage::Imagery],
            Stage::Rl => &[Stage::Vae, Stage::Imagery, Stage::Bc],
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Stage {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VaeTrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub max_frames: usize,
    pub clip: f64,
    pub max_seconds: Option<f64>,
}

impl Default for VaeTrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            epochs: 10,
            batch: 16,
            max_frames: 500,
            clip: 5.0,
            max_seconds: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImageryTrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub clip: f64,
}

impl Default for ImageryTrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            epochs: 10,
            batch: 8,
            clip: 5.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BcConfig {
    pub batch: usize,
    /// Extra primitive actions added per curriculum phase.
    pub backtrack: usize,
    pub initial_offset: usize,
    /// Success rate over the window that advances the phase.
    pub advance_threshold: f64,
    pub window: usize,
    pub epochs: usize,
    pub lr: f64,
    pub clip: f64,
    pub qa_epochs: usize,
    pub qa_lr: f64,
    pub max_seconds: Option<f64>,
}

impl Default for BcConfig {
    fn default() -> Self {
        Self {
            batch: 20,
            backtrack: 5,
            initial_offset: 5,
            advance_threshold: 0.8,
            window: 50,
            epochs: 20,
            lr: 1e-4,
            clip: 5.0,
            qa_epochs: 20,
            qa_lr: 1e-3,
            max_seconds: None,
        }
    }
}

impl BcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.backtrack == 0 || self.initial_offset == 0 || self.window == 0 {
            return Err(TrainError::Config(
                "bc batch, offsets and window must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.advance_threshold) {
            return Err(TrainError::Config(
                "advance threshold must be in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SyncMode {
    /// Gradients from every worker are averaged into one update.
    #[default]
    Synchronous,
    /// Each worker's gradient is applied as it arrives.
    Asynchronous,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RlConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub lr: f64,
    pub workers: usize,
    pub sync_mode: SyncMode,
    /// Updates a gradient may lag behind in asynchronous mode.
    pub staleness: usize,
    pub value_weight: f64,
    pub entropy_weight: f64,
    pub value_target: ValueTarget,
    pub planned_reward: bool,
    pub epochs: usize,
    pub episodes_per_epoch: usize,
    pub spawn_k: u32,
    pub clip: f64,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 1.0,
            lr: 1e-4,
            workers: 1,
            sync_mode: SyncMode::Synchronous,
            staleness: 1,
            value_weight: 0.5,
            entropy_weight: 0.01,
            value_target: ValueTarget::Return,
            planned_reward: true,
            epochs: 5,
            episodes_per_epoch: 40,
            spawn_k: 10,
            clip: 5.0,
        }
    }
}

impl RlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(TrainError::Config("rl needs at least one worker".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(TrainError::Config(
                "gamma and lambda must be in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub vae: VaeTrainConfig,
    pub imagery: ImageryTrainConfig,
    pub bc: BcConfig,
    pub rl: RlConfig,
}

/// Every trainable part, plus the stages already run on it.
#[derive(Clone, Debug)]
pub struct Models {
    pub mind: Mind,
    pub agent: Agent,
    pub stages: Vec<Stage>,
}

impl Models {
    pub fn new(
        vae: VaeConfig,
        imagery: ImageryConfig,
        agent: AgentConfig,
        vocab: &Vocabulary,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mind = Mind::new(vae, imagery, &mut rng)?;
        let agent = Agent::new(agent, vocab, &mind, &mut rng)?;
        Ok(Self {
            mind,
            agent,
            stages: Vec::new(),
        })
    }

    pub fn has(&self, stage: Stage) -> bool {
        self.stages.contains(&stage)
    }

    pub fn require(&self, stage: Stage) -> Result<()> {
        for &p in stage.prerequisites() {
            if !self.has(p) {
                return Err(TrainError::Prerequisite { stage, missing: p });
            }
        }
        Ok(())
    }

    pub(crate) fn mark(&mut self, stage: Stage) {
        if !self.has(stage) {
            self.stages.push(stage);
            self.stages.sort();
        }
    }
}

/// Houses, vocabulary and the episodes a run trains and validates on, with
/// distance fields for every target.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub houses: BTreeMap<usize, HouseMap>,
    pub vocab: Vocabulary,
    pub train: Vec<Episode>,
    pub val: Vec<Episode>,
    fields: HashMap<(usize, Cell), DistanceField>,
}

impl Corpus {
    pub fn new(
        houses: Vec<HouseMap>,
        vocab: Vocabulary,
        train: Vec<Episode>,
        val: Vec<Episode>,
    ) -> Result<Self> {
        let houses: BTreeMap<usize, HouseMap> = houses.into_iter().map(|h| (h.id, h)).collect();
        let mut fields = HashMap::new();
        for e in train.iter().chain(&val) {
            let h = houses.get(&e.house_id).ok_or_else(|| {
                TrainError::Data(format!(
                    "episode {} names unknown house {}",
                    e.id, e.house_id
                ))
            })?;
            if let std::collections::hash_map::Entry::Vacant(v) = fields.entry((h.id, e.target)) {
                v.insert(DistanceField::new(h, e.target)?);
            }
        }
        Ok(Self {
            houses,
            vocab,
            train,
            val,
            fields,
        })
    }

    /// Train split for training, validation split for held-out checks.
    pub fn from_dataset(ds: &Dataset) -> Result<Self> {
        let pick = |s| ds.split(s).into_iter().cloned().collect::<Vec<_>>();
        Self::new(
            ds.houses.clone(),
            ds.vocab.clone(),
            pick(Split::Train),
            pick(Split::Val),
        )
    }

    pub fn house(&self, id: usize) -> Result<&HouseMap> {
        self.houses
            .get(&id)
            .ok_or_else(|| TrainError::Data(format!("unknown house {id}")))
    }

    pub fn field(&self, house: usize, target: Cell) -> Result<&DistanceField> {
        self.fields.get(&(house, target)).ok_or_else(|| {
            TrainError::Data(format!(
                "no distance field for house {house} target {target:?}"
            ))
        })
    }

    pub fn env<'a>(&'a self, episode: &'a Episode, start: AgentPose) -> Result<EpisodeEnv<'a>> {
        Ok(EpisodeEnv {
            house: self.house(episode.house_id)?,
            field: self.field(episode.house_id, episode.target)?,
            episode,
            start,
        })
    }
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub stage: Stage,
    pub epoch: usize,
    pub loss: f64,
    pub success_rate: Option<f64>,
    pub mean_d_delta: Option<f64>,
    pub qa_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, f64>,
}

impl MetricsRecord {
    pub fn new(stage: Stage, epoch: usize, loss: f64) -> Self {
        Self {
            stage,
            epoch,
            loss,
            success_rate: None,
            mean_d_delta: None,
            qa_accuracy: None,
            extra: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, v: f64) -> Self {
        self.extra.insert(key.to_string(), v);
        self
    }
}

/// Where a stage writes its metrics log and per-epoch checkpoints.
#[derive(Clone, Debug, Default)]
pub struct StageIo {
    pub out_dir: Option<PathBuf>,
    pub config_hash: String,
}

impl StageIo {
    pub fn to_dir(dir: impl AsRef<Path>, config_hash: impl Into<String>) -> Self {
        Self {
            out_dir: Some(dir.as_ref().to_path_buf()),
            config_hash: config_hash.into(),
        }
    }

    pub fn checkpoint_path(&self, stage: Stage) -> Option<PathBuf> {
        self.out_dir
            .as_ref()
            .map(|d| d.join(format!("{stage}.ckpt")))
    }

    pub(crate) fn log(&self, rec: &MetricsRecord) -> Result<()> {
        if let Some(dir) = &self.out_dir {
            std::fs::create_dir_all(dir)?;
            let mut f = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(dir.join("metrics.jsonl"))?;
            let line = serde_json::to_string(rec).expect("metrics serialize");
            writeln!(f, "{line}")?;
        }
        Ok(())
    }

    pub(crate) fn checkpoint(&self, models: &Models, stage: Stage) -> Result<()> {
        if let Some(p) = self.checkpoint_path(stage) {
            std::fs::create_dir_all(p.parent().unwrap())?;
            crate::harness::save_checkpoint(models, &self.config_hash, &p)
                .map_err(|e| TrainError::Checkpoint(e.to_string()))?;
        }
        Ok(())
    }
}

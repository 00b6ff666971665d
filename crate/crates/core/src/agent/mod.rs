//! The navigating agent: a planner and controller over frame features, a
//! question answerer, and the episode loop that ties them to a house.

mod episode;
mod net;

use thiserror::Error;

pub use episode::{
    rollout_t, run_episode, Agent, ControllerRecord, EpisodeEnv, FeatureCache, Mode,
    RolloutOptions, StepRecord, StepVars, TrajectoryRecord,
};
pub use net::{
    AgentConfig, FrameBuffer, Navigator, PlannerOut, QaModel, QaOut, QuestionEncoder, QA_SLOTS,
};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("bad input: {0}")]
    Input(String),
    #[error("mismatch: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Nd(#[from] ndnet::NdError),
    #[error(transparent)]
    Mind(#[from] crate::mind::MindError),
    #[error(transparent)]
    Grid(#[from] crate::gridhouse::GridError),
    #[error(transparent)]
    Reward(#[from] crate::rewards::RewardError),
}

pub type Result<T, E = AgentError> = std::result::Result<T, E>;
